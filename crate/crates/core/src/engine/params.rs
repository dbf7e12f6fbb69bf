use rand::Rng;

use super::{EngineError, Gradients, Tape, Tensor, Var};

/// Named parameter tensor.
#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub tensor: Tensor,
}

/// Ordered collection of parameters. Layers refer to entries by index.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    params: Vec<Param>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_params(params: Vec<Param>) -> Self {
        Self { params }
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Tensor) -> usize {
        self.params.push(Param {
            name: name.into(),
            tensor,
        });
        self.params.len() - 1
    }

    /// Conv-style kernel drawn from `N(0, std²)`.
    pub fn push_normal<R: Rng + ?Sized>(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        std: f32,
        rng: &mut R,
    ) -> usize {
        self.push(name, Tensor::randn(shape, std, rng))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param> {
        self.params.iter_mut()
    }

    pub fn get(&self, index: usize) -> &Param {
        &self.params[index]
    }

    pub fn get_mut(&mut self, index: usize) -> &mut Param {
        &mut self.params[index]
    }

    pub fn by_name(&self, name: &str) -> Option<&Param> {
        self.params.iter().find(|p| p.name == name)
    }

    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }

    pub fn into_params(self) -> Vec<Param> {
        self.params
    }

    /// Places every parameter on `tape`, trainable or frozen.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| tape.leaf(p.tensor.clone(), trainable))
            .collect()
    }

    /// Copies gradients for `vars` (as returned by [`Self::bind`]) onto the
    /// parameter tensors. Parameters that received no gradient get zeros.
    pub fn absorb_grads(&mut self, vars: &[Var], grads: &mut Gradients) -> Result<(), EngineError> {
        if vars.len() != self.params.len() {
            return Err(EngineError::Shape(format!(
                "{} bound vars for {} parameters",
                vars.len(),
                self.params.len()
            )));
        }
        for (p, &v) in self.params.iter_mut().zip(vars) {
            let g = grads.take(v).unwrap_or_else(|| vec![0.0; p.tensor.numel()]);
            p.tensor.set_grad(g)?;
        }
        Ok(())
    }

    /// Overwrites every tensor from `params`, which must match this store
    /// name for name and shape for shape.
    pub fn assign(&mut self, params: &[Param]) -> Result<(), EngineError> {
        if params.len() != self.params.len() {
            return Err(EngineError::Shape(format!(
                "expected {} parameters, got {}",
                self.params.len(),
                params.len()
            )));
        }
        for (mine, theirs) in self.params.iter_mut().zip(params) {
            if mine.name != theirs.name || mine.tensor.shape() != theirs.tensor.shape() {
                return Err(EngineError::Shape(format!(
                    "parameter {} {:?} does not match {} {:?}",
                    mine.name,
                    mine.tensor.shape(),
                    theirs.name,
                    theirs.tensor.shape()
                )));
            }
            mine.tensor = Tensor::new(
                theirs.tensor.shape().to_vec(),
                theirs.tensor.data().to_vec(),
            )?;
        }
        Ok(())
    }

    pub fn clear_grads(&mut self) {
        self.params.iter_mut().for_each(|p| p.tensor.clear_grad());
    }
}
