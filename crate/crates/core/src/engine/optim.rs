use serde::{Deserialize, Serialize};

use super::{EngineError, ParamStore, Tensor};

/// First/second moment estimates for one parameter tensor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<f32>,
    pub v: Vec<f32>,
    pub beta1: f32,
    pub beta2: f32,
    pub epsilon: f32,
}

impl AdamState {
    pub fn new(len: usize, beta1: f32, beta2: f32, epsilon: f32) -> Result<Self, EngineError> {
        if !(beta1 > 0.0 && beta1 < 1.0 && beta2 > 0.0 && beta2 < 1.0) {
            return Err(EngineError::InvalidArgument(format!(
                "Adam betas must lie in (0, 1), got ({beta1}, {beta2})"
            )));
        }
        if !(epsilon > 0.0) {
            return Err(EngineError::InvalidArgument(format!(
                "Adam epsilon must be positive, got {epsilon}"
            )));
        }
        Ok(Self {
            step: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
            beta1,
            beta2,
            epsilon,
        })
    }

    /// Pix2pix defaults: beta1 = 0.5, beta2 = 0.999.
    pub fn pix2pix(len: usize) -> Self {
        Self::new(len, 0.5, 0.999, 1e-8).expect("valid constants")
    }
}

/// One bias-corrected Adam update of `param` in place.
pub fn adam_step(
    name: &str,
    param: &mut Tensor,
    grad: &[f32],
    state: &mut AdamState,
    lr: f32,
) -> Result<(), EngineError> {
    if grad.len() != param.numel() || state.m.len() != param.numel() {
        return Err(EngineError::Shape(format!(
            "Adam state/gradient for `{name}` do not match its {} elements",
            param.numel()
        )));
    }
    if !(lr > 0.0) {
        return Err(EngineError::InvalidArgument(format!(
            "learning rate must be positive, got {lr}"
        )));
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(EngineError::NonFiniteGradient(name.to_string()));
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - (b1 as f64).powi(t);
    let c2 = 1.0 - (b2 as f64).powi(t);
    let step_size = (lr as f64 / c1) as f32;
    let c2_sqrt = c2.sqrt() as f32;
    for (((p, &g), m), v) in param
        .data_mut()
        .iter_mut()
        .zip(grad)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        *p -= step_size * *m / (v.sqrt() / c2_sqrt + state.epsilon);
    }
    Ok(())
}

/// Adam over every parameter of a [`ParamStore`], using the gradients stored
/// on the tensors. Parameters without a gradient are skipped.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f32,
    states: Vec<AdamState>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f32, beta1: f32, beta2: f32) -> Result<Self, EngineError> {
        let states = store
            .iter()
            .map(|p| AdamState::new(p.tensor.numel(), beta1, beta2, 1e-8))
            .collect::<Result<_, _>>()?;
        Ok(Self { lr, states })
    }

    pub fn states(&self) -> &[AdamState] {
        &self.states
    }

    /// Validates every gradient before touching any parameter, so a
    /// non-finite gradient leaves the whole store unchanged.
    pub fn step(&mut self, store: &mut ParamStore) -> Result<(), EngineError> {
        if store.len() != self.states.len() {
            return Err(EngineError::Shape(format!(
                "optimizer tracks {} parameters, store has {}",
                self.states.len(),
                store.len()
            )));
        }
        for p in store.iter() {
            if let Some(g) = p.tensor.grad() {
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(EngineError::NonFiniteGradient(p.name.clone()));
                }
            }
        }
        for (p, state) in store.iter_mut().zip(self.states.iter_mut()) {
            let Some(grad) = p.tensor.grad().map(<[f32]>::to_vec) else {
                continue;
            };
            adam_step(&p.name, &mut p.tensor, &grad, state, self.lr)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_param(v: f32) -> Tensor {
        Tensor::scalar(v)
    }

    #[test]
    fn first_step_moves_by_lr_times_sign() {
        for g in [0.3f32, -7.0, 1e-3] {
            let mut p = scalar_param(1.0);
            let mut s = AdamState::new(1, 0.9, 0.999, 1e-8).unwrap();
            adam_step("p", &mut p, &[g], &mut s, 0.01).unwrap();
            let moved = p.data()[0] - 1.0;
            assert!(
                (moved + 0.01 * g.signum()).abs() < 1e-6,
                "g={g} moved={moved}"
            );
            assert_eq!(s.step, 1);
        }
    }

    #[test]
    fn zero_gradient_leaves_parameter() {
        let mut p = scalar_param(2.5);
        let mut s = AdamState::pix2pix(1);
        for _ in 0..100 {
            adam_step("p", &mut p, &[0.0], &mut s, 2e-4).unwrap();
        }
        assert_eq!(p.data()[0], 2.5);
    }

    #[test]
    fn quadratic_converges() {
        // d/dx (x - 3)^2 = 2(x - 3)
        let mut p = scalar_param(0.0);
        let mut s = AdamState::new(1, 0.9, 0.999, 1e-8).unwrap();
        for _ in 0..200 {
            let g = 2.0 * (p.data()[0] - 3.0);
            adam_step("x", &mut p, &[g], &mut s, 0.1).unwrap();
        }
        assert!((p.data()[0] - 3.0).abs() < 1e-2, "x = {}", p.data()[0]);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut p = scalar_param(0.0);
        let mut s = AdamState::pix2pix(1);
        let err = adam_step("enc0.weight", &mut p, &[f32::NAN], &mut s, 1e-3).unwrap_err();
        assert!(matches!(err, EngineError::NonFiniteGradient(ref n) if n == "enc0.weight"));
        assert_eq!(s.step, 0);
    }

    #[test]
    fn invalid_betas_rejected() {
        assert!(AdamState::new(1, 1.0, 0.9, 1e-8).is_err());
        assert!(AdamState::new(1, 0.9, 0.9, 0.0).is_err());
    }
}
