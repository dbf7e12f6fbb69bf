//! Parameterized layers. Each layer owns indices into a [`ParamStore`] and
//! runs against the `Var`s produced by [`ParamStore::bind`].

use rand::Rng;

use super::{
    conv3d, conv_transpose3d, instance_norm3d, ConvGeometry, EngineError, ParamStore, Tape, Tensor,
    Var,
};

/// Standard deviation of the normal kernel initializer.
pub const INIT_STD: f32 = 0.02;
pub const NORM_EPS: f32 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Conv3d {
    weight: usize,
    bias: usize,
    pub geometry: ConvGeometry,
}

impl Conv3d {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        geometry: ConvGeometry,
        rng: &mut R,
    ) -> Self {
        let [kd, kh, kw] = geometry.kernel;
        let weight = store.push_normal(
            format!("{name}.weight"),
            &[out_channels, in_channels, kd, kh, kw],
            INIT_STD,
            rng,
        );
        let bias = store.push(format!("{name}.bias"), Tensor::zeros(&[out_channels]));
        Self {
            weight,
            bias,
            geometry,
        }
    }

    pub fn forward(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Result<Var, EngineError> {
        conv3d(
            tape,
            x,
            vars[self.weight],
            Some(vars[self.bias]),
            self.geometry,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConvTranspose3d {
    weight: usize,
    bias: usize,
    pub geometry: ConvGeometry,
}

impl ConvTranspose3d {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        geometry: ConvGeometry,
        rng: &mut R,
    ) -> Self {
        let [kd, kh, kw] = geometry.kernel;
        let weight = store.push_normal(
            format!("{name}.weight"),
            &[in_channels, out_channels, kd, kh, kw],
            INIT_STD,
            rng,
        );
        let bias = store.push(format!("{name}.bias"), Tensor::zeros(&[out_channels]));
        Self {
            weight,
            bias,
            geometry,
        }
    }

    pub fn forward(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Result<Var, EngineError> {
        conv_transpose3d(
            tape,
            x,
            vars[self.weight],
            Some(vars[self.bias]),
            self.geometry,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InstanceNorm3d {
    gamma: usize,
    beta: usize,
}

impl InstanceNorm3d {
    pub fn new(store: &mut ParamStore, name: &str, channels: usize) -> Self {
        let gamma = store.push(format!("{name}.gamma"), Tensor::full(&[channels], 1.0));
        let beta = store.push(format!("{name}.beta"), Tensor::zeros(&[channels]));
        Self { gamma, beta }
    }

    pub fn forward(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Result<Var, EngineError> {
        instance_norm3d(tape, x, vars[self.gamma], vars[self.beta], NORM_EPS)
    }
}
