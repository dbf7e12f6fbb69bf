//! Reverse-mode automatic differentiation with the 3D layers and optimizer
//! used by the generator, discriminator and segmenter.
//!
//! Values live in [`Tensor`]s; ops record onto a [`Tape`] and return [`Var`]
//! handles. After the forward pass, [`Tape::backward`] on a scalar loss
//! yields [`Gradients`] for every leaf that requires one.
//!
//! ```
//! use echosynth::engine::{ops, Tape, Tensor};
//!
//! let mut tape = Tape::new();
//! let x = tape.param(Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap());
//! let sq = ops::mul(&mut tape, x, x).unwrap();
//! let loss = ops::sum(&mut tape, sq);
//! let grads = tape.backward(loss).unwrap();
//! assert_eq!(grads.get(x).unwrap(), &[2.0, -4.0, 1.0]);
//! ```

mod conv;
pub mod nn;
pub mod ops;
mod optim;
mod params;
mod tape;
mod tensor;

use thiserror::Error;

pub use conv::{conv3d, conv3d_forward, conv_transpose3d, conv_transpose3d_forward, ConvGeometry};
pub use ops::{instance_norm3d, trilinear_upsample, Activation};
pub use optim::{adam_step, Adam, AdamState};
pub use params::{Param, ParamStore};
pub use tape::{BackwardCtx, BackwardFn, Gradients, Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EngineError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("loss must be a scalar, got {0} elements")]
    NonScalarLoss(usize),
    #[error("backward already ran on this tape; record a fresh graph")]
    TapeConsumed,
    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),
}
