use super::GanError;
use crate::engine::ops::{add, affine, bce_with_logits_mean, l1_mean};
use crate::engine::{Tape, Var};

/// Scalar loss nodes of one adversarial step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GanLosses {
    pub loss_d: Var,
    pub loss_g: Var,
    pub l1_term: Var,
}

fn check_finite(tape: &Tape, vars: &[(Var, &str)]) -> Result<(), GanError> {
    for &(v, name) in vars {
        if tape.value(v).data().iter().any(|x| !x.is_finite()) {
            return Err(GanError::NonFiniteInput(name.into()));
        }
    }
    Ok(())
}

/// `½[BCE(d_real, 1) + BCE(d_fake, 0)]`.
pub fn discriminator_loss(tape: &mut Tape, d_real: Var, d_fake: Var) -> Result<Var, GanError> {
    check_finite(tape, &[(d_real, "d_real"), (d_fake, "d_fake")])?;
    let real = bce_with_logits_mean(tape, d_real, 1.0);
    let fake = bce_with_logits_mean(tape, d_fake, 0.0);
    let both = add(tape, real, fake)?;
    Ok(affine(tape, both, 0.5, 0.0))
}

/// `BCE(d_fake, 1) + λ·mean|fake − target|`; returns `(loss_g, l1_term)`.
pub fn generator_loss(
    tape: &mut Tape,
    d_fake: Var,
    fake: Var,
    target: Var,
    lambda_l1: f32,
) -> Result<(Var, Var), GanError> {
    check_finite(
        tape,
        &[
            (d_fake, "d_fake"),
            (fake, "fake image"),
            (target, "target image"),
        ],
    )?;
    if !(lambda_l1 >= 0.0 && lambda_l1.is_finite()) {
        return Err(GanError::InvalidConfig(format!(
            "lambda_l1 must be >= 0, got {lambda_l1}"
        )));
    }
    let adversarial = bce_with_logits_mean(tape, d_fake, 1.0);
    let l1 = l1_mean(tape, fake, target)?;
    let weighted = affine(tape, l1, lambda_l1, 0.0);
    Ok((add(tape, adversarial, weighted)?, l1))
}

/// Both objectives on one tape. Training detaches the fake image for the
/// discriminator update; this combined form does not.
pub fn gan_loss(
    tape: &mut Tape,
    d_real: Var,
    d_fake: Var,
    fake: Var,
    target: Var,
    lambda_l1: f32,
) -> Result<GanLosses, GanError> {
    let loss_d = discriminator_loss(tape, d_real, d_fake)?;
    let (loss_g, l1_term) = generator_loss(tape, d_fake, fake, target, lambda_l1)?;
    Ok(GanLosses {
        loss_d,
        loss_g,
        l1_term,
    })
}
