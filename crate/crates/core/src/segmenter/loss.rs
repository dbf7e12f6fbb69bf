use super::SegError;
use crate::engine::{BackwardCtx, Tape, Tensor, Var};
use crate::volume::NUM_CLASSES;

/// Smoothing term of the soft Dice.
pub const DICE_EPS: f64 = 1e-5;

struct Parts {
    /// Softmax probabilities, same layout as the logits.
    probs: Vec<f64>,
    /// Per class: Σp·g, Σp, Σg.
    inter: [f64; NUM_CLASSES],
    psum: [f64; NUM_CLASSES],
    gsum: [f64; NUM_CLASSES],
    loss: f64,
}

fn check(shape: &[usize], target: &[u8]) -> Result<(usize, usize), SegError> {
    if shape.len() != 5 || shape[1] != NUM_CLASSES {
        return Err(SegError::Shape(format!(
            "logits must be [N, {NUM_CLASSES}, D, H, W], got {shape:?}"
        )));
    }
    let (n, voxels) = (shape[0], shape[2] * shape[3] * shape[4]);
    if target.len() != n * voxels {
        return Err(SegError::Shape(format!(
            "{} target voxels for logits {shape:?}",
            target.len()
        )));
    }
    if let Some(&bad) = target.iter().find(|&&t| t as usize >= NUM_CLASSES) {
        return Err(SegError::TargetId(bad));
    }
    Ok((n, voxels))
}

fn forward(logits: &[f32], n: usize, voxels: usize, target: &[u8]) -> Parts {
    let mut probs = vec![0.0f64; logits.len()];
    let mut ce = 0.0;
    let mut inter = [0.0f64; NUM_CLASSES];
    let mut psum = [0.0f64; NUM_CLASSES];
    let mut gsum = [0.0f64; NUM_CLASSES];
    for b in 0..n {
        let base = b * NUM_CLASSES * voxels;
        for v in 0..voxels {
            let z: [f64; NUM_CLASSES] =
                std::array::from_fn(|c| logits[base + c * voxels + v] as f64);
            let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: [f64; NUM_CLASSES] = std::array::from_fn(|c| (z[c] - m).exp());
            let s: f64 = e.iter().sum();
            let t = target[b * voxels + v] as usize;
            ce += s.ln() - (z[t] - m);
            for c in 0..NUM_CLASSES {
                let p = e[c] / s;
                probs[base + c * voxels + v] = p;
                psum[c] += p;
            }
            inter[t] += probs[base + t * voxels + v];
            gsum[t] += 1.0;
        }
    }
    let ce = ce / (n * voxels) as f64;
    let fg = NUM_CLASSES - 1;
    let dice: f64 = (1..NUM_CLASSES)
        .map(|c| (2.0 * inter[c] + DICE_EPS) / (psum[c] + gsum[c] + DICE_EPS))
        .sum::<f64>()
        / fg as f64;
    Parts {
        probs,
        inter,
        psum,
        gsum,
        loss: ce + 1.0 - dice,
    }
}

/// Value of [`dice_ce_loss`] without recording a node.
pub fn dice_ce_value(logits: &Tensor, target: &[u8]) -> Result<f64, SegError> {
    let (n, voxels) = check(logits.shape(), target)?;
    Ok(forward(logits.data(), n, voxels, target).loss)
}

/// `CE(softmax(z), onehot(t)) + 1 − mean_{c∈{LV,LA,MYO}} softDice_c`.
///
/// Cross-entropy is averaged over every voxel of the batch; each soft Dice
/// `(2Σpg + ε) / (Σp + Σg + ε)` is summed over the whole batch. `target`
/// holds one class id per voxel in `[N, D, H, W]` order.
pub fn dice_ce_loss(tape: &mut Tape, logits: Var, target: &[u8]) -> Result<Var, SegError> {
    let (n, voxels) = check(tape.value(logits).shape(), target)?;
    let parts = forward(tape.value(logits).data(), n, voxels, target);
    let target = target.to_vec();
    Ok(tape.record(
        Tensor::scalar(parts.loss as f32),
        &[logits],
        Box::new(move |ctx: &BackwardCtx<'_>| {
            let Parts {
                probs,
                inter,
                psum,
                gsum,
                ..
            } = &parts;
            // dDice_c/dp at a voxel is (2g·S − (2I + ε)) / S² with
            // S = Σp + Σg + ε; the loss carries −1/3 of it.
            let fg = (NUM_CLASSES - 1) as f64;
            let mut a = [0.0f64; NUM_CLASSES];
            let mut k = [0.0f64; NUM_CLASSES];
            for c in 1..NUM_CLASSES {
                let s = psum[c] + gsum[c] + DICE_EPS;
                a[c] = -2.0 / (s * fg);
                k[c] = (2.0 * inter[c] + DICE_EPS) / (s * s * fg);
            }
            let inv_m = 1.0 / (n * voxels) as f64;
            let g_out = ctx.grad_out[0] as f64;
            let mut grad = vec![0.0f32; probs.len()];
            for b in 0..n {
                let base = b * NUM_CLASSES * voxels;
                for v in 0..voxels {
                    let t = target[b * voxels + v] as usize;
                    let p: [f64; NUM_CLASSES] =
                        std::array::from_fn(|c| probs[base + c * voxels + v]);
                    // dL/dp from the Dice term.
                    let dp: [f64; NUM_CLASSES] = std::array::from_fn(|c| {
                        let g = if c == t { 1.0 } else { 0.0 };
                        a[c] * g + k[c]
                    });
                    let dot: f64 = (0..NUM_CLASSES).map(|c| p[c] * dp[c]).sum();
                    for c in 0..NUM_CLASSES {
                        let onehot = if c == t { 1.0 } else { 0.0 };
                        let dz = (p[c] - onehot) * inv_m + p[c] * (dp[c] - dot);
                        grad[base + c * voxels + v] = (dz * g_out) as f32;
                    }
                }
            }
            vec![Some(grad)]
        }),
    ))
}
