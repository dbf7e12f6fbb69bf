//! Elementwise, normalization, resampling and reduction ops.

use super::{BackwardCtx, EngineError, Tape, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    Relu,
    LeakyRelu(f32),
    Tanh,
    Sigmoid,
}

impl Activation {
    pub fn apply(self, x: f32) -> f32 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::LeakyRelu(a) => {
                if x > 0.0 {
                    x
                } else {
                    a * x
                }
            }
            Activation::Tanh => x.tanh(),
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative expressed through the input `x` and output `y`.
    fn derivative(self, x: f32, y: f32) -> f32 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu(a) => {
                if x > 0.0 {
                    1.0
                } else {
                    a
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

pub fn sigmoid(x: f32) -> f32 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn same_shape(tape: &Tape, a: Var, b: Var, what: &str) -> Result<(), EngineError> {
    let (sa, sb) = (tape.value(a).shape(), tape.value(b).shape());
    if sa != sb {
        return Err(EngineError::Shape(format!(
            "{what}: operand shapes {sa:?} and {sb:?} differ"
        )));
    }
    Ok(())
}

fn with_data(like: &Tensor, data: Vec<f32>) -> Tensor {
    Tensor::new(like.shape().to_vec(), data).expect("shape preserved")
}

pub fn activation(tape: &mut Tape, x: Var, kind: Activation) -> Result<Var, EngineError> {
    if let Activation::LeakyRelu(a) = kind {
        if !(a > 0.0 && a < 1.0) {
            return Err(EngineError::InvalidArgument(format!(
                "leaky_relu slope must lie in (0, 1), got {a}"
            )));
        }
    }
    let input = tape.value(x);
    let out = with_data(input, input.data().iter().map(|&v| kind.apply(v)).collect());
    Ok(tape.record(
        out,
        &[x],
        Box::new(move |ctx: &BackwardCtx<'_>| {
            let g = ctx.inputs[0]
                .data()
                .iter()
                .zip(ctx.out.data())
                .zip(ctx.grad_out)
                .map(|((&xi, &yi), &go)| go * kind.derivative(xi, yi))
                .collect();
            vec![Some(g)]
        }),
    ))
}

pub fn add(tape: &mut Tape, a: Var, b: Var) -> Result<Var, EngineError> {
    same_shape(tape, a, b, "add")?;
    let (va, vb) = (tape.value(a), tape.value(b));
    let out = with_data(
        va,
        va.data()
            .iter()
            .zip(vb.data())
            .map(|(x, y)| x + y)
            .collect(),
    );
    Ok(tape.record(
        out,
        &[a, b],
        Box::new(|ctx: &BackwardCtx<'_>| {
            let g = ctx.grad_out.to_vec();
            vec![ctx.needs[0].then(|| g.clone()), ctx.needs[1].then_some(g)]
        }),
    ))
}

pub fn mul(tape: &mut Tape, a: Var, b: Var) -> Result<Var, EngineError> {
    same_shape(tape, a, b, "mul")?;
    let (va, vb) = (tape.value(a), tape.value(b));
    let out = with_data(
        va,
        va.data()
            .iter()
            .zip(vb.data())
            .map(|(x, y)| x * y)
            .collect(),
    );
    Ok(tape.record(
        out,
        &[a, b],
        Box::new(|ctx: &BackwardCtx<'_>| {
            let (xa, xb) = (ctx.inputs[0].data(), ctx.inputs[1].data());
            let ga =
                ctx.needs[0].then(|| ctx.grad_out.iter().zip(xb).map(|(g, v)| g * v).collect());
            let gb =
                ctx.needs[1].then(|| ctx.grad_out.iter().zip(xa).map(|(g, v)| g * v).collect());
            vec![ga, gb]
        }),
    ))
}

/// `scale · x + shift`, elementwise.
pub fn affine(tape: &mut Tape, x: Var, scale: f32, shift: f32) -> Var {
    let input = tape.value(x);
    let out = with_data(
        input,
        input.data().iter().map(|&v| scale * v + shift).collect(),
    );
    tape.record(
        out,
        &[x],
        Box::new(move |ctx: &BackwardCtx<'_>| {
            vec![Some(ctx.grad_out.iter().map(|g| g * scale).collect())]
        }),
    )
}

pub fn sum(tape: &mut Tape, x: Var) -> Var {
    let total: f64 = tape.value(x).data().iter().map(|&v| v as f64).sum();
    tape.record(
        Tensor::scalar(total as f32),
        &[x],
        Box::new(|ctx: &BackwardCtx<'_>| vec![Some(vec![ctx.grad_out[0]; ctx.inputs[0].numel()])]),
    )
}

pub fn mean(tape: &mut Tape, x: Var) -> Var {
    let n = tape.value(x).numel();
    let s = sum(tape, x);
    affine(tape, s, 1.0 / n as f32, 0.0)
}

/// Concatenates two `[N, C, ...]` tensors along the channel axis.
pub fn concat_channels(tape: &mut Tape, a: Var, b: Var) -> Result<Var, EngineError> {
    let (sa, sb) = (
        tape.value(a).shape().to_vec(),
        tape.value(b).shape().to_vec(),
    );
    if sa.len() < 2 || sa.len() != sb.len() || sa[0] != sb[0] || sa[2..] != sb[2..] {
        return Err(EngineError::Shape(format!(
            "cannot concatenate {sa:?} and {sb:?} along channels"
        )));
    }
    let n = sa[0];
    let inner: usize = sa[2..].iter().product();
    let (ca, cb) = (sa[1] * inner, sb[1] * inner);
    let mut data = Vec::with_capacity(n * (ca + cb));
    for s in 0..n {
        data.extend_from_slice(&tape.value(a).data()[s * ca..(s + 1) * ca]);
        data.extend_from_slice(&tape.value(b).data()[s * cb..(s + 1) * cb]);
    }
    let mut shape = sa.clone();
    shape[1] += sb[1];
    let out = Tensor::new(shape, data)?;
    Ok(tape.record(
        out,
        &[a, b],
        Box::new(move |ctx: &BackwardCtx<'_>| {
            let mut ga = Vec::with_capacity(n * ca);
            let mut gb = Vec::with_capacity(n * cb);
            for s in 0..n {
                let chunk = &ctx.grad_out[s * (ca + cb)..(s + 1) * (ca + cb)];
                ga.extend_from_slice(&chunk[..ca]);
                gb.extend_from_slice(&chunk[ca..]);
            }
            vec![Some(ga), Some(gb)]
        }),
    ))
}

/// Per-axis interpolation taps `(lo, hi, weight_hi)` for align-corners
/// linear resampling from `n` to `n * factor` samples.
fn linear_taps(n: usize, factor: usize) -> Vec<(usize, usize, f32)> {
    let m = n * factor;
    (0..m)
        .map(|i| {
            if n == 1 || m == 1 {
                return (0, 0, 0.0);
            }
            let src = i as f64 * (n - 1) as f64 / (m - 1) as f64;
            let lo = (src.floor() as usize).min(n - 1);
            let hi = (lo + 1).min(n - 1);
            (lo, hi, (src - lo as f64) as f32)
        })
        .collect()
}

/// Align-corners trilinear upsampling of a `[N, C, D, H, W]` tensor.
pub fn trilinear_upsample(tape: &mut Tape, x: Var, factor: usize) -> Result<Var, EngineError> {
    if factor == 0 {
        return Err(EngineError::InvalidArgument(
            "upsampling factor must be >= 1".into(),
        ));
    }
    let shape = tape.value(x).shape().to_vec();
    if shape.len() != 5 {
        return Err(EngineError::Shape(format!(
            "trilinear_upsample expects [N, C, D, H, W], got {shape:?}"
        )));
    }
    let planes = shape[0] * shape[1];
    let (d, h, w) = (shape[2], shape[3], shape[4]);
    let (od, oh, ow) = (d * factor, h * factor, w * factor);
    let tz = linear_taps(d, factor);
    let ty = linear_taps(h, factor);
    let tx = linear_taps(w, factor);
    let src = tape.value(x).data();
    let mut out = vec![0.0f32; planes * od * oh * ow];
    for p in 0..planes {
        let s = &src[p * d * h * w..(p + 1) * d * h * w];
        let o = &mut out[p * od * oh * ow..(p + 1) * od * oh * ow];
        let mut idx = 0;
        for &(z0, z1, fz) in &tz {
            for &(y0, y1, fy) in &ty {
                for &(x0, x1, fx) in &tx {
                    let at = |z: usize, y: usize, xx: usize| s[(z * h + y) * w + xx];
                    let c00 = at(z0, y0, x0) * (1.0 - fx) + at(z0, y0, x1) * fx;
                    let c01 = at(z0, y1, x0) * (1.0 - fx) + at(z0, y1, x1) * fx;
                    let c10 = at(z1, y0, x0) * (1.0 - fx) + at(z1, y0, x1) * fx;
                    let c11 = at(z1, y1, x0) * (1.0 - fx) + at(z1, y1, x1) * fx;
                    let c0 = c00 * (1.0 - fy) + c01 * fy;
                    let c1 = c10 * (1.0 - fy) + c11 * fy;
                    o[idx] = c0 * (1.0 - fz) + c1 * fz;
                    idx += 1;
                }
            }
        }
    }
    let out = Tensor::new(vec![shape[0], shape[1], od, oh, ow], out)?;
    Ok(tape.record(
        out,
        &[x],
        Box::new(move |ctx: &BackwardCtx<'_>| {
            let mut g = vec![0.0f32; planes * d * h * w];
            for p in 0..planes {
                let gi = &mut g[p * d * h * w..(p + 1) * d * h * w];
                let go = &ctx.grad_out[p * od * oh * ow..(p + 1) * od * oh * ow];
                let mut idx = 0;
                for &(z0, z1, fz) in &tz {
                    for &(y0, y1, fy) in &ty {
                        for &(x0, x1, fx) in &tx {
                            let v = go[idx];
                            idx += 1;
                            for (z, wz) in [(z0, 1.0 - fz), (z1, fz)] {
                                for (y, wy) in [(y0, 1.0 - fy), (y1, fy)] {
                                    let base = (z * h + y) * w;
                                    gi[base + x0] += v * wz * wy * (1.0 - fx);
                                    gi[base + x1] += v * wz * wy * fx;
                                }
                            }
                        }
                    }
                }
            }
            vec![Some(g)]
        }),
    ))
}

/// Instance normalization over the spatial axes of each `(sample, channel)`
/// followed by a per-channel affine map.
pub fn instance_norm3d(
    tape: &mut Tape,
    x: Var,
    gamma: Var,
    beta: Var,
    eps: f32,
) -> Result<Var, EngineError> {
    let shape = tape.value(x).shape().to_vec();
    if shape.len() != 5 {
        return Err(EngineError::Shape(format!(
            "instance_norm3d expects [N, C, D, H, W], got {shape:?}"
        )));
    }
    let c = shape[1];
    for (v, name) in [(gamma, "gamma"), (beta, "beta")] {
        if tape.value(v).shape() != [c] {
            return Err(EngineError::Shape(format!(
                "{name} shape {:?} does not match {c} channels",
                tape.value(v).shape()
            )));
        }
    }
    let spatial: usize = shape[2..].iter().product();
    if !(eps > 0.0) {
        return Err(EngineError::InvalidArgument(format!(
            "instance norm epsilon must be positive, got {eps}"
        )));
    }
    if spatial < 2 {
        return Err(EngineError::InvalidArgument(
            "instance norm needs at least two spatial elements".into(),
        ));
    }
    let src = tape.value(x).data();
    let (g, b) = (tape.value(gamma).data(), tape.value(beta).data());
    let planes = shape[0] * c;
    let mut xhat = vec![0.0f32; src.len()];
    let mut inv_std = vec![0.0f32; planes];
    let mut out = vec![0.0f32; src.len()];
    for p in 0..planes {
        let s = &src[p * spatial..(p + 1) * spatial];
        let mu = s.iter().map(|&v| v as f64).sum::<f64>() / spatial as f64;
        let var = s.iter().map(|&v| (v as f64 - mu).powi(2)).sum::<f64>() / spatial as f64;
        let istd = 1.0 / (var + eps as f64).sqrt();
        inv_std[p] = istd as f32;
        let ch = p % c;
        for i in 0..spatial {
            let xh = ((s[i] as f64 - mu) * istd) as f32;
            xhat[p * spatial + i] = xh;
            out[p * spatial + i] = g[ch] * xh + b[ch];
        }
    }
    let out = Tensor::new(shape, out)?;
    Ok(tape.record(
        out,
        &[x, gamma, beta],
        Box::new(move |ctx: &BackwardCtx<'_>| {
            let gam = ctx.inputs[1].data();
            let mut gx = ctx.needs[0].then(|| vec![0.0f32; xhat.len()]);
            let mut gg = vec![0.0f64; c];
            let mut gb = vec![0.0f64; c];
            for p in 0..planes {
                let ch = p % c;
                let dy = &ctx.grad_out[p * spatial..(p + 1) * spatial];
                let xh = &xhat[p * spatial..(p + 1) * spatial];
                let mut sum_dy = 0.0f64;
                let mut sum_dy_xh = 0.0f64;
                for i in 0..spatial {
                    sum_dy += dy[i] as f64;
                    sum_dy_xh += dy[i] as f64 * xh[i] as f64;
                }
                gg[ch] += sum_dy_xh;
                gb[ch] += sum_dy;
                if let Some(gx) = gx.as_mut() {
                    let scale = gam[ch] as f64 * inv_std[p] as f64 / spatial as f64;
                    for i in 0..spatial {
                        let v = spatial as f64 * dy[i] as f64 - sum_dy - xh[i] as f64 * sum_dy_xh;
                        gx[p * spatial + i] = (scale * v) as f32;
                    }
                }
            }
            vec![
                gx,
                ctx.needs[1].then(|| gg.iter().map(|&v| v as f32).collect()),
                ctx.needs[2].then(|| gb.iter().map(|&v| v as f32).collect()),
            ]
        }),
    ))
}

/// Mean binary cross-entropy of `sigmoid(logits)` against a constant target.
pub fn bce_with_logits_mean(tape: &mut Tape, logits: Var, target: f32) -> Var {
    let x = tape.value(logits).data();
    let n = x.len() as f64;
    let total: f64 = x
        .iter()
        .map(|&v| {
            let v = v as f64;
            v.max(0.0) - v * target as f64 + (-v.abs()).exp().ln_1p()
        })
        .sum();
    tape.record(
        Tensor::scalar((total / n) as f32),
        &[logits],
        Box::new(move |ctx: &BackwardCtx<'_>| {
            let scale = ctx.grad_out[0] / ctx.inputs[0].numel() as f32;
            vec![Some(
                ctx.inputs[0]
                    .data()
                    .iter()
                    .map(|&v| (sigmoid(v) - target) * scale)
                    .collect(),
            )]
        }),
    )
}

/// Mean absolute difference `mean |a - b|`.
pub fn l1_mean(tape: &mut Tape, a: Var, b: Var) -> Result<Var, EngineError> {
    same_shape(tape, a, b, "l1_mean")?;
    let (va, vb) = (tape.value(a).data(), tape.value(b).data());
    let total: f64 = va.iter().zip(vb).map(|(x, y)| (x - y).abs() as f64).sum();
    let n = va.len();
    Ok(tape.record(
        Tensor::scalar((total / n as f64) as f32),
        &[a, b],
        Box::new(move |ctx: &BackwardCtx<'_>| {
            let scale = ctx.grad_out[0] / n as f32;
            let sign: Vec<f32> = ctx.inputs[0]
                .data()
                .iter()
                .zip(ctx.inputs[1].data())
                .map(|(x, y)| {
                    let d = x - y;
                    if d > 0.0 {
                        scale
                    } else if d < 0.0 {
                        -scale
                    } else {
                        0.0
                    }
                })
                .collect();
            let gb = ctx.needs[1].then(|| sign.iter().map(|v| -v).collect());
            vec![Some(sign), gb]
        }),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn activation_values() {
        assert_eq!(Activation::Relu.apply(-1.0), 0.0);
        assert_eq!(Activation::Relu.apply(2.0), 2.0);
        assert_eq!(Activation::Sigmoid.apply(0.0), 0.5);
        assert_eq!(Activation::Tanh.apply(0.0), 0.0);
        assert!((Activation::LeakyRelu(0.2).apply(-1.0) + 0.2).abs() < 1e-7);
    }

    #[test]
    fn leaky_slope_out_of_range_rejected() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[2]));
        assert!(activation(&mut tape, x, Activation::LeakyRelu(1.5)).is_err());
    }

    #[test]
    fn upsample_ramp_align_corners() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::new(vec![1, 1, 1, 1, 2], vec![0.0, 1.0]).unwrap());
        let y = trilinear_upsample(&mut tape, x, 2).unwrap();
        let v = tape.value(y);
        assert_eq!(v.shape(), &[1, 1, 2, 2, 4]);
        let expected = [0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0];
        for row in v.data().chunks(4) {
            for (a, b) in row.iter().zip(expected) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn upsample_constant_stays_constant() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::full(&[1, 2, 2, 3, 2], 4.5));
        let y = trilinear_upsample(&mut tape, x, 2).unwrap();
        assert_eq!(tape.value(y).shape(), &[1, 2, 4, 6, 4]);
        assert!(tape.value(y).data().iter().all(|&v| (v - 4.5).abs() < 1e-6));
        assert!(trilinear_upsample(&mut tape, x, 0).is_err());
    }

    #[test]
    fn instance_norm_constant_channel() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::full(&[1, 1, 2, 2, 2], 3.0));
        let g = tape.constant(Tensor::full(&[1], 2.0));
        let b = tape.constant(Tensor::full(&[1], 0.25));
        let y = instance_norm3d(&mut tape, x, g, b, 1e-5).unwrap();
        assert!(tape.value(y).data().iter().all(|&v| v == 0.25));
    }

    #[test]
    fn instance_norm_guards() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::full(&[1, 1, 1, 1, 1], 3.0));
        let g = tape.constant(Tensor::full(&[1], 1.0));
        let b = tape.constant(Tensor::full(&[1], 0.0));
        assert!(instance_norm3d(&mut tape, x, g, b, 1e-5).is_err());
        let x2 = tape.constant(Tensor::full(&[1, 1, 2, 1, 1], 3.0));
        assert!(instance_norm3d(&mut tape, x2, g, b, 0.0).is_err());
    }

    #[test]
    fn bce_at_zero_logit_is_ln2() {
        let mut tape = Tape::new();
        let x = tape.constant(Tensor::zeros(&[3, 3]));
        let l1 = bce_with_logits_mean(&mut tape, x, 1.0);
        let l0 = bce_with_logits_mean(&mut tape, x, 0.0);
        for l in [l1, l0] {
            assert!((tape.value(l).data()[0] - std::f32::consts::LN_2).abs() < 1e-6);
        }
    }

    #[test]
    fn concat_interleaves_per_sample() {
        let mut tape = Tape::new();
        let a = tape.constant(Tensor::new(vec![2, 1, 1], vec![1.0, 2.0]).unwrap());
        let b = tape.constant(Tensor::new(vec![2, 1, 1], vec![3.0, 4.0]).unwrap());
        let c = concat_channels(&mut tape, a, b).unwrap();
        assert_eq!(tape.value(c).shape(), &[2, 2, 1]);
        assert_eq!(tape.value(c).data(), &[1.0, 3.0, 2.0, 4.0]);
    }
}
