//! Test-only oracles shared by the integration targets.
#![allow(dead_code)]

use echosynth::engine::{ops, Tape, Tensor, Var};
use rand::seq::index::sample;
use rand::Rng;

pub const FD_STEP: f32 = 1e-3;

/// Builds a scalar loss from the given leaves.
pub type LossBuilder<'a> = dyn Fn(&mut Tape, &[Var]) -> Var + 'a;

fn eval(inputs: &[Tensor], build: &LossBuilder<'_>) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.constant(t.clone())).collect();
    let loss = build(&mut tape, &vars);
    tape.value(loss).data()[0] as f64
}

/// Compares reverse-mode gradients with central differences on up to
/// `coords` randomly chosen entries per input tensor. Returns the worst
/// norm-wise relative error `‖fd − analytic‖ / max(‖fd‖, ‖analytic‖)` over
/// the inputs listed in `check`.
pub fn grad_check<R: Rng>(
    inputs: &[Tensor],
    check: &[usize],
    build: &LossBuilder<'_>,
    coords: usize,
    rng: &mut R,
) -> f64 {
    grad_check_with_step(inputs, check, build, coords, FD_STEP, rng)
}

/// [`grad_check`] with an explicit central-difference step. Deep f32
/// networks whose per-parameter slopes sit near the loss's rounding floor
/// need a wider stencil.
pub fn grad_check_with_step<R: Rng>(
    inputs: &[Tensor],
    check: &[usize],
    build: &LossBuilder<'_>,
    coords: usize,
    step: f32,
    rng: &mut R,
) -> f64 {
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = build(&mut tape, &vars);
    let grads = tape.backward(loss).expect("backward");

    let mut worst = 0.0f64;
    for &ti in check {
        let analytic = grads.get(vars[ti]).expect("gradient for checked input");
        let n = inputs[ti].numel();
        let picks = sample(rng, n, coords.min(n)).into_vec();
        let (mut diff2, mut fd2, mut an2) = (0.0f64, 0.0f64, 0.0f64);
        for idx in picks {
            let mut plus = inputs.to_vec();
            plus[ti].data_mut()[idx] += step;
            let mut minus = inputs.to_vec();
            minus[ti].data_mut()[idx] -= step;
            let fd = (eval(&plus, build) - eval(&minus, build)) / (2.0 * step as f64);
            let an = analytic[idx] as f64;
            diff2 += (fd - an).powi(2);
            fd2 += fd * fd;
            an2 += an * an;
        }
        let denom = fd2.sqrt().max(an2.sqrt()).max(1e-12);
        worst = worst.max(diff2.sqrt() / denom);
    }
    worst
}

/// `Σ r ⊙ y` for a fixed random weighting `r`, so every output element
/// contributes a distinct slope.
pub fn weighted_sum(tape: &mut Tape, y: Var, weights: &Tensor) -> Var {
    let w = tape
        .constant(Tensor::new(tape.value(y).shape().to_vec(), weights.data().to_vec()).unwrap());
    let prod = ops::mul(tape, y, w).unwrap();
    ops::sum(tape, prod)
}

pub fn uniform<R: Rng>(shape: &[usize], lo: f32, hi: f32, rng: &mut R) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.gen_range(lo..hi)).collect(),
    )
    .unwrap()
}

/// Uniform entries bounded away from zero by `gap` (keeps kinks out of FD
/// stencils).
pub fn away_from_zero<R: Rng>(shape: &[usize], gap: f32, hi: f32, rng: &mut R) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.gen_range(gap..hi);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape.to_vec(), data).unwrap()
}

/// Directional-derivative check: for `directions` random unit vectors `d`
/// spanning the tensors in `check`, compares `(L(θ + h·d) − L(θ − h·d)) / 2h`
/// with `∇L · d`. Returns the worst error relative to `‖∇L‖`, the largest
/// directional slope any unit direction can have. The projection pools
/// every coordinate's slope, so it stays above the f32 rounding floor of
/// deep networks where single-coordinate slopes do not.
pub fn directional_check<R: Rng>(
    inputs: &[Tensor],
    check: &[usize],
    build: &LossBuilder<'_>,
    directions: usize,
    step: f32,
    rng: &mut R,
) -> f64 {
    use rand_distr::{Distribution, StandardNormal};

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = build(&mut tape, &vars);
    let grads = tape.backward(loss).expect("backward");

    let grad_norm = check
        .iter()
        .flat_map(|&ti| {
            grads
                .get(vars[ti])
                .expect("gradient for checked input")
                .iter()
        })
        .map(|&g| (g as f64).powi(2))
        .sum::<f64>()
        .sqrt()
        .max(1e-12);
    let mut worst = 0.0f64;
    for _ in 0..directions {
        let mut dirs: Vec<Vec<f64>> = check
            .iter()
            .map(|&ti| {
                (0..inputs[ti].numel())
                    .map(|_| StandardNormal.sample(rng))
                    .collect()
            })
            .collect();
        let norm = dirs.iter().flatten().map(|v| v * v).sum::<f64>().sqrt();
        dirs.iter_mut().flatten().for_each(|v| *v /= norm);

        let mut analytic = 0.0f64;
        let mut plus = inputs.to_vec();
        let mut minus = inputs.to_vec();
        for (k, &ti) in check.iter().enumerate() {
            let g = grads.get(vars[ti]).expect("gradient for checked input");
            for (i, &d) in dirs[k].iter().enumerate() {
                analytic += g[i] as f64 * d;
                plus[ti].data_mut()[i] += step * d as f32;
                minus[ti].data_mut()[i] -= step * d as f32;
            }
        }
        let fd = (eval(&plus, build) - eval(&minus, build)) / (2.0 * step as f64);
        worst = worst.max((fd - analytic).abs() / grad_norm);
    }
    worst
}
