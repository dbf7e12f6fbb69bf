mod common;

use std::cell::Cell;
use std::rc::Rc;

use common::{away_from_zero, grad_check, grad_check_with_step, uniform, weighted_sum};
use echosynth::engine::{
    conv3d, conv3d_forward, conv_transpose3d, conv_transpose3d_forward, instance_norm3d, ops,
    trilinear_upsample, Activation, BackwardCtx, ConvGeometry, EngineError, Tape, Tensor,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const SEEDS: u64 = 10;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[test]
fn conv3d_gradients_match_finite_differences() {
    for seed in 0..SEEDS {
        let mut r = rng(seed);
        let geo = ConvGeometry::cubic(3, 1 + (seed as usize % 2), 1);
        let x = uniform(&[1, 2, 4, 4, 4], -1.0, 1.0, &mut r);
        let w = uniform(&[3, 2, 3, 3, 3], -1.0, 1.0, &mut r);
        let b = uniform(&[3], -1.0, 1.0, &mut r);
        let out = conv3d_forward(&x, &w, Some(&b), &geo).unwrap();
        let weights = uniform(out.shape(), -1.0, 1.0, &mut r);
        let build = |t: &mut Tape, v: &[echosynth::engine::Var]| {
            let y = conv3d(t, v[0], v[1], Some(v[2]), geo).unwrap();
            weighted_sum(t, y, &weights)
        };
        let err = grad_check(&[x, w, b], &[0, 1, 2], &build, 40, &mut r);
        assert!(err < 1e-3, "seed {seed}: relative error {err}");
    }
}

#[test]
fn plain_sum_gradient_of_conv() {
    let mut r = rng(99);
    let geo = ConvGeometry::cubic(3, 1, 0);
    let x = uniform(&[1, 2, 4, 4, 4], -1.0, 1.0, &mut r);
    let w = uniform(&[1, 2, 3, 3, 3], -1.0, 1.0, &mut r);
    let build = |t: &mut Tape, v: &[echosynth::engine::Var]| {
        let y = conv3d(t, v[0], v[1], None, geo).unwrap();
        ops::sum(t, y)
    };
    let err = grad_check(&[x, w], &[0, 1], &build, 64, &mut r);
    assert!(err < 1e-3, "relative error {err}");
}

#[test]
fn conv_transpose3d_gradients_match_finite_differences() {
    for seed in 0..SEEDS {
        let mut r = rng(100 + seed);
        let geo = ConvGeometry::cubic(4, 2, 1);
        let x = uniform(&[1, 3, 2, 3, 2], -1.0, 1.0, &mut r);
        let w = uniform(&[3, 2, 4, 4, 4], -1.0, 1.0, &mut r);
        let b = uniform(&[2], -1.0, 1.0, &mut r);
        let out = conv_transpose3d_forward(&x, &w, Some(&b), &geo).unwrap();
        assert_eq!(out.shape(), &[1, 2, 4, 6, 4]);
        let weights = uniform(out.shape(), -1.0, 1.0, &mut r);
        let build = |t: &mut Tape, v: &[echosynth::engine::Var]| {
            let y = conv_transpose3d(t, v[0], v[1], Some(v[2]), geo).unwrap();
            weighted_sum(t, y, &weights)
        };
        let err = grad_check(&[x, w, b], &[0, 1, 2], &build, 40, &mut r);
        assert!(err < 1e-3, "seed {seed}: relative error {err}");
    }
}

fn inner(a: &Tensor, b: &Tensor) -> f64 {
    a.data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| x as f64 * y as f64)
        .sum()
}

#[test]
fn transposed_conv_is_the_adjoint() {
    let cases = [
        ([4usize, 6, 8], ConvGeometry::cubic(4, 2, 1)),
        ([5, 5, 5], ConvGeometry::cubic(3, 1, 1)),
        ([6, 4, 6], ConvGeometry::cubic(2, 2, 0)),
        ([7, 7, 3], ConvGeometry::cubic(3, 2, 1)),
    ];
    for (seed, (dims, geo)) in cases.into_iter().enumerate() {
        let mut r = rng(200 + seed as u64);
        let x = uniform(&[2, 3, dims[0], dims[1], dims[2]], -1.0, 1.0, &mut r);
        let w = uniform(
            &[4, 3, geo.kernel[0], geo.kernel[1], geo.kernel[2]],
            -1.0,
            1.0,
            &mut r,
        );
        let y_shape = conv3d_forward(&x, &w, None, &geo).unwrap();
        let y = uniform(y_shape.shape(), -1.0, 1.0, &mut r);
        // conv3d weight [Cout, Cin, k] is read as [Cin', Cout'] = [Cout, Cin] by the transpose.
        let xt = conv_transpose3d_forward(&y, &w, None, &geo);
        let xt = match xt {
            Ok(v) => v,
            // Odd extents with stride 2 are not reachable by the transpose;
            // the identity is only defined when the grids round-trip.
            Err(_) => continue,
        };
        assert_eq!(xt.shape(), x.shape());
        let lhs = inner(&y_shape, &y);
        let rhs = inner(&x, &xt);
        assert!(
            (lhs - rhs).abs() <= 1e-4 * lhs.abs().max(rhs.abs()),
            "case {seed}: {lhs} vs {rhs}"
        );
    }
}

#[test]
fn upsample_gradients_match_finite_differences() {
    for seed in 0..SEEDS {
        let mut r = rng(300 + seed);
        let x = uniform(&[1, 2, 2, 3, 3], -1.0, 1.0, &mut r);
        let factor = 2 + seed as usize % 2;
        let weights = uniform(
            &[1, 2, 2 * factor, 3 * factor, 3 * factor],
            -1.0,
            1.0,
            &mut r,
        );
        let build = |t: &mut Tape, v: &[echosynth::engine::Var]| {
            let y = trilinear_upsample(t, v[0], factor).unwrap();
            weighted_sum(t, y, &weights)
        };
        let err = grad_check(&[x], &[0], &build, 36, &mut r);
        assert!(err < 1e-3, "seed {seed}: relative error {err}");
    }
}

#[test]
fn upsample_then_conv_matches_transposed_shape() {
    let mut tape = Tape::new();
    let x = tape.constant(Tensor::zeros(&[1, 4, 4, 4, 2]));
    let up = trilinear_upsample(&mut tape, x, 2).unwrap();
    let w3 = tape.constant(Tensor::zeros(&[2, 4, 3, 3, 3]));
    let a = conv3d(&mut tape, up, w3, None, ConvGeometry::cubic(3, 1, 1)).unwrap();
    let w4 = tape.constant(Tensor::zeros(&[4, 2, 4, 4, 4]));
    let b = conv_transpose3d(&mut tape, x, w4, None, ConvGeometry::cubic(4, 2, 1)).unwrap();
    assert_eq!(tape.value(a).shape(), tape.value(b).shape());
    assert_eq!(tape.value(a).shape(), &[1, 2, 8, 8, 4]);
}

#[test]
fn activation_gradients_match_finite_differences() {
    let kinds = [
        Activation::Relu,
        Activation::LeakyRelu(0.2),
        Activation::Tanh,
        Activation::Sigmoid,
    ];
    for kind in kinds {
        for seed in 0..SEEDS {
            let mut r = rng(400 + seed);
            let x = away_from_zero(&[2, 3, 4], 0.05, 2.0, &mut r);
            let weights = uniform(&[2, 3, 4], -1.0, 1.0, &mut r);
            let build = |t: &mut Tape, v: &[echosynth::engine::Var]| {
                let y = ops::activation(t, v[0], kind).unwrap();
                weighted_sum(t, y, &weights)
            };
            let err = grad_check_with_step(&[x], &[0], &build, 24, 1e-2, &mut r);
            assert!(err < 1e-3, "{kind:?} seed {seed}: relative error {err}");
        }
    }
}

#[test]
fn instance_norm_statistics() {
    let mut r = rng(7);
    let mut tape = Tape::new();
    let x = tape.constant(uniform(&[2, 3, 4, 4, 4], -3.0, 5.0, &mut r));
    let g = tape.constant(Tensor::full(&[3], 1.0));
    let b = tape.constant(Tensor::zeros(&[3]));
    let y = instance_norm3d(&mut tape, x, g, b, 1e-5).unwrap();
    for plane in tape.value(y).data().chunks(64) {
        let mu = plane.iter().map(|&v| v as f64).sum::<f64>() / 64.0;
        let var = plane.iter().map(|&v| (v as f64 - mu).powi(2)).sum::<f64>() / 64.0;
        assert!(mu.abs() < 1e-5, "mean {mu}");
        assert!((var - 1.0).abs() < 1e-3, "variance {var}");
    }
}

#[test]
fn instance_norm_gradients_match_finite_differences() {
    for seed in 0..SEEDS {
        let mut r = rng(500 + seed);
        let x = uniform(&[2, 2, 2, 3, 2], -1.0, 1.0, &mut r);
        let g = uniform(&[2], 0.5, 1.5, &mut r);
        let b = uniform(&[2], -0.5, 0.5, &mut r);
        let weights = uniform(&[2, 2, 2, 3, 2], -1.0, 1.0, &mut r);
        let build = |t: &mut Tape, v: &[echosynth::engine::Var]| {
            let y = instance_norm3d(t, v[0], v[1], v[2], 1e-5).unwrap();
            weighted_sum(t, y, &weights)
        };
        let err = grad_check(&[x, g, b], &[0, 1, 2], &build, 48, &mut r);
        assert!(err < 1e-3, "seed {seed}: relative error {err}");
    }
}

#[test]
fn sum_of_squares_gradient_is_exact() {
    let mut r = rng(11);
    let x0 = uniform(&[5, 4], -3.0, 3.0, &mut r);
    let mut tape = Tape::new();
    let x = tape.param(x0.clone());
    let sq = ops::mul(&mut tape, x, x).unwrap();
    let loss = ops::sum(&mut tape, sq);
    let grads = tape.backward(loss).unwrap();
    for (g, v) in grads.get(x).unwrap().iter().zip(x0.data()) {
        assert_eq!(*g, 2.0 * v);
    }
}

#[test]
fn sum_of_squared_tanh_gradient() {
    for seed in 0..SEEDS {
        let mut r = rng(600 + seed);
        let x = uniform(&[3, 5], -2.0, 2.0, &mut r);
        let build = |t: &mut Tape, v: &[echosynth::engine::Var]| {
            let th = ops::activation(t, v[0], Activation::Tanh).unwrap();
            let sq = ops::mul(t, th, th).unwrap();
            ops::sum(t, sq)
        };
        let err = grad_check(&[x], &[0], &build, 15, &mut r);
        assert!(err < 1e-3, "seed {seed}: relative error {err}");
    }
}

#[test]
fn loss_gradients_match_finite_differences() {
    for seed in 0..SEEDS {
        let mut r = rng(700 + seed);
        let logits = uniform(&[1, 1, 2, 2, 2], -2.0, 2.0, &mut r);
        let a = away_from_zero(&[2, 3], 0.05, 1.0, &mut r);
        let b = Tensor::zeros(&[2, 3]);
        let build = |t: &mut Tape, v: &[echosynth::engine::Var]| {
            let bce = ops::bce_with_logits_mean(t, v[0], 1.0);
            let l1 = ops::l1_mean(t, v[1], v[2]).unwrap();
            let l1 = ops::affine(t, l1, 3.0, 0.0);
            ops::add(t, bce, l1).unwrap()
        };
        let err = grad_check(&[logits, a, b], &[0, 1], &build, 8, &mut r);
        assert!(err < 1e-3, "seed {seed}: relative error {err}");
    }
}

#[test]
fn backward_twice_is_an_error() {
    let mut tape = Tape::new();
    let x = tape.param(Tensor::full(&[2], 1.0));
    let loss = ops::sum(&mut tape, x);
    tape.backward(loss).unwrap();
    assert_eq!(tape.backward(loss).unwrap_err(), EngineError::TapeConsumed);
}

#[test]
fn non_scalar_loss_rejected() {
    let mut tape = Tape::new();
    let x = tape.param(Tensor::full(&[3], 1.0));
    assert_eq!(tape.backward(x).unwrap_err(), EngineError::NonScalarLoss(3));
}

#[test]
fn each_node_is_visited_once() {
    let calls = Rc::new(Cell::new(0usize));
    let mut tape = Tape::new();
    let x = tape.param(Tensor::full(&[4], 0.5));
    let c = Rc::clone(&calls);
    let doubled = tape.record(
        Tensor::full(&[4], 1.0),
        &[x],
        Box::new(move |ctx: &BackwardCtx<'_>| {
            c.set(c.get() + 1);
            vec![Some(ctx.grad_out.iter().map(|g| 2.0 * g).collect())]
        }),
    );
    // Fan-out: `doubled` feeds two consumers that meet again in `add`.
    let a = ops::affine(&mut tape, doubled, 1.0, 0.0);
    let b = ops::affine(&mut tape, doubled, 3.0, 0.0);
    let s = ops::add(&mut tape, a, b).unwrap();
    let loss = ops::sum(&mut tape, s);
    let grads = tape.backward(loss).unwrap();
    assert_eq!(calls.get(), 1);
    assert_eq!(grads.visited(), 5);
    assert_eq!(grads.get(x).unwrap(), &[8.0; 4]);
}

#[test]
fn ops_are_bit_deterministic() {
    let run = || {
        let mut r = rng(42);
        let mut tape = Tape::new();
        let x = tape.param(uniform(&[2, 2, 4, 4, 4], -1.0, 1.0, &mut r));
        let w = tape.param(uniform(&[3, 2, 3, 3, 3], -1.0, 1.0, &mut r));
        let y = conv3d(&mut tape, x, w, None, ConvGeometry::cubic(3, 2, 1)).unwrap();
        let y = trilinear_upsample(&mut tape, y, 2).unwrap();
        let y = ops::activation(&mut tape, y, Activation::Tanh).unwrap();
        let out = tape.value(y).clone();
        let loss = ops::sum(&mut tape, y);
        let g = tape.backward(loss).unwrap();
        (out, g.get(w).unwrap().to_vec())
    };
    assert_eq!(run(), run());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn conv_shapes_follow_formula(
        d in 1usize..7, h in 1usize..7, w in 1usize..7,
        k in 1usize..4, s in 1usize..3, p in 0usize..2,
    ) {
        let geo = ConvGeometry::cubic(k, s, p);
        let x = Tensor::zeros(&[1, 1, d, h, w]);
        let wt = Tensor::zeros(&[2, 1, k, k, k]);
        let fits = [d, h, w].iter().all(|&n| n + 2 * p >= k);
        match conv3d_forward(&x, &wt, None, &geo) {
            Ok(y) => {
                prop_assert!(fits);
                let expect = |n: usize| (n + 2 * p - k) / s + 1;
                prop_assert_eq!(y.shape(), &[1, 2, expect(d), expect(h), expect(w)][..]);
            }
            Err(_) => prop_assert!(!fits),
        }
    }

    #[test]
    fn transposed_shapes_follow_formula(
        d in 1usize..6, h in 1usize..6, w in 1usize..6,
        k in 1usize..5, s in 1usize..3, p in 0usize..2,
    ) {
        let geo = ConvGeometry::cubic(k, s, p);
        let x = Tensor::zeros(&[1, 2, d, h, w]);
        let wt = Tensor::zeros(&[2, 3, k, k, k]);
        let expect = |n: usize| (n as i64 - 1) * s as i64 - 2 * p as i64 + k as i64;
        match conv_transpose3d_forward(&x, &wt, None, &geo) {
            Ok(y) => {
                let e: Vec<usize> = [d, h, w].iter().map(|&n| expect(n) as usize).collect();
                prop_assert_eq!(&y.shape()[2..], &e[..]);
            }
            Err(_) => {
                // Either an extent is non-positive or the grid does not map
                // back onto the input under the forward conv.
                let bad_extent = [d, h, w].iter().any(|&n| expect(n) <= 0);
                let no_roundtrip = [d, h, w].iter().any(|&n| {
                    let o = expect(n);
                    o <= 0 || o + 2 * p as i64 - (k as i64) < 0
                        || ((o + 2 * p as i64 - k as i64) / s as i64 + 1) as usize != n
                });
                prop_assert!(bad_extent || no_roundtrip);
            }
        }
    }
}
