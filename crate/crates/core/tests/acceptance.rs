//! End-to-end acceptance suite. Each criterion runs in isolation and prints
//! one `PASS`/`FAIL` line; the test fails if any criterion fails.
//!
//! `cargo test --release --test acceptance -- --nocapture`

mod common;

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::time::Instant;

use common::{away_from_zero, grad_check, grad_check_with_step, uniform, weighted_sum};
use echosynth::engine::{
    conv3d, conv_transpose3d, instance_norm3d, ops, trilinear_upsample, Activation, ConvGeometry,
    Tape, Var,
};
use echosynth::gan3d::{
    build_generator, checkerboard_energy, gan_loss, synthesize, train_gan, write_history_csv,
    AugmentConfig, DiscriminatorConfig, GanTrainConfig, GeneratorConfig, TrainingPair,
    UpsampleMode,
};
use echosynth::metrics::{
    aggregate, dice, report_tables, volume_similarity, AggregateRow, Metric, TableLayout,
};
use echosynth::phantom::{
    generate_phantom_labels, render_pseudo_ultrasound, HeartPhantomParams, RenderParams,
};
use echosynth::pipeline::{
    decode, encode, load_volume, run_experiment, save_volume, ExperimentConfig, VolumeData,
    VolumeFileError,
};
use echosynth::postproc::{
    dwt3d, idwt3d, wavelet_denoise, ConeSpec, ThresholdRule, WaveletFamily, WaveletSpec,
};
use echosynth::segmenter::{dice_ce_loss, train_seg, SegConfig, SegSample};
use echosynth::volume::{LabelVolume, Structure, Volume, NUM_CLASSES};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn phantom_pair(seed: u64, dims: [usize; 3], spacing: [f32; 3], render_seed: u64) -> SegSample {
    let labels = generate_phantom_labels(&HeartPhantomParams::sample(seed), dims, spacing).unwrap();
    let cone = ConeSpec::default_for(dims, spacing);
    let image =
        render_pseudo_ultrasound(&labels, &cone, &RenderParams::default(), render_seed).unwrap();
    SegSample { image, labels }
}

fn fold_aggregation() -> Outcome {
    let cases = [
        (
            "M_Synthetic LV",
            [0.924, 0.930, 0.924, 0.918, 0.934],
            0.926,
            "0.926 ± 0.006",
        ),
        (
            "M_Synthetic MYO",
            [0.824, 0.822, 0.794, 0.784, 0.816],
            0.808,
            "0.808 ± 0.016",
        ),
        (
            "M_Real LV",
            [0.933, 0.932, 0.950, 0.930, 0.943],
            0.938,
            "0.938 ± 0.008",
        ),
    ];
    let mut out = Vec::new();
    for (name, folds, mean, text) in cases {
        let (m, s) = aggregate(&folds).map_err(|e| e.to_string())?;
        let got = format!("{m:.3} ± {s:.3}");
        ensure(got == text && (m - mean).abs() <= 0.0005, || {
            format!("{name}: {got} (mean {m}), expected {text}")
        })?;
        out.push(got);
    }
    Ok(out.join(", "))
}

fn metric_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let n = 16 * 16 * 16;
    for pair in 0..100 {
        let keep: f64 = rng.gen_range(0.0..1.0);
        let a: Vec<u8> = (0..n).map(|_| rng.gen_range(0..4)).collect();
        let b: Vec<u8> = a
            .iter()
            .map(|&c| {
                if rng.gen_bool(keep) {
                    c
                } else {
                    rng.gen_range(0..4)
                }
            })
            .collect();
        let la = LabelVolume::new([16; 3], [1.0; 3], a.clone()).unwrap();
        let lb = LabelVolume::new([16; 3], [1.0; 3], b.clone()).unwrap();
        for class in 1..4u8 {
            let (mut pa, mut pb, mut both) = (0i64, 0i64, 0i64);
            for i in 0..n {
                let (x, y) = (a[i] == class, b[i] == class);
                pa += x as i64;
                pb += y as i64;
                both += (x && y) as i64;
            }
            let (d, vs) = if pa + pb == 0 {
                (1.0, 1.0)
            } else {
                let s = (pa + pb) as f64;
                (2.0 * both as f64 / s, 1.0 - (pa - pb).abs() as f64 / s)
            };
            let got_d = dice(&la, &lb, class).unwrap();
            let got_vs = volume_similarity(&la, &lb, &[class]).unwrap();
            ensure(got_d == d && got_vs == vs, || {
                format!("pair {pair} class {class}: ({got_d}, {got_vs}) vs oracle ({d}, {vs})")
            })?;
            ensure(got_vs >= got_d, || format!("pair {pair}: VS < Dice"))?;
        }
    }
    Ok("100 pairs × 3 classes exact".into())
}

fn gradient_suite() -> Outcome {
    let mut worst: Vec<(&str, f64, f64)> = Vec::new();
    let mut record = |name: &'static str, err: f64, tol: f64| match worst
        .iter_mut()
        .find(|(n, _, _)| *n == name)
    {
        Some(w) => w.1 = w.1.max(err),
        None => worst.push((name, err, tol)),
    };
    for seed in 0..10u64 {
        let mut r = ChaCha8Rng::seed_from_u64(9000 + seed);

        let geo = ConvGeometry::cubic(3, 1 + seed as usize % 2, 1);
        let x = uniform(&[1, 2, 4, 4, 4], -1.0, 1.0, &mut r);
        let w = uniform(&[3, 2, 3, 3, 3], -1.0, 1.0, &mut r);
        let b = uniform(&[3], -1.0, 1.0, &mut r);
        let out_n = if seed % 2 == 0 { 4 } else { 2 };
        let wt = uniform(&[1, 3, out_n, out_n, out_n], -1.0, 1.0, &mut r);
        let build = |t: &mut Tape, v: &[Var]| {
            let y = conv3d(t, v[0], v[1], Some(v[2]), geo).unwrap();
            weighted_sum(t, y, &wt)
        };
        record(
            "conv3d",
            grad_check(&[x, w, b], &[0, 1, 2], &build, 40, &mut r),
            1e-3,
        );

        let geo = ConvGeometry::cubic(4, 2, 1);
        let x = uniform(&[1, 3, 2, 3, 2], -1.0, 1.0, &mut r);
        let w = uniform(&[3, 2, 4, 4, 4], -1.0, 1.0, &mut r);
        let b = uniform(&[2], -1.0, 1.0, &mut r);
        let wt = uniform(&[1, 2, 4, 6, 4], -1.0, 1.0, &mut r);
        let build = |t: &mut Tape, v: &[Var]| {
            let y = conv_transpose3d(t, v[0], v[1], Some(v[2]), geo).unwrap();
            weighted_sum(t, y, &wt)
        };
        record(
            "conv_transpose3d",
            grad_check(&[x, w, b], &[0, 1, 2], &build, 40, &mut r),
            1e-3,
        );

        let x = uniform(&[1, 2, 2, 3, 3], -1.0, 1.0, &mut r);
        let wt = uniform(&[1, 2, 4, 6, 6], -1.0, 1.0, &mut r);
        let build = |t: &mut Tape, v: &[Var]| {
            let y = trilinear_upsample(t, v[0], 2).unwrap();
            weighted_sum(t, y, &wt)
        };
        record("upsample", grad_check(&[x], &[0], &build, 36, &mut r), 1e-3);

        for kind in [
            Activation::Relu,
            Activation::LeakyRelu(0.2),
            Activation::Tanh,
            Activation::Sigmoid,
        ] {
            let x = away_from_zero(&[2, 3, 4], 0.05, 2.0, &mut r);
            let wt = uniform(&[2, 3, 4], -1.0, 1.0, &mut r);
            let build = |t: &mut Tape, v: &[Var]| {
                let y = ops::activation(t, v[0], kind).unwrap();
                weighted_sum(t, y, &wt)
            };
            // The gap keeps kinks outside the wider stencil; a 1e-3 step sits on
            // the f32 rounding floor for sigmoid's small slopes.
            let err = grad_check_with_step(&[x], &[0], &build, 24, 1e-2, &mut r);
            record("activations", err, 1e-3);
        }

        let x = uniform(&[2, 2, 2, 3, 2], -1.0, 1.0, &mut r);
        let g = uniform(&[2], 0.5, 1.5, &mut r);
        let b = uniform(&[2], -0.5, 0.5, &mut r);
        let wt = uniform(&[2, 2, 2, 3, 2], -1.0, 1.0, &mut r);
        let build = |t: &mut Tape, v: &[Var]| {
            let y = instance_norm3d(t, v[0], v[1], v[2], 1e-5).unwrap();
            weighted_sum(t, y, &wt)
        };
        record(
            "instance_norm",
            grad_check(&[x, g, b], &[0, 1, 2], &build, 48, &mut r),
            1e-3,
        );

        let shape = [1, 1, 2, 2, 2];
        let inputs = vec![
            uniform(&shape, -2.0, 2.0, &mut r),
            uniform(&shape, -2.0, 2.0, &mut r),
            uniform(&shape, 0.0, 1.0, &mut r),
            uniform(&shape, 0.0, 1.0, &mut r),
        ];
        let build = |t: &mut Tape, v: &[Var]| {
            let l = gan_loss(t, v[0], v[1], v[2], v[3], 10.0).unwrap();
            let both = ops::add(t, l.loss_d, l.loss_g).unwrap();
            ops::add(t, both, l.l1_term).unwrap()
        };
        record(
            "gan_loss",
            grad_check(&inputs, &[0, 1, 2, 3], &build, 8, &mut r),
            1e-2,
        );

        let target: Vec<u8> = (0..8).map(|_| r.gen_range(0..4)).collect();
        let logits = uniform(&[1, 4, 2, 2, 2], -2.0, 2.0, &mut r);
        let build = |t: &mut Tape, v: &[Var]| dice_ce_loss(t, v[0], &target).unwrap();
        record(
            "dice_ce_loss",
            grad_check(&[logits], &[0], &build, 32, &mut r),
            1e-2,
        );
    }
    let summary = worst
        .iter()
        .map(|(n, e, _)| format!("{n} {e:.1e}"))
        .collect::<Vec<_>>()
        .join(", ");
    for (name, err, tol) in &worst {
        ensure(err < tol, || {
            format!("{name}: worst relative error {err:.2e} ≥ {tol:.0e}")
        })?;
    }
    Ok(summary)
}

fn wavelet_round_trip() -> Outcome {
    let mut worst = 0.0f32;
    for family in [WaveletFamily::Haar, WaveletFamily::Sym4] {
        for levels in 1..=3 {
            let mut rng = ChaCha8Rng::seed_from_u64(levels as u64);
            let v = Volume::from_fn([32; 3], [1.0; 3], |_, _, _| rng.gen_range(-1.0..3.0)).unwrap();
            let spec = WaveletSpec::new(family, levels, ThresholdRule::None);
            let back = idwt3d(&dwt3d(&v, &spec).unwrap(), &spec).unwrap();
            let (lo, hi) = v.min_max();
            let err = v
                .data()
                .iter()
                .zip(back.data())
                .map(|(a, b)| (a - b).abs())
                .fold(0.0, f32::max)
                / (hi - lo);
            worst = worst.max(err);
            ensure(err <= 1e-5, || {
                format!("{family:?} L{levels}: {err:.2e}·range")
            })?;
        }
    }
    Ok(format!("worst {worst:.1e}·range"))
}

fn checkerboard_study() -> Outcome {
    let (dims, spacing) = ([32, 32, 16], [4.0; 3]);
    let labels = phantom_pair(4, dims, spacing, 0).labels;
    let mean_energy = |mode| {
        (0..10)
            .map(|seed| {
                let g = build_generator(
                    &GeneratorConfig {
                        upsample_mode: mode,
                        ..Default::default()
                    },
                    seed,
                )
                .unwrap();
                checkerboard_energy(&synthesize(&g, &labels).unwrap()).unwrap()
            })
            .sum::<f64>()
            / 10.0
    };
    let t = mean_energy(UpsampleMode::Transposed);
    let l = mean_energy(UpsampleMode::Trilinear);
    ensure(t >= 1.5 * l, || {
        format!("transposed {t:.4} vs trilinear {l:.4}")
    })?;

    let (dims, spacing) = ([64, 64, 16], [2.0, 2.0, 4.0]);
    let labels = generate_phantom_labels(&HeartPhantomParams::default(), dims, spacing).unwrap();
    let render = RenderParams {
        speckle_sigma: 0.0,
        ..Default::default()
    };
    let cone = ConeSpec::default_for(dims, spacing);
    let clean = render_pseudo_ultrasound(&labels, &cone, &render, 4).unwrap();
    let dirty = Volume::from_fn(dims, spacing, |x, y, z| {
        let s = if (x + y + z) % 2 == 0 { 0.2 } else { -0.2 };
        clean.get(x, y, z) + s
    })
    .unwrap();
    let out = wavelet_denoise(&dirty, &WaveletSpec::default()).unwrap();
    let before = checkerboard_energy(&dirty).unwrap();
    let after = checkerboard_energy(&out).unwrap();
    ensure(after <= 0.5 * before, || {
        format!("denoise energy {before:.4} -> {after:.4}")
    })?;
    let means = |v: &Volume| {
        let mut sum = [0.0f64; NUM_CLASSES];
        let mut n = [0usize; NUM_CLASSES];
        for (&x, &c) in v.data().iter().zip(labels.classes()) {
            sum[c as usize] += x as f64;
            n[c as usize] += 1;
        }
        std::array::from_fn::<f64, NUM_CLASSES, _>(|i| sum[i] / n[i] as f64)
    };
    let (a, b) = (means(&clean), means(&out));
    let shift = (0..NUM_CLASSES)
        .map(|c| (b[c] - a[c]).abs() / a[c])
        .fold(0.0, f64::max);
    ensure(shift < 0.05, || {
        format!("class mean shift {:.1}%", 100.0 * shift)
    })?;
    Ok(format!(
        "ratio {:.1}, energy {before:.3} -> {after:.3}, max class shift {:.1}%",
        t / l,
        100.0 * shift
    ))
}

fn gan_overfit() -> Outcome {
    let (dims, spacing) = ([32, 32, 16], [4.0; 3]);
    let data: Vec<TrainingPair> = (0..4)
        .map(|s| {
            let p = phantom_pair(s, dims, spacing, 1000 + s);
            TrainingPair {
                image: p.image,
                labels: p.labels,
            }
        })
        .collect();
    let t = GanTrainConfig {
        epochs: 50,
        lr: 2e-4,
        lambda_l1: 100.0,
        batch_size: 1,
        seed: 0,
        augment: AugmentConfig {
            probability: 0.0,
            ..Default::default()
        },
    };
    let g = GeneratorConfig::default();
    let d = DiscriminatorConfig::default();
    let (_, h1) = train_gan(&data, &g, &d, &t).map_err(|e| e.to_string())?;
    let (_, h2) = train_gan(&data, &g, &d, &t).map_err(|e| e.to_string())?;
    let l1 = h1.last().map(|e| e.l1_term).unwrap_or(f64::NAN);
    ensure(l1 < 0.08, || format!("final epoch-mean L1 {l1:.4}"))?;
    ensure(write_history_csv(&h1) == write_history_csv(&h2), || {
        "rerun history differs".into()
    })?;
    Ok(format!("200 iterations, final L1 {l1:.4}, rerun identical"))
}

fn segmentation_desk() -> Outcome {
    let samples: Vec<SegSample> = (0..20)
        .map(|i| phantom_pair(1000 + i, [32, 32, 16], [4.0; 3], i))
        .collect();
    let cfg = SegConfig {
        folds: 5,
        epochs: 60,
        lr: 0.01,
        ..Default::default()
    };
    let folds = train_seg(&samples, &cfg).map_err(|e| e.to_string())?;
    let mut rows = Vec::new();
    for s in Structure::ALL {
        let scores: Vec<f64> = folds.iter().map(|f| f.dice[&s]).collect();
        rows.push(AggregateRow::from_scores("M_Phantom", Metric::Dice(s), &scores).unwrap());
    }
    let table = report_tables(&rows, TableLayout::Validation).map_err(|e| e.to_string())?;
    report(table.trim_end());
    ensure(
        table.starts_with("Structure") && ["LV", "LA", "MYO"].iter().all(|s| table.contains(s)),
        || "table layout".into(),
    )?;
    let mean = |s: Structure| {
        rows.iter()
            .find(|r| r.metric == Metric::Dice(s))
            .unwrap()
            .mean
    };
    let (lv, myo) = (mean(Structure::Lv), mean(Structure::Myo));
    ensure(lv >= 0.85 && myo >= 0.60, || {
        format!("LV {lv:.3} (≥ 0.85), MYO {myo:.3} (≥ 0.60)")
    })?;
    Ok(format!("LV {lv:.3}, MYO {myo:.3}"))
}

fn csv_files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|x| x == "csv") {
                let rel = p.strip_prefix(dir).unwrap().display().to_string();
                out.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn end_to_end() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut bundles = Vec::new();
    for run in ["a", "b"] {
        let cfg = ExperimentConfig {
            output_dir: tmp.path().join(run),
            ..ExperimentConfig::desk()
        };
        bundles.push(run_experiment(&cfg).map_err(|e| e.to_string())?);
    }
    let counts: Vec<usize> = bundles[0].manifest_counts.iter().map(|c| c.1).collect();
    ensure(counts == [27, 27, 27, 27, 17, 27, 37], || {
        format!("manifest counts {counts:?}")
    })?;
    ensure(bundles[0].models.len() == 7, || {
        format!("{} models", bundles[0].models.len())
    })?;
    let header = bundles[0].test_table.lines().next().unwrap_or("");
    ensure(
        bundles[0]
            .models
            .iter()
            .all(|m| header.contains(m.as_str())),
        || format!("test table header `{header}`"),
    )?;
    let a = csv_files(&bundles[0].out_dir);
    let b = csv_files(&bundles[1].out_dir);
    ensure(a.len() >= 8 && a == b, || {
        let differing: Vec<&str> = a
            .iter()
            .zip(&b)
            .filter(|(x, y)| x != y)
            .map(|(x, _)| x.0.as_str())
            .collect();
        format!("{} vs {} CSVs, differing {differing:?}", a.len(), b.len())
    })?;
    Ok(format!(
        "7 models, counts {counts:?}, {} CSVs byte-identical",
        a.len()
    ))
}

fn persistence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let image = Volume::from_fn([5, 4, 3], [0.5, 0.75, 2.0], |_, _, _| rng.gen()).unwrap();
    let labels = LabelVolume::new(
        [5, 4, 3],
        [1.0; 3],
        (0..60).map(|i| (i % 4) as u8).collect(),
    )
    .unwrap();
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    for (name, data) in [
        ("image.v3d", VolumeData::Intensity(image)),
        ("labels.v3d", VolumeData::Labels(labels)),
    ] {
        let path = tmp.path().join(name);
        save_volume(&data, &path).map_err(|e| e.to_string())?;
        let back = load_volume(&path).map_err(|e| e.to_string())?;
        ensure(
            encode(&back) == std::fs::read(&path).unwrap() && back == data,
            || format!("{name} not bit-identical"),
        )?;
    }
    let good = encode(&VolumeData::Labels(
        LabelVolume::background([2, 2, 2], [1.0; 3]).unwrap(),
    ));
    let mut bad_magic = good.clone();
    bad_magic[0] = b'X';
    let mut bad_dtype = good.clone();
    bad_dtype[4] = 9;
    let truncated = &good[..good.len() - 1];
    let mut trailing = good.clone();
    trailing.push(0);
    ensure(
        matches!(decode(&bad_magic), Err(VolumeFileError::BadMagic(_))),
        || "bad magic accepted".into(),
    )?;
    ensure(
        matches!(decode(&bad_dtype), Err(VolumeFileError::UnknownDtype(9))),
        || "unknown dtype accepted".into(),
    )?;
    ensure(
        matches!(
            decode(&good[..20]),
            Err(VolumeFileError::TruncatedHeader(20))
        ),
        || "short header accepted".into(),
    )?;
    ensure(
        matches!(
            decode(truncated),
            Err(VolumeFileError::TruncatedPayload { .. })
        ),
        || "truncated payload accepted".into(),
    )?;
    ensure(
        matches!(
            decode(&trailing),
            Err(VolumeFileError::TrailingBytes { .. })
        ),
        || "trailing bytes accepted".into(),
    )?;
    Ok("round trips bit-identical, 5 corrupt fixtures rejected".into())
}

/// Writes straight to stdout so the verdicts show up without `--nocapture`.
fn report(line: &str) {
    use std::io::Write;
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
}

#[test]
fn acceptance_criteria() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("1 fold aggregation fixtures", fold_aggregation),
        ("2 metric oracle equivalence", metric_oracle),
        ("3 gradient suite", gradient_suite),
        ("4 wavelet round trip", wavelet_round_trip),
        ("5 checkerboard study", checkerboard_study),
        ("6 GAN overfit smoke", gan_overfit),
        ("7 segmentation desk scale", segmentation_desk),
        ("8 end-to-end determinism", end_to_end),
        ("9 persistence", persistence),
    ];
    let mut failed = Vec::new();
    for (name, run) in criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(run)).unwrap_or_else(|p| {
            Err(p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(detail) => report(&format!("PASS [{name}] {detail} ({secs:.1}s)")),
            Err(detail) => {
                report(&format!("FAIL [{name}] {detail} ({secs:.1}s)"));
                failed.push(name);
            }
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
