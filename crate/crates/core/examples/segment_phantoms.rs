//! Cross-validated U-Net segmentation of oracle-rendered phantoms.
//!
//! `cargo run --release --example segment_phantoms -- [volumes] [epochs]`

use std::time::Instant;

use echosynth::metrics::{report_tables, AggregateRow, Metric, TableLayout};
use echosynth::phantom::{
    generate_phantom_labels, render_pseudo_ultrasound, HeartPhantomParams, RenderParams,
};
use echosynth::postproc::ConeSpec;
use echosynth::segmenter::{best_fold, train_seg, SegConfig, SegSample};
use echosynth::volume::Structure;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::init();
    let mut args = std::env::args().skip(1);
    let n: u64 = args.next().map(|a| a.parse()).transpose()?.unwrap_or(20);
    let epochs: usize = args.next().map(|a| a.parse()).transpose()?.unwrap_or(60);

    let (dims, spacing) = ([32, 32, 16], [4.0; 3]);
    let cone = ConeSpec::default_for(dims, spacing);
    let samples = (0..n)
        .map(|seed| {
            let labels =
                generate_phantom_labels(&HeartPhantomParams::sample(1000 + seed), dims, spacing)?;
            let image = render_pseudo_ultrasound(&labels, &cone, &RenderParams::default(), seed)?;
            Ok(SegSample { image, labels })
        })
        .collect::<Result<Vec<_>, echosynth::phantom::PhantomError>>()?;

    let cfg = SegConfig {
        epochs,
        ..Default::default()
    };
    let start = Instant::now();
    let folds = train_seg(&samples, &cfg)?;
    println!("trained {} folds in {:.1?}", folds.len(), start.elapsed());

    let mut rows = Vec::new();
    for s in Structure::ALL {
        let scores: Vec<f64> = folds.iter().map(|f| f.dice[&s]).collect();
        rows.push(AggregateRow::from_scores(
            "M_Phantom",
            Metric::Dice(s),
            &scores,
        )?);
    }
    print!("{}", report_tables(&rows, TableLayout::Validation)?);
    if let Some(b) = best_fold(&folds) {
        println!("best fold: {}", b + 1);
    }
    Ok(())
}
