//! Scores a perturbed segmentation against its reference and formats fold
//! aggregates as a comparison table.
//!
//! `cargo run --release --example metrics_report`

use echosynth::metrics::{report_tables, AggregateRow, Metric, StructureScores, TableLayout};
use echosynth::phantom::{generate_phantom_labels, HeartPhantomParams};
use echosynth::volume::{LabelVolume, Structure};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let gt = generate_phantom_labels(&HeartPhantomParams::sample(1), [48, 48, 24], [3.0; 3])?;
    // Shift the prediction by one voxel along x.
    let [nx, ny, nz] = gt.dims();
    let mut shifted = Vec::with_capacity(gt.len());
    for z in 0..nz {
        for y in 0..ny {
            for x in 0..nx {
                shifted.push(if x == 0 { 0 } else { gt.get(x - 1, y, z) });
            }
        }
    }
    let pred = LabelVolume::new(gt.dims(), gt.spacing(), shifted)?;
    let scores = StructureScores::compute("shifted", &pred, &gt)?;
    for (s, d) in &scores.dice {
        println!("{s:>4} Dice {d:.3}");
    }
    println!("heart VS {:.3}", scores.vs.unwrap_or(f64::NAN));

    let folds = [
        ("M_A", Structure::Lv, [0.924, 0.930, 0.924, 0.918, 0.934]),
        ("M_A", Structure::Myo, [0.824, 0.822, 0.794, 0.784, 0.816]),
        ("M_B", Structure::Lv, [0.933, 0.932, 0.950, 0.930, 0.943]),
        ("M_B", Structure::Myo, [0.801, 0.790, 0.812, 0.799, 0.805]),
    ];
    let rows = folds
        .iter()
        .map(|(m, s, v)| AggregateRow::from_scores(*m, Metric::Dice(*s), v))
        .collect::<Result<Vec<_>, _>>()?;
    print!("\n{}", report_tables(&rows, TableLayout::Validation)?);
    Ok(())
}
