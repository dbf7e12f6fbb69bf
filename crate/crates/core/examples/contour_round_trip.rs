//! Slices a phantom into per-structure contours, serializes them and
//! rasterizes them back, reporting per-structure overlap.
//!
//! `cargo run --release --example contour_round_trip`

use echosynth::metrics::dice;
use echosynth::phantom::{
    contours_to_label_volume, extract_contours, generate_phantom_labels, ContourSet,
    HeartPhantomParams,
};
use echosynth::volume::Structure;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (dims, spacing) = ([64, 64, 24], [2.0, 2.0, 4.0]);
    let labels = generate_phantom_labels(&HeartPhantomParams::sample(11), dims, spacing)?;
    let contours = extract_contours(&labels);
    let json = contours.to_json();
    println!("{} contours, {} bytes of JSON", contours.len(), json.len());

    let back = ContourSet::from_json(&json)?;
    let samples = back
        .contours()
        .iter()
        .map(|c| c.points.len())
        .max()
        .unwrap_or(0)
        .max(64);
    let rebuilt = contours_to_label_volume(&back, dims, spacing, samples)?;
    for s in Structure::ALL {
        println!("{s:>4} Dice {:.3}", dice(&rebuilt, &labels, s.class_id())?);
    }
    Ok(())
}
