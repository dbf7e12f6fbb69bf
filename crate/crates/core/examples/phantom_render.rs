//! Samples a heart phantom, renders it as pseudo-ultrasound and writes
//! mid-slice previews.
//!
//! `cargo run --release --example phantom_render -- [seed] [out_dir]`

use std::path::PathBuf;

use echosynth::phantom::{
    generate_phantom_labels, render_pseudo_ultrasound, HeartPhantomParams, RenderParams,
};
use echosynth::pipeline::write_pgm_mid_slice;
use echosynth::postproc::ConeSpec;
use echosynth::volume::{Structure, Volume};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let seed: u64 = args.next().map(|a| a.parse()).transpose()?.unwrap_or(3);
    let out = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| std::env::temp_dir().join("echosynth_phantom"));
    std::fs::create_dir_all(&out)?;

    let (dims, spacing) = ([64, 64, 32], [2.0, 2.0, 3.0]);
    let params = HeartPhantomParams::sample(seed);
    println!("{}", serde_json::to_string_pretty(&params)?);
    let labels = generate_phantom_labels(&params, dims, spacing)?;
    let cone = ConeSpec::default_for(dims, spacing);
    let image = render_pseudo_ultrasound(&labels, &cone, &RenderParams::default(), seed)?;

    let counts = labels.class_counts();
    let voxel_ml = spacing.iter().map(|&s| s as f64).product::<f64>() / 1000.0;
    for s in Structure::ALL {
        let id = s.class_id() as usize;
        let mean = image
            .data()
            .iter()
            .zip(labels.classes())
            .filter(|(_, &c)| c as usize == id)
            .map(|(&v, _)| v as f64)
            .sum::<f64>()
            / counts[id].max(1) as f64;
        println!(
            "{s:>4}: {:6} voxels  {:6.1} ml  mean intensity {mean:.3}",
            counts[id],
            counts[id] as f64 * voxel_ml
        );
    }

    let label_img = Volume::new(
        dims,
        spacing,
        labels.classes().iter().map(|&c| c as f32 / 3.0).collect(),
    )?;
    write_pgm_mid_slice(&image, &out.join("image.pgm"))?;
    write_pgm_mid_slice(&label_img, &out.join("labels.pgm"))?;
    println!("previews in {}", out.display());
    Ok(())
}
