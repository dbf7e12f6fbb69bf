//! Writes label and intensity volumes as V3D files, dumps the header and
//! reads them back.
//!
//! `cargo run --release --example volume_io`

use echosynth::phantom::{
    generate_phantom_labels, render_pseudo_ultrasound, HeartPhantomParams, RenderParams,
};
use echosynth::pipeline::{load_volume, save_volume, VolumeData, HEADER_LEN};
use echosynth::postproc::ConeSpec;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join("echosynth_v3d");
    let (dims, spacing) = ([32, 32, 16], [4.0; 3]);
    let labels = generate_phantom_labels(&HeartPhantomParams::default(), dims, spacing)?;
    let image = render_pseudo_ultrasound(
        &labels,
        &ConeSpec::default_for(dims, spacing),
        &RenderParams::default(),
        0,
    )?;
    for (name, data) in [
        ("labels.v3d", VolumeData::Labels(labels)),
        ("image.v3d", VolumeData::Intensity(image)),
    ] {
        let path = dir.join(name);
        save_volume(&data, &path)?;
        let bytes = std::fs::read(&path)?;
        let hex: Vec<String> = bytes[..HEADER_LEN]
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect();
        println!("{name}: {} bytes, header {}", bytes.len(), hex.join(" "));
        let back = load_volume(&path)?;
        println!("  dims {:?}, identical {}", back.dims(), back == data);
    }
    Ok(())
}
