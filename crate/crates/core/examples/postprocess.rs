//! Applies each combination of wavelet denoising and cone re-masking to a
//! noisy rendered phantom.
//!
//! `cargo run --release --example postprocess`

use echosynth::gan3d::checkerboard_energy;
use echosynth::phantom::{
    generate_phantom_labels, render_pseudo_ultrasound, HeartPhantomParams, RenderParams,
};
use echosynth::postproc::{postprocess, ConeSpec, PostprocFlags, WaveletSpec};
use echosynth::volume::Volume;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let (dims, spacing) = ([64, 64, 16], [2.0, 2.0, 4.0]);
    let labels = generate_phantom_labels(&HeartPhantomParams::default(), dims, spacing)?;
    let cone = ConeSpec::default_for(dims, spacing);
    let clean = render_pseudo_ultrasound(&labels, &cone, &RenderParams::default(), 1)?;
    // Stand-in for generator output: checkerboard ripple plus haze outside
    // the sector.
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let dirty = Volume::from_fn(dims, spacing, |x, y, z| {
        let ripple = if (x + y + z) % 2 == 0 { 0.1 } else { -0.1 };
        (clean.get(x, y, z) + ripple + rng.gen_range(0.0..0.05)).clamp(0.0, 1.0)
    })?;

    let wavelet = WaveletSpec::default();
    println!("{:<16} {:>12} {:>12}", "flags", "checker", "mean abs err");
    for (wv, cn) in [(false, false), (true, false), (false, true), (true, true)] {
        let flags = PostprocFlags {
            wavelet: wv,
            cone: cn,
        };
        let out = postprocess(&dirty, flags, &wavelet, &cone)?;
        let err = out
            .data()
            .iter()
            .zip(clean.data())
            .map(|(a, b)| (a - b).abs() as f64)
            .sum::<f64>()
            / out.len() as f64;
        println!(
            "{:<16} {:>12.4} {:>12.4}",
            format!("wavelet={} cone={}", wv as u8, cn as u8),
            checkerboard_energy(&out)?,
            err
        );
    }
    Ok(())
}
