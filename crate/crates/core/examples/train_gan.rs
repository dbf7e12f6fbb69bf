//! Trains the label-to-image GAN on a few rendered phantoms and synthesizes
//! an image for an unseen label map.
//!
//! `cargo run --release --example train_gan -- [epochs]`

use echosynth::gan3d::{
    checkerboard_energy, synthesize, train_gan, AugmentConfig, DiscriminatorConfig, GanTrainConfig,
    GeneratorConfig, TrainingPair, UpsampleMode,
};
use echosynth::phantom::{
    generate_phantom_labels, render_pseudo_ultrasound, HeartPhantomParams, RenderParams,
};
use echosynth::postproc::ConeSpec;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    env_logger::init();
    let epochs: usize = std::env::args()
        .nth(1)
        .map(|a| a.parse())
        .transpose()?
        .unwrap_or(30);
    let (dims, spacing) = ([32, 32, 16], [4.0; 3]);
    let cone = ConeSpec::default_for(dims, spacing);
    let pair = |seed: u64| -> Result<TrainingPair, echosynth::phantom::PhantomError> {
        let labels = generate_phantom_labels(&HeartPhantomParams::sample(seed), dims, spacing)?;
        let image = render_pseudo_ultrasound(&labels, &cone, &RenderParams::default(), seed)?;
        Ok(TrainingPair { image, labels })
    };
    let data = (0..4).map(pair).collect::<Result<Vec<_>, _>>()?;

    let generator = GeneratorConfig {
        upsample_mode: UpsampleMode::Trilinear,
        ..Default::default()
    };
    let cfg = GanTrainConfig {
        epochs,
        augment: AugmentConfig::default(),
        ..Default::default()
    };
    let (model, history) = train_gan(&data, &generator, &DiscriminatorConfig::default(), &cfg)?;
    for e in history.iter().step_by((epochs / 10).max(1)) {
        println!(
            "epoch {:3}  D {:.3}  G {:.3}  L1 {:.4}",
            e.epoch, e.loss_d, e.loss_g, e.l1_term
        );
    }

    let unseen = pair(99)?;
    let fake = synthesize(&model.generator, &unseen.labels)?;
    let l1 = fake
        .data()
        .iter()
        .zip(unseen.image.data())
        .map(|(a, b)| (a - b).abs() as f64)
        .sum::<f64>()
        / fake.len() as f64;
    println!("unseen labels: L1 to oracle render {l1:.4}");
    println!(
        "checkerboard energy: synthetic {:.4}, oracle {:.4}",
        checkerboard_energy(&fake)?,
        checkerboard_energy(&unseen.image)?
    );
    Ok(())
}
