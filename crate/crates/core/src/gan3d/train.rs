use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{
    augment_pair, build_discriminator, build_generator, discriminator_loss, generator_loss,
    models::check_divisible, Discriminator, DiscriminatorConfig, GanError, GanTrainConfig,
    Generator, GeneratorConfig,
};
use crate::checkpoint::{CheckpointError, ModelCheckpoint};
use crate::engine::{Adam, Param, ParamStore, Tape, Tensor};
use crate::volume::{LabelVolume, Volume, VolumeError};

const ADAM_BETA1: f32 = 0.5;
const ADAM_BETA2: f32 = 0.999;

/// One paired training example.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingPair {
    pub image: Volume,
    pub labels: LabelVolume,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub loss_d: f64,
    pub loss_g: f64,
    pub l1_term: f64,
}

/// Trained generator and discriminator.
#[derive(Debug, Clone, PartialEq)]
pub struct GanModel {
    pub generator: Generator,
    pub discriminator: Discriminator,
}

const GEN_PREFIX: &str = "generator.";
const DISC_PREFIX: &str = "discriminator.";

fn prefixed<'a>(store: &'a ParamStore, prefix: &str) -> impl Iterator<Item = Param> + 'a {
    let prefix = prefix.to_string();
    store.iter().map(move |p| Param {
        name: format!("{prefix}{}", p.name),
        tensor: Tensor::new(p.tensor.shape().to_vec(), p.tensor.data().to_vec())
            .expect("valid tensor"),
    })
}

fn strip(params: &[Param], prefix: &str) -> Vec<Param> {
    params
        .iter()
        .filter_map(|p| {
            p.name.strip_prefix(prefix).map(|n| Param {
                name: n.to_string(),
                tensor: p.tensor.clone(),
            })
        })
        .collect()
}

impl GanModel {
    pub fn to_checkpoint(&self) -> ModelCheckpoint {
        let config = serde_json::json!({
            "kind": "gan3d",
            "generator": self.generator.config(),
            "discriminator": self.discriminator.config(),
        });
        let params = prefixed(self.generator.params(), GEN_PREFIX)
            .chain(prefixed(self.discriminator.params(), DISC_PREFIX))
            .collect();
        ModelCheckpoint { config, params }
    }

    pub fn from_checkpoint(ckpt: &ModelCheckpoint) -> Result<Self, GanError> {
        let bad = |m: String| GanError::Checkpoint(CheckpointError::Config(m));
        if ckpt.config.get("kind").and_then(|k| k.as_str()) != Some("gan3d") {
            return Err(bad("not a gan3d checkpoint".into()));
        }
        let gcfg: GeneratorConfig = serde_json::from_value(ckpt.config["generator"].clone())
            .map_err(|e| bad(e.to_string()))?;
        let dcfg: DiscriminatorConfig =
            serde_json::from_value(ckpt.config["discriminator"].clone())
                .map_err(|e| bad(e.to_string()))?;
        let mut generator = build_generator(&gcfg, 0)?;
        generator
            .params_mut()
            .assign(&strip(&ckpt.params, GEN_PREFIX))?;
        let mut discriminator = build_discriminator(&dcfg, 0)?;
        discriminator
            .params_mut()
            .assign(&strip(&ckpt.params, DISC_PREFIX))?;
        Ok(Self {
            generator,
            discriminator,
        })
    }
}

fn validate_pairs(data: &[TrainingPair], divisor: usize) -> Result<[usize; 3], GanError> {
    let first = data.first().ok_or(GanError::EmptyDataset)?;
    let dims = first.image.dims();
    for pair in data {
        if pair.image.dims() != dims {
            return Err(VolumeError::Mismatch(dims, pair.image.dims()).into());
        }
        if pair.labels.dims() != dims {
            return Err(VolumeError::Mismatch(dims, pair.labels.dims()).into());
        }
        if pair.image.data().iter().any(|v| !v.is_finite()) {
            return Err(GanError::NonFiniteInput("training image".into()));
        }
    }
    let [nx, ny, nz] = dims;
    check_divisible(&[1, 1, nz, ny, nx], divisor)?;
    Ok(dims)
}

/// Alternating discriminator / generator Adam updates over seed-shuffled
/// mini-batches. The discriminator sees the detached generator output;
/// the generator step uses the freshly updated discriminator.
pub fn train_gan(
    data: &[TrainingPair],
    gcfg: &GeneratorConfig,
    dcfg: &DiscriminatorConfig,
    tcfg: &GanTrainConfig,
) -> Result<(GanModel, Vec<EpochStats>), GanError> {
    tcfg.validate()?;
    gcfg.validate()?;
    dcfg.validate()?;
    validate_pairs(data, gcfg.divisor())?;

    let mut master = ChaCha8Rng::seed_from_u64(tcfg.seed);
    let mut generator = build_generator(gcfg, master.gen())?;
    let mut discriminator = build_discriminator(dcfg, master.gen())?;
    let mut rng = ChaCha8Rng::seed_from_u64(master.gen());
    let mut adam_g = Adam::new(generator.params(), tcfg.lr, ADAM_BETA1, ADAM_BETA2)?;
    let mut adam_d = Adam::new(discriminator.params(), tcfg.lr, ADAM_BETA1, ADAM_BETA2)?;

    let mut history = Vec::with_capacity(tcfg.epochs);
    let mut order: Vec<usize> = (0..data.len()).collect();
    for epoch in 0..tcfg.epochs {
        order.shuffle(&mut rng);
        let (mut sum_d, mut sum_g, mut sum_l1, mut batches) = (0.0, 0.0, 0.0, 0usize);
        for chunk in order.chunks(tcfg.batch_size) {
            let mut images = Vec::with_capacity(chunk.len());
            let mut maps = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let (img, lab) =
                    augment_pair(&data[i].image, &data[i].labels, &tcfg.augment, &mut rng)?;
                images.push(img);
                maps.push(lab.to_intensity());
            }
            let image_t = Volume::batch_tensor(&images.iter().collect::<Vec<_>>())?;
            let label_t = Volume::batch_tensor(&maps.iter().collect::<Vec<_>>())?;

            let mut tape_g = Tape::new();
            let gv = generator.params().bind(&mut tape_g, true);
            let x = tape_g.constant(label_t.clone());
            let y = tape_g.constant(image_t.clone());
            let fake = generator.forward(&mut tape_g, &gv, x)?;
            let fake_detached = tape_g.value(fake).clone();

            let mut tape_d = Tape::new();
            let dv = discriminator.params().bind(&mut tape_d, true);
            let xd = tape_d.constant(label_t);
            let yd = tape_d.constant(image_t);
            let fd = tape_d.constant(fake_detached);
            let d_real = discriminator.forward(&mut tape_d, &dv, xd, yd)?;
            let d_fake = discriminator.forward(&mut tape_d, &dv, xd, fd)?;
            let loss_d = discriminator_loss(&mut tape_d, d_real, d_fake)
                .map_err(|_| GanError::NonFiniteLoss { epoch })?;
            let ld = tape_d.value(loss_d).data()[0];
            if !ld.is_finite() {
                return Err(GanError::NonFiniteLoss { epoch });
            }
            let mut grads = tape_d.backward(loss_d)?;
            discriminator.params_mut().absorb_grads(&dv, &mut grads)?;
            adam_d.step(discriminator.params_mut())?;

            let dv_frozen = discriminator.params().bind(&mut tape_g, false);
            let d_fake_g = discriminator.forward(&mut tape_g, &dv_frozen, x, fake)?;
            let (loss_g, l1) = generator_loss(&mut tape_g, d_fake_g, fake, y, tcfg.lambda_l1)
                .map_err(|_| GanError::NonFiniteLoss { epoch })?;
            let lg = tape_g.value(loss_g).data()[0];
            let l1v = tape_g.value(l1).data()[0];
            if !lg.is_finite() || !l1v.is_finite() {
                return Err(GanError::NonFiniteLoss { epoch });
            }
            let mut grads = tape_g.backward(loss_g)?;
            generator.params_mut().absorb_grads(&gv, &mut grads)?;
            adam_g.step(generator.params_mut())?;

            sum_d += ld as f64;
            sum_g += lg as f64;
            sum_l1 += l1v as f64;
            batches += 1;
        }
        let n = batches as f64;
        let stats = EpochStats {
            epoch,
            loss_d: sum_d / n,
            loss_g: sum_g / n,
            l1_term: sum_l1 / n,
        };
        log::info!(
            "gan epoch {epoch}: loss_D {:.4} loss_G {:.4} l1 {:.4}",
            stats.loss_d,
            stats.loss_g,
            stats.l1_term
        );
        history.push(stats);
    }
    Ok((
        GanModel {
            generator,
            discriminator,
        },
        history,
    ))
}

/// Runs the generator on a label volume; the output has the label
/// volume's grid and lies in [0, 1].
pub fn synthesize(generator: &Generator, labels: &LabelVolume) -> Result<Volume, GanError> {
    let input = labels.to_intensity();
    let [nx, ny, nz] = input.dims();
    check_divisible(&[1, 1, nz, ny, nx], generator.config().divisor())?;
    let mut tape = Tape::new();
    let vars = generator.params().bind(&mut tape, false);
    let x = tape.constant(input.to_tensor());
    let out = generator.forward(&mut tape, &vars, x)?;
    let data = tape
        .value(out)
        .data()
        .iter()
        .map(|v| v.clamp(0.0, 1.0))
        .collect();
    Ok(Volume::new(labels.dims(), labels.spacing(), data)?)
}

/// `epoch,loss_D,loss_G,l1_term` rows, shortest round-trip float text.
pub fn write_history_csv(history: &[EpochStats]) -> String {
    let mut out = String::from("epoch,loss_D,loss_G,l1_term\n");
    for h in history {
        out.push_str(&format!(
            "{},{},{},{}\n",
            h.epoch, h.loss_d, h.loss_g, h.l1_term
        ));
    }
    out
}
