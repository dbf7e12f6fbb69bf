use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::SegError;
use crate::engine::nn::{Conv3d, InstanceNorm3d};
use crate::engine::ops::{activation, concat_channels};
use crate::engine::{trilinear_upsample, Activation, ConvGeometry, ParamStore, Tape, Var};
use crate::volume::NUM_CLASSES;

const LEAK: f32 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct UNetConfig {
    /// Resolution levels; extents must be divisible by `2^(levels − 1)`.
    pub levels: usize,
    pub base_channels: usize,
}

impl Default for UNetConfig {
    fn default() -> Self {
        Self {
            levels: 3,
            base_channels: 8,
        }
    }
}

impl UNetConfig {
    pub fn validate(&self) -> Result<(), SegError> {
        if !(1..=5).contains(&self.levels) || self.base_channels == 0 {
            return Err(SegError::InvalidConfig(format!(
                "need 1..=5 levels and >= 1 base channel, got {} / {}",
                self.levels, self.base_channels
            )));
        }
        Ok(())
    }

    pub fn divisor(&self) -> usize {
        1 << (self.levels - 1)
    }
}

/// Conv, instance norm, leaky ReLU.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Block {
    conv: Conv3d,
    norm: InstanceNorm3d,
}

impl Block {
    fn new(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        stride: usize,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let conv = Conv3d::new(
            store,
            name,
            cin,
            cout,
            ConvGeometry::cubic(3, stride, 1),
            rng,
        );
        let norm = InstanceNorm3d::new(store, &format!("{name}.norm"), cout);
        Self { conv, norm }
    }

    fn forward(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Result<Var, SegError> {
        let h = self.conv.forward(tape, vars, x)?;
        let h = self.norm.forward(tape, vars, h)?;
        Ok(activation(tape, h, Activation::LeakyRelu(LEAK))?)
    }
}

/// Encoder stages of two blocks (the first strided from level 1 on),
/// decoder stages of trilinear ×2, a block, skip concatenation and a
/// second block, then a 1×1×1 head to four class logits.
#[derive(Debug, Clone, PartialEq)]
pub struct UNet {
    config: UNetConfig,
    params: ParamStore,
    encoder: Vec<[Block; 2]>,
    decoder: Vec<[Block; 2]>,
    head: Conv3d,
}

fn kaiming_rescale(store: &mut ParamStore) {
    // He-style scale for the leaky-ReLU stack; the shared initializer is
    // tuned for the GAN.
    for p in store.iter_mut() {
        if p.name.ends_with(".weight") {
            let shape = p.tensor.shape().to_vec();
            let fan_in: usize = shape[1..].iter().product();
            let target = (2.0 / fan_in as f32).sqrt();
            let scale = target / crate::engine::nn::INIT_STD;
            p.tensor.data_mut().iter_mut().for_each(|v| *v *= scale);
        }
    }
}

pub fn build_unet(config: &UNetConfig, seed: u64) -> Result<UNet, SegError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rng = &mut rng;
    let mut store = ParamStore::new();
    let ch = |i: usize| config.base_channels << i;

    let mut encoder = Vec::with_capacity(config.levels);
    for i in 0..config.levels {
        let (cin, stride) = if i == 0 { (1, 1) } else { (ch(i - 1), 2) };
        let a = Block::new(&mut store, &format!("enc{i}.a"), cin, ch(i), stride, rng);
        let b = Block::new(&mut store, &format!("enc{i}.b"), ch(i), ch(i), 1, rng);
        encoder.push([a, b]);
    }
    let mut decoder = Vec::with_capacity(config.levels - 1);
    for i in (0..config.levels - 1).rev() {
        let a = Block::new(&mut store, &format!("dec{i}.a"), ch(i + 1), ch(i), 1, rng);
        let b = Block::new(&mut store, &format!("dec{i}.b"), 2 * ch(i), ch(i), 1, rng);
        decoder.push([a, b]);
    }
    let head = Conv3d::new(
        &mut store,
        "head",
        ch(0),
        NUM_CLASSES,
        ConvGeometry::cubic(1, 1, 0),
        rng,
    );
    kaiming_rescale(&mut store);
    Ok(UNet {
        config: *config,
        params: store,
        encoder,
        decoder,
        head,
    })
}

pub(super) fn check_divisible(shape: &[usize], factor: usize) -> Result<(), SegError> {
    if shape.len() != 5 {
        return Err(SegError::Shape(format!(
            "expected a [N, C, D, H, W] input, got {shape:?}"
        )));
    }
    for (axis, extent) in [('x', shape[4]), ('y', shape[3]), ('z', shape[2])] {
        if extent % factor != 0 {
            return Err(SegError::Indivisible {
                axis,
                extent,
                factor,
            });
        }
    }
    Ok(())
}

impl UNet {
    pub fn config(&self) -> &UNetConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// `[N, 1, D, H, W]` image to `[N, 4, D, H, W]` logits.
    pub fn forward(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Result<Var, SegError> {
        check_divisible(tape.value(x).shape(), self.config.divisor())?;
        let mut skips = Vec::with_capacity(self.encoder.len());
        let mut h = x;
        for [a, b] in &self.encoder {
            h = a.forward(tape, vars, h)?;
            h = b.forward(tape, vars, h)?;
            skips.push(h);
        }
        skips.pop();
        for [a, b] in &self.decoder {
            h = trilinear_upsample(tape, h, 2)?;
            h = a.forward(tape, vars, h)?;
            let skip = skips.pop().expect("one skip per decoder stage");
            h = concat_channels(tape, h, skip)?;
            h = b.forward(tape, vars, h)?;
        }
        Ok(self.head.forward(tape, vars, h)?)
    }
}
