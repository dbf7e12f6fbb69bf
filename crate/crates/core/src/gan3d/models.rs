use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DiscriminatorConfig, GanError, GeneratorConfig, UpsampleMode};
use crate::engine::nn::{Conv3d, ConvTranspose3d, InstanceNorm3d};
use crate::engine::ops::{activation, affine, concat_channels};
use crate::engine::{trilinear_upsample, Activation, ConvGeometry, ParamStore, Tape, Var};

const LEAK: f32 = 0.2;

fn channels(base: usize, level: usize) -> usize {
    base * (1usize << level.min(3))
}

#[derive(Debug, Clone, PartialEq)]
enum Up {
    Transposed(ConvTranspose3d),
    Trilinear(Conv3d),
}

impl Up {
    fn new(
        store: &mut ParamStore,
        name: &str,
        cin: usize,
        cout: usize,
        mode: UpsampleMode,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        match mode {
            UpsampleMode::Transposed => Up::Transposed(ConvTranspose3d::new(
                store,
                name,
                cin,
                cout,
                ConvGeometry::cubic(4, 2, 1),
                rng,
            )),
            UpsampleMode::Trilinear => Up::Trilinear(Conv3d::new(
                store,
                name,
                cin,
                cout,
                ConvGeometry::cubic(3, 1, 1),
                rng,
            )),
        }
    }

    fn forward(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Result<Var, GanError> {
        Ok(match self {
            Up::Transposed(c) => c.forward(tape, vars, x)?,
            Up::Trilinear(c) => {
                let u = trilinear_upsample(tape, x, 2)?;
                c.forward(tape, vars, u)?
            }
        })
    }
}

/// 3D U-Net generator mapping a one-channel label map to a one-channel
/// image in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    config: GeneratorConfig,
    params: ParamStore,
    encoder: Vec<(Conv3d, Option<InstanceNorm3d>)>,
    decoder: Vec<(Up, InstanceNorm3d)>,
    head: Up,
}

/// Builds a generator with weights drawn from `seed`.
pub fn build_generator(config: &GeneratorConfig, seed: u64) -> Result<Generator, GanError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rng = &mut rng;
    let mut store = ParamStore::new();
    let down = ConvGeometry::cubic(4, 2, 1);
    let levels = config.levels;
    let base = config.base_channels;

    let mut encoder = Vec::with_capacity(levels);
    for i in 0..levels {
        let cin = if i == 0 { 1 } else { channels(base, i - 1) };
        let name = format!("enc{i}");
        let conv = Conv3d::new(&mut store, &name, cin, channels(base, i), down, rng);
        let norm = (i > 0)
            .then(|| InstanceNorm3d::new(&mut store, &format!("{name}.norm"), channels(base, i)));
        encoder.push((conv, norm));
    }

    let mut decoder = Vec::with_capacity(levels.saturating_sub(1));
    let mut cin = channels(base, levels - 1);
    for i in (1..levels).rev() {
        let cout = channels(base, i - 1);
        let name = format!("dec{i}");
        let up = Up::new(&mut store, &name, cin, cout, config.upsample_mode, rng);
        let norm = InstanceNorm3d::new(&mut store, &format!("{name}.norm"), cout);
        decoder.push((up, norm));
        cin = 2 * cout;
    }
    let head = Up::new(&mut store, "head", cin, 1, config.upsample_mode, rng);
    Ok(Generator {
        config: *config,
        params: store,
        encoder,
        decoder,
        head,
    })
}

/// Checks `[N, C, D, H, W]` spatial extents against a divisor; the error
/// names the volume axis (x = W, y = H, z = D).
pub(crate) fn check_divisible(shape: &[usize], factor: usize) -> Result<(), GanError> {
    if shape.len() != 5 {
        return Err(GanError::InvalidConfig(format!(
            "expected a [N, C, D, H, W] input, got {shape:?}"
        )));
    }
    for (axis, extent) in [('x', shape[4]), ('y', shape[3]), ('z', shape[2])] {
        if extent % factor != 0 {
            return Err(GanError::Indivisible {
                axis,
                extent,
                factor,
            });
        }
    }
    Ok(())
}

impl Generator {
    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.numel()
    }

    /// Forward pass on `[N, 1, D, H, W]` label maps using `vars` from
    /// `self.params().bind(..)`.
    pub fn forward(&self, tape: &mut Tape, vars: &[Var], x: Var) -> Result<Var, GanError> {
        check_divisible(tape.value(x).shape(), self.config.divisor())?;
        let mut skips = Vec::with_capacity(self.encoder.len());
        let mut h = x;
        for (conv, norm) in &self.encoder {
            h = conv.forward(tape, vars, h)?;
            if let Some(norm) = norm {
                h = norm.forward(tape, vars, h)?;
            }
            h = activation(tape, h, Activation::LeakyRelu(LEAK))?;
            skips.push(h);
        }
        skips.pop();
        for (up, norm) in &self.decoder {
            h = up.forward(tape, vars, h)?;
            h = norm.forward(tape, vars, h)?;
            h = activation(tape, h, Activation::Relu)?;
            let skip = skips.pop().expect("one skip per decoder stage");
            h = concat_channels(tape, h, skip)?;
        }
        h = self.head.forward(tape, vars, h)?;
        h = activation(tape, h, Activation::Tanh)?;
        Ok(affine(tape, h, 0.5, 0.5))
    }
}

/// PatchGAN discriminator over the channel concatenation of a label map
/// and an image; emits a grid of logits.
#[derive(Debug, Clone, PartialEq)]
pub struct Discriminator {
    config: DiscriminatorConfig,
    params: ParamStore,
    layers: Vec<(Conv3d, Option<InstanceNorm3d>)>,
    head: Conv3d,
}

pub fn build_discriminator(
    config: &DiscriminatorConfig,
    seed: u64,
) -> Result<Discriminator, GanError> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rng = &mut rng;
    let mut store = ParamStore::new();
    let down = ConvGeometry::cubic(4, 2, 1);
    let mut layers = Vec::with_capacity(config.layers);
    let mut cin = 2;
    for i in 0..config.layers {
        let cout = channels(config.base_channels, i);
        let name = format!("d{i}");
        let conv = Conv3d::new(&mut store, &name, cin, cout, down, rng);
        let norm = (i > 0).then(|| InstanceNorm3d::new(&mut store, &format!("{name}.norm"), cout));
        layers.push((conv, norm));
        cin = cout;
    }
    let head = Conv3d::new(
        &mut store,
        "d.head",
        cin,
        1,
        ConvGeometry::cubic(3, 1, 1),
        rng,
    );
    Ok(Discriminator {
        config: *config,
        params: store,
        layers,
        head,
    })
}

impl Discriminator {
    pub fn config(&self) -> &DiscriminatorConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// Spatial extents `[D, H, W]` of the logit grid for an input of
    /// extents `[D, H, W]`.
    pub fn output_extents(&self, input: [usize; 3]) -> Result<[usize; 3], GanError> {
        let mut e = input;
        for (conv, _) in &self.layers {
            e = conv.geometry.conv_output(e)?;
        }
        Ok(self.head.geometry.conv_output(e)?)
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        vars: &[Var],
        labels: Var,
        image: Var,
    ) -> Result<Var, GanError> {
        let mut h = concat_channels(tape, labels, image)?;
        for (conv, norm) in &self.layers {
            h = conv.forward(tape, vars, h)?;
            if let Some(norm) = norm {
                h = norm.forward(tape, vars, h)?;
            }
            h = activation(tape, h, Activation::LeakyRelu(LEAK))?;
        }
        Ok(self.head.forward(tape, vars, h)?)
    }
}
