//! Fits a single 3×3×3 convolution to a fixed random target kernel with the
//! tape autograd and Adam.
//!
//! `cargo run --release --example autograd_fit`

use echosynth::engine::nn::Conv3d;
use echosynth::engine::{conv3d_forward, ops, Adam, ConvGeometry, ParamStore, Tape, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let geo = ConvGeometry::cubic(3, 1, 1);
    let x = Tensor::randn(&[1, 2, 8, 8, 8], 1.0, &mut rng);
    let truth = Tensor::randn(&[1, 2, 3, 3, 3], 0.3, &mut rng);
    let target = conv3d_forward(&x, &truth, None, &geo)?;

    let mut store = ParamStore::new();
    let conv = Conv3d::new(&mut store, "conv", 2, 1, geo, &mut rng);
    let mut adam = Adam::new(&store, 0.05, 0.9, 0.999)?;
    println!("{} parameters", store.numel());

    for step in 0..=200 {
        let mut tape = Tape::new();
        let vars = store.bind(&mut tape, true);
        let xv = tape.constant(x.clone());
        let tv = tape.constant(target.clone());
        let y = conv.forward(&mut tape, &vars, xv)?;
        let loss = ops::l1_mean(&mut tape, y, tv)?;
        if step % 40 == 0 {
            println!("step {step:3}  L1 {:.5}", tape.value(loss).data()[0]);
        }
        let mut grads = tape.backward(loss)?;
        store.absorb_grads(&vars, &mut grads)?;
        adam.step(&mut store)?;
    }
    let w = &store.by_name("conv.weight").expect("weight").tensor;
    let err = w
        .data()
        .iter()
        .zip(truth.data())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0f32, f32::max);
    println!("max kernel error {err:.4}");
    Ok(())
}
