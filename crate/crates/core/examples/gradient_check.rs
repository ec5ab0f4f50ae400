//! Backpropagation through the [8, 128, 64, 3] network checked against
//! central differences.
//!
//!     cargo run --release --example gradient_check

use ndarray::Array2;
use noisykit::losses::forward_corrected_loss;
use noisykit::nn::{backward, forward_batch, grad_check, MlpParams};
use noisykit::{KnownMatrix, TransitionMatrix};
use rand::Rng;

fn main() -> noisykit::Result<()> {
    let t = TransitionMatrix::known(KnownMatrix::Fashion06);
    let mut rng = noisykit::rng::seeded(42);
    let x = Array2::from_shape_simple_fn((16, 8), || rng.random_range(-2.0..2.0));
    let y: Vec<usize> = (0..16).map(|_| rng.random_range(0..3)).collect();

    for seed in 0..3 {
        let params = MlpParams::init(&[8, 128, 64, 3], seed)?;
        let report = grad_check(&params, 1e-4, |p| {
            let (z, cache) = forward_batch(p, x.view())?;
            let out = forward_corrected_loss(z.view(), &y, &t)?;
            Ok((out.value, backward(p, &cache, out.d_logits.view())?))
        })?;
        println!(
            "seed {seed}: {} parameters, max relative error {:.2e}, passed {}",
            report.checked,
            report.max_rel_error,
            report.passed()
        );
    }
    Ok(())
}
