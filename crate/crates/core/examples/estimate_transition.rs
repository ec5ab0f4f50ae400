//! Anchor-point estimation of the transition matrix from noisy labels only.
//!
//!     cargo run --release --example estimate_transition

use noisykit::dataset::{inject_noise, synthesize};
use noisykit::estimator::{estimate_t, fit_noisy_posterior, pick_anchors};
use noisykit::transition::sum_average_error;
use noisykit::{KnownMatrix, SyntheticSpec, TrainConfig, TransitionMatrix};

fn main() -> noisykit::Result<()> {
    let clean = synthesize(&SyntheticSpec {
        num_classes: 3,
        dim: 8,
        samples_per_class: 6000,
        class_separation: 10.0,
        noise_sigma: 1.0,
        seed: 1,
    })?;
    let cfg = TrainConfig::default();

    for known in [KnownMatrix::Fashion05, KnownMatrix::Fashion06] {
        let t = TransitionMatrix::known(known);
        let noisy = inject_noise(&clean, &t, 3)?;
        let probe = fit_noisy_posterior(&noisy, &cfg)?;
        println!("{known:?}");
        for top_k in [1, 10, 100] {
            let est = estimate_t(&pick_anchors(&probe, &noisy, top_k)?);
            let err = sum_average_error(&t, &est.matrix)?;
            println!("  top_k {top_k:>3}: sum-average error {err:.4}, det {:.4}", est.validity.determinant);
            if top_k == 1 {
                for row in est.matrix.rows() {
                    println!("      {:.3}", row);
                }
            }
        }
    }
    Ok(())
}
