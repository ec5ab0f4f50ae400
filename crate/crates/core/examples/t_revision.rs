//! Two-stage T-Revision: fixed-T re-weighting, then joint training of the
//! network and the slack.
//!
//!     cargo run --release --example t_revision

use noisykit::dataset::{inject_noise, split, synthesize};
use noisykit::trainer::{evaluate_top1, train_revision};
use noisykit::transition::revise;
use noisykit::{KnownMatrix, Method, SyntheticSpec, TrainConfig, TransitionMatrix};

fn main() -> noisykit::Result<()> {
    let spec = SyntheticSpec {
        num_classes: 3,
        dim: 8,
        samples_per_class: 2000,
        class_separation: 3.0,
        noise_sigma: 1.0,
        seed: 1,
    };
    let t = TransitionMatrix::known(KnownMatrix::Fashion06);
    let noisy = inject_noise(&synthesize(&spec)?, &t, 3)?;
    let test = synthesize(&SyntheticSpec { seed: 2, samples_per_class: 1000, ..spec })?;
    let parts = split(&noisy, 0.8, 0)?;

    let cfg = TrainConfig {
        method: Method::Revision,
        ..TrainConfig::default()
    };
    let out = train_revision(&parts.train, &parts.validation, &cfg, &t, None)?;

    for (name, stage) in [("stage 1", &out.stage1), ("stage 2", &out.stage2)] {
        let losses: Vec<String> = stage.history.iter().map(|e| format!("{:.3}", e.validation_loss)).collect();
        println!("{name} validation: {}", losses.join(" "));
        println!(
            "        best epoch {}, test top-1 {:.4}",
            stage.best_epoch,
            evaluate_top1(&stage.params, &test)?
        );
    }
    println!("\nlearned dT\n{:.4}", out.delta.as_array());
    println!("T + dT\n{:.4}", revise(&t, &out.delta)?);
    Ok(())
}
