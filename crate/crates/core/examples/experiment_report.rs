//! One method through the repeated-split protocol with an estimated
//! transition matrix, printed as the JSON report the CLI writes.
//!
//!     cargo run --release --example experiment_report

use noisykit::dataset::{inject_noise, synthesize};
use noisykit::report::{experiment_csv, to_sorted_json};
use noisykit::trainer::run_trials;
use noisykit::{KnownMatrix, Method, SyntheticSpec, TSource, TrainConfig, TransitionMatrix};

fn main() -> noisykit::Result<()> {
    let spec = SyntheticSpec {
        num_classes: 3,
        dim: 4,
        samples_per_class: 500,
        class_separation: 4.0,
        noise_sigma: 1.0,
        seed: 5,
    };
    let t = TransitionMatrix::known(KnownMatrix::Fashion05);
    let pool = inject_noise(&synthesize(&spec)?, &t, 6)?.with_name("blobs-noisy");
    let test = synthesize(&SyntheticSpec { seed: 8, ..spec })?.with_name("blobs-test");

    let cfg = TrainConfig {
        method: Method::Reweight,
        t_source: TSource::Estimate { top_k: 5 },
        trials: 3,
        ..TrainConfig::default()
    };
    let report = run_trials(&pool, &test, Some(&t), &cfg)?;
    for trial in &report.trials {
        println!(
            "trial {} seed {}: top-1 {:.4}, estimation error {:.4}",
            trial.trial,
            trial.seed_used,
            trial.test_accuracy.unwrap_or(f64::NAN),
            trial.estimation_error.unwrap_or(f64::NAN)
        );
    }
    print!("\n{}", experiment_csv(&report));
    let json = to_sorted_json(&report)?;
    println!("\nreport: {} bytes of JSON, first lines:", json.len());
    for line in json.lines().take(12) {
        println!("  {line}");
    }
    Ok(())
}
