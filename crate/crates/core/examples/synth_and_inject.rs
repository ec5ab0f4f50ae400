//! Generate Gaussian blobs, flip their labels through a transition matrix
//! and compare the empirical flip rates with the matrix.
//!
//!     cargo run --example synth_and_inject

use noisykit::dataset::{inject_noise, split, synthesize};
use noisykit::{KnownMatrix, SyntheticSpec, TransitionMatrix};

fn main() -> noisykit::Result<()> {
    let clean = synthesize(&SyntheticSpec {
        num_classes: 3,
        dim: 8,
        samples_per_class: 6000,
        class_separation: 10.0,
        noise_sigma: 1.0,
        seed: 7,
    })?;
    let t = TransitionMatrix::known(KnownMatrix::Fashion05);
    let noisy = inject_noise(&clean, &t, 3)?;

    let mut counts = [[0usize; 3]; 3];
    for (&c, &n) in clean.labels().iter().zip(noisy.labels()) {
        counts[c][n] += 1;
    }
    println!("clean -> noisy   empirical              target");
    for (i, row) in counts.iter().enumerate() {
        let total: usize = row.iter().sum();
        let emp: Vec<String> = row.iter().map(|&k| format!("{:.3}", k as f64 / total as f64)).collect();
        let want: Vec<String> = t.row(i).iter().map(|v| format!("{v:.3}")).collect();
        println!("class {i}          [{}]  [{}]", emp.join(" "), want.join(" "));
    }

    let parts = split(&noisy, 0.8, 1)?;
    println!(
        "\nsplit: {} train / {} validation, noisy class counts {:?}",
        parts.train.len(),
        parts.validation.len(),
        noisy.class_counts()
    );
    println!("fingerprint {}", &noisy.fingerprint().sha256[..16]);
    Ok(())
}
