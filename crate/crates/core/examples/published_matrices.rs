//! Scoring estimates against the two FashionMNIST noise matrices, and
//! applying a learned slack.
//!
//!     cargo run --example published_matrices

use noisykit::transition::{revise, sum_average_error};
use noisykit::{KnownMatrix, RevisionDelta, TransitionMatrix};

fn main() -> noisykit::Result<()> {
    let estimates = [
        (KnownMatrix::Fashion05, [[0.545, 0.224, 0.229], [0.231, 0.488, 0.280], [0.285, 0.213, 0.501]]),
        (KnownMatrix::Fashion06, [[0.475, 0.250, 0.274], [0.273, 0.433, 0.292], [0.289, 0.281, 0.429]]),
    ];
    for (known, est) in estimates {
        let t = TransitionMatrix::known(known);
        let est = ndarray::Array2::from_shape_fn((3, 3), |(i, j)| est[i][j]);
        println!("{known:?}: sum-average error {:.4}", sum_average_error(&t, &est)?);
    }

    let t = TransitionMatrix::known(KnownMatrix::Fashion05);
    let dt = RevisionDelta::new(vec![
        vec![0.0279, 0.0216, 0.0400],
        vec![0.0243, 0.0219, 0.0228],
        vec![0.0307, 0.0331, 0.0282],
    ])?;
    let revised = revise(&t, &dt)?;
    println!("\nT + dT (rows are not renormalized)\n{revised:.4}");
    let sums: Vec<String> = revised.rows().into_iter().map(|r| format!("{:.4}", r.sum())).collect();
    println!("row sums {}", sums.join(", "));
    Ok(())
}
