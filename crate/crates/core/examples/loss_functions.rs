//! The four objectives on one hand-sized batch: values, re-weighting
//! factors and the slack gradient.
//!
//!     cargo run --example loss_functions

use ndarray::array;
use noisykit::losses::{cross_entropy, forward_corrected_loss, reweighted_loss, revision_loss};
use noisykit::{KnownMatrix, RevisionDelta, TransitionMatrix};

fn main() -> noisykit::Result<()> {
    let t = TransitionMatrix::known(KnownMatrix::Fashion05);
    // softmax of row 0 is (0.7, 0.2, 0.1)
    let logits = array![[0.7f64.ln(), 0.2f64.ln(), 0.1f64.ln()], [0.0, 2.0, -1.0], [1.5, 1.4, 0.0]];
    let labels = [0, 1, 2];

    let ce = cross_entropy(logits.view(), &labels)?;
    let fwd = forward_corrected_loss(logits.view(), &labels, &t)?;
    let rw = reweighted_loss(logits.view(), &labels, &t)?;
    println!("cross-entropy  {:.4}", ce.value);
    println!("forward        {:.4}", fwd.value);
    println!("reweighted     {:.4}  beta {:.4?}", rw.value, rw.weights.as_ref().unwrap());

    let dt = RevisionDelta::new(vec![vec![0.03, 0.02, 0.04], vec![0.02, 0.02, 0.02], vec![0.03, 0.03, 0.03]])?;
    let rev = revision_loss(logits.view(), &labels, &t, &dt)?;
    println!("revision       {:.4}  beta {:.4?}", rev.value, rev.weights.as_ref().unwrap());
    println!("d loss / d dT\n{:.4}", rev.d_delta_t.as_ref().unwrap());

    let id = TransitionMatrix::identity(3);
    let same = forward_corrected_loss(logits.view(), &labels, &id)?;
    println!("\nforward with T = I equals cross-entropy: {}", same.value == ce.value);
    Ok(())
}
