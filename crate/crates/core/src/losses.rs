//! Training objectives on batches of logits.
//!
//! Every function returns the batch-mean loss together with its gradient
//! with respect to each logit, ready for [`crate::nn::backward`].
//! Probabilities are floored at [`PROB_FLOOR`] before logs; a floored term
//! is constant and contributes no gradient.

use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};
use crate::nn::softmax_in_place;
use crate::transition::{RevisionDelta, TransitionMatrix};

pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct LossOutput {
    /// Mean over the batch.
    pub value: f64,
    /// `rows x C` gradient of `value` with respect to the logits.
    pub d_logits: Array2<f64>,
    /// Gradient with respect to the revision slack (revision loss only).
    pub d_delta_t: Option<Array2<f64>>,
    /// Per-sample importance weights (re-weighted losses only).
    pub weights: Option<Vec<f64>>,
}

fn check_batch(logits: ArrayView2<'_, f64>, labels: &[usize], classes: Option<usize>) -> Result<()> {
    if logits.nrows() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: logits.nrows(),
            got: labels.len(),
            context: "labels vs logit rows",
        });
    }
    if logits.nrows() == 0 {
        return Err(Error::EmptyData("empty batch".into()));
    }
    let c = logits.ncols();
    if let Some(size) = classes {
        if size != c {
            return Err(Error::DimensionMismatch {
                expected: c,
                got: size,
                context: "transition matrix size vs logit width",
            });
        }
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= c) {
        return Err(Error::LabelOutOfRange {
            label,
            num_classes: c,
        });
    }
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("logits".into()));
    }
    Ok(())
}

fn softmax_rows(logits: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut p = logits.to_owned();
    for mut row in p.rows_mut() {
        softmax_in_place(row.as_slice_mut().expect("standard layout"));
    }
    p
}

/// Mean of `-ln softmax(z)[y]`.
pub fn cross_entropy(logits: ArrayView2<'_, f64>, labels: &[usize]) -> Result<LossOutput> {
    check_batch(logits, labels, None)?;
    let n = labels.len() as f64;
    let mut grad = softmax_rows(logits);
    let mut total = 0.0;
    for (mut row, &y) in grad.rows_mut().into_iter().zip(labels) {
        let py = row[y];
        if py < PROB_FLOOR {
            total += -PROB_FLOOR.ln();
            row.fill(0.0);
            continue;
        }
        total += -py.ln();
        row[y] -= 1.0;
        row.mapv_inplace(|v| v / n);
    }
    Ok(LossOutput {
        value: total / n,
        d_logits: grad,
        d_delta_t: None,
        weights: None,
    })
}

/// Forward loss correction: mean of `-ln (T^T softmax(z))[y_noisy]`.
///
/// The model's softmax is read as the clean posterior; composing it with
/// the transition matrix predicts the noisy label distribution, which is
/// what the noisy labels are scored against.
pub fn forward_corrected_loss(
    logits: ArrayView2<'_, f64>,
    noisy_labels: &[usize],
    t: &TransitionMatrix,
) -> Result<LossOutput> {
    check_batch(logits, noisy_labels, Some(t.size()))?;
    let n = noisy_labels.len() as f64;
    let t = t.as_array();
    let mut grad = softmax_rows(logits);
    let mut total = 0.0;
    for (mut row, &y) in grad.rows_mut().into_iter().zip(noisy_labels) {
        let mut q = 0.0;
        for (j, &pj) in row.iter().enumerate() {
            q += t[[j, y]] * pj;
        }
        if q < PROB_FLOOR {
            total += -PROB_FLOOR.ln();
            row.fill(0.0);
            continue;
        }
        total += -q.ln();
        // d/dz_k = p_k * (1 - t[k][y] / q)
        for (k, v) in row.iter_mut().enumerate() {
            *v = (*v - t[[k, y]] * (*v / q)) / n;
        }
    }
    Ok(LossOutput {
        value: total / n,
        d_logits: grad,
        d_delta_t: None,
        weights: None,
    })
}

/// Importance re-weighted cross-entropy with
/// `beta = g[y] / (T^T g)[y]`, `g = softmax(z)`.
///
/// `beta` is held constant when differentiating, so the logit gradient is
/// `beta` times the plain cross-entropy gradient.
pub fn reweighted_loss(
    logits: ArrayView2<'_, f64>,
    noisy_labels: &[usize],
    t: &TransitionMatrix,
) -> Result<LossOutput> {
    check_batch(logits, noisy_labels, Some(t.size()))?;
    weighted_ce(logits, noisy_labels, t.as_array().view(), false)
}

/// T-Revision objective: [`reweighted_loss`] with `T + dT` in the weight
/// denominator. The slack receives a gradient through that denominator;
/// the network sees `beta` as a constant.
pub fn revision_loss(
    logits: ArrayView2<'_, f64>,
    noisy_labels: &[usize],
    t: &TransitionMatrix,
    dt: &RevisionDelta,
) -> Result<LossOutput> {
    check_batch(logits, noisy_labels, Some(t.size()))?;
    let revised = crate::transition::revise(t, dt)?;
    weighted_ce(logits, noisy_labels, revised.view(), true)
}

fn weighted_ce(
    logits: ArrayView2<'_, f64>,
    labels: &[usize],
    m: ArrayView2<'_, f64>,
    with_delta: bool,
) -> Result<LossOutput> {
    let n = labels.len() as f64;
    let c = m.nrows();
    let mut grad = softmax_rows(logits);
    let mut weights = Vec::with_capacity(labels.len());
    let mut d_delta = with_delta.then(|| Array2::<f64>::zeros((c, c)));
    let mut total = 0.0;
    for (sample, (mut row, &y)) in grad.rows_mut().into_iter().zip(labels).enumerate() {
        let mut denom = 0.0;
        for (j, &gj) in row.iter().enumerate() {
            denom += m[[j, y]] * gj;
        }
        if !(denom >= PROB_FLOOR) {
            return Err(Error::DegenerateDenominator {
                sample,
                value: denom,
            });
        }
        let gy = row[y];
        let beta = gy / denom;
        weights.push(beta);
        let ce = -gy.max(PROB_FLOOR).ln();
        total += beta * ce;
        if let Some(dd) = d_delta.as_mut() {
            // d(beta * ce)/d m[j][y] = -beta * ce * g_j / denom
            let scale = -beta * ce / denom / n;
            for (j, &gj) in row.iter().enumerate() {
                dd[[j, y]] += scale * gj;
            }
        }
        if gy < PROB_FLOOR {
            row.fill(0.0);
            continue;
        }
        row[y] -= 1.0;
        row.mapv_inplace(|v| beta * v / n);
    }
    Ok(LossOutput {
        value: total / n,
        d_logits: grad,
        d_delta_t: d_delta,
        weights: Some(weights),
    })
}
