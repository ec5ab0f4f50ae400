//! Anchor-point estimation of the transition matrix.
//!
//! A probe network is fitted to the noisy labels so that its softmax
//! approximates `P(noisy | x)`. For each class the rows where the probe is
//! most confident in that class serve as anchor points; their noisy
//! posteriors are read off as rows of the estimated matrix.

use std::cmp::Ordering;

use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use crate::dataset::{self, LabeledDataset};
use crate::error::{Error, Result};
use crate::nn::MlpParams;
use crate::trainer::{self, Method, TrainConfig};
use crate::transition::{determinant, MatrixJson, SINGULAR_DET};

/// Rows scored per forward pass when scanning a dataset.
const SCAN_CHUNK: usize = 4096;

#[derive(Debug, Clone, PartialEq)]
pub struct Anchor {
    pub row: usize,
    /// Probe softmax at this row.
    pub posterior: Vec<f64>,
}

/// Per class, the `top_k` most confident rows, best first.
#[derive(Debug, Clone, PartialEq)]
pub struct AnchorSet {
    pub top_k: usize,
    pub classes: Vec<Vec<Anchor>>,
}

impl AnchorSet {
    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidityReport {
    pub determinant: f64,
    pub near_singular: bool,
    pub max_row_sum_error: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionEstimate {
    /// Row `i` is the mean noisy posterior of the class-`i` anchors.
    pub matrix: Array2<f64>,
    pub validity: ValidityReport,
}

impl TransitionEstimate {
    pub fn to_json(&self) -> MatrixJson {
        MatrixJson::from_array(&self.matrix)
    }
}

/// Trains a probe with plain cross-entropy on the noisy labels.
///
/// The data is split with `cfg.split_fraction` for validation-based
/// snapshot selection; `cfg.method` is ignored.
pub fn fit_noisy_posterior(ds_noisy: &LabeledDataset, cfg: &TrainConfig) -> Result<MlpParams> {
    let pair = dataset::split(ds_noisy, cfg.split_fraction, cfg.seed)?;
    let probe_cfg = TrainConfig {
        method: Method::Baseline,
        ..cfg.clone()
    };
    let outcome = trainer::train_once(&pair.train, &pair.validation, &probe_cfg, None)?;
    Ok(outcome.params)
}

/// Scans every row of `ds` and keeps, per class, the `top_k` rows with the
/// highest probe posterior for that class. Ties go to the lower row index.
pub fn pick_anchors(probe: &MlpParams, ds: &LabeledDataset, top_k: usize) -> Result<AnchorSet> {
    if top_k == 0 {
        return Err(Error::Config("top_k must be at least 1".into()));
    }
    if ds.len() < top_k {
        return Err(Error::EmptyData(format!(
            "need at least {top_k} rows to pick anchors, dataset has {}",
            ds.len()
        )));
    }
    let c = probe.output_dim();
    let posteriors = posteriors(probe, ds)?;
    let classes = (0..c)
        .map(|class| {
            let mut order: Vec<usize> = (0..ds.len()).collect();
            let by_confidence = |a: &usize, b: &usize| -> Ordering {
                posteriors[[*b, class]]
                    .total_cmp(&posteriors[[*a, class]])
                    .then(a.cmp(b))
            };
            if top_k < order.len() {
                order.select_nth_unstable_by(top_k - 1, by_confidence);
                order.truncate(top_k);
            }
            order.sort_by(by_confidence);
            order
                .into_iter()
                .map(|row| Anchor {
                    row,
                    posterior: posteriors.row(row).to_vec(),
                })
                .collect()
        })
        .collect();
    Ok(AnchorSet { top_k, classes })
}

fn posteriors(probe: &MlpParams, ds: &LabeledDataset) -> Result<Array2<f64>> {
    let mut out = Array2::zeros((ds.len(), probe.output_dim()));
    let mut start = 0;
    while start < ds.len() {
        let end = (start + SCAN_CHUNK).min(ds.len());
        let chunk = probe.predict_proba(ds.features().slice(s![start..end, ..]))?;
        out.slice_mut(s![start..end, ..]).assign(&chunk);
        start = end;
    }
    Ok(out)
}

/// Averages each class's anchor posteriors into one row of the estimate.
/// Degenerate results are flagged in the validity report, never rejected.
pub fn estimate_t(anchors: &AnchorSet) -> TransitionEstimate {
    let c = anchors.num_classes();
    let mut matrix = Array2::zeros((c, c));
    for (i, list) in anchors.classes.iter().enumerate() {
        let k = list.len() as f64;
        for a in list {
            for (j, &p) in a.posterior.iter().enumerate() {
                matrix[[i, j]] += p / k;
            }
        }
    }
    let det = determinant(matrix.view());
    let max_row_sum_error = matrix
        .rows()
        .into_iter()
        .map(|r| (r.sum() - 1.0).abs())
        .fold(0.0, f64::max);
    TransitionEstimate {
        matrix,
        validity: ValidityReport {
            determinant: det,
            near_singular: det.abs() < SINGULAR_DET,
            max_row_sum_error,
        },
    }
}

/// Probe fit, anchor scan over the whole dataset, and averaging, in one call.
/// Returns the probe alongside the estimate.
pub fn estimate_transition(
    ds_noisy: &LabeledDataset,
    cfg: &TrainConfig,
    top_k: usize,
) -> Result<(TransitionEstimate, MlpParams)> {
    let probe = fit_noisy_posterior(ds_noisy, cfg)?;
    let anchors = pick_anchors(&probe, ds_noisy, top_k)?;
    Ok((estimate_t(&anchors), probe))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Layer;
    use crate::transition::{KnownMatrix, TransitionMatrix};
    use ndarray::Array1;

    /// Single linear layer over one-hot inputs whose softmax at input `k` is
    /// exactly `table[k]`.
    fn table_probe(table: &[Vec<f64>]) -> MlpParams {
        let k = table.len();
        let c = table[0].len();
        let weight = Array2::from_shape_fn((c, k), |(cls, point)| table[point][cls].ln());
        MlpParams::from_layers(vec![Layer {
            weight,
            bias: Array1::zeros(c),
        }])
        .unwrap()
    }

    fn one_hot_rows(k: usize) -> LabeledDataset {
        LabeledDataset::new(Array2::eye(k), vec![0; k], 3, "points").unwrap()
    }

    #[test]
    fn exact_noisy_posterior_recovers_t() {
        // Discrete toy distribution: three pure points (anchors) and four
        // mixed ones. The probe reports the exact noisy posterior T^T p.
        let t = TransitionMatrix::known(KnownMatrix::Fashion05);
        let clean = vec![
            vec![1.0, 0.0, 0.0],
            vec![0.0, 1.0, 0.0],
            vec![0.0, 0.0, 1.0],
            vec![0.5, 0.5, 0.0],
            vec![0.2, 0.3, 0.5],
            vec![0.6, 0.1, 0.3],
            vec![1.0 / 3.0; 3],
        ];
        let table: Vec<Vec<f64>> = clean.iter().map(|p| t.apply_to_posterior(p).unwrap()).collect();
        let probe = table_probe(&table);
        let ds = one_hot_rows(table.len());
        let anchors = pick_anchors(&probe, &ds, 1).unwrap();
        for (i, list) in anchors.classes.iter().enumerate() {
            assert_eq!(list[0].row, i);
        }
        let est = estimate_t(&anchors);
        for (a, b) in est.matrix.iter().zip(t.as_array()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(!est.validity.near_singular);
    }

    #[test]
    fn pass_through_of_known_rows() {
        let t = TransitionMatrix::known(KnownMatrix::Fashion05);
        let anchors = AnchorSet {
            top_k: 1,
            classes: (0..3)
                .map(|i| {
                    vec![Anchor {
                        row: i,
                        posterior: t.row(i).to_vec(),
                    }]
                })
                .collect(),
        };
        assert_eq!(&estimate_t(&anchors).matrix, t.as_array());
    }

    #[test]
    fn top_k_sorted_and_ties_to_lower_row() {
        let table = vec![
            vec![0.8, 0.1, 0.1],
            vec![0.9, 0.05, 0.05],
            vec![0.8, 0.1, 0.1],
            vec![0.1, 0.1, 0.8],
        ];
        let probe = table_probe(&table);
        let ds = one_hot_rows(4);
        let anchors = pick_anchors(&probe, &ds, 3).unwrap();
        let rows: Vec<usize> = anchors.classes[0].iter().map(|a| a.row).collect();
        assert_eq!(rows, vec![1, 0, 2]);
        let rows: Vec<usize> = anchors.classes[1].iter().map(|a| a.row).collect();
        assert_eq!(rows, vec![0, 2, 3]);
        for list in &anchors.classes {
            for a in list {
                assert!((a.posterior.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            }
        }
        let est = estimate_t(&anchors);
        for r in est.matrix.rows() {
            assert!((r.sum() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn top_one_may_share_rows() {
        let table = vec![vec![0.4, 0.3, 0.3], vec![0.2, 0.4, 0.4]];
        let anchors = pick_anchors(&table_probe(&table), &one_hot_rows(2), 1).unwrap();
        assert_eq!(anchors.num_classes(), 3);
        assert_eq!(anchors.classes[1][0].row, anchors.classes[2][0].row);
    }

    #[test]
    fn anchor_argument_errors() {
        let table = vec![vec![0.4, 0.3, 0.3], vec![0.2, 0.4, 0.4]];
        let probe = table_probe(&table);
        assert!(pick_anchors(&probe, &one_hot_rows(2), 0).is_err());
        assert!(pick_anchors(&probe, &one_hot_rows(2), 3).is_err());
    }

    #[test]
    fn singular_estimate_is_flagged_not_rejected() {
        let anchors = AnchorSet {
            top_k: 1,
            classes: (0..3)
                .map(|i| {
                    vec![Anchor {
                        row: i,
                        posterior: vec![1.0 / 3.0; 3],
                    }]
                })
                .collect(),
        };
        assert!(estimate_t(&anchors).validity.near_singular);
    }
}
