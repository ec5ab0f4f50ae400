//! Noise transition matrices.
//!
//! Convention everywhere in the crate: `t[i][j] = P(noisy = j | clean = i)`,
//! so every row is a probability distribution over noisy labels.

use ndarray::{Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-sum tolerance for a valid transition matrix.
pub const ROW_SUM_TOL: f64 = 1e-9;
/// Matrices with `|det| < SINGULAR_DET` are rejected.
pub const SINGULAR_DET: f64 = 1e-12;

/// Wire format shared by every matrix the crate writes:
/// `{"size": C, "rows": [[...], ...]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixJson {
    pub size: usize,
    pub rows: Vec<Vec<f64>>,
}

impl MatrixJson {
    pub fn from_array(m: &Array2<f64>) -> Self {
        Self {
            size: m.nrows(),
            rows: m.rows().into_iter().map(|r| r.to_vec()).collect(),
        }
    }

    pub fn to_array(&self) -> Result<Array2<f64>> {
        let m = rows_to_array(&self.rows)?;
        if m.nrows() != self.size {
            return Err(Error::DimensionMismatch {
                expected: self.size,
                got: m.nrows(),
                context: "declared matrix size vs rows",
            });
        }
        Ok(m)
    }
}

fn rows_to_array(rows: &[Vec<f64>]) -> Result<Array2<f64>> {
    let n = rows.len();
    if n == 0 {
        return Err(Error::InvalidTransition("matrix has no rows".into()));
    }
    if let Some(r) = rows.iter().find(|r| r.len() != n) {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: r.len(),
            context: "matrix must be square",
        });
    }
    Ok(Array2::from_shape_vec((n, n), rows.concat()).expect("square checked"))
}

/// The matrices published with the two FashionMNIST noisy datasets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KnownMatrix {
    Fashion05,
    Fashion06,
}

impl KnownMatrix {
    pub fn rows(self) -> [[f64; 3]; 3] {
        match self {
            KnownMatrix::Fashion05 => [[0.5, 0.2, 0.3], [0.3, 0.5, 0.2], [0.2, 0.3, 0.5]],
            KnownMatrix::Fashion06 => [[0.4, 0.3, 0.3], [0.3, 0.4, 0.3], [0.3, 0.3, 0.4]],
        }
    }
}

impl std::str::FromStr for KnownMatrix {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fashion05" => Ok(KnownMatrix::Fashion05),
            "fashion06" => Ok(KnownMatrix::Fashion06),
            other => Err(Error::Config(format!("unknown transition matrix `{other}`"))),
        }
    }
}

/// A validated row-stochastic, non-singular C×C matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MatrixJson", into = "MatrixJson")]
pub struct TransitionMatrix {
    entries: Array2<f64>,
}

impl TransitionMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::from_array(rows_to_array(&rows)?)
    }

    pub fn from_array(entries: Array2<f64>) -> Result<Self> {
        let (r, c) = entries.dim();
        if r != c || r == 0 {
            return Err(Error::InvalidTransition(format!("matrix must be square, got {r}x{c}")));
        }
        for ((i, j), &v) in entries.indexed_iter() {
            if !v.is_finite() {
                return Err(Error::InvalidTransition(format!("entry [{i}][{j}] is not finite")));
            }
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::InvalidTransition(format!(
                    "entry [{i}][{j}] = {v} is outside [0, 1]"
                )));
            }
        }
        for (i, row) in entries.rows().into_iter().enumerate() {
            let s = row.sum();
            if (s - 1.0).abs() > ROW_SUM_TOL {
                return Err(Error::InvalidTransition(format!("row {i} sums to {s}, not 1")));
            }
        }
        let det = determinant(entries.view());
        if det.abs() < SINGULAR_DET {
            return Err(Error::InvalidTransition(format!(
                "matrix is singular (|det| = {:e})",
                det.abs()
            )));
        }
        Ok(Self { entries })
    }

    pub fn identity(size: usize) -> Self {
        Self {
            entries: Array2::eye(size),
        }
    }

    pub fn known(name: KnownMatrix) -> Self {
        let rows = name.rows().iter().map(|r| r.to_vec()).collect();
        Self::new(rows).expect("published matrices are valid")
    }

    pub fn size(&self) -> usize {
        self.entries.nrows()
    }

    pub fn get(&self, clean: usize, noisy: usize) -> f64 {
        self.entries[[clean, noisy]]
    }

    pub fn row(&self, clean: usize) -> ArrayView1<'_, f64> {
        self.entries.row(clean)
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.entries
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        MatrixJson::from_array(&self.entries).rows
    }

    /// Noisy posterior from a clean posterior: `q[i] = sum_j t[j][i] * p[j]`.
    pub fn apply_to_posterior(&self, p: &[f64]) -> Result<Vec<f64>> {
        check_probability(p, self.size())?;
        Ok(transpose_apply(self.entries.view(), p))
    }
}

impl TryFrom<MatrixJson> for TransitionMatrix {
    type Error = Error;

    fn try_from(value: MatrixJson) -> Result<Self> {
        Self::from_array(value.to_array()?)
    }
}

impl From<TransitionMatrix> for MatrixJson {
    fn from(t: TransitionMatrix) -> Self {
        MatrixJson::from_array(&t.entries)
    }
}

/// `m^T p` for a square `m`.
pub(crate) fn transpose_apply(m: ArrayView2<'_, f64>, p: &[f64]) -> Vec<f64> {
    let c = m.ncols();
    let mut q = vec![0.0; c];
    for (j, &pj) in p.iter().enumerate() {
        for (i, qi) in q.iter_mut().enumerate() {
            *qi += m[[j, i]] * pj;
        }
    }
    q
}

fn check_probability(p: &[f64], size: usize) -> Result<()> {
    if p.len() != size {
        return Err(Error::DimensionMismatch {
            expected: size,
            got: p.len(),
            context: "probability vector length",
        });
    }
    if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(Error::InvalidProbability("entries must be finite and non-negative".into()));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > ROW_SUM_TOL {
        return Err(Error::InvalidProbability(format!("sums to {s}, not 1")));
    }
    Ok(())
}

/// Determinant by Gaussian elimination with partial pivoting.
pub fn determinant(m: ArrayView2<'_, f64>) -> f64 {
    let n = m.nrows();
    let mut a = m.to_owned();
    let mut det = 1.0;
    for col in 0..n {
        let pivot = (col..n)
            .max_by(|&x, &y| a[[x, col]].abs().total_cmp(&a[[y, col]].abs()))
            .expect("non-empty range");
        if a[[pivot, col]] == 0.0 {
            return 0.0;
        }
        if pivot != col {
            for k in 0..n {
                a.swap([pivot, k], [col, k]);
            }
            det = -det;
        }
        let d = a[[col, col]];
        det *= d;
        for r in col + 1..n {
            let f = a[[r, col]] / d;
            if f != 0.0 {
                for k in col..n {
                    a[[r, k]] -= f * a[[col, k]];
                }
            }
        }
    }
    det
}

/// Additive slack learned on top of an initial transition matrix.
/// Entries may take either sign.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "MatrixJson", into = "MatrixJson")]
pub struct RevisionDelta {
    entries: Array2<f64>,
}

impl RevisionDelta {
    pub fn zeros(size: usize) -> Self {
        Self {
            entries: Array2::zeros((size, size)),
        }
    }

    pub fn from_array(entries: Array2<f64>) -> Result<Self> {
        if entries.nrows() != entries.ncols() {
            return Err(Error::DimensionMismatch {
                expected: entries.nrows(),
                got: entries.ncols(),
                context: "revision delta must be square",
            });
        }
        if entries.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("revision delta".into()));
        }
        Ok(Self { entries })
    }

    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        Self::from_array(rows_to_array(&rows)?)
    }

    pub fn size(&self) -> usize {
        self.entries.nrows()
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.entries
    }

    pub(crate) fn as_array_mut(&mut self) -> &mut Array2<f64> {
        &mut self.entries
    }

    pub fn max_abs(&self) -> f64 {
        self.entries.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

impl TryFrom<MatrixJson> for RevisionDelta {
    type Error = Error;

    fn try_from(value: MatrixJson) -> Result<Self> {
        Self::from_array(value.to_array()?)
    }
}

impl From<RevisionDelta> for MatrixJson {
    fn from(d: RevisionDelta) -> Self {
        MatrixJson::from_array(&d.entries)
    }
}

/// `t + dt`, elementwise. The sum is deliberately left unnormalized: revised
/// rows are not expected to sum to one.
pub fn revise(t: &TransitionMatrix, dt: &RevisionDelta) -> Result<Array2<f64>> {
    if t.size() != dt.size() {
        return Err(Error::DimensionMismatch {
            expected: t.size(),
            got: dt.size(),
            context: "revision delta size",
        });
    }
    let sum = &t.entries + &dt.entries;
    if sum.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("revised transition matrix".into()));
    }
    Ok(sum)
}

/// Relative L1 distance `sum |est - true| / sum |true|`.
pub fn sum_average_error(t_true: &TransitionMatrix, t_est: &Array2<f64>) -> Result<f64> {
    if t_est.dim() != t_true.entries.dim() {
        return Err(Error::DimensionMismatch {
            expected: t_true.size(),
            got: t_est.nrows(),
            context: "estimated matrix size",
        });
    }
    let num: f64 = t_est
        .iter()
        .zip(t_true.entries.iter())
        .map(|(e, t)| (e - t).abs())
        .sum();
    let den: f64 = t_true.entries.iter().map(|t| t.abs()).sum();
    Ok(num / den)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;

    #[test]
    fn fashion05_rows_are_valid() {
        let t = TransitionMatrix::new(vec![
            vec![0.5, 0.2, 0.3],
            vec![0.3, 0.5, 0.2],
            vec![0.2, 0.3, 0.5],
        ])
        .unwrap();
        assert_eq!(t, TransitionMatrix::known(KnownMatrix::Fashion05));
        assert_eq!(TransitionMatrix::known(KnownMatrix::Fashion05).get(0, 2), 0.3);
        assert_eq!(TransitionMatrix::known(KnownMatrix::Fashion06).get(1, 1), 0.4);
        assert!(TransitionMatrix::from_array(Array2::eye(3)).is_ok());
    }

    #[test]
    fn fashion06_rows_sum_to_one() {
        let t = TransitionMatrix::known(KnownMatrix::Fashion06);
        for r in t.as_array().rows() {
            assert!((r.sum() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_invalid_matrices() {
        let third = 1.0 / 3.0;
        let err = TransitionMatrix::new(vec![vec![third; 3]; 3]).unwrap_err();
        assert!(err.to_string().contains("singular"), "{err}");
        let err = TransitionMatrix::new(vec![vec![0.6, 0.6], vec![0.0, 1.0]]).unwrap_err();
        assert!(err.to_string().contains("sums to"), "{err}");
        let err = TransitionMatrix::new(vec![vec![1.2, -0.2], vec![0.0, 1.0]]).unwrap_err();
        assert!(err.to_string().contains("outside"), "{err}");
        assert!(TransitionMatrix::new(vec![vec![1.0, 0.0]]).is_err());
    }

    #[test]
    fn json_wire_format() {
        let t = TransitionMatrix::known(KnownMatrix::Fashion05);
        let s = serde_json::to_string(&t).unwrap();
        assert_eq!(
            s,
            r#"{"size":3,"rows":[[0.5,0.2,0.3],[0.3,0.5,0.2],[0.2,0.3,0.5]]}"#
        );
        let back: TransitionMatrix = serde_json::from_str(&s).unwrap();
        assert_eq!(back, t);
        let bad = r#"{"size":2,"rows":[[0.5,0.6],[0.0,1.0]]}"#;
        assert!(serde_json::from_str::<TransitionMatrix>(bad).is_err());
    }

    #[test]
    fn posterior_application() {
        let p = [0.7, 0.2, 0.1];
        assert_eq!(TransitionMatrix::identity(3).apply_to_posterior(&p).unwrap(), p.to_vec());
        let t = TransitionMatrix::known(KnownMatrix::Fashion05);
        let q = t.apply_to_posterior(&p).unwrap();
        assert!((q[0] - 0.43).abs() < 1e-12);
        for j in 0..3 {
            let mut e = [0.0; 3];
            e[j] = 1.0;
            assert_eq!(t.apply_to_posterior(&e).unwrap(), t.row(j).to_vec());
        }
        assert!(t.apply_to_posterior(&[0.5, 0.5]).is_err());
        assert!(t.apply_to_posterior(&[0.5, 0.6, -0.1]).is_err());
    }

    #[test]
    fn revise_zero_delta_is_exact() {
        let t = TransitionMatrix::known(KnownMatrix::Fashion06);
        assert_eq!(&revise(&t, &RevisionDelta::zeros(3)).unwrap(), t.as_array());
        assert!(revise(&t, &RevisionDelta::zeros(2)).is_err());
    }

    #[test]
    fn revise_keeps_raw_row_sums() {
        let t = TransitionMatrix::known(KnownMatrix::Fashion05);
        let dt = RevisionDelta::from_array(array![
            [0.0279, 0.0216, 0.0400],
            [0.0243, 0.0219, 0.0228],
            [0.0307, 0.0331, 0.0282]
        ])
        .unwrap();
        let sum = revise(&t, &dt).unwrap();
        assert!((sum[[0, 0]] - 0.5279).abs() < 1e-12);
        assert!((sum.row(0).sum() - 1.0895).abs() < 1e-12);
    }

    #[test]
    fn determinant_small_cases() {
        assert_eq!(determinant(Array2::<f64>::eye(4).view()), 1.0);
        assert!((determinant(array![[0.0, 1.0], [1.0, 0.0]].view()) + 1.0).abs() < 1e-15);
        let f06 = TransitionMatrix::known(KnownMatrix::Fashion06);
        assert!((determinant(f06.as_array().view()) - 0.01).abs() < 1e-12);
    }

    #[test]
    fn sum_average_identical_is_zero() {
        let t = TransitionMatrix::known(KnownMatrix::Fashion05);
        assert_eq!(sum_average_error(&t, t.as_array()).unwrap(), 0.0);
        assert!(sum_average_error(&t, &Array2::zeros((2, 2))).is_err());
    }

    fn stochastic_matrix(c: usize) -> impl Strategy<Value = TransitionMatrix> {
        // Diagonally dominant rows are never singular.
        proptest::collection::vec(proptest::collection::vec(0.0f64..1.0, c), c).prop_map(
            move |raw| {
                let rows = raw
                    .into_iter()
                    .enumerate()
                    .map(|(i, mut r)| {
                        r[i] += c as f64;
                        let s: f64 = r.iter().sum();
                        r.iter().map(|v| v / s).collect()
                    })
                    .collect();
                TransitionMatrix::new(rows).unwrap()
            },
        )
    }

    fn probability(c: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(0.001f64..1.0, c).prop_map(|v| {
            let s: f64 = v.iter().sum();
            v.iter().map(|x| x / s).collect()
        })
    }

    proptest! {
        #[test]
        fn posterior_mass_is_preserved(
            (t, p) in (2usize..6).prop_flat_map(|c| (stochastic_matrix(c), probability(c)))
        ) {
            let q = t.apply_to_posterior(&p).unwrap();
            prop_assert!(q.iter().all(|v| *v >= 0.0));
            prop_assert!((q.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn sum_average_scales_linearly(
            (t, e) in (2usize..6).prop_flat_map(|c| (
                stochastic_matrix(c),
                proptest::collection::vec(0.0f64..1.0, c * c),
            )),
            eps in 0.0f64..0.5,
        ) {
            let c = t.size();
            let e = Array2::from_shape_vec((c, c), e).unwrap();
            let est = t.as_array() + &(eps * &e);
            let got = sum_average_error(&t, &est).unwrap();
            let want = eps * e.sum() / t.as_array().sum();
            prop_assert!((got - want).abs() < 1e-12);
        }
    }
}
