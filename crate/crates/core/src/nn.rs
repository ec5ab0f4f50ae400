//! A small fully-connected ReLU classifier with hand-written
//! backpropagation, heavy-ball SGD and a finite-difference gradient checker.

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::Uniform;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;

/// Step used by the central-difference checker.
pub const FD_STEP: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `out x in`
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

/// Weights and biases of the classifier. Hidden layers use ReLU; the last
/// layer is linear and produces logits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Checkpoint", into = "Checkpoint")]
pub struct MlpParams {
    layers: Vec<Layer>,
}

/// JSON checkpoint: layer sizes plus row-major weight and bias arrays.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct Checkpoint {
    dims: Vec<usize>,
    layers: Vec<CheckpointLayer>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct CheckpointLayer {
    weight: Vec<Vec<f64>>,
    bias: Vec<f64>,
}

impl From<MlpParams> for Checkpoint {
    fn from(p: MlpParams) -> Self {
        Checkpoint {
            dims: p.dims(),
            layers: p
                .layers
                .iter()
                .map(|l| CheckpointLayer {
                    weight: l.weight.rows().into_iter().map(|r| r.to_vec()).collect(),
                    bias: l.bias.to_vec(),
                })
                .collect(),
        }
    }
}

impl TryFrom<Checkpoint> for MlpParams {
    type Error = Error;

    fn try_from(c: Checkpoint) -> Result<Self> {
        if c.dims.len() != c.layers.len() + 1 {
            return Err(Error::Config("checkpoint dims do not match layer count".into()));
        }
        let layers = c
            .layers
            .into_iter()
            .zip(c.dims.windows(2))
            .map(|(l, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                if l.weight.len() != fan_out || l.weight.iter().any(|r| r.len() != fan_in) {
                    return Err(Error::DimensionMismatch {
                        expected: fan_out * fan_in,
                        got: l.weight.iter().map(Vec::len).sum(),
                        context: "checkpoint weight shape",
                    });
                }
                let weight = Array2::from_shape_vec((fan_out, fan_in), l.weight.concat())
                    .expect("shape checked");
                Ok(Layer {
                    weight,
                    bias: Array1::from(l.bias),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        MlpParams::from_layers(layers)
    }
}

impl MlpParams {
    /// Uniform `(-1/sqrt(fan_in), 1/sqrt(fan_in))` weights, zero biases.
    pub fn init(dims: &[usize], seed: u64) -> Result<Self> {
        if dims.len() < 2 || dims.contains(&0) {
            return Err(Error::Config(format!(
                "layer sizes must have length >= 2 and be positive, got {dims:?}"
            )));
        }
        let mut rng = rng::seeded(seed);
        let layers = dims
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = 1.0 / (fan_in as f64).sqrt();
                let dist = Uniform::new(-bound, bound).expect("bound is positive");
                let weight = Array2::from_shape_simple_fn((fan_out, fan_in), || rng.sample(dist));
                Layer {
                    weight,
                    bias: Array1::zeros(fan_out),
                }
            })
            .collect();
        Ok(Self { layers })
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("network needs at least one layer".into()));
        }
        for (k, l) in layers.iter().enumerate() {
            if l.bias.len() != l.weight.nrows() {
                return Err(Error::DimensionMismatch {
                    expected: l.weight.nrows(),
                    got: l.bias.len(),
                    context: "bias length vs weight rows",
                });
            }
            if k > 0 && layers[k - 1].weight.nrows() != l.weight.ncols() {
                return Err(Error::DimensionMismatch {
                    expected: layers[k - 1].weight.nrows(),
                    got: l.weight.ncols(),
                    context: "layer input vs previous output",
                });
            }
            if l.weight.iter().chain(l.bias.iter()).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite(format!("parameters of layer {k}")));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim()];
        dims.extend(self.layers.iter().map(|l| l.weight.nrows()));
        dims
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("non-empty").weight.nrows()
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum()
    }

    /// All parameters, layer by layer, weights (row-major) before biases.
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend(l.weight.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) {
        assert_eq!(flat.len(), self.num_params(), "flat parameter length");
        let mut it = flat.iter();
        for l in &mut self.layers {
            for (w, v) in l.weight.iter_mut().zip(&mut it) {
                *w = *v;
            }
            for (b, v) in l.bias.iter_mut().zip(&mut it) {
                *b = *v;
            }
        }
    }

    /// Logits for a batch of rows.
    pub fn logits(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        forward_batch(self, x).map(|(z, _)| z)
    }

    /// Softmax probabilities for a batch of rows.
    pub fn predict_proba(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let mut z = self.logits(x)?;
        for mut row in z.rows_mut() {
            softmax_in_place(row.as_slice_mut().expect("standard layout"));
        }
        Ok(z)
    }
}

/// Intermediates kept by the forward pass for backpropagation.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input to each layer.
    inputs: Vec<Array2<f64>>,
}

impl ForwardCache {
    pub fn batch_size(&self) -> usize {
        self.inputs[0].nrows()
    }
}

/// Forward pass for a single feature vector.
pub fn forward(params: &MlpParams, x: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
    let x = ArrayView2::from_shape((1, x.len()), x).expect("one row");
    let (z, cache) = forward_batch(params, x)?;
    Ok((z.row(0).to_vec(), cache))
}

/// Forward pass for a batch (`rows x input_dim`).
pub fn forward_batch(
    params: &MlpParams,
    x: ArrayView2<'_, f64>,
) -> Result<(Array2<f64>, ForwardCache)> {
    if x.ncols() != params.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: params.input_dim(),
            got: x.ncols(),
            context: "network input width",
        });
    }
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("network input".into()));
    }
    let last = params.layers.len() - 1;
    let mut inputs = Vec::with_capacity(params.layers.len());
    let mut a = x.to_owned();
    for (k, layer) in params.layers.iter().enumerate() {
        let mut z = a.dot(&layer.weight.t());
        z += &layer.bias;
        if k < last {
            z.mapv_inplace(|v| v.max(0.0));
        }
        if z.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("activations of layer {k}")));
        }
        inputs.push(a);
        a = z;
    }
    Ok((a, ForwardCache { inputs }))
}

/// Per-parameter gradients, shaped like [`MlpParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub layers: Vec<Layer>,
    pub loss_value: f64,
}

impl GradientSet {
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend(l.weight.iter());
            out.extend(l.bias.iter());
        }
        out
    }
}

/// Backpropagates `d_logits` (`rows x C`, the gradient of the scalar loss
/// with respect to each logit) through the network.
pub fn backward(
    params: &MlpParams,
    cache: &ForwardCache,
    d_logits: ArrayView2<'_, f64>,
) -> Result<GradientSet> {
    if cache.inputs.len() != params.layers.len() {
        return Err(Error::DimensionMismatch {
            expected: params.layers.len(),
            got: cache.inputs.len(),
            context: "cached layers vs network layers",
        });
    }
    if d_logits.dim() != (cache.batch_size(), params.output_dim()) {
        return Err(Error::DimensionMismatch {
            expected: params.output_dim(),
            got: d_logits.ncols(),
            context: "logit gradient shape",
        });
    }
    let mut grads = Vec::with_capacity(params.layers.len());
    let mut delta = d_logits.to_owned();
    for k in (0..params.layers.len()).rev() {
        let input = &cache.inputs[k];
        let weight = delta.t().dot(input);
        let bias = delta.sum_axis(Axis(0));
        grads.push(Layer { weight, bias });
        if k > 0 {
            let mut back = delta.dot(&params.layers[k].weight);
            // `input` is the ReLU output of layer k-1; it is zero exactly
            // where the unit was inactive.
            Zip::from(&mut back).and(input).for_each(|d, &a| {
                if a <= 0.0 {
                    *d = 0.0;
                }
            });
            delta = back;
        }
    }
    grads.reverse();
    Ok(GradientSet {
        layers: grads,
        loss_value: f64::NAN,
    })
}

/// Numerically stable softmax of one logit vector.
pub fn softmax(logits: &[f64]) -> Result<Vec<f64>> {
    if logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("softmax input".into()));
    }
    let mut out = logits.to_vec();
    softmax_in_place(&mut out);
    Ok(out)
}

pub(crate) fn softmax_in_place(z: &mut [f64]) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in z.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in z.iter_mut() {
        *v /= sum;
    }
}

/// Momentum buffers plus step hyperparameters.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    velocity: Vec<Layer>,
    pub learning_rate: f64,
    pub momentum: f64,
}

impl OptimizerState {
    pub fn new(params: &MlpParams, learning_rate: f64, momentum: f64) -> Result<Self> {
        if !(learning_rate > 0.0 && learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {learning_rate}")));
        }
        if !(0.0..1.0).contains(&momentum) {
            return Err(Error::Config(format!("momentum must lie in [0, 1), got {momentum}")));
        }
        let velocity = params
            .layers
            .iter()
            .map(|l| Layer {
                weight: Array2::zeros(l.weight.raw_dim()),
                bias: Array1::zeros(l.bias.len()),
            })
            .collect();
        Ok(Self {
            velocity,
            learning_rate,
            momentum,
        })
    }

    pub fn velocity(&self) -> &[Layer] {
        &self.velocity
    }
}

/// `v <- momentum * v + g; theta <- theta - lr * v`.
///
/// Nothing is modified when the update would produce a non-finite value.
pub fn sgd_step(params: &mut MlpParams, state: &mut OptimizerState, grads: &GradientSet) -> Result<()> {
    let shapes_match = params.layers.len() == grads.layers.len()
        && params.layers.len() == state.velocity.len()
        && params.layers.iter().zip(&grads.layers).all(|(p, g)| {
            p.weight.dim() == g.weight.dim() && p.bias.dim() == g.bias.dim()
        });
    if !shapes_match {
        return Err(Error::DimensionMismatch {
            expected: params.num_params(),
            got: grads.layers.iter().map(|l| l.weight.len() + l.bias.len()).sum(),
            context: "gradient shape vs parameters",
        });
    }
    let (lr, mu) = (state.learning_rate, state.momentum);
    let new_velocity: Vec<Layer> = state
        .velocity
        .iter()
        .zip(&grads.layers)
        .map(|(v, g)| Layer {
            weight: mu * &v.weight + &g.weight,
            bias: mu * &v.bias + &g.bias,
        })
        .collect();
    let updated: Vec<Layer> = params
        .layers
        .iter()
        .zip(&new_velocity)
        .map(|(p, v)| Layer {
            weight: &p.weight - &(lr * &v.weight),
            bias: &p.bias - &(lr * &v.bias),
        })
        .collect();
    if updated
        .iter()
        .any(|l| l.weight.iter().chain(l.bias.iter()).any(|v| !v.is_finite()))
    {
        return Err(Error::NonFinite("SGD update".into()));
    }
    params.layers = updated;
    state.velocity = new_velocity;
    Ok(())
}

/// Outcome of comparing an analytic gradient against central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_rel_error: f64,
    pub worst_index: usize,
    /// Entries whose relative error exceeded the tolerance.
    pub failures: Vec<usize>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

/// Magnitude below which central differences with [`FD_STEP`] on an O(1)
/// loss are dominated by rounding (about 1e-11 absolute).
pub const REL_ERROR_FLOOR: f64 = 1e-6;

/// `|a - n| / max(|a|, |n|, REL_ERROR_FLOOR)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Central-difference check of `analytic` as the gradient of `f` at `x`.
pub fn check_flat(
    x: &[f64],
    analytic: &[f64],
    tolerance: f64,
    mut f: impl FnMut(&[f64]) -> f64,
) -> GradCheckReport {
    assert_eq!(x.len(), analytic.len(), "gradient length");
    let mut probe = x.to_vec();
    let mut report = GradCheckReport {
        checked: x.len(),
        max_rel_error: 0.0,
        worst_index: 0,
        failures: Vec::new(),
        tolerance,
    };
    for i in 0..x.len() {
        probe[i] = x[i] + FD_STEP;
        let up = f(&probe);
        probe[i] = x[i] - FD_STEP;
        let down = f(&probe);
        probe[i] = x[i];
        let numeric = (up - down) / (2.0 * FD_STEP);
        let rel = relative_error(analytic[i], numeric);
        if rel > report.max_rel_error {
            report.max_rel_error = rel;
            report.worst_index = i;
        }
        if rel > tolerance || !rel.is_finite() {
            report.failures.push(i);
        }
    }
    report
}

/// Checks the network gradient returned by `loss_fn` against central
/// differences of the loss value it returns, one parameter at a time.
pub fn grad_check(
    params: &MlpParams,
    tolerance: f64,
    loss_fn: impl Fn(&MlpParams) -> Result<(f64, GradientSet)>,
) -> Result<GradCheckReport> {
    let (_, analytic) = loss_fn(params)?;
    let mut scratch = params.clone();
    let x = params.flatten();
    let mut failure = None;
    let report = check_flat(&x, &analytic.flatten(), tolerance, |flat| {
        scratch.set_flat(flat);
        match loss_fn(&scratch) {
            Ok((v, _)) => v,
            Err(e) => {
                failure.get_or_insert(e);
                f64::NAN
            }
        }
    });
    match failure {
        Some(e) => Err(e),
        None => Ok(report),
    }
}
