//! Training loops, snapshot selection, top-1 evaluation and the repeated
//! trial protocol.

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{self, DatasetFingerprint, LabeledDataset};
use crate::error::{Error, Result};
use crate::estimator;
use crate::losses::{self, LossOutput};
use crate::nn::{self, MlpParams, OptimizerState};
use crate::rng::{self, ChaCha8Rng};
use crate::transition::{self, KnownMatrix, MatrixJson, RevisionDelta, TransitionMatrix};

const MODEL_STREAM: u64 = 1;
const SHUFFLE_STREAM: u64 = 2;
const PROBE_STREAM: u64 = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Plain cross-entropy on the noisy labels.
    Baseline,
    /// Forward loss correction.
    Forward,
    /// Importance re-weighting.
    Reweight,
    /// Importance re-weighting followed by learning a slack on T.
    Revision,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::Baseline,
        Method::Forward,
        Method::Reweight,
        Method::Revision,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::Baseline => "baseline",
            Method::Forward => "forward",
            Method::Reweight => "reweight",
            Method::Revision => "revision",
        }
    }

    pub fn needs_transition(self) -> bool {
        self != Method::Baseline
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.pad(self.as_str())
    }
}

/// Where a trial gets its transition matrix from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TSource {
    Known(KnownMatrix),
    Provided(TransitionMatrix),
    Estimate { top_k: usize },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub method: Method,
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub batch_size: usize,
    pub hidden_dims: Vec<usize>,
    pub seed: u64,
    pub t_source: TSource,
    pub trials: usize,
    pub split_fraction: f64,
    /// Epochs of the slack-learning stage (revision only).
    pub revision_epochs: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            method: Method::Baseline,
            epochs: 10,
            lr: 0.001,
            momentum: 0.9,
            batch_size: 64,
            hidden_dims: vec![128, 64],
            seed: 0,
            t_source: TSource::Estimate { top_k: 1 },
            trials: 10,
            split_fraction: 0.8,
            revision_epochs: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.trials == 0 {
            return Err(Error::Config("trials must be at least 1".into()));
        }
        if !(self.split_fraction > 0.0 && self.split_fraction < 1.0) {
            return Err(Error::Config("split_fraction must lie in (0, 1)".into()));
        }
        if self.hidden_dims.contains(&0) {
            return Err(Error::Config("hidden layer sizes must be positive".into()));
        }
        if let TSource::Estimate { top_k: 0 } = self.t_source {
            return Err(Error::Config("top_k must be at least 1".into()));
        }
        // Checked here so a bad value fails before any training starts.
        OptimizerState::new(&MlpParams::init(&[1, 1], 0)?, self.lr, self.momentum)?;
        Ok(())
    }

    pub fn layer_dims(&self, input_dim: usize, num_classes: usize) -> Vec<usize> {
        let mut dims = vec![input_dim];
        dims.extend(&self.hidden_dims);
        dims.push(num_classes);
        dims
    }
}

/// One objective bound to its transition matrix (if any).
#[derive(Debug, Clone, Copy)]
pub enum Objective<'a> {
    CrossEntropy,
    Forward(&'a TransitionMatrix),
    Reweight(&'a TransitionMatrix),
    Revision(&'a TransitionMatrix, &'a RevisionDelta),
}

impl Objective<'_> {
    pub fn evaluate(&self, logits: ArrayView2<'_, f64>, labels: &[usize]) -> Result<LossOutput> {
        match *self {
            Objective::CrossEntropy => losses::cross_entropy(logits, labels),
            Objective::Forward(t) => losses::forward_corrected_loss(logits, labels, t),
            Objective::Reweight(t) => losses::reweighted_loss(logits, labels, t),
            Objective::Revision(t, dt) => losses::revision_loss(logits, labels, t, dt),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean training loss over the epoch's mini-batches; `None` for the
    /// evaluation made before any update.
    pub train_loss: Option<f64>,
    pub validation_loss: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Snapshot with the lowest validation loss.
    pub params: MlpParams,
    pub best_validation_loss: f64,
    pub best_epoch: usize,
    pub history: Vec<EpochRecord>,
    /// Learned slack (revision only), taken from the selected snapshot.
    pub learned_delta: Option<RevisionDelta>,
}

fn validation_loss(params: &MlpParams, val: &LabeledDataset, objective: Objective<'_>) -> Result<f64> {
    let logits = params.logits(val.features().view())?;
    Ok(objective.evaluate(logits.view(), val.labels())?.value)
}

/// While the slack is being trained the revision objective must see its
/// current value rather than the one it was constructed with.
fn with_delta<'a>(objective: Objective<'a>, delta: &'a Option<RevisionDelta>) -> Objective<'a> {
    match (objective, delta) {
        (Objective::Revision(t, _), Some(d)) => Objective::Revision(t, d),
        _ => objective,
    }
}

/// Mini-batch SGD for `epochs` passes, evaluating the same objective on the
/// validation set before training and after each epoch. When `delta` is
/// given it is trained alongside the network (plain SGD, no momentum) and
/// the revision objective is used.
fn fit(
    mut params: MlpParams,
    train: &LabeledDataset,
    val: &LabeledDataset,
    objective: Objective<'_>,
    mut delta: Option<RevisionDelta>,
    epochs: usize,
    cfg: &TrainConfig,
    shuffle_rng: &mut ChaCha8Rng,
) -> Result<TrainOutcome> {
    let mut opt = OptimizerState::new(&params, cfg.lr, cfg.momentum)?;
    let initial = validation_loss(&params, val, with_delta(objective, &delta))?;
    let mut history = vec![EpochRecord {
        epoch: 0,
        train_loss: None,
        validation_loss: initial,
    }];
    let mut best = (initial, 0, params.clone(), delta.clone());

    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 1..=epochs {
        order.shuffle(shuffle_rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let x = train.features().select(Axis(0), batch);
            let y: Vec<usize> = batch.iter().map(|&i| train.labels()[i]).collect();
            let (logits, cache) = nn::forward_batch(&params, x.view())?;
            let out = with_delta(objective, &delta).evaluate(logits.view(), &y)?;
            let mut grads = nn::backward(&params, &cache, out.d_logits.view())?;
            grads.loss_value = out.value;
            nn::sgd_step(&mut params, &mut opt, &grads)?;
            if let (Some(d), Some(g)) = (delta.as_mut(), out.d_delta_t.as_ref()) {
                let m = d.as_array_mut();
                m.scaled_add(-cfg.lr, g);
                if m.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite("revision slack update".into()));
                }
            }
            loss_sum += out.value * batch.len() as f64;
        }
        let val_loss = validation_loss(&params, val, with_delta(objective, &delta))?;
        history.push(EpochRecord {
            epoch,
            train_loss: Some(loss_sum / train.len() as f64),
            validation_loss: val_loss,
        });
        if val_loss < best.0 {
            best = (val_loss, epoch, params.clone(), delta.clone());
        }
    }
    let (best_validation_loss, best_epoch, params, learned_delta) = best;
    Ok(TrainOutcome {
        params,
        best_validation_loss,
        best_epoch,
        history,
        learned_delta,
    })
}

fn init_params(train: &LabeledDataset, cfg: &TrainConfig) -> Result<MlpParams> {
    MlpParams::init(
        &cfg.layer_dims(train.dim(), train.num_classes()),
        rng::derive(cfg.seed, MODEL_STREAM),
    )
}

fn check_pair(train: &LabeledDataset, val: &LabeledDataset) -> Result<()> {
    if train.dim() != val.dim() {
        return Err(Error::DimensionMismatch {
            expected: train.dim(),
            got: val.dim(),
            context: "validation feature width",
        });
    }
    if train.num_classes() != val.num_classes() {
        return Err(Error::DimensionMismatch {
            expected: train.num_classes(),
            got: val.num_classes(),
            context: "validation class count",
        });
    }
    Ok(())
}

/// Trains one classifier with `cfg.method` and returns the snapshot with
/// the lowest validation loss. `t` is required for every method except the
/// baseline, which ignores it.
pub fn train_once(
    train: &LabeledDataset,
    val: &LabeledDataset,
    cfg: &TrainConfig,
    t: Option<&TransitionMatrix>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    check_pair(train, val)?;
    let need_t = || {
        t.ok_or_else(|| Error::Config(format!("method {} needs a transition matrix", cfg.method)))
    };
    let objective = match cfg.method {
        Method::Baseline => Objective::CrossEntropy,
        Method::Forward => Objective::Forward(need_t()?),
        Method::Reweight => Objective::Reweight(need_t()?),
        Method::Revision => {
            return train_revision(train, val, cfg, need_t()?, None).map(|r| r.into_outcome());
        }
    };
    if let Some(t) = t.filter(|_| cfg.method.needs_transition()) {
        if t.size() != train.num_classes() {
            return Err(Error::DimensionMismatch {
                expected: train.num_classes(),
                got: t.size(),
                context: "transition matrix size vs classes",
            });
        }
    }
    let params = init_params(train, cfg)?;
    let mut shuffle = rng::seeded(rng::derive(cfg.seed, SHUFFLE_STREAM));
    fit(params, train, val, objective, None, cfg.epochs, cfg, &mut shuffle)
}

#[derive(Debug, Clone)]
pub struct RevisionOutcome {
    /// Fixed-T importance re-weighting from the starting point.
    pub stage1: TrainOutcome,
    /// Joint training of the network and the slack from stage 1's snapshot.
    pub stage2: TrainOutcome,
    pub delta: RevisionDelta,
}

impl RevisionOutcome {
    pub fn into_outcome(self) -> TrainOutcome {
        self.stage2
    }
}

/// Two-stage T-Revision.
///
/// Stage 1 trains with the re-weighted loss and `t_init` held fixed for
/// `cfg.epochs`, starting from `warm_start` or a fresh initialization.
/// Stage 2 starts from stage 1's selected snapshot with a zero slack and
/// runs `cfg.revision_epochs` of joint updates, selecting on the revision
/// objective over the validation set.
pub fn train_revision(
    train: &LabeledDataset,
    val: &LabeledDataset,
    cfg: &TrainConfig,
    t_init: &TransitionMatrix,
    warm_start: Option<MlpParams>,
) -> Result<RevisionOutcome> {
    cfg.validate()?;
    check_pair(train, val)?;
    if t_init.size() != train.num_classes() {
        return Err(Error::DimensionMismatch {
            expected: train.num_classes(),
            got: t_init.size(),
            context: "transition matrix size vs classes",
        });
    }
    let start = match warm_start {
        Some(p) => {
            if p.dims() != cfg.layer_dims(train.dim(), train.num_classes()) {
                return Err(Error::Config("warm-start network has the wrong shape".into()));
            }
            p
        }
        None => init_params(train, cfg)?,
    };
    let mut shuffle = rng::seeded(rng::derive(cfg.seed, SHUFFLE_STREAM));
    let stage1 = fit(
        start,
        train,
        val,
        Objective::Reweight(t_init),
        None,
        cfg.epochs,
        cfg,
        &mut shuffle,
    )?;
    let zero = RevisionDelta::zeros(t_init.size());
    let stage2 = fit(
        stage1.params.clone(),
        train,
        val,
        Objective::Revision(t_init, &zero),
        Some(zero.clone()),
        cfg.revision_epochs,
        cfg,
        &mut shuffle,
    )?;
    let delta = stage2.learned_delta.clone().unwrap_or(zero);
    Ok(RevisionOutcome {
        stage1,
        stage2,
        delta,
    })
}

/// Fraction of rows whose highest-probability class equals the label.
/// Ties resolve to the lowest class index.
pub fn evaluate_top1(model: &MlpParams, test: &LabeledDataset) -> Result<f64> {
    if model.output_dim() != test.num_classes() {
        return Err(Error::DimensionMismatch {
            expected: model.output_dim(),
            got: test.num_classes(),
            context: "model classes vs test classes",
        });
    }
    let probs = model.predict_proba(test.features().view())?;
    let correct = probs
        .rows()
        .into_iter()
        .zip(test.labels())
        .filter(|(row, &label)| argmax(row.as_slice().expect("standard layout")) == label)
        .count();
    Ok(correct as f64 / test.len() as f64)
}

fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate() {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// One trial of the repeated-split protocol.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialResult {
    pub trial: usize,
    pub seed_used: u64,
    pub test_accuracy: Option<f64>,
    pub best_validation_loss: Option<f64>,
    pub estimated_t: Option<MatrixJson>,
    /// Sum-average error of `estimated_t` against the true matrix, when
    /// both are known.
    pub estimation_error: Option<f64>,
    pub learned_delta_t: Option<MatrixJson>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: TrainConfig,
    pub pool: DatasetFingerprint,
    pub test: DatasetFingerprint,
    pub true_t: Option<MatrixJson>,
    pub trials: Vec<TrialResult>,
    /// Over successful trials only.
    pub mean_accuracy: Option<f64>,
    /// Population standard deviation over successful trials.
    pub std_accuracy: Option<f64>,
    pub failed_trials: usize,
}

impl ExperimentReport {
    pub fn accuracies(&self) -> Vec<f64> {
        self.trials.iter().filter_map(|t| t.test_accuracy).collect()
    }
}

/// Mean and population standard deviation.
pub fn mean_std(values: &[f64]) -> Option<(f64, f64)> {
    if values.is_empty() {
        return None;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Some((mean, var.sqrt()))
}

/// The repeated-split protocol, sequentially.
///
/// `pool` holds the noisy labelled data that is split into train and
/// validation for each trial; `test` must carry clean labels.
pub fn run_trials(
    pool: &LabeledDataset,
    test: &LabeledDataset,
    t_true: Option<&TransitionMatrix>,
    cfg: &TrainConfig,
) -> Result<ExperimentReport> {
    run_trials_parallel(pool, test, t_true, cfg, 0)
}

/// As [`run_trials`], running up to `threads` trials at once (`0` or `1`
/// means sequential). The report does not depend on the thread count.
pub fn run_trials_parallel(
    pool: &LabeledDataset,
    test: &LabeledDataset,
    t_true: Option<&TransitionMatrix>,
    cfg: &TrainConfig,
    threads: usize,
) -> Result<ExperimentReport> {
    cfg.validate()?;
    if pool.dim() != test.dim() || pool.num_classes() != test.num_classes() {
        return Err(Error::DimensionMismatch {
            expected: pool.dim(),
            got: test.dim(),
            context: "test set shape vs pool",
        });
    }
    if let Some(t) = t_true {
        if t.size() != pool.num_classes() {
            return Err(Error::DimensionMismatch {
                expected: pool.num_classes(),
                got: t.size(),
                context: "true transition matrix size",
            });
        }
    }
    let run = |k: usize| run_one_trial(pool, test, t_true, cfg, k);
    let mut trials: Vec<TrialResult> = if threads > 1 {
        let tp = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        tp.install(|| (0..cfg.trials).into_par_iter().map(run).collect())
    } else {
        (0..cfg.trials).map(run).collect()
    };
    trials.sort_by_key(|t| t.trial);

    let accs: Vec<f64> = trials.iter().filter_map(|t| t.test_accuracy).collect();
    let stats = mean_std(&accs);
    Ok(ExperimentReport {
        config: cfg.clone(),
        pool: pool.fingerprint(),
        test: test.fingerprint(),
        true_t: t_true.map(|t| MatrixJson::from_array(t.as_array())),
        failed_trials: trials.len() - accs.len(),
        mean_accuracy: stats.map(|s| s.0),
        std_accuracy: stats.map(|s| s.1),
        trials,
    })
}

fn run_one_trial(
    pool: &LabeledDataset,
    test: &LabeledDataset,
    t_true: Option<&TransitionMatrix>,
    cfg: &TrainConfig,
    k: usize,
) -> TrialResult {
    let seed = cfg.seed.wrapping_add(k as u64);
    let mut result = TrialResult {
        trial: k,
        seed_used: seed,
        test_accuracy: None,
        best_validation_loss: None,
        estimated_t: None,
        estimation_error: None,
        learned_delta_t: None,
        error: None,
    };
    if let Err(e) = trial_body(pool, test, t_true, cfg, seed, &mut result) {
        result.error = Some(e.to_string());
        result.test_accuracy = None;
    }
    result
}

fn trial_body(
    pool: &LabeledDataset,
    test: &LabeledDataset,
    t_true: Option<&TransitionMatrix>,
    cfg: &TrainConfig,
    seed: u64,
    result: &mut TrialResult,
) -> Result<()> {
    let trial_cfg = TrainConfig {
        seed,
        ..cfg.clone()
    };
    let pair = dataset::split(pool, cfg.split_fraction, seed)?;

    let mut warm_start = None;
    let t = if cfg.method.needs_transition() {
        match &cfg.t_source {
            TSource::Known(name) => Some(TransitionMatrix::known(*name)),
            TSource::Provided(t) => Some(t.clone()),
            TSource::Estimate { top_k } => {
                let probe_cfg = TrainConfig {
                    seed: rng::derive(seed, PROBE_STREAM),
                    ..trial_cfg.clone()
                };
                let (est, probe) = estimator::estimate_transition(pool, &probe_cfg, *top_k)?;
                result.estimated_t = Some(est.to_json());
                if let Some(truth) = t_true {
                    result.estimation_error = Some(transition::sum_average_error(truth, &est.matrix)?);
                }
                if cfg.method == Method::Revision {
                    warm_start = Some(probe);
                }
                Some(TransitionMatrix::from_array(est.matrix)?)
            }
        }
    } else {
        None
    };

    let outcome = match (cfg.method, t.as_ref()) {
        (Method::Revision, Some(t)) => {
            let r = train_revision(&pair.train, &pair.validation, &trial_cfg, t, warm_start)?;
            result.learned_delta_t = Some(MatrixJson::from_array(r.delta.as_array()));
            r.into_outcome()
        }
        _ => train_once(&pair.train, &pair.validation, &trial_cfg, t.as_ref())?,
    };
    result.best_validation_loss = Some(outcome.best_validation_loss);
    result.test_accuracy = Some(evaluate_top1(&outcome.params, test)?);
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub mean_accuracy: Option<f64>,
    pub std_accuracy: Option<f64>,
    pub trials: usize,
    pub failed_trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub summary: Vec<MethodSummary>,
    pub reports: Vec<ExperimentReport>,
}

impl ComparisonReport {
    pub fn get(&self, method: Method) -> Option<&MethodSummary> {
        self.summary.iter().find(|s| s.method == method)
    }

    pub fn failed_trials(&self) -> usize {
        self.summary.iter().map(|s| s.failed_trials).sum()
    }
}

/// Runs the four methods over the same seeds and splits.
///
/// Corrected methods use `t` unless `base_cfg.t_source` asks for an
/// estimate, in which case `t` is only the reference for estimation error.
pub fn compare_methods(
    pool: &LabeledDataset,
    test: &LabeledDataset,
    t: &TransitionMatrix,
    base_cfg: &TrainConfig,
    threads: usize,
) -> Result<ComparisonReport> {
    let t_source = match base_cfg.t_source {
        TSource::Estimate { .. } => base_cfg.t_source.clone(),
        _ => TSource::Provided(t.clone()),
    };
    let mut summary = Vec::new();
    let mut reports = Vec::new();
    for method in Method::ALL {
        let cfg = TrainConfig {
            method,
            t_source: t_source.clone(),
            ..base_cfg.clone()
        };
        let report = run_trials_parallel(pool, test, Some(t), &cfg, threads)?;
        summary.push(MethodSummary {
            method,
            mean_accuracy: report.mean_accuracy,
            std_accuracy: report.std_accuracy,
            trials: report.trials.len(),
            failed_trials: report.failed_trials,
        });
        reports.push(report);
    }
    Ok(ComparisonReport { summary, reports })
}

/// Batch logits for a whole dataset; convenience for examples and tests.
pub fn dataset_logits(model: &MlpParams, ds: &LabeledDataset) -> Result<Array2<f64>> {
    model.logits(ds.features().view())
}
