//! The `noisykit` command-line tool.
//!
//! Exit codes: 0 on success, 1 on runtime failure (including any failed
//! trial), 2 on usage or validation errors. Flags override values from
//! `--config`, which override built-in defaults. Validation happens before
//! anything is written, and every file is written atomically together
//! with a `<file>.manifest.json`.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use crate::dataset::{self, LabeledDataset, SyntheticSpec};
use crate::error::Error;
use crate::estimator;
use crate::report::{self, FileHash, RunManifest};
use crate::rng::RNG_ALGORITHM;
use crate::trainer::{self, Method, TSource, TrainConfig};
use crate::transition::{self, KnownMatrix, MatrixJson, TransitionMatrix};

/// Environment variable capping how many trials run in parallel.
pub const THREADS_ENV: &str = "NOISYKIT_THREADS";

#[derive(Debug, Parser)]
#[command(name = "noisykit", version, about = "Learning with class-conditional label noise")]
pub struct Cli {
    /// JSON training configuration; command-line flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a Gaussian-blob dataset.
    Synth(SynthArgs),
    /// Flip labels of a dataset through a transition matrix.
    Inject(InjectArgs),
    /// Estimate the transition matrix of a noisy dataset from anchor points.
    #[command(name = "estimate-t")]
    EstimateT(EstimateArgs),
    /// Run the repeated-split protocol for one method.
    Train(TrainArgs),
    /// Run all four methods side by side, or score an estimated matrix.
    Compare(CompareArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub classes: usize,
    #[arg(long)]
    pub dim: usize,
    #[arg(long = "per-class")]
    pub per_class: usize,
    #[arg(long)]
    pub sep: f64,
    #[arg(long)]
    pub sigma: f64,
    #[arg(long)]
    pub seed: u64,
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Args, Default)]
pub struct TFlags {
    /// Named matrix: fashion05, fashion06 or identity.
    #[arg(long = "t-known", group = "tsrc")]
    pub t_known: Option<String>,
    /// JSON file in the `{"size": C, "rows": [...]}` format.
    #[arg(long = "t-file", group = "tsrc")]
    pub t_file: Option<PathBuf>,
    /// Rows separated by `;`, entries by `,`.
    #[arg(long = "t-inline", group = "tsrc")]
    pub t_inline: Option<String>,
}

impl TFlags {
    fn is_set(&self) -> bool {
        self.t_known.is_some() || self.t_file.is_some() || self.t_inline.is_some()
    }

    fn resolve(&self, num_classes: usize) -> Result<Option<(TransitionMatrix, TSource)>, CliError> {
        let t = if let Some(name) = &self.t_known {
            if name == "identity" {
                let t = TransitionMatrix::identity(num_classes);
                Some((t.clone(), TSource::Provided(t)))
            } else {
                let known: KnownMatrix = name.parse().map_err(CliError::usage)?;
                Some((TransitionMatrix::known(known), TSource::Known(known)))
            }
        } else if let Some(path) = &self.t_file {
            let text = std::fs::read_to_string(path).map_err(|e| CliError::usage(Error::io(path, e)))?;
            let t: TransitionMatrix = serde_json::from_str(&text)
                .map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            Some((t.clone(), TSource::Provided(t)))
        } else if let Some(inline) = &self.t_inline {
            let rows = inline
                .split(';')
                .map(|r| {
                    r.split(',')
                        .map(|v| v.trim().parse::<f64>())
                        .collect::<Result<Vec<_>, _>>()
                })
                .collect::<Result<Vec<_>, _>>()
                .map_err(|e| CliError::Usage(format!("--t-inline: {e}")))?;
            let t = TransitionMatrix::new(rows).map_err(CliError::usage)?;
            Some((t.clone(), TSource::Provided(t)))
        } else {
            None
        };
        if let Some((t, _)) = &t {
            if t.size() != num_classes {
                return Err(CliError::Usage(format!(
                    "transition matrix is {}x{} but the data has {num_classes} classes",
                    t.size(),
                    t.size()
                )));
            }
        }
        Ok(t)
    }
}

#[derive(Debug, Args)]
pub struct InjectArgs {
    #[arg(short, long)]
    pub input: PathBuf,
    #[command(flatten)]
    pub t: TFlags,
    #[arg(long)]
    pub seed: u64,
    #[arg(short, long)]
    pub output: PathBuf,
}

/// Training hyperparameters shared by the training commands.
#[derive(Debug, Args, Default)]
pub struct TrainFlags {
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub momentum: Option<f64>,
    #[arg(long = "batch-size")]
    pub batch_size: Option<usize>,
    /// Hidden layer sizes, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub hidden: Option<Vec<usize>>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub trials: Option<usize>,
    #[arg(long)]
    pub split: Option<f64>,
    #[arg(long = "revision-epochs")]
    pub revision_epochs: Option<usize>,
}

impl TrainFlags {
    fn apply(&self, mut cfg: TrainConfig) -> TrainConfig {
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.lr {
            cfg.lr = v;
        }
        if let Some(v) = self.momentum {
            cfg.momentum = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = &self.hidden {
            cfg.hidden_dims = v.clone();
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.trials {
            cfg.trials = v;
        }
        if let Some(v) = self.split {
            cfg.split_fraction = v;
        }
        if let Some(v) = self.revision_epochs {
            cfg.revision_epochs = v;
        }
        cfg
    }
}

#[derive(Debug, Args)]
pub struct EstimateArgs {
    #[arg(short, long)]
    pub input: PathBuf,
    #[arg(long = "top-k", default_value_t = 1)]
    pub top_k: usize,
    #[command(flatten)]
    pub train: TrainFlags,
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum TSourceFlag {
    Known,
    Provided,
    Estimate,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Noisy labelled pool, split into train/validation per trial.
    #[arg(short, long)]
    pub input: PathBuf,
    /// Clean-label test set.
    #[arg(long)]
    pub test: PathBuf,
    #[arg(long, value_enum)]
    pub method: Option<Method>,
    #[command(flatten)]
    pub t: TFlags,
    /// `estimate` runs anchor-point estimation per trial; the T flags then
    /// only serve as the reference for estimation error.
    #[arg(long = "t-source", value_enum)]
    pub t_source: Option<TSourceFlag>,
    #[arg(long = "top-k")]
    pub top_k: Option<usize>,
    #[command(flatten)]
    pub train: TrainFlags,
    #[arg(short, long)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct CompareArgs {
    #[arg(short, long, required_unless_present = "score_t")]
    pub input: Option<PathBuf>,
    #[arg(long, required_unless_present = "score_t")]
    pub test: Option<PathBuf>,
    #[command(flatten)]
    pub t: TFlags,
    #[arg(long = "t-source", value_enum)]
    pub t_source: Option<TSourceFlag>,
    #[arg(long = "top-k")]
    pub top_k: Option<usize>,
    /// Print the sum-average error of this estimated matrix against the
    /// matrix given by the T flags, then exit.
    #[arg(long = "score-t")]
    pub score_t: Option<PathBuf>,
    #[command(flatten)]
    pub train: TrainFlags,
    #[arg(short, long, required_unless_present = "score_t")]
    pub output: Option<PathBuf>,
}

#[derive(Debug)]
pub enum CliError {
    /// Bad flags or invalid input data; exit code 2.
    Usage(String),
    /// Failure while running; exit code 1.
    Runtime(String),
}

impl CliError {
    fn usage(e: Error) -> Self {
        CliError::Usage(e.to_string())
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::Io { .. }
            | Error::NonFinite(_)
            | Error::DegenerateDenominator { .. } => CliError::Runtime(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    let recorded: Vec<String> = args.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    match run(cli, recorded) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn threads_from_env() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.trim().parse().ok())
        .unwrap_or(0)
}

fn base_config(path: Option<&Path>) -> Result<TrainConfig, CliError> {
    match path {
        None => Ok(TrainConfig::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| CliError::usage(Error::io(p, e)))?;
            serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))
        }
    }
}

/// Loads the pool and test set and reconciles their class counts.
fn load_pair(pool: &Path, test: &Path) -> Result<(LabeledDataset, LabeledDataset), CliError> {
    let pool = dataset::load_csv(pool).map_err(CliError::usage)?;
    let test = dataset::load_csv(test).map_err(CliError::usage)?;
    if pool.dim() != test.dim() {
        return Err(CliError::Usage(format!(
            "pool has {} features but test set has {}",
            pool.dim(),
            test.dim()
        )));
    }
    let c = pool.num_classes().max(test.num_classes());
    Ok((
        pool.with_num_classes(c).map_err(CliError::usage)?,
        test.with_num_classes(c).map_err(CliError::usage)?,
    ))
}

struct Output {
    path: PathBuf,
    bytes: Vec<u8>,
}

fn write_outputs(
    command: &str,
    args: Vec<String>,
    config: serde_json::Value,
    inputs: &[&Path],
    outputs: Vec<Output>,
) -> Result<(), CliError> {
    let input_hashes = inputs
        .iter()
        .map(|p| FileHash::of_file(p))
        .collect::<crate::Result<Vec<_>>>()?;
    let hashes: Vec<FileHash> = outputs
        .iter()
        .map(|o| FileHash {
            path: o.path.clone(),
            sha256: hex::encode(<sha2::Sha256 as sha2::Digest>::digest(&o.bytes)),
        })
        .collect();
    let manifest = RunManifest {
        command: command.to_string(),
        args,
        resolved_config: config,
        input_hashes,
        outputs: hashes,
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        rng_algorithm: RNG_ALGORITHM.to_string(),
        created_unix_secs: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0),
    };
    let manifest_json = report::to_sorted_json(&manifest)?;
    for o in &outputs {
        report::write_atomic(&o.path, &o.bytes)?;
        report::write_atomic(&report::manifest_path(&o.path), manifest_json.as_bytes())?;
    }
    Ok(())
}

fn json_value<T: Serialize>(v: &T) -> Result<serde_json::Value, CliError> {
    serde_json::to_value(v).map_err(|e| CliError::Runtime(e.to_string()))
}

fn sibling(path: &Path, ext: &str) -> PathBuf {
    path.with_extension(ext)
}

pub fn run(cli: Cli, args: Vec<String>) -> Result<i32, CliError> {
    let base = base_config(cli.config.as_deref())?;
    match cli.command {
        Command::Synth(a) => {
            let spec = SyntheticSpec {
                num_classes: a.classes,
                dim: a.dim,
                samples_per_class: a.per_class,
                class_separation: a.sep,
                noise_sigma: a.sigma,
                seed: a.seed,
            };
            let ds = dataset::synthesize(&spec).map_err(CliError::usage)?;
            let out = Output {
                path: a.output,
                bytes: ds.to_csv_string().into_bytes(),
            };
            write_outputs("synth", args, json_value(&spec)?, &[], vec![out])?;
            Ok(0)
        }
        Command::Inject(a) => {
            let ds = dataset::load_csv(&a.input).map_err(CliError::usage)?;
            let (t, _) = a
                .t
                .resolve(ds.num_classes())?
                .ok_or_else(|| CliError::Usage("one of --t-known, --t-file, --t-inline is required".into()))?;
            let noisy = dataset::inject_noise(&ds, &t, a.seed).map_err(CliError::usage)?;
            let config = serde_json::json!({
                "seed": a.seed,
                "transition": MatrixJson::from_array(t.as_array()),
            });
            let out = Output {
                path: a.output,
                bytes: noisy.to_csv_string().into_bytes(),
            };
            write_outputs("inject", args, config, &[&a.input], vec![out])?;
            Ok(0)
        }
        Command::EstimateT(a) => {
            let ds = dataset::load_csv(&a.input).map_err(CliError::usage)?;
            let cfg = a.train.apply(base);
            cfg.validate().map_err(CliError::usage)?;
            if a.top_k == 0 {
                return Err(CliError::Usage("--top-k must be at least 1".into()));
            }
            let (est, _) = estimator::estimate_transition(&ds, &cfg, a.top_k)?;
            let body = serde_json::json!({
                "size": est.matrix.nrows(),
                "rows": MatrixJson::from_array(&est.matrix).rows,
                "metadata": {
                    "top_k": a.top_k,
                    "probe_seed": cfg.seed,
                    "determinant": est.validity.determinant,
                    "near_singular": est.validity.near_singular,
                },
            });
            if est.validity.near_singular {
                eprintln!("warning: estimated matrix is near-singular");
            }
            let out = Output {
                path: a.output,
                bytes: report::to_sorted_json(&body)?.into_bytes(),
            };
            write_outputs("estimate-t", args, json_value(&cfg)?, &[&a.input], vec![out])?;
            Ok(0)
        }
        Command::Train(a) => {
            let (pool, test) = load_pair(&a.input, &a.test)?;
            let mut cfg = a.train.apply(base);
            if let Some(m) = a.method {
                cfg.method = m;
            }
            let given = a.t.resolve(pool.num_classes())?;
            let reference = resolve_source(&mut cfg, given, a.t_source, a.top_k, a.t.is_set())?;
            cfg.validate().map_err(CliError::usage)?;
            let report = trainer::run_trials_parallel(&pool, &test, reference.as_ref(), &cfg, threads_from_env())?;
            let json = report::to_sorted_json(&report)?;
            let csv = report::experiment_csv(&report);
            let outputs = vec![
                Output {
                    path: a.output.clone(),
                    bytes: json.into_bytes(),
                },
                Output {
                    path: sibling(&a.output, "csv"),
                    bytes: csv.into_bytes(),
                },
            ];
            write_outputs("train", args, json_value(&cfg)?, &[&a.input, &a.test], outputs)?;
            print_failures(&report.trials);
            Ok(if report.failed_trials > 0 { 1 } else { 0 })
        }
        Command::Compare(a) => {
            if let Some(est_path) = &a.score_t {
                return score(est_path, &a.t);
            }
            let (input, test, output) = (
                a.input.expect("required by clap"),
                a.test.expect("required by clap"),
                a.output.expect("required by clap"),
            );
            let (pool, test_ds) = load_pair(&input, &test)?;
            let mut cfg = a.train.apply(base);
            let given = a.t.resolve(pool.num_classes())?;
            let reference = resolve_source(&mut cfg, given, a.t_source, a.top_k, true)?;
            cfg.validate().map_err(CliError::usage)?;
            let t = reference
                .ok_or_else(|| CliError::Usage("compare needs a transition matrix (T flags)".into()))?;
            let cmp = trainer::compare_methods(&pool, &test_ds, &t, &cfg, threads_from_env())?;
            let outputs = vec![
                Output {
                    path: output.clone(),
                    bytes: report::to_sorted_json(&cmp)?.into_bytes(),
                },
                Output {
                    path: sibling(&output, "csv"),
                    bytes: report::comparison_csv(&cmp).into_bytes(),
                },
                Output {
                    path: sibling(&output, "svg"),
                    bytes: report::comparison_svg(&cmp).into_bytes(),
                },
            ];
            write_outputs("compare", args, json_value(&cfg)?, &[&input, &test], outputs)?;
            for s in &cmp.summary {
                println!(
                    "{:<9} mean {:.4} std {:.4} ({} trials, {} failed)",
                    s.method.as_str(),
                    s.mean_accuracy.unwrap_or(f64::NAN),
                    s.std_accuracy.unwrap_or(f64::NAN),
                    s.trials,
                    s.failed_trials
                );
            }
            for r in &cmp.reports {
                print_failures(&r.trials);
            }
            Ok(if cmp.failed_trials() > 0 { 1 } else { 0 })
        }
    }
}

/// Fills `cfg.t_source` from the flags and returns the matrix that serves
/// as ground truth for reporting, if one was given.
fn resolve_source(
    cfg: &mut TrainConfig,
    given: Option<(TransitionMatrix, TSource)>,
    flag: Option<TSourceFlag>,
    top_k: Option<usize>,
    t_flags_set: bool,
) -> Result<Option<TransitionMatrix>, CliError> {
    if cfg.method == Method::Baseline && t_flags_set && flag != Some(TSourceFlag::Estimate) {
        eprintln!("warning: method baseline ignores the transition matrix");
    }
    let reference = given.as_ref().map(|(t, _)| t.clone());
    match flag {
        Some(TSourceFlag::Estimate) => {
            let k = top_k.unwrap_or(match cfg.t_source {
                TSource::Estimate { top_k } => top_k,
                _ => 1,
            });
            cfg.t_source = TSource::Estimate { top_k: k };
        }
        Some(TSourceFlag::Known) | Some(TSourceFlag::Provided) | None => match given {
            Some((_, src)) => cfg.t_source = src,
            None if flag.is_some() => {
                return Err(CliError::Usage("--t-source known/provided needs a T flag".into()));
            }
            None => {
                if let TSource::Estimate { top_k: k } = &mut cfg.t_source {
                    if let Some(v) = top_k {
                        *k = v;
                    }
                }
            }
        },
    }
    let reference = reference.or_else(|| match &cfg.t_source {
        TSource::Known(k) => Some(TransitionMatrix::known(*k)),
        TSource::Provided(t) => Some(t.clone()),
        TSource::Estimate { .. } => None,
    });
    Ok(reference)
}

fn score(est_path: &Path, t: &TFlags) -> Result<i32, CliError> {
    let text = std::fs::read_to_string(est_path).map_err(|e| CliError::usage(Error::io(est_path, e)))?;
    let est: MatrixJson =
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", est_path.display())))?;
    let est = est.to_array().map_err(CliError::usage)?;
    let (truth, _) = t
        .resolve(est.nrows())?
        .ok_or_else(|| CliError::Usage("--score-t needs the true matrix via a T flag".into()))?;
    let err = transition::sum_average_error(&truth, &est).map_err(CliError::usage)?;
    println!("{err}");
    Ok(0)
}

fn print_failures(trials: &[trainer::TrialResult]) {
    for t in trials {
        if let Some(e) = &t.error {
            eprintln!("trial {} (seed {}) failed: {e}", t.trial, t.seed_used);
        }
    }
}
