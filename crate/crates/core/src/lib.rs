//! Learning with class-conditional label noise.
//!
//! The crate covers the whole pipeline at desk scale:
//!
//! - [`dataset`]: CSV I/O, Gaussian-blob generation, label flipping through a
//!   transition matrix, random splits.
//! - [`transition`]: validated transition matrices, the revision slack and
//!   the sum-average estimation error.
//! - [`nn`]: a small ReLU network with backpropagation and momentum SGD.
//! - [`losses`]: cross-entropy, forward correction, importance re-weighting
//!   and the T-Revision objective.
//! - [`estimator`]: anchor-point estimation of the transition matrix.
//! - [`trainer`]: training loops, the repeated-split trial protocol and
//!   method comparison.
//! - [`report`] and [`cli`]: JSON/CSV/SVG outputs and the command-line tool.
//!
//! Runnable walkthroughs live in `examples/`.

pub mod cli;
pub mod dataset;
pub mod error;
pub mod estimator;
pub mod losses;
pub mod nn;
pub mod report;
pub mod rng;
pub mod trainer;
pub mod transition;

pub use dataset::{LabeledDataset, SyntheticSpec};
pub use error::{Error, Result};
pub use nn::MlpParams;
pub use trainer::{Method, TSource, TrainConfig};
pub use transition::{KnownMatrix, RevisionDelta, TransitionMatrix};
