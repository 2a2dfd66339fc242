//! Latent expertise processes for crowdlearning sites.
//!
//! Users learn from knowledge items (learning events) and post contributions
//! that others score. Each user's per-topic expertise is an initial level plus
//! a linear off-site trend plus the exponentially forgotten knowledge of every
//! item they learned from. Contribution scores are Poisson with the
//! topic-averaged expertise as mean. Because the mean is linear in all
//! parameters, maximum likelihood under nonnegativity is a concave program,
//! solved here with a bounded limited-memory quasi-Newton method.
//!
//! Module map:
//! - [`event_model`]: dataset types, JSON-lines I/O, validation, filtering,
//!   detrending and train/test splitting.
//! - [`kernel`]: forgetting kernel, parameter sets, expertise and score model.
//! - [`likelihood`]: parameter packing, sparse design matrix, log-likelihood
//!   and gradient.
//! - [`solver`]: box-constrained quasi-Newton fit and half-life sweeps.
//! - [`synth`]: synthetic data with known ground truth.
//! - [`evaluation`]: parameter recovery and pairwise score prediction.
//! - [`analytics`]: post-fit knowledge and learning analyses.
//! - [`config`]: flat `key = value` settings files.
//! - [`export`]: CSV tables.
//! - [`cli`]: command implementations behind the `crowdlearn` binary.

pub mod analytics;
pub mod cli;
pub mod config;
pub mod error;
pub mod evaluation;
pub mod event_model;
pub mod export;
pub mod kernel;
pub mod likelihood;
pub mod rng;
pub mod solver;
pub mod synth;

pub use error::{Error, Result};
pub use event_model::{
    Contribution, Dataset, FilterConfig, Item, ItemId, LearningEvent, TestSet, TopicId, TopicSet,
    UserId, ValidationReport,
};
pub use kernel::{Kernel, ParameterSet};
pub use likelihood::{DesignMatrix, ParameterIndex};
pub use solver::{ConvergedBy, FitResult, SolverOptions};
