//! Joint Bayesian modeling of rankings and ratings under heterogeneous
//! preferences.
//!
//! The central object is the BTL-Binomial distribution: a judge's partial
//! ranking follows a Bradley-Terry-Luce model with worths `exp(-theta * p_j)`
//! while their integer ratings follow independent `Binomial(M, p_j)` laws, so
//! the object-quality vector `p` ties both data types together. Heterogeneity
//! across judges is captured by a mixture of finite mixtures (MFM) whose
//! number of classes carries a prior and is sampled by a telescoping Gibbs
//! sampler. The crate provides:
//!
//! - [`data`]: the observed-data representation, validation, and CSV loading;
//! - [`model`]: BTL-Binomial log-densities, pairwise probabilities, consensus
//!   rankings, and exact sampling;
//! - [`priors`]: prior densities, prior samplers, and empirical-Bayes fitting
//!   of the Beta hyperparameters;
//! - [`mfm`]: the telescoping sampler for the mixture of finite mixtures;
//! - [`fixedk`]: a fixed-K Gibbs sampler and an EM algorithm for MAP/ML
//!   estimation;
//! - [`diagnostics`]: posterior-predictive checks, co-clustering similarity,
//!   conditional summaries, and trace exports;
//! - [`sim`]: a simulation harness comparing joint modeling against the
//!   ratings-only baseline on balanced review designs.
//!
//! All numerical code is generic over the scalar type through [`num::Real`]
//! (any `num_traits::Float` with the usual extras); concrete `f64` aliases
//! such as [`ClassParams64`] are exported at the crate root. `f64` is the
//! type every tolerance in the test suite is calibrated for.

pub mod data;
pub mod diagnostics;
pub mod fixedk;
pub mod mfm;
pub mod model;
pub mod num;
pub mod priors;
pub mod rng;
pub mod samples;
pub mod sim;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// One message per problem found while reading the input files.
    #[error("failed to load dataset:\n  {}", .0.join("\n  "))]
    Load(Vec<String>),
    /// The assembled dataset violates a structural invariant.
    #[error("dataset invalid:\n  {}", .0.join("\n  "))]
    Invalid(Vec<String>),
    #[error("moment fit infeasible: {0}")]
    MomentFit(String),
    #[error("cannot sample from an improper prior (rate hyperparameter is zero)")]
    ImproperPrior,
    #[error("judge {0} is inconsistent with every class (all log-likelihoods are -inf)")]
    JudgeInconsistent(usize),
    #[error("no posterior mass at K+ = {0}")]
    NoPosteriorMass(usize),
    #[error("EM regression: objective decreased by {0:.3e}; optimizer misconfigured")]
    EmRegression(f64),
    #[error("requested {requested} replicates but only {available} draws are retained")]
    NotEnoughDraws { requested: usize, available: usize },
    #[error("I*R = {i}*{r} must be divisible by J = {j} for a balanced design")]
    UnbalancedDesign { i: usize, r: usize, j: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Csv {
        path: String,
        #[source]
        source: csv::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

pub use data::{JudgeRecord, PreferenceDataset, RankingStyle, Recode};
pub use model::{ClassParams, ConsensusRanking};
pub use num::Real;
pub use priors::Hyperparams;

/// `f64` aliases for the generic core types. These are what the CLI and most
/// callers use; `f32` instantiations work but are not tested at the same
/// tolerances.
pub type ClassParams64 = model::ClassParams<f64>;
pub type Hyperparams64 = priors::Hyperparams<f64>;
pub type ChainConfig64 = mfm::ChainConfig<f64>;
pub type MixtureState64 = mfm::MixtureState<f64>;
pub type PosteriorSamples64 = samples::PosteriorSamples<f64>;
pub type EMState64 = fixedk::EMState<f64>;
pub type SimScenario64 = sim::SimScenario<f64>;

/// `f32` aliases, provided for completeness.
pub type ClassParams32 = model::ClassParams<f32>;
pub type Hyperparams32 = priors::Hyperparams<f32>;
pub type ChainConfig32 = mfm::ChainConfig<f32>;
pub type MixtureState32 = mfm::MixtureState<f32>;
pub type PosteriorSamples32 = samples::PosteriorSamples<f32>;
pub type EMState32 = fixedk::EMState<f32>;
pub type SimScenario32 = sim::SimScenario<f32>;
