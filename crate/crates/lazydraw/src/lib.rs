//! Sublinear sampling and estimation for large discrete log-linear models.
//!
//! Given feature rows phi(x_i) and a parameter vector theta, the model is
//! p(i) proportional to e^{scale * theta . phi(x_i)}. Exact sampling and
//! normalization are O(n); this crate amortizes that cost across queries by
//! perturbing scores with Gumbel noise lazily: only a retrieved top-k set and
//! a small random tail are ever touched, with the tail size driven by a
//! cutoff on the noise. On top of the sampler sit unbiased estimators for the
//! partition function and bounded expectations, a stochastic
//! maximum-likelihood trainer, and a random-walk driver, all over a pluggable
//! top-k inner-product search layer (exact scan, IVF, or an LSH ladder with a
//! score-gap certificate).
//!
//! The `lazydraw` binary exposes the same operations on files; see the crate
//! README for formats and subcommands.

pub mod cli;
pub mod data;
pub mod error;
pub mod estimators;
pub mod gumbel;
pub mod learn;
pub mod manifest;
pub mod mips;
pub mod model;
pub mod rng;
pub mod sampler;
pub mod walk;
pub(crate) mod wire;

pub use error::{Error, Result};
pub use model::{Dataset, Query, ScoreView, ScoredId, TopKResult};
