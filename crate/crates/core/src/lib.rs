//! Communication-compressed distributed solvers for variational inequalities
//! and saddle-point problems, run over a simulated parameter-server network
//! with exact bit accounting.
//!
//! Modules, bottom up:
//!
//! * [`problems`]: distributed affine VI instances (bilinear games, Minty
//!   instances) with their Lipschitz and monotonicity constants.
//! * [`compressors`]: Rand-k, Top-k and identity compression.
//! * [`simnet`]: the star network, its bit ledger and shared randomness.
//! * [`algorithms`]: MASHA1/MASHA2, their variance-reduced and
//!   partial-participation variants, and extragradient-type and
//!   descent-ascent baselines.
//! * [`theory`]: step-size bounds, `τ` rules and complexity predictors.
//! * [`metrics`]: distance, restricted gap and operator norm.
//! * [`experiment`]: config files and the run/sweep/compare drivers used by
//!   the command-line tool.

pub mod algorithms;
pub mod compressors;
pub mod error;
pub mod experiment;
pub mod linalg;
pub mod metrics;
pub mod problems;
pub mod rng;
pub mod simnet;
pub mod theory;

pub use error::{Error, Result};
