//! Knockout: training-time input augmentation that teaches one network both
//! the full conditional `p(Y | X)` and every marginal `p(Y | X_{-M})`.
//!
//! The crate is organised bottom-up:
//!
//! * [`schema`] describes features and derives placeholder values,
//! * [`missingness`] holds masks, `p(M)` and missingness injection,
//! * [`augment`] is the knockout operator itself,
//! * [`oracle`] enumerates small discrete joints exactly,
//! * [`nn`] is a small dense network trainer,
//! * [`synth`] generates synthetic worlds with known Bayes predictors,
//! * [`baselines`] holds the imputation comparisons,
//! * [`methods`] fits every compared method into a common predictor,
//! * [`eval`] computes per-pattern metrics and sweep reports,
//! * [`experiment`] ties everything into config-driven runs.

pub mod augment;
pub mod baselines;
pub mod data;
pub mod error;
pub mod eval;
pub mod experiment;
pub mod methods;
pub mod missingness;
pub mod nn;
pub mod oracle;
pub mod schema;
pub mod seed;
pub mod synth;
pub mod verify;

pub use error::{Error, Result};
