//! Estimators for feature-effect explanations (PD, CD, ALE, DALE), bounds on
//! how far they move when the data or the model is perturbed, and the
//! adversarial and randomization experiments that probe those bounds.
//!
//! Work is data-parallel through rayon by default. Building without the
//! `parallel` feature runs everything sequentially with identical results.

// `!(x >= 0.0)` rejects NaN along with negatives.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analytic;
pub mod attack;
pub mod bounds;
pub mod data;
pub mod effects;
pub mod error;
pub mod model;
pub mod par;
pub mod randomize;

pub use data::{Dataset, Domain, FeatureSet, Grid, GridKind};
pub use effects::{EffectKind, ExplanationCurve, Metric};
pub use error::{Error, Result};
pub use model::{MlpModel, Predictor};
