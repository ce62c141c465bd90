//! Conditional PIT diagnostics and recalibration for probabilistic regression.
//!
//! A base predictive model `F̂(y|x)` is diagnosed through the conditional
//! distribution of its PIT values, `G(α|x) = P(F̂(Y|X) ≤ α | X = x)`. A fitted
//! estimate `Ĝ` both describes how the base is miscalibrated at `x` and
//! repairs it through `F̃(y|x) = Ĝ(F̂(y|x)|x)`.
//!
//! Numerical code is generic over [`Real`] (`f32` or `f64`); the aliases
//! below fix the scalar type.

pub mod distributions;
pub mod error;
pub mod model;
pub mod nn;
pub mod nonparametric;
pub mod parametric;
pub mod pit;
pub mod quadrature;
pub mod real;
pub mod recalibrate;
pub mod rng;
pub mod scoring;
pub mod special;
pub mod synthetic;
pub mod tc;

pub use distributions::{Gaussian, Kumaraswamy, ScalarDistribution, SinhArcsinh};
pub use error::{Error, Result};
pub use model::{BaseSpec, FittedModel, SavedModel};
pub use nonparametric::{fit_nonparametric, MonotoneNet};
pub use parametric::{fit_parametric, ParametricPitModel, TrainConfig};
pub use pit::{
    compute_pit, diagnostic_curve, lds, CalibrationSet, ConstantKumaraswamy, DiagnosticCurve, FailureMode,
    IdentityMap, LocalPitMap, PitMap, PitSample,
};
pub use real::Real;
pub use recalibrate::RecalibratedDistribution;
pub use scoring::{crps, pinball, ScoreConfig, ScoreTable};

pub type Gaussian64 = Gaussian<f64>;
pub type Gaussian32 = Gaussian<f32>;
pub type SinhArcsinh64 = SinhArcsinh<f64>;
pub type SinhArcsinh32 = SinhArcsinh<f32>;
pub type Kumaraswamy64 = Kumaraswamy<f64>;
pub type Kumaraswamy32 = Kumaraswamy<f32>;
pub type CalibrationSet64 = CalibrationSet<f64>;
pub type CalibrationSet32 = CalibrationSet<f32>;
pub type PitSample64 = PitSample<f64>;
pub type PitSample32 = PitSample<f32>;
pub type ParametricPitModel64 = ParametricPitModel<f64>;
pub type ParametricPitModel32 = ParametricPitModel<f32>;
pub type MonotoneNet64 = MonotoneNet<f64>;
pub type MonotoneNet32 = MonotoneNet<f32>;
