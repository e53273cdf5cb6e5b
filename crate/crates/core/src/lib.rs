//! Shooting solver for radial solutions of `-Δₙu = λ f(u)` on the unit
//! ball, with the linearised flow and closed-form large-`γ` asymptotics.
//!
//! The usual entry point is a [`Problem`] (a [`Nonlinearity`] plus a
//! [`ProblemConfig`]) handed to [`shoot`], [`sweep`] or [`solve_v1`].

pub mod asymptotics;
pub mod config;
pub mod error;
pub mod linearization;
pub mod nonlinearity;
pub mod ode;
pub mod quadrature;
pub mod rk;
pub mod shooting;
pub mod verify;

pub use asymptotics::{
    error_decay_report, predict_all, AsymptoticPrediction, DecayReport, GammaSnapshot, Quantity,
};
pub use config::{Problem, ProblemConfig};
pub use error::{Error, Result};
pub use linearization::{
    detect_turning, lemma46_residual, solve_v1, t_prime, TurningReport, V1Solution,
};
pub use nonlinearity::{Family, HypothesisReport, Nonlinearity, ScanSpec};
pub use ode::{EnergyRecord, FlowTrajectory, LinTrajectory, StartKind, StopRule, Variable};
pub use shooting::{
    classify_small_gamma, export_profile, log_grid, shoot, singular_reduce, sweep,
    BifurcationCurve, CurveRow, RegimeLabel, RegimeReport, ShootOutcome,
};
pub use verify::{run_suite, Suite, VerifyReport};
