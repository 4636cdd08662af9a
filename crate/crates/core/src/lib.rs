//! Linear-quadratic Gaussian control with an unobservable Ornstein–Uhlenbeck
//! drift and costly, dynamically controlled information acquisition.
//!
//! The full-information value function separates into a closed-form quadratic
//! in `(x, m)` plus a one-dimensional value function `v(γ)` of the conditional
//! variance. This crate computes both, the optimal acquisition feedback
//! `H*(γ)`, the equilibrium of the controlled variance flow with its parameter
//! sensitivities, and Monte Carlo estimates of the discounted cost under the
//! optimal and benchmark policies.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod equilibrium;
pub mod error;
pub mod full_value;
pub mod hjb;
pub mod io;
pub mod model;
pub mod riccati;
pub mod simulator;

pub use equilibrium::{EquilibriumPoint, SensitivityParameter, SensitivityReport};
pub use error::{Error, Result};
pub use full_value::FullValueModel;
pub use hjb::{Grid, ValueTable};
pub use model::{Coefficients, CostKind, CostSpec, CustomCost, GammaMax, Model, ModelParams};
pub use riccati::{RateSchedule, TimeGrid, VariancePath};
pub use simulator::{MCEstimate, Mu0Mode, PathRecord, Policy, SimConfig};
