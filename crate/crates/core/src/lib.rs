//! Coarse correlated equilibria, Nash equilibria and mean field control
//! optima for linear-quadratic mean field games.

pub mod abatement;
pub mod cce;
pub mod config;
pub mod error;
pub mod flows;
pub mod grid_ode;
pub mod lq_model;
pub mod moments;
pub mod montecarlo;
pub mod riccati;
pub mod session;

pub use cce::{check_cce, check_flow, Benchmarks, CceVerdict};
pub use error::{Error, Result};
pub use flows::{build_flow, CorrelatedFlow, DeltaPath, ScenarioLaw};
pub use grid_ode::{TimeGrid, Trajectory};
pub use lq_model::LqModel;
pub use session::Session;
