//! Distributed quasi-optimal regulation of flow networks.
//!
//! This crate implements the full pipeline for regulating a flow network
//! `ẋ = B·u_e + u_p + d` toward a ramp reference while steering the node
//! inputs to the economic optimum of a quadratic dispatch problem:
//!
//! * [`graph`] — incidence matrices, Laplacians, connectivity checks;
//! * [`linalg`] — pseudoinverse, spectral norm and least-norm solves;
//! * [`optimum`] — the dispatch problem, its closed-form solution and an
//!   independent KKT oracle;
//! * [`steady_state`] — ideal steady states, the gain-dependent steady-state
//!   offsets (hat quantities) and the shifted saturation bounds;
//! * [`gains`] — feasibility certification, slack margins, gain bounds and
//!   automatic gain synthesis;
//! * [`controllers`] — the unconstrained and saturated edge/node control laws
//!   as pure derivative/output maps;
//! * [`simulator`] — fixed-step RK4 closed-loop integration over a piecewise
//!   scenario schedule;
//! * [`lyapunov`] — quadratic and saturated-integral Lyapunov functions plus
//!   their closed-form derivatives along the incremental dynamics;
//! * [`scenario`] — TOML scenario files;
//! * [`trace`] — CSV serialization of simulation traces.

pub mod controllers;
pub mod error;
pub mod gains;
pub mod graph;
pub mod linalg;
pub mod lyapunov;
pub mod optimum;
pub mod scenario;
pub mod simulator;
pub mod steady_state;
pub mod trace;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
