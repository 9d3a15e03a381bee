//! Solver library for multi-region stochastic SEIR lockdown games.
//!
//! `N` regional planners each control a lockdown fraction `ℓⁿ(t, x) ∈ [0, 1]`
//! for a shared epidemic state
//!
//! ```text
//! x = (s₁..s_N, e₁..e_N, i₁..i_N) ∈ ℝ³ᴺ,
//! ```
//!
//! the susceptible/exposed/infectious fractions of each region, driven by a
//! coupled SDE with cross-region transmission and multiplicative noise. Each
//! planner minimizes a discounted running cost that trades wage loss from
//! lockdown against deaths and hospitalization. The library computes a
//! Markovian Nash equilibrium of this game by stagewise fictitious play:
//! at every stage each player solves a semilinear parabolic PDE — via its
//! BSDE representation and a pair of small feedforward networks (one for the
//! value function, one caching the best-response policy) — against the other
//! players' policy networks frozen from the previous stage.
//!
//! Module layout:
//!
//! * [`model`] — region/parameter types, transmission-matrix assembly,
//!   calibration, drift, diffusion, running cost.
//! * [`rng`] / [`sim`] — reproducible stream-keyed Gaussian increments and
//!   batched Euler–Maruyama simulation of the full and reduced dynamics.
//! * [`hamiltonian`] — closed-form lockdown best response, reduced drift,
//!   BSDE driver, and a brute-force grid oracle used by the test suites.
//! * [`neural`] — tape-based reverse-mode autodiff, MLP value/policy nets,
//!   Adam, and the versioned checkpoint format.
//! * [`solver`] — the stagewise fictitious-play driver with warm starts,
//!   validation tracking, convergence monitoring, and diagnostics.
//! * [`eval`] — Monte Carlo cost estimates, unilateral-deviation
//!   (exploitability) probes, trajectory summaries, and outcome labels.
//! * [`scenario`] — the TOML scenario schema, parameter resolution, and the
//!   canonical config digest embedded in every output artifact.
//! * [`verify`] — self-contained verification suites (analytic oracles,
//!   gradient checks, degenerate solver runs) shared by the CLI and tests.

pub mod error;
pub mod eval;
pub mod hamiltonian;
pub mod model;
pub mod neural;
pub mod rng;
pub mod scenario;
pub mod sim;
pub mod solver;
pub mod verify;

pub use error::{Error, Result};
pub use eval::{CostReport, EquilibriumLabel, OutcomeLabel, TrajectorySummary};
pub use model::{
    CostParams, EpiParams, ModelParams, PolicyVector, RegionSet, StateVector, TravelMatrix,
};
pub use neural::{Head, MlpParams, OptimizerState};
pub use scenario::{ResolvedScenario, Scenario};
pub use sim::{PathBatch, PolicyMap, TimeGrid};
pub use solver::{PolicyProfile, SolveOutcome, Solver, SolverConfig, StageState, Termination};
