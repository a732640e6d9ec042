//! Consensus dynamics and optimal control for velocity-alignment swarms.
//!
//! The model is a set of N agents in `R^d` whose velocities relax toward each
//! other through a distance-weighted averaging kernel, optionally forced by a
//! per-agent control. The crate provides:
//!
//! - the forward model: kernel, right-hand sides, fourth-order integration,
//!   and the quadratic spread functionals used to measure consensus
//!   ([`model`], [`integrate`]);
//! - an a-priori consensus test that classifies an initial condition as
//!   unconditionally flocking, conditionally flocking, or unknown
//!   ([`predict_consensus`]);
//! - the smooth optimal-control problem — integrated velocity spread plus a
//!   quadratic control penalty — solved by adjoint-based gradient descent
//!   with Barzilai–Borwein steps ([`ocp`]);
//! - a receding-horizon controller whose non-smooth (ℓ₁-penalised) window
//!   costs are minimised by a particle swarm, yielding sparse actuation
//!   ([`nmpc`], [`pso`]);
//! - a particle-sampled study of the controlled system as N grows, with
//!   histograms of velocity marginals ([`meanfield`]).
//!
//! All randomness flows through counter-based substreams of user-supplied
//! seeds, so every result in the crate is bit-reproducible.

pub mod error;
pub mod integrate;
pub mod meanfield;
pub mod model;
pub mod nmpc;
pub mod ocp;
pub mod pso;
pub mod rng;

pub use error::{CoreError, Result};
pub use integrate::{integrate_adjoint, integrate_forward, AdjointTrajectory, Trajectory};
pub use meanfield::{
    control_norm_stats, run_study, run_study_detailed, sample_initial, velocity_marginal,
    velocity_marginal_in, DetailedStudy, Histogram1D, MixtureConfig, StudyFailure, StudyOutcome,
    StudyRecord, StudyReport,
};
pub use model::{
    alignment_force, bilinear_b, consensus_functionals, controlled_rhs, free_rhs, kernel_eval,
    kernel_slope_ratio, mean_velocity, predict_consensus, theta_threshold, ConsensusPrediction,
    ControlField, ModelParams, SwarmState, TimeGrid,
};
pub use nmpc::{
    heat_map, nmpc_cost, nmpc_loop, sparsity_fraction, ControlPenalty, HeatMap, NMPCConfig,
};
pub use ocp::{
    adjoint_rhs, bb_descent, bb_descent_with, compute_gradient, control_l2_norm, fd_gradient,
    running_cost, total_cost, CostParams, DescentOptions, OCPResult,
};
pub use pso::{pso_minimize, pso_minimize_around, PSOConfig};
pub use rng::{substream_rng, substream_seed};
