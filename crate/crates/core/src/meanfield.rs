//! Particle-sampled convergence study toward the mean-field limit.
//!
//! Initial conditions are drawn from a two-component Gaussian mixture with
//! positions and velocities coupled (`v = x`), the smooth optimal-control
//! problem is solved for a growing list of swarm sizes, and per-run summary
//! statistics are collected. Velocity marginals before/after control expose
//! how the optimally steered empirical measure concentrates while the free
//! dynamics stay split.

use crate::error::{CoreError, Result};
use crate::integrate::Trajectory;
use crate::model::{consensus_functionals, ControlField, ModelParams, SwarmState, TimeGrid};
use crate::ocp::{bb_descent, CostParams, OCPResult};
use crate::rng::substream_rng;
use rand::Rng;
use rand_distr::StandardNormal;
use std::time::Instant;

/// Two-component Gaussian mixture over initial positions; velocities copy
/// positions exactly, so the swarm starts both spatially and kinetically
/// split.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureConfig {
    /// Centre of the first component (also its initial velocity).
    pub mu1: Vec<f64>,
    /// Centre of the second component.
    pub mu2: Vec<f64>,
    /// Standard deviation of the first component (> 0).
    pub sigma1: f64,
    /// Standard deviation of the second component (> 0).
    pub sigma2: f64,
    /// Probability of drawing from the first component, in (0, 1).
    pub weight: f64,
    /// Master seed; each swarm size N derives its own substream.
    pub seed: u64,
}

impl MixtureConfig {
    /// The planar default: clusters at ±(1, 1) with spread 0.3, equal weight.
    pub fn default_planar(seed: u64) -> Self {
        Self {
            mu1: vec![-1.0, -1.0],
            mu2: vec![1.0, 1.0],
            sigma1: 0.3,
            sigma2: 0.3,
            weight: 0.5,
            seed,
        }
    }

    /// Spatial dimension implied by the component centres.
    pub fn dim(&self) -> usize {
        self.mu1.len()
    }

    /// Checks the documented invariants.
    pub fn validate(&self) -> Result<()> {
        if self.mu1.is_empty() || self.mu1.len() != self.mu2.len() {
            return Err(CoreError::InvalidParameter(format!(
                "mixture centres must be non-empty and equal length, got {} and {}",
                self.mu1.len(),
                self.mu2.len()
            )));
        }
        if !(self.sigma1 > 0.0
            && self.sigma1.is_finite()
            && self.sigma2 > 0.0
            && self.sigma2.is_finite())
        {
            return Err(CoreError::InvalidParameter(
                "mixture spreads must be finite and > 0".into(),
            ));
        }
        if !(self.weight > 0.0 && self.weight < 1.0) {
            return Err(CoreError::InvalidParameter(format!(
                "mixture weight must lie strictly in (0, 1), got {}",
                self.weight
            )));
        }
        if self.mu1.iter().chain(self.mu2.iter()).any(|a| !a.is_finite()) {
            return Err(CoreError::NonFinite("mixture centres must be finite".into()));
        }
        Ok(())
    }
}

/// Draws an N-agent initial state from the mixture.
///
/// Deterministic in `(cfg.seed, n)`: each swarm size owns an independent
/// substream, so enlarging the study list never perturbs earlier draws. Per
/// agent, one uniform pick selects the component and `d` standard normals are
/// scaled and shifted; velocities are a bit-exact copy of positions.
pub fn sample_initial(n: usize, cfg: &MixtureConfig) -> Result<SwarmState> {
    cfg.validate()?;
    if n == 0 {
        return Err(CoreError::InvalidParameter("swarm size must be ≥ 1".into()));
    }
    let d = cfg.dim();
    let mut rng = substream_rng(cfg.seed, n as u64, 0);
    let mut x = Vec::with_capacity(n * d);
    for _ in 0..n {
        let pick: f64 = rng.random();
        let (mu, sigma) =
            if pick < cfg.weight { (&cfg.mu1, cfg.sigma1) } else { (&cfg.mu2, cfg.sigma2) };
        for &centre in mu.iter().take(d) {
            let z: f64 = rng.sample(StandardNormal);
            x.push(centre + sigma * z);
        }
    }
    let v = x.clone();
    SwarmState::new(x, v, n, d)
}

/// Summary of one solved instance of the study.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyRecord {
    /// Swarm size.
    pub n: usize,
    /// Optimal cost reached by the descent.
    pub j_star: f64,
    /// Gradient-descent iterations performed.
    pub iterations: usize,
    /// Wall-clock seconds spent in the solve.
    pub wall_time: f64,
    /// Mean Euclidean control magnitude over agents and grid nodes.
    pub mean_control_norm: f64,
    /// Velocity spread V at the final time of the controlled trajectory.
    pub v_final: f64,
}

/// A swarm size whose solve failed, with the error message.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StudyFailure {
    /// Swarm size that failed.
    pub n: usize,
    /// Human-readable reason.
    pub message: String,
}

/// One fully retained study instance (for plotting marginals afterwards).
#[derive(Debug, Clone)]
pub struct StudyOutcome {
    /// Summary row.
    pub record: StudyRecord,
    /// The sampled initial state.
    pub state0: SwarmState,
    /// Full optimiser output (optimal control and closed trajectory).
    pub result: OCPResult,
}

/// All retained instances plus the failures that were skipped.
#[derive(Debug, Clone)]
pub struct DetailedStudy {
    /// Successful solves in list order.
    pub outcomes: Vec<StudyOutcome>,
    /// Failed swarm sizes in list order.
    pub failures: Vec<StudyFailure>,
}

/// Summary rows plus the failures that were skipped.
#[derive(Debug, Clone)]
pub struct StudyReport {
    /// Successful solves in list order.
    pub records: Vec<StudyRecord>,
    /// Failed swarm sizes in list order.
    pub failures: Vec<StudyFailure>,
}

/// Runs the convergence study, keeping full trajectories and controls.
///
/// For each N in `n_list`: sample the mixture, start from the zero control,
/// and run the gradient descent to tolerance `tol` or at most `k_max`
/// updates. Runs execute sequentially so the recorded wall times are honest.
/// A failing N is recorded and skipped; only configuration errors abort the
/// whole study.
pub fn run_study_detailed(
    n_list: &[usize],
    mixture: &MixtureConfig,
    params: &ModelParams,
    cost: &CostParams,
    tol: f64,
    k_max: usize,
) -> Result<DetailedStudy> {
    mixture.validate()?;
    if n_list.is_empty() {
        return Err(CoreError::InvalidParameter("the study needs at least one swarm size".into()));
    }
    if mixture.dim() != params.d {
        return Err(CoreError::ShapeMismatch(format!(
            "mixture is {}-dimensional but the model expects d = {}",
            mixture.dim(),
            params.d
        )));
    }
    let mut outcomes = Vec::new();
    let mut failures = Vec::new();
    for &n in n_list {
        match run_single(n, mixture, params, cost, tol, k_max) {
            Ok(outcome) => outcomes.push(outcome),
            Err(err) => failures.push(StudyFailure { n, message: err.to_string() }),
        }
    }
    Ok(DetailedStudy { outcomes, failures })
}

/// Runs the convergence study, keeping only the summary rows.
pub fn run_study(
    n_list: &[usize],
    mixture: &MixtureConfig,
    params: &ModelParams,
    cost: &CostParams,
    tol: f64,
    k_max: usize,
) -> Result<StudyReport> {
    let detailed = run_study_detailed(n_list, mixture, params, cost, tol, k_max)?;
    Ok(StudyReport {
        records: detailed.outcomes.into_iter().map(|o| o.record).collect(),
        failures: detailed.failures,
    })
}

fn run_single(
    n: usize,
    mixture: &MixtureConfig,
    params: &ModelParams,
    cost: &CostParams,
    tol: f64,
    k_max: usize,
) -> Result<StudyOutcome> {
    let params_n = ModelParams::new(n, params.d, params.k, params.beta)?;
    let state0 = sample_initial(n, mixture)?;
    let u0 = ControlField::zeros(cost.grid.n_nodes, n, params.d);
    let started = Instant::now();
    let result = bb_descent(&state0, &u0, &params_n, cost, tol, k_max)?;
    let wall_time = started.elapsed().as_secs_f64();
    let j_star = *result
        .cost_history
        .last()
        .ok_or_else(|| CoreError::NonFinite("descent returned an empty cost history".into()))?;
    let (v_final, _) = consensus_functionals(result.traj.terminal());
    let (mean_control_norm, _) = control_norm_stats(&result.u_opt, &cost.grid);
    Ok(StudyOutcome {
        record: StudyRecord {
            n,
            j_star,
            iterations: result.iterations,
            wall_time,
            mean_control_norm,
            v_final,
        },
        state0,
        result,
    })
}

/// Normalised histogram with `edges.len() == counts.len() + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram1D {
    /// Bin boundaries, strictly increasing.
    pub edges: Vec<f64>,
    /// Bin masses; they sum to 1 when `normalised`.
    pub counts: Vec<f64>,
    /// Whether `counts` is a probability vector.
    pub normalised: bool,
}

fn histogram_over(values: &[f64], bins: usize, lo: f64, hi: f64) -> Histogram1D {
    let width = hi - lo;
    let mut counts = vec![0.0; bins];
    for &v in values {
        let pos = (v - lo) / width * bins as f64;
        let idx = if pos < 0.0 {
            0
        } else if pos >= bins as f64 {
            bins - 1
        } else {
            pos as usize
        };
        counts[idx] += 1.0;
    }
    let total: f64 = counts.iter().sum();
    if total > 0.0 {
        for c in counts.iter_mut() {
            *c /= total;
        }
    }
    let edges = (0..=bins).map(|b| lo + width * b as f64 / bins as f64).collect();
    Histogram1D { edges, counts, normalised: true }
}

fn marginal_values(traj: &Trajectory, node: usize, axis: usize) -> Result<Vec<f64>> {
    let state = traj.states.get(node).ok_or_else(|| {
        CoreError::ShapeMismatch(format!(
            "node {node} outside trajectory of {} nodes",
            traj.states.len()
        ))
    })?;
    if axis >= state.d {
        return Err(CoreError::ShapeMismatch(format!("axis {axis} outside dimension {}", state.d)));
    }
    Ok((0..state.n).map(|i| state.v[i * state.d + axis]).collect())
}

/// Empirical distribution of one velocity component across the swarm.
///
/// Bins the `axis` components of all agent velocities at grid node `node`
/// over the data range. A degenerate sample (all values equal) yields a
/// single unit-width bin centred on the value, with all mass in it.
pub fn velocity_marginal(
    traj: &Trajectory,
    node: usize,
    axis: usize,
    bins: usize,
) -> Result<Histogram1D> {
    if bins == 0 {
        return Err(CoreError::InvalidParameter("bin count must be ≥ 1".into()));
    }
    let values = marginal_values(traj, node, axis)?;
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(lo.is_finite() && hi.is_finite()) {
        return Err(CoreError::NonFinite("velocity components are not finite".into()));
    }
    if lo == hi {
        return Ok(Histogram1D {
            edges: vec![lo - 0.5, lo + 0.5],
            counts: vec![1.0],
            normalised: true,
        });
    }
    Ok(histogram_over(&values, bins, lo, hi))
}

/// Same marginal binned over an explicit range `[lo, hi]`.
///
/// This is the form to use when comparing two runs on a common scale —
/// values outside the range are clamped into the end bins so mass is
/// conserved.
pub fn velocity_marginal_in(
    traj: &Trajectory,
    node: usize,
    axis: usize,
    bins: usize,
    lo: f64,
    hi: f64,
) -> Result<Histogram1D> {
    if bins == 0 {
        return Err(CoreError::InvalidParameter("bin count must be ≥ 1".into()));
    }
    if !(lo < hi && lo.is_finite() && hi.is_finite()) {
        return Err(CoreError::InvalidParameter(format!("need finite lo < hi, got [{lo}, {hi}]")));
    }
    let values = marginal_values(traj, node, axis)?;
    Ok(histogram_over(&values, bins, lo, hi))
}

/// Mean control magnitude and the time the field goes quiet.
///
/// Returns `(mean_norm, near_zero_time)`: the mean of `‖u_i(t_k)‖₂` over all
/// agents and nodes, and the first grid time from which every agent's
/// magnitude stays below 1% of the peak magnitude through the end of the
/// frame. An identically zero field reports `(0, 0)`; a field still loud at
/// the last node reports the final time.
pub fn control_norm_stats(u: &ControlField, grid: &TimeGrid) -> (f64, f64) {
    debug_assert_eq!(u.n_nodes, grid.n_nodes, "control field and grid disagree on node count");
    let (n, d) = (u.n, u.d);
    let mut norms = vec![0.0; u.n_nodes * n];
    let mut max_norm = 0.0_f64;
    let mut sum = 0.0;
    for k in 0..u.n_nodes {
        let block = u.node(k);
        for i in 0..n {
            let norm_sq: f64 = block[i * d..(i + 1) * d].iter().map(|a| a * a).sum();
            let norm = norm_sq.sqrt();
            norms[k * n + i] = norm;
            max_norm = max_norm.max(norm);
            sum += norm;
        }
    }
    let mean = sum / (u.n_nodes * n) as f64;
    if max_norm == 0.0 {
        return (0.0, 0.0);
    }
    let threshold = 1e-2 * max_norm;
    let mut first_quiet = u.n_nodes;
    for k in (0..u.n_nodes).rev() {
        let quiet = (0..n).all(|i| norms[k * n + i] < threshold);
        if quiet {
            first_quiet = k;
        } else {
            break;
        }
    }
    let near_zero_time =
        if first_quiet >= u.n_nodes { grid.t_final } else { grid.node(first_quiet) };
    (mean, near_zero_time)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::bilinear_b;

    fn planar(seed: u64) -> MixtureConfig {
        MixtureConfig::default_planar(seed)
    }

    #[test]
    fn mixture_invariants_are_enforced() {
        let mut cfg = planar(1);
        cfg.weight = 0.0;
        assert!(cfg.validate().is_err());
        cfg.weight = 1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = planar(1);
        cfg.sigma2 = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = planar(1);
        cfg.mu2 = vec![1.0];
        assert!(cfg.validate().is_err());
        let mut cfg = planar(1);
        cfg.mu1.clear();
        cfg.mu2.clear();
        assert!(cfg.validate().is_err());
        assert!(planar(1).validate().is_ok());
    }

    #[test]
    fn velocities_copy_positions_bit_for_bit() {
        let state = sample_initial(37, &planar(7)).unwrap();
        assert_eq!(state.n, 37);
        assert_eq!(state.d, 2);
        for (a, b) in state.x.iter().zip(&state.v) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn sampling_is_deterministic_and_independent_across_sizes() {
        let a = sample_initial(12, &planar(3)).unwrap();
        let b = sample_initial(12, &planar(3)).unwrap();
        assert_eq!(a.x, b.x);
        // A different size is a different substream, not a prefix.
        let c = sample_initial(13, &planar(3)).unwrap();
        assert_ne!(a.x[..4], c.x[..4]);
    }

    #[test]
    fn sample_means_match_the_mixture() {
        // Equal-weight components at ±(1,1): each coordinate has mean 0 and
        // standard deviation sqrt(1 + 0.09) ≈ 1.044.
        let n = 4000;
        let state = sample_initial(n, &planar(1)).unwrap();
        let bound = 4.0 * 1.05 / (n as f64).sqrt();
        for c in 0..2 {
            let mean: f64 = (0..n).map(|i| state.x[i * 2 + c]).sum::<f64>() / n as f64;
            assert!(mean.abs() < bound, "coordinate {c} mean {mean} exceeds {bound}");
        }
    }

    #[test]
    fn vanishing_spread_collapses_onto_the_centres() {
        let mut cfg = planar(5);
        cfg.sigma1 = 1e-12;
        cfg.sigma2 = 1e-12;
        let state = sample_initial(50, &cfg).unwrap();
        for i in 0..50 {
            let p = &state.x[i * 2..i * 2 + 2];
            let d1 = (p[0] + 1.0).abs().max((p[1] + 1.0).abs());
            let d2 = (p[0] - 1.0).abs().max((p[1] - 1.0).abs());
            assert!(d1.min(d2) < 1e-9, "agent {i} at {p:?} sits on neither centre");
        }
    }

    #[test]
    fn marginal_of_spread_data_uses_the_data_range() {
        let grid = TimeGrid::new(0.1, 0.1).unwrap();
        let state = SwarmState::new(vec![0.0; 4], vec![0.0, 1.0, 2.0, 3.0], 4, 1).unwrap();
        let traj = Trajectory { grid, states: vec![state.clone(), state] };
        let h = velocity_marginal(&traj, 1, 0, 4).unwrap();
        assert_eq!(h.edges.len(), 5);
        assert_eq!(h.edges[0], 0.0);
        assert_eq!(h.edges[4], 3.0);
        for c in &h.counts {
            assert!((c - 0.25).abs() < 1e-15);
        }
        let total: f64 = h.counts.iter().sum();
        assert!((total - 1.0).abs() < 1e-15);
    }

    #[test]
    fn degenerate_marginal_is_a_single_unit_bin() {
        let grid = TimeGrid::new(0.1, 0.1).unwrap();
        let state = SwarmState::new(vec![0.0; 6], vec![0.7; 6], 3, 2).unwrap();
        let traj = Trajectory { grid, states: vec![state.clone(), state] };
        let h = velocity_marginal(&traj, 0, 1, 10).unwrap();
        assert_eq!(h.edges.len(), 2);
        assert!((h.edges[0] - 0.2).abs() < 1e-15);
        assert!((h.edges[1] - 1.2).abs() < 1e-15);
        assert_eq!(h.counts, vec![1.0]);
    }

    #[test]
    fn explicit_range_clamps_outliers_into_end_bins() {
        let grid = TimeGrid::new(0.1, 0.1).unwrap();
        let state = SwarmState::new(vec![0.0; 3], vec![-10.0, 0.5, 10.0], 3, 1).unwrap();
        let traj = Trajectory { grid, states: vec![state.clone(), state] };
        let h = velocity_marginal_in(&traj, 0, 0, 2, 0.0, 1.0).unwrap();
        assert!((h.counts[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((h.counts[1] - 2.0 / 3.0).abs() < 1e-15);
        assert!(velocity_marginal_in(&traj, 0, 0, 2, 1.0, 1.0).is_err());
        assert!(velocity_marginal_in(&traj, 0, 5, 2, 0.0, 1.0).is_err());
    }

    #[test]
    fn control_stats_on_zero_impulse_and_persistent_fields() {
        let grid = TimeGrid::new(1.0, 0.5).unwrap(); // nodes at 0, 0.5, 1
        let zero = ControlField::zeros(3, 2, 1);
        assert_eq!(control_norm_stats(&zero, &grid), (0.0, 0.0));

        let mut impulse = ControlField::zeros(3, 2, 1);
        impulse.node_mut(0)[0] = 6.0;
        let (mean, quiet_at) = control_norm_stats(&impulse, &grid);
        assert!((mean - 1.0).abs() < 1e-15); // 6 over 6 agent-nodes
        assert_eq!(quiet_at, 0.5);

        let mut constant = ControlField::zeros(3, 2, 1);
        for k in 0..3 {
            constant.node_mut(k).copy_from_slice(&[2.0, 2.0]);
        }
        let (mean, quiet_at) = control_norm_stats(&constant, &grid);
        assert!((mean - 2.0).abs() < 1e-15);
        assert_eq!(quiet_at, 1.0);
    }

    #[test]
    fn small_study_produces_finite_rows_and_skips_bad_sizes() {
        let mixture = planar(9);
        let params = ModelParams::new(1, 2, 1.0, 1.0).unwrap();
        let grid = TimeGrid::new(0.5, 0.1).unwrap();
        let cost = CostParams::new(1.0, grid).unwrap();
        let report = run_study(&[3, 0, 5], &mixture, &params, &cost, 1e-3, 40).unwrap();
        assert_eq!(report.failures.len(), 1);
        assert_eq!(report.failures[0].n, 0);
        assert_eq!(report.records.len(), 2);
        for rec in &report.records {
            assert!(rec.j_star.is_finite() && rec.j_star >= 0.0);
            assert!(rec.v_final.is_finite() && rec.v_final >= 0.0);
            assert!(rec.mean_control_norm.is_finite());
            assert!(rec.wall_time >= 0.0);
            assert!(rec.iterations <= 40);
        }
        // The optimiser must beat the uncontrolled spread.
        let s3 = sample_initial(3, &mixture).unwrap();
        let v0 = bilinear_b(&s3.v, &s3.v, 2);
        assert!(report.records[0].v_final < v0);
    }
}
