//! Receding-horizon (model-predictive) consensus control.
//!
//! At each grid node k the controller minimises the short-horizon cost
//!
//! ```text
//! Σ_{h=0}^{H_eff} (1/N) Σ_j ( ‖v̄ − v_j‖² + γ ‖u_j(h)‖_r^r )
//! ```
//!
//! over the stacked window `u(0..=H_eff)`, applies the first block, steps the
//! dynamics once, and repeats. The penalty exponent r ∈ {1, 2} selects the
//! component-wise ℓ₁ norm (which drives controls to exact zero and yields
//! sparse actuation patterns) or the squared ℓ₂ norm. Windows shrink near the
//! final time: `H_eff = min(H, N_T − 1 − k)`.
//!
//! The window minimiser is the particle swarm from [`crate::pso`], warm
//! started at the previous window's optimum shifted by one block and padded
//! with zeros. Each window derives its own seed substream, so a full run is
//! bit-reproducible.

use crate::error::{CoreError, Result};
use crate::integrate::{rk4_step, StageBufs, Trajectory};
use crate::model::{ControlField, ModelParams, SwarmState, TimeGrid};
use crate::pso::{pso_minimize_around, PSOConfig};
use crate::rng::substream_seed;

/// Control-penalty exponent for the window cost.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControlPenalty {
    /// r = 1: `‖u‖₁` (component-wise absolute sum) — promotes sparsity.
    L1,
    /// r = 2: `‖u‖₂²` (component-wise square sum).
    L2,
}

impl ControlPenalty {
    /// Maps the exponent r ∈ {1, 2} to the penalty.
    pub fn from_exponent(r: u8) -> Result<Self> {
        match r {
            1 => Ok(Self::L1),
            2 => Ok(Self::L2),
            _ => Err(CoreError::InvalidParameter(format!(
                "penalty exponent must be 1 or 2, got {r}"
            ))),
        }
    }

    #[inline]
    fn agent_penalty(self, u_agent: &[f64]) -> f64 {
        match self {
            Self::L1 => u_agent.iter().map(|a| a.abs()).sum(),
            Self::L2 => u_agent.iter().map(|a| a * a).sum(),
        }
    }
}

/// Receding-horizon controller parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NMPCConfig {
    /// Prediction horizon H in steps (≥ 1).
    pub horizon: usize,
    /// Control penalty exponent.
    pub penalty: ControlPenalty,
    /// Control-penalty weight γ > 0.
    pub gamma: f64,
}

impl NMPCConfig {
    /// Builds a validated configuration; `r` is the penalty exponent ∈ {1, 2}.
    pub fn new(horizon: usize, r: u8, gamma: f64) -> Result<Self> {
        if horizon < 1 {
            return Err(CoreError::InvalidParameter("horizon must be ≥ 1".into()));
        }
        if !(gamma > 0.0 && gamma.is_finite()) {
            return Err(CoreError::InvalidParameter("gamma must be finite and > 0".into()));
        }
        Ok(Self { horizon, penalty: ControlPenalty::from_exponent(r)?, gamma })
    }
}

/// One stage of the window cost at state (x, v) under control block `u_block`.
fn stage_cost(
    n: usize,
    d: usize,
    v: &[f64],
    u_block: &[f64],
    penalty: ControlPenalty,
    gamma: f64,
) -> f64 {
    let inv_n = 1.0 / n as f64;
    let mut v_mean = vec![0.0; d];
    for j in 0..n {
        for c in 0..d {
            v_mean[c] += v[j * d + c];
        }
    }
    for m in v_mean.iter_mut() {
        *m *= inv_n;
    }
    let mut total = 0.0;
    for j in 0..n {
        let mut dev = 0.0;
        for c in 0..d {
            let e = v_mean[c] - v[j * d + c];
            dev += e * e;
        }
        total += dev + gamma * penalty.agent_penalty(&u_block[j * d..(j + 1) * d]);
    }
    total * inv_n
}

/// Reusable rollout scratch so swarm objective calls do not allocate.
struct WindowEvaluator {
    params: ModelParams,
    cfg: NMPCConfig,
    dt: f64,
    x: Vec<f64>,
    v: Vec<f64>,
    bufs: StageBufs,
}

impl WindowEvaluator {
    fn new(params: ModelParams, cfg: NMPCConfig, dt: f64) -> Self {
        let nd = params.n * params.d;
        Self { params, cfg, dt, x: vec![0.0; nd], v: vec![0.0; nd], bufs: StageBufs::new(nd) }
    }

    /// Window cost from `state`; returns +∞ if the rollout leaves ℝ.
    fn eval(&mut self, state: &SwarmState, u_window: &[f64]) -> f64 {
        let (n, d) = (self.params.n, self.params.d);
        let nd = n * d;
        let steps = u_window.len() / nd; // H_eff + 1 blocks
        self.x.copy_from_slice(&state.x);
        self.v.copy_from_slice(&state.v);
        let mut total = 0.0;
        for h in 0..steps {
            let block = &u_window[h * nd..(h + 1) * nd];
            total += stage_cost(n, d, &self.v, block, self.cfg.penalty, self.cfg.gamma);
            if h + 1 < steps {
                rk4_step(
                    &self.params,
                    self.dt,
                    &mut self.x,
                    &mut self.v,
                    Some(block),
                    &mut self.bufs,
                );
            }
        }
        if total.is_finite() && self.v.iter().all(|a| a.is_finite()) {
            total
        } else {
            f64::INFINITY
        }
    }
}

/// Cost of one prediction window starting from `state_k`.
///
/// `u_window` stacks `H_eff + 1` control blocks of `N·d` entries each; the
/// state is advanced with the same fourth-order step as the main integrator,
/// and the running term is the plain sum over the window's nodes (the last
/// block is charged but not applied). Errors on a shape mismatch or a
/// non-finite rollout.
pub fn nmpc_cost(
    state_k: &SwarmState,
    u_window: &[f64],
    params: &ModelParams,
    cfg: &NMPCConfig,
    dt: f64,
) -> Result<f64> {
    if state_k.n != params.n || state_k.d != params.d {
        return Err(CoreError::ShapeMismatch(format!(
            "state is {}×{}, parameters expect {}×{}",
            state_k.n, state_k.d, params.n, params.d
        )));
    }
    let nd = params.n * params.d;
    if u_window.is_empty() || !u_window.len().is_multiple_of(nd) {
        return Err(CoreError::ShapeMismatch(format!(
            "window length {} is not a positive multiple of N·d = {nd}",
            u_window.len()
        )));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(CoreError::InvalidParameter("dt must be finite and > 0".into()));
    }
    let mut ev = WindowEvaluator::new(*params, *cfg, dt);
    let value = ev.eval(state_k, u_window);
    if value.is_finite() {
        Ok(value)
    } else {
        Err(CoreError::NonFinite("window rollout diverged".into()))
    }
}

/// Runs the full receding-horizon loop over `grid`.
///
/// Returns the applied control field (last node identically zero — no step
/// remains to use it) and the closed-loop trajectory. The window at node k
/// uses seed substream k of `pso.seed`, a warm-start centre equal to the
/// previous optimum shifted one block with zero padding (zeros for the first
/// window), and horizon `min(H, N_T − 1 − k)`.
pub fn nmpc_loop(
    state0: &SwarmState,
    grid: &TimeGrid,
    params: &ModelParams,
    nmpc: &NMPCConfig,
    pso: &PSOConfig,
) -> Result<(ControlField, Trajectory)> {
    if state0.n != params.n || state0.d != params.d {
        return Err(CoreError::ShapeMismatch(format!(
            "state is {}×{}, parameters expect {}×{}",
            state0.n, state0.d, params.n, params.d
        )));
    }
    pso.validate()?;
    let (n, d) = (params.n, params.d);
    let nd = n * d;
    let n_nodes = grid.n_nodes;
    let dt = grid.dt;

    let mut u_applied = ControlField::zeros(n_nodes, n, d);
    let mut states = Vec::with_capacity(n_nodes);
    states.push(state0.clone());
    let mut current = state0.clone();
    let mut evaluator = WindowEvaluator::new(*params, *nmpc, dt);
    let mut step_bufs = StageBufs::new(nd);
    let mut previous_best: Option<Vec<f64>> = None;

    for k in 0..n_nodes - 1 {
        let h_eff = nmpc.horizon.min(n_nodes - 1 - k);
        let dim = (h_eff + 1) * nd;

        // Warm start: previous optimum advanced one block, zero padded.
        let mut center = vec![0.0; dim];
        if let Some(prev) = &previous_best {
            let tail = &prev[nd..];
            let take = tail.len().min(dim);
            center[..take].copy_from_slice(&tail[..take]);
        }

        let window_cfg = PSOConfig { seed: substream_seed(pso.seed, k as u64, 0), ..*pso };
        let state_ref = &current;
        let (best, _) = pso_minimize_around(
            |u_window: &[f64]| evaluator.eval(state_ref, u_window),
            &center,
            &window_cfg,
        )?;

        let first_block = &best[..nd];
        u_applied.node_mut(k).copy_from_slice(first_block);
        rk4_step(params, dt, &mut current.x, &mut current.v, Some(first_block), &mut step_bufs);
        if !current.is_finite() {
            return Err(CoreError::NonFinite(format!("closed-loop state diverged at step {k}")));
        }
        states.push(current.clone());
        previous_best = Some(best);
    }

    Ok((u_applied, Trajectory { grid: *grid, states }))
}

/// Per-agent control magnitudes over time: `values[i][k] = ‖u_i(t_k)‖₂`.
#[derive(Debug, Clone, PartialEq)]
pub struct HeatMap {
    /// N rows (agents) × N_T columns (grid nodes), all entries ≥ 0.
    pub values: Vec<Vec<f64>>,
}

/// Builds the agent-by-time map of Euclidean control magnitudes.
pub fn heat_map(u: &ControlField) -> HeatMap {
    let (n, d) = (u.n, u.d);
    let mut values = vec![vec![0.0; u.n_nodes]; n];
    for k in 0..u.n_nodes {
        let block = u.node(k);
        for (i, row) in values.iter_mut().enumerate() {
            let norm_sq: f64 = block[i * d..(i + 1) * d].iter().map(|a| a * a).sum();
            row[k] = norm_sq.sqrt();
        }
    }
    HeatMap { values }
}

/// Fraction of heat-map entries below `rel_threshold` times the peak entry.
///
/// `rel_threshold` must lie in (0, 1). An identically zero map counts as
/// fully sparse (1.0).
pub fn sparsity_fraction(map: &HeatMap, rel_threshold: f64) -> f64 {
    debug_assert!(
        rel_threshold > 0.0 && rel_threshold < 1.0,
        "relative threshold must lie in (0, 1)"
    );
    let mut max = 0.0_f64;
    let mut total = 0usize;
    for row in &map.values {
        total += row.len();
        for &a in row {
            max = max.max(a);
        }
    }
    if total == 0 {
        return 1.0;
    }
    if max == 0.0 {
        return 1.0;
    }
    let cut = rel_threshold * max;
    let below = map.values.iter().flatten().filter(|a| **a < cut).count();
    below as f64 / total as f64
}
