//! The smooth optimal consensus control problem.
//!
//! Minimise `J(u) = ∫₀ᵀ ℓ(v(t), u(t)) dt` with running cost
//!
//! ```text
//! ℓ(v, u) = (1/N) Σ_j ( ‖v̄ − v_j‖² + γ ‖u_j‖² ),
//! ```
//!
//! subject to the controlled alignment dynamics. The gradient is assembled
//! from the costate sweep (`∇J = q + (2γ/N)·u`, pointwise on the grid) and
//! driven by Barzilai-Borwein descent. An independent central-difference
//! oracle arbitrates gradient correctness; both sides are expressed in the
//! same discrete-L² representation (see `fd_gradient`).

use crate::error::{CoreError, Result};
use crate::integrate::{integrate_adjoint, integrate_forward, AdjointTrajectory, Trajectory};
use crate::model::{
    alignment_force, alignment_position_vjp, mean_velocity, ControlField, ModelParams, SwarmState,
    TimeGrid,
};
use rayon::prelude::*;

/// Cost weights and the quadrature grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostParams {
    /// Control weight `γ > 0`.
    pub gamma: f64,
    pub grid: TimeGrid,
}

impl CostParams {
    pub fn new(gamma: f64, grid: TimeGrid) -> Result<Self> {
        if !(gamma.is_finite() && gamma > 0.0) {
            return Err(CoreError::InvalidParameter(format!(
                "control weight gamma must be finite and > 0, got {gamma}"
            )));
        }
        Ok(Self { gamma, grid })
    }
}

/// Outcome of a descent run.
#[derive(Debug, Clone)]
pub struct OCPResult {
    pub u_opt: ControlField,
    pub traj: Trajectory,
    /// Cost at the initial point and after every update (length iterations+1).
    pub cost_history: Vec<f64>,
    /// Gradient norms on the same schedule.
    pub grad_norm_history: Vec<f64>,
    /// Number of control updates performed.
    pub iterations: usize,
    /// True when the final gradient norm is ≤ tol.
    pub converged: bool,
}

/// Tuning knobs for [`bb_descent_with`]; [`bb_descent`] uses the defaults.
#[derive(Debug, Clone, Copy)]
pub struct DescentOptions {
    /// Stop when the discrete gradient norm drops to this value.
    pub tol: f64,
    /// Maximum number of control updates.
    pub max_iters: usize,
    /// Plain-gradient step used on the first iteration and as the fallback
    /// when the BB quotient degenerates.
    pub init_step: f64,
    /// Optional componentwise box `[−clamp, clamp]` applied after each update.
    pub clamp: Option<f64>,
}

impl DescentOptions {
    pub fn new(tol: f64, max_iters: usize) -> Self {
        Self { tol, max_iters, init_step: 1e-2, clamp: None }
    }
}

/// Running cost `ℓ(v, u) = (1/N) Σ_j (‖v̄−v_j‖² + γ‖u_j‖²)`.
///
/// The velocity term equals the spread functional `B(v,v)` — an identity the
/// tests cross-check.
pub fn running_cost(state: &SwarmState, u_k: &[f64], gamma: f64) -> f64 {
    let (n, d) = (state.n, state.d);
    debug_assert_eq!(u_k.len(), n * d);
    let vbar = mean_velocity(state);
    let mut total = 0.0;
    for i in 0..n {
        for c in 0..d {
            let dev = vbar[c] - state.v[i * d + c];
            total += dev * dev + gamma * u_k[i * d + c] * u_k[i * d + c];
        }
    }
    total / n as f64
}

/// Trapezoid quadrature of the running cost along an existing trajectory.
pub(crate) fn trajectory_cost(traj: &Trajectory, u: &ControlField, gamma: f64) -> f64 {
    let weights = traj.grid.weights();
    traj.states
        .iter()
        .enumerate()
        .map(|(k, s)| weights[k] * running_cost(s, u.node(k), gamma))
        .sum()
}

/// Total cost `J(u)`: forward solve plus trapezoid quadrature on the nodes.
pub fn total_cost(
    state0: &SwarmState,
    u: &ControlField,
    params: &ModelParams,
    cost: &CostParams,
) -> Result<f64> {
    let traj = integrate_forward(state0, u, &cost.grid, params)?;
    Ok(trajectory_cost(&traj, u, cost.gamma))
}

/// Right-hand sides of the backward costate equations, as written with the
/// time derivative on the left of a minus sign:
///
/// ```text
/// −dp_i/dt = (1/N) Σ_j (a'(r_ij)/r_ij) ⟨q_j−q_i, v_j−v_i⟩ (x_j−x_i)
/// −dq_i/dt = p_i + (1/N) Σ_j a(r_ij)(q_j−q_i) − (2/N)(v̄−v_i)
/// ```
///
/// Returns `(dp, dq)` — the reverse-time derivatives (the right-hand sides
/// above). The node-sweep in `integrate` is the discrete transpose of the
/// forward scheme and is consistent with these equations as `dt → 0`; they
/// are exposed for inspection and cross-checks rather than used to step.
pub fn adjoint_rhs(
    state: &SwarmState,
    p_k: &[f64],
    q_k: &[f64],
    params: &ModelParams,
) -> (Vec<f64>, Vec<f64>) {
    let (n, d) = (state.n, state.d);
    debug_assert_eq!(p_k.len(), n * d);
    debug_assert_eq!(q_k.len(), n * d);
    let mut dp = vec![0.0; n * d];
    let mut dq = vec![0.0; n * d];
    alignment_position_vjp(params, &state.x, &state.v, q_k, &mut dp);
    alignment_force(params, &state.x, q_k, &mut dq);
    let vbar = mean_velocity(state);
    let scale = 2.0 / n as f64;
    for i in 0..n {
        for c in 0..d {
            dq[i * d + c] += p_k[i * d + c] - scale * (vbar[c] - state.v[i * d + c]);
        }
    }
    (dp, dq)
}

/// Cost gradient on the grid: `grad[k][i] = q[k][i] + (2γ/N)·u[k][i]`.
pub fn compute_gradient(
    u: &ControlField,
    adj: &AdjointTrajectory,
    cost: &CostParams,
    params: &ModelParams,
) -> ControlField {
    let scale = 2.0 * cost.gamma / params.n as f64;
    let mut grad = ControlField::zeros(u.n_nodes, u.n, u.d);
    let block = u.n * u.d;
    for k in 0..u.n_nodes {
        let q = &adj.q[k];
        let g = grad.node_mut(k);
        let uk = &u.data[k * block..(k + 1) * block];
        for i in 0..block {
            g[i] = q[i] + scale * uk[i];
        }
    }
    grad
}

/// Central-difference gradient oracle in the discrete-L² representation.
///
/// Raw central differences of the total cost give `∂J/∂u[k][i]`, which is the
/// *weighted* dual of the pointwise gradient: dividing by the trapezoid
/// weight `w_k` maps it onto the same representation `compute_gradient`
/// returns, so the two can be compared entry for entry. Perturbed solves are
/// independent and run in parallel.
pub fn fd_gradient(
    state0: &SwarmState,
    u: &ControlField,
    params: &ModelParams,
    cost: &CostParams,
    h: f64,
) -> Result<ControlField> {
    let weights = cost.grid.weights();
    let block = u.n * u.d;
    let entries: Result<Vec<f64>> = (0..u.data.len())
        .into_par_iter()
        .map(|idx| {
            let mut up = u.clone();
            up.data[idx] += h;
            let plus = total_cost(state0, &up, params, cost)?;
            up.data[idx] -= 2.0 * h;
            let minus = total_cost(state0, &up, params, cost)?;
            Ok((plus - minus) / (2.0 * h * weights[idx / block]))
        })
        .collect();
    ControlField::from_data(entries?, u.n_nodes, u.n, u.d)
}

/// The descent norm: `sqrt(dt · Σ_k Σ_i ‖g[k][i]‖²)` — a discrete L²(0,T)
/// norm with uniform node weight dt.
pub fn control_l2_norm(dt: f64, field: &ControlField) -> f64 {
    (dt * field.data.iter().map(|a| a * a).sum::<f64>()).sqrt()
}

/// One full evaluation at a control iterate.
struct Evaluation {
    traj: Trajectory,
    cost: f64,
    grad: ControlField,
    grad_norm: f64,
}

fn evaluate(
    state0: &SwarmState,
    u: &ControlField,
    params: &ModelParams,
    cost: &CostParams,
) -> Result<Evaluation> {
    let traj = integrate_forward(state0, u, &cost.grid, params)?;
    let j = trajectory_cost(&traj, u, cost.gamma);
    let adj = integrate_adjoint(&traj, params, u)?;
    let grad = compute_gradient(u, &adj, cost, params);
    let grad_norm = control_l2_norm(cost.grid.dt, &grad);
    if !j.is_finite() || !grad_norm.is_finite() {
        return Err(CoreError::NonFinite(format!(
            "cost {j} / gradient norm {grad_norm} during descent"
        )));
    }
    Ok(Evaluation { traj, cost: j, grad, grad_norm })
}

/// Barzilai-Borwein gradient descent with the default options.
pub fn bb_descent(
    state0: &SwarmState,
    u0: &ControlField,
    params: &ModelParams,
    cost: &CostParams,
    tol: f64,
    k_max: usize,
) -> Result<OCPResult> {
    bb_descent_with(state0, u0, params, cost, DescentOptions::new(tol, k_max))
}

/// Barzilai-Borwein gradient descent.
///
/// Per iteration: forward solve, costate sweep, gradient, step
/// `u ← u − α·∇J`. The first step uses the plain-gradient `init_step`; later
/// steps use the secant quotient `α = ⟨Δu, Δg⟩/‖Δg‖²`, falling back to
/// `init_step` whenever the quotient degenerates (tiny `‖Δg‖²`, non-finite
/// or non-positive α — the objective is non-convex, so negative quotients
/// can occur). Histories include the initial point and every accepted
/// iterate; convergence is re-tested after each evaluation, so a converged
/// run's final recorded gradient norm is ≤ tol.
pub fn bb_descent_with(
    state0: &SwarmState,
    u0: &ControlField,
    params: &ModelParams,
    cost: &CostParams,
    opts: DescentOptions,
) -> Result<OCPResult> {
    if !(opts.tol.is_finite() && opts.tol >= 0.0) {
        return Err(CoreError::InvalidParameter(format!(
            "descent tolerance must be finite and ≥ 0, got {}",
            opts.tol
        )));
    }
    let mut u = u0.clone();
    let mut eval = evaluate(state0, &u, params, cost)?;
    let mut cost_history = vec![eval.cost];
    let mut grad_norm_history = vec![eval.grad_norm];
    let mut prev: Option<(ControlField, ControlField)> = None; // (u, grad) at k−1
    let mut iterations = 0;
    let mut converged = false;

    loop {
        if eval.grad_norm <= opts.tol {
            converged = true;
            break;
        }
        if iterations >= opts.max_iters {
            break;
        }
        let alpha = match &prev {
            None => opts.init_step,
            Some((u_prev, g_prev)) => {
                let mut num = 0.0;
                let mut den = 0.0;
                for i in 0..u.data.len() {
                    let du = u.data[i] - u_prev.data[i];
                    let dg = eval.grad.data[i] - g_prev.data[i];
                    num += du * dg;
                    den += dg * dg;
                }
                let alpha = num / den;
                if den < 1e-14 || !alpha.is_finite() || alpha <= 0.0 {
                    opts.init_step
                } else {
                    alpha
                }
            }
        };
        let mut u_next = u.clone();
        for (a, g) in u_next.data.iter_mut().zip(&eval.grad.data) {
            *a -= alpha * g;
        }
        if let Some(bound) = opts.clamp {
            for a in u_next.data.iter_mut() {
                *a = a.clamp(-bound, bound);
            }
        }
        prev = Some((std::mem::replace(&mut u, u_next), eval.grad.clone()));
        eval = evaluate(state0, &u, params, cost)?;
        cost_history.push(eval.cost);
        grad_norm_history.push(eval.grad_norm);
        iterations += 1;
    }

    Ok(OCPResult {
        u_opt: u,
        traj: eval.traj,
        cost_history,
        grad_norm_history,
        iterations,
        converged,
    })
}
