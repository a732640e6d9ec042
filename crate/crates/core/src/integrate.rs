//! Fixed-step RK4 integration: forward for the swarm state, reverse for the
//! costate.
//!
//! The forward scheme holds the control constant across the four stages of
//! step `k` (the nodal field is piecewise-constant on `[t_k, t_{k+1})`).
//!
//! The costate pass is the exact transpose of that scheme: each reverse step
//! rebuilds the stage states from the stored node and pulls the cotangent
//! back through the stages, injecting the running-cost source with its
//! trapezoid weight at every node. The returned `q` is normalised by the
//! node weight, so `q + (2γ/N)·u` is the gradient of the *discrete* cost —
//! it agrees with central finite differences to roundoff, not merely to
//! O(dt²), which is what makes the gradient checks in `ocp` meaningful at
//! tight tolerances. As `dt → 0` the sweep is consistent with the costate
//! equations exposed by [`crate::ocp::adjoint_rhs`].

use crate::error::{CoreError, Result};
use crate::model::{
    alignment_force, alignment_position_vjp, mean_velocity, rhs_into, ControlField, ModelParams,
    SwarmState, TimeGrid,
};

/// A forward solution: one state per grid node.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub grid: TimeGrid,
    pub states: Vec<SwarmState>,
}

impl Trajectory {
    /// The state at the final node.
    pub fn terminal(&self) -> &SwarmState {
        self.states.last().expect("trajectory has at least the initial node")
    }
}

/// Costate arrays `(p, q)` per node, flat `N×d` blocks.
///
/// Both vanish at the final node. `q[k]` is the velocity-costate in its
/// discrete-L² representation (see module docs), the object entering the
/// cost gradient.
#[derive(Debug, Clone)]
pub struct AdjointTrajectory {
    pub grid: TimeGrid,
    pub p: Vec<Vec<f64>>,
    pub q: Vec<Vec<f64>>,
}

/// Scratch buffers for one RK4 step (reused across steps).
pub(crate) struct StageBufs {
    k1x: Vec<f64>,
    k1v: Vec<f64>,
    k2x: Vec<f64>,
    k2v: Vec<f64>,
    k3x: Vec<f64>,
    k3v: Vec<f64>,
    k4x: Vec<f64>,
    k4v: Vec<f64>,
    yx: Vec<f64>,
    yv: Vec<f64>,
}

impl StageBufs {
    pub(crate) fn new(nd: usize) -> Self {
        Self {
            k1x: vec![0.0; nd],
            k1v: vec![0.0; nd],
            k2x: vec![0.0; nd],
            k2v: vec![0.0; nd],
            k3x: vec![0.0; nd],
            k3v: vec![0.0; nd],
            k4x: vec![0.0; nd],
            k4v: vec![0.0; nd],
            yx: vec![0.0; nd],
            yv: vec![0.0; nd],
        }
    }
}

/// `y = base + h·k` over both components.
#[inline]
fn axpy(
    base_x: &[f64],
    base_v: &[f64],
    h: f64,
    kx: &[f64],
    kv: &[f64],
    yx: &mut [f64],
    yv: &mut [f64],
) {
    for i in 0..base_x.len() {
        yx[i] = base_x[i] + h * kx[i];
        yv[i] = base_v[i] + h * kv[i];
    }
}

/// One classical RK4 step of the controlled flow, in place on `(x, v)`.
pub(crate) fn rk4_step(
    p: &ModelParams,
    dt: f64,
    x: &mut [f64],
    v: &mut [f64],
    u_k: Option<&[f64]>,
    bufs: &mut StageBufs,
) {
    let b = bufs;
    rhs_into(p, x, v, u_k, &mut b.k1x, &mut b.k1v);
    axpy(x, v, 0.5 * dt, &b.k1x, &b.k1v, &mut b.yx, &mut b.yv);
    rhs_into(p, &b.yx, &b.yv, u_k, &mut b.k2x, &mut b.k2v);
    axpy(x, v, 0.5 * dt, &b.k2x, &b.k2v, &mut b.yx, &mut b.yv);
    rhs_into(p, &b.yx, &b.yv, u_k, &mut b.k3x, &mut b.k3v);
    axpy(x, v, dt, &b.k3x, &b.k3v, &mut b.yx, &mut b.yv);
    rhs_into(p, &b.yx, &b.yv, u_k, &mut b.k4x, &mut b.k4v);
    let w = dt / 6.0;
    for i in 0..x.len() {
        x[i] += w * (b.k1x[i] + 2.0 * b.k2x[i] + 2.0 * b.k3x[i] + b.k4x[i]);
        v[i] += w * (b.k1v[i] + 2.0 * b.k2v[i] + 2.0 * b.k3v[i] + b.k4v[i]);
    }
}

/// Integrates the controlled dynamics over the grid with classical RK4.
///
/// Control values are taken from `u` node by node; `u ≡ 0` reproduces the
/// free flow. Fails with the offending step index if the state leaves the
/// finite range.
pub fn integrate_forward(
    state0: &SwarmState,
    u: &ControlField,
    grid: &TimeGrid,
    params: &ModelParams,
) -> Result<Trajectory> {
    let nd = params.n * params.d;
    if state0.n != params.n || state0.d != params.d {
        return Err(CoreError::ShapeMismatch(format!(
            "initial state is {}×{}, model expects {}×{}",
            state0.n, state0.d, params.n, params.d
        )));
    }
    if u.n_nodes != grid.n_nodes || u.n != params.n || u.d != params.d {
        return Err(CoreError::ShapeMismatch(format!(
            "control field is {}×{}×{}, expected {}×{}×{}",
            u.n_nodes, u.n, u.d, grid.n_nodes, params.n, params.d
        )));
    }
    let mut states = Vec::with_capacity(grid.n_nodes);
    states.push(state0.clone());
    let mut x = state0.x.clone();
    let mut v = state0.v.clone();
    let mut bufs = StageBufs::new(nd);
    for k in 0..grid.n_nodes - 1 {
        rk4_step(params, grid.dt, &mut x, &mut v, Some(u.node(k)), &mut bufs);
        if !x.iter().chain(v.iter()).all(|a| a.is_finite()) {
            return Err(CoreError::NonFinite(format!("state blew up during step {k}")));
        }
        states.push(SwarmState { x: x.clone(), v: v.clone(), n: params.n, d: params.d });
    }
    Ok(Trajectory { grid: *grid, states })
}

/// `out_m = (2/N)(v_m − v̄)`: the velocity gradient of the running cost's
/// consensus term (positions do not enter the running cost).
fn consensus_cost_grad_v(state: &SwarmState, out: &mut [f64]) {
    let (n, d) = (state.n, state.d);
    let vbar = mean_velocity(state);
    let scale = 2.0 / n as f64;
    for i in 0..n {
        for c in 0..d {
            out[i * d + c] = scale * (state.v[i * d + c] - vbar[c]);
        }
    }
}

/// Applies the transposed flow Jacobian at `(x, v)` to the cotangent
/// `(bx, bv)`: `νx = g_xᵀ bv`, `νv = bx + g_vᵀ bv`, where `g` is the
/// alignment force. The velocity block reuses `alignment_force` directly
/// because the coupling weights are symmetric.
fn flow_vjp(
    params: &ModelParams,
    x: &[f64],
    v: &[f64],
    bx: &[f64],
    bv: &[f64],
    nu_x: &mut [f64],
    nu_v: &mut [f64],
) {
    alignment_position_vjp(params, x, v, bv, nu_x);
    alignment_force(params, x, bv, nu_v);
    for i in 0..bx.len() {
        nu_v[i] += bx[i];
    }
}

/// Reverse sweep of the forward scheme: exact discrete costate.
///
/// Per reverse step the stage states are rebuilt from the stored node (the
/// control block is needed for that — stages sit off the stored trajectory),
/// the cotangent is pulled through the four stages, and the running-cost
/// source is injected with its trapezoid weight. Outputs:
///
/// - `p[k]`: position costate at node `k` (zero at the final node),
/// - `q[k]`: velocity costate normalised by the node weight, so that
///   `q[k] + (2γ/N)·u[k]` is exactly the discrete-L² cost gradient
///   (zero at the final node: the terminal control block never moves the
///   state, so its flow cotangent is empty).
pub fn integrate_adjoint(
    traj: &Trajectory,
    params: &ModelParams,
    u: &ControlField,
) -> Result<AdjointTrajectory> {
    let grid = traj.grid;
    let nt = grid.n_nodes;
    let nd = params.n * params.d;
    if u.n_nodes != nt || u.n != params.n || u.d != params.d {
        return Err(CoreError::ShapeMismatch(format!(
            "control field is {}×{}×{}, expected {}×{}×{}",
            u.n_nodes, u.n, u.d, nt, params.n, params.d
        )));
    }
    let weights = grid.weights();
    let dt = grid.dt;
    let mut p_out = vec![vec![0.0; nd]; nt];
    let mut q_out = vec![vec![0.0; nd]; nt];

    // Current adjoint (λx, λv), initialised with the terminal node's source:
    // the cost has no position dependence, so λx(T) = 0 = p(T). q(T) = 0 by
    // construction (see docs above).
    let mut lam_x = vec![0.0; nd];
    let mut lam_v = vec![0.0; nd];
    consensus_cost_grad_v(&traj.states[nt - 1], &mut lam_v);
    for a in lam_v.iter_mut() {
        *a *= weights[nt - 1];
    }

    let mut bufs = StageBufs::new(nd);
    // Stage cotangents and VJP results: (bx, bv) per stage, (νx, νv) shared.
    let mut b = [
        (vec![0.0; nd], vec![0.0; nd]),
        (vec![0.0; nd], vec![0.0; nd]),
        (vec![0.0; nd], vec![0.0; nd]),
        (vec![0.0; nd], vec![0.0; nd]),
    ];
    let mut nu_x = vec![0.0; nd];
    let mut nu_v = vec![0.0; nd];
    let mut acc_x = vec![0.0; nd];
    let mut acc_v = vec![0.0; nd];
    let mut src = vec![0.0; nd];

    for k in (0..nt - 1).rev() {
        let s = &traj.states[k];
        let u_k = Some(u.node(k));

        // Rebuild the stage states Y2, Y3, Y4 (Y1 is the node itself).
        rhs_into(params, &s.x, &s.v, u_k, &mut bufs.k1x, &mut bufs.k1v);
        let (mut y2x, mut y2v) = (vec![0.0; nd], vec![0.0; nd]);
        axpy(&s.x, &s.v, 0.5 * dt, &bufs.k1x, &bufs.k1v, &mut y2x, &mut y2v);
        rhs_into(params, &y2x, &y2v, u_k, &mut bufs.k2x, &mut bufs.k2v);
        let (mut y3x, mut y3v) = (vec![0.0; nd], vec![0.0; nd]);
        axpy(&s.x, &s.v, 0.5 * dt, &bufs.k2x, &bufs.k2v, &mut y3x, &mut y3v);
        rhs_into(params, &y3x, &y3v, u_k, &mut bufs.k3x, &mut bufs.k3v);
        let (mut y4x, mut y4v) = (vec![0.0; nd], vec![0.0; nd]);
        axpy(&s.x, &s.v, dt, &bufs.k3x, &bufs.k3v, &mut y4x, &mut y4v);

        // Seed stage cotangents with the RK4 combination weights.
        for (idx, coeff) in [(0, dt / 6.0), (1, dt / 3.0), (2, dt / 3.0), (3, dt / 6.0)] {
            for i in 0..nd {
                b[idx].0[i] = coeff * lam_x[i];
                b[idx].1[i] = coeff * lam_v[i];
            }
        }

        // Pull back through the stage chain; each ν also accumulates into the
        // node cotangent (every stage state references the node directly).
        acc_x.copy_from_slice(&lam_x);
        acc_v.copy_from_slice(&lam_v);
        flow_vjp(params, &y4x, &y4v, &b[3].0, &b[3].1, &mut nu_x, &mut nu_v);
        for i in 0..nd {
            b[2].0[i] += dt * nu_x[i];
            b[2].1[i] += dt * nu_v[i];
            acc_x[i] += nu_x[i];
            acc_v[i] += nu_v[i];
        }
        flow_vjp(params, &y3x, &y3v, &b[2].0, &b[2].1, &mut nu_x, &mut nu_v);
        for i in 0..nd {
            b[1].0[i] += 0.5 * dt * nu_x[i];
            b[1].1[i] += 0.5 * dt * nu_v[i];
            acc_x[i] += nu_x[i];
            acc_v[i] += nu_v[i];
        }
        flow_vjp(params, &y2x, &y2v, &b[1].0, &b[1].1, &mut nu_x, &mut nu_v);
        for i in 0..nd {
            b[0].0[i] += 0.5 * dt * nu_x[i];
            b[0].1[i] += 0.5 * dt * nu_v[i];
            acc_x[i] += nu_x[i];
            acc_v[i] += nu_v[i];
        }
        flow_vjp(params, &s.x, &s.v, &b[0].0, &b[0].1, &mut nu_x, &mut nu_v);
        for i in 0..nd {
            acc_x[i] += nu_x[i];
            acc_v[i] += nu_v[i];
        }

        // Control cotangent of the step: the velocity rows of all four final
        // stage cotangents (the control enters every stage additively).
        for (i, q) in q_out[k].iter_mut().enumerate() {
            *q = (b[0].1[i] + b[1].1[i] + b[2].1[i] + b[3].1[i]) / weights[k];
        }

        // Node k's own running-cost source, then commit λ ← node k.
        consensus_cost_grad_v(s, &mut src);
        for i in 0..nd {
            lam_x[i] = acc_x[i];
            lam_v[i] = acc_v[i] + weights[k] * src[i];
        }
        if !lam_x.iter().chain(lam_v.iter()).all(|a| a.is_finite()) {
            return Err(CoreError::NonFinite(format!("costate blew up at node {k}")));
        }
        p_out[k].copy_from_slice(&lam_x);
    }
    Ok(AdjointTrajectory { grid, p: p_out, q: q_out })
}
