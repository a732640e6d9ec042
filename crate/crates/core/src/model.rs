//! Alignment-model primitives.
//!
//! Agents `i = 0..N` carry positions `x_i` and velocities `v_i` in `R^d`.
//! The free dynamics align velocities through a distance-weighted average,
//!
//! ```text
//! dx_i/dt = v_i,
//! dv_i/dt = (1/N) Σ_j a(‖x_i − x_j‖) (v_j − v_i),      a(r) = K/(1+r²)^β,
//! ```
//!
//! optionally forced by a per-agent control `u_i(t)`. Consensus is measured
//! by the quadratic spread functionals `V = B(v,v)` and `X = B(x,x)` built
//! from the bilinear form `B`. All arrays are flat, row-major `[agent][axis]`
//! (`idx = i·d + c`), which keeps the O(N²) pair loops allocation-free.

use crate::error::{CoreError, Result};

/// Physical and population parameters of the alignment model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    /// Agent count `N ≥ 1`.
    pub n: usize,
    /// Spatial dimension `d ≥ 1`.
    pub d: usize,
    /// Kernel strength `K > 0`.
    pub k: f64,
    /// Kernel decay exponent `β ≥ 0`.
    pub beta: f64,
}

impl ModelParams {
    /// Validates `K > 0`, `β ≥ 0` (both finite), `N ≥ 1`, `d ≥ 1`.
    pub fn new(n: usize, d: usize, k: f64, beta: f64) -> Result<Self> {
        if n < 1 {
            return Err(CoreError::InvalidParameter("agent count N must be ≥ 1".into()));
        }
        if d < 1 {
            return Err(CoreError::InvalidParameter("dimension d must be ≥ 1".into()));
        }
        if !(k.is_finite() && k > 0.0) {
            return Err(CoreError::InvalidParameter(format!(
                "kernel strength K must be finite and > 0, got {k}"
            )));
        }
        if !(beta.is_finite() && beta >= 0.0) {
            return Err(CoreError::InvalidParameter(format!(
                "kernel exponent beta must be finite and ≥ 0, got {beta}"
            )));
        }
        Ok(Self { n, d, k, beta })
    }
}

/// Positions and velocities of the whole swarm, flat `[agent][axis]` layout.
#[derive(Debug, Clone, PartialEq)]
pub struct SwarmState {
    pub x: Vec<f64>,
    pub v: Vec<f64>,
    pub n: usize,
    pub d: usize,
}

impl SwarmState {
    /// Builds a state, checking the `N×d` shape and that every entry is finite.
    pub fn new(x: Vec<f64>, v: Vec<f64>, n: usize, d: usize) -> Result<Self> {
        if x.len() != n * d || v.len() != n * d {
            return Err(CoreError::ShapeMismatch(format!(
                "state arrays must have length N·d = {}, got x: {}, v: {}",
                n * d,
                x.len(),
                v.len()
            )));
        }
        if !x.iter().chain(v.iter()).all(|a| a.is_finite()) {
            return Err(CoreError::NonFinite("state contains a non-finite entry".into()));
        }
        Ok(Self { x, v, n, d })
    }

    /// All-zero state (consensus at rest at the origin).
    pub fn zeros(n: usize, d: usize) -> Self {
        Self { x: vec![0.0; n * d], v: vec![0.0; n * d], n, d }
    }

    /// True when every entry of both arrays is finite.
    pub fn is_finite(&self) -> bool {
        self.x.iter().chain(self.v.iter()).all(|a| a.is_finite())
    }
}

/// Uniform time grid `t_k = k·dt`, `k = 0..N_T`, with `t_{N_T−1} = T`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    /// Horizon `T > 0`.
    pub t_final: f64,
    /// Step `dt > 0`.
    pub dt: f64,
    /// Node count `N_T = round(T/dt) + 1`.
    pub n_nodes: usize,
}

impl TimeGrid {
    /// Builds the grid, requiring `dt` to divide `T` (within 1e-12·T).
    pub fn new(t_final: f64, dt: f64) -> Result<Self> {
        if !(t_final.is_finite() && t_final > 0.0) {
            return Err(CoreError::InvalidParameter(format!(
                "horizon T must be finite and > 0, got {t_final}"
            )));
        }
        if !(dt.is_finite() && dt > 0.0 && dt <= t_final) {
            return Err(CoreError::InvalidParameter(format!(
                "step dt must satisfy 0 < dt ≤ T, got {dt}"
            )));
        }
        let steps = (t_final / dt).round();
        if ((steps * dt) - t_final).abs() > 1e-12 * t_final {
            return Err(CoreError::InvalidParameter(format!(
                "dt = {dt} does not divide T = {t_final}: last node would miss T"
            )));
        }
        Ok(Self { t_final, dt, n_nodes: steps as usize + 1 })
    }

    /// Node time `t_k = k·dt`.
    pub fn node(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    /// Trapezoid quadrature weights: `dt/2` at both ends, `dt` inside.
    pub fn weights(&self) -> Vec<f64> {
        let mut w = vec![self.dt; self.n_nodes];
        w[0] = 0.5 * self.dt;
        w[self.n_nodes - 1] = 0.5 * self.dt;
        w
    }
}

/// Nodal control values, `N_T × N × d`, piecewise-constant on `[t_k, t_{k+1})`.
///
/// The value at the final node never enters the flow (there is no step after
/// it) but still carries quadrature weight in the cost.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlField {
    /// Flat storage, `idx = (k·N + i)·d + c`.
    pub data: Vec<f64>,
    pub n_nodes: usize,
    pub n: usize,
    pub d: usize,
}

impl ControlField {
    /// The zero control.
    pub fn zeros(n_nodes: usize, n: usize, d: usize) -> Self {
        Self { data: vec![0.0; n_nodes * n * d], n_nodes, n, d }
    }

    /// Wraps flat data, checking shape and finiteness.
    pub fn from_data(data: Vec<f64>, n_nodes: usize, n: usize, d: usize) -> Result<Self> {
        if data.len() != n_nodes * n * d {
            return Err(CoreError::ShapeMismatch(format!(
                "control field must have length N_T·N·d = {}, got {}",
                n_nodes * n * d,
                data.len()
            )));
        }
        if !data.iter().all(|a| a.is_finite()) {
            return Err(CoreError::NonFinite("control field contains a non-finite entry".into()));
        }
        Ok(Self { data, n_nodes, n, d })
    }

    /// The `N×d` block at node `k`.
    pub fn node(&self, k: usize) -> &[f64] {
        let b = self.n * self.d;
        &self.data[k * b..(k + 1) * b]
    }

    /// Mutable `N×d` block at node `k`.
    pub fn node_mut(&mut self, k: usize) -> &mut [f64] {
        let b = self.n * self.d;
        &mut self.data[k * b..(k + 1) * b]
    }
}

/// Communication kernel `a(r) = K/(1+r²)^β`; always in `(0, K]`.
pub fn kernel_eval(r: f64, p: &ModelParams) -> f64 {
    debug_assert!(r.is_finite() && r >= 0.0, "kernel argument must be a finite distance");
    p.k / (1.0 + r * r).powf(p.beta)
}

/// The ratio `a'(r)/r` in its simplified form `−2βK/(1+r²)^{β+1}`.
///
/// The simplification removes the 0/0 at `r = 0` (coincident agents), where
/// the ratio extends continuously to `−2βK`.
pub fn kernel_slope_ratio(r: f64, p: &ModelParams) -> f64 {
    debug_assert!(r.is_finite() && r >= 0.0, "kernel argument must be a finite distance");
    -2.0 * p.beta * p.k / (1.0 + r * r).powf(p.beta + 1.0)
}

/// Squared Euclidean distance between rows `i` and `j` of `x`.
#[inline]
fn dist_sq(x: &[f64], d: usize, i: usize, j: usize) -> f64 {
    let (a, b) = (&x[i * d..(i + 1) * d], &x[j * d..(j + 1) * d]);
    a.iter().zip(b).map(|(p, q)| (p - q) * (p - q)).sum()
}

/// Alignment average `out_i = (1/N) Σ_j a(‖x_i−x_j‖) (w_j − w_i)`.
///
/// This single kernel drives both the velocity equation (`w = v`) and, because
/// the coupling weights are symmetric, the transposed velocity-velocity
/// sensitivity used by the adjoint (`w = q`). The pair loop exploits
/// `a(r_ij) = a(r_ji)` and the exact cancellation of the `j = i` term.
pub fn alignment_force(p: &ModelParams, x: &[f64], w: &[f64], out: &mut [f64]) {
    let (n, d) = (p.n, p.d);
    out.fill(0.0);
    let inv_n = 1.0 / n as f64;
    for i in 0..n {
        for j in (i + 1)..n {
            let a = kernel_eval(dist_sq(x, d, i, j).sqrt(), p) * inv_n;
            for c in 0..d {
                let diff = a * (w[j * d + c] - w[i * d + c]);
                out[i * d + c] += diff;
                out[j * d + c] -= diff;
            }
        }
    }
}

/// Transposed position sensitivity of the alignment force, applied to `mu`:
///
/// `out_m = (1/N) Σ_j (a'(r_mj)/r_mj) ⟨v_j−v_m, mu_j−mu_m⟩ (x_j−x_m)`.
///
/// The scalar pair factor is symmetric under `m ↔ j` while the direction
/// flips sign, so the pair loop accumulates `±`.
pub fn alignment_position_vjp(p: &ModelParams, x: &[f64], v: &[f64], mu: &[f64], out: &mut [f64]) {
    let (n, d) = (p.n, p.d);
    out.fill(0.0);
    let inv_n = 1.0 / n as f64;
    for m in 0..n {
        for j in (m + 1)..n {
            let slope = kernel_slope_ratio(dist_sq(x, d, m, j).sqrt(), p);
            let mut dot = 0.0;
            for c in 0..d {
                dot += (v[j * d + c] - v[m * d + c]) * (mu[j * d + c] - mu[m * d + c]);
            }
            let s = slope * dot * inv_n;
            for c in 0..d {
                let g = s * (x[j * d + c] - x[m * d + c]);
                out[m * d + c] += g;
                out[j * d + c] -= g;
            }
        }
    }
}

/// In-place controlled right-hand side: `dx = v`, `dv = alignment + u`.
///
/// Pass `u = None` for the free flow. This is the buffer-reusing kernel the
/// integrators call; the allocating wrappers below give the one-shot API.
pub(crate) fn rhs_into(
    p: &ModelParams,
    x: &[f64],
    v: &[f64],
    u: Option<&[f64]>,
    dx: &mut [f64],
    dv: &mut [f64],
) {
    dx.copy_from_slice(v);
    alignment_force(p, x, v, dv);
    if let Some(u) = u {
        for (dvi, ui) in dv.iter_mut().zip(u) {
            *dvi += ui;
        }
    }
}

/// Free-flow derivative `(dx, dv)` returned as a state-shaped pair.
pub fn free_rhs(state: &SwarmState, p: &ModelParams) -> SwarmState {
    let mut out = SwarmState::zeros(state.n, state.d);
    rhs_into(p, &state.x, &state.v, None, &mut out.x, &mut out.v);
    out
}

/// Controlled derivative: free flow plus `u_k` on the velocity equation.
pub fn controlled_rhs(state: &SwarmState, u_k: &[f64], p: &ModelParams) -> Result<SwarmState> {
    if u_k.len() != state.n * state.d {
        return Err(CoreError::ShapeMismatch(format!(
            "control block must have length N·d = {}, got {}",
            state.n * state.d,
            u_k.len()
        )));
    }
    let mut out = SwarmState::zeros(state.n, state.d);
    rhs_into(p, &state.x, &state.v, Some(u_k), &mut out.x, &mut out.v);
    Ok(out)
}

/// Quadratic spread form `B(w, v) = (1/2N²) Σ_{i,j} ‖w_i − v_j‖²`.
///
/// `B(v, v) = 0` exactly when all rows of `v` coincide.
pub fn bilinear_b(w: &[f64], v: &[f64], d: usize) -> f64 {
    debug_assert_eq!(w.len(), v.len());
    debug_assert_eq!(w.len() % d, 0);
    let n = w.len() / d;
    let mut total = 0.0;
    for i in 0..n {
        for j in 0..n {
            let mut s = 0.0;
            for c in 0..d {
                let diff = w[i * d + c] - v[j * d + c];
                s += diff * diff;
            }
            total += s;
        }
    }
    total / (2.0 * (n as f64) * (n as f64))
}

/// The consensus functionals `(V, X) = (B(v,v), B(x,x))`.
pub fn consensus_functionals(state: &SwarmState) -> (f64, f64) {
    (bilinear_b(&state.v, &state.v, state.d), bilinear_b(&state.x, &state.x, state.d))
}

/// Arithmetic mean of the velocity rows, `v̄ = (1/N) Σ_j v_j`.
pub fn mean_velocity(state: &SwarmState) -> Vec<f64> {
    let (n, d) = (state.n, state.d);
    let mut mean = vec![0.0; d];
    for row in state.v.chunks_exact(d) {
        for (m, value) in mean.iter_mut().zip(row) {
            *m += value;
        }
    }
    for m in &mut mean {
        *m /= n as f64;
    }
    mean
}

/// Outcome of the sufficient consensus conditions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConsensusPrediction {
    /// `β ≤ 1/2`: consensus for every initial condition.
    Unconditional,
    /// `β > 1/2` and `√V(0) < Θ`: consensus for this initial condition.
    Conditional,
    /// Neither sufficient condition holds; no conclusion (not "divergent").
    Unknown,
}

impl std::fmt::Display for ConsensusPrediction {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ConsensusPrediction::Unconditional => "Unconditional",
            ConsensusPrediction::Conditional => "Conditional",
            ConsensusPrediction::Unknown => "Unknown",
        })
    }
}

/// Kernel in the integration variable `w = 2√N s`: `K/(1+w²)^β`.
#[inline]
fn kernel_w(w: f64, p: &ModelParams) -> f64 {
    p.k / (1.0 + w * w).powf(p.beta)
}

/// Adaptive Simpson quadrature of `kernel_w` on `[a, b]` to absolute
/// tolerance `tol`, with bounded recursion depth. The memoised endpoint
/// values ride along as arguments, as usual for this scheme.
#[allow(clippy::too_many_arguments)]
fn simpson_adaptive(
    p: &ModelParams,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    tol: f64,
    depth: u32,
) -> f64 {
    let m = 0.5 * (a + b);
    let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
    let (flm, frm) = (kernel_w(lm, p), kernel_w(rm, p));
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    // Richardson acceptance: Simpson halving reduces the error ~16-fold.
    if depth == 0 || delta.abs() <= 15.0 * tol {
        return left + right + delta / 15.0;
    }
    simpson_adaptive(p, a, m, fa, flm, fm, 0.5 * tol, depth - 1)
        + simpson_adaptive(p, m, b, fm, frm, fb, 0.5 * tol, depth - 1)
}

/// Integrates `kernel_w` on `[a, b]` to absolute tolerance `tol`.
fn integrate_kernel_w(p: &ModelParams, a: f64, b: f64, tol: f64) -> f64 {
    let m = 0.5 * (a + b);
    simpson_adaptive(p, a, b, kernel_w(a, p), kernel_w(m, p), kernel_w(b, p), tol, 40)
}

/// Upper bound on the tail `∫_W^∞ K/(1+w²)^β dw ≤ K·W^{1−2β}/(2β−1)`.
///
/// Valid for `β > 1/2`, `W > 0` (uses `(1+w²)^β ≥ w^{2β}`).
fn kernel_tail_bound(p: &ModelParams, w: f64) -> f64 {
    p.k * w.powf(1.0 - 2.0 * p.beta) / (2.0 * p.beta - 1.0)
}

/// The threshold `Θ = ∫_{√X(0)}^∞ a(2√N s) ds` of the conditional-consensus
/// test, for `β > 1/2`.
///
/// `β = 1` uses the closed form `Θ = K/(2√N)·(π/2 − arctan(2√N·√X(0)))`;
/// otherwise the integral is accumulated over geometrically growing panels
/// (absolute tolerance 1e-10) until the analytic tail bound is negligible
/// against the kernel value at the lower limit.
pub fn theta_threshold(p: &ModelParams, x0: f64) -> Result<f64> {
    if p.beta <= 0.5 {
        return Err(CoreError::InvalidParameter(
            "consensus threshold is defined for beta > 1/2 (beta ≤ 1/2 is unconditional)".into(),
        ));
    }
    let two_sqrt_n = 2.0 * (p.n as f64).sqrt();
    let w0 = two_sqrt_n * x0.sqrt();
    if p.beta == 1.0 {
        return Ok(p.k / two_sqrt_n * (std::f64::consts::FRAC_PI_2 - w0.atan()));
    }
    let cutoff = 1e-12 * kernel_w(w0, p);
    let mut total = 0.0;
    let mut lo = w0;
    let mut hi = (w0 * 2.0).max(1.0);
    for _ in 0..256 {
        total += integrate_kernel_w(p, lo, hi, 1e-12);
        if kernel_w(hi, p) < cutoff && kernel_tail_bound(p, hi) < 1e-10 {
            return Ok(total / two_sqrt_n);
        }
        lo = hi;
        hi *= 2.0;
    }
    Err(CoreError::Quadrature(format!(
        "kernel tail decays too slowly for beta = {} (threshold integral not resolved)",
        p.beta
    )))
}

/// Applies the two sufficient consensus conditions to an initial state.
///
/// `β ≤ 1/2` is unconditional. For `β > 1/2` the verdict compares `√V(0)`
/// against `Θ`; because only the comparison matters, the integral is bracketed
/// by running lower/upper bounds and the scan stops as soon as the verdict is
/// decided — this stays robust for exponents just above 1/2 where `Θ` itself
/// is astronomically large.
pub fn predict_consensus(state0: &SwarmState, p: &ModelParams) -> Result<ConsensusPrediction> {
    if p.beta <= 0.5 {
        return Ok(ConsensusPrediction::Unconditional);
    }
    let (v0, x0) = consensus_functionals(state0);
    let target = v0.sqrt();
    if p.beta == 1.0 {
        let theta = theta_threshold(p, x0)?;
        return Ok(if target < theta {
            ConsensusPrediction::Conditional
        } else {
            ConsensusPrediction::Unknown
        });
    }
    let two_sqrt_n = 2.0 * (p.n as f64).sqrt();
    // Work with the scaled target so panels integrate kernel_w directly.
    let scaled_target = target * two_sqrt_n;
    let mut lower = 0.0;
    let mut lo = two_sqrt_n * x0.sqrt();
    let mut hi = (lo * 2.0).max(1.0);
    for _ in 0..256 {
        lower += integrate_kernel_w(p, lo, hi, 1e-12);
        if scaled_target < lower {
            return Ok(ConsensusPrediction::Conditional);
        }
        if scaled_target >= lower + kernel_tail_bound(p, hi) {
            return Ok(ConsensusPrediction::Unknown);
        }
        lo = hi;
        hi *= 2.0;
    }
    Err(CoreError::Quadrature(format!(
        "consensus verdict undecidable at working precision for beta = {}",
        p.beta
    )))
}
