//! Particle swarm optimisation.
//!
//! Derivative-free minimisation used for the non-smooth ℓ₁ window costs. The
//! update follows the two-line system
//!
//! ```text
//! z_ij ← z_ij + w_ij
//! w_ij ← ω·w_ij + c1·ξ (m_ij − z_ij) + c2·η (m_hj − z_ij)
//! ```
//!
//! applied coordinate by coordinate with the freshly moved position `z`, where
//! `m_i` is particle i's best-seen point, `h` indexes the best particle of the
//! swarm, and `ξ, η ~ U[0,1]` are drawn fresh per particle, coordinate, and
//! iteration. `ω = 1` recovers the plain system; the default 0.72 with
//! `c1 = c2 = 1.49` is the standard stabilised choice. The global best is
//! frozen during each sweep and refreshed once per iteration.
//!
//! Draws come from counter-based substreams of the config seed, so results
//! are bit-reproducible and independent of evaluation order.

use crate::error::{CoreError, Result};
use crate::rng::substream_rng;
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Swarm hyper-parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PSOConfig {
    /// Particle count (≥ 2).
    pub swarm_size: usize,
    /// Personal-best pull.
    pub c1: f64,
    /// Global-best pull.
    pub c2: f64,
    /// Velocity inertia multiplier (1 recovers the plain update).
    pub inertia: f64,
    /// Iterations to run (≥ 1); there is no early stop.
    pub max_iters: usize,
    /// Standard deviation of the Gaussian initialisation cloud.
    pub init_spread: f64,
    /// Master seed for all draws.
    pub seed: u64,
}

impl Default for PSOConfig {
    fn default() -> Self {
        Self {
            swarm_size: 40,
            c1: 1.49,
            c2: 1.49,
            inertia: 0.72,
            max_iters: 100,
            init_spread: 0.5,
            seed: 1,
        }
    }
}

impl PSOConfig {
    /// Checks the documented invariants.
    pub fn validate(&self) -> Result<()> {
        if self.swarm_size < 2 {
            return Err(CoreError::InvalidParameter("swarm_size must be ≥ 2".into()));
        }
        if self.max_iters < 1 {
            return Err(CoreError::InvalidParameter("max_iters must be ≥ 1".into()));
        }
        if !(self.c1 > 0.0 && self.c2 > 0.0 && self.c1.is_finite() && self.c2.is_finite()) {
            return Err(CoreError::InvalidParameter("c1 and c2 must be finite and > 0".into()));
        }
        if !(self.inertia >= 0.0 && self.inertia.is_finite()) {
            return Err(CoreError::InvalidParameter("inertia must be finite and ≥ 0".into()));
        }
        if !(self.init_spread > 0.0 && self.init_spread.is_finite()) {
            return Err(CoreError::InvalidParameter("init_spread must be finite and > 0".into()));
        }
        Ok(())
    }
}

/// Non-finite objective values are never allowed to win.
#[inline]
fn sanitize(value: f64) -> f64 {
    if value.is_finite() {
        value
    } else {
        f64::INFINITY
    }
}

/// Minimises `objective` over `R^dim`, swarm initialised around the origin.
pub fn pso_minimize(
    objective: impl FnMut(&[f64]) -> f64,
    dim: usize,
    cfg: &PSOConfig,
) -> Result<(Vec<f64>, f64)> {
    pso_minimize_around(objective, &vec![0.0; dim], cfg)
}

/// Minimises `objective`, swarm initialised around `center` (warm start).
///
/// Particle 0 starts at the centre itself and particle 1 at the origin — the
/// zero vector is the natural sparse candidate for control windows and this
/// keeps it exactly reachable; the rest start at centre + Gaussian noise of
/// scale `init_spread`. All initial velocities are zero. Returns the best
/// position and value seen over initialisation plus `max_iters` sweeps; ties
/// resolve to the lowest particle index.
pub fn pso_minimize_around(
    mut objective: impl FnMut(&[f64]) -> f64,
    center: &[f64],
    cfg: &PSOConfig,
) -> Result<(Vec<f64>, f64)> {
    cfg.validate()?;
    let dim = center.len();
    if dim == 0 {
        return Err(CoreError::InvalidParameter("search space dimension must be ≥ 1".into()));
    }
    let swarm = cfg.swarm_size;

    // Initial positions.
    let mut z: Vec<Vec<f64>> = Vec::with_capacity(swarm);
    z.push(center.to_vec());
    z.push(vec![0.0; dim]);
    let mut init_rng = substream_rng(cfg.seed, u64::MAX, 0);
    let cloud = Normal::new(0.0, cfg.init_spread)
        .map_err(|e| CoreError::InvalidParameter(format!("initialisation spread: {e}")))?;
    for _ in 2..swarm {
        z.push(center.iter().map(|c| c + cloud.sample(&mut init_rng)).collect());
    }

    let mut w = vec![vec![0.0; dim]; swarm];
    let mut personal_best = z.clone();
    let mut personal_value: Vec<f64> = z.iter().map(|zi| sanitize(objective(zi))).collect();
    let mut best_idx = 0;
    for i in 1..swarm {
        if personal_value[i] < personal_value[best_idx] {
            best_idx = i;
        }
    }

    for iter in 0..cfg.max_iters {
        let global_best = personal_best[best_idx].clone();
        for i in 0..swarm {
            let mut rng = substream_rng(cfg.seed, i as u64, iter as u64);
            let (zi, wi) = (&mut z[i], &mut w[i]);
            for c in 0..dim {
                let xi: f64 = rng.random();
                let eta: f64 = rng.random();
                zi[c] += wi[c];
                wi[c] = cfg.inertia * wi[c]
                    + cfg.c1 * xi * (personal_best[i][c] - zi[c])
                    + cfg.c2 * eta * (global_best[c] - zi[c]);
            }
            let value = sanitize(objective(zi));
            if value < personal_value[i] {
                personal_value[i] = value;
                personal_best[i].copy_from_slice(zi);
            }
        }
        for i in 0..swarm {
            if personal_value[i] < personal_value[best_idx] {
                best_idx = i;
            }
        }
    }

    Ok((personal_best[best_idx].clone(), personal_value[best_idx]))
}
