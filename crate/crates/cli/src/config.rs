//! TOML configuration with full defaults and typed section builders.
//!
//! Every section is optional; an empty file (or no file at all) yields the
//! default experiment: 20 planar agents, alignment kernel `K = 1, β = 1`,
//! horizon `T = 10` at `dt = 0.1`, quadratic control weight `γ = 1`, and a
//! single master seed that all samplers and solvers derive substreams from.

use anyhow::{Context, Result};
use flock_core::{
    CostParams, DescentOptions, MixtureConfig, ModelParams, NMPCConfig, PSOConfig, SwarmState,
    TimeGrid,
};
use rand::Rng;
use serde::Deserialize;
use std::path::Path;

/// Complete run configuration as read from a TOML file.
#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct FileConfig {
    /// Master seed; every random draw in a run descends from it.
    pub seed: Seed,
    /// Directory all output files are written into.
    pub output_dir: OutputDir,
    pub model: ModelSection,
    pub grid: GridSection,
    pub cost: CostSection,
    pub descent: DescentSection,
    pub nmpc: NmpcSection,
    pub pso: PsoSection,
    pub mixture: MixtureSection,
    pub study: StudySection,
    pub initial: InitialSection,
}

/// Newtype so the top-level seed can default to 1.
#[derive(Debug, Clone, Copy, Deserialize)]
#[serde(transparent)]
pub struct Seed(pub u64);

impl Default for Seed {
    fn default() -> Self {
        Seed(1)
    }
}

/// Newtype so the output directory can default to `out`.
#[derive(Debug, Clone, Deserialize)]
#[serde(transparent)]
pub struct OutputDir(pub String);

impl Default for OutputDir {
    fn default() -> Self {
        OutputDir("out".into())
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelSection {
    /// Number of agents.
    pub n: usize,
    /// Spatial dimension.
    pub d: usize,
    /// Kernel strength K > 0.
    pub k: f64,
    /// Kernel decay exponent β > 0.
    pub beta: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self { n: 20, d: 2, k: 1.0, beta: 1.0 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSection {
    /// Final time T.
    pub t_final: f64,
    /// Step size; must divide T.
    pub dt: f64,
}

impl Default for GridSection {
    fn default() -> Self {
        Self { t_final: 10.0, dt: 0.1 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CostSection {
    /// Quadratic control penalty weight γ > 0.
    pub gamma: f64,
}

impl Default for CostSection {
    fn default() -> Self {
        Self { gamma: 1.0 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DescentSection {
    /// Gradient-norm stopping tolerance.
    pub tol: f64,
    /// Iteration cap.
    pub max_iters: usize,
    /// First (plain-gradient) step length.
    pub init_step: f64,
    /// Optional cap on the secant step length.
    pub clamp: Option<f64>,
}

impl Default for DescentSection {
    fn default() -> Self {
        Self { tol: 1e-3, max_iters: 500, init_step: 1e-2, clamp: None }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NmpcSection {
    /// Prediction horizon in steps.
    pub horizon: usize,
    /// Control-penalty exponent, 1 (sparse) or 2.
    pub r: u8,
    /// Control penalty weight for the window costs.
    pub gamma: f64,
}

impl Default for NmpcSection {
    fn default() -> Self {
        Self { horizon: 3, r: 1, gamma: 1.0 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PsoSection {
    pub swarm_size: usize,
    pub c1: f64,
    pub c2: f64,
    pub inertia: f64,
    pub max_iters: usize,
    pub init_spread: f64,
}

impl Default for PsoSection {
    fn default() -> Self {
        let d = PSOConfig::default();
        Self {
            swarm_size: d.swarm_size,
            c1: d.c1,
            c2: d.c2,
            inertia: d.inertia,
            max_iters: d.max_iters,
            init_spread: d.init_spread,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MixtureSection {
    pub mu1: Vec<f64>,
    pub mu2: Vec<f64>,
    pub sigma1: f64,
    pub sigma2: f64,
    pub weight: f64,
}

impl Default for MixtureSection {
    fn default() -> Self {
        let d = MixtureConfig::default_planar(0);
        Self { mu1: d.mu1, mu2: d.mu2, sigma1: d.sigma1, sigma2: d.sigma2, weight: d.weight }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StudySection {
    /// Swarm sizes to solve, in order.
    pub n_list: Vec<usize>,
    /// Bin count for the terminal velocity marginals.
    pub bins: usize,
}

impl Default for StudySection {
    fn default() -> Self {
        Self { n_list: vec![50, 100, 200, 400], bins: 50 }
    }
}

/// How the initial swarm state is drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitialKind {
    /// Positions and velocities uniform over the configured boxes.
    Uniform,
    /// Positions from the two-component Gaussian mixture, velocities = positions.
    Mixture,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct InitialSection {
    pub kind: InitialKind,
    /// `[lo, hi]` box for every position component (uniform kind).
    pub x_range: [f64; 2],
    /// `[lo, hi]` box for every velocity component (uniform kind).
    pub v_range: [f64; 2],
}

impl Default for InitialSection {
    fn default() -> Self {
        Self { kind: InitialKind::Uniform, x_range: [-1.0, 1.0], v_range: [-1.0, 1.0] }
    }
}

impl FileConfig {
    /// Reads and parses a TOML config file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config file {}", path.display()))?;
        Self::from_toml(&text).with_context(|| format!("parsing config file {}", path.display()))
    }

    /// Parses a TOML string (empty string = all defaults).
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn model_params(&self) -> Result<ModelParams> {
        Ok(ModelParams::new(self.model.n, self.model.d, self.model.k, self.model.beta)?)
    }

    pub fn time_grid(&self) -> Result<TimeGrid> {
        Ok(TimeGrid::new(self.grid.t_final, self.grid.dt)?)
    }

    pub fn cost_params(&self) -> Result<CostParams> {
        Ok(CostParams::new(self.cost.gamma, self.time_grid()?)?)
    }

    pub fn descent_options(&self) -> DescentOptions {
        let mut opts = DescentOptions::new(self.descent.tol, self.descent.max_iters);
        opts.init_step = self.descent.init_step;
        opts.clamp = self.descent.clamp;
        opts
    }

    pub fn nmpc_config(&self) -> Result<NMPCConfig> {
        Ok(NMPCConfig::new(self.nmpc.horizon, self.nmpc.r, self.nmpc.gamma)?)
    }

    pub fn pso_config(&self) -> PSOConfig {
        PSOConfig {
            swarm_size: self.pso.swarm_size,
            c1: self.pso.c1,
            c2: self.pso.c2,
            inertia: self.pso.inertia,
            max_iters: self.pso.max_iters,
            init_spread: self.pso.init_spread,
            seed: self.seed.0,
        }
    }

    pub fn mixture_config(&self) -> MixtureConfig {
        MixtureConfig {
            mu1: self.mixture.mu1.clone(),
            mu2: self.mixture.mu2.clone(),
            sigma1: self.mixture.sigma1,
            sigma2: self.mixture.sigma2,
            weight: self.mixture.weight,
            seed: self.seed.0,
        }
    }

    /// Draws the initial swarm state for the single-instance commands.
    ///
    /// Uniform draws fill all positions (agent-major), then all velocities,
    /// from substream 0 of the master seed. Mixture draws delegate to the
    /// study sampler at the configured swarm size.
    pub fn initial_state(&self) -> Result<SwarmState> {
        let (n, d) = (self.model.n, self.model.d);
        match self.initial.kind {
            InitialKind::Uniform => {
                let [x_lo, x_hi] = self.initial.x_range;
                let [v_lo, v_hi] = self.initial.v_range;
                anyhow::ensure!(x_lo < x_hi, "initial.x_range must be increasing");
                anyhow::ensure!(v_lo < v_hi, "initial.v_range must be increasing");
                let mut rng = flock_core::substream_rng(self.seed.0, 0, 0);
                let x = (0..n * d).map(|_| rng.random_range(x_lo..x_hi)).collect();
                let v = (0..n * d).map(|_| rng.random_range(v_lo..v_hi)).collect();
                Ok(SwarmState::new(x, v, n, d)?)
            }
            InitialKind::Mixture => {
                let mixture = self.mixture_config();
                anyhow::ensure!(
                    mixture.dim() == d,
                    "mixture centres are {}-dimensional but model.d = {d}",
                    mixture.dim()
                );
                Ok(flock_core::sample_initial(n, &mixture)?)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_toml_yields_the_default_experiment() {
        let cfg = FileConfig::from_toml("").unwrap();
        assert_eq!(cfg.seed.0, 1);
        assert_eq!(cfg.output_dir.0, "out");
        assert_eq!(cfg.model.n, 20);
        assert_eq!(cfg.model.d, 2);
        assert_eq!(cfg.grid.t_final, 10.0);
        assert_eq!(cfg.study.n_list, vec![50, 100, 200, 400]);
        assert_eq!(cfg.initial.kind, InitialKind::Uniform);
        let grid = cfg.time_grid().unwrap();
        assert_eq!(grid.n_nodes, 101);
    }

    #[test]
    fn sections_override_individually() {
        let cfg = FileConfig::from_toml(
            r#"
            seed = 42
            output_dir = "results"

            [model]
            n = 5
            beta = 0.4

            [nmpc]
            r = 2
            horizon = 10
            gamma = 0.5

            [initial]
            kind = "mixture"

            [study]
            n_list = [10, 20]
            bins = 25
            "#,
        )
        .unwrap();
        assert_eq!(cfg.seed.0, 42);
        assert_eq!(cfg.output_dir.0, "results");
        assert_eq!(cfg.model.n, 5);
        assert_eq!(cfg.model.d, 2); // untouched default
        assert_eq!(cfg.model.beta, 0.4);
        assert_eq!(cfg.nmpc.r, 2);
        assert_eq!(cfg.study.bins, 25);
        assert_eq!(cfg.initial.kind, InitialKind::Mixture);
        let nmpc = cfg.nmpc_config().unwrap();
        assert_eq!(nmpc.horizon, 10);
        let pso = cfg.pso_config();
        assert_eq!(pso.seed, 42);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(FileConfig::from_toml("[model]\nagents = 7\n").is_err());
        assert!(FileConfig::from_toml("[initial]\nkind = \"lattice\"\n").is_err());
        assert!(FileConfig::from_toml("typo_section = 1\n").is_err());
    }

    #[test]
    fn initial_draws_are_seeded_and_in_range() {
        let cfg =
            FileConfig::from_toml("[model]\nn = 30\n[initial]\nx_range = [0.0, 2.0]\n").unwrap();
        let a = cfg.initial_state().unwrap();
        let b = cfg.initial_state().unwrap();
        assert_eq!(a.x, b.x);
        assert_eq!(a.v, b.v);
        assert!(a.x.iter().all(|p| (0.0..2.0).contains(p)));
        assert!(a.v.iter().all(|p| (-1.0..1.0).contains(p)));

        let mix = FileConfig::from_toml("[model]\nn = 8\n[initial]\nkind = \"mixture\"\n").unwrap();
        let s = mix.initial_state().unwrap();
        assert_eq!(s.x, s.v);
    }
}
