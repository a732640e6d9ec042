//! The four subcommands: free simulation, smooth optimisation, sparse
//! receding-horizon control, and the growing-swarm study.

use crate::config::FileConfig;
use crate::output;
use anyhow::{Context, Result};
use flock_core::{
    consensus_functionals, heat_map, integrate_forward, nmpc_loop, predict_consensus,
    run_study_detailed, sparsity_fraction, velocity_marginal, ControlField,
};
use std::fs;
use std::path::Path;

/// Relative threshold used when reporting the sparsity fraction.
pub const SPARSITY_THRESHOLD: f64 = 1e-3;

/// Simulates the free dynamics and writes `trajectory.csv`/`functionals.csv`.
pub fn cmd_simulate(cfg: &FileConfig, out: &Path) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let params = cfg.model_params()?;
    let grid = cfg.time_grid()?;
    let state0 = cfg.initial_state()?;
    let verdict = predict_consensus(&state0, &params)?;
    let u = ControlField::zeros(grid.n_nodes, params.n, params.d);
    let traj = integrate_forward(&state0, &u, &grid, &params)?;
    output::write_trajectory(&out.join("trajectory.csv"), &traj)?;
    output::write_functionals(&out.join("functionals.csv"), &traj)?;
    let (v0, x0) = consensus_functionals(&state0);
    let (v_t, x_t) = consensus_functionals(traj.terminal());
    println!("consensus prediction: {verdict}");
    println!("V: {v0:.6e} -> {v_t:.6e}");
    println!("X: {x0:.6e} -> {x_t:.6e}");
    Ok(())
}

/// Solves the smooth control problem by adjoint gradient descent.
pub fn cmd_optimize(cfg: &FileConfig, out: &Path) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let params = cfg.model_params()?;
    let grid = cfg.time_grid()?;
    let cost = cfg.cost_params()?;
    let state0 = cfg.initial_state()?;
    let u0 = ControlField::zeros(grid.n_nodes, params.n, params.d);
    let result = flock_core::bb_descent_with(&state0, &u0, &params, &cost, cfg.descent_options())?;
    output::write_control(&out.join("control.csv"), &result.u_opt, &grid)?;
    output::write_trajectory(&out.join("trajectory.csv"), &result.traj)?;
    output::write_history(
        &out.join("history.csv"),
        &result.cost_history,
        &result.grad_norm_history,
    )?;
    output::write_heatmap(&out.join("heatmap.csv"), &heat_map(&result.u_opt))?;
    let j = result.cost_history.last().copied().unwrap_or(f64::NAN);
    let g = result.grad_norm_history.last().copied().unwrap_or(f64::NAN);
    let (v_t, _) = consensus_functionals(result.traj.terminal());
    if result.converged {
        println!("converged in {} iterations", result.iterations);
    } else {
        println!(
            "not converged after {} iterations (gradient norm {g:.3e} > tol {:.3e})",
            result.iterations, cfg.descent.tol
        );
    }
    println!("J = {j:.6e}, final V = {v_t:.6e}");
    Ok(())
}

/// Runs the sparse receding-horizon controller.
pub fn cmd_sparse(cfg: &FileConfig, out: &Path) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let params = cfg.model_params()?;
    let grid = cfg.time_grid()?;
    let nmpc = cfg.nmpc_config()?;
    let pso = cfg.pso_config();
    let state0 = cfg.initial_state()?;
    let (u, traj) = nmpc_loop(&state0, &grid, &params, &nmpc, &pso)?;
    let map = heat_map(&u);
    let fraction = sparsity_fraction(&map, SPARSITY_THRESHOLD);
    output::write_control(&out.join("control.csv"), &u, &grid)?;
    output::write_heatmap(&out.join("heatmap.csv"), &map)?;
    output::write_sparsity(&out.join("sparsity.txt"), fraction)?;
    let (v0, _) = consensus_functionals(&state0);
    let (v_t, _) = consensus_functionals(traj.terminal());
    println!("sparsity fraction (relative threshold {SPARSITY_THRESHOLD:.0e}): {fraction:.4}");
    println!("V: {v0:.6e} -> {v_t:.6e}");
    Ok(())
}

/// Runs the growing-swarm study and writes `study.csv` plus one terminal
/// velocity marginal per solved size.
pub fn cmd_meanfield(cfg: &FileConfig, out: &Path, n_list: Option<&[usize]>) -> Result<()> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let params = cfg.model_params()?;
    let cost = cfg.cost_params()?;
    let mixture = cfg.mixture_config();
    let n_list: Vec<usize> =
        n_list.map(<[usize]>::to_vec).unwrap_or_else(|| cfg.study.n_list.clone());
    let study = run_study_detailed(
        &n_list,
        &mixture,
        &params,
        &cost,
        cfg.descent.tol,
        cfg.descent.max_iters,
    )?;

    let records: Vec<_> = study.outcomes.iter().map(|o| o.record.clone()).collect();
    output::write_study(&out.join("study.csv"), &records)?;
    for outcome in &study.outcomes {
        let traj = &outcome.result.traj;
        let terminal = traj.states.len() - 1;
        let marginal = velocity_marginal(traj, terminal, 0, cfg.study.bins)?;
        let name = format!("marginal_N{}.csv", outcome.record.n);
        output::write_marginal(&out.join(name), &marginal)?;
    }
    for rec in &records {
        println!(
            "N = {:4}: J* = {:.6e}, {} iterations, {:.3} s, final V = {:.3e}",
            rec.n, rec.j_star, rec.iterations, rec.wall_time, rec.v_final
        );
    }
    for failure in &study.failures {
        eprintln!("N = {} skipped: {}", failure.n, failure.message);
    }
    Ok(())
}
