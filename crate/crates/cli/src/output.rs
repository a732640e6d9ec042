//! CSV and text writers with a stable on-disk contract.
//!
//! All floating-point fields are written as `{:.16e}` (17 significant
//! digits), which round-trips f64 exactly, so identical runs produce
//! byte-identical files.

use anyhow::{Context, Result};
use flock_core::{
    consensus_functionals, ControlField, HeatMap, Histogram1D, StudyRecord, TimeGrid, Trajectory,
};
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

/// Canonical float formatting for every numeric CSV field.
pub fn fmt(x: f64) -> String {
    format!("{x:.16e}")
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

/// `t,agent,x1..xd,v1..vd` — one row per (node, agent).
pub fn write_trajectory(path: &Path, traj: &Trajectory) -> Result<()> {
    let mut w = create(path)?;
    let d = traj.states[0].d;
    let xs: Vec<String> = (1..=d).map(|c| format!("x{c}")).collect();
    let vs: Vec<String> = (1..=d).map(|c| format!("v{c}")).collect();
    writeln!(w, "t,agent,{},{}", xs.join(","), vs.join(","))?;
    for (k, state) in traj.states.iter().enumerate() {
        let t = fmt(traj.grid.node(k));
        for i in 0..state.n {
            let x_row: Vec<String> = state.x[i * d..(i + 1) * d].iter().map(|a| fmt(*a)).collect();
            let v_row: Vec<String> = state.v[i * d..(i + 1) * d].iter().map(|a| fmt(*a)).collect();
            writeln!(w, "{t},{i},{},{}", x_row.join(","), v_row.join(","))?;
        }
    }
    Ok(w.flush()?)
}

/// `t,V,X` — velocity and position spread per grid node.
pub fn write_functionals(path: &Path, traj: &Trajectory) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "t,V,X")?;
    for (k, state) in traj.states.iter().enumerate() {
        let (v, x) = consensus_functionals(state);
        writeln!(w, "{},{},{}", fmt(traj.grid.node(k)), fmt(v), fmt(x))?;
    }
    Ok(w.flush()?)
}

/// `t,agent,u1..ud` — one row per (node, agent).
pub fn write_control(path: &Path, u: &ControlField, grid: &TimeGrid) -> Result<()> {
    let mut w = create(path)?;
    let d = u.d;
    let us: Vec<String> = (1..=d).map(|c| format!("u{c}")).collect();
    writeln!(w, "t,agent,{}", us.join(","))?;
    for k in 0..u.n_nodes {
        let t = fmt(grid.node(k));
        let block = u.node(k);
        for i in 0..u.n {
            let row: Vec<String> = block[i * d..(i + 1) * d].iter().map(|a| fmt(*a)).collect();
            writeln!(w, "{t},{i},{}", row.join(","))?;
        }
    }
    Ok(w.flush()?)
}

/// Headerless matrix, one row per agent, one column per grid node.
pub fn write_heatmap(path: &Path, map: &HeatMap) -> Result<()> {
    let mut w = create(path)?;
    for row in &map.values {
        let cells: Vec<String> = row.iter().map(|a| fmt(*a)).collect();
        writeln!(w, "{}", cells.join(","))?;
    }
    Ok(w.flush()?)
}

/// `iter,cost,grad_norm` — row 0 is the initial point.
pub fn write_history(path: &Path, cost: &[f64], grad_norm: &[f64]) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "iter,cost,grad_norm")?;
    for (k, (c, g)) in cost.iter().zip(grad_norm).enumerate() {
        writeln!(w, "{k},{},{}", fmt(*c), fmt(*g))?;
    }
    Ok(w.flush()?)
}

/// `N,J_star,iterations,wall_time,mean_control_norm,V_final`.
pub fn write_study(path: &Path, records: &[StudyRecord]) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "N,J_star,iterations,wall_time,mean_control_norm,V_final")?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.n,
            fmt(r.j_star),
            r.iterations,
            fmt(r.wall_time),
            fmt(r.mean_control_norm),
            fmt(r.v_final)
        )?;
    }
    Ok(w.flush()?)
}

/// `bin_lo,bin_hi,mass` — one row per histogram bin.
pub fn write_marginal(path: &Path, h: &Histogram1D) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "bin_lo,bin_hi,mass")?;
    for (b, mass) in h.counts.iter().enumerate() {
        writeln!(w, "{},{},{}", fmt(h.edges[b]), fmt(h.edges[b + 1]), fmt(*mass))?;
    }
    Ok(w.flush()?)
}

/// Single line holding the sparsity fraction.
pub fn write_sparsity(path: &Path, fraction: f64) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "{}", fmt(fraction))?;
    Ok(w.flush()?)
}
