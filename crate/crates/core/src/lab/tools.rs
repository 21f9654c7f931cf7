//! Single-run commands: simulate a cloud, solve the BSDE, solve the HJB.

use std::fs::File;
use std::io::BufWriter;

use serde_json::json;

use crate::bsde::{solve_mf_bsde, RegressionBasis};
use crate::error::Result;
use crate::hjb::{boundary_influence, initial_measure, solve_value, HjbConfig};
use crate::particle::{mean_stderr, replicate, simulate_controlled_system, simulate_reward, NoiseBundle, NoiseKey, Policy, TimeGrid};

use super::config::ExperimentConfig;
use super::GIT_DESCRIBE;

fn write_json(cfg: &ExperimentConfig, name: &str, body: serde_json::Value) -> Result<()> {
    let doc = json!({
        "schema_version": super::SCHEMA_VERSION,
        "git_describe": GIT_DESCRIBE,
        "seed": cfg.seed,
        "preset": cfg.preset,
        "model": cfg.model,
        "result": body,
    });
    let mut text = serde_json::to_string_pretty(&doc)?;
    text.push('\n');
    std::fs::write(cfg.out.join(name), text)?;
    Ok(())
}

/// The uncontrolled N-particle system for `N = max(n_list)`: one trajectory
/// to `trajectory.csv` and the reward over `replications` runs.
pub fn run_simulate_tool(cfg: &ExperimentConfig) -> Result<serde_json::Value> {
    let spec = cfg.model.spec()?;
    let grid = TimeGrid::new(cfg.model.horizon, cfg.n_steps)?;
    let n = cfg.n_list.iter().copied().max().unwrap_or(256);
    let policy = Policy::zero(spec.control.dim());
    std::fs::create_dir_all(&cfg.out)?;
    let noise = NoiseBundle::generate(NoiseKey::new(cfg.seed, 0), &spec.initial, n, spec.dim, grid);
    let traj = simulate_controlled_system(&spec, &policy, n, &grid, &noise)?;
    traj.write_csv(BufWriter::new(File::create(cfg.out.join("trajectory.csv"))?), true)?;
    let rewards = replicate(cfg.replications, |j| {
        let noise = NoiseBundle::generate(NoiseKey::new(cfg.seed, j), &spec.initial, n, spec.dim, grid);
        simulate_reward(&spec, &policy, &noise)
    })?;
    let (mean, stderr) = mean_stderr(&rewards);
    let body = json!({ "n": n, "replications": cfg.replications, "reward": mean, "reward_stderr": stderr });
    write_json(cfg, "summary.json", body.clone())?;
    Ok(body)
}

/// The mean-field BSDE: `bsde.json` and `diagnostics.csv`.
pub fn run_bsde_tool(cfg: &ExperimentConfig) -> Result<serde_json::Value> {
    let spec = cfg.model.spec()?;
    let grid = TimeGrid::new(cfg.model.horizon, cfg.n_steps)?;
    let basis = RegressionBasis::default().with_degree(cfg.basis_degree);
    let sol = solve_mf_bsde(&spec, cfg.n_inner, cfg.m_outer, &grid, &basis, cfg.seed)?;
    std::fs::create_dir_all(&cfg.out)?;
    sol.write_json(BufWriter::new(File::create(cfg.out.join("bsde.json"))?))?;
    sol.write_diagnostics_csv(BufWriter::new(File::create(cfg.out.join("diagnostics.csv"))?))?;
    let body = json!({
        "y0": sol.y0,
        "y0_stderr": sol.y0_stderr,
        "max_residual_score": sol.max_residual_score(),
    });
    write_json(cfg, "summary.json", body.clone())?;
    Ok(body)
}

/// The lifted HJB from `nu0`: `field.csv` and the value at `t = 0`.
pub fn run_hjb_tool(cfg: &ExperimentConfig) -> Result<serde_json::Value> {
    let spec = cfg.model.spec()?;
    let nu0 = initial_measure(&spec.initial, 8)?;
    let hjb = HjbConfig::default().with_grid(cfg.hjb_n_space, cfg.hjb_n_time);
    let field = solve_value(&spec, &nu0, &hjb)?;
    std::fs::create_dir_all(&cfg.out)?;
    field.write_csv(BufWriter::new(File::create(cfg.out.join("field.csv"))?))?;
    let body = json!({
        "value": field.value_at(0.0)?,
        "boundary_influence": boundary_influence(&spec, &nu0, &hjb)?,
        "n_space": cfg.hjb_n_space,
        "n_time": cfg.hjb_n_time,
    });
    write_json(cfg, "summary.json", body.clone())?;
    Ok(body)
}
