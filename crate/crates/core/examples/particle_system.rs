//! The controlled N-particle system with common noise under a feedback on
//! the empirical mean, and its reward.

use std::sync::Arc;

use mfc_lab::model::ModelParams;
use mfc_lab::particle::{
    estimate_reward, mean_stderr, replicate, simulate_controlled_system, simulate_reward, NoiseBundle, NoiseKey, Policy,
    TimeGrid,
};
use mfc_lab::Result;

pub fn run_example() -> Result<()> {
    let params = ModelParams::preset("lq")?;
    let spec = params.spec()?;
    let grid = TimeGrid::new(params.horizon, 50)?;
    let n = 256;
    // The LQ optimum pushes the mean with a = -2P(mean - theta), P = 1/2.
    let policy = Policy::EmpiricalFeedback(Arc::new(|_, summary, out| out[0] = -summary.mean[0]));

    let noise = NoiseBundle::generate(NoiseKey::new(7, 0), &spec.initial, n, spec.dim, grid);
    let traj = simulate_controlled_system(&spec, &policy, n, &grid, &noise)?;
    println!("mean at T: {:.4}, reward of this path: {:.4}", traj.summary_at(50).mean[0], estimate_reward(&spec, &traj));

    let rewards = replicate(400, |j| {
        let noise = NoiseBundle::generate(NoiseKey::new(7, j), &spec.initial, n, spec.dim, grid);
        simulate_reward(&spec, &policy, &noise)
    })?;
    let (mean, se) = mean_stderr(&rewards);
    println!("J(mean feedback) = {mean:.4} +- {se:.4} over 400 replications");
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<()> {
    run_example()
}
