//! Regression Monte Carlo for the mean-field BSDE of the LQ preset, checked
//! against the Riccati value, and the policy read off the solution.

use mfc_lab::bsde::{extract_control, solve_mf_bsde, RegressionBasis};
use mfc_lab::model::{lq_value_oracle, ModelParams};
use mfc_lab::particle::{mean_stderr, replicate, simulate_reward, NoiseBundle, NoiseKey, TimeGrid};
use mfc_lab::Result;

pub fn run_example() -> Result<()> {
    let params = ModelParams::preset("lq")?;
    let spec = params.spec()?;
    let grid = TimeGrid::new(params.horizon, 20)?;
    let sol = solve_mf_bsde(&spec, 200, 2000, &grid, &RegressionBasis::default(), 3)?;
    let oracle = lq_value_oracle(&params.lq(), 0.0, params.m0)?;
    println!("Y0 = {:.4} +- {:.4}, Riccati {oracle:.4}", sol.y0, sol.y0_stderr);
    println!("worst martingale residual score {:.2}", sol.max_residual_score());

    let policy = extract_control(&spec, &sol);
    let rewards = replicate(200, |j| {
        let noise = NoiseBundle::generate(NoiseKey::new(11, j), &spec.initial, 200, 1, grid);
        simulate_reward(&spec, &policy, &noise)
    })?;
    let (j, se) = mean_stderr(&rewards);
    println!("extracted policy J = {j:.4} +- {se:.4}");
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<()> {
    run_example()
}
