//! Partially observed LQG: Girsanov-weighted particles, the Kalman oracle,
//! certainty equivalence on the weighted mean and a gain search.

use std::sync::Arc;

use mfc_lab::model::ModelParams;
use mfc_lab::partialobs::{
    estimate_partial_value_cv, lqg_oracle, optimize_parametric_policy, simulate_weighted_particles, FeedbackGrid,
    PartialObsSpec,
};
use mfc_lab::particle::{NoiseBundle, NoiseKey, TimeGrid};
use mfc_lab::Result;

pub fn run_example() -> Result<()> {
    let pspec = PartialObsSpec::from_params(&ModelParams::preset("partial-obs-lqg")?)?;
    let oracle = Arc::new(lqg_oracle(&pspec)?);
    let grid = TimeGrid::new(1.0, 25)?;
    println!("V_P = {:.4}, optimal gain {:.3}, filter variance at T {:.4}", oracle.value, oracle.gain_at(0.0), oracle.filter_variance_at(1.0));

    let noise = NoiseBundle::generate(NoiseKey::new(2, 0), &pspec.dynamics.initial, 64, 1, grid);
    let cloud = simulate_weighted_particles(&pspec, &oracle.weighted_mean_policy(), 64, &grid, &noise)?;
    println!("mean Z_T {:.3}, max |log Z| {:.3}", cloud.mean_terminal_weight(), cloud.max_abs_log_weight());

    for n in [8, 64] {
        let (v, se) = estimate_partial_value_cv(&pspec, &oracle.weighted_mean_policy(), n, 2000, &grid, 4)?;
        println!("N = {n:>2}: certainty equivalence {v:.4} +- {se:.4}");
    }
    let (v, se) = estimate_partial_value_cv(&pspec, &oracle.kalman_policy(grid, 5.0), 16, 2000, &grid, 4)?;
    println!("Kalman feedback {v:.4} +- {se:.4}");

    let search = optimize_parametric_policy(&pspec, &FeedbackGrid::gains(0.0, 2.0, 0.5, 0.0), 32, 500, &grid, 9)?;
    println!("best gain {} with value {:.4}", search.best.gain, search.best.value);
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<()> {
    run_example()
}
