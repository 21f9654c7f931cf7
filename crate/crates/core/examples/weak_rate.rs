//! `|V^N(0, x) - U(0, m^x)|` for quenched initial atoms, with the particle
//! BSDE on one side and the lifted HJB on the other.

use mfc_lab::lab::{run_value_rate_experiment, ExperimentConfig, ExperimentKind};
use mfc_lab::Result;

pub fn run_example() -> Result<()> {
    let mut cfg = ExperimentConfig::defaults(ExperimentKind::ValueRate);
    cfg.n_list = vec![2, 4, 8, 16];
    cfg.m_outer = 10_000;
    cfg.n_steps = 20;
    cfg.hjb_n_space = 150;
    cfg.hjb_n_time = 150;
    let result = run_value_rate_experiment(&cfg)?;
    for row in &result.details {
        println!("N = {:>2}: V^N = {:.4} +- {:.4}, U = {:.4}, gap {:+.4}", row.n, row.v_n, row.v_n_stderr, row.u, row.signed_gap);
    }
    if let Some(fit) = result.table.fit {
        println!("slope {:.3}", fit.slope);
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<()> {
    run_example()
}
