//! The BSDE stability table: gaps between the particle and mean-field
//! solutions against `E[W2^2(mu^N_T, mu_T)]`.

use mfc_lab::bsde::{stability_gap, StabilityBudget};
use mfc_lab::model::ModelParams;
use mfc_lab::particle::TimeGrid;
use mfc_lab::Result;

pub fn run_example() -> Result<()> {
    let params = ModelParams::preset("lq")?;
    let spec = params.spec()?;
    let grid = TimeGrid::new(params.horizon, 20)?;
    let budget = StabilityBudget { m_fit: 2000, m_eval: 300, n_inner: 200, ..StabilityBudget::default() };
    let table = stability_gap(&spec, &[8, 16, 32, 64], &grid, &budget, 5)?;
    println!("   N        lhs        rhs   ratio");
    for r in &table.rows {
        println!("{:>4} {:>10.4e} {:>10.4e} {:>7.3}", r.n, r.lhs, r.rhs, r.ratio.unwrap_or(f64::NAN));
    }
    println!("ratio spread {:.3}", table.ratio_spread().unwrap_or(f64::NAN));
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<()> {
    run_example()
}
