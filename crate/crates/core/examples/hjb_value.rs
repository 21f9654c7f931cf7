//! The lifted HJB equation on a space-time grid: value at the initial law,
//! boundary influence and a comparison with the Riccati solution.

use mfc_lab::hjb::{boundary_influence, initial_measure, solve_value, HjbConfig};
use mfc_lab::model::{lq_value_oracle, ModelParams};
use mfc_lab::Result;

pub fn run_example() -> Result<()> {
    let mut params = ModelParams::preset("lq")?;
    params.c = 1.0;
    params.gamma = 0.1;
    let spec = params.spec()?;
    let nu0 = initial_measure(&spec.initial, 8)?;
    let oracle = lq_value_oracle(&params.lq(), 0.0, params.m0)?;
    for n in [50, 100, 200] {
        let field = solve_value(&spec, &nu0, &HjbConfig::default().with_grid(n, n))?;
        let v = field.value_at(0.0)?;
        println!("{n:>4} x {n:<4} U(0, nu0) = {v:.8}  error {:.2e}", (v - oracle).abs());
    }
    let config = HjbConfig::default().with_grid(100, 100);
    println!("boundary influence {:.2e}", boundary_influence(&spec, &nu0, &config)?);
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<()> {
    run_example()
}
