//! Measure derivatives of the value function: a finite-difference check of
//! `D_m U`, the master-equation residual and the N-particle correction `E_N`.

use mfc_lab::hjb::{dm_consistency_check, initial_measure, master_residual, nparticle_residual, HjbConfig, MeasureDerivativeProbe};
use mfc_lab::measure::EmpiricalMeasure;
use mfc_lab::model::ModelParams;
use mfc_lab::Result;

pub fn run_example() -> Result<()> {
    let mut params = ModelParams::preset("lq")?;
    params.c = 1.0;
    params.gamma = 0.1;
    let spec = params.spec()?;
    let config = HjbConfig::default().with_grid(120, 120);

    let base = initial_measure(&spec.initial, 6)?;
    let probe = MeasureDerivativeProbe { base, atom: 3, direction: 1.0, eps: vec![0.1, 0.05] };
    let report = dm_consistency_check(&spec, &probe, &config)?;
    println!(
        "D_m U slope {:.6}, Richardson {:.6}, relative error {:.2e}",
        report.predicted_slope, report.richardson_slope, report.richardson_relative_error
    );

    let nu = EmpiricalMeasure::uniform(1, vec![0.2, 0.9, 1.4, 1.7])?;
    let r = master_residual(&spec, &nu, 0.0, &config)?;
    println!("master residual {:.2e} relative to scale {:.3}", r.residual, r.scale);

    for n in [8, 16] {
        let points: Vec<f64> = (0..n).map(|k| 0.5 + k as f64 / n as f64).collect();
        let e = nparticle_residual(&spec, &points, 0.0, &config)?;
        println!("N = {n:>2}: E_N = {:.5}", e.e_n);
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<()> {
    run_example()
}
