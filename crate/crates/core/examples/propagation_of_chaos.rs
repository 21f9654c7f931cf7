//! Interacting cloud against decoupled copies: `E[W2^2]` as N grows and the
//! fitted log-log slope.

use mfc_lab::lab::{run_chaos_experiment, ExperimentConfig, ExperimentKind};
use mfc_lab::Result;

pub fn run_example() -> Result<()> {
    let mut cfg = ExperimentConfig::defaults(ExperimentKind::Chaos);
    cfg.n_list = vec![8, 16, 32, 64, 128];
    cfg.replications = 100;
    let table = run_chaos_experiment(&cfg)?;
    print!("{}", table.to_csv());
    if let Some(fit) = table.fit {
        println!("slope {:.3} in [{:.3}, {:.3}], R^2 {:.3}", fit.slope, fit.ci.0, fit.ci.1, fit.r2);
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<()> {
    run_example()
}
