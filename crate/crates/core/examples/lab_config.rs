//! Running an experiment from a key-value config file, the way the
//! `mfc-lab` binary does.

use mfc_lab::lab::{run_config, Overrides};
use mfc_lab::Result;

pub fn run_example() -> Result<()> {
    let dir = std::env::temp_dir().join(format!("mfc-lab-example-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join("base.cfg"), "experiment = chaos\npreset = tanh-drift\nn_steps = 20\n")?;
    std::fs::write(
        dir.join("small.cfg"),
        "extends = base.cfg\nmodel.sigma = 1.0\nn_list = 8, 16, 32, 64\nreplications = 60\n",
    )?;
    let overrides = Overrides { seed: Some(3), out: Some(dir.join("out")) };
    let outcome = run_config(&dir.join("small.cfg"), &overrides)?;
    print!("{}", outcome.report());
    println!("artifacts in {}", dir.join("out").display());
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}

#[allow(dead_code)]
fn main() -> Result<()> {
    run_example()
}
