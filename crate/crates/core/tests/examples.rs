#[path = "../examples/wasserstein.rs"]
#[allow(dead_code)]
mod wasserstein;
#[path = "../examples/particle_system.rs"]
#[allow(dead_code)]
mod particle_system;
#[path = "../examples/lq_bsde.rs"]
#[allow(dead_code)]
mod lq_bsde;
#[path = "../examples/hjb_value.rs"]
#[allow(dead_code)]
mod hjb_value;
#[path = "../examples/master_equation.rs"]
#[allow(dead_code)]
mod master_equation;
#[path = "../examples/propagation_of_chaos.rs"]
#[allow(dead_code)]
mod propagation_of_chaos;
#[path = "../examples/weak_rate.rs"]
#[allow(dead_code)]
mod weak_rate;
#[path = "../examples/bsde_stability.rs"]
#[allow(dead_code)]
mod bsde_stability;
#[path = "../examples/partial_observation.rs"]
#[allow(dead_code)]
mod partial_observation;
#[path = "../examples/lab_config.rs"]
#[allow(dead_code)]
mod lab_config;

#[test]
fn wasserstein_runs() {
    wasserstein::run_example().expect("wasserstein example");
}

#[test]
fn particle_system_runs() {
    particle_system::run_example().expect("particle system example");
}

#[test]
fn lq_bsde_runs() {
    lq_bsde::run_example().expect("BSDE example");
}

#[test]
fn hjb_value_runs() {
    hjb_value::run_example().expect("HJB example");
}

#[test]
fn master_equation_runs() {
    master_equation::run_example().expect("master equation example");
}

#[test]
fn propagation_of_chaos_runs() {
    propagation_of_chaos::run_example().expect("chaos example");
}

#[test]
fn weak_rate_runs() {
    weak_rate::run_example().expect("weak rate example");
}

#[test]
fn bsde_stability_runs() {
    bsde_stability::run_example().expect("stability example");
}

#[test]
fn partial_observation_runs() {
    partial_observation::run_example().expect("partial observation example");
}

#[test]
fn lab_config_runs() {
    lab_config::run_example().expect("lab config example");
}
