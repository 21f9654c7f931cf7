//! One PASS/FAIL line per acceptance criterion. Budgets and tolerances are
//! the published ones; runtimes quoted for 8 cores are scaled to the cores
//! available here.

mod common;

use std::io::Write as _;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ContinuousCDF, Normal};

use mfc_lab::bsde::{solve_mf_bsde, BsdeSolution, RegressionBasis};
use mfc_lab::hjb::{
    dm_consistency_check, initial_measure, master_residual, nparticle_residual, solve_dm_pde, solve_dmm_pde,
    solve_value, DerivativeField, HjbConfig, MeasureDerivativeProbe,
};
use mfc_lab::lab::{
    run_chaos_experiment, run_partialobs_experiment, run_stability_experiment, run_value_rate_experiment,
    ExperimentConfig, ExperimentKind, CHAOS_COUPLED_BAND, PARTIALOBS_MAX_GAP, STABILITY_MAX_SPREAD, VALUE_RATE_BAND,
};
use mfc_lab::model::{lq_value_oracle, CoefficientSpec, ModelParams};
use mfc_lab::partialobs::{
    simulate_weighted_particles, weighted_reward, Observation, PartialObsSpec, PartialPolicy,
};
use mfc_lab::particle::{
    estimate_reward, mean_stderr, replicate, simulate_controlled_system, NoiseBundle, NoiseKey, Policy, TimeGrid,
};

const BSDE_MAX_RELERR: f64 = 0.02;
const BSDE_RUNTIME_8_CORES: f64 = 300.0;
const PDE_MAX_RELERR: f64 = 0.005;
const PDE_RUNTIME: f64 = 60.0;
const PDE_BSDE_MAX_RELERR: f64 = 0.025;
const CHAOS_RUNTIME: f64 = 600.0;
const SEEDS: [u64; 5] = [1, 2, 3, 4, 5];
const VALUE_RATE_RUNTIME: f64 = 1800.0;
const VALUE_RATE_MIN_SEEDS: usize = 4;
const DM_MAX_RELERR: f64 = 0.05;
const REFINEMENT_MAX_CHANGE: f64 = 0.10;
const MASTER_MAX_RELATIVE: f64 = 0.01;
const E_N_HALVING: (f64, f64) = (0.45, 0.55);
const WEIGHT_SIGMAS: f64 = 3.0;
const WEIGHT_MIN_SAMPLES: usize = 100_000;
const PARTIALOBS_RUNTIME: f64 = 600.0;
/// The weighted and cylindrical reward formulas sum in different orders.
const REWARD_ROUNDING: f64 = 1e-14;

struct Outcome {
    passed: bool,
    detail: String,
}

impl Outcome {
    fn new(passed: bool, detail: impl Into<String>) -> Self {
        Outcome { passed, detail: detail.into() }
    }

    fn error(e: impl std::fmt::Display) -> Self {
        Outcome::new(false, format!("error: {e}"))
    }
}

fn emit(line: &str) {
    // Bypasses the test harness capture so the lines land in the log.
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
}

fn cores() -> f64 {
    std::thread::available_parallelism().map_or(1, |n| n.get()) as f64
}

fn lq() -> (ModelParams, CoefficientSpec) {
    let params = ModelParams::preset("lq").unwrap();
    let spec = params.spec().unwrap();
    (params, spec)
}

fn relerr(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs()
}

fn criterion_1(bsde: &mfc_lab::Result<(BsdeSolution, f64)>, oracle: f64) -> Outcome {
    let (sol, secs) = match bsde {
        Ok(v) => v,
        Err(e) => return Outcome::error(e),
    };
    let budget = BSDE_RUNTIME_8_CORES * 8.0 / cores();
    let err = relerr(sol.y0, oracle);
    Outcome::new(
        err <= BSDE_MAX_RELERR && *secs <= budget,
        format!(
            "Y0 = {:.5} +- {:.5} vs Riccati {oracle:.5}, relative error {err:.4} (limit {BSDE_MAX_RELERR}); \
             {secs:.0}s on {} core(s) (limit {budget:.0}s)",
            sol.y0,
            sol.y0_stderr,
            cores()
        ),
    )
}

fn criterion_2(spec: &CoefficientSpec, bsde: &mfc_lab::Result<(BsdeSolution, f64)>, oracle: f64) -> Outcome {
    let run = || -> mfc_lab::Result<(f64, f64)> {
        let nu0 = initial_measure(&spec.initial, 8)?;
        let start = Instant::now();
        let field = solve_value(spec, &nu0, &HjbConfig::default().with_grid(400, 400))?;
        Ok((field.value_at(0.0)?, start.elapsed().as_secs_f64()))
    };
    let (pde, secs) = match run() {
        Ok(v) => v,
        Err(e) => return Outcome::error(e),
    };
    let err = relerr(pde, oracle);
    let mut passed = err <= PDE_MAX_RELERR && secs <= PDE_RUNTIME;
    let mut detail = format!(
        "U(0, nu0) = {pde:.6} vs Riccati {oracle:.6}, relative error {err:.2e} (limit {PDE_MAX_RELERR}) in {secs:.1}s \
         (limit {PDE_RUNTIME}s)"
    );
    match bsde {
        Ok((sol, _)) => {
            let cross = relerr(sol.y0, pde);
            passed &= cross <= PDE_BSDE_MAX_RELERR;
            detail += &format!("; |PDE - BSDE| / |PDE| = {cross:.4} (limit {PDE_BSDE_MAX_RELERR})");
        }
        Err(e) => {
            passed = false;
            detail += &format!("; no BSDE value: {e}");
        }
    }
    Outcome::new(passed, detail)
}

fn criterion_3() -> Outcome {
    let cfg = ExperimentConfig::defaults(ExperimentKind::Chaos);
    let start = Instant::now();
    let table = match run_chaos_experiment(&cfg) {
        Ok(t) => t,
        Err(e) => return Outcome::error(e),
    };
    let secs = start.elapsed().as_secs_f64();
    match table.fit {
        Some(fit) => Outcome::new(
            (CHAOS_COUPLED_BAND.0..=CHAOS_COUPLED_BAND.1).contains(&fit.slope) && secs <= CHAOS_RUNTIME,
            format!(
                "{} on N = {:?}, {} reps: slope {:.3} (95% CI [{:.3}, {:.3}]) vs band [{}, {}] in {secs:.0}s (limit {CHAOS_RUNTIME}s)",
                cfg.preset, cfg.n_list, cfg.replications, fit.slope, fit.ci.0, fit.ci.1, CHAOS_COUPLED_BAND.0,
                CHAOS_COUPLED_BAND.1
            ),
        ),
        None => Outcome::new(false, "no slope fit"),
    }
}

fn criterion_4() -> Outcome {
    let mut spreads = Vec::new();
    for seed in SEEDS {
        let mut cfg = ExperimentConfig::defaults(ExperimentKind::Stability);
        cfg.seed = seed;
        match run_stability_experiment(&cfg) {
            Ok(table) => spreads.push(table.ratio_spread()),
            Err(e) => return Outcome::error(format!("seed {seed}: {e}")),
        }
    }
    let passed = spreads.iter().all(|s| s.is_some_and(|s| s <= STABILITY_MAX_SPREAD));
    let shown: Vec<String> = spreads.iter().map(|s| s.map_or("none".into(), |s| format!("{s:.2}"))).collect();
    Outcome::new(
        passed,
        format!("max/min of E|Y^N - Y|^2 / E W2^2 over N = 8..128, seeds 1-5: [{}] (limit {STABILITY_MAX_SPREAD})", shown.join(", ")),
    )
}

fn criterion_5() -> Outcome {
    let start = Instant::now();
    let mut slopes = Vec::new();
    let mut decreasing = 0;
    for seed in SEEDS {
        let mut cfg = ExperimentConfig::defaults(ExperimentKind::ValueRate);
        cfg.seed = seed;
        let result = match run_value_rate_experiment(&cfg) {
            Ok(r) => r,
            Err(e) => return Outcome::error(format!("seed {seed}: {e}")),
        };
        let rows = &result.table.rows;
        let (first, last) = (&rows[0], &rows[rows.len() - 1]);
        if last.stat < first.stat {
            decreasing += 1;
        }
        slopes.push(result.table.fit.as_ref().map(|f| f.slope));
    }
    let secs = start.elapsed().as_secs_f64();
    let in_band = slopes.iter().all(|s| s.is_some_and(|s| (VALUE_RATE_BAND.0..=VALUE_RATE_BAND.1).contains(&s)));
    let shown: Vec<String> = slopes.iter().map(|s| s.map_or("none".into(), |s| format!("{s:.3}"))).collect();
    Outcome::new(
        in_band && decreasing >= VALUE_RATE_MIN_SEEDS && secs <= VALUE_RATE_RUNTIME,
        format!(
            "slopes over N = 2..64, seeds 1-5: [{}] vs band [{}, {}]; gap(64) < gap(2) in {decreasing}/5 seeds \
             (need {VALUE_RATE_MIN_SEEDS}); {secs:.0}s (limit {VALUE_RATE_RUNTIME}s)",
            shown.join(", "),
            VALUE_RATE_BAND.0,
            VALUE_RATE_BAND.1
        ),
    )
}

/// Largest change between two fields over the nodes of the coarse one,
/// relative to the fine field's max norm. Nodes within a quarter of the
/// domain of the boundary are left out.
fn refinement_change(coarse: &DerivativeField, fine: &DerivativeField) -> mfc_lab::Result<f64> {
    let lifted = &coarse.lifted;
    let half = 0.5 * lifted.radius;
    let mut diff = 0.0f64;
    let mut norm = 0.0f64;
    for &t in &lifted.times {
        for &x in lifted.xs.iter().filter(|x| x.abs() <= half) {
            let (c, f) = (coarse.at(t, x)?, fine.at(t, x)?);
            diff = diff.max((c - f).abs());
            norm = norm.max(f.abs());
        }
    }
    Ok(if norm > 0.0 { diff / norm } else { diff })
}

fn measure_derivative(spec: &CoefficientSpec, params: &ModelParams) -> Outcome {
    let run = || -> mfc_lab::Result<Outcome> {
        let base = initial_measure(&spec.initial, 8)?;
        let probe = MeasureDerivativeProbe { base: base.clone(), atom: 3, direction: 1.0, eps: vec![0.1, 0.05] };
        let report = dm_consistency_check(spec, &probe, &HjbConfig::default())?;
        let (y, z) = (params.m0, params.m0 + 0.5);
        let fields = |n: usize| -> mfc_lab::Result<(DerivativeField, DerivativeField)> {
            let field = solve_value(spec, &base, &HjbConfig::default().with_grid(n, n))?;
            let u1y = solve_dm_pde(spec, &field, y)?;
            let u1z = solve_dm_pde(spec, &field, z)?;
            let u2 = solve_dmm_pde(spec, &field, &u1y, &u1z, y, z)?;
            Ok((u1y, u2))
        };
        let (c1, c2) = fields(200)?;
        let (f1, f2) = fields(400)?;
        let change1 = refinement_change(&c1, &f1)?;
        let change2 = refinement_change(&c2, &f2)?;
        let bounded = [&c1, &c2, &f1, &f2].iter().all(|f| f.max_norm().is_finite());
        Ok(Outcome::new(
            report.richardson_relative_error <= DM_MAX_RELERR
                && change1 <= REFINEMENT_MAX_CHANGE
                && change2 <= REFINEMENT_MAX_CHANGE
                && bounded,
            format!(
                "Richardson slope {:.6} vs D_m U slope {:.6}, relative error {:.2e} (limit {DM_MAX_RELERR}); \
                 max-norm change on halving dx: U1 {change1:.2e}, U2 {change2:.2e} (limit {REFINEMENT_MAX_CHANGE}); \
                 sup|U1| = {:.4}, sup|U2| = {:.4}",
                report.richardson_slope,
                report.predicted_slope,
                report.richardson_relative_error,
                f1.max_norm(),
                f2.max_norm()
            ),
        ))
    };
    run().unwrap_or_else(Outcome::error)
}

/// `n` quantiles of the initial law.
fn quantile_cloud(params: &ModelParams, n: usize) -> Vec<f64> {
    let law = Normal::new(params.m0, params.v0.sqrt()).unwrap();
    (0..n).map(|k| law.inverse_cdf((k as f64 + 0.5) / n as f64)).collect()
}

fn master_equation(spec: &CoefficientSpec, params: &ModelParams) -> Outcome {
    let run = || -> mfc_lab::Result<Outcome> {
        let nu = initial_measure(&spec.initial, 3)?;
        let r = master_residual(spec, &nu, 0.0, &HjbConfig::default())?;
        let cfg = HjbConfig::default().with_grid(200, 200);
        let e: Vec<f64> = [8, 16, 32]
            .iter()
            .map(|&n| nparticle_residual(spec, &quantile_cloud(params, n), 0.0, &cfg).map(|r| r.e_n))
            .collect::<mfc_lab::Result<_>>()?;
        let ratios = [e[1] / e[0], e[2] / e[1]];
        let halves = ratios.iter().all(|q| (E_N_HALVING.0..=E_N_HALVING.1).contains(q));
        Ok(Outcome::new(
            r.relative() <= MASTER_MAX_RELATIVE && halves,
            format!(
                "residual {:.2e} = {:.2e} of scale {:.4} (limit {MASTER_MAX_RELATIVE}); E_N at N = 8, 16, 32: \
                 {:.5}, {:.5}, {:.5}, ratios {:.3}, {:.3} (band [{}, {}])",
                r.residual,
                r.relative(),
                r.scale,
                e[0],
                e[1],
                e[2],
                ratios[0],
                ratios[1],
                E_N_HALVING.0,
                E_N_HALVING.1
            ),
        ))
    };
    run().unwrap_or_else(Outcome::error)
}

/// The LQ preset has a stationary Riccati solution, so its lifted value is
/// exactly quadratic; the variant with `c = 1, gamma = 0.1` is not.
fn lq_models() -> Vec<(&'static str, ModelParams)> {
    let preset = ModelParams::preset("lq").unwrap();
    let mut variant = preset.clone();
    variant.c = 1.0;
    variant.gamma = 0.1;
    vec![("lq", preset), ("lq with c = 1, gamma = 0.1", variant)]
}

fn on_lq_models(check: fn(&CoefficientSpec, &ModelParams) -> Outcome) -> Outcome {
    let mut passed = true;
    let mut details = Vec::new();
    for (name, params) in lq_models() {
        let outcome = match params.spec() {
            Ok(spec) => check(&spec, &params),
            Err(e) => Outcome::error(e),
        };
        passed &= outcome.passed;
        details.push(format!("{name}: {}", outcome.detail));
    }
    Outcome::new(passed, details.join(" | "))
}

fn criterion_8() -> Outcome {
    let run = || -> mfc_lab::Result<Outcome> {
        let start = Instant::now();
        let params = ModelParams::preset("partial-obs-lqg")?;
        let pspec = PartialObsSpec::from_params(&params)?;
        let grid = TimeGrid::new(params.horizon, 50)?;

        let blind = pspec.clone().with_observation(Observation::Zero);
        let full = blind.full_observation_spec();
        let weighted_policy = PartialPolicy::WeightedMeanFeedback { gain: 1.0, target: params.theta };
        let theta = params.theta;
        let policy = Policy::EmpiricalFeedback(Arc::new(move |_, s, out| out[0] = -(s.mean[0] - theta)));
        let mut bitwise = true;
        let mut reward_gap = 0.0f64;
        for j in 0..20 {
            let noise = NoiseBundle::generate(NoiseKey::new(17, j), &blind.dynamics.initial, 64, 1, grid);
            let cloud = simulate_weighted_particles(&blind, &weighted_policy, 64, &grid, &noise)?;
            let traj = simulate_controlled_system(&full, &policy, 64, &grid, &noise)?;
            bitwise &= cloud.states == traj.states
                && cloud.controls == traj.controls
                && cloud.log_weights.iter().all(|w| *w == 0.0);
            let (a, b) = (weighted_reward(&blind, &weighted_policy, &noise)?, estimate_reward(&full, &traj));
            reward_gap = reward_gap.max((a - b).abs() / b.abs().max(1.0));
        }
        let reduction_ok = bitwise && reward_gap <= REWARD_ROUNDING;

        let (n_w, m_w) = (100, 1000);
        let weights = replicate(m_w, |j| {
            let noise = NoiseBundle::generate(NoiseKey::new(23, j), &pspec.dynamics.initial, n_w, 1, grid);
            Ok(simulate_weighted_particles(&pspec, &weighted_policy, n_w, &grid, &noise)?.mean_terminal_weight())
        })?;
        let (z_mean, z_se) = mean_stderr(&weights);
        let weight_ok = (z_mean - 1.0).abs() <= WEIGHT_SIGMAS * z_se && n_w * m_w >= WEIGHT_MIN_SAMPLES;

        let cfg = ExperimentConfig::defaults(ExperimentKind::PartialObs);
        let r = run_partialobs_experiment(&cfg)?;
        let last = r.rows.last().expect("N list is not empty");
        let ce_ok = last.n == 256 && last.relative_gap <= PARTIALOBS_MAX_GAP;
        let gain_ok = (r.search.best.gain - r.oracle_gain).abs() <= cfg.gain_step + 1e-12;
        let secs = start.elapsed().as_secs_f64();
        Ok(Outcome::new(
            reduction_ok && weight_ok && ce_ok && gain_ok && secs <= PARTIALOBS_RUNTIME,
            format!(
                "h = 0: states, controls and Z = 1 bitwise equal to full observation: {bitwise}, rewards within {reward_gap:.1e} \
                 (limit {REWARD_ROUNDING:.0e}); E[Z_T] = {z_mean:.5} +- {z_se:.5} from N x M = {} \
                 (within {WEIGHT_SIGMAS} se: {weight_ok}); N = {}: {:.4} +- {:.4} vs oracle {:.4}, gap {:.4} \
                 (limit {PARTIALOBS_MAX_GAP}); best gain {} vs oracle {:.4} (cell {}); {secs:.0}s (limit {PARTIALOBS_RUNTIME}s)",
                n_w * m_w,
                last.n,
                last.value,
                last.stderr,
                r.oracle_value,
                last.relative_gap,
                r.search.best.gain,
                r.oracle_gain,
                cfg.gain_step
            ),
        ))
    };
    run().unwrap_or_else(Outcome::error)
}

fn criterion_9(spec: &CoefficientSpec, bsde: &mfc_lab::Result<(BsdeSolution, f64)>) -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut failures = Vec::new();
    let mut record = |name: &str, r: common::Check| {
        if let Err(e) = r {
            failures.push(format!("{name}: {e}"));
        }
    };
    let cases = 64;
    for _ in 0..cases {
        let n = rng.random_range(1..=6);
        let mut cloud = |len: usize| (0..len).map(|_| rng.random_range(-10.0..10.0)).collect::<Vec<f64>>();
        let (x, y, z) = (cloud(n), cloud(n), cloud(n));
        record("W2 axioms", common::w2_axioms(&x, &y, &z));
        let d = 2;
        let (x, y) = (cloud(d * n), cloud(d * n));
        record("assignment", common::assignment_matches_brute_force(d, &x, &y));
    }
    let a_max = spec.control.max_abs();
    for _ in 0..cases {
        let z = rng.random_range(-20.0..20.0);
        let candidates: Vec<f64> = (0..16).map(|_| rng.random_range(-a_max..=a_max)).collect();
        record("Hamiltonian envelope", common::hamiltonian_envelope(spec, z, &candidates));
        let (z1, z2, l) = (rng.random_range(-20.0..20.0), rng.random_range(-20.0..20.0), rng.random_range(0.0..=1.0));
        record("Hamiltonian convexity", common::hamiltonian_convexity(spec, z1, z2, l));
    }
    let interacting = ModelParams::preset("tanh-drift").unwrap().spec().unwrap();
    let feedback = Policy::EmpiricalFeedback(Arc::new(|_, s, out| out[0] = -(s.mean[0] - 0.3)));
    let grid = TimeGrid::new(1.0, 20).unwrap();
    for case in 0..16u64 {
        let n = rng.random_range(2..16);
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        record("exchangeability", common::exchangeable(&interacting, &feedback, n, grid, case, &perm));
        record("determinism", common::same_seed_deterministic(&interacting, &feedback, n, grid, case));
    }
    let mut beaten = 0;
    match bsde {
        Ok((sol, _)) => {
            record("BSDE terminal / martingale", common::bsde_terminal_and_martingale(sol, 4.0));
            for i in 0..10 {
                let (name, policy) = common::random_policy(&mut rng, a_max);
                let r = common::suboptimal(spec, (sol.y0, sol.y0_stderr), &policy, 256, 400, sol.grid, 500 + i, 0.0);
                if let Err(e) = r {
                    beaten += 1;
                    failures.push(format!("{name}: {e}"));
                }
            }
        }
        Err(e) => failures.push(format!("no BSDE solution: {e}")),
    }
    Outcome::new(
        failures.is_empty(),
        if failures.is_empty() {
            format!(
                "{cases} W2 / assignment cases, {cases} Hamiltonian cases, 16 exchangeability and determinism cases, \
                 BSDE terminal and residual checks, 10 random policies below Y0"
            )
        } else {
            format!("{} failure(s), {beaten} random policies above Y0: {}", failures.len(), failures.join("; "))
        },
    )
}

type Criterion<'a> = (&'static str, Box<dyn Fn() -> Outcome + 'a>);

#[test]
fn acceptance() {
    let (params, spec) = lq();
    let oracle = lq_value_oracle(&params.lq(), 0.0, params.m0).unwrap();
    let bsde = {
        let start = Instant::now();
        TimeGrid::new(params.horizon, 50)
            .and_then(|grid| solve_mf_bsde(&spec, 2000, 10_000, &grid, &RegressionBasis::default(), 1))
            .map(|sol| (sol, start.elapsed().as_secs_f64()))
    };

    let criteria: Vec<Criterion> = vec![
        ("LQ oracle (BSDE)", Box::new(|| criterion_1(&bsde, oracle))),
        ("LQ oracle (PDE)", Box::new(|| criterion_2(&spec, &bsde, oracle))),
        ("propagation of chaos", Box::new(criterion_3)),
        ("BSDE stability", Box::new(criterion_4)),
        ("weak rate", Box::new(criterion_5)),
        ("measure derivative", Box::new(|| on_lq_models(measure_derivative))),
        ("master equation", Box::new(|| on_lq_models(master_equation))),
        ("partial observation", Box::new(criterion_8)),
        ("property suites", Box::new(|| criterion_9(&spec, &bsde))),
    ];
    let mut failed = Vec::new();
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = check();
        emit(&format!(
            "criterion {} [{}] {name}: {} [{:.0}s]",
            i + 1,
            if outcome.passed { "PASS" } else { "FAIL" },
            outcome.detail,
            start.elapsed().as_secs_f64()
        ));
        if !outcome.passed {
            failed.push(i + 1);
        }
    }
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
