//! The convergence studies behind the lab subcommands.

use serde::Serialize;

use crate::bsde::{solve_mf_bsde, solve_particle_bsde_from, stability_gap, RegressionBasis, StabilityBudget, StabilityTable};
use crate::error::{Error, Result};
use crate::hjb::{initial_measure, solve_value, HjbConfig};
use crate::measure::{wasserstein2_assignment_capped, wasserstein2_sq_to_gaussian_1d, wasserstein_p_1d, EmpiricalMeasure};
use crate::model::{lq_value_oracle, CoefficientSpec, Drift0, InitialLaw};
use crate::partialobs::{
    estimate_partial_value_cv, lqg_oracle, optimize_parametric_policy, FeedbackGrid, PartialObsSpec, PolicySearch,
};
use crate::particle::{
    mean_stderr, quenched_initials, replicate, simulate_coupled_clouds, simulate_mkv_cloud, NoiseBundle, NoiseKey,
    TimeGrid,
};
use crate::rng::derive_seed;

use super::config::{ChaosVariant, ExperimentConfig};
use super::rate::{RateRow, RateTable, MIN_EXPERIMENT_POINTS};

/// Rows whose standard error exceeds this fraction of the statistic make
/// the fit under-powered.
pub const MAX_RELATIVE_STDERR: f64 = 0.5;
/// Assignment cap for `W2` between clouds in `d > 1`.
const ASSIGNMENT_CAP: usize = 2048;

fn grid_of(cfg: &ExperimentConfig) -> Result<TimeGrid> {
    TimeGrid::new(cfg.model.horizon, cfg.n_steps)
}

fn w2_sq(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Result<f64> {
    if mu.dim() == 1 {
        Ok(wasserstein_p_1d(mu, nu, 2.0)?.powi(2))
    } else {
        Ok(wasserstein2_assignment_capped(mu, nu, ASSIGNMENT_CAP)?.powi(2))
    }
}

/// `N(m0 + sigma0 B_T, v0 + sigma^2 T)`, the terminal conditional law of
/// the uncontrolled `d = 1` cloud without drift.
fn gaussian_terminal(spec: &CoefficientSpec, noise: &NoiseBundle) -> Option<(f64, f64)> {
    if spec.dim != 1 || !matches!(spec.drift0, Drift0::Zero) {
        return None;
    }
    let sigma = spec.constant_sigma()?[0];
    let (m0, v0) = match &spec.initial {
        InitialLaw::Gaussian { mean, covariance } => (mean[0], covariance[0]),
        InitialLaw::Dirac(x) => (x[0], 0.0),
        InitialLaw::Empirical(_) => return None,
    };
    let b_t: f64 = noise.common.iter().sum();
    Some((m0 + spec.sigma0[0] * b_t, v0 + sigma * sigma * noise.grid.horizon()))
}

fn check_power(rows: &[RateRow]) -> Result<()> {
    if rows.len() < MIN_EXPERIMENT_POINTS {
        return Err(Error::UnderPowered(format!("{} values of N, need at least {MIN_EXPERIMENT_POINTS}", rows.len())));
    }
    if let Some(r) = rows.iter().find(|r| r.stat > 0.0 && r.stderr > MAX_RELATIVE_STDERR * r.stat) {
        return Err(Error::UnderPowered(format!(
            "N = {}: standard error {:e} exceeds {MAX_RELATIVE_STDERR} of the statistic {:e}",
            r.n, r.stderr, r.stat
        )));
    }
    Ok(())
}

/// `E[W2^2]` between the interacting cloud and its decoupled copies
/// (coupled variant) or between the copies and the conditional law
/// (sampling variant), with a log-log fit over `cfg.n_list`.
pub fn run_chaos_experiment(cfg: &ExperimentConfig) -> Result<RateTable> {
    let spec = cfg.model.spec()?;
    let grid = grid_of(cfg)?;
    let d = spec.dim;
    let mut rows = Vec::with_capacity(cfg.n_list.len());
    for (idx, &n) in cfg.n_list.iter().enumerate() {
        let seed = derive_seed(cfg.seed, idx as u64);
        let values = replicate(cfg.replications, |j| {
            let noise = NoiseBundle::generate(NoiseKey::new(seed, j), &spec.initial, n, d, grid);
            match cfg.variant {
                ChaosVariant::Coupled => {
                    let (inter, dec) = simulate_coupled_clouds(&spec, n, &grid, &noise, cfg.reference_factor)?;
                    let last = grid.n_steps();
                    w2_sq(&inter.measure_at(last), &dec.measure_at(last))
                }
                ChaosVariant::Sampling => {
                    let (_, dec) = simulate_coupled_clouds(&spec, n, &grid, &noise, cfg.reference_factor)?;
                    let copies = dec.measure_at(grid.n_steps());
                    match gaussian_terminal(&spec, &noise) {
                        Some((mean, var)) => wasserstein2_sq_to_gaussian_1d(&copies, mean, var),
                        None => {
                            let reference = NoiseBundle::generate_reference(
                                noise.key,
                                &spec.initial,
                                n * cfg.reference_factor,
                                d,
                                grid,
                            );
                            let cloud = simulate_mkv_cloud(&spec, n * cfg.reference_factor, &grid, &reference)?;
                            w2_sq(&copies, &cloud.measure_at(grid.n_steps()))
                        }
                    }
                }
            }
        })?;
        let (stat, stderr) = mean_stderr(&values);
        rows.push(RateRow { n, stat, stderr, reps: cfg.replications });
    }
    if rows.iter().all(|r| r.stat == 0.0) {
        return RateTable::from_rows(rows);
    }
    check_power(&rows)?;
    RateTable::from_rows(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValueRateRow {
    pub n: usize,
    /// `V^N(0, x)` from the particle BSDE.
    pub v_n: f64,
    pub v_n_stderr: f64,
    /// `U(0, m^x)` from the lifted HJB.
    pub u: f64,
    /// `V^N - U`
    pub signed_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValueRateResult {
    pub table: RateTable,
    pub details: Vec<ValueRateRow>,
}

/// `|V^N(0, x) - U(0, m^x)|` with initial atoms `x` drawn once per N.
pub fn run_value_rate_experiment(cfg: &ExperimentConfig) -> Result<ValueRateResult> {
    let spec = cfg.model.spec()?;
    if !spec.flags.constant_vol {
        return Err(Error::Unsupported(format!("value-rate needs a constant-volatility preset, got `{}`", cfg.preset)));
    }
    let grid = grid_of(cfg)?;
    let basis = RegressionBasis::default().with_degree(cfg.basis_degree);
    let hjb = HjbConfig::default().with_grid(cfg.hjb_n_space, cfg.hjb_n_time);
    let mut rows = Vec::new();
    let mut details = Vec::new();
    for (idx, &n) in cfg.n_list.iter().enumerate() {
        let x = quenched_initials(derive_seed(cfg.seed, 1000 + idx as u64), &spec.initial, n, spec.dim);
        let sol = solve_particle_bsde_from(&spec, &x, cfg.m_outer, &grid, &basis, derive_seed(cfg.seed, idx as u64))?;
        let mx = EmpiricalMeasure::uniform(spec.dim, x)?;
        let u = solve_value(&spec, &mx, &hjb)?.value_at(0.0)?;
        let gap = sol.y0 - u;
        rows.push(RateRow { n, stat: gap.abs(), stderr: sol.y0_stderr, reps: cfg.m_outer });
        details.push(ValueRateRow { n, v_n: sol.y0, v_n_stderr: sol.y0_stderr, u, signed_gap: gap });
    }
    if rows.iter().all(|r| r.stat == 0.0) {
        return Ok(ValueRateResult { table: RateTable::from_rows(rows)?, details });
    }
    if rows.len() < MIN_EXPERIMENT_POINTS {
        return Err(Error::UnderPowered(format!("{} values of N, need at least {MIN_EXPERIMENT_POINTS}", rows.len())));
    }
    Ok(ValueRateResult { table: RateTable::from_rows(rows)?, details })
}

/// [`stability_gap`] with the config budgets.
pub fn run_stability_experiment(cfg: &ExperimentConfig) -> Result<StabilityTable> {
    let spec = cfg.model.spec()?;
    let grid = grid_of(cfg)?;
    let budget = StabilityBudget {
        m_fit: cfg.m_outer,
        m_eval: cfg.replications,
        n_inner: cfg.n_inner,
        reference_factor: cfg.reference_factor,
        ..StabilityBudget::default()
    };
    stability_gap(&spec, &cfg.n_list, &grid, &budget, cfg.seed)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CrossCheck {
    pub pde_value: f64,
    pub bsde_value: f64,
    pub bsde_stderr: f64,
    pub pde_vs_bsde_relerr: f64,
    /// Riccati value when the preset is linear-quadratic.
    pub riccati_value: Option<f64>,
}

/// `U(0, nu0)` from the HJB solver against `Y_0` of the mean-field BSDE.
pub fn run_crosscheck(cfg: &ExperimentConfig) -> Result<CrossCheck> {
    let spec = cfg.model.spec()?;
    if !spec.flags.constant_vol {
        return Err(Error::Unsupported(format!(
            "the HJB solver needs constant volatility and no interaction; `{}` has neither",
            cfg.preset
        )));
    }
    let grid = grid_of(cfg)?;
    let nu0 = initial_measure(&spec.initial, 8)?;
    let hjb = HjbConfig::default().with_grid(cfg.hjb_n_space, cfg.hjb_n_time);
    let pde_value = solve_value(&spec, &nu0, &hjb)?.value_at(0.0)?;
    let basis = RegressionBasis::default().with_degree(cfg.basis_degree);
    let bsde = solve_mf_bsde(&spec, cfg.n_inner, cfg.m_outer, &grid, &basis, cfg.seed)?;
    let riccati_value = if cfg.model.kappa == 0.0 {
        Some(lq_value_oracle(&cfg.model.lq(), 0.0, cfg.model.m0)?)
    } else {
        None
    };
    Ok(CrossCheck {
        pde_value,
        bsde_value: bsde.y0,
        bsde_stderr: bsde.y0_stderr,
        pde_vs_bsde_relerr: (pde_value - bsde.y0).abs() / pde_value.abs().max(1e-300),
        riccati_value,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PartialObsRow {
    pub n: usize,
    pub gain: f64,
    pub target: f64,
    pub value: f64,
    pub stderr: f64,
    pub reps: usize,
    /// `|value - V_P| / |V_P|`
    pub relative_gap: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PartialObsResult {
    pub oracle_value: f64,
    pub oracle_gain: f64,
    /// Certainty equivalence on the weighted mean at each N.
    pub rows: Vec<PartialObsRow>,
    pub search_n: usize,
    pub search_m: usize,
    pub search: PolicySearch,
}

/// Certainty-equivalent values against the LQG oracle, then a gain search.
pub fn run_partialobs_experiment(cfg: &ExperimentConfig) -> Result<PartialObsResult> {
    let pspec = PartialObsSpec::from_params(&cfg.model)?;
    let oracle = lqg_oracle(&pspec)?;
    let grid = grid_of(cfg)?;
    let policy = oracle.weighted_mean_policy();
    let gain = oracle.gain_at(0.0);
    let mut rows = Vec::new();
    for (idx, &n) in cfg.n_list.iter().enumerate() {
        let (value, stderr) =
            estimate_partial_value_cv(&pspec, &policy, n, cfg.replications, &grid, derive_seed(cfg.seed, idx as u64))?;
        rows.push(PartialObsRow {
            n,
            gain,
            target: cfg.model.theta,
            value,
            stderr,
            reps: cfg.replications,
            relative_gap: (value - oracle.value).abs() / oracle.value.abs().max(1e-300),
        });
    }
    let family = FeedbackGrid::gains(cfg.gain_lo, cfg.gain_hi, cfg.gain_step, cfg.model.theta);
    let search =
        optimize_parametric_policy(&pspec, &family, cfg.search_n, cfg.search_m, &grid, derive_seed(cfg.seed, 999))?;
    Ok(PartialObsResult {
        oracle_value: oracle.value,
        oracle_gain: gain,
        rows,
        search_n: cfg.search_n,
        search_m: cfg.search_m,
        search,
    })
}
