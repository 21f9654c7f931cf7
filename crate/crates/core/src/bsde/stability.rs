//! Empirical check of the BSDE stability bound
//! `E||Y^N - Y||^2 + cross + E int |Z^N - Z|^2 <= C E[W2(mu^N_T, mu_T)^2]`.

use serde::Serialize;

use crate::error::{Error, Result};
use crate::measure::{convolve_gaussian, wasserstein2_sq_to_gaussian_1d, wasserstein_p_1d, EmpiricalMeasure, MeasureSummary};
use crate::model::{CoefficientSpec, InitialLaw, Volatility};
use crate::particle::{evolve, mean_stderr, replicate, Drive, NoiseBundle, NoiseKey, TimeGrid, DEFAULT_REFERENCE_FACTOR};
use crate::rng::derive_seed;

use super::{solve_mf_bsde, solve_particle_bsde, BasisVariables, BsdeSolution, RegressionBasis};

/// `E[W2^2]` below this counts as an exact match (no fluctuation at all).
pub const EXACT_THRESHOLD: f64 = 1e-20;

/// Simulation budget of [`stability_gap`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StabilityBudget {
    /// Outer paths of every regression fit.
    pub m_fit: usize,
    /// Coupled paths on which the gaps are averaged.
    pub m_eval: usize,
    /// Inner cloud of the mean-field fit.
    pub n_inner: usize,
    /// Reference-cloud factor when `mu_T` has no closed form.
    pub reference_factor: usize,
    pub basis: RegressionBasis,
}

impl Default for StabilityBudget {
    fn default() -> Self {
        StabilityBudget {
            m_fit: 10_000,
            m_eval: 2_000,
            n_inner: 2_000,
            reference_factor: DEFAULT_REFERENCE_FACTOR,
            basis: RegressionBasis::default()
                .with_variables(BasisVariables { common: false, mean: true, variance: false }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityRow {
    pub n: usize,
    /// `E[max_i |Y^N_i - Y_i|^2]`
    pub y_gap: f64,
    /// `E[sum_i |Z^N_i - Z_i|^2 dt]`
    pub z_gap: f64,
    /// `E[N sum_i |zeta_i|^2 dt]`, the idiosyncratic integrands.
    pub cross: f64,
    pub lhs: f64,
    pub lhs_stderr: f64,
    /// `E[W2(mu^N_T, mu_T)^2]`
    pub rhs: f64,
    pub rhs_stderr: f64,
    /// `lhs / rhs`; `None` when both vanish.
    pub ratio: Option<f64>,
    pub exact: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StabilityTable {
    pub rows: Vec<StabilityRow>,
    /// Whether `mu_T` was the exact Gaussian law or a reference cloud.
    pub exact_reference: bool,
    pub y0_mean_field: f64,
}

impl StabilityTable {
    /// `max ratio / min ratio` over rows with a ratio.
    pub fn ratio_spread(&self) -> Option<f64> {
        let r: Vec<f64> = self.rows.iter().filter_map(|r| r.ratio).collect();
        if r.is_empty() {
            return None;
        }
        let max = r.iter().cloned().fold(f64::MIN, f64::max);
        let min = r.iter().cloned().fold(f64::MAX, f64::min);
        Some(max / min)
    }
}

/// Closed-form conditional law `N(m0 + sigma0 B_t, v0 + sigma sigma^T t)`
/// when `b0 = 0`, `sigma` is constant and `nu0` is Gaussian.
fn gaussian_flow(spec: &CoefficientSpec) -> Option<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    if spec.has_interaction() || !matches!(spec.drift0, crate::model::Drift0::Zero) {
        return None;
    }
    let sigma = match &spec.sigma {
        Volatility::Constant(m) => m.clone(),
        Volatility::Custom(_) => return None,
    };
    match &spec.initial {
        InitialLaw::Gaussian { mean, covariance } => Some((mean.clone(), covariance.clone(), sigma)),
        InitialLaw::Dirac(x) => Some((x.clone(), vec![0.0; x.len() * x.len()], sigma)),
        InitialLaw::Empirical(_) => None,
    }
}

struct PathGap {
    y: f64,
    z: f64,
    cross: f64,
    w2: f64,
}

fn raw_features(basis: &RegressionBasis, common: &[f64], summary: &MeasureSummary) -> Vec<f64> {
    let mut raw = Vec::new();
    basis.raw(common, &summary.mean, &summary.covariance, &mut raw);
    raw
}

fn coupled_gap(
    spec: &CoefficientSpec,
    mf: &BsdeSolution,
    particle: &BsdeSolution,
    noise: &NoiseBundle,
    reference_factor: usize,
    flow: Option<&(Vec<f64>, Vec<f64>, Vec<f64>)>,
) -> Result<PathGap> {
    let d = spec.dim;
    let grid = noise.grid;
    let n = grid.n_steps();
    let dt = grid.dt();
    let basis = mf.basis;

    let mut ref_summaries = Vec::with_capacity(n + 1);
    let mut ref_terminal: Option<EmpiricalMeasure> = None;
    let mut g_ref = 0.0;
    match flow {
        Some((m0, c0, sigma)) => {
            for i in 0..=n {
                let t = grid.time(i);
                let b: Vec<f64> = (0..d)
                    .map(|a| noise.common[..i * d].iter().skip(a).step_by(d).sum::<f64>())
                    .collect();
                let mean: Vec<f64> =
                    (0..d).map(|a| m0[a] + (0..d).map(|c| spec.sigma0[a * d + c] * b[c]).sum::<f64>()).collect();
                let mut cov = c0.clone();
                for a in 0..d {
                    for c in 0..d {
                        cov[a * d + c] += t * (0..d).map(|e| sigma[a * d + e] * sigma[c * d + e]).sum::<f64>();
                    }
                }
                ref_summaries.push(MeasureSummary { mean, covariance: cov });
            }
            let last = &ref_summaries[n];
            if let Some(g) = &spec.terminal_reward {
                let conv = convolve_gaussian(&EmpiricalMeasure::dirac(&last.mean), &vec![0.0; d], &last.covariance, 8)?;
                g_ref = g.eval_convolution(&conv);
            }
        }
        None => {
            let reference = NoiseBundle::generate_reference(
                noise.key,
                &spec.initial,
                noise.n_particles * reference_factor,
                d,
                grid,
            );
            evolve(spec, &reference, Drive::Uncontrolled, |v| {
                ref_summaries.push(v.summary.clone());
                if v.step == n {
                    g_ref = spec.terminal_reward_points(v.states);
                    ref_terminal = Some(EmpiricalMeasure::uniform(d, v.states.to_vec())?);
                }
                Ok(())
            })?;
        }
    }

    let mut y_gap = 0.0f64;
    let mut z_gap = 0.0;
    let mut cross = 0.0;
    let mut w2 = 0.0;
    let mut zn = vec![0.0; d];
    let mut zm = vec![0.0; d];
    let np = noise.n_particles as f64;
    evolve(spec, noise, Drive::Uncontrolled, |v| {
        let i = v.step;
        let (yn, ym) = if i < n {
            let raw_n = raw_features(&basis, v.common, v.summary);
            let raw_m = raw_features(&basis, v.common, &ref_summaries[i]);
            let fit_n = &particle.steps[i];
            let fit_m = &mf.steps[i];
            fit_n.z_at(&raw_n, &mut zn);
            fit_m.z_at(&raw_m, &mut zm);
            z_gap += zn.iter().zip(&zm).map(|(a, b)| (a - b).powi(2)).sum::<f64>() * dt;
            let mut phi = Vec::new();
            fit_n.basis.features(&raw_n, &mut phi);
            for c in &fit_n.zeta {
                let zeta: f64 = phi.iter().zip(c).map(|(p, b)| p * b).sum();
                cross += np * zeta * zeta * dt;
            }
            (fit_n.y_at(&raw_n), fit_m.y_at(&raw_m))
        } else {
            let gn = spec.terminal_reward_points(v.states);
            if d == 1 {
                let mu_n = EmpiricalMeasure::uniform(1, v.states.to_vec())?;
                w2 = match &ref_terminal {
                    Some(r) => wasserstein_p_1d(&mu_n, r, 2.0)?.powi(2),
                    None => {
                        let s = &ref_summaries[n];
                        wasserstein2_sq_to_gaussian_1d(&mu_n, s.mean[0], s.covariance[0])?
                    }
                };
            }
            (gn, g_ref)
        };
        y_gap = y_gap.max((yn - ym).powi(2));
        Ok(())
    })?;
    Ok(PathGap { y: y_gap, z: z_gap, cross, w2 })
}

/// Table of `(N, E||Y^N - Y||^2, E int |Z^N - Z|^2, E W2^2(mu^N_T, mu_T))`
/// on coupled paths. `Y` comes from [`solve_mf_bsde`] and `Y^N` from
/// [`solve_particle_bsde`]; both are evaluated along the same common noise.
pub fn stability_gap(
    spec: &CoefficientSpec,
    n_list: &[usize],
    grid: &TimeGrid,
    budget: &StabilityBudget,
    seed: u64,
) -> Result<StabilityTable> {
    if spec.dim != 1 {
        return Err(Error::Unsupported("stability_gap evaluates W2 in d = 1 only".into()));
    }
    let flow = gaussian_flow(spec);
    let fit_seed = derive_seed(seed, 1);
    let mf = solve_mf_bsde(spec, budget.n_inner, budget.m_fit, grid, &budget.basis, fit_seed)?;
    let mut rows = Vec::with_capacity(n_list.len());
    for (idx, &n) in n_list.iter().enumerate() {
        let particle = solve_particle_bsde(spec, n, budget.m_fit, grid, &budget.basis, fit_seed)?;
        let eval_seed = derive_seed(seed, 10_000 + idx as u64);
        let gaps = replicate(budget.m_eval, |j| {
            let noise = NoiseBundle::generate(NoiseKey::new(eval_seed, j), &spec.initial, n, 1, *grid);
            coupled_gap(spec, &mf, &particle, &noise, budget.reference_factor, flow.as_ref())
        })?;
        let lhs: Vec<f64> = gaps.iter().map(|g| g.y + g.z + g.cross).collect();
        let w2: Vec<f64> = gaps.iter().map(|g| g.w2).collect();
        let (lhs_mean, lhs_se) = mean_stderr(&lhs);
        let (rhs_mean, rhs_se) = mean_stderr(&w2);
        let mean_of = |f: fn(&PathGap) -> f64| gaps.iter().map(f).sum::<f64>() / gaps.len() as f64;
        let exact = rhs_mean <= EXACT_THRESHOLD;
        rows.push(StabilityRow {
            n,
            y_gap: mean_of(|g| g.y),
            z_gap: mean_of(|g| g.z),
            cross: mean_of(|g| g.cross),
            lhs: lhs_mean,
            lhs_stderr: lhs_se,
            rhs: rhs_mean,
            rhs_stderr: rhs_se,
            ratio: if exact { None } else { Some(lhs_mean / rhs_mean) },
            exact,
        });
    }
    Ok(StabilityTable { rows, exact_reference: flow.is_some(), y0_mean_field: mf.y0 })
}
