//! Checks built on the measure-derivative fields: finite-difference
//! consistency of `D_m U`, the master-equation residual and the `E_N`
//! correction of the N-particle equation.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::measure::{EmpiricalMeasure, MeasureSummary};
use crate::model::CoefficientSpec;

use super::{scalars, solve_dm_pde, solve_dmm_pde, solve_value, HjbConfig};

/// Moves atom `atom` of `base` by `eps * direction` for each `eps`.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasureDerivativeProbe {
    pub base: EmpiricalMeasure,
    pub atom: usize,
    pub direction: f64,
    pub eps: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DmRow {
    pub eps: f64,
    /// `U(tau, nu_eps) - U(tau, nu0)`
    pub difference: f64,
    /// `w_i (dU/dm(y + eps h) - dU/dm(y))` by the midpoint rule on `U~1`.
    pub linear: f64,
    pub relative_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DmConsistencyReport {
    pub rows: Vec<DmRow>,
    /// `w_i D_m U(tau, nu0)(y) h` from the `U~1` field.
    pub predicted_slope: f64,
    /// Difference quotients extrapolated over successive `eps` pairs.
    pub richardson_slope: f64,
    pub richardson_relative_error: f64,
}

/// Compares difference quotients of `U(tau, .)` with the `U~1` field.
///
/// Richardson uses the two smallest nonzero `eps` values, which must be in
/// ratio 2.
pub fn dm_consistency_check(
    spec: &CoefficientSpec,
    probe: &MeasureDerivativeProbe,
    config: &HjbConfig,
) -> Result<DmConsistencyReport> {
    let tau = config.time_origin;
    let base = solve_value(spec, &probe.base, config)?;
    let u0 = base.value_at(tau)?;
    let y = probe.base.point(probe.atom)[0];
    let w = probe.base.weights()[probe.atom];
    let h = probe.direction;
    let slope_field = solve_dm_pde(spec, &base, y)?;
    let predicted_slope = w * h * slope_field.value_at(tau)?;

    let rows: Vec<DmRow> = probe
        .eps
        .par_iter()
        .map(|&eps| -> Result<DmRow> {
            if eps == 0.0 {
                return Ok(DmRow { eps, difference: 0.0, linear: 0.0, relative_error: 0.0 });
            }
            let moved = probe.base.with_atom_moved(probe.atom, &[eps * h]);
            let difference = solve_value(spec, &moved, config)?.value_at(tau)? - u0;
            let mid = solve_dm_pde(spec, &base, y + 0.5 * eps * h)?;
            let linear = w * eps * h * mid.value_at(tau)?;
            let relative_error = (difference - linear).abs() / linear.abs().max(1e-300);
            Ok(DmRow { eps, difference, linear, relative_error })
        })
        .collect::<Result<_>>()?;

    let mut nonzero: Vec<&DmRow> = rows.iter().filter(|r| r.eps != 0.0).collect();
    nonzero.sort_by(|a, b| a.eps.abs().total_cmp(&b.eps.abs()));
    let richardson_slope = match nonzero.as_slice() {
        [small, large, ..] => {
            let q_small = small.difference / small.eps;
            let q_large = large.difference / large.eps;
            let ratio = large.eps / small.eps;
            (ratio * q_small - q_large) / (ratio - 1.0)
        }
        [only] => only.difference / only.eps,
        [] => 0.0,
    };
    let richardson_relative_error = if predicted_slope == 0.0 {
        richardson_slope.abs()
    } else {
        (richardson_slope - predicted_slope).abs() / predicted_slope.abs()
    };
    Ok(DmConsistencyReport { rows, predicted_slope, richardson_slope, richardson_relative_error })
}

/// Terms of the master equation at one measure.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MasterResidual {
    pub t: f64,
    pub value: f64,
    pub time_derivative: f64,
    pub hamiltonian: f64,
    pub running_reward: f64,
    /// `1/2 (sigma^2 + sigma0^2) int dy D_m U dnu`
    pub first_order: f64,
    /// `1/2 sigma0^2 int int D^2_mm U dnu dnu`
    pub second_order: f64,
    pub residual: f64,
    /// Largest absolute term.
    pub scale: f64,
}

impl MasterResidual {
    pub fn relative(&self) -> f64 {
        self.residual.abs() / self.scale.max(1e-300)
    }
}

/// Plugs the computed derivatives of `U` at `(t, nu)` into
/// `dt U + H0(int D_m U dnu) + F(nu) + 1/2 (sigma^2 + sigma0^2) int dy D_m U dnu
///  + 1/2 sigma0^2 int int D^2_mm U dnu dnu`.
pub fn master_residual(spec: &CoefficientSpec, nu: &EmpiricalMeasure, t: f64, config: &HjbConfig) -> Result<MasterResidual> {
    let sc = scalars(spec)?;
    if !(t < sc.horizon) {
        return Err(Error::TimeOutOfGrid(t));
    }
    let delta = (1e-2f64).min(0.25 * (sc.horizon - t));
    let at = |tau: f64| -> Result<f64> { solve_value(spec, nu, &config.with_origin(tau))?.value_at(tau) };
    let (up, down) = rayon::join(|| at(t + delta), || at(t - delta));
    let time_derivative = (up? - down?) / (2.0 * delta);

    let field = solve_value(spec, nu, &config.with_origin(t))?;
    let value = field.value_at(t)?;
    let atoms: Vec<f64> = (0..nu.len()).map(|i| nu.point(i)[0]).collect();
    let weights = nu.weights();
    let scale_y = atoms.iter().fold(1.0f64, |m, a| m.max(a.abs()));
    let h = 1e-3 * scale_y;
    let mut probes = atoms.clone();
    probes.extend(atoms.iter().map(|a| a + h));
    probes.extend(atoms.iter().map(|a| a - h));
    let fields: Vec<_> = probes.par_iter().map(|&y| solve_dm_pde(spec, &field, y)).collect::<Result<_>>()?;
    let a_len = atoms.len();
    let mut p = 0.0;
    let mut dy = 0.0;
    for i in 0..a_len {
        p += weights[i] * fields[i].value_at(t)?;
        dy += weights[i] * (fields[a_len + i].value_at(t)? - fields[2 * a_len + i].value_at(t)?) / (2.0 * h);
    }
    let pairs: Vec<(usize, usize)> = (0..a_len).flat_map(|i| (i..a_len).map(move |j| (i, j))).collect();
    let second: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| -> Result<f64> {
            let u2 = solve_dmm_pde(spec, &field, &fields[i], &fields[j], atoms[i], atoms[j])?;
            let mult = if i == j { 1.0 } else { 2.0 };
            Ok(mult * weights[i] * weights[j] * u2.value_at(t)?)
        })
        .collect::<Result<_>>()?;
    let dmm: f64 = second.iter().sum();

    let dummy = MeasureSummary::point(&[0.0]);
    let hamiltonian = spec.h0(t, &dummy, &[sc.sigma0 * p]).value;
    let running_reward = spec.state_reward_at(nu);
    let first_order = 0.5 * (sc.sigma * sc.sigma + sc.sigma0 * sc.sigma0) * dy;
    let second_order = 0.5 * sc.sigma0 * sc.sigma0 * dmm;
    let terms = [time_derivative, hamiltonian, running_reward, first_order, second_order];
    let residual = terms.iter().sum();
    let scale = terms.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    Ok(MasterResidual {
        t,
        value,
        time_derivative,
        hamiltonian,
        running_reward,
        first_order,
        second_order,
        residual,
        scale,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct NParticleResidual {
    pub n: usize,
    /// `-(1 / 2N^2) sum_k sigma^2 D^2_mm U(m^x)(x_k, x_k)`
    pub e_n: f64,
    /// `sup |D^2_mm U| sigma^2 / (2N)` over the evaluated diagonal.
    pub bound: f64,
    pub max_dmm: f64,
}

/// `E_N(t, x)` at the empirical measure of `points` (`N` atoms in `d = 1`).
pub fn nparticle_residual(
    spec: &CoefficientSpec,
    points: &[f64],
    t: f64,
    config: &HjbConfig,
) -> Result<NParticleResidual> {
    let sc = scalars(spec)?;
    let n = points.len();
    let mx = EmpiricalMeasure::uniform(1, points.to_vec())?;
    let cfg = config.with_origin(t);
    let field = solve_value(spec, &mx, &cfg)?;
    let diag: Vec<f64> = points
        .par_iter()
        .map(|&x| -> Result<f64> {
            let u1 = solve_dm_pde(spec, &field, x)?;
            solve_dmm_pde(spec, &field, &u1, &u1, x, x)?.value_at(t)
        })
        .collect::<Result<_>>()?;
    let s2 = sc.sigma * sc.sigma;
    let nf = n as f64;
    let e_n = -diag.iter().map(|v| s2 * v).sum::<f64>() / (2.0 * nf * nf);
    let max_dmm = diag.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    Ok(NParticleResidual { n, e_n, bound: max_dmm * s2 / (2.0 * nf), max_dmm })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hjb::initial_measure;
    use crate::model::{lq_value_oracle, ModelParams};

    #[test]
    fn lq_master_residual_vanishes() {
        let params = ModelParams::preset("lq").unwrap();
        let spec = params.spec().unwrap();
        let nu = initial_measure(&spec.initial, 3).unwrap();
        let r = master_residual(&spec, &nu, 0.2, &HjbConfig::default().with_grid(100, 100)).unwrap();
        assert!(r.relative() < 1e-2, "{r:?}");
        let oracle = lq_value_oracle(&params.lq(), 0.2, params.m0).unwrap();
        assert!((r.value - oracle).abs() < 1e-3, "{} {oracle}", r.value);
    }

    #[test]
    fn e_n_is_zero_without_idiosyncratic_noise() {
        let mut params = ModelParams::preset("lq").unwrap();
        params.sigma = 0.0;
        let spec = params.spec().unwrap();
        let r = nparticle_residual(&spec, &[0.5, 1.0, 1.5], 0.0, &HjbConfig::default().with_grid(60, 60)).unwrap();
        assert_eq!(r.e_n, 0.0);
    }
}
