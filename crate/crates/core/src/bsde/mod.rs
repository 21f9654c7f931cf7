//! Regression Monte Carlo for the value BSDEs of the mean-field and the
//! N-particle problems.
//!
//! Forward paths follow the uncontrolled dynamics (drift `b0`). Going
//! backward, `Y_i = E[Y_{i+1} | G_i] + H(t_i, mu_i, Z_i) dt` with
//! `Z_i = E[Y_{i+1} dB_i | G_i] / dt`. The conditional expectations are
//! least-squares fits on [`RegressionBasis`] features, and each path carries
//! the martingale-corrected value `Y_{i+1} + H dt - Z.dB - zeta.dS` where
//! `dS = sum_k dW^k`.

mod basis;
mod stability;

use std::io::Write;
use std::sync::Arc;

use serde::Serialize;

pub use basis::{BasisVariables, Regression, RegressionBasis, StepBasis};
pub use stability::{stability_gap, EXACT_THRESHOLD, StabilityBudget, StabilityRow, StabilityTable};

use crate::error::{Error, Result};
use crate::measure::MeasureSummary;
use crate::model::CoefficientSpec;
use crate::particle::{evolve, mean_stderr, replicate, Drive, NoiseBundle, NoiseKey, Policy, TimeGrid};

/// Largest population accepted by [`solve_particle_bsde`].
pub const DEFAULT_PARTICLE_CAP: usize = 4096;

/// Fitted regressions of one time step.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepFit {
    pub step: usize,
    pub t: f64,
    pub basis: StepBasis,
    pub y: Vec<f64>,
    /// One coefficient vector per component of `Z`.
    pub z: Vec<Vec<f64>>,
    /// Coefficients of the aggregated idiosyncratic integrand.
    pub zeta: Vec<Vec<f64>>,
    pub condition: f64,
}

impl StepFit {
    pub fn z_at(&self, raw: &[f64], out: &mut [f64]) {
        let mut phi = Vec::with_capacity(self.basis.len());
        self.basis.features(raw, &mut phi);
        for (o, c) in out.iter_mut().zip(&self.z) {
            *o = phi.iter().zip(c).map(|(p, b)| p * b).sum();
        }
    }

    pub fn y_at(&self, raw: &[f64]) -> f64 {
        self.basis.eval(raw, &self.y)
    }
}

/// Per-step diagnostics.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StepDiagnostics {
    pub step: usize,
    pub t: f64,
    pub condition: f64,
    /// Mean of `Y_i - Y_{i+1} - H dt + Z.dB` over paths.
    pub residual_mean: f64,
    pub residual_stderr: f64,
    pub z_mean: Vec<f64>,
    /// Mean of `|zeta|` (per-particle integrand scaled by `N`).
    pub zeta_mean_abs: f64,
}

impl StepDiagnostics {
    pub fn residual_ok(&self, k: f64) -> bool {
        self.residual_mean.abs() <= k * self.residual_stderr + 1e-12
    }
}

/// Output of a backward induction.
#[derive(Debug, Clone)]
pub struct BsdeSolution {
    pub y0: f64,
    pub y0_stderr: f64,
    pub grid: TimeGrid,
    pub n_particles: usize,
    pub m_outer: usize,
    pub dim: usize,
    pub basis: RegressionBasis,
    pub steps: Vec<StepFit>,
    /// `M x (n+1)`: fitted `Y_{t_i}` per path, exact `g` at `t_n`.
    pub y_samples: Vec<f64>,
    /// `M x n x d`.
    pub z_samples: Vec<f64>,
    /// `max_j |Y_{t_n} - g(mu_T)|`.
    pub terminal_residual: f64,
    pub diagnostics: Vec<StepDiagnostics>,
}

impl BsdeSolution {
    pub fn y_at(&self, path: usize, step: usize) -> f64 {
        self.y_samples[path * (self.grid.n_steps() + 1) + step]
    }

    pub fn z_at(&self, path: usize, step: usize) -> &[f64] {
        let n = self.grid.n_steps();
        let off = (path * n + step) * self.dim;
        &self.z_samples[off..off + self.dim]
    }

    /// Worst `|mean| / stderr` of the martingale residual over steps.
    pub fn max_residual_score(&self) -> f64 {
        self.diagnostics
            .iter()
            .map(|d| if d.residual_stderr > 0.0 { d.residual_mean.abs() / d.residual_stderr } else { 0.0 })
            .fold(0.0, f64::max)
    }

    pub fn write_json<W: Write>(&self, out: W) -> Result<()> {
        let doc = serde_json::json!({
            "y0": self.y0,
            "y0_stderr": self.y0_stderr,
            "horizon": self.grid.horizon(),
            "n_steps": self.grid.n_steps(),
            "n_particles": self.n_particles,
            "m_outer": self.m_outer,
            "basis": self.basis,
            "steps": self.steps,
        });
        serde_json::to_writer_pretty(out, &doc)?;
        Ok(())
    }

    pub fn write_diagnostics_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "step,t,condition,residual_mean,residual_stderr,z_mean,zeta_mean_abs")?;
        for d in &self.diagnostics {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                d.step,
                d.t,
                d.condition,
                d.residual_mean,
                d.residual_stderr,
                d.z_mean.iter().map(|z| z.to_string()).collect::<Vec<_>>().join(";"),
                d.zeta_mean_abs
            )?;
        }
        Ok(())
    }
}

/// What one forward path leaves for the backward pass.
struct PathRecord {
    /// `(n+1) x raw_len`
    raw: Vec<f64>,
    summaries: Vec<MeasureSummary>,
    /// `F(mu_i)`, `n` values.
    running: Vec<f64>,
    /// `n x d`
    db: Vec<f64>,
    /// `n x d`
    ds: Vec<f64>,
    terminal: f64,
}

fn forward_path(
    spec: &CoefficientSpec,
    basis: &RegressionBasis,
    noise: &NoiseBundle,
) -> Result<PathRecord> {
    let d = spec.dim;
    let n = noise.grid.n_steps();
    let r = basis.raw_len(d);
    let mut rec = PathRecord {
        raw: Vec::with_capacity((n + 1) * r),
        summaries: Vec::with_capacity(n),
        running: Vec::with_capacity(n),
        db: noise.common.clone(),
        ds: vec![0.0; n * d],
        terminal: 0.0,
    };
    let mut raw = Vec::with_capacity(r);
    evolve(spec, noise, Drive::Uncontrolled, |v| {
        basis.raw(v.common, &v.summary.mean, &v.summary.covariance, &mut raw);
        rec.raw.extend_from_slice(&raw);
        if v.step < n {
            rec.summaries.push(v.summary.clone());
            rec.running.push(spec.state_reward_points(v.states));
        } else {
            rec.terminal = spec.terminal_reward_points(v.states);
        }
        Ok(())
    })?;
    for i in 0..n {
        noise.idiosyncratic_sum(i, &mut rec.ds[i * d..(i + 1) * d]);
    }
    Ok(rec)
}

fn check_spec(spec: &CoefficientSpec) -> Result<()> {
    if !spec.flags.drift_controlled {
        return Err(Error::invalid("the BSDE solvers need a drift-controlled spec"));
    }
    let d = spec.dim;
    let m = nalgebra::DMatrix::from_row_slice(d, d, &spec.sigma0);
    let sv = m.singular_values();
    let max = sv.max();
    let min = sv.min();
    let condition = if min > 0.0 { max / min } else { f64::INFINITY };
    if !(condition < 1e12) {
        return Err(Error::SingularSigma0 { condition });
    }
    Ok(())
}

/// Backward induction over `records`.
fn backward(
    spec: &CoefficientSpec,
    grid: TimeGrid,
    basis: RegressionBasis,
    n_particles: usize,
    records: Vec<PathRecord>,
) -> Result<BsdeSolution> {
    let d = spec.dim;
    let n = grid.n_steps();
    let dt = grid.dt();
    let m = records.len();
    let r = basis.raw_len(d);
    let mut y_path: Vec<f64> = records.iter().map(|p| p.terminal).collect();
    let mut y_fit_next = y_path.clone();
    let mut y_samples = vec![0.0; m * (n + 1)];
    let mut z_samples = vec![0.0; m * n * d];
    for (j, p) in records.iter().enumerate() {
        y_samples[j * (n + 1) + n] = p.terminal;
    }
    let mut steps = Vec::with_capacity(n);
    let mut diagnostics = Vec::with_capacity(n);
    let mut raw_step = vec![0.0; m * r];
    let mut phi = Vec::new();
    let mut z = vec![0.0; d];
    let mut zeta = vec![0.0; d];
    let scale_n = n_particles as f64 * dt;

    for i in (0..n).rev() {
        let t = grid.time(i);
        for (j, p) in records.iter().enumerate() {
            raw_step[j * r..(j + 1) * r].copy_from_slice(&p.raw[i * r..(i + 1) * r]);
        }
        let step_basis = StepBasis::fit(&raw_step, r, basis.degree);
        let p_len = step_basis.len();
        let mut design = Vec::with_capacity(m * p_len);
        for j in 0..m {
            step_basis.features(&raw_step[j * r..(j + 1) * r], &mut phi);
            design.extend_from_slice(&phi);
        }
        let reg = Regression::new(design, p_len, basis.ridge, basis.max_condition, i)?;

        // De-meaning the target leaves the projections unchanged in
        // expectation and removes most of their variance.
        let pre = reg.solve(&y_path);
        let resid: Vec<f64> = (0..m).map(|j| y_path[j] - reg.predict(j, &pre)).collect();
        let mut z_coef = Vec::with_capacity(d);
        let mut zeta_coef = Vec::with_capacity(d);
        for a in 0..d {
            let tz: Vec<f64> = (0..m).map(|j| resid[j] * records[j].db[i * d + a] / dt).collect();
            z_coef.push(reg.solve(&tz));
            let ts: Vec<f64> = (0..m).map(|j| resid[j] * records[j].ds[i * d + a] / scale_n).collect();
            zeta_coef.push(reg.solve(&ts));
        }

        let mut drivers = vec![0.0; m];
        let mut z_sum = vec![0.0; d];
        let mut zeta_abs = 0.0;
        for j in 0..m {
            let rec = &records[j];
            for a in 0..d {
                z[a] = reg.predict(j, &z_coef[a]);
                zeta[a] = reg.predict(j, &zeta_coef[a]);
                z_sum[a] += z[a];
                zeta_abs += zeta[a].abs();
            }
            let h = rec.running[i] + spec.h0(t, &rec.summaries[i], &z).value;
            drivers[j] = h;
            let db = &rec.db[i * d..(i + 1) * d];
            let ds = &rec.ds[i * d..(i + 1) * d];
            let mart: f64 = (0..d).map(|a| z[a] * db[a] + zeta[a] * ds[a]).sum();
            y_path[j] += h * dt - mart;
            z_samples[(j * n + i) * d..(j * n + i + 1) * d].copy_from_slice(&z);
        }
        let y_coef = reg.solve(&y_path);
        let mut residuals = vec![0.0; m];
        for j in 0..m {
            let y_fit = reg.predict(j, &y_coef);
            let db = &records[j].db[i * d..(i + 1) * d];
            let zj = &z_samples[(j * n + i) * d..(j * n + i + 1) * d];
            let zdb: f64 = zj.iter().zip(db).map(|(a, b)| a * b).sum();
            residuals[j] = y_fit - y_fit_next[j] - drivers[j] * dt + zdb;
            y_samples[j * (n + 1) + i] = y_fit;
            y_fit_next[j] = y_fit;
        }
        let (res_mean, res_se) = mean_stderr(&residuals);
        diagnostics.push(StepDiagnostics {
            step: i,
            t,
            condition: reg.condition,
            residual_mean: res_mean,
            residual_stderr: res_se,
            z_mean: z_sum.iter().map(|s| s / m as f64).collect(),
            zeta_mean_abs: zeta_abs / (m * d) as f64,
        });
        steps.push(StepFit {
            step: i,
            t,
            basis: step_basis,
            y: y_coef,
            z: z_coef,
            zeta: zeta_coef,
            condition: reg.condition,
        });
    }
    steps.reverse();
    diagnostics.reverse();
    let (y0, y0_stderr) = mean_stderr(&y_path);
    if !y0.is_finite() {
        return Err(Error::NonFinite("Y0"));
    }
    let terminal_residual = records
        .iter()
        .enumerate()
        .map(|(j, p)| (y_samples[j * (n + 1) + n] - p.terminal).abs())
        .fold(0.0, f64::max);
    Ok(BsdeSolution {
        y0,
        y0_stderr,
        grid,
        n_particles,
        m_outer: m,
        dim: d,
        basis,
        steps,
        y_samples,
        z_samples,
        terminal_residual,
        diagnostics,
    })
}

fn solve(
    spec: &CoefficientSpec,
    n_particles: usize,
    m_outer: usize,
    grid: &TimeGrid,
    basis: &RegressionBasis,
    seed: u64,
    initial: Option<&[f64]>,
) -> Result<BsdeSolution> {
    check_spec(spec)?;
    if n_particles == 0 || m_outer == 0 {
        return Err(Error::invalid("need at least one particle and one outer path"));
    }
    let records = replicate(m_outer, |j| {
        let mut noise = NoiseBundle::generate(NoiseKey::new(seed, j), &spec.initial, n_particles, spec.dim, *grid);
        if let Some(points) = initial {
            noise = noise.with_initial_points(points)?;
        }
        forward_path(spec, basis, &noise)
    })?;
    backward(spec, *grid, *basis, n_particles, records)
}

/// Mean-field BSDE: each outer path carries an inner cloud of `n_inner`
/// particles standing in for the conditional law `mu_t`.
pub fn solve_mf_bsde(
    spec: &CoefficientSpec,
    n_inner: usize,
    m_outer: usize,
    grid: &TimeGrid,
    basis: &RegressionBasis,
    seed: u64,
) -> Result<BsdeSolution> {
    solve(spec, n_inner, m_outer, grid, basis, seed, None)
}

/// N-particle BSDE with i.i.d. initial positions; `Y0` estimates the
/// N-particle value averaged over the initial draw.
pub fn solve_particle_bsde(
    spec: &CoefficientSpec,
    n: usize,
    m_outer: usize,
    grid: &TimeGrid,
    basis: &RegressionBasis,
    seed: u64,
) -> Result<BsdeSolution> {
    check_cap(n)?;
    solve(spec, n, m_outer, grid, basis, seed, None)
}

/// N-particle BSDE started from the fixed configuration `initial`
/// (`N x d`, shared by every outer path).
pub fn solve_particle_bsde_from(
    spec: &CoefficientSpec,
    initial: &[f64],
    m_outer: usize,
    grid: &TimeGrid,
    basis: &RegressionBasis,
    seed: u64,
) -> Result<BsdeSolution> {
    let n = initial.len() / spec.dim.max(1);
    check_cap(n)?;
    solve(spec, n, m_outer, grid, basis, seed, Some(initial))
}

fn check_cap(n: usize) -> Result<()> {
    if n > DEFAULT_PARTICLE_CAP {
        return Err(Error::invalid(format!("N = {n} exceeds the particle cap {DEFAULT_PARTICLE_CAP}")));
    }
    Ok(())
}

/// Feedback policy `a*(t_i) = argmax_a (L0 + b1 . Z(t_i, features))` read
/// off the fitted `Z` regressions. The features are the shifted common
/// noise and the cloud summary, under which the controlled cloud matches
/// the uncontrolled one the regressions were fitted on.
pub fn extract_control(spec: &CoefficientSpec, solution: &BsdeSolution) -> Policy {
    let spec = spec.clone();
    let steps: Arc<Vec<StepFit>> = Arc::new(solution.steps.clone());
    let basis = solution.basis;
    let d = solution.dim;
    Policy::RegressionFeedback(Arc::new(move |step, shifted, summary, out| {
        let fit = &steps[step.min(steps.len() - 1)];
        let mut raw = Vec::with_capacity(basis.raw_len(d));
        basis.raw(shifted, &summary.mean, &summary.covariance, &mut raw);
        let mut z = vec![0.0; d];
        fit.z_at(&raw, &mut z);
        out.copy_from_slice(&spec.h0(fit.t, summary, &z).argmax);
    }))
}
