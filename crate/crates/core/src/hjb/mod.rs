//! Constant-volatility reduction in `d = 1`: the value of the mean-field
//! problem started from `nu0` at time `tau` is `U(tau, nu0) = U~(tau, 0)`
//! where
//!
//! ```text
//! dt U~ + 1/2 sigma0^2 dxx U~ + H0(dx U~) + F~(t, x) = 0,   U~(T) = G~,
//! F~(t, x) = F(nu0 * N(x, sigma^2 (t - tau))).
//! ```
//!
//! `H0(p) = sup_a (L0(a) + b1(a) sigma0 p)` is the control part of the
//! Hamiltonian seen from the common state. Measure derivatives solve the
//! linearized equations, see [`solve_dm_pde`] and [`solve_dmm_pde`].

mod master;

use std::io::Write;
use std::sync::Arc;

use rayon::prelude::*;

pub use master::{
    dm_consistency_check, master_residual, nparticle_residual, DmConsistencyReport, DmRow, MasterResidual,
    MeasureDerivativeProbe, NParticleResidual,
};

use crate::error::{Error, Result};
use crate::measure::{gauss_hermite, EmpiricalMeasure, MeasureSummary};
use crate::model::{CoefficientSpec, Cylindrical, InitialLaw, Volatility};

/// Spatial gradient used in the explicit terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gradient {
    Central,
    /// One-sided along the characteristic velocity; monotone under CFL.
    Upwind,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HjbConfig {
    /// Half-width of the spatial domain; `None` picks `6 sigma0 sqrt(T - tau)`.
    pub radius: Option<f64>,
    /// Number of spatial cells.
    pub n_space: usize,
    /// Number of time steps.
    pub n_time: usize,
    /// Implicit weight of the diffusion (1 = backward Euler, 1/2 = Crank–Nicolson).
    pub theta: f64,
    /// Heun correction of the explicit terms.
    pub predictor_corrector: bool,
    pub gradient: Gradient,
    pub quadrature_order: usize,
    /// `tau`: time at which `nu0` is the law.
    pub time_origin: f64,
}

impl Default for HjbConfig {
    fn default() -> Self {
        HjbConfig {
            radius: None,
            n_space: 400,
            n_time: 400,
            theta: 0.5,
            predictor_corrector: true,
            gradient: Gradient::Central,
            quadrature_order: 8,
            time_origin: 0.0,
        }
    }
}

impl HjbConfig {
    /// Backward Euler diffusion with upwind gradients: a monotone scheme.
    pub fn monotone() -> Self {
        HjbConfig { theta: 1.0, predictor_corrector: false, gradient: Gradient::Upwind, ..Self::default() }
    }

    pub fn with_grid(self, n_space: usize, n_time: usize) -> Self {
        HjbConfig { n_space, n_time, ..self }
    }

    pub fn with_radius(self, radius: f64) -> Self {
        HjbConfig { radius: Some(radius), ..self }
    }

    pub fn with_origin(self, time_origin: f64) -> Self {
        HjbConfig { time_origin, ..self }
    }

    fn resolve_radius(&self, sigma0: f64, horizon: f64) -> f64 {
        self.radius.unwrap_or_else(|| (6.0 * sigma0 * (horizon - self.time_origin).max(0.0).sqrt()).max(1.0))
    }
}

/// Scalar coefficients of a constant-volatility `d = 1` spec.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Scalars {
    pub sigma: f64,
    pub sigma0: f64,
    pub horizon: f64,
}

pub(crate) fn scalars(spec: &CoefficientSpec) -> Result<Scalars> {
    if spec.dim != 1 {
        return Err(Error::Unsupported("the HJB solvers are implemented for d = 1".into()));
    }
    if !spec.flags.constant_vol || spec.has_interaction() {
        return Err(Error::invalid("the HJB reduction needs a constant-volatility spec without b0 interaction"));
    }
    let sigma = match &spec.sigma {
        Volatility::Constant(m) => m[0],
        Volatility::Custom(_) => return Err(Error::invalid("sigma must be constant")),
    };
    Ok(Scalars { sigma, sigma0: spec.sigma0[0], horizon: spec.horizon })
}

/// Atom representation of `nu0`: Gaussian laws become Gauss–Hermite atoms.
pub fn initial_measure(law: &InitialLaw, order: usize) -> Result<EmpiricalMeasure> {
    match law {
        InitialLaw::Gaussian { mean, covariance } if mean.len() == 1 => {
            let (z, w) = gauss_hermite(order);
            let sd = covariance[0].max(0.0).sqrt();
            EmpiricalMeasure::from_flat(1, z.iter().map(|zi| mean[0] + sd * zi).collect(), Some(w))
        }
        InitialLaw::Gaussian { .. } => Err(Error::Unsupported("Gaussian atoms for d = 1 only".into())),
        InitialLaw::Dirac(x) => Ok(EmpiricalMeasure::dirac(x)),
        InitialLaw::Empirical(m) => Ok(m.clone()),
    }
}

/// Rewards lifted to the `(t, x)` grid.
#[derive(Debug, Clone)]
pub struct LiftedRewards {
    pub nu0: EmpiricalMeasure,
    pub config: HjbConfig,
    pub sigma: f64,
    pub sigma0: f64,
    pub radius: f64,
    pub times: Vec<f64>,
    pub xs: Vec<f64>,
    /// `F~(t_k, x_j)`, time-major.
    pub f: Vec<f64>,
    pub g: Vec<f64>,
    /// `D_x F~` from the convolution identity `int D_m F(mu, y) mu(dy)`.
    pub df: Vec<f64>,
    pub dg: Vec<f64>,
    /// Observation vectors of `F` per node (`times x xs x k_F`).
    obs_f: Vec<f64>,
    obs_g: Vec<f64>,
    state_reward: Option<Cylindrical>,
    terminal_reward: Option<Cylindrical>,
}

impl LiftedRewards {
    pub fn dx(&self) -> f64 {
        self.xs[1] - self.xs[0]
    }

    pub fn dt(&self) -> f64 {
        self.times[1] - self.times[0]
    }

    /// `sigma^2 (t_k - tau)`.
    pub fn variance(&self, k: usize) -> f64 {
        self.sigma * self.sigma * (self.times[k] - self.config.time_origin)
    }

    fn obs_f(&self, k: usize, j: usize) -> &[f64] {
        let kf = self.state_reward.as_ref().map_or(0, |f| f.observables.len());
        let off = (k * self.xs.len() + j) * kf;
        &self.obs_f[off..off + kf]
    }

    fn obs_g(&self, j: usize) -> &[f64] {
        let kg = self.terminal_reward.as_ref().map_or(0, |g| g.observables.len());
        &self.obs_g[j * kg..(j + 1) * kg]
    }
}

fn integrate_shifted(
    nu0: &EmpiricalMeasure,
    nodes: &[f64],
    weights: &[f64],
    sd: f64,
    x: f64,
    mut phi: impl FnMut(f64) -> f64,
) -> f64 {
    let mut total = 0.0;
    for (i, w) in nu0.weights().iter().enumerate() {
        if *w == 0.0 {
            continue;
        }
        let atom = nu0.point(i)[0];
        let inner: f64 = nodes.iter().zip(weights).map(|(z, wz)| wz * phi(atom + x + sd * z)).sum();
        total += w * inner;
    }
    total
}

fn lift_one(
    reward: &Cylindrical,
    nu0: &EmpiricalMeasure,
    nodes: &[f64],
    weights: &[f64],
    sd: f64,
    x: f64,
    obs: &mut Vec<f64>,
) -> (f64, f64) {
    let u = reward.observe(|l| integrate_shifted(nu0, nodes, weights, sd, x, |y| l.value(&[y])));
    let value = reward.eval_observed(&u);
    let mut grad = [0.0];
    let dx = integrate_shifted(nu0, nodes, weights, sd, x, |y| {
        reward.measure_gradient(&u, &[y], &mut grad);
        grad[0]
    });
    obs.extend_from_slice(&u);
    (value, dx)
}

/// Evaluates `F~`, `G~` and their `x`-derivatives on the grid of `config`.
pub fn lift_rewards(spec: &CoefficientSpec, nu0: &EmpiricalMeasure, config: &HjbConfig) -> Result<LiftedRewards> {
    let sc = scalars(spec)?;
    if nu0.dim() != 1 {
        return Err(Error::DimensionMismatch { expected: 1, got: nu0.dim() });
    }
    if config.n_space < 4 || config.n_time < 1 {
        return Err(Error::invalid("grid too small"));
    }
    if config.time_origin >= sc.horizon {
        return Err(Error::TimeOutOfGrid(config.time_origin));
    }
    let radius = config.resolve_radius(sc.sigma0, sc.horizon);
    let nx = config.n_space + 1;
    let xs: Vec<f64> = (0..nx).map(|j| -radius + 2.0 * radius * j as f64 / config.n_space as f64).collect();
    let tau = config.time_origin;
    let times: Vec<f64> =
        (0..=config.n_time).map(|k| tau + (sc.horizon - tau) * k as f64 / config.n_time as f64).collect();
    let (nodes, weights) = gauss_hermite(config.quadrature_order);

    let levels: Vec<(Vec<f64>, Vec<f64>, Vec<f64>)> = times
        .par_iter()
        .map(|&t| {
            let sd = sc.sigma * (t - tau).max(0.0).sqrt();
            let mut f = vec![0.0; nx];
            let mut df = vec![0.0; nx];
            let mut obs = Vec::new();
            if let Some(reward) = &spec.state_reward {
                for j in 0..nx {
                    (f[j], df[j]) = lift_one(reward, nu0, &nodes, &weights, sd, xs[j], &mut obs);
                }
            }
            (f, df, obs)
        })
        .collect();
    let mut f = Vec::with_capacity(times.len() * nx);
    let mut df = Vec::with_capacity(times.len() * nx);
    let mut obs_f = Vec::new();
    for (lf, ldf, lo) in levels {
        f.extend(lf);
        df.extend(ldf);
        obs_f.extend(lo);
    }
    let sd_t = sc.sigma * (sc.horizon - tau).sqrt();
    let mut g = vec![0.0; nx];
    let mut dg = vec![0.0; nx];
    let mut obs_g = Vec::new();
    if let Some(reward) = &spec.terminal_reward {
        for j in 0..nx {
            (g[j], dg[j]) = lift_one(reward, nu0, &nodes, &weights, sd_t, xs[j], &mut obs_g);
        }
    }
    for v in f.iter().chain(&g) {
        if !v.is_finite() {
            return Err(Error::NonFinite("lifted reward"));
        }
    }
    Ok(LiftedRewards {
        nu0: nu0.clone(),
        config: *config,
        sigma: sc.sigma,
        sigma0: sc.sigma0,
        radius,
        times,
        xs,
        f,
        g,
        df,
        dg,
        obs_f,
        obs_g,
        state_reward: spec.state_reward.clone(),
        terminal_reward: spec.terminal_reward.clone(),
    })
}

/// Solution `U~` on the grid with its `x`-derivatives.
#[derive(Debug, Clone)]
pub struct LiftedField {
    pub lifted: Arc<LiftedRewards>,
    /// Time-major values.
    pub u: Vec<f64>,
    pub du: Vec<f64>,
    pub d2u: Vec<f64>,
}

/// A companion field `U~1(.; y)` or `U~2(.; y, z)`.
#[derive(Debug, Clone)]
pub struct DerivativeField {
    pub lifted: Arc<LiftedRewards>,
    pub probe: Vec<f64>,
    pub u: Vec<f64>,
    pub du: Vec<f64>,
}

fn interpolate(times: &[f64], xs: &[f64], values: &[f64], t: f64, x: f64) -> Result<f64> {
    let (t0, t1) = (times[0], times[times.len() - 1]);
    if !(t >= t0 - 1e-12 && t <= t1 + 1e-12) {
        return Err(Error::TimeOutOfGrid(t));
    }
    if !(x >= xs[0] && x <= xs[xs.len() - 1]) {
        return Err(Error::invalid(format!("x = {x} outside the spatial grid")));
    }
    let nx = xs.len();
    let locate = |grid: &[f64], v: f64| -> (usize, f64) {
        let h = grid[1] - grid[0];
        let s = ((v - grid[0]) / h).clamp(0.0, (grid.len() - 1) as f64);
        let i = (s.floor() as usize).min(grid.len() - 2);
        (i, s - i as f64)
    };
    let (k, a) = locate(times, t);
    let (j, b) = locate(xs, x);
    let at = |k: usize, j: usize| values[k * nx + j];
    let lo = (1.0 - b) * at(k, j) + b * at(k, j + 1);
    let hi = (1.0 - b) * at(k + 1, j) + b * at(k + 1, j + 1);
    Ok((1.0 - a) * lo + a * hi)
}

impl LiftedField {
    pub fn nx(&self) -> usize {
        self.lifted.xs.len()
    }

    /// `U~(t, x)` by bilinear interpolation.
    pub fn at(&self, t: f64, x: f64) -> Result<f64> {
        interpolate(&self.lifted.times, &self.lifted.xs, &self.u, t, x)
    }

    pub fn du_at(&self, t: f64, x: f64) -> Result<f64> {
        interpolate(&self.lifted.times, &self.lifted.xs, &self.du, t, x)
    }

    pub fn value_at(&self, t: f64) -> Result<f64> {
        self.at(t, 0.0)
    }

    /// `(t, x, U~, D_x U~, D_xx U~)` rows.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "t,x,u,du,d2u")?;
        let nx = self.nx();
        for (k, t) in self.lifted.times.iter().enumerate() {
            for (j, x) in self.lifted.xs.iter().enumerate() {
                let i = k * nx + j;
                writeln!(out, "{t},{x},{},{},{}", self.u[i], self.du[i], self.d2u[i])?;
            }
        }
        Ok(())
    }
}

impl DerivativeField {
    pub fn at(&self, t: f64, x: f64) -> Result<f64> {
        interpolate(&self.lifted.times, &self.lifted.xs, &self.u, t, x)
    }

    pub fn value_at(&self, t: f64) -> Result<f64> {
        self.at(t, 0.0)
    }

    pub fn max_norm(&self) -> f64 {
        self.u.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// `U(t, nu0) = U~(t, 0)`.
pub fn value_at(field: &LiftedField, t: f64) -> Result<f64> {
    field.value_at(t)
}

fn central(u: &[f64], j: usize, dx: f64) -> f64 {
    let n = u.len();
    if j == 0 {
        (-3.0 * u[0] + 4.0 * u[1] - u[2]) / (2.0 * dx)
    } else if j == n - 1 {
        (3.0 * u[n - 1] - 4.0 * u[n - 2] + u[n - 3]) / (2.0 * dx)
    } else {
        (u[j + 1] - u[j - 1]) / (2.0 * dx)
    }
}

/// Gradient at node `j` for transport with velocity `v` (`dt U + v dx U`).
fn gradient(u: &[f64], j: usize, dx: f64, mode: Gradient, velocity: f64) -> f64 {
    let n = u.len();
    if mode == Gradient::Central || j == 0 || j == n - 1 {
        return central(u, j, dx);
    }
    if velocity > 0.0 {
        (u[j + 1] - u[j]) / dx
    } else {
        (u[j] - u[j - 1]) / dx
    }
}

fn derivatives(u: &[f64], nx: usize, dx: f64) -> (Vec<f64>, Vec<f64>) {
    let mut du = vec![0.0; u.len()];
    let mut d2u = vec![0.0; u.len()];
    for (level, (d1, d2)) in u.chunks_exact(nx).zip(du.chunks_exact_mut(nx).zip(d2u.chunks_exact_mut(nx))) {
        for j in 0..nx {
            d1[j] = central(level, j, dx);
            if j > 0 && j < nx - 1 {
                d2[j] = (level[j + 1] - 2.0 * level[j] + level[j - 1]) / (dx * dx);
            }
        }
    }
    (du, d2u)
}

/// Backward theta-scheme for `dt U + alpha dxx U + E(t, U) = 0` with the
/// explicit rate `E` supplied per level. Boundary nodes carry no diffusion
/// (second derivative zero).
fn march(
    lifted: &LiftedRewards,
    alpha: f64,
    terminal: Vec<f64>,
    mut rate: impl FnMut(usize, &[f64], &mut [f64]) -> Result<()>,
) -> Result<Vec<f64>> {
    let cfg = &lifted.config;
    let nx = lifted.xs.len();
    let kk = lifted.times.len() - 1;
    let dt = lifted.dt();
    let dx = lifted.dx();
    let lam = alpha * dt / (dx * dx);
    let theta = cfg.theta;
    // Thomas factorization of the constant tridiagonal matrix.
    let lower = -theta * lam;
    let diag = 1.0 + 2.0 * theta * lam;
    let mut c_prime = vec![0.0; nx];
    let mut denom = vec![1.0; nx];
    for j in 1..nx - 1 {
        let (a, b, c) = (lower, diag, lower);
        let a = if j == 1 { 0.0 } else { a };
        denom[j] = b - a * c_prime[j - 1];
        c_prime[j] = if j == nx - 2 { 0.0 } else { c / denom[j] };
    }
    let solve = |rhs: &mut [f64]| {
        // Boundary rows are identity; move their values to the right side.
        rhs[1] -= lower * rhs[0];
        rhs[nx - 2] -= lower * rhs[nx - 1];
        let mut d = vec![0.0; nx];
        for j in 1..nx - 1 {
            let prev = if j == 1 { 0.0 } else { d[j - 1] };
            let a = if j == 1 { 0.0 } else { lower };
            d[j] = (rhs[j] - a * prev) / denom[j];
        }
        for j in (1..nx - 1).rev() {
            let next = if j == nx - 2 { 0.0 } else { rhs[j + 1] };
            rhs[j] = d[j] - c_prime[j] * next;
        }
    };

    let mut all = vec![0.0; (kk + 1) * nx];
    all[kk * nx..].copy_from_slice(&terminal);
    let mut e_next = vec![0.0; nx];
    let mut e_pred = vec![0.0; nx];
    let mut base = vec![0.0; nx];
    let mut rhs = vec![0.0; nx];
    for k in (0..kk).rev() {
        let next = &all[(k + 1) * nx..(k + 2) * nx];
        rate(k + 1, next, &mut e_next)?;
        base[0] = next[0];
        base[nx - 1] = next[nx - 1];
        for j in 1..nx - 1 {
            base[j] = next[j] + (1.0 - theta) * lam * (next[j - 1] - 2.0 * next[j] + next[j + 1]);
        }
        for j in 0..nx {
            rhs[j] = base[j] + dt * e_next[j];
        }
        solve(&mut rhs);
        if cfg.predictor_corrector {
            rate(k, &rhs, &mut e_pred)?;
            for j in 0..nx {
                rhs[j] = base[j] + 0.5 * dt * (e_next[j] + e_pred[j]);
            }
            solve(&mut rhs);
        }
        if rhs.iter().any(|v| !v.is_finite()) {
            return Err(Error::BlowUp { step: k });
        }
        all[k * nx..(k + 1) * nx].copy_from_slice(&rhs);
    }
    Ok(all)
}

fn courant(lifted: &LiftedRewards, speed: f64) -> Result<()> {
    let c = speed * lifted.dt() / lifted.dx();
    if c > 1.0 {
        return Err(Error::Cfl { courant: c });
    }
    Ok(())
}

/// `(H0, D_p H0, D_pp H0)` at `p = dx U~`.
fn h0_p(spec: &CoefficientSpec, dummy: &MeasureSummary, sigma0: f64, t: f64, p: f64) -> (f64, f64, f64) {
    let (h, dz, dzz) = spec.h0_derivatives_1d(t, dummy, sigma0 * p);
    (h, sigma0 * dz, sigma0 * sigma0 * dzz)
}

/// Solves the lifted HJB equation backward from `G~`.
pub fn solve_hjb(spec: &CoefficientSpec, lifted: &LiftedRewards) -> Result<LiftedField> {
    let sc = scalars(spec)?;
    let nx = lifted.xs.len();
    let dx = lifted.dx();
    let dummy = MeasureSummary::point(&[0.0]);
    let mode = lifted.config.gradient;
    let u = march(lifted, 0.5 * sc.sigma0 * sc.sigma0, lifted.g.clone(), |k, u, out| {
        let t = lifted.times[k];
        let mut speed = 0.0f64;
        for j in 0..nx {
            let pc = central(u, j, dx);
            let (_, v, _) = h0_p(spec, &dummy, sc.sigma0, t, pc);
            let p = gradient(u, j, dx, mode, v);
            let (h, v, _) = h0_p(spec, &dummy, sc.sigma0, t, p);
            speed = speed.max(v.abs());
            out[j] = h + lifted.f[k * nx + j];
        }
        courant(lifted, speed)
    })?;
    let (du, d2u) = derivatives(&u, nx, dx);
    Ok(LiftedField { lifted: Arc::new(lifted.clone()), u, du, d2u })
}

/// Lift and solve in one call.
pub fn solve_value(spec: &CoefficientSpec, nu0: &EmpiricalMeasure, config: &HjbConfig) -> Result<LiftedField> {
    solve_hjb(spec, &lift_rewards(spec, nu0, config)?)
}

/// `E[l'(c + sd Z)]` by Gauss–Hermite.
fn observable_slope(l: &crate::model::Observable, c: f64, sd: f64, nodes: &[f64], weights: &[f64]) -> f64 {
    let mut g = [0.0];
    nodes
        .iter()
        .zip(weights)
        .map(|(z, w)| {
            l.gradient(&[c + sd * z], &mut g);
            w * g[0]
        })
        .sum()
}

/// `E[D_m R(mu_{t,x}, y + x + sd Z)]` for a cylindrical reward with
/// observations `u`.
fn dm_lifted(reward: &Cylindrical, u: &[f64], c: f64, sd: f64, nodes: &[f64], weights: &[f64]) -> f64 {
    let mut grad = vec![0.0; u.len()];
    reward.outer.gradient(u, &mut grad);
    reward
        .observables
        .iter()
        .zip(&grad)
        .filter(|(_, g)| **g != 0.0)
        .map(|(l, g)| g * observable_slope(l, c, sd, nodes, weights))
        .sum()
}

/// `E[D^2_mm R(mu_{t,x}, y + x + sd Z1, z + x + sd Z2)]` with independent
/// `Z1`, `Z2`: the expectation factorizes over the two points.
fn dmm_lifted(
    reward: &Cylindrical,
    u: &[f64],
    cy: f64,
    cz: f64,
    sd: f64,
    nodes: &[f64],
    weights: &[f64],
) -> f64 {
    let k = u.len();
    let mut hess = vec![0.0; k * k];
    reward.outer.hessian(u, &mut hess);
    if hess.iter().all(|h| *h == 0.0) {
        return 0.0;
    }
    let sy: Vec<f64> = reward.observables.iter().map(|l| observable_slope(l, cy, sd, nodes, weights)).collect();
    let sz: Vec<f64> = reward.observables.iter().map(|l| observable_slope(l, cz, sd, nodes, weights)).collect();
    let mut total = 0.0;
    for i in 0..k {
        for j in 0..k {
            total += hess[i * k + j] * sy[i] * sz[j];
        }
    }
    total
}

/// Linear solve `dt V + 1/2 sigma0^2 dxx V + D_p H0(dx U~) dx V + S = 0`.
fn solve_linear(
    spec: &CoefficientSpec,
    field: &LiftedField,
    terminal: Vec<f64>,
    source: impl Fn(usize, usize) -> f64,
) -> Result<Vec<f64>> {
    let sc = scalars(spec)?;
    let lifted = &field.lifted;
    let nx = lifted.xs.len();
    let dx = lifted.dx();
    let dummy = MeasureSummary::point(&[0.0]);
    let mode = lifted.config.gradient;
    march(lifted, 0.5 * sc.sigma0 * sc.sigma0, terminal, |k, v, out| {
        let t = lifted.times[k];
        let mut speed = 0.0f64;
        for j in 0..nx {
            let (_, vel, _) = h0_p(spec, &dummy, sc.sigma0, t, field.du[k * nx + j]);
            speed = speed.max(vel.abs());
            out[j] = vel * gradient(v, j, dx, mode, vel) + source(k, j);
        }
        courant(lifted, speed)
    })
}

/// `U~1(t, x; y)`: the Lions derivative `D_m U~` at the probe point `y`.
/// `U~1(t, 0; y) = D_m U(t, nu0)(y)`.
pub fn solve_dm_pde(spec: &CoefficientSpec, field: &LiftedField, y: f64) -> Result<DerivativeField> {
    let lifted = field.lifted.clone();
    let nx = lifted.xs.len();
    let (nodes, weights) = gauss_hermite(lifted.config.quadrature_order);
    let kk = lifted.times.len() - 1;
    let terminal: Vec<f64> = (0..nx)
        .map(|j| match &lifted.terminal_reward {
            Some(g) => dm_lifted(g, lifted.obs_g(j), y + lifted.xs[j], lifted.variance(kk).sqrt(), &nodes, &weights),
            None => 0.0,
        })
        .collect();
    let u = solve_linear(spec, field, terminal, |k, j| match &lifted.state_reward {
        Some(f) => dm_lifted(f, lifted.obs_f(k, j), y + lifted.xs[j], lifted.variance(k).sqrt(), &nodes, &weights),
        None => 0.0,
    })?;
    let (du, _) = derivatives(&u, nx, lifted.dx());
    Ok(DerivativeField { lifted, probe: vec![y], u, du })
}

/// `U~2(t, x; y, z)`: the second Lions derivative, given `U~1` at `y` and `z`.
pub fn solve_dmm_pde(
    spec: &CoefficientSpec,
    field: &LiftedField,
    u1_y: &DerivativeField,
    u1_z: &DerivativeField,
    y: f64,
    z: f64,
) -> Result<DerivativeField> {
    let sc = scalars(spec)?;
    let lifted = field.lifted.clone();
    let nx = lifted.xs.len();
    let (nodes, weights) = gauss_hermite(lifted.config.quadrature_order);
    let kk = lifted.times.len() - 1;
    let dummy = MeasureSummary::point(&[0.0]);
    let terminal: Vec<f64> = (0..nx)
        .map(|j| match &lifted.terminal_reward {
            Some(g) => {
                let sd = lifted.variance(kk).sqrt();
                dmm_lifted(g, lifted.obs_g(j), y + lifted.xs[j], z + lifted.xs[j], sd, &nodes, &weights)
            }
            None => 0.0,
        })
        .collect();
    let u = solve_linear(spec, field, terminal, |k, j| {
        let i = k * nx + j;
        let (_, _, dpp) = h0_p(spec, &dummy, sc.sigma0, lifted.times[k], field.du[i]);
        let mut s = dpp * u1_y.du[i] * u1_z.du[i];
        if let Some(f) = &lifted.state_reward {
            let sd = lifted.variance(k).sqrt();
            s += dmm_lifted(f, lifted.obs_f(k, j), y + lifted.xs[j], z + lifted.xs[j], sd, &nodes, &weights);
        }
        s
    })?;
    let (du, _) = derivatives(&u, nx, lifted.dx());
    Ok(DerivativeField { lifted, probe: vec![y, z], u, du })
}

/// `U~1` at several probe points in parallel.
pub fn solve_dm_many(spec: &CoefficientSpec, field: &LiftedField, ys: &[f64]) -> Result<Vec<DerivativeField>> {
    ys.par_iter().map(|&y| solve_dm_pde(spec, field, y)).collect()
}

/// Relative change of `U(tau, nu0)` when the radius shrinks by 25%.
pub fn boundary_influence(spec: &CoefficientSpec, nu0: &EmpiricalMeasure, config: &HjbConfig) -> Result<f64> {
    let full = solve_value(spec, nu0, config)?;
    let radius = full.lifted.radius;
    let cells = ((config.n_space as f64) * 0.75).round() as usize;
    let shrunk = solve_value(spec, nu0, &config.with_radius(0.75 * radius).with_grid(cells, config.n_time))?;
    let a = full.value_at(config.time_origin)?;
    let b = shrunk.value_at(config.time_origin)?;
    Ok((a - b).abs() / a.abs().max(1e-12))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ControlSet, ModelParams, Observable, SpecFlags};

    fn heat_spec() -> CoefficientSpec {
        let mut spec = CoefficientSpec::zero_1d(0.0);
        spec.control = ControlSet::symmetric(1, 0.0);
        spec.sigma0 = vec![0.5];
        spec.flags = SpecFlags { markovian: true, constant_vol: true, drift_controlled: true };
        spec.terminal_reward = Some(Cylindrical::linear(Observable::Power { axis: 0, exponent: 2 }));
        spec
    }

    #[test]
    fn heat_equation_is_reproduced() {
        let spec = heat_spec();
        let nu0 = EmpiricalMeasure::dirac(&[0.0]);
        let field = solve_value(&spec, &nu0, &HjbConfig::default()).unwrap();
        let r = field.lifted.radius;
        let mut err = 0.0f64;
        for (k, t) in field.lifted.times.iter().enumerate() {
            for (j, x) in field.lifted.xs.iter().enumerate() {
                if x.abs() <= 0.5 * r {
                    let exact = x * x + 0.25 * (1.0 - t);
                    err = err.max((field.u[k * field.nx() + j] - exact).abs());
                }
            }
        }
        assert!(err < 1e-3, "{err}");
    }

    #[test]
    fn lq_value_matches_riccati() {
        let params = ModelParams::preset("lq").unwrap();
        let spec = params.spec().unwrap();
        let nu0 = initial_measure(&spec.initial, 8).unwrap();
        let field = solve_value(&spec, &nu0, &HjbConfig::default()).unwrap();
        let oracle = crate::model::lq_value_oracle(&params.lq(), 0.0, params.m0).unwrap();
        let v = field.value_at(0.0).unwrap();
        assert!((v - oracle).abs() < 5e-3 * oracle.abs(), "{v} vs {oracle}");
        assert_eq!(&field.u[field.u.len() - field.nx()..], &field.lifted.g[..]);
    }

    #[test]
    fn lifted_second_moment_matches_gaussian_algebra() {
        let mut spec = heat_spec();
        spec.sigma = Volatility::Constant(vec![0.8]);
        spec.state_reward = Some(Cylindrical::linear(Observable::Power { axis: 0, exponent: 2 }));
        let nu0 = EmpiricalMeasure::uniform(1, vec![-0.5, 0.2, 1.1]).unwrap();
        let lifted = lift_rewards(&spec, &nu0, &HjbConfig::default().with_grid(20, 10)).unwrap();
        let mean = (-0.5 + 0.2 + 1.1) / 3.0;
        let var = (0.25 + 0.04 + 1.21) / 3.0 - mean * mean;
        for k in [0, 5, 10] {
            for j in [0, 7, 20] {
                let x = lifted.xs[j];
                let exact = var + (mean + x) * (mean + x) + 0.64 * lifted.times[k];
                let got = lifted.f[k * 21 + j];
                assert!((got - exact).abs() <= 1e-8 * exact.abs().max(1.0), "{got} {exact}");
                assert!((lifted.df[k * 21 + j] - 2.0 * (mean + x)).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn constant_rewards_have_zero_measure_derivatives() {
        let mut spec = heat_spec();
        spec.terminal_reward = Some(Cylindrical::constant(2.0));
        let nu0 = EmpiricalMeasure::dirac(&[0.3]);
        let field = solve_value(&spec, &nu0, &HjbConfig::default().with_grid(50, 50)).unwrap();
        let u1 = solve_dm_pde(&spec, &field, 0.1).unwrap();
        let u2 = solve_dmm_pde(&spec, &field, &u1, &u1, 0.1, 0.1).unwrap();
        assert_eq!(u1.max_norm(), 0.0);
        assert_eq!(u2.max_norm(), 0.0);
    }

    #[test]
    fn cfl_violation_is_reported() {
        let params = ModelParams::preset("lq").unwrap();
        let spec = params.spec().unwrap();
        let nu0 = initial_measure(&spec.initial, 4).unwrap();
        let cfg = HjbConfig::default().with_grid(2000, 20);
        assert!(matches!(solve_value(&spec, &nu0, &cfg), Err(Error::Cfl { .. })));
    }
}
