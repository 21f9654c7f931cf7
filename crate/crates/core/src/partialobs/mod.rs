//! Partially observed control through the reference-probability
//! reformulation: particles move under the reference measure, on which the
//! observation is the Brownian motion `B`, and carry likelihood weights
//! `Z^k` with `dZ = Z h(X) . dB`.

mod lqg;

use std::fmt;
use std::sync::Arc;

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::{
    CoefficientSpec, ControlCost, ControlDrift, ControlSet, Cylindrical, Drift0, InitialLaw, ModelParams, Observable,
    Outer, SpecFlags, Volatility, DEFAULT_GRID_POINTS,
};
use crate::particle::{mean_stderr, replicate, summarize, NoiseBundle, NoiseKey, TimeGrid};

pub use lqg::{lqg_oracle, LqgOracle, LqgParams};

pub type ObservationDriftFn = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;
pub type PointFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;
/// `(step, t, observation path B_0..B_i, out)`
pub type ObservationPolicyFn = Arc<dyn Fn(usize, f64, &[f64], &mut [f64]) + Send + Sync>;

/// Observation drift `h(t, x)`.
#[derive(Clone)]
pub enum Observation {
    Zero,
    /// `h = c`, the same constant in every coordinate.
    Constant(f64),
    /// `h(x) = eta x`
    Linear { eta: f64 },
    Custom(ObservationDriftFn),
}

impl fmt::Debug for Observation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Observation::Zero => f.write_str("Zero"),
            Observation::Constant(c) => write!(f, "Constant({c})"),
            Observation::Linear { eta } => write!(f, "Linear({eta})"),
            Observation::Custom(_) => f.write_str("Custom"),
        }
    }
}

impl Observation {
    pub fn eval(&self, t: f64, x: &[f64], out: &mut [f64]) {
        match self {
            Observation::Zero => out.iter_mut().for_each(|v| *v = 0.0),
            Observation::Constant(c) => out.iter_mut().for_each(|v| *v = *c),
            Observation::Linear { eta } => {
                for (o, v) in out.iter_mut().zip(x) {
                    *o = eta * v;
                }
            }
            Observation::Custom(f) => f(t, x, out),
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            Observation::Zero => true,
            Observation::Constant(c) => *c == 0.0,
            Observation::Linear { eta } => *eta == 0.0,
            Observation::Custom(_) => false,
        }
    }
}

/// State part of a pointwise reward.
#[derive(Clone)]
pub enum PointReward {
    Zero,
    Constant(f64),
    /// `-scale |x - target|^2`
    Quadratic { scale: f64, target: f64 },
    Custom(PointFn),
}

impl fmt::Debug for PointReward {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PointReward::Zero => f.write_str("Zero"),
            PointReward::Constant(c) => write!(f, "Constant({c})"),
            PointReward::Quadratic { scale, target } => write!(f, "Quadratic({scale}, {target})"),
            PointReward::Custom(_) => f.write_str("Custom"),
        }
    }
}

impl PointReward {
    pub fn eval(&self, x: &[f64]) -> f64 {
        match self {
            PointReward::Zero => 0.0,
            PointReward::Constant(c) => *c,
            PointReward::Quadratic { scale, target } => -scale * x.iter().map(|v| (v - target).powi(2)).sum::<f64>(),
            PointReward::Custom(f) => f(x),
        }
    }

    /// The same reward integrated against a measure, `<mu, r>`, for `d = 1`.
    pub fn to_cylindrical(&self) -> Option<Cylindrical> {
        match self {
            PointReward::Zero => None,
            PointReward::Constant(c) => Some(Cylindrical::constant(*c)),
            PointReward::Quadratic { scale, target } => Some(Cylindrical::new(
                vec![Observable::Power { axis: 0, exponent: 2 }, Observable::Coordinate(0)],
                Outer::Affine { constant: -scale * target * target, coefficients: vec![-scale, 2.0 * scale * target] },
            )),
            PointReward::Custom(f) => Some(Cylindrical::linear(Observable::Custom(f.clone()))),
        }
    }
}

/// Partially observed model. `dynamics` supplies `b0`, `sigma`, `sigma0`,
/// `b1`, the control set, `L0` and the initial law; its measure-dependent
/// rewards are ignored. The running reward is `L0(a) + running(x)`.
#[derive(Clone, Debug)]
pub struct PartialObsSpec {
    pub dynamics: CoefficientSpec,
    pub observation: Observation,
    pub running: PointReward,
    pub terminal: PointReward,
    /// Set for linear-Gaussian instances; read by [`lqg_oracle`].
    pub lqg: Option<LqgParams>,
}

impl PartialObsSpec {
    /// `dX = (beta X + a) dt + sigma dW + sigma0 dB^a`, `h(x) = eta x`,
    /// `L = -a^2/2 - c (x - theta)^2`, `g = -gamma (x - theta)^2`.
    pub fn from_params(params: &ModelParams) -> Result<Self> {
        if !(params.sigma0 > 0.0) {
            return Err(Error::SingularSigma0 { condition: f64::INFINITY });
        }
        let beta = params.beta;
        let drift0 = if beta == 0.0 {
            Drift0::Zero
        } else {
            Drift0::Custom(Arc::new(move |_, x, _, out| {
                for (o, v) in out.iter_mut().zip(x) {
                    *o = beta * v;
                }
            }))
        };
        let dynamics = CoefficientSpec {
            dim: 1,
            horizon: params.horizon,
            control: ControlSet::symmetric(1, params.a_max),
            drift0,
            sigma: Volatility::Constant(vec![params.sigma]),
            sigma0: vec![params.sigma0],
            control_drift: ControlDrift::Linear { scale: 1.0 / params.sigma0 },
            b1_bound: params.a_max / params.sigma0,
            control_cost: ControlCost::Quadratic { weight: 1.0 },
            state_reward: None,
            terminal_reward: None,
            initial: InitialLaw::gaussian_1d(params.m0, params.v0),
            full_drift: None,
            flags: SpecFlags { markovian: true, constant_vol: beta == 0.0, drift_controlled: true },
            grid_points: DEFAULT_GRID_POINTS,
        };
        Ok(PartialObsSpec {
            dynamics,
            observation: Observation::Linear { eta: params.eta },
            running: PointReward::Quadratic { scale: params.c, target: params.theta },
            terminal: PointReward::Quadratic { scale: params.gamma, target: params.theta },
            lqg: Some(LqgParams::from_model(params)),
        })
    }

    pub fn dim(&self) -> usize {
        self.dynamics.dim
    }

    pub fn with_observation(self, observation: Observation) -> Self {
        let lqg = match (&observation, self.lqg) {
            (Observation::Linear { eta }, Some(p)) => Some(LqgParams { eta: *eta, ..p }),
            (Observation::Zero, Some(p)) => Some(LqgParams { eta: 0.0, ..p }),
            _ => None,
        };
        PartialObsSpec { observation, lqg, ..self }
    }

    /// The fully observed spec with the pointwise rewards averaged over the
    /// cloud. Matches this spec when `h = 0` (`d = 1`).
    pub fn full_observation_spec(&self) -> CoefficientSpec {
        CoefficientSpec {
            state_reward: self.running.to_cylindrical(),
            terminal_reward: self.terminal.to_cylindrical(),
            ..self.dynamics.clone()
        }
    }

    /// Sampled Lipschitz and growth checks on `b0`, `sigma`, `h` and
    /// `sigma0 h` over `samples` random points in `[-radius, radius]^d`.
    pub fn check_regularity(&self, samples: usize, radius: f64, bound: f64, seed: u64) -> Result<()> {
        use rand::Rng;
        let d = self.dim();
        let mut rng = crate::rng::stream(seed, crate::rng::StreamRole::Auxiliary, 0, 0);
        let summary = summarize(d, &vec![0.0; d]);
        let eval = |x: &[f64]| {
            let mut b = vec![0.0; d];
            let mut s = vec![0.0; d * d];
            let mut h = vec![0.0; d];
            self.dynamics.b0(0.0, x, &summary, &mut b);
            self.dynamics.sigma_at(0.0, x, &summary, &mut s);
            self.observation.eval(0.0, x, &mut h);
            let mut s0h = vec![0.0; d];
            for a in 0..d {
                s0h[a] = (0..d).map(|c| self.dynamics.sigma0[a * d + c] * h[c]).sum();
            }
            [b, s, h, s0h].concat()
        };
        for _ in 0..samples {
            let x: Vec<f64> = (0..d).map(|_| rng.random_range(-radius..radius)).collect();
            let y: Vec<f64> = (0..d).map(|_| rng.random_range(-radius..radius)).collect();
            let fx = eval(&x);
            let fy = eval(&y);
            if fx.iter().chain(&fy).any(|v| !v.is_finite()) {
                return Err(Error::NonFinite("partial-observation coefficients"));
            }
            let dxy = x.iter().zip(&y).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let dfy = fx.iter().zip(&fy).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let norm_x = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            let growth = fx.iter().map(|v| v * v).sum::<f64>().sqrt();
            if dfy > bound * dxy || growth > bound * (1.0 + norm_x) {
                return Err(Error::invalid(format!("coefficients exceed the Lipschitz/growth bound {bound} at {x:?}")));
            }
        }
        Ok(())
    }
}

/// What a partially observed policy may read: the observation path and the
/// weighted mean of the cloud.
pub struct PartialPolicyInput<'a> {
    pub step: usize,
    pub t: f64,
    /// `B_0, ..., B_{t_i}`, row-major.
    pub observation_path: &'a [f64],
    /// `sum_k Z^k X^k / sum_k Z^k`
    pub weighted_mean: &'a [f64],
}

/// A control shared by every particle. Outputs are clamped into `A`.
#[derive(Clone)]
pub enum PartialPolicy {
    Constant(Vec<f64>),
    /// `a = -gain (weighted mean - target)` coordinatewise.
    WeightedMeanFeedback { gain: f64, target: f64 },
    /// Reads the observation path only.
    ObservationFeedback(ObservationPolicyFn),
}

impl fmt::Debug for PartialPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PartialPolicy::Constant(a) => write!(f, "Constant({a:?})"),
            PartialPolicy::WeightedMeanFeedback { gain, target } => write!(f, "WeightedMeanFeedback({gain}, {target})"),
            PartialPolicy::ObservationFeedback(_) => f.write_str("ObservationFeedback"),
        }
    }
}

impl PartialPolicy {
    pub fn act(&self, input: &PartialPolicyInput<'_>, control: &ControlSet, out: &mut [f64]) {
        match self {
            PartialPolicy::Constant(a) => out.copy_from_slice(a),
            PartialPolicy::WeightedMeanFeedback { gain, target } => {
                for (o, m) in out.iter_mut().zip(input.weighted_mean) {
                    *o = -gain * (m - target);
                }
            }
            PartialPolicy::ObservationFeedback(f) => f(input.step, input.t, input.observation_path, out),
        }
        control.clamp(out);
    }
}

/// Engine state at node `t_i`, before stepping.
struct WeightedView<'a> {
    step: usize,
    t: f64,
    states: &'a [f64],
    log_weights: &'a [f64],
    control: Option<&'a [f64]>,
}

/// `sum w_k x_k / sum w_k` with `w_k = exp(log Z_k - max log Z)`.
fn weighted_mean(d: usize, states: &[f64], log_weights: &[f64], out: &mut [f64]) {
    let top = log_weights.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    out.iter_mut().for_each(|v| *v = 0.0);
    let mut total = 0.0;
    for (x, lw) in states.chunks_exact(d).zip(log_weights) {
        let w = (lw - top).exp();
        total += w;
        for (o, v) in out.iter_mut().zip(x) {
            *o += w * v;
        }
    }
    out.iter_mut().for_each(|v| *v /= total);
}

/// Euler for `dX = (b - sigma0 h) dt + sigma dW + sigma0 dB` and exact
/// exponential increments for `log Z`.
fn evolve_weighted(
    pspec: &PartialObsSpec,
    policy: &PartialPolicy,
    noise: &NoiseBundle,
    mut observer: impl FnMut(&WeightedView<'_>) -> Result<()>,
) -> Result<()> {
    let spec = &pspec.dynamics;
    let d = spec.dim;
    if noise.dim != d {
        return Err(Error::DimensionMismatch { expected: d, got: noise.dim });
    }
    let grid = noise.grid;
    let n = grid.n_steps();
    let dt = grid.dt();
    let np = noise.n_particles;
    let mut states = noise.initial.clone();
    let mut log_weights = vec![0.0; np];
    let mut path = vec![0.0; (n + 1) * d];
    let mut alpha = vec![0.0; d];
    let mut b1 = vec![0.0; d];
    let mut push = vec![0.0; d];
    let mut drift = vec![0.0; d];
    let mut x = vec![0.0; d];
    let mut h = vec![0.0; d];
    let mut s0h = vec![0.0; d];
    let mut sig = vec![0.0; d * d];
    let mut sig0_db = vec![0.0; d];
    let mut mean = vec![0.0; d];
    let const_sigma = spec.constant_sigma().map(<[f64]>::to_vec);

    for i in 0..=n {
        let t = grid.time(i);
        let control = if i < n {
            weighted_mean(d, &states, &log_weights, &mut mean);
            let input = PartialPolicyInput { step: i, t, observation_path: &path[..(i + 1) * d], weighted_mean: &mean };
            policy.act(&input, &spec.control, &mut alpha);
            if !spec.control.contains(&alpha) {
                return Err(Error::OutsideControlSet(alpha.clone()));
            }
            Some(alpha.as_slice())
        } else {
            None
        };
        observer(&WeightedView { step: i, t, states: &states, log_weights: &log_weights, control })?;
        if i == n {
            break;
        }

        let summary = summarize(d, &states);
        spec.b1(t, &summary, &alpha, &mut b1);
        for a in 0..d {
            push[a] = (0..d).map(|b| spec.sigma0[a * d + b] * b1[b]).sum();
        }
        let db = noise.common_increment(i);
        for a in 0..d {
            sig0_db[a] = (0..d).map(|b| spec.sigma0[a * d + b] * db[b]).sum();
        }
        if let Some(m) = &const_sigma {
            sig.copy_from_slice(m);
        }
        for k in 0..np {
            x.copy_from_slice(&states[k * d..(k + 1) * d]);
            spec.b0(t, &x, &summary, &mut drift);
            if const_sigma.is_none() {
                spec.sigma_at(t, &x, &summary, &mut sig);
            }
            pspec.observation.eval(t, &x, &mut h);
            for a in 0..d {
                s0h[a] = (0..d).map(|b| spec.sigma0[a * d + b] * h[b]).sum();
            }
            let dw = noise.idiosyncratic_increment(k, i);
            let row = &mut states[k * d..(k + 1) * d];
            for a in 0..d {
                let diffusion: f64 = (0..d).map(|b| sig[a * d + b] * dw[b]).sum();
                row[a] = x[a] + (drift[a] + push[a] - s0h[a]) * dt + diffusion + sig0_db[a];
                if !row[a].is_finite() {
                    return Err(Error::BlowUp { step: i + 1 });
                }
            }
            let hh: f64 = h.iter().map(|v| v * v).sum();
            let hdb: f64 = h.iter().zip(db).map(|(a, b)| a * b).sum();
            log_weights[k] += hdb - 0.5 * hh * dt;
            if !log_weights[k].is_finite() {
                return Err(Error::NonFinite("particle weights"));
            }
        }
        for a in 0..d {
            path[(i + 1) * d + a] = path[i * d + a] + db[a];
        }
    }
    Ok(())
}

/// Weighted particle paths of one replication.
#[derive(Debug, Clone)]
pub struct WeightedCloud {
    pub grid: TimeGrid,
    pub n_particles: usize,
    pub dim: usize,
    /// `(n_steps + 1) x N x d`
    pub states: Vec<f64>,
    /// `(n_steps + 1) x N`, `log Z^k_{t_i}`.
    pub log_weights: Vec<f64>,
    /// `n_steps x d`
    pub controls: Vec<f64>,
    /// `(n_steps + 1) x d`, the path of `B`.
    pub observation: Vec<f64>,
}

impl WeightedCloud {
    pub fn states_at(&self, step: usize) -> &[f64] {
        let w = self.n_particles * self.dim;
        &self.states[step * w..(step + 1) * w]
    }

    pub fn log_weights_at(&self, step: usize) -> &[f64] {
        &self.log_weights[step * self.n_particles..(step + 1) * self.n_particles]
    }

    pub fn weights_at(&self, step: usize) -> Vec<f64> {
        self.log_weights_at(step).iter().map(|v| v.exp()).collect()
    }

    pub fn control_at(&self, step: usize) -> &[f64] {
        &self.controls[step * self.dim..(step + 1) * self.dim]
    }

    pub fn max_abs_log_weight(&self) -> f64 {
        self.log_weights.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }

    /// `(1/N) sum_k Z^k_T`
    pub fn mean_terminal_weight(&self) -> f64 {
        let n = self.grid.n_steps();
        self.weights_at(n).iter().sum::<f64>() / self.n_particles as f64
    }
}

/// Simulates the weighted N-particle system on one noise bundle.
pub fn simulate_weighted_particles(
    pspec: &PartialObsSpec,
    policy: &PartialPolicy,
    n: usize,
    grid: &TimeGrid,
    noise: &NoiseBundle,
) -> Result<WeightedCloud> {
    if noise.n_particles != n || noise.grid != *grid {
        return Err(Error::invalid("noise bundle does not match N and the grid"));
    }
    let d = pspec.dim();
    let steps = grid.n_steps();
    let mut states = Vec::with_capacity((steps + 1) * n * d);
    let mut log_weights = Vec::with_capacity((steps + 1) * n);
    let mut controls = Vec::with_capacity(steps * d);
    evolve_weighted(pspec, policy, noise, |v| {
        states.extend_from_slice(v.states);
        log_weights.extend_from_slice(v.log_weights);
        if let Some(a) = v.control {
            controls.extend_from_slice(a);
        }
        Ok(())
    })?;
    let mut observation = vec![0.0; (steps + 1) * d];
    for i in 0..steps {
        for a in 0..d {
            observation[(i + 1) * d + a] = observation[i * d + a] + noise.common_increment(i)[a];
        }
    }
    Ok(WeightedCloud { grid: *grid, n_particles: n, dim: d, states, log_weights, controls, observation })
}

/// `(1/N) sum_k [int Z^k L(X^k, a) dt + Z^k_T g(X^k_T)]` along one
/// replication, left-endpoint quadrature.
pub fn weighted_reward(pspec: &PartialObsSpec, policy: &PartialPolicy, noise: &NoiseBundle) -> Result<f64> {
    weighted_reward_and_mass(pspec, policy, noise).map(|r| r.0)
}

/// The weighted reward together with `(1/N) sum_k Z^k_T`.
fn weighted_reward_and_mass(pspec: &PartialObsSpec, policy: &PartialPolicy, noise: &NoiseBundle) -> Result<(f64, f64)> {
    let d = pspec.dim();
    let grid = noise.grid;
    let n = grid.n_steps();
    let dt = grid.dt();
    let np = noise.n_particles as f64;
    let mut total = 0.0;
    let mut mass = 0.0;
    evolve_weighted(pspec, policy, noise, |v| {
        let terms = v.states.chunks_exact(d).zip(v.log_weights);
        if v.step < n {
            let a = v.control.expect("control before the last node");
            let l0 = pspec.dynamics.l0(v.t, a);
            let s: f64 = terms.map(|(x, lw)| lw.exp() * (l0 + pspec.running.eval(x))).sum();
            total += s / np * dt;
        } else {
            let s: f64 = terms.map(|(x, lw)| lw.exp() * pspec.terminal.eval(x)).sum();
            total += s / np;
            mass = v.log_weights.iter().map(|lw| lw.exp()).sum::<f64>() / np;
        }
        Ok(())
    })?;
    Ok((total, mass))
}

/// Monte Carlo estimate of the N-particle value of `policy` over `m`
/// replications; returns `(mean, standard error)`.
pub fn estimate_partial_value(
    pspec: &PartialObsSpec,
    policy: &PartialPolicy,
    n: usize,
    m: usize,
    grid: &TimeGrid,
    seed: u64,
) -> Result<(f64, f64)> {
    if n == 0 || m == 0 {
        return Err(Error::invalid("N and M must be positive"));
    }
    let values = replicate(m, |j| {
        let noise = NoiseBundle::generate(NoiseKey::new(seed, j), &pspec.dynamics.initial, n, pspec.dim(), *grid);
        weighted_reward(pspec, policy, &noise)
    })?;
    Ok(mean_stderr(&values))
}

/// Same estimator with the mean-zero control variate `(1/N) sum_k Z^k_T - 1`
/// and an in-sample optimal coefficient. Returns `(mean, standard error)`.
pub fn estimate_partial_value_cv(
    pspec: &PartialObsSpec,
    policy: &PartialPolicy,
    n: usize,
    m: usize,
    grid: &TimeGrid,
    seed: u64,
) -> Result<(f64, f64)> {
    if n == 0 || m < 2 {
        return Err(Error::invalid("N must be positive and M at least 2"));
    }
    let pairs = replicate(m, |j| {
        let noise = NoiseBundle::generate(NoiseKey::new(seed, j), &pspec.dynamics.initial, n, pspec.dim(), *grid);
        weighted_reward_and_mass(pspec, policy, &noise)
    })?;
    let mf = m as f64;
    let (r_mean, z_mean) = pairs.iter().fold((0.0, 0.0), |(a, b), p| (a + p.0 / mf, b + p.1 / mf));
    let (mut cov, mut var) = (0.0, 0.0);
    for (r, z) in &pairs {
        cov += (r - r_mean) * (z - z_mean);
        var += (z - z_mean).powi(2);
    }
    let coef = if var > 0.0 { cov / var } else { 0.0 };
    let adjusted: Vec<f64> = pairs.iter().map(|(r, z)| r - coef * (z - 1.0)).collect();
    Ok(mean_stderr(&adjusted))
}

/// Parameter grid of `a = -gain (weighted mean - target)`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeedbackGrid {
    pub gains: Vec<f64>,
    pub targets: Vec<f64>,
}

impl FeedbackGrid {
    /// `gains = lo, lo + step, ..., <= hi` with a single target.
    pub fn gains(lo: f64, hi: f64, step: f64, target: f64) -> Self {
        let count = ((hi - lo) / step + 1e-9).floor() as usize + 1;
        FeedbackGrid { gains: (0..count).map(|i| lo + step * i as f64).collect(), targets: vec![target] }
    }

    /// `(gain, target)` pairs.
    pub fn points(&self) -> Vec<[f64; 2]> {
        self.gains.iter().flat_map(|&g| self.targets.iter().map(move |&t| [g, t])).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolicyEvaluation {
    pub gain: f64,
    pub target: f64,
    pub value: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PolicySearch {
    pub best: PolicyEvaluation,
    /// In grid order.
    pub evaluations: Vec<PolicyEvaluation>,
}

impl PolicySearch {
    pub fn policy(&self) -> PartialPolicy {
        PartialPolicy::WeightedMeanFeedback { gain: self.best.gain, target: self.best.target }
    }
}

/// Grid search over weighted-mean feedback with common random numbers. Ties
/// go to the smaller parameter norm.
pub fn optimize_parametric_policy(
    pspec: &PartialObsSpec,
    family: &FeedbackGrid,
    n: usize,
    m: usize,
    grid: &TimeGrid,
    seed: u64,
) -> Result<PolicySearch> {
    let points = family.points();
    if points.is_empty() {
        return Err(Error::invalid("empty parameter grid"));
    }
    let evaluations: Vec<PolicyEvaluation> = points
        .par_iter()
        .map(|&[gain, target]| -> Result<PolicyEvaluation> {
            let policy = PartialPolicy::WeightedMeanFeedback { gain, target };
            let (value, stderr) = estimate_partial_value(pspec, &policy, n, m, grid, seed)?;
            Ok(PolicyEvaluation { gain, target, value, stderr })
        })
        .collect::<Result<_>>()?;
    let mut order: Vec<usize> = (0..evaluations.len()).collect();
    let norm = |e: &PolicyEvaluation| e.gain.hypot(e.target);
    order.sort_by(|&a, &b| norm(&evaluations[a]).total_cmp(&norm(&evaluations[b])));
    let mut best = order[0];
    for &i in &order[1..] {
        if evaluations[i].value > evaluations[best].value {
            best = i;
        }
    }
    Ok(PolicySearch { best: evaluations[best].clone(), evaluations })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::particle::{estimate_reward, simulate_controlled_system, Policy};

    fn lqg() -> PartialObsSpec {
        PartialObsSpec::from_params(&ModelParams::preset("partial-obs-lqg").unwrap()).unwrap()
    }

    #[test]
    fn zero_observation_matches_full_observation() {
        let pspec = lqg().with_observation(Observation::Zero);
        let grid = TimeGrid::new(1.0, 20).unwrap();
        let noise = NoiseBundle::generate(NoiseKey::new(5, 0), &pspec.dynamics.initial, 32, 1, grid);
        let cloud =
            simulate_weighted_particles(&pspec, &PartialPolicy::WeightedMeanFeedback { gain: 1.0, target: 0.0 }, 32, &grid, &noise)
                .unwrap();
        let full = pspec.full_observation_spec();
        let policy = Policy::EmpiricalFeedback(Arc::new(|_, s, out| out[0] = -s.mean[0]));
        let traj = simulate_controlled_system(&full, &policy, 32, &grid, &noise).unwrap();
        assert_eq!(cloud.states, traj.states);
        assert!(cloud.log_weights.iter().all(|v| *v == 0.0));
        let partial = weighted_reward(&pspec, &PartialPolicy::WeightedMeanFeedback { gain: 1.0, target: 0.0 }, &noise).unwrap();
        assert!((partial - estimate_reward(&full, &traj)).abs() < 1e-12);
    }

    #[test]
    fn constant_observation_weight_is_closed_form() {
        let c = 0.7;
        let pspec = lqg().with_observation(Observation::Constant(c));
        let grid = TimeGrid::new(1.0, 25).unwrap();
        let noise = NoiseBundle::generate(NoiseKey::new(9, 3), &pspec.dynamics.initial, 4, 1, grid);
        let cloud = simulate_weighted_particles(&pspec, &PartialPolicy::Constant(vec![0.0]), 4, &grid, &noise).unwrap();
        let b_t = cloud.observation[25];
        for lw in cloud.log_weights_at(25) {
            assert!((lw - (c * b_t - 0.5 * c * c)).abs() < 1e-12);
        }
    }

    #[test]
    fn unit_terminal_reward_estimates_mean_weight() {
        let mut pspec = lqg();
        pspec.running = PointReward::Zero;
        pspec.terminal = PointReward::Constant(1.0);
        pspec.dynamics.control_cost = ControlCost::Quadratic { weight: 0.0 };
        let grid = TimeGrid::new(1.0, 20).unwrap();
        let (v, se) = estimate_partial_value(&pspec, &PartialPolicy::Constant(vec![0.0]), 20, 5000, &grid, 1).unwrap();
        assert!((v - 1.0).abs() < 3.0 * se + 1e-3, "{v} {se}");
    }

    #[test]
    fn zero_family_returns_zero_policy() {
        let pspec = lqg();
        let grid = TimeGrid::new(1.0, 10).unwrap();
        let family = FeedbackGrid { gains: vec![0.0], targets: vec![0.0] };
        let search = optimize_parametric_policy(&pspec, &family, 8, 200, &grid, 4).unwrap();
        let (v, _) = estimate_partial_value(&pspec, &PartialPolicy::Constant(vec![0.0]), 8, 200, &grid, 4).unwrap();
        assert_eq!(search.best.gain, 0.0);
        assert_eq!(search.best.value, v);
    }

    #[test]
    fn regularity_of_the_preset() {
        lqg().check_regularity(500, 10.0, 10.0, 2).unwrap();
    }
}
