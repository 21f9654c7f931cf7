//! Problem definitions: coefficients with the drift-controlled split
//! `b = b0 + sigma0 b1`, reward structure, the Hamiltonian, assumption
//! checks and the linear-quadratic Riccati oracle.

mod hamiltonian;
mod presets;
mod reward;
mod riccati;
mod validate;

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::measure::{psd_factor, EmpiricalMeasure, MeasureSummary};

pub use hamiltonian::{HamiltonianValue, DEFAULT_GRID_POINTS};
pub use presets::{Kernel, ModelParams, PRESET_NAMES};
pub use reward::{truncated_square, Cylindrical, Observable, Outer, ScalarFn};
pub use riccati::{lq_value_oracle, LqParams, RiccatiSolution, MIN_RICCATI_STEPS};
pub use validate::{validate_spec, ValidationReport};

/// `b0(t, x, mu) -> out`
pub type DriftFn = Arc<dyn Fn(f64, &[f64], &MeasureSummary, &mut [f64]) + Send + Sync>;
/// `sigma(t, x, mu) -> out` (row-major `d x d`)
pub type VolFn = Arc<dyn Fn(f64, &[f64], &MeasureSummary, &mut [f64]) + Send + Sync>;
/// `b1(t, mu, a) -> out`
pub type ControlDriftFn = Arc<dyn Fn(f64, &MeasureSummary, &[f64], &mut [f64]) + Send + Sync>;
/// `L0(t, a)`
pub type ControlCostFn = Arc<dyn Fn(f64, &[f64]) -> f64 + Send + Sync>;
/// Full controlled drift `b(t, x, mu, a) -> out`, when declared separately.
pub type FullDriftFn = Arc<dyn Fn(f64, &[f64], &MeasureSummary, &[f64], &mut [f64]) + Send + Sync>;

/// Box `[lo, hi]` with a reference point.
#[derive(Debug, Clone, PartialEq)]
pub struct ControlSet {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
    pub reference: Vec<f64>,
}

impl ControlSet {
    /// `[-a_max, a_max]^d` with reference point 0.
    pub fn symmetric(dim: usize, a_max: f64) -> Self {
        ControlSet { lo: vec![-a_max; dim], hi: vec![a_max; dim], reference: vec![0.0; dim] }
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, a: &[f64]) -> bool {
        a.len() == self.dim() && a.iter().zip(self.lo.iter().zip(&self.hi)).all(|(x, (l, h))| *x >= *l && *x <= *h)
    }

    pub fn clamp(&self, a: &mut [f64]) {
        for (x, (l, h)) in a.iter_mut().zip(self.lo.iter().zip(&self.hi)) {
            *x = if x.is_nan() { 0.0f64.clamp(*l, *h) } else { x.clamp(*l, *h) };
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.lo.iter().chain(&self.hi).fold(0.0f64, |m, x| m.max(x.abs()))
    }

    /// Uniform draw from the box.
    pub fn sample(&self, rng: &mut ChaCha8Rng) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(l, h)| if h > l { rng.random_range(*l..=*h) } else { *l }).collect()
    }
}

/// Interaction profile used by the built-in mean-reversion drift.
#[derive(Clone)]
pub enum Drift0 {
    Zero,
    /// `-kappa * k(x - mean(mu))` coordinatewise.
    MeanReversion { kappa: f64, kernel: Kernel },
    Custom(DriftFn),
}

#[derive(Clone)]
pub enum Volatility {
    /// Row-major `d x d` matrix.
    Constant(Vec<f64>),
    Custom(VolFn),
}

/// `b1`, the part of the drift that carries the control.
#[derive(Clone)]
pub enum ControlDrift {
    /// `scale * a`
    Linear { scale: f64 },
    Custom(ControlDriftFn),
}

/// `L0`, the control part of the running reward.
#[derive(Clone)]
pub enum ControlCost {
    /// `-weight/2 |a|^2`
    Quadratic { weight: f64 },
    Custom(ControlCostFn),
}

/// Initial law `nu0` of every particle.
#[derive(Debug, Clone)]
pub enum InitialLaw {
    /// Independent Gaussian with mean and row-major covariance.
    Gaussian { mean: Vec<f64>, covariance: Vec<f64> },
    /// Draw atoms of the given measure according to its weights.
    Empirical(EmpiricalMeasure),
    Dirac(Vec<f64>),
}

impl InitialLaw {
    pub fn gaussian_1d(mean: f64, variance: f64) -> Self {
        InitialLaw::Gaussian { mean: vec![mean], covariance: vec![variance] }
    }

    pub fn mean(&self) -> Vec<f64> {
        match self {
            InitialLaw::Gaussian { mean, .. } => mean.clone(),
            InitialLaw::Empirical(m) => m.mean(),
            InitialLaw::Dirac(x) => x.clone(),
        }
    }

    /// Draws one sample using `rng`.
    pub fn sample(&self, rng: &mut ChaCha8Rng, out: &mut [f64]) {
        match self {
            InitialLaw::Gaussian { mean, covariance } => {
                let d = mean.len();
                let factor = psd_factor(covariance, d).expect("initial covariance checked at validation");
                let z: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
                for a in 0..d {
                    out[a] = mean[a] + (0..d).map(|b| factor[a * d + b] * z[b]).sum::<f64>();
                }
            }
            InitialLaw::Empirical(m) => {
                let u: f64 = rng.random();
                let mut acc = 0.0;
                let mut pick = m.len() - 1;
                for (i, w) in m.weights().iter().enumerate() {
                    acc += w;
                    if u < acc {
                        pick = i;
                        break;
                    }
                }
                out.copy_from_slice(m.point(pick));
            }
            InitialLaw::Dirac(x) => out.copy_from_slice(x),
        }
    }
}

/// Declared structural flags.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SpecFlags {
    pub markovian: bool,
    pub constant_vol: bool,
    pub drift_controlled: bool,
}

/// Structured coefficients `(b0, sigma, sigma0, b1, L0, F, g, A)`.
///
/// The controlled drift is `b = b0 + sigma0 b1` and the running reward is
/// `L(t, mu, a) = L0(t, a) + F(mu)`. A measure argument reaches `b0`, `sigma`
/// and `b1` only through its [`MeasureSummary`].
#[derive(Clone)]
pub struct CoefficientSpec {
    pub dim: usize,
    pub horizon: f64,
    pub control: ControlSet,
    pub drift0: Drift0,
    pub sigma: Volatility,
    /// Row-major `d x d`.
    pub sigma0: Vec<f64>,
    pub control_drift: ControlDrift,
    /// Declared bound on `|b1|`.
    pub b1_bound: f64,
    pub control_cost: ControlCost,
    /// `F`; `None` means zero.
    pub state_reward: Option<Cylindrical>,
    /// `g`; `None` means zero.
    pub terminal_reward: Option<Cylindrical>,
    pub initial: InitialLaw,
    /// Independently declared full drift, checked against `b0 + sigma0 b1`.
    pub full_drift: Option<FullDriftFn>,
    pub flags: SpecFlags,
    /// Points per axis for the Hamiltonian grid search.
    pub grid_points: usize,
}

impl fmt::Debug for CoefficientSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CoefficientSpec")
            .field("dim", &self.dim)
            .field("horizon", &self.horizon)
            .field("control", &self.control)
            .field("sigma0", &self.sigma0)
            .field("state_reward", &self.state_reward)
            .field("terminal_reward", &self.terminal_reward)
            .field("initial", &self.initial)
            .field("flags", &self.flags)
            .finish_non_exhaustive()
    }
}

impl CoefficientSpec {
    /// A one-dimensional spec with zero coefficients and rewards, `A = [-a_max, a_max]`,
    /// `b1 = a`, `L0 = -a^2/2`, `sigma = sigma0 = 0` and `nu0 = delta_0`. Meant as a
    /// starting point for struct update syntax.
    pub fn zero_1d(a_max: f64) -> Self {
        CoefficientSpec {
            dim: 1,
            horizon: 1.0,
            control: ControlSet::symmetric(1, a_max),
            drift0: Drift0::Zero,
            sigma: Volatility::Constant(vec![0.0]),
            sigma0: vec![0.0],
            control_drift: ControlDrift::Linear { scale: 1.0 },
            b1_bound: 100.0,
            control_cost: ControlCost::Quadratic { weight: 1.0 },
            state_reward: None,
            terminal_reward: None,
            initial: InitialLaw::Dirac(vec![0.0]),
            full_drift: None,
            flags: SpecFlags { markovian: true, constant_vol: false, drift_controlled: false },
            grid_points: DEFAULT_GRID_POINTS,
        }
    }

    pub fn b0(&self, t: f64, x: &[f64], mu: &MeasureSummary, out: &mut [f64]) {
        match &self.drift0 {
            Drift0::Zero => out.iter_mut().for_each(|v| *v = 0.0),
            Drift0::MeanReversion { kappa, kernel } => {
                for a in 0..self.dim {
                    out[a] = -kappa * kernel.apply(x[a] - mu.mean[a]);
                }
            }
            Drift0::Custom(f) => f(t, x, mu, out),
        }
    }

    /// Whether `b0` or `sigma` read the measure argument.
    pub fn has_interaction(&self) -> bool {
        let drift = match &self.drift0 {
            Drift0::Zero => false,
            Drift0::MeanReversion { kappa, .. } => *kappa != 0.0,
            Drift0::Custom(_) => true,
        };
        drift || matches!(self.sigma, Volatility::Custom(_))
    }

    pub fn sigma_at(&self, t: f64, x: &[f64], mu: &MeasureSummary, out: &mut [f64]) {
        match &self.sigma {
            Volatility::Constant(m) => out.copy_from_slice(m),
            Volatility::Custom(f) => f(t, x, mu, out),
        }
    }

    pub fn constant_sigma(&self) -> Option<&[f64]> {
        match &self.sigma {
            Volatility::Constant(m) => Some(m),
            Volatility::Custom(_) => None,
        }
    }

    pub fn b1(&self, t: f64, mu: &MeasureSummary, a: &[f64], out: &mut [f64]) {
        match &self.control_drift {
            ControlDrift::Linear { scale } => {
                for (o, x) in out.iter_mut().zip(a) {
                    *o = scale * x;
                }
            }
            ControlDrift::Custom(f) => f(t, mu, a, out),
        }
    }

    /// Full drift `b0 + sigma0 b1`.
    pub fn drift(&self, t: f64, x: &[f64], mu: &MeasureSummary, a: &[f64], out: &mut [f64]) {
        let d = self.dim;
        self.b0(t, x, mu, out);
        let mut b1 = vec![0.0; d];
        self.b1(t, mu, a, &mut b1);
        for i in 0..d {
            out[i] += (0..d).map(|j| self.sigma0[i * d + j] * b1[j]).sum::<f64>();
        }
    }

    pub fn l0(&self, t: f64, a: &[f64]) -> f64 {
        match &self.control_cost {
            ControlCost::Quadratic { weight } => -0.5 * weight * a.iter().map(|x| x * x).sum::<f64>(),
            ControlCost::Custom(f) => f(t, a),
        }
    }

    pub fn state_reward_at(&self, mu: &EmpiricalMeasure) -> f64 {
        self.state_reward.as_ref().map_or(0.0, |f| f.eval(mu))
    }

    pub fn state_reward_points(&self, points: &[f64]) -> f64 {
        self.state_reward.as_ref().map_or(0.0, |f| f.eval_points(self.dim, points))
    }

    pub fn terminal_reward_points(&self, points: &[f64]) -> f64 {
        self.terminal_reward.as_ref().map_or(0.0, |g| g.eval_points(self.dim, points))
    }

    /// `L(t, mu, a)`; fails when `a` is outside `A`.
    pub fn eval_running_reward(&self, t: f64, mu: &EmpiricalMeasure, a: &[f64]) -> Result<f64> {
        if !self.control.contains(a) {
            return Err(Error::OutsideControlSet(a.to_vec()));
        }
        Ok(self.l0(t, a) + self.state_reward_at(mu))
    }

    /// `g(mu)`.
    pub fn eval_terminal_reward(&self, mu: &EmpiricalMeasure) -> f64 {
        self.terminal_reward.as_ref().map_or(0.0, |g| g.eval(mu))
    }

    /// `true` when `b1 = s a` and `L0 = -w/2 |a|^2`, so the Hamiltonian has
    /// a closed form.
    pub fn quadratic_control(&self) -> Option<(f64, f64)> {
        match (&self.control_drift, &self.control_cost) {
            (ControlDrift::Linear { scale }, ControlCost::Quadratic { weight }) if *weight > 0.0 => {
                Some((*scale, *weight))
            }
            _ => None,
        }
    }

    /// Whether the rewards read the measure beyond a constant.
    pub fn rewards_depend_on_measure(&self) -> bool {
        self.state_reward.as_ref().is_some_and(|f| f.depends_on_measure())
            || self.terminal_reward.as_ref().is_some_and(|g| g.depends_on_measure())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reward_examples() {
        let spec = CoefficientSpec::zero_1d(1.0);
        let mu = EmpiricalMeasure::dirac(&[0.3]);
        assert_eq!(spec.eval_running_reward(0.0, &mu, &[0.0]).unwrap(), 0.0);
        assert!(matches!(spec.eval_running_reward(0.0, &mu, &[2.0]), Err(Error::OutsideControlSet(_))));

        let theta = 0.7;
        let spec = CoefficientSpec {
            terminal_reward: Some(Cylindrical::mean_penalty(0, 1.0, theta, 1e3)),
            ..CoefficientSpec::zero_1d(1.0)
        };
        assert_eq!(spec.eval_terminal_reward(&EmpiricalMeasure::dirac(&[theta])), 0.0);

        let spec = CoefficientSpec {
            terminal_reward: Some(Cylindrical::linear(Observable::Power { axis: 0, exponent: 2 })),
            ..CoefficientSpec::zero_1d(1.0)
        };
        let mu = EmpiricalMeasure::uniform(1, vec![1.0, 2.0, 3.0]).unwrap();
        assert!((spec.eval_terminal_reward(&mu) - 14.0 / 3.0).abs() < 1e-14);
    }
}
