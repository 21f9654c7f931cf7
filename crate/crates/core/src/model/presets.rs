//! Named model presets with numeric overrides.

use serde::Serialize;

use crate::error::{Error, Result};

use super::{
    CoefficientSpec, ControlCost, ControlDrift, ControlSet, Cylindrical, Drift0, InitialLaw, LqParams, SpecFlags,
    Volatility, DEFAULT_GRID_POINTS,
};

pub const PRESET_NAMES: [&str; 3] = ["lq", "tanh-drift", "partial-obs-lqg"];

/// Interaction profile `k` in `b0 = -kappa k(x - mean)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Kernel {
    Linear,
    Tanh,
}

impl Kernel {
    pub fn apply(self, u: f64) -> f64 {
        match self {
            Kernel::Linear => u,
            Kernel::Tanh => u.tanh(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Kernel::Linear => "linear",
            Kernel::Tanh => "tanh",
        }
    }
}

/// Flat parameter set behind every preset.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelParams {
    pub preset: String,
    pub sigma: f64,
    pub sigma0: f64,
    pub a_max: f64,
    pub c: f64,
    pub gamma: f64,
    pub theta: f64,
    pub m0: f64,
    pub v0: f64,
    pub horizon: f64,
    pub kappa: f64,
    pub kernel: Kernel,
    /// Radius of the truncated quadratic penalty.
    pub radius: f64,
    /// Linear drift coefficient of the partially observed model.
    pub beta: f64,
    /// Observation slope `h(x) = eta x` of the partially observed model.
    pub eta: f64,
}

impl ModelParams {
    /// Defaults of a named preset.
    ///
    /// The LQ presets use `c = 2 gamma^2`, for which the Riccati solution is
    /// constant in time.
    pub fn preset(name: &str) -> Result<Self> {
        let base = ModelParams {
            preset: name.to_string(),
            sigma: 1.5,
            sigma0: 0.5,
            a_max: 5.0,
            c: 0.5,
            gamma: 0.5,
            theta: 0.0,
            m0: 1.0,
            v0: 0.25,
            horizon: 1.0,
            kappa: 0.0,
            kernel: Kernel::Linear,
            radius: 20.0,
            beta: 0.0,
            eta: 1.0,
        };
        match name {
            "lq" => Ok(base),
            "tanh-drift" => Ok(ModelParams { kappa: 0.5, kernel: Kernel::Tanh, ..base }),
            "partial-obs-lqg" => Ok(ModelParams { sigma: 0.5, sigma0: 0.5, m0: 1.0, v0: 0.25, ..base }),
            other => Err(Error::UnknownPreset(other.to_string())),
        }
    }

    /// Applies `key = value`. Numeric keys accept any float literal.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        if key == "kernel" {
            self.kernel = match value {
                "linear" => Kernel::Linear,
                "tanh" => Kernel::Tanh,
                other => return Err(Error::Config(format!("unknown kernel `{other}`"))),
            };
            return Ok(());
        }
        let v: f64 = value
            .parse()
            .map_err(|_| Error::Config(format!("model.{key}: `{value}` is not a number")))?;
        let slot = match key {
            "sigma" => &mut self.sigma,
            "sigma0" => &mut self.sigma0,
            "a_max" => &mut self.a_max,
            "c" => &mut self.c,
            "gamma" => &mut self.gamma,
            "theta" => &mut self.theta,
            "m0" => &mut self.m0,
            "v0" => &mut self.v0,
            "horizon" => &mut self.horizon,
            "kappa" => &mut self.kappa,
            "radius" => &mut self.radius,
            "beta" => &mut self.beta,
            "eta" => &mut self.eta,
            other => return Err(Error::Config(format!("unknown model parameter `{other}`"))),
        };
        *slot = v;
        Ok(())
    }

    pub fn lq(&self) -> LqParams {
        LqParams {
            sigma: self.sigma,
            sigma0: self.sigma0,
            a_max: self.a_max,
            c: self.c,
            gamma: self.gamma,
            theta: self.theta,
            m0: self.m0,
            v0: self.v0,
            horizon: self.horizon,
        }
    }

    /// Coefficients of the fully observed model.
    ///
    /// The control enters as `b1 = a / sigma0`, so the full drift is
    /// `b0 + a`.
    pub fn spec(&self) -> Result<CoefficientSpec> {
        if !(self.sigma0 > 0.0) {
            return Err(Error::SingularSigma0 { condition: f64::INFINITY });
        }
        let drift0 = if self.kappa == 0.0 {
            Drift0::Zero
        } else {
            Drift0::MeanReversion { kappa: self.kappa, kernel: self.kernel }
        };
        Ok(CoefficientSpec {
            dim: 1,
            horizon: self.horizon,
            control: ControlSet::symmetric(1, self.a_max),
            drift0,
            sigma: Volatility::Constant(vec![self.sigma]),
            sigma0: vec![self.sigma0],
            control_drift: ControlDrift::Linear { scale: 1.0 / self.sigma0 },
            b1_bound: self.a_max / self.sigma0,
            control_cost: ControlCost::Quadratic { weight: 1.0 },
            state_reward: Some(Cylindrical::mean_penalty(0, self.c, self.theta, self.radius)),
            terminal_reward: Some(Cylindrical::mean_penalty(0, self.gamma, self.theta, self.radius)),
            initial: InitialLaw::gaussian_1d(self.m0, self.v0),
            full_drift: None,
            flags: SpecFlags { markovian: true, constant_vol: self.kappa == 0.0, drift_controlled: true },
            grid_points: DEFAULT_GRID_POINTS,
        })
    }
}
