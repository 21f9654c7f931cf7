//! Linear-Gaussian benchmark: Kalman filter plus certainty-equivalent
//! control on the filtered mean.

use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::particle::TimeGrid;

use super::{PartialObsSpec, PartialPolicy};

const RICCATI_STEPS: usize = 20_000;
const TOLERANCE: f64 = 1e-10;

/// `dX = (beta X + a) dt + sigma dW + sigma0 dB^a`, observation drift
/// `eta X`, `L = -a^2/2 - c (x - theta)^2`, `g = -gamma (x - theta)^2`,
/// `X_0 ~ N(m0, v0)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LqgParams {
    pub beta: f64,
    pub sigma: f64,
    pub sigma0: f64,
    pub eta: f64,
    pub c: f64,
    pub gamma: f64,
    pub theta: f64,
    pub m0: f64,
    pub v0: f64,
    pub horizon: f64,
}

impl LqgParams {
    pub fn from_model(p: &ModelParams) -> Self {
        LqgParams {
            beta: p.beta,
            sigma: p.sigma,
            sigma0: p.sigma0,
            eta: p.eta,
            c: p.c,
            gamma: p.gamma,
            theta: p.theta,
            m0: p.m0,
            v0: p.v0,
            horizon: p.horizon,
        }
    }

    fn filter_rhs(&self, s: f64) -> f64 {
        let k = s * self.eta + self.sigma0;
        2.0 * self.beta * s + self.sigma * self.sigma + self.sigma0 * self.sigma0 - k * k
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LqgOracle {
    pub params: LqgParams,
    /// `V_P = -P(0)(m0 - theta)^2 - int k^2 P dt - c int Sigma dt - gamma Sigma_T`
    pub value: f64,
    /// Uniform grid of the control Riccati solution.
    pub riccati_times: Vec<f64>,
    pub riccati: Vec<f64>,
    /// Accepted steps of the filter Riccati solution.
    pub filter_times: Vec<f64>,
    pub filter_variance: Vec<f64>,
    pub integrated_variance: f64,
    pub gain_cost: f64,
}

fn interp(times: &[f64], values: &[f64], t: f64) -> f64 {
    let j = times.partition_point(|&s| s <= t);
    if j == 0 {
        return values[0];
    }
    if j >= times.len() {
        return values[values.len() - 1];
    }
    let (t0, t1) = (times[j - 1], times[j]);
    let w = (t - t0) / (t1 - t0);
    values[j - 1] * (1.0 - w) + values[j] * w
}

fn rk4<const K: usize>(f: &impl Fn(f64, &[f64; K]) -> [f64; K], t: f64, y: &[f64; K], h: f64) -> [f64; K] {
    let add = |y: &[f64; K], k: &[f64; K], s: f64| -> [f64; K] { std::array::from_fn(|i| y[i] + s * k[i]) };
    let k1 = f(t, y);
    let k2 = f(t + 0.5 * h, &add(y, &k1, 0.5 * h));
    let k3 = f(t + 0.5 * h, &add(y, &k2, 0.5 * h));
    let k4 = f(t + h, &add(y, &k3, h));
    std::array::from_fn(|i| y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
}

/// RK4 with step doubling on `[t0, t1]`; returns the accepted nodes.
fn adaptive_rk4<const K: usize>(
    f: impl Fn(f64, &[f64; K]) -> [f64; K],
    t0: f64,
    t1: f64,
    y0: [f64; K],
) -> Result<Vec<(f64, [f64; K])>> {
    let mut out = vec![(t0, y0)];
    let mut t = t0;
    let mut y = y0;
    let mut h = (t1 - t0) * 1e-4;
    let h_min = (t1 - t0) * 1e-14;
    while t < t1 {
        h = h.min(t1 - t);
        let full = rk4(&f, t, &y, h);
        let half = rk4(&f, t, &y, 0.5 * h);
        let two = rk4(&f, t + 0.5 * h, &half, 0.5 * h);
        let err = (0..K).map(|i| (two[i] - full[i]).abs() / (1.0 + two[i].abs())).fold(0.0f64, f64::max) / 15.0;
        if !err.is_finite() {
            if h <= h_min {
                return Err(Error::NonFinite("LQG Riccati"));
            }
            h *= 0.25;
            continue;
        }
        if err <= TOLERANCE || h <= h_min {
            t += h;
            y = std::array::from_fn(|i| two[i] + (two[i] - full[i]) / 15.0);
            out.push((t, y));
        }
        let factor = if err == 0.0 { 4.0 } else { (0.9 * (TOLERANCE / err).powf(0.2)).clamp(0.2, 4.0) };
        h *= factor;
    }
    Ok(out)
}

/// Value and optimal feedback of the linear-Gaussian instance `pspec.lqg`.
pub fn lqg_oracle(pspec: &PartialObsSpec) -> Result<LqgOracle> {
    let p = pspec.lqg.ok_or_else(|| Error::Unsupported("lqg_oracle needs a linear-Gaussian instance".into()))?;
    let vals = [p.beta, p.sigma, p.sigma0, p.eta, p.c, p.gamma, p.theta, p.m0, p.v0, p.horizon];
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("LQG parameters"));
    }
    if p.horizon <= 0.0 || p.v0 < 0.0 || p.c < 0.0 || p.gamma < 0.0 {
        return Err(Error::invalid("LQG needs T > 0, v0 >= 0 and nonnegative costs"));
    }
    if p.beta != 0.0 && p.theta != 0.0 {
        return Err(Error::Unsupported("LQG target theta != 0 needs beta = 0".into()));
    }
    let t_end = p.horizon;

    // P' = 2P^2 - 2 beta P - c backward from P(T) = gamma.
    let h = t_end / RICCATI_STEPS as f64;
    let mut riccati = vec![0.0; RICCATI_STEPS + 1];
    riccati[RICCATI_STEPS] = p.gamma;
    let back = |_: f64, y: &[f64; 1]| [-(2.0 * y[0] * y[0] - 2.0 * p.beta * y[0] - p.c)];
    for i in (0..RICCATI_STEPS).rev() {
        riccati[i] = rk4(&back, 0.0, &[riccati[i + 1]], h)[0];
    }
    if riccati.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("LQG control Riccati"));
    }
    let riccati_times: Vec<f64> = (0..=RICCATI_STEPS).map(|i| i as f64 * h).collect();

    let forward = |t: f64, y: &[f64; 3]| {
        let s = y[0];
        let k = s * p.eta + p.sigma0;
        [p.filter_rhs(s), s, k * k * interp(&riccati_times, &riccati, t)]
    };
    let nodes = adaptive_rk4(forward, 0.0, t_end, [p.v0, 0.0, 0.0])?;
    let last = nodes.last().expect("at least one node").1;
    let (sigma_t, integrated_variance, gain_cost) = (last[0], last[1], last[2]);
    let value = -riccati[0] * (p.m0 - p.theta).powi(2) - gain_cost - p.c * integrated_variance - p.gamma * sigma_t;
    Ok(LqgOracle {
        params: p,
        value,
        riccati_times,
        riccati,
        filter_times: nodes.iter().map(|n| n.0).collect(),
        filter_variance: nodes.iter().map(|n| n.1[0]).collect(),
        integrated_variance,
        gain_cost,
    })
}

impl LqgOracle {
    pub fn p_at(&self, t: f64) -> f64 {
        interp(&self.riccati_times, &self.riccati, t)
    }

    pub fn filter_variance_at(&self, t: f64) -> f64 {
        interp(&self.filter_times, &self.filter_variance, t)
    }

    /// Optimal feedback `a = -gain(t) (filtered mean - theta)`.
    pub fn gain_at(&self, t: f64) -> f64 {
        2.0 * self.p_at(t)
    }

    /// Certainty equivalence on the weighted particle mean, with the gain
    /// frozen at `t = 0`.
    pub fn weighted_mean_policy(&self) -> PartialPolicy {
        PartialPolicy::WeightedMeanFeedback { gain: self.gain_at(0.0), target: self.params.theta }
    }

    /// The optimal policy: the Kalman mean rebuilt from the observation path
    /// by an Euler scheme on `grid`, fed back with the time-dependent gain.
    pub fn kalman_policy(self: &Arc<Self>, grid: TimeGrid, a_max: f64) -> PartialPolicy {
        let oracle = Arc::clone(self);
        PartialPolicy::ObservationFeedback(Arc::new(move |step, _, path, out| {
            let p = &oracle.params;
            let dt = grid.dt();
            let mut m = p.m0;
            let mut a = 0.0;
            for i in 0..=step {
                let t = grid.time(i);
                a = (-oracle.gain_at(t) * (m - p.theta)).clamp(-a_max, a_max);
                if i == step {
                    break;
                }
                let k = oracle.filter_variance_at(t) * p.eta + p.sigma0;
                let db = path[i + 1] - path[i];
                m += (p.beta * m + a) * dt + k * (db - p.eta * m * dt);
            }
            out[0] = a;
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::lq_value_oracle;
    use crate::partialobs::Observation;

    fn preset() -> ModelParams {
        ModelParams::preset("partial-obs-lqg").unwrap()
    }

    #[test]
    fn stationary_preset_gain_is_one() {
        let pspec = PartialObsSpec::from_params(&preset()).unwrap();
        let o = lqg_oracle(&pspec).unwrap();
        assert!((o.gain_at(0.0) - 1.0).abs() < 1e-12);
        assert!((o.gain_at(0.7) - 1.0).abs() < 1e-12);
        let s_inf = 0.5f64.sqrt() - 0.5;
        assert!(o.filter_variance_at(1.0) < 0.25 && o.filter_variance_at(1.0) > s_inf);
    }

    #[test]
    fn strong_observation_recovers_full_information() {
        let mut params = preset();
        params.eta = 1e3;
        let o = lqg_oracle(&PartialObsSpec::from_params(&params).unwrap()).unwrap();
        assert!(o.filter_variance_at(1.0) < 1e-3);
        // Fully observed state with individual cost: -P (m0^2 + v0) - (sigma^2 + sigma0^2) int P.
        let p = 0.5;
        let full = -p * (params.m0.powi(2) + params.v0) - (params.sigma.powi(2) + params.sigma0.powi(2)) * p;
        assert!((o.value - full).abs() < 0.01 * full.abs(), "{} {full}", o.value);
    }

    #[test]
    fn blind_observation_matches_open_loop_prior() {
        let params = preset();
        let pspec = PartialObsSpec::from_params(&params).unwrap().with_observation(Observation::Zero);
        let o = lqg_oracle(&pspec).unwrap();
        let (s2, v0) = (params.sigma.powi(2), params.v0);
        assert!((o.filter_variance_at(0.6) - (v0 + s2 * 0.6)).abs() < 1e-8);
        let p = 0.5;
        let expected = -p * params.m0.powi(2) - params.sigma0.powi(2) * p - params.c * (v0 + 0.5 * s2) - params.gamma * (v0 + s2);
        assert!((o.value - expected).abs() < 1e-8, "{} {expected}", o.value);
    }

    #[test]
    fn zero_costs_give_zero_value() {
        let mut params = preset();
        params.c = 0.0;
        params.gamma = 0.0;
        let o = lqg_oracle(&PartialObsSpec::from_params(&params).unwrap()).unwrap();
        assert_eq!(o.value, 0.0);
    }

    #[test]
    fn rejects_non_gaussian_instances() {
        let mut pspec = PartialObsSpec::from_params(&preset()).unwrap();
        pspec.lqg = None;
        assert!(matches!(lqg_oracle(&pspec), Err(Error::Unsupported(_))));
    }

    #[test]
    fn riccati_matches_fully_observed_solver() {
        let mut params = preset();
        params.c = 1.0;
        params.gamma = 0.1;
        let o = lqg_oracle(&PartialObsSpec::from_params(&params).unwrap()).unwrap();
        let lq = params.lq();
        let v = lq_value_oracle(&lq, 0.0, 1.0).unwrap();
        let v0 = lq_value_oracle(&lq, 0.0, 0.0).unwrap();
        assert!((o.p_at(0.0) - (v0 - v)).abs() < 1e-8);
    }
}
