use crate::error::{Error, Result};

pub const MIN_RICCATI_STEPS: usize = 10_000;

/// One-dimensional linear-quadratic model with a truncated-quadratic
/// mean penalty.
///
/// Dynamics `dX = a dt + sigma dW + sigma0 dB`, rewards
/// `L = -a^2/2 - c (mean - theta)^2`, `g = -gamma (mean - theta)^2`,
/// controls in `[-a_max, a_max]`, initial law with mean `m0` and variance `v0`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LqParams {
    pub sigma: f64,
    pub sigma0: f64,
    pub a_max: f64,
    pub c: f64,
    pub gamma: f64,
    pub theta: f64,
    pub m0: f64,
    pub v0: f64,
    pub horizon: f64,
}

/// `P` and `q` on a uniform backward grid.
#[derive(Debug, Clone)]
pub struct RiccatiSolution {
    pub params: LqParams,
    pub times: Vec<f64>,
    pub p: Vec<f64>,
    pub q: Vec<f64>,
}

/// RK4 for `P' = 2P^2 - c`, `q' = -sigma0^2 P`, integrated from `T` back
/// to `t0` in `steps` steps. Returns the node values in forward time order.
fn integrate(params: &LqParams, t0: f64, steps: usize) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let n = steps.max(1);
    let h = (params.horizon - t0) / n as f64;
    let s2 = params.sigma0 * params.sigma0;
    // In reversed time s = T - t: dP/ds = c - 2P^2, dq/ds = sigma0^2 P.
    let f = |p: f64| (params.c - 2.0 * p * p, s2 * p);
    let mut p = vec![0.0; n + 1];
    let mut q = vec![0.0; n + 1];
    p[n] = params.gamma;
    q[n] = 0.0;
    for i in (0..n).rev() {
        let (p0, q0) = (p[i + 1], q[i + 1]);
        let (k1p, k1q) = f(p0);
        let (k2p, k2q) = f(p0 + 0.5 * h * k1p);
        let (k3p, k3q) = f(p0 + 0.5 * h * k2p);
        let (k4p, k4q) = f(p0 + h * k3p);
        p[i] = p0 + h / 6.0 * (k1p + 2.0 * k2p + 2.0 * k3p + k4p);
        q[i] = q0 + h / 6.0 * (k1q + 2.0 * k2q + 2.0 * k3q + k4q);
        if !p[i].is_finite() || !q[i].is_finite() {
            return Err(Error::BlowUp { step: i });
        }
    }
    let times = (0..=n).map(|i| t0 + h * i as f64).collect();
    Ok((times, p, q))
}

fn check(params: &LqParams) -> Result<()> {
    let vals = [params.sigma, params.sigma0, params.a_max, params.c, params.gamma, params.theta, params.m0, params.v0, params.horizon];
    if vals.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("LQ parameters"));
    }
    if params.c < 0.0 || params.gamma < 0.0 {
        return Err(Error::invalid("LQ costs c and gamma must be nonnegative"));
    }
    if params.horizon <= 0.0 || params.v0 < 0.0 || params.a_max <= 0.0 {
        return Err(Error::invalid("LQ horizon, a_max must be positive and v0 nonnegative"));
    }
    Ok(())
}

impl LqParams {
    /// Solves on `max(steps, 10^4)` RK4 steps over `[0, T]`.
    pub fn solve(&self, steps: usize) -> Result<RiccatiSolution> {
        check(self)?;
        let (times, p, q) = integrate(self, 0.0, steps.max(MIN_RICCATI_STEPS))?;
        let sol = RiccatiSolution { params: *self, times, p, q };
        debug_assert!(sol.p.iter().all(|&v| v >= -1e-12));
        Ok(sol)
    }

    /// `P` is constant when `c = 2 gamma^2`.
    pub fn is_stationary(&self) -> bool {
        (self.c - 2.0 * self.gamma * self.gamma).abs() <= 1e-14 * (1.0 + self.c)
    }
}

/// `-P(t)(m - theta)^2 - q(t)` with `P`, `q` integrated directly to `t`.
pub fn lq_value_oracle(params: &LqParams, t: f64, m: f64) -> Result<f64> {
    check(params)?;
    if !(0.0..=params.horizon).contains(&t) {
        return Err(Error::TimeOutOfGrid(t));
    }
    if t == params.horizon {
        return Ok(-params.gamma * (m - params.theta).powi(2));
    }
    let (_, p, q) = integrate(params, t, MIN_RICCATI_STEPS)?;
    Ok(-p[0] * (m - params.theta).powi(2) - q[0])
}

impl RiccatiSolution {
    fn interp(&self, values: &[f64], t: f64) -> f64 {
        let n = self.times.len() - 1;
        let h = self.params.horizon / n as f64;
        let x = (t / h).clamp(0.0, n as f64);
        let i = (x.floor() as usize).min(n - 1);
        let w = x - i as f64;
        values[i] * (1.0 - w) + values[i + 1] * w
    }

    pub fn p_at(&self, t: f64) -> f64 {
        self.interp(&self.p, t)
    }

    pub fn q_at(&self, t: f64) -> f64 {
        self.interp(&self.q, t)
    }

    pub fn value(&self, t: f64, m: f64) -> f64 {
        -self.p_at(t) * (m - self.params.theta).powi(2) - self.q_at(t)
    }

    /// Optimal feedback on the conditional mean, clamped to the control set.
    pub fn feedback(&self, t: f64, m: f64) -> f64 {
        (-2.0 * self.p_at(t) * (m - self.params.theta)).clamp(-self.params.a_max, self.params.a_max)
    }

    /// `D_m U(t, nu, y) = -2 P(t) (mean(nu) - theta)`, independent of `y`.
    pub fn measure_derivative(&self, t: f64, m: f64) -> f64 {
        -2.0 * self.p_at(t) * (m - self.params.theta)
    }

    /// Checks that the unclamped feedback stays inside `[-a_max, a_max]` for
    /// conditional means within `width` standard deviations of their
    /// unconditional spread.
    pub fn check_interior(&self, width: f64) -> Result<()> {
        let p = &self.params;
        let spread = ((p.sigma0 * p.sigma0 + p.sigma * p.sigma) * p.horizon + p.v0).sqrt();
        let reach = (p.m0 - p.theta).abs() + width * spread;
        let p_max = self.p.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if 2.0 * p_max * reach > p.a_max {
            return Err(Error::invalid(format!(
                "a_max = {} binds: feedback reaches {:.3} within {width} standard deviations",
                p.a_max,
                2.0 * p_max * reach
            )));
        }
        Ok(())
    }
}
