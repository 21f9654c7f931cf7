use std::fmt;
use std::sync::Arc;

use crate::measure::MeasureSummary;
use crate::model::ControlSet;

/// `(step, t, B_{t_0..t_i} flattened) -> a`
pub type OpenLoopFn = Arc<dyn Fn(usize, f64, &[f64], &mut [f64]) + Send + Sync>;
/// `(t, X0_t) -> a`
pub type CommonStateFn = Arc<dyn Fn(f64, &[f64], &mut [f64]) + Send + Sync>;
/// `(t, summary of mu^N_t) -> a`
pub type EmpiricalFn = Arc<dyn Fn(f64, &MeasureSummary, &mut [f64]) + Send + Sync>;
/// `(step, shifted common noise, summary of mu^N_t) -> a`
pub type RegressionFn = Arc<dyn Fn(usize, &[f64], &MeasureSummary, &mut [f64]) + Send + Sync>;

/// What a policy may look at when it acts at step `i`.
#[derive(Debug, Clone, Copy)]
pub struct PolicyInput<'a> {
    pub step: usize,
    pub t: f64,
    /// `B_{t_0}, ..., B_{t_i}`, `d` values each.
    pub common_path: &'a [f64],
    /// `B_{t_i} + int_0^{t_i} b1(alpha_s) ds`: the common noise seen from the
    /// uncontrolled reference dynamics.
    pub shifted_common: &'a [f64],
    /// `X0_{t_i} = sigma0 * shifted_common`; equals `int alpha ds + sigma0 B`
    /// in the constant-volatility model.
    pub common_state: &'a [f64],
    pub summary: &'a MeasureSummary,
}

/// A control rule shared by every particle. Outputs are clamped into `A`.
#[derive(Clone)]
pub enum Policy {
    Constant(Vec<f64>),
    /// Adapted to the common noise only, piecewise constant on the grid.
    OpenLoopPiecewise(OpenLoopFn),
    /// Feedback on the common state `X0` of the constant-volatility reduction.
    CommonStateFeedback(CommonStateFn),
    /// Feedback on a symmetric statistic of the particle cloud.
    EmpiricalFeedback(EmpiricalFn),
    /// Feedback on the regression features of a BSDE solution.
    RegressionFeedback(RegressionFn),
}

impl fmt::Debug for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self {
            Policy::Constant(a) => return write!(f, "Constant({a:?})"),
            Policy::OpenLoopPiecewise(_) => "OpenLoopPiecewise",
            Policy::CommonStateFeedback(_) => "CommonStateFeedback",
            Policy::EmpiricalFeedback(_) => "EmpiricalFeedback",
            Policy::RegressionFeedback(_) => "RegressionFeedback",
        };
        f.write_str(tag)
    }
}

impl Policy {
    pub fn zero(dim: usize) -> Self {
        Policy::Constant(vec![0.0; dim])
    }

    pub fn act(&self, input: &PolicyInput<'_>, control: &ControlSet, out: &mut [f64]) {
        match self {
            Policy::Constant(a) => out.copy_from_slice(a),
            Policy::OpenLoopPiecewise(f) => f(input.step, input.t, input.common_path, out),
            Policy::CommonStateFeedback(f) => f(input.t, input.common_state, out),
            Policy::EmpiricalFeedback(f) => f(input.t, input.summary, out),
            Policy::RegressionFeedback(f) => f(input.step, input.shifted_common, input.summary, out),
        }
        control.clamp(out);
    }
}
