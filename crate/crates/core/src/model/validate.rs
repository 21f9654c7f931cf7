use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::measure::{psd_factor, MeasureSummary};
use crate::rng::{stream, StreamRole};

use super::{CoefficientSpec, InitialLaw, Volatility};

const SAMPLES: usize = 256;
const DECOMPOSITION_TOL: f64 = 1e-9;
const SINGULAR_CONDITION: f64 = 1e12;

/// Outcome of [`validate_spec`]. Hard failures are returned as errors; soft
/// findings land in `violations`.
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    pub samples: usize,
    /// `max |b - (b0 + sigma0 b1)|` over the samples (0 when no separate drift is declared).
    pub decomposition_residual: f64,
    /// `max |b1|` over the samples.
    pub b1_sup: f64,
    pub sigma0_condition: f64,
    /// Finite-difference estimate of the Lipschitz constant of `b0` and `sigma` in `x`.
    pub lipschitz_x: f64,
    /// `max |b0(t, x, mu)| / (1 + |x| + sqrt(second moment of mu))`.
    pub linear_growth: f64,
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

fn condition_number(m: &[f64], d: usize) -> f64 {
    let svd = DMatrix::from_row_slice(d, d, m).singular_values();
    let max = svd.iter().cloned().fold(0.0f64, f64::max);
    let min = svd.iter().cloned().fold(f64::INFINITY, f64::min);
    if min == 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Samples `(t, x, mu, a)` tuples and checks the structural assumptions.
pub fn validate_spec(spec: &CoefficientSpec) -> Result<ValidationReport> {
    let d = spec.dim;
    if d == 0 {
        return Err(Error::invalid("dimension must be positive"));
    }
    if spec.sigma0.len() != d * d {
        return Err(Error::DimensionMismatch { expected: d * d, got: spec.sigma0.len() });
    }
    if spec.control.dim() != d || spec.control.hi.len() != d || spec.control.reference.len() != d {
        return Err(Error::DimensionMismatch { expected: d, got: spec.control.dim() });
    }
    if spec.control.lo.iter().zip(&spec.control.hi).any(|(l, h)| !(l <= h)) {
        return Err(Error::invalid("control box has lo > hi"));
    }
    if !spec.control.contains(&spec.control.reference) {
        return Err(Error::OutsideControlSet(spec.control.reference.clone()));
    }
    if !(spec.horizon > 0.0) {
        return Err(Error::invalid("horizon must be positive"));
    }
    if let Volatility::Constant(m) = &spec.sigma {
        if m.len() != d * d {
            return Err(Error::DimensionMismatch { expected: d * d, got: m.len() });
        }
    }
    match &spec.initial {
        InitialLaw::Gaussian { mean, covariance } => {
            if mean.len() != d {
                return Err(Error::DimensionMismatch { expected: d, got: mean.len() });
            }
            psd_factor(covariance, d)?;
        }
        InitialLaw::Empirical(m) if m.dim() != d => {
            return Err(Error::DimensionMismatch { expected: d, got: m.dim() })
        }
        InitialLaw::Dirac(x) if x.len() != d => return Err(Error::DimensionMismatch { expected: d, got: x.len() }),
        _ => {}
    }

    let sigma0_condition = condition_number(&spec.sigma0, d);
    if spec.flags.drift_controlled && !(sigma0_condition < SINGULAR_CONDITION) {
        return Err(Error::SingularSigma0 { condition: sigma0_condition });
    }

    let mut rng = stream(0x5eed, StreamRole::Auxiliary, 0, 0);
    let mut violations = Vec::new();
    let mut decomposition_residual = 0.0f64;
    let mut b1_sup = 0.0f64;
    let mut lipschitz_x = 0.0f64;
    let mut linear_growth = 0.0f64;
    let mut const_vol_residual = 0.0f64;

    let mut b0 = vec![0.0; d];
    let mut b0p = vec![0.0; d];
    let mut b1 = vec![0.0; d];
    let mut full = vec![0.0; d];
    let mut split = vec![0.0; d];
    let mut sig = vec![0.0; d * d];
    let mut sigp = vec![0.0; d * d];
    for _ in 0..SAMPLES {
        let t = rng.random_range(0.0..=spec.horizon);
        let x: Vec<f64> = (0..d).map(|_| { let z: f64 = StandardNormal.sample(&mut rng); 2.0 * z }).collect();
        let mean: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
        let mut covariance = vec![0.0; d * d];
        for a in 0..d {
            covariance[a * d + a] = rng.random_range(0.0..2.0);
        }
        let second = mean.iter().map(|m| m * m).sum::<f64>() + (0..d).map(|a| covariance[a * d + a]).sum::<f64>();
        let mu = MeasureSummary { mean, covariance };
        let a = spec.control.sample(&mut rng);

        spec.b1(t, &mu, &a, &mut b1);
        b1_sup = b1_sup.max(norm(&b1));
        if b1.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("b1"));
        }

        spec.drift(t, &x, &mu, &a, &mut split);
        if let Some(f) = &spec.full_drift {
            f(t, &x, &mu, &a, &mut full);
            let r = full.iter().zip(&split).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
            decomposition_residual = decomposition_residual.max(r);
        }

        spec.b0(t, &x, &mu, &mut b0);
        linear_growth = linear_growth.max(norm(&b0) / (1.0 + norm(&x) + second.sqrt()));
        spec.sigma_at(t, &x, &mu, &mut sig);
        let h = 1e-6;
        for axis in 0..d {
            let mut xp = x.clone();
            xp[axis] += h;
            spec.b0(t, &xp, &mu, &mut b0p);
            spec.sigma_at(t, &xp, &mu, &mut sigp);
            let db = b0.iter().zip(&b0p).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt() / h;
            let ds = sig.iter().zip(&sigp).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt() / h;
            lipschitz_x = lipschitz_x.max(db).max(ds);
        }

        if spec.flags.constant_vol {
            // b(., a) = a: b0 vanishes and sigma0 b1(a) = a.
            let r = split.iter().zip(&a).map(|(p, q)| (p - q).abs()).fold(0.0, f64::max);
            const_vol_residual = const_vol_residual.max(r);
        }
    }

    if decomposition_residual > DECOMPOSITION_TOL {
        return Err(Error::Decomposition { residual: decomposition_residual });
    }
    if b1_sup > spec.b1_bound {
        violations.push(format!("b1 exceeds its declared bound: sup |b1| = {b1_sup:.3e} > {:.3e}", spec.b1_bound));
    }
    if spec.flags.constant_vol {
        if spec.constant_sigma().is_none() {
            violations.push("constant_vol declared but sigma is state dependent".into());
        }
        if const_vol_residual > DECOMPOSITION_TOL {
            violations.push(format!("constant_vol declared but b(., a) differs from a by {const_vol_residual:.3e}"));
        }
    }
    if !lipschitz_x.is_finite() || !linear_growth.is_finite() {
        violations.push("non-finite Lipschitz or growth estimate".into());
    }

    Ok(ValidationReport {
        samples: SAMPLES,
        decomposition_residual,
        b1_sup,
        sigma0_condition,
        lipschitz_x,
        linear_growth,
        violations,
    })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::model::{ControlDrift, FullDriftFn, SpecFlags};

    fn lq_unit() -> CoefficientSpec {
        CoefficientSpec {
            sigma0: vec![1.0],
            sigma: Volatility::Constant(vec![0.5]),
            flags: SpecFlags { markovian: true, constant_vol: true, drift_controlled: true },
            ..CoefficientSpec::zero_1d(2.0)
        }
    }

    #[test]
    fn lq_spec_passes() {
        let declared: FullDriftFn = Arc::new(|_, _, _, a, out| out[0] = a[0]);
        let spec = CoefficientSpec { full_drift: Some(declared), ..lq_unit() };
        let r = validate_spec(&spec).unwrap();
        assert!(r.passed(), "{:?}", r.violations);
        assert_eq!(r.decomposition_residual, 0.0);
    }

    #[test]
    fn unbounded_b1_is_reported() {
        let eps = 1e-6;
        let spec = CoefficientSpec {
            control_drift: ControlDrift::Linear { scale: 1.0 / eps },
            flags: SpecFlags { constant_vol: false, ..lq_unit().flags },
            ..lq_unit()
        };
        let r = validate_spec(&spec).unwrap();
        assert!(!r.passed());
        assert!(r.violations[0].contains("b1"));
    }

    #[test]
    fn singular_sigma0_is_an_error() {
        let spec = CoefficientSpec { sigma0: vec![0.0], ..lq_unit() };
        let err = validate_spec(&spec).unwrap_err();
        assert!(err.to_string().contains("singular sigma0"));
    }

    #[test]
    fn decomposition_mismatch_is_an_error() {
        let declared: FullDriftFn = Arc::new(|_, _, _, a, out| out[0] = 1.1 * a[0]);
        let spec = CoefficientSpec { full_drift: Some(declared), ..lq_unit() };
        assert!(matches!(validate_spec(&spec), Err(Error::Decomposition { .. })));
    }
}
