//! Convergence tables and log-log slope fits.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// Fewest points [`fit_loglog_slope`] accepts.
pub const MIN_FIT_POINTS: usize = 3;
/// Fewest points an experiment feeds into a fit.
pub const MIN_EXPERIMENT_POINTS: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateRow {
    pub n: usize,
    pub stat: f64,
    pub stderr: f64,
    pub reps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    /// 95% confidence interval of the slope.
    pub ci: (f64, f64),
    pub r2: f64,
    pub points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateTable {
    pub rows: Vec<RateRow>,
    pub fit: Option<SlopeFit>,
    /// Every statistic is exactly zero, so no fit was attempted.
    pub exact_zero: bool,
}

impl RateTable {
    /// Fits the rows, or flags an all-zero table.
    pub fn from_rows(rows: Vec<RateRow>) -> Result<Self> {
        if !rows.is_empty() && rows.iter().all(|r| r.stat == 0.0) {
            return Ok(RateTable { rows, fit: None, exact_zero: true });
        }
        let fit = fit_loglog_slope(&rows)?;
        Ok(RateTable { rows, fit: Some(fit), exact_zero: false })
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("N,stat,stderr,reps\n");
        for r in &self.rows {
            s.push_str(&format!("{},{:e},{:e},{}\n", r.n, r.stat, r.stderr, r.reps));
        }
        s
    }
}

/// Weighted least squares of `log stat` on `log N`. The weight of a row is
/// `1 / stderr^2` on the log scale (`stderr / stat` by the delta method);
/// rows are weighted equally when any standard error is zero.
pub fn fit_loglog_slope(rows: &[RateRow]) -> Result<SlopeFit> {
    if rows.len() < MIN_FIT_POINTS {
        return Err(Error::UnderPowered(format!("{} points, need at least {MIN_FIT_POINTS}", rows.len())));
    }
    if let Some(r) = rows.iter().find(|r| !(r.stat > 0.0)) {
        return Err(Error::NonPositiveStatistic(r.stat));
    }
    if rows.iter().any(|r| !r.stderr.is_finite() || r.stderr < 0.0) {
        return Err(Error::NonFinite("standard errors"));
    }
    let x: Vec<f64> = rows.iter().map(|r| (r.n as f64).ln()).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.stat.ln()).collect();
    let w: Vec<f64> = if rows.iter().any(|r| r.stderr == 0.0) {
        vec![1.0; rows.len()]
    } else {
        rows.iter().map(|r| (r.stat / r.stderr).powi(2)).collect()
    };
    let sw: f64 = w.iter().sum();
    let xm = w.iter().zip(&x).map(|(w, x)| w * x).sum::<f64>() / sw;
    let ym = w.iter().zip(&y).map(|(w, y)| w * y).sum::<f64>() / sw;
    let sxx: f64 = w.iter().zip(&x).map(|(w, x)| w * (x - xm).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(Error::UnderPowered("all N are equal".into()));
    }
    let sxy: f64 = (0..x.len()).map(|i| w[i] * (x[i] - xm) * (y[i] - ym)).sum();
    let slope = sxy / sxx;
    let intercept = ym - slope * xm;
    let ssr: f64 = (0..x.len()).map(|i| w[i] * (y[i] - intercept - slope * x[i]).powi(2)).sum();
    let sst: f64 = (0..x.len()).map(|i| w[i] * (y[i] - ym).powi(2)).sum();
    let r2 = if sst > 0.0 { 1.0 - ssr / sst } else { 1.0 };
    let dof = (x.len() - 2) as f64;
    let se = (ssr / dof / sxx).sqrt();
    let t = StudentsT::new(0.0, 1.0, dof).map_err(|e| Error::invalid(e.to_string()))?.inverse_cdf(0.975);
    Ok(SlopeFit { slope, intercept, ci: (slope - t * se, slope + t * se), r2, points: x.len() })
}
