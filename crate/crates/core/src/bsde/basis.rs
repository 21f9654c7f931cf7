//! Polynomial regression on standardized features.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::measure::multi_indices;

/// Which per-path quantities enter the feature map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BasisVariables {
    /// `B_{t_i}` (or the shifted common noise in the controlled world).
    pub common: bool,
    /// Mean of the cloud.
    pub mean: bool,
    /// Diagonal of the cloud covariance.
    pub variance: bool,
}

/// Feature-map settings shared by every time step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionBasis {
    pub degree: usize,
    pub variables: BasisVariables,
    /// Ridge weight relative to the mean diagonal of the Gram matrix; the
    /// intercept is not penalized.
    pub ridge: f64,
    /// Regressions whose Gram matrix is worse conditioned fail.
    pub max_condition: f64,
}

impl Default for RegressionBasis {
    fn default() -> Self {
        RegressionBasis {
            degree: 3,
            variables: BasisVariables { common: true, mean: true, variance: true },
            ridge: 1e-8,
            max_condition: 1e12,
        }
    }
}

impl RegressionBasis {
    pub fn with_degree(self, degree: usize) -> Self {
        RegressionBasis { degree, ..self }
    }

    pub fn with_variables(self, variables: BasisVariables) -> Self {
        RegressionBasis { variables, ..self }
    }

    /// Raw variables `[B, mean, var]` (as selected) for one path.
    pub fn raw(&self, common: &[f64], mean: &[f64], covariance: &[f64], out: &mut Vec<f64>) {
        out.clear();
        let d = mean.len();
        if self.variables.common {
            out.extend_from_slice(common);
        }
        if self.variables.mean {
            out.extend_from_slice(mean);
        }
        if self.variables.variance {
            out.extend((0..d).map(|a| covariance[a * d + a]));
        }
    }

    pub fn raw_len(&self, d: usize) -> usize {
        d * (self.variables.common as usize + self.variables.mean as usize + self.variables.variance as usize)
    }
}

/// Basis fitted on the samples of one time step: standardization plus
/// monomials of total degree `<= degree` in the non-constant variables.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepBasis {
    pub center: Vec<f64>,
    pub scale: Vec<f64>,
    /// Indices of the raw variables kept (non-constant across samples).
    pub active: Vec<usize>,
    /// Exponents over `active`, one row per feature; the first is the constant.
    pub exponents: Vec<Vec<usize>>,
}

impl StepBasis {
    /// Fits on `samples` rows of `raw_len` values each.
    pub fn fit(raw: &[f64], raw_len: usize, degree: usize) -> Self {
        let m = raw.len().checked_div(raw_len).unwrap_or(0);
        let mut center = vec![0.0; raw_len];
        let mut scale = vec![0.0; raw_len];
        for v in 0..raw_len {
            let mean = raw.iter().skip(v).step_by(raw_len).sum::<f64>() / m.max(1) as f64;
            let var = raw.iter().skip(v).step_by(raw_len).map(|x| (x - mean).powi(2)).sum::<f64>() / m.max(1) as f64;
            center[v] = mean;
            scale[v] = var.sqrt();
        }
        let active: Vec<usize> =
            (0..raw_len).filter(|&v| scale[v] > 1e-10 * (1.0 + center[v].abs())).collect();
        let mut exponents = vec![vec![0; active.len()]];
        if !active.is_empty() {
            for k in 1..=degree {
                exponents.extend(multi_indices(active.len(), k));
            }
        }
        StepBasis { center, scale, active, exponents }
    }

    pub fn len(&self) -> usize {
        self.exponents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exponents.is_empty()
    }

    pub fn features(&self, raw: &[f64], out: &mut Vec<f64>) {
        out.clear();
        let z: Vec<f64> = self.active.iter().map(|&v| (raw[v] - self.center[v]) / self.scale[v]).collect();
        for e in &self.exponents {
            out.push(e.iter().zip(&z).map(|(&k, x)| x.powi(k as i32)).product());
        }
    }

    pub fn eval(&self, raw: &[f64], coefficients: &[f64]) -> f64 {
        let mut phi = Vec::with_capacity(self.len());
        self.features(raw, &mut phi);
        phi.iter().zip(coefficients).map(|(p, c)| p * c).sum()
    }
}

/// Least-squares solver for one design matrix and several targets.
pub struct Regression {
    /// `M x p`, row-major.
    design: Vec<f64>,
    p: usize,
    factor: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    pub condition: f64,
}

impl Regression {
    pub fn new(design: Vec<f64>, p: usize, ridge: f64, max_condition: f64, step: usize) -> Result<Self> {
        let m = design.len() / p;
        if p * 10 > m {
            return Err(Error::TooManyFeatures { features: p, samples: m });
        }
        let mut gram = DMatrix::<f64>::zeros(p, p);
        for row in design.chunks_exact(p) {
            for a in 0..p {
                let ra = row[a];
                for b in a..p {
                    gram[(a, b)] += ra * row[b];
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                gram[(a, b)] = gram[(b, a)];
            }
        }
        let eig = SymmetricEigen::new(gram.clone());
        let max = eig.eigenvalues.iter().cloned().fold(0.0f64, f64::max);
        let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        let condition = if min > 0.0 { max / min } else { f64::INFINITY };
        if !(condition <= max_condition) {
            return Err(Error::RankDeficient { step, condition });
        }
        let lambda = ridge * gram.trace() / p as f64;
        // The first feature is the constant and stays unpenalized.
        for a in 1..p {
            gram[(a, a)] += lambda;
        }
        let factor = gram.cholesky().ok_or(Error::RankDeficient { step, condition })?;
        Ok(Regression { design, p, factor, condition })
    }

    pub fn solve(&self, target: &[f64]) -> Vec<f64> {
        let mut rhs = DVector::<f64>::zeros(self.p);
        for (row, y) in self.design.chunks_exact(self.p).zip(target) {
            for a in 0..self.p {
                rhs[a] += row[a] * y;
            }
        }
        self.factor.solve(&rhs).iter().cloned().collect()
    }

    pub fn predict(&self, row: usize, coefficients: &[f64]) -> f64 {
        self.design[row * self.p..(row + 1) * self.p].iter().zip(coefficients).map(|(x, c)| x * c).sum()
    }
}
