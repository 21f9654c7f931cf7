//! Cylindrical functionals of measures, `F(mu) = Phi(<mu, l_1>, ..., <mu, l_k>)`,
//! with their linear functional derivatives.

use std::fmt;
use std::sync::Arc;

use crate::measure::{EmpiricalMeasure, GaussianConvolution};

pub type ScalarFn = Arc<dyn Fn(&[f64]) -> f64 + Send + Sync>;

const FD_STEP: f64 = 1e-5;

/// Test function `l` integrated against the measure.
#[derive(Clone)]
pub enum Observable {
    /// `l(y) = y[axis]`
    Coordinate(usize),
    /// `l(y) = y[axis]^exponent`
    Power { axis: usize, exponent: u32 },
    /// Arbitrary smooth function; derivatives by central differences.
    Custom(ScalarFn),
}

impl fmt::Debug for Observable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Observable::Coordinate(a) => write!(f, "Coordinate({a})"),
            Observable::Power { axis, exponent } => write!(f, "Power({axis}, {exponent})"),
            Observable::Custom(_) => write!(f, "Custom"),
        }
    }
}

impl Observable {
    pub fn value(&self, y: &[f64]) -> f64 {
        match self {
            Observable::Coordinate(a) => y[*a],
            Observable::Power { axis, exponent } => y[*axis].powi(*exponent as i32),
            Observable::Custom(f) => f(y),
        }
    }

    /// Gradient in `y`, written into `out`.
    pub fn gradient(&self, y: &[f64], out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        match self {
            Observable::Coordinate(a) => out[*a] = 1.0,
            Observable::Power { axis, exponent } => {
                let k = *exponent;
                out[*axis] = if k == 0 { 0.0 } else { k as f64 * y[*axis].powi(k as i32 - 1) };
            }
            Observable::Custom(f) => {
                let mut p = y.to_vec();
                for a in 0..y.len() {
                    let h = FD_STEP * (1.0 + y[a].abs());
                    p[a] = y[a] + h;
                    let up = f(&p);
                    p[a] = y[a] - h;
                    let down = f(&p);
                    p[a] = y[a];
                    out[a] = (up - down) / (2.0 * h);
                }
            }
        }
    }
}

/// The outer map `Phi`.
#[derive(Clone)]
pub enum Outer {
    /// `constant + sum_i coefficients[i] u_i`
    Affine { constant: f64, coefficients: Vec<f64> },
    /// `-scale * psi_R(u_0 - target)` where `psi_R` is quadratic on
    /// `[-R, R]` and saturates to the constant `2 R^2` beyond `2R`.
    Penalty { scale: f64, target: f64, radius: f64 },
    /// Arbitrary smooth map; derivatives by central differences.
    Custom(ScalarFn),
}

impl fmt::Debug for Outer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Outer::Affine { constant, coefficients } => write!(f, "Affine({constant}, {coefficients:?})"),
            Outer::Penalty { scale, target, radius } => write!(f, "Penalty({scale}, {target}, {radius})"),
            Outer::Custom(_) => write!(f, "Custom"),
        }
    }
}

/// Truncated quadratic and its first two derivatives.
pub fn truncated_square(u: f64, radius: f64) -> (f64, f64, f64) {
    let r = radius;
    let s = u.abs();
    let sign = u.signum();
    if s <= r {
        (u * u, 2.0 * u, 2.0)
    } else if s <= 2.0 * r {
        let e = s - r;
        (r * r + 2.0 * r * e - e * e, sign * 2.0 * (r - e), -2.0)
    } else {
        (2.0 * r * r, 0.0, 0.0)
    }
}

impl Outer {
    pub fn value(&self, u: &[f64]) -> f64 {
        match self {
            Outer::Affine { constant, coefficients } => {
                constant + coefficients.iter().zip(u).map(|(c, x)| c * x).sum::<f64>()
            }
            Outer::Penalty { scale, target, radius } => -scale * truncated_square(u[0] - target, *radius).0,
            Outer::Custom(f) => f(u),
        }
    }

    pub fn gradient(&self, u: &[f64], out: &mut [f64]) {
        match self {
            Outer::Affine { coefficients, .. } => {
                for (o, c) in out.iter_mut().zip(coefficients) {
                    *o = *c;
                }
            }
            Outer::Penalty { scale, target, radius } => {
                out.iter_mut().for_each(|v| *v = 0.0);
                out[0] = -scale * truncated_square(u[0] - target, *radius).1;
            }
            Outer::Custom(f) => {
                let mut p = u.to_vec();
                for i in 0..u.len() {
                    let h = FD_STEP * (1.0 + u[i].abs());
                    p[i] = u[i] + h;
                    let up = f(&p);
                    p[i] = u[i] - h;
                    let down = f(&p);
                    p[i] = u[i];
                    out[i] = (up - down) / (2.0 * h);
                }
            }
        }
    }

    /// Row-major `k x k` Hessian.
    pub fn hessian(&self, u: &[f64], out: &mut [f64]) {
        let k = u.len();
        out.iter_mut().for_each(|v| *v = 0.0);
        match self {
            Outer::Affine { .. } => {}
            Outer::Penalty { scale, target, radius } => {
                out[0] = -scale * truncated_square(u[0] - target, *radius).2;
            }
            Outer::Custom(f) => {
                let mut p = u.to_vec();
                let h: Vec<f64> = u.iter().map(|x| 1e-4 * (1.0 + x.abs())).collect();
                for i in 0..k {
                    for j in i..k {
                        let mut eval = |di: f64, dj: f64| {
                            p[i] += di * h[i];
                            p[j] += dj * h[j];
                            let v = f(&p);
                            p[i] = u[i];
                            p[j] = u[j];
                            v
                        };
                        let v = if i == j {
                            (eval(1.0, 0.0) - 2.0 * f(u) + eval(-1.0, 0.0)) / (h[i] * h[i])
                        } else {
                            (eval(1.0, 1.0) - eval(1.0, -1.0) - eval(-1.0, 1.0) + eval(-1.0, -1.0))
                                / (4.0 * h[i] * h[j])
                        };
                        out[i * k + j] = v;
                        out[j * k + i] = v;
                    }
                }
            }
        }
    }

    fn is_constant(&self) -> bool {
        match self {
            Outer::Affine { coefficients, .. } => coefficients.iter().all(|&c| c == 0.0),
            Outer::Penalty { scale, .. } => *scale == 0.0,
            Outer::Custom(_) => false,
        }
    }
}

/// `F(mu) = Phi(<mu, l_1>, ..., <mu, l_k>)`.
#[derive(Clone, Debug)]
pub struct Cylindrical {
    pub observables: Vec<Observable>,
    pub outer: Outer,
}

impl Cylindrical {
    pub fn new(observables: Vec<Observable>, outer: Outer) -> Self {
        Cylindrical { observables, outer }
    }

    /// `c`, independent of the measure.
    pub fn constant(c: f64) -> Self {
        Cylindrical { observables: vec![], outer: Outer::Affine { constant: c, coefficients: vec![] } }
    }

    /// `<mu, l>`.
    pub fn linear(l: Observable) -> Self {
        Cylindrical { observables: vec![l], outer: Outer::Affine { constant: 0.0, coefficients: vec![1.0] } }
    }

    /// `-scale * psi_R(mean_axis(mu) - target)`.
    pub fn mean_penalty(axis: usize, scale: f64, target: f64, radius: f64) -> Self {
        Cylindrical {
            observables: vec![Observable::Coordinate(axis)],
            outer: Outer::Penalty { scale, target, radius },
        }
    }

    pub fn depends_on_measure(&self) -> bool {
        !self.observables.is_empty() && !self.outer.is_constant()
    }

    /// Observation vector with a caller-supplied integrator.
    pub fn observe(&self, mut integrate: impl FnMut(&Observable) -> f64) -> Vec<f64> {
        self.observables.iter().map(&mut integrate).collect()
    }

    pub fn eval_observed(&self, u: &[f64]) -> f64 {
        self.outer.value(u)
    }

    pub fn eval(&self, mu: &EmpiricalMeasure) -> f64 {
        let u = self.observe(|l| mu.expectation(|y| l.value(y)));
        self.outer.value(&u)
    }

    /// Evaluates on an equal-weight cloud stored row-major.
    pub fn eval_points(&self, dim: usize, points: &[f64]) -> f64 {
        let n = (points.len() / dim) as f64;
        let u = self.observe(|l| points.chunks_exact(dim).map(|y| l.value(y)).sum::<f64>() / n);
        self.outer.value(&u)
    }

    pub fn eval_convolution(&self, conv: &GaussianConvolution) -> f64 {
        let u = self.observe(|l| conv.integrate(|y| l.value(y)));
        self.outer.value(&u)
    }

    /// Flat derivative `dF/dm(mu)(y)` given the observation vector `u` of `mu`.
    pub fn flat_derivative(&self, u: &[f64], y: &[f64]) -> f64 {
        let mut grad = vec![0.0; u.len()];
        self.outer.gradient(u, &mut grad);
        self.observables.iter().zip(&grad).map(|(l, g)| g * l.value(y)).sum()
    }

    /// `D_m F(mu, y)` (a `d`-vector) given the observation vector of `mu`.
    pub fn measure_gradient(&self, u: &[f64], y: &[f64], out: &mut [f64]) {
        let mut grad = vec![0.0; u.len()];
        self.outer.gradient(u, &mut grad);
        let mut dl = vec![0.0; y.len()];
        out.iter_mut().for_each(|v| *v = 0.0);
        for (l, g) in self.observables.iter().zip(&grad) {
            if *g == 0.0 {
                continue;
            }
            l.gradient(y, &mut dl);
            for (o, v) in out.iter_mut().zip(&dl) {
                *o += g * v;
            }
        }
    }

    /// `D^2_mm F(mu, y, z)` as a row-major `d x d` matrix.
    pub fn measure_hessian(&self, u: &[f64], y: &[f64], z: &[f64], out: &mut [f64]) {
        let k = u.len();
        let d = y.len();
        let mut hess = vec![0.0; k * k];
        self.outer.hessian(u, &mut hess);
        let grads = |p: &[f64]| -> Vec<Vec<f64>> {
            self.observables
                .iter()
                .map(|l| {
                    let mut g = vec![0.0; d];
                    l.gradient(p, &mut g);
                    g
                })
                .collect()
        };
        let gy = grads(y);
        let gz = grads(z);
        out.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..k {
            for j in 0..k {
                let h = hess[i * k + j];
                if h == 0.0 {
                    continue;
                }
                for a in 0..d {
                    for b in 0..d {
                        out[a * d + b] += h * gy[i][a] * gz[j][b];
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn truncated_square_is_c1() {
        let r = 2.0;
        for &u in &[1.999, 2.0, 2.001, 3.999, 4.0, 4.001, -2.0, -4.0] {
            let (v, d1, _) = truncated_square(u, r);
            let h = 1e-7;
            let fd = (truncated_square(u + h, r).0 - truncated_square(u - h, r).0) / (2.0 * h);
            assert!((d1 - fd).abs() < 1e-5, "u={u}");
            assert!(v <= 2.0 * r * r + 1e-12);
        }
        assert_eq!(truncated_square(1.5, r).0, 2.25);
    }

    #[test]
    fn second_moment_functional() {
        let f = Cylindrical::linear(Observable::Power { axis: 0, exponent: 2 });
        let mu = EmpiricalMeasure::uniform(1, vec![1.0, 2.0, 3.0]).unwrap();
        assert!((f.eval(&mu) - 14.0 / 3.0).abs() < 1e-14);
        let mut g = [0.0];
        f.measure_gradient(&[14.0 / 3.0], &[1.5], &mut g);
        assert_eq!(g[0], 3.0);
    }

    #[test]
    fn custom_derivatives_match_closed_form() {
        let closed = Cylindrical::mean_penalty(0, 0.7, 0.2, 50.0);
        let custom = Cylindrical::new(
            vec![Observable::Custom(Arc::new(|y: &[f64]| y[0]))],
            Outer::Custom(Arc::new(|u: &[f64]| -0.7 * (u[0] - 0.2).powi(2))),
        );
        let u = [1.3];
        let (mut a, mut b) = ([0.0], [0.0]);
        closed.measure_gradient(&u, &[0.4], &mut a);
        custom.measure_gradient(&u, &[0.4], &mut b);
        assert!((a[0] - b[0]).abs() < 1e-6);
        closed.measure_hessian(&u, &[0.4], &[-1.0], &mut a);
        custom.measure_hessian(&u, &[0.4], &[-1.0], &mut b);
        assert!((a[0] - b[0]).abs() < 1e-4);
    }
}
