//! Probability measures as weighted point clouds, their moments, Gaussian
//! convolutions and Wasserstein distances.

use std::io::{BufRead, Write};

use nalgebra::{DMatrix, SymmetricEigen};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Default upper bound on the cloud size accepted by the assignment solver.
pub const DEFAULT_ASSIGNMENT_CAP: usize = 512;

/// A finite weighted atom cloud in `R^d`.
///
/// Points are stored row-major (`len * dim` values). Weights are normalized
/// to sum to one on construction.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMeasure {
    dim: usize,
    points: Vec<f64>,
    weights: Vec<f64>,
}

/// Mean vector and covariance matrix (row-major) of a measure: the summary
/// through which coefficients see the measure argument.
#[derive(Debug, Clone, PartialEq)]
pub struct MeasureSummary {
    pub mean: Vec<f64>,
    pub covariance: Vec<f64>,
}

impl MeasureSummary {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn variance(&self, axis: usize) -> f64 {
        self.covariance[axis * self.dim() + axis]
    }

    /// Summary of a Dirac mass.
    pub fn point(x: &[f64]) -> Self {
        MeasureSummary {
            mean: x.to_vec(),
            covariance: vec![0.0; x.len() * x.len()],
        }
    }
}

impl EmpiricalMeasure {
    /// Builds a measure from a list of points and optional weights.
    pub fn from_points(points: &[Vec<f64>], weights: Option<&[f64]>) -> Result<Self> {
        let first = points.first().ok_or(Error::EmptyMeasure)?;
        let dim = first.len();
        if dim == 0 {
            return Err(Error::invalid("points must have at least one coordinate"));
        }
        let mut flat = Vec::with_capacity(points.len() * dim);
        for p in points {
            if p.len() != dim {
                return Err(Error::DimensionMismatch { expected: dim, got: p.len() });
            }
            flat.extend_from_slice(p);
        }
        Self::from_flat(dim, flat, weights.map(|w| w.to_vec()))
    }

    /// Builds a measure from row-major coordinates.
    pub fn from_flat(dim: usize, points: Vec<f64>, weights: Option<Vec<f64>>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::invalid("dimension must be positive"));
        }
        if points.is_empty() {
            return Err(Error::EmptyMeasure);
        }
        if !points.len().is_multiple_of(dim) {
            return Err(Error::invalid("coordinate count is not a multiple of the dimension"));
        }
        if points.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("point coordinates"));
        }
        let n = points.len() / dim;
        let weights = match weights {
            None => vec![1.0 / n as f64; n],
            Some(w) => {
                if w.len() != n {
                    return Err(Error::DimensionMismatch { expected: n, got: w.len() });
                }
                if let Some(&bad) = w.iter().find(|x| !x.is_finite()) {
                    let _ = bad;
                    return Err(Error::NonFinite("weights"));
                }
                if let Some(&neg) = w.iter().find(|&&x| x < 0.0) {
                    return Err(Error::NegativeWeight(neg));
                }
                let total: f64 = w.iter().sum();
                if total <= 0.0 {
                    return Err(Error::ZeroWeights);
                }
                w.into_iter().map(|x| x / total).collect()
            }
        };
        Ok(EmpiricalMeasure { dim, points, weights })
    }

    /// Equal-weight cloud.
    pub fn uniform(dim: usize, points: Vec<f64>) -> Result<Self> {
        Self::from_flat(dim, points, None)
    }

    /// Single atom.
    pub fn dirac(x: &[f64]) -> Self {
        EmpiricalMeasure { dim: x.len(), points: x.to_vec(), weights: vec![1.0] }
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn is_uniform(&self) -> bool {
        let w = 1.0 / self.len() as f64;
        self.weights.iter().all(|&x| (x - w).abs() <= 1e-12 * w.max(1e-300))
    }

    /// `<mu, f>`.
    pub fn expectation(&self, mut f: impl FnMut(&[f64]) -> f64) -> f64 {
        self.weights
            .iter()
            .enumerate()
            .map(|(i, w)| w * f(self.point(i)))
            .sum()
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.dim];
        for (i, w) in self.weights.iter().enumerate() {
            for (mj, xj) in m.iter_mut().zip(self.point(i)) {
                *mj += w * xj;
            }
        }
        m
    }

    pub fn summary(&self) -> MeasureSummary {
        let d = self.dim;
        let mean = self.mean();
        let mut cov = vec![0.0; d * d];
        for (i, w) in self.weights.iter().enumerate() {
            let p = self.point(i);
            for a in 0..d {
                let da = p[a] - mean[a];
                for b in a..d {
                    cov[a * d + b] += w * da * (p[b] - mean[b]);
                }
            }
        }
        for a in 0..d {
            for b in 0..a {
                cov[a * d + b] = cov[b * d + a];
            }
        }
        MeasureSummary { mean, covariance: cov }
    }

    /// Translate every atom by `shift`.
    pub fn shifted(&self, shift: &[f64]) -> Self {
        assert_eq!(shift.len(), self.dim);
        let mut points = self.points.clone();
        for row in points.chunks_exact_mut(self.dim) {
            for (x, s) in row.iter_mut().zip(shift) {
                *x += s;
            }
        }
        EmpiricalMeasure { dim: self.dim, points, weights: self.weights.clone() }
    }

    /// Moves atom `index` by `delta`, keeping its mass.
    pub fn with_atom_moved(&self, index: usize, delta: &[f64]) -> Self {
        let mut out = self.clone();
        for (x, s) in out.points[index * self.dim..(index + 1) * self.dim].iter_mut().zip(delta) {
            *x += s;
        }
        out
    }

    /// Writes one CSV row per atom: coordinates, then weight.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        for i in 0..self.len() {
            let mut row: Vec<String> = self.point(i).iter().map(|x| format!("{x}")).collect();
            row.push(format!("{}", self.weights[i]));
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }

    /// Reads the format produced by [`EmpiricalMeasure::write_csv`].
    pub fn read_csv<R: BufRead>(input: R) -> Result<Self> {
        let mut dim = None;
        let mut points = Vec::new();
        let mut weights = Vec::new();
        for line in input.lines() {
            let line = line?;
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let vals: Vec<f64> = line
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| Error::invalid(format!("bad CSV value: {e}")))?;
            if vals.len() < 2 {
                return Err(Error::invalid("CSV row needs coordinates and a weight"));
            }
            let d = vals.len() - 1;
            match dim {
                None => dim = Some(d),
                Some(expected) if expected != d => {
                    return Err(Error::DimensionMismatch { expected, got: d })
                }
                _ => {}
            }
            points.extend_from_slice(&vals[..d]);
            weights.push(vals[d]);
        }
        let dim = dim.ok_or(Error::EmptyMeasure)?;
        Self::from_flat(dim, points, Some(weights))
    }
}

/// Mixed moments up to a given order.
///
/// `orders[j]` holds the moments of total degree `j + 1`, one per
/// multi-index in graded lexicographic order; `orders[0]` is the mean.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub orders: Vec<Vec<f64>>,
}

impl Moments {
    pub fn mean(&self) -> &[f64] {
        &self.orders[0]
    }
}

/// Multi-indices of total degree `degree` in `dim` variables, graded
/// lexicographic (first coordinate varies slowest, largest first).
pub(crate) fn multi_indices(dim: usize, degree: usize) -> Vec<Vec<usize>> {
    fn rec(dim: usize, remaining: usize, prefix: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if prefix.len() == dim - 1 {
            prefix.push(remaining);
            out.push(prefix.clone());
            prefix.pop();
            return;
        }
        for k in (0..=remaining).rev() {
            prefix.push(k);
            rec(dim, remaining - k, prefix, out);
            prefix.pop();
        }
    }
    let mut out = Vec::new();
    rec(dim, degree, &mut Vec::with_capacity(dim), &mut out);
    out
}

/// Weighted empirical moments up to `order`.
pub fn moments(mu: &EmpiricalMeasure, order: usize) -> Result<Moments> {
    if order == 0 {
        return Err(Error::invalid("moment order must be at least 1"));
    }
    let orders = (1..=order)
        .map(|k| {
            multi_indices(mu.dim(), k)
                .into_iter()
                .map(|alpha| {
                    mu.expectation(|x| {
                        x.iter().zip(&alpha).map(|(xi, &a)| xi.powi(a as i32)).product()
                    })
                })
                .collect()
        })
        .collect();
    Ok(Moments { orders })
}

/// Sorted `(value, weight)` pairs of a 1-D measure.
fn sorted_atoms(mu: &EmpiricalMeasure) -> Vec<(f64, f64)> {
    let mut v: Vec<(f64, f64)> = (0..mu.len()).map(|i| (mu.point(i)[0], mu.weights[i])).collect();
    v.sort_by(|a, b| a.0.total_cmp(&b.0));
    v
}

/// Exact `W_p` between two 1-D weighted clouds via the monotone (quantile)
/// coupling.
pub fn wasserstein_p_1d(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure, p: f64) -> Result<f64> {
    if mu.dim() != 1 || nu.dim() != 1 {
        return Err(Error::invalid("wasserstein_p_1d needs one-dimensional measures"));
    }
    if !(p >= 1.0) {
        return Err(Error::invalid(format!("p must be >= 1, got {p}")));
    }
    let a = sorted_atoms(mu);
    let b = sorted_atoms(nu);
    let (mut i, mut j) = (0usize, 0usize);
    let (mut ra, mut rb) = (a[0].1, b[0].1);
    let mut cost = 0.0;
    loop {
        let m = ra.min(rb);
        if m > 0.0 {
            cost += m * (a[i].0 - b[j].0).abs().powf(p);
        }
        ra -= m;
        rb -= m;
        // Advance whichever side is exhausted; guard against rounding at the end.
        if ra <= 1e-15 {
            i += 1;
            if i == a.len() {
                break;
            }
            ra += a[i].1;
        }
        if rb <= 1e-15 {
            j += 1;
            if j == b.len() {
                break;
            }
            rb += b[j].1;
        }
    }
    Ok(cost.max(0.0).powf(1.0 / p))
}

/// Squared `W_2` between an empirical 1-D measure and `N(mean, variance)`,
/// computed in closed form along the quantile coupling.
pub fn wasserstein2_sq_to_gaussian_1d(mu: &EmpiricalMeasure, mean: f64, variance: f64) -> Result<f64> {
    if mu.dim() != 1 {
        return Err(Error::invalid("expected a one-dimensional measure"));
    }
    if !(variance >= 0.0) {
        return Err(Error::NotPsd);
    }
    let atoms = sorted_atoms(mu);
    let sd = variance.sqrt();
    if sd == 0.0 {
        return Ok(atoms.iter().map(|(x, w)| w * (x - mean).powi(2)).sum());
    }
    let std_normal = Normal::new(0.0, 1.0).expect("standard normal");
    let density = |z: f64| if z.is_finite() { (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt() } else { 0.0 };
    let mut lower = 0.0f64;
    let mut z_lower = f64::NEG_INFINITY;
    let mut cross = 0.0;
    let mut second = 0.0;
    for (k, (x, w)) in atoms.iter().enumerate() {
        let upper = if k + 1 == atoms.len() { 1.0 } else { (lower + w).min(1.0) };
        let z_upper = if upper >= 1.0 { f64::INFINITY } else { std_normal.inverse_cdf(upper) };
        // Integral of the Gaussian quantile over [lower, upper].
        let q_int = mean * (upper - lower) + sd * (density(z_lower) - density(z_upper));
        cross += x * q_int;
        second += w * x * x;
        lower = upper;
        z_lower = z_upper;
    }
    Ok((second - 2.0 * cross + mean * mean + variance).max(0.0))
}

/// Squared Euclidean cost matrix between two equal-size clouds.
fn squared_cost(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Vec<f64> {
    let n = mu.len();
    let mut c = vec![0.0; n * n];
    for i in 0..n {
        let x = mu.point(i);
        for j in 0..n {
            c[i * n + j] = x.iter().zip(nu.point(j)).map(|(a, b)| (a - b) * (a - b)).sum();
        }
    }
    c
}

/// Minimum-cost perfect matching on a square cost matrix (Kuhn–Munkres with
/// potentials). Returns `assignment[row] = column`. Rows are scanned in
/// order and the first minimizing column wins.
pub fn hungarian(cost: &[f64], n: usize) -> Vec<usize> {
    let inf = f64::INFINITY;
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut p = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0usize;
        let mut minv = vec![inf; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = inf;
            let mut j1 = 0usize;
            for j in 1..=n {
                if !used[j] {
                    let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                    if cur < minv[j] {
                        minv[j] = cur;
                        way[j] = j0;
                    }
                    if minv[j] < delta {
                        delta = minv[j];
                        j1 = j;
                    }
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0usize; n];
    for j in 1..=n {
        if p[j] > 0 {
            assignment[p[j] - 1] = j - 1;
        }
    }
    assignment
}

/// Exact `W_2` between equal-size, equal-weight clouds in any dimension by
/// optimal assignment, with the default size cap.
pub fn wasserstein2_assignment(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure) -> Result<f64> {
    wasserstein2_assignment_capped(mu, nu, DEFAULT_ASSIGNMENT_CAP)
}

pub fn wasserstein2_assignment_capped(mu: &EmpiricalMeasure, nu: &EmpiricalMeasure, cap: usize) -> Result<f64> {
    if mu.dim() != nu.dim() {
        return Err(Error::DimensionMismatch { expected: mu.dim(), got: nu.dim() });
    }
    if mu.len() != nu.len() || !mu.is_uniform() || !nu.is_uniform() {
        return Err(Error::UnequalClouds);
    }
    let n = mu.len();
    if n > cap {
        return Err(Error::AssignmentCap { size: n, cap });
    }
    let cost = squared_cost(mu, nu);
    let assignment = hungarian(&cost, n);
    let total: f64 = assignment.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum();
    Ok((total / n as f64).max(0.0).sqrt())
}

/// Nodes and weights of the `order`-point Gauss–Hermite rule for the
/// standard normal distribution (Golub–Welsch). Weights sum to one.
pub fn gauss_hermite(order: usize) -> (Vec<f64>, Vec<f64>) {
    assert!(order >= 1, "quadrature order must be positive");
    let mut jacobi = DMatrix::<f64>::zeros(order, order);
    for k in 1..order {
        let off = (k as f64).sqrt();
        jacobi[(k - 1, k)] = off;
        jacobi[(k, k - 1)] = off;
    }
    let eig = SymmetricEigen::new(jacobi);
    let mut pairs: Vec<(f64, f64)> = (0..order)
        .map(|i| (eig.eigenvalues[i], eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = pairs.iter().map(|p| p.1).sum();
    // Symmetrize: the rule is exactly symmetric, the eigen-solver is not.
    let mut nodes: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let mut weights: Vec<f64> = pairs.iter().map(|p| p.1 / total).collect();
    for i in 0..order / 2 {
        let j = order - 1 - i;
        let x = 0.5 * (nodes[j] - nodes[i]);
        nodes[i] = -x;
        nodes[j] = x;
        let w = 0.5 * (weights[i] + weights[j]);
        weights[i] = w;
        weights[j] = w;
    }
    if order % 2 == 1 {
        nodes[order / 2] = 0.0;
    }
    (nodes, weights)
}

/// `nu0 * N(shift, covariance)` represented by tensorized Gauss–Hermite
/// quadrature around every atom of `nu0`.
#[derive(Debug, Clone)]
pub struct GaussianConvolution {
    base: EmpiricalMeasure,
    shift: Vec<f64>,
    covariance: Vec<f64>,
    order: usize,
    /// Quadrature offsets `L z_j` (row-major, `nodes * dim`) with `L L^T = covariance`.
    offsets: Vec<f64>,
    node_weights: Vec<f64>,
}

/// Builds the convolution of `nu0` with `N(shift, covariance)`.
pub fn convolve_gaussian(
    nu0: &EmpiricalMeasure,
    shift: &[f64],
    covariance: &[f64],
    order: usize,
) -> Result<GaussianConvolution> {
    let d = nu0.dim();
    if shift.len() != d {
        return Err(Error::DimensionMismatch { expected: d, got: shift.len() });
    }
    if covariance.len() != d * d {
        return Err(Error::DimensionMismatch { expected: d * d, got: covariance.len() });
    }
    if d > 2 {
        return Err(Error::Unsupported("Gaussian convolution is tensorized for d <= 2 only".into()));
    }
    if order == 0 {
        return Err(Error::invalid("quadrature order must be positive"));
    }
    let factor = psd_factor(covariance, d)?;
    let (z, w) = gauss_hermite(order);
    let mut offsets = Vec::new();
    let mut node_weights = Vec::new();
    let total = order.pow(d as u32);
    for flat in 0..total {
        let mut idx = flat;
        let mut node = vec![0.0; d];
        let mut weight = 1.0;
        for nd in node.iter_mut() {
            let k = idx % order;
            idx /= order;
            *nd = z[k];
            weight *= w[k];
        }
        for a in 0..d {
            offsets.push((0..d).map(|b| factor[a * d + b] * node[b]).sum());
        }
        node_weights.push(weight);
    }
    Ok(GaussianConvolution {
        base: nu0.clone(),
        shift: shift.to_vec(),
        covariance: covariance.to_vec(),
        order,
        offsets,
        node_weights,
    })
}

/// A square-root factor `L` with `L L^T = cov` for symmetric PSD `cov`.
pub(crate) fn psd_factor(cov: &[f64], d: usize) -> Result<Vec<f64>> {
    if cov.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("covariance"));
    }
    let scale = cov.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1e-300);
    for a in 0..d {
        for b in 0..a {
            if (cov[a * d + b] - cov[b * d + a]).abs() > 1e-12 * scale {
                return Err(Error::NotPsd);
            }
        }
    }
    let m = DMatrix::from_row_slice(d, d, cov);
    let eig = SymmetricEigen::new(m);
    let mut factor = vec![0.0; d * d];
    for k in 0..d {
        let lambda = eig.eigenvalues[k];
        if lambda < -1e-12 * scale {
            return Err(Error::NotPsd);
        }
        let s = lambda.max(0.0).sqrt();
        for a in 0..d {
            factor[a * d + k] = eig.eigenvectors[(a, k)] * s;
        }
    }
    Ok(factor)
}

impl GaussianConvolution {
    pub fn dim(&self) -> usize {
        self.base.dim()
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn shift(&self) -> &[f64] {
        &self.shift
    }

    pub fn covariance(&self) -> &[f64] {
        &self.covariance
    }

    pub fn base(&self) -> &EmpiricalMeasure {
        &self.base
    }

    /// `sum_atoms sum_nodes w * phi(atom + shift + node)`.
    pub fn integrate(&self, mut phi: impl FnMut(&[f64]) -> f64) -> f64 {
        let d = self.dim();
        let mut y = vec![0.0; d];
        let mut total = 0.0;
        for i in 0..self.base.len() {
            let atom = self.base.point(i);
            let wa = self.base.weights()[i];
            let mut inner = 0.0;
            for (k, wk) in self.node_weights.iter().enumerate() {
                for a in 0..d {
                    y[a] = atom[a] + self.shift[a] + self.offsets[k * d + a];
                }
                inner += wk * phi(&y);
            }
            total += wa * inner;
        }
        total
    }

    /// Gaussian expectation `E[phi(center + L Z)]` with this covariance,
    /// independent of the base measure.
    pub fn gaussian_expectation(&self, center: &[f64], mut phi: impl FnMut(&[f64]) -> f64) -> f64 {
        let d = self.dim();
        let mut y = vec![0.0; d];
        let mut total = 0.0;
        for (k, wk) in self.node_weights.iter().enumerate() {
            for a in 0..d {
                y[a] = center[a] + self.offsets[k * d + a];
            }
            total += wk * phi(&y);
        }
        total
    }

    /// Materializes the quadrature as a weighted cloud.
    pub fn to_measure(&self) -> EmpiricalMeasure {
        let d = self.dim();
        let mut points = Vec::with_capacity(self.base.len() * self.node_weights.len() * d);
        let mut weights = Vec::with_capacity(self.base.len() * self.node_weights.len());
        for i in 0..self.base.len() {
            let atom = self.base.point(i);
            for (k, wk) in self.node_weights.iter().enumerate() {
                for a in 0..d {
                    points.push(atom[a] + self.shift[a] + self.offsets[k * d + a]);
                }
                weights.push(self.base.weights()[i] * wk);
            }
        }
        EmpiricalMeasure { dim: d, points, weights }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cloud1(xs: &[f64]) -> EmpiricalMeasure {
        EmpiricalMeasure::uniform(1, xs.to_vec()).unwrap()
    }

    #[test]
    fn construction_examples() {
        let m = EmpiricalMeasure::from_points(&[vec![0.0]], None).unwrap();
        assert_eq!(m.len(), 1);
        assert_eq!(m.weights(), &[1.0]);

        let m = EmpiricalMeasure::from_points(&[vec![1.0], vec![2.0]], Some(&[2.0, 2.0])).unwrap();
        assert_eq!(m.weights(), &[0.5, 0.5]);

        let m = EmpiricalMeasure::from_points(&[vec![1.0], vec![2.0], vec![3.0]], Some(&[1.0, 0.0, 1.0])).unwrap();
        assert_eq!(m.weights(), &[0.5, 0.0, 0.5]);

        let m = cloud1(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0]);
        assert!(m.weights().iter().all(|&w| w == 1.0 / 7.0));
    }

    #[test]
    fn construction_errors() {
        assert!(matches!(EmpiricalMeasure::from_points(&[], None), Err(Error::EmptyMeasure)));
        assert!(matches!(
            EmpiricalMeasure::from_points(&[vec![f64::NAN]], None),
            Err(Error::NonFinite(_))
        ));
        assert!(matches!(
            EmpiricalMeasure::from_points(&[vec![1.0], vec![2.0]], Some(&[0.0, 0.0])),
            Err(Error::ZeroWeights)
        ));
    }

    #[test]
    fn w_p_examples() {
        let a = cloud1(&[0.3, -1.0, 2.5]);
        assert_eq!(wasserstein_p_1d(&a, &a, 2.0).unwrap(), 0.0);
        assert!((wasserstein_p_1d(&cloud1(&[0.0]), &cloud1(&[1.0]), 2.0).unwrap() - 1.0).abs() < 1e-15);
        // Enumerated couplings: sorted pairing costs (1 + 1) / 2.
        let w = wasserstein_p_1d(&cloud1(&[0.0, 2.0]), &cloud1(&[1.0, 3.0]), 2.0).unwrap();
        assert!((w - 1.0).abs() < 1e-14);
        assert!(wasserstein_p_1d(&a, &a, 0.5).is_err());
        let two_d = EmpiricalMeasure::uniform(2, vec![0.0, 0.0]).unwrap();
        assert!(wasserstein_p_1d(&two_d, &two_d, 2.0).is_err());
    }

    #[test]
    fn w_p_unequal_weights() {
        // mu = 0.25 d0 + 0.75 d1, nu = d1: cost 0.25 * 1.
        let mu = EmpiricalMeasure::from_points(&[vec![0.0], vec![1.0]], Some(&[1.0, 3.0])).unwrap();
        let nu = cloud1(&[1.0]);
        let w = wasserstein_p_1d(&mu, &nu, 2.0).unwrap();
        assert!((w * w - 0.25).abs() < 1e-14);
    }

    #[test]
    fn assignment_examples() {
        let a = EmpiricalMeasure::uniform(2, vec![0.0, 0.0, 1.0, 0.0]).unwrap();
        assert_eq!(wasserstein2_assignment(&a, &a).unwrap(), 0.0);
        let b = EmpiricalMeasure::uniform(2, vec![0.0, 0.0, 0.0, 1.0]).unwrap();
        // Both assignments cost 2 in total, so W2^2 = 2 / 2.
        let w = wasserstein2_assignment(&a, &b).unwrap();
        assert!((w * w - 1.0).abs() < 1e-14);
    }

    #[test]
    fn assignment_errors() {
        let a = cloud1(&[0.0, 1.0]);
        let b = cloud1(&[0.0, 1.0, 2.0]);
        assert!(matches!(wasserstein2_assignment(&a, &b), Err(Error::UnequalClouds)));
        let c = EmpiricalMeasure::from_points(&[vec![0.0], vec![1.0]], Some(&[1.0, 2.0])).unwrap();
        assert!(matches!(wasserstein2_assignment(&a, &c), Err(Error::UnequalClouds)));
        let big = cloud1(&[0.0; 10]);
        assert!(matches!(
            wasserstein2_assignment_capped(&big, &big, 5),
            Err(Error::AssignmentCap { .. })
        ));
    }

    #[test]
    fn moments_examples() {
        let m = moments(&cloud1(&[3.0]), 2).unwrap();
        assert_eq!(m.mean(), &[3.0]);
        assert_eq!(m.orders[1], vec![9.0]);
        let m = moments(&cloud1(&[-1.0, 1.0]), 1).unwrap();
        assert_eq!(m.mean(), &[0.0]);
        let m = moments(&cloud1(&[0.0, 1.0, 2.0]), 2).unwrap();
        assert!((m.mean()[0] - 1.0).abs() < 1e-15);
        assert!((m.orders[1][0] - 5.0 / 3.0).abs() < 1e-15);
        assert!(moments(&cloud1(&[1.0]), 0).is_err());
        let two = EmpiricalMeasure::uniform(2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let m = moments(&two, 2).unwrap();
        // x^2, xy, y^2
        assert_eq!(m.orders[1], vec![5.0, 7.0, 10.0]);
    }

    #[test]
    fn gauss_hermite_reproduces_moments() {
        for q in [1usize, 2, 5, 8, 12] {
            let (z, w) = gauss_hermite(q);
            for k in 0..(2 * q) {
                let got: f64 = z.iter().zip(&w).map(|(x, w)| w * x.powi(k as i32)).sum();
                let scale: f64 = z.iter().zip(&w).map(|(x, w)| w * x.abs().powi(k as i32)).sum();
                // E Z^k = (k-1)!! for even k.
                let exact = if k % 2 == 1 { 0.0 } else { (1..k).step_by(2).map(|j| j as f64).product() };
                assert!((got - exact).abs() <= 1e-10 * scale.max(1.0), "q={q} k={k} {got} {exact}");
            }
        }
    }

    #[test]
    fn convolution_examples() {
        let nu0 = cloud1(&[-1.0, 0.5, 2.0]);
        let c = convolve_gaussian(&nu0, &[0.7], &[0.0], 8).unwrap();
        let mean = c.integrate(|y| y[0]);
        assert!((mean - (nu0.mean()[0] + 0.7)).abs() < 1e-12);

        let c = convolve_gaussian(&EmpiricalMeasure::dirac(&[0.0]), &[0.0], &[0.3], 8).unwrap();
        assert!((c.integrate(|y| y[0] * y[0]) - 0.3).abs() < 1e-12);

        let s = 0.45;
        let x = -0.2;
        let c = convolve_gaussian(&nu0, &[x], &[s], 8).unwrap();
        let var0 = nu0.summary().covariance[0];
        let exact = var0 + (nu0.mean()[0] + x).powi(2) + s;
        let got = c.integrate(|y| y[0] * y[0]);
        assert!(((got - exact) / exact).abs() <= 1e-8);
        assert!(convolve_gaussian(&nu0, &[0.0], &[-1.0], 8).is_err());
    }

    #[test]
    fn convolution_two_dimensional() {
        let nu0 = EmpiricalMeasure::uniform(2, vec![0.0, 1.0, 2.0, -1.0]).unwrap();
        let cov = [0.5, 0.2, 0.2, 0.3];
        let c = convolve_gaussian(&nu0, &[0.1, 0.0], &cov, 6).unwrap();
        let exy = c.integrate(|y| y[0] * y[1]);
        // E[XY] = E[x0 y0] + cov_xy + shift terms
        let exact = nu0.expectation(|p| (p[0] + 0.1) * p[1]) + 0.2;
        assert!((exy - exact).abs() < 1e-12);
        assert!(convolve_gaussian(&nu0, &[0.0, 0.0], &[1.0, 0.5, 0.4, 1.0], 4).is_err());
    }

    #[test]
    fn gaussian_w2_matches_quantile_integral() {
        // Fine discretization of N(0,1) has W2 close to zero.
        let (z, w) = gauss_hermite(40);
        let mu = EmpiricalMeasure::from_flat(1, z, Some(w)).unwrap();
        let d = wasserstein2_sq_to_gaussian_1d(&mu, 0.0, 1.0).unwrap();
        assert!(d < 0.05);
        // Dirac at m against N(m, s): W2^2 = s.
        let d = wasserstein2_sq_to_gaussian_1d(&cloud1(&[0.4]), 0.4, 2.0).unwrap();
        assert!((d - 2.0).abs() < 1e-12);
    }

    #[test]
    fn csv_round_trip() {
        let m = EmpiricalMeasure::from_points(&[vec![0.5, 1.0], vec![-2.0, 3.25]], Some(&[1.0, 3.0])).unwrap();
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        let back = EmpiricalMeasure::read_csv(std::io::Cursor::new(buf)).unwrap();
        assert_eq!(back, m);
    }
}
