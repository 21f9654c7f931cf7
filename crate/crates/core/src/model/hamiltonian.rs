use crate::measure::{EmpiricalMeasure, MeasureSummary};

use super::CoefficientSpec;

pub const DEFAULT_GRID_POINTS: usize = 101;

/// `sup_a (L(t, mu, a) + b1(t, mu, a) . z)` and a maximizer.
#[derive(Debug, Clone, PartialEq)]
pub struct HamiltonianValue {
    pub value: f64,
    pub argmax: Vec<f64>,
}

impl CoefficientSpec {
    /// Control part `H0(t, mu, z) = sup_a (L0(t, a) + b1(t, mu, a) . z)`.
    ///
    /// Closed form when [`CoefficientSpec::quadratic_control`] applies,
    /// grid search over the box otherwise.
    pub fn h0(&self, t: f64, mu: &MeasureSummary, z: &[f64]) -> HamiltonianValue {
        match self.quadratic_control() {
            Some((s, w)) => {
                let mut a: Vec<f64> = z.iter().map(|zi| s * zi / w).collect();
                self.control.clamp(&mut a);
                let value = a.iter().zip(z).map(|(ai, zi)| s * ai * zi - 0.5 * w * ai * ai).sum();
                HamiltonianValue { value, argmax: a }
            }
            None => self.h0_grid(t, mu, z, self.grid_points),
        }
    }

    /// Grid search with `points` nodes per axis. Ties go to the
    /// lexicographically smallest control.
    pub fn h0_grid(&self, t: f64, mu: &MeasureSummary, z: &[f64], points: usize) -> HamiltonianValue {
        let d = self.control.dim();
        let points = points.max(1);
        let total = points.pow(d as u32);
        let mut a = vec![0.0; d];
        let mut b1 = vec![0.0; z.len()];
        let mut best = HamiltonianValue { value: f64::NEG_INFINITY, argmax: self.control.lo.clone() };
        for flat in 0..total {
            // First coordinate varies slowest, so iteration is lexicographic.
            let mut idx = flat;
            for axis in (0..d).rev() {
                let k = idx % points;
                idx /= points;
                let (lo, hi) = (self.control.lo[axis], self.control.hi[axis]);
                a[axis] = if points == 1 { lo } else { lo + (hi - lo) * k as f64 / (points - 1) as f64 };
            }
            self.b1(t, mu, &a, &mut b1);
            let v = self.l0(t, &a) + b1.iter().zip(z).map(|(b, zi)| b * zi).sum::<f64>();
            if v > best.value {
                best.value = v;
                best.argmax.copy_from_slice(&a);
            }
        }
        best
    }

    /// Full Hamiltonian `F(mu) + H0(t, mu, z)`.
    pub fn hamiltonian(&self, t: f64, mu: &EmpiricalMeasure, z: &[f64]) -> HamiltonianValue {
        let mut h = self.h0(t, &mu.summary(), z);
        h.value += self.state_reward_at(mu);
        h
    }

    /// `D_z H0` and `D_zz H0` for scalar `z` (used by the PDE solvers).
    ///
    /// By the envelope theorem `D_z H0 = b1(a*)`. The second derivative is
    /// `s^2 / w` at interior optima and zero once the control saturates; for
    /// non-quadratic models it is a central difference of `D_z H0`.
    pub fn h0_derivatives_1d(&self, t: f64, mu: &MeasureSummary, z: f64) -> (f64, f64, f64) {
        let h = self.h0(t, mu, &[z]);
        let mut b1 = [0.0];
        self.b1(t, mu, &h.argmax, &mut b1);
        let second = match self.quadratic_control() {
            Some((s, w)) => {
                let raw = s * z / w;
                if raw > self.control.lo[0] && raw < self.control.hi[0] {
                    s * s / w
                } else {
                    0.0
                }
            }
            None => {
                let eps = 1e-4 * (1.0 + z.abs());
                let mut up = [0.0];
                let mut down = [0.0];
                self.b1(t, mu, &self.h0(t, mu, &[z + eps]).argmax, &mut up);
                self.b1(t, mu, &self.h0(t, mu, &[z - eps]).argmax, &mut down);
                (up[0] - down[0]) / (2.0 * eps)
            }
        };
        (h.value, b1[0], second)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ControlCost, Cylindrical};

    fn quad(a_max: f64) -> CoefficientSpec {
        CoefficientSpec::zero_1d(a_max)
    }

    #[test]
    fn closed_form_examples() {
        let spec = CoefficientSpec {
            state_reward: Some(Cylindrical::constant(0.3)),
            ..quad(1.0)
        };
        let mu = EmpiricalMeasure::dirac(&[0.0]);
        let h = spec.hamiltonian(0.0, &mu, &[0.0]);
        assert_eq!(h.value, 0.3);
        assert_eq!(h.argmax, vec![0.0]);

        let spec = quad(1.0);
        let s = MeasureSummary::point(&[0.0]);
        let h = spec.h0(0.0, &s, &[0.5]);
        assert!((h.value - 0.125).abs() < 1e-15);
        assert_eq!(h.argmax, vec![0.5]);
        let g = spec.h0_grid(0.0, &s, &[0.5], 10001);
        assert!((g.value - 0.125).abs() < 1e-6);
        assert!((g.argmax[0] - 0.5).abs() < 1e-6);

        let h = spec.h0(0.0, &s, &[2.0]);
        assert!((h.value - 1.5).abs() < 1e-15);
        assert_eq!(h.argmax, vec![1.0]);
        let g = spec.h0_grid(0.0, &s, &[2.0], 10001);
        assert!((g.value - 1.5).abs() < 1e-6);
    }

    #[test]
    fn grid_ties_pick_smallest() {
        // L0 = 0, b1 = a, z = 0: every control is optimal.
        let spec = CoefficientSpec {
            control_cost: ControlCost::Custom(std::sync::Arc::new(|_, _| 0.0)),
            ..quad(1.0)
        };
        let h = spec.h0(0.0, &MeasureSummary::point(&[0.0]), &[0.0]);
        assert_eq!(h.argmax, vec![-1.0]);
    }

    #[test]
    fn derivatives_1d() {
        let spec = quad(1.0);
        let s = MeasureSummary::point(&[0.0]);
        let (v, d1, d2) = spec.h0_derivatives_1d(0.0, &s, 0.4);
        assert!((v - 0.08).abs() < 1e-15);
        assert_eq!((d1, d2), (0.4, 1.0));
        let (_, d1, d2) = spec.h0_derivatives_1d(0.0, &s, 3.0);
        assert_eq!((d1, d2), (1.0, 0.0));
    }
}
