//! Forward simulation of the N-particle system with common noise:
//! Euler–Maruyama for the controlled system, the uncontrolled
//! McKean–Vlasov cloud, and interacting/decoupled pairs on shared noise.

mod noise;
mod policy;

use std::io::Write;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::measure::{EmpiricalMeasure, MeasureSummary};
use crate::model::{CoefficientSpec, Volatility};

pub use noise::{quenched_initials, NoiseBundle, NoiseKey};
pub use policy::{CommonStateFn, EmpiricalFn, OpenLoopFn, Policy, PolicyInput, RegressionFn};

/// Default ratio between the reference cloud and the system it stands in for.
pub const DEFAULT_REFERENCE_FACTOR: usize = 16;

/// Uniform grid `t_i = i T / n` on `[0, T]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    horizon: f64,
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(horizon: f64, n_steps: usize) -> Result<Self> {
        if !(horizon > 0.0) || !horizon.is_finite() {
            return Err(Error::invalid("horizon must be positive and finite"));
        }
        if n_steps == 0 {
            return Err(Error::invalid("n_steps must be positive"));
        }
        Ok(TimeGrid { horizon, n_steps })
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn dt(&self) -> f64 {
        self.horizon / self.n_steps as f64
    }

    pub fn time(&self, i: usize) -> f64 {
        if i == self.n_steps {
            self.horizon
        } else {
            self.horizon * i as f64 / self.n_steps as f64
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.n_steps).map(|i| self.time(i)).collect()
    }
}

/// Summary of an equal-weight cloud stored row-major.
pub fn summarize(dim: usize, points: &[f64]) -> MeasureSummary {
    let n = (points.len() / dim) as f64;
    let mut mean = vec![0.0; dim];
    for p in points.chunks_exact(dim) {
        for (m, x) in mean.iter_mut().zip(p) {
            *m += x;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut covariance = vec![0.0; dim * dim];
    for p in points.chunks_exact(dim) {
        for a in 0..dim {
            let da = p[a] - mean[a];
            for b in a..dim {
                covariance[a * dim + b] += da * (p[b] - mean[b]);
            }
        }
    }
    for a in 0..dim {
        for b in a..dim {
            covariance[a * dim + b] /= n;
            covariance[b * dim + a] = covariance[a * dim + b];
        }
    }
    MeasureSummary { mean, covariance }
}

/// Which drift moves the particles.
#[derive(Clone, Copy)]
pub(crate) enum Drive<'a> {
    /// `b0 + sigma0 b1(alpha)` with `alpha` from the policy.
    Controlled(&'a Policy),
    /// `b0` against the system's own empirical measure.
    Uncontrolled,
    /// `b0` against a prescribed flow of summaries (decoupled copies).
    Frozen(&'a [MeasureSummary]),
}

/// State of the engine at node `t_i`, before stepping.
pub(crate) struct StepView<'a> {
    pub step: usize,
    pub t: f64,
    pub states: &'a [f64],
    pub summary: &'a MeasureSummary,
    pub control: Option<&'a [f64]>,
    pub common: &'a [f64],
}

/// Euler–Maruyama with the measure frozen at the left endpoint. The observer
/// sees every node `0..=n`.
pub(crate) fn evolve(
    spec: &CoefficientSpec,
    noise: &NoiseBundle,
    drive: Drive<'_>,
    mut observer: impl FnMut(&StepView<'_>) -> Result<()>,
) -> Result<()> {
    let d = spec.dim;
    if noise.dim != d {
        return Err(Error::DimensionMismatch { expected: d, got: noise.dim });
    }
    let grid = noise.grid;
    let n = grid.n_steps();
    let dt = grid.dt();
    let np = noise.n_particles;
    if let Drive::Frozen(flow) = drive {
        if flow.len() < n {
            return Err(Error::DimensionMismatch { expected: n, got: flow.len() });
        }
    }
    let mut states = noise.initial.clone();
    let mut path = vec![0.0; (n + 1) * d];
    let mut shifted = vec![0.0; d];
    let mut common_state = vec![0.0; d];
    let mut alpha = vec![0.0; d];
    let mut b1 = vec![0.0; d];
    let mut push = vec![0.0; d];
    let mut drift = vec![0.0; d];
    let mut x = vec![0.0; d];
    let mut sig = vec![0.0; d * d];
    let mut sig0_db = vec![0.0; d];
    let const_sigma = match &spec.sigma {
        Volatility::Constant(m) => Some(m.clone()),
        Volatility::Custom(_) => None,
    };

    for i in 0..=n {
        let t = grid.time(i);
        let summary = summarize(d, &states);
        let control = match drive {
            Drive::Controlled(policy) if i < n => {
                let input = PolicyInput {
                    step: i,
                    t,
                    common_path: &path[..(i + 1) * d],
                    shifted_common: &shifted,
                    common_state: &common_state,
                    summary: &summary,
                };
                policy.act(&input, &spec.control, &mut alpha);
                if !spec.control.contains(&alpha) {
                    return Err(Error::OutsideControlSet(alpha.clone()));
                }
                Some(alpha.as_slice())
            }
            _ => None,
        };
        observer(&StepView {
            step: i,
            t,
            states: &states,
            summary: &summary,
            control,
            common: &path[i * d..(i + 1) * d],
        })?;
        if i == n {
            break;
        }

        let measure = match drive {
            Drive::Frozen(flow) => &flow[i],
            _ => &summary,
        };
        push.iter_mut().for_each(|v| *v = 0.0);
        if let Drive::Controlled(_) = drive {
            spec.b1(t, &summary, &alpha, &mut b1);
            for a in 0..d {
                push[a] = (0..d).map(|b| spec.sigma0[a * d + b] * b1[b]).sum();
            }
        }
        let db = noise.common_increment(i);
        for a in 0..d {
            sig0_db[a] = (0..d).map(|b| spec.sigma0[a * d + b] * db[b]).sum();
        }
        if let Some(m) = &const_sigma {
            sig.copy_from_slice(m);
        }
        for k in 0..np {
            x.copy_from_slice(&states[k * d..(k + 1) * d]);
            spec.b0(t, &x, measure, &mut drift);
            if const_sigma.is_none() {
                spec.sigma_at(t, &x, measure, &mut sig);
            }
            let dw = noise.idiosyncratic_increment(k, i);
            let row = &mut states[k * d..(k + 1) * d];
            for a in 0..d {
                let diffusion: f64 = (0..d).map(|b| sig[a * d + b] * dw[b]).sum();
                row[a] = x[a] + (drift[a] + push[a]) * dt + diffusion + sig0_db[a];
                if !row[a].is_finite() {
                    return Err(Error::BlowUp { step: i + 1 });
                }
            }
        }
        for a in 0..d {
            path[(i + 1) * d + a] = path[i * d + a] + db[a];
            shifted[a] += db[a];
            if let Drive::Controlled(_) = drive {
                shifted[a] += b1[a] * dt;
            }
        }
        for a in 0..d {
            common_state[a] = (0..d).map(|b| spec.sigma0[a * d + b] * shifted[b]).sum();
        }
    }
    Ok(())
}

/// Particle paths on the grid with the common-noise path and the applied
/// controls.
#[derive(Debug, Clone)]
pub struct ParticleTrajectory {
    pub grid: TimeGrid,
    pub n_particles: usize,
    pub dim: usize,
    /// `(n_steps + 1) x N x d`, step-major.
    pub states: Vec<f64>,
    /// `n_steps x d`; zero for uncontrolled systems.
    pub controls: Vec<f64>,
    /// `B_{t_i}`, `(n_steps + 1) x d`.
    pub common: Vec<f64>,
    pub noise: NoiseBundle,
}

impl ParticleTrajectory {
    pub fn states_at(&self, step: usize) -> &[f64] {
        let w = self.n_particles * self.dim;
        &self.states[step * w..(step + 1) * w]
    }

    pub fn state(&self, step: usize, particle: usize) -> &[f64] {
        let off = (step * self.n_particles + particle) * self.dim;
        &self.states[off..off + self.dim]
    }

    pub fn control_at(&self, step: usize) -> &[f64] {
        &self.controls[step * self.dim..(step + 1) * self.dim]
    }

    pub fn terminal_states(&self) -> &[f64] {
        self.states_at(self.grid.n_steps())
    }

    /// `mu^N_{t_i}`.
    pub fn measure_at(&self, step: usize) -> EmpiricalMeasure {
        EmpiricalMeasure::uniform(self.dim, self.states_at(step).to_vec()).expect("trajectory states are finite")
    }

    pub fn summary_at(&self, step: usize) -> MeasureSummary {
        summarize(self.dim, self.states_at(step))
    }

    /// CSV rows `replication,particle,time,x1..xd`.
    pub fn write_csv<W: Write>(&self, mut out: W, header: bool) -> Result<()> {
        if header {
            let coords: Vec<String> = (1..=self.dim).map(|a| format!("x{a}")).collect();
            writeln!(out, "replication,particle,time,{}", coords.join(","))?;
        }
        for i in 0..=self.grid.n_steps() {
            let t = self.grid.time(i);
            for k in 0..self.n_particles {
                let coords: Vec<String> = self.state(i, k).iter().map(|x| format!("{x}")).collect();
                writeln!(out, "{},{},{},{}", self.noise.key.replication, k, t, coords.join(","))?;
            }
        }
        Ok(())
    }
}

fn check_sizes(n: usize, grid: &TimeGrid, noise: &NoiseBundle) -> Result<()> {
    if n == 0 {
        return Err(Error::invalid("N must be at least 1"));
    }
    if noise.n_particles != n {
        return Err(Error::DimensionMismatch { expected: n, got: noise.n_particles });
    }
    if noise.grid != *grid {
        return Err(Error::invalid("noise bundle was generated on a different grid"));
    }
    Ok(())
}

fn record(spec: &CoefficientSpec, n: usize, grid: &TimeGrid, noise: &NoiseBundle, drive: Drive<'_>) -> Result<ParticleTrajectory> {
    check_sizes(n, grid, noise)?;
    let d = spec.dim;
    let steps = grid.n_steps();
    let mut states = Vec::with_capacity((steps + 1) * n * d);
    let mut controls = vec![0.0; steps * d];
    let mut common = Vec::with_capacity((steps + 1) * d);
    evolve(spec, noise, drive, |v| {
        states.extend_from_slice(v.states);
        common.extend_from_slice(v.common);
        if let Some(a) = v.control {
            controls[v.step * d..(v.step + 1) * d].copy_from_slice(a);
        }
        Ok(())
    })?;
    Ok(ParticleTrajectory { grid: *grid, n_particles: n, dim: d, states, controls, common, noise: noise.clone() })
}

/// The controlled N-particle system: every particle receives the same
/// control, computed from the policy before each step.
pub fn simulate_controlled_system(
    spec: &CoefficientSpec,
    policy: &Policy,
    n: usize,
    grid: &TimeGrid,
    noise: &NoiseBundle,
) -> Result<ParticleTrajectory> {
    record(spec, n, grid, noise, Drive::Controlled(policy))
}

/// The uncontrolled cloud driven by `b0` only; approximates the conditional
/// law given the common path.
pub fn simulate_mkv_cloud(spec: &CoefficientSpec, n: usize, grid: &TimeGrid, noise: &NoiseBundle) -> Result<ParticleTrajectory> {
    record(spec, n, grid, noise, Drive::Uncontrolled)
}

/// Interacting system and decoupled copies on the same noise. The copies
/// follow `b0` evaluated against a reference cloud of `reference_factor * N`
/// particles sharing the common noise.
pub fn simulate_coupled_clouds(
    spec: &CoefficientSpec,
    n: usize,
    grid: &TimeGrid,
    noise: &NoiseBundle,
    reference_factor: usize,
) -> Result<(ParticleTrajectory, ParticleTrajectory)> {
    check_sizes(n, grid, noise)?;
    let interacting = simulate_mkv_cloud(spec, n, grid, noise)?;
    let flow = reference_flow(spec, n * reference_factor.max(1), noise)?;
    let decoupled = record(spec, n, grid, noise, Drive::Frozen(&flow))?;
    Ok((interacting, decoupled))
}

/// Summaries of a reference cloud that shares `noise`'s common increments.
pub fn reference_flow(spec: &CoefficientSpec, n_ref: usize, noise: &NoiseBundle) -> Result<Vec<MeasureSummary>> {
    let reference = NoiseBundle::generate_reference(noise.key, &spec.initial, n_ref, spec.dim, noise.grid);
    debug_assert_eq!(reference.common, noise.common);
    let mut flow = Vec::with_capacity(noise.grid.n_steps() + 1);
    evolve(spec, &reference, Drive::Uncontrolled, |v| {
        flow.push(v.summary.clone());
        Ok(())
    })?;
    Ok(flow)
}

/// Left-endpoint quadrature of `int L dt` plus `g(mu^N_T)` along one
/// trajectory, using the controls it recorded.
pub fn estimate_reward(spec: &CoefficientSpec, trajectory: &ParticleTrajectory) -> f64 {
    let dt = trajectory.grid.dt();
    let n = trajectory.grid.n_steps();
    let mut total = 0.0;
    for i in 0..n {
        let t = trajectory.grid.time(i);
        total += (spec.l0(t, trajectory.control_at(i)) + spec.state_reward_points(trajectory.states_at(i))) * dt;
    }
    total + spec.terminal_reward_points(trajectory.terminal_states())
}

/// Reward of one replication simulated without storing the paths.
pub fn simulate_reward(spec: &CoefficientSpec, policy: &Policy, noise: &NoiseBundle) -> Result<f64> {
    let grid = noise.grid;
    let dt = grid.dt();
    let n = grid.n_steps();
    let mut total = 0.0;
    evolve(spec, noise, Drive::Controlled(policy), |v| {
        if v.step < n {
            let a = v.control.expect("controlled drive");
            total += (spec.l0(v.t, a) + spec.state_reward_points(v.states)) * dt;
        } else {
            total += spec.terminal_reward_points(v.states);
        }
        Ok(())
    })?;
    Ok(total)
}

/// Runs `f(replication)` for `0..m` in parallel and returns results in
/// replication order.
pub fn replicate<T, F>(m: usize, f: F) -> Result<Vec<T>>
where
    T: Send,
    F: Fn(u64) -> Result<T> + Sync + Send,
{
    (0..m as u64).into_par_iter().map(f).collect()
}

/// Sample mean and standard error.
pub fn mean_stderr(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Cylindrical, InitialLaw, ModelParams, Observable};

    fn grid() -> TimeGrid {
        TimeGrid::new(1.0, 20).unwrap()
    }

    #[test]
    fn grid_nodes() {
        let g = grid();
        assert_eq!(g.time(0), 0.0);
        assert_eq!(g.time(20), 1.0);
        assert!(g.times().windows(2).all(|w| w[1] > w[0]));
        assert!(TimeGrid::new(0.0, 3).is_err());
        assert!(TimeGrid::new(1.0, 0).is_err());
    }

    #[test]
    fn frozen_particles_without_coefficients() {
        let spec = CoefficientSpec { initial: InitialLaw::gaussian_1d(0.0, 1.0), ..CoefficientSpec::zero_1d(1.0) };
        let noise = NoiseBundle::generate(NoiseKey::new(3, 0), &spec.initial, 5, 1, grid());
        let traj = simulate_controlled_system(&spec, &Policy::zero(1), 5, &grid(), &noise).unwrap();
        assert_eq!(traj.terminal_states(), noise.initial.as_slice());
    }

    #[test]
    fn deterministic_ode() {
        let spec = CoefficientSpec {
            sigma0: vec![1.0],
            initial: InitialLaw::gaussian_1d(0.0, 1.0),
            ..CoefficientSpec::zero_1d(2.0)
        };
        // sigma0 = 1 must not inject noise here, so zero the common increments.
        let mut noise = NoiseBundle::generate(NoiseKey::new(4, 0), &spec.initial, 3, 1, grid());
        noise.common.iter_mut().for_each(|v| *v = 0.0);
        let traj = simulate_controlled_system(&spec, &Policy::Constant(vec![1.0]), 3, &grid(), &noise).unwrap();
        for k in 0..3 {
            assert!((traj.state(20, k)[0] - (noise.initial[k] + 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn mkv_cloud_is_translated_by_common_noise() {
        let spec = CoefficientSpec {
            sigma0: vec![1.0],
            initial: InitialLaw::gaussian_1d(0.0, 1.0),
            ..CoefficientSpec::zero_1d(1.0)
        };
        let noise = NoiseBundle::generate(NoiseKey::new(5, 2), &spec.initial, 4, 1, grid());
        let traj = simulate_mkv_cloud(&spec, 4, &grid(), &noise).unwrap();
        let b_t = traj.common[20];
        for k in 0..4 {
            assert!((traj.state(20, k)[0] - noise.initial[k] - b_t).abs() < 1e-12);
        }
    }

    #[test]
    fn coupled_clouds_coincide_without_interaction() {
        let spec = ModelParams::preset("lq").unwrap().spec().unwrap();
        let noise = NoiseBundle::generate(NoiseKey::new(9, 0), &spec.initial, 16, 1, grid());
        let (a, b) = simulate_coupled_clouds(&spec, 16, &grid(), &noise, 4).unwrap();
        assert_eq!(a.states, b.states);
    }

    #[test]
    fn reward_examples() {
        let spec = CoefficientSpec { initial: InitialLaw::gaussian_1d(0.5, 1.0), ..CoefficientSpec::zero_1d(1.0) };
        let noise = NoiseBundle::generate(NoiseKey::new(1, 0), &spec.initial, 7, 1, grid());
        let traj = simulate_controlled_system(&spec, &Policy::zero(1), 7, &grid(), &noise).unwrap();
        assert_eq!(estimate_reward(&spec, &traj), 0.0);

        let spec = CoefficientSpec { terminal_reward: Some(Cylindrical::linear(Observable::Coordinate(0))), ..spec };
        let traj = simulate_controlled_system(&spec, &Policy::zero(1), 7, &grid(), &noise).unwrap();
        let mean = noise.initial.iter().sum::<f64>() / 7.0;
        assert!((estimate_reward(&spec, &traj) - mean).abs() < 1e-14);
        assert_eq!(simulate_reward(&spec, &Policy::zero(1), &noise).unwrap(), estimate_reward(&spec, &traj));
    }

    #[test]
    fn csv_export_has_one_row_per_node_and_particle() {
        let spec = CoefficientSpec::zero_1d(1.0);
        let g = TimeGrid::new(1.0, 2).unwrap();
        let noise = NoiseBundle::generate(NoiseKey::new(1, 0), &spec.initial, 2, 1, g);
        let traj = simulate_mkv_cloud(&spec, 2, &g, &noise).unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf, true).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 3 * 2);
        assert!(text.starts_with("replication,particle,time,x1\n"));
    }
}
