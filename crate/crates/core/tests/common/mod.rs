#![allow(dead_code)]

use std::sync::Arc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use mfc_lab::bsde::BsdeSolution;
use mfc_lab::measure::{wasserstein2_assignment, wasserstein_p_1d, EmpiricalMeasure, MeasureSummary};
use mfc_lab::model::CoefficientSpec;
use mfc_lab::particle::{mean_stderr, replicate, simulate_controlled_system, simulate_reward, NoiseBundle, NoiseKey, Policy, TimeGrid};

pub type Check = Result<(), String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Check {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut p: Vec<usize> = (0..n).collect();
    fn heap(k: usize, p: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if k <= 1 {
            out.push(p.clone());
            return;
        }
        for i in 0..k {
            heap(k - 1, p, out);
            let j = if k.is_multiple_of(2) { i } else { 0 };
            p.swap(j, k - 1);
        }
    }
    heap(n, &mut p, &mut out);
    out
}

/// `W2` by enumerating every matching of two equal-size clouds.
pub fn brute_force_w2(dim: usize, x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() / dim;
    let best = permutations(n)
        .iter()
        .map(|perm| {
            (0..n)
                .map(|i| (0..dim).map(|a| (x[i * dim + a] - y[perm[i] * dim + a]).powi(2)).sum::<f64>())
                .sum::<f64>()
        })
        .fold(f64::INFINITY, f64::min);
    (best / n as f64).sqrt()
}

/// Metric axioms of `W2` on three equal-size 1-D clouds, agreement of the
/// quantile and assignment solvers, and of both with brute force when small.
pub fn w2_axioms(x: &[f64], y: &[f64], z: &[f64]) -> Check {
    let m = |p: &[f64]| EmpiricalMeasure::uniform(1, p.to_vec()).map_err(|e| e.to_string());
    let (mx, my, mz) = (m(x)?, m(y)?, m(z)?);
    let w = |a: &EmpiricalMeasure, b: &EmpiricalMeasure| wasserstein_p_1d(a, b, 2.0).map_err(|e| e.to_string());
    let dxy = w(&mx, &my)?;
    let dyx = w(&my, &mx)?;
    let dyz = w(&my, &mz)?;
    let dxz = w(&mx, &mz)?;
    ensure(w(&mx, &mx)? == 0.0, || "W2(mu, mu) != 0".into())?;
    ensure(dxy >= 0.0, || format!("negative distance {dxy}"))?;
    ensure((dxy - dyx).abs() <= 1e-12 * (1.0 + dxy), || format!("asymmetric: {dxy} vs {dyx}"))?;
    ensure(dxz <= dxy + dyz + 1e-9, || format!("triangle: {dxz} > {dxy} + {dyz}"))?;
    let assign = wasserstein2_assignment(&mx, &my).map_err(|e| e.to_string())?;
    ensure((assign - dxy).abs() <= 1e-9 * (1.0 + dxy), || format!("assignment {assign} vs quantile {dxy}"))?;
    if x.len() <= 6 {
        let brute = brute_force_w2(1, x, y);
        ensure((brute - dxy).abs() <= 1e-9 * (1.0 + dxy), || format!("brute force {brute} vs quantile {dxy}"))?;
    }
    Ok(())
}

/// Assignment solver against brute force in `dim` dimensions (N <= 6).
pub fn assignment_matches_brute_force(dim: usize, x: &[f64], y: &[f64]) -> Check {
    let mx = EmpiricalMeasure::uniform(dim, x.to_vec()).map_err(|e| e.to_string())?;
    let my = EmpiricalMeasure::uniform(dim, y.to_vec()).map_err(|e| e.to_string())?;
    let assign = wasserstein2_assignment(&mx, &my).map_err(|e| e.to_string())?;
    let brute = brute_force_w2(dim, x, y);
    ensure((assign - brute).abs() <= 1e-9 * (1.0 + brute), || format!("assignment {assign} vs brute force {brute}"))
}

fn affine(spec: &CoefficientSpec, mu: &MeasureSummary, a: f64, z: f64) -> f64 {
    let mut b1 = [0.0];
    spec.b1(0.0, mu, &[a], &mut b1);
    spec.l0(0.0, &[a]) + b1[0] * z
}

/// `H0(z) >= L0(a) + b1(a) z` for every candidate control, with equality at
/// the reported maximizer, and `dH0/dz = b1(a*)`.
pub fn hamiltonian_envelope(spec: &CoefficientSpec, z: f64, candidates: &[f64]) -> Check {
    let mu = MeasureSummary::point(&[0.0]);
    let h = spec.h0(0.0, &mu, &[z]);
    let tol = 1e-12 * (1.0 + h.value.abs());
    for &a in candidates {
        let v = affine(spec, &mu, a, z);
        ensure(v <= h.value + tol, || format!("control {a} beats H0({z}) = {}: {v}", h.value))?;
    }
    let attained = affine(spec, &mu, h.argmax[0], z);
    ensure((attained - h.value).abs() <= tol, || format!("argmax value {attained} vs H0 {}", h.value))?;
    let e = 1e-6;
    let slope = (spec.h0(0.0, &mu, &[z + e]).value - spec.h0(0.0, &mu, &[z - e]).value) / (2.0 * e);
    let mut b1 = [0.0];
    spec.b1(0.0, &mu, &h.argmax, &mut b1);
    ensure((slope - b1[0]).abs() <= 1e-4 * (1.0 + b1[0].abs()), || format!("dH0/dz {slope} vs b1(a*) {}", b1[0]))
}

/// `H0(l z1 + (1 - l) z2) <= l H0(z1) + (1 - l) H0(z2)`.
pub fn hamiltonian_convexity(spec: &CoefficientSpec, z1: f64, z2: f64, l: f64) -> Check {
    let mu = MeasureSummary::point(&[0.0]);
    let h = |z: f64| spec.h0(0.0, &mu, &[z]).value;
    let mid = h(l * z1 + (1.0 - l) * z2);
    let chord = l * h(z1) + (1.0 - l) * h(z2);
    ensure(mid <= chord + 1e-12 * (1.0 + chord.abs()), || format!("H0 not convex between {z1} and {z2}: {mid} > {chord}"))
}

/// Relabelling the particles' streams relabels the trajectory and leaves
/// the reward unchanged.
pub fn exchangeable(spec: &CoefficientSpec, policy: &Policy, n: usize, grid: TimeGrid, seed: u64, perm: &[usize]) -> Check {
    let noise = NoiseBundle::generate(NoiseKey::new(seed, 0), &spec.initial, n, spec.dim, grid);
    let permuted = noise.permute(perm);
    let a = simulate_controlled_system(spec, policy, n, &grid, &noise).map_err(|e| e.to_string())?;
    let b = simulate_controlled_system(spec, policy, n, &grid, &permuted).map_err(|e| e.to_string())?;
    for step in 0..=grid.n_steps() {
        for (j, &src) in perm.iter().enumerate() {
            let (xa, xb) = (a.state(step, src), b.state(step, j));
            for (u, v) in xa.iter().zip(xb) {
                ensure((u - v).abs() <= 1e-10 * (1.0 + u.abs()), || format!("step {step}, particle {j}: {v} vs {u}"))?;
            }
        }
    }
    let ra = simulate_reward(spec, policy, &noise).map_err(|e| e.to_string())?;
    let rb = simulate_reward(spec, policy, &permuted).map_err(|e| e.to_string())?;
    ensure((ra - rb).abs() <= 1e-10 * (1.0 + ra.abs()), || format!("reward {ra} vs {rb} after relabelling"))
}

/// Two runs from the same seed are bitwise identical.
pub fn same_seed_deterministic(spec: &CoefficientSpec, policy: &Policy, n: usize, grid: TimeGrid, seed: u64) -> Check {
    let run = || {
        let noise = NoiseBundle::generate(NoiseKey::new(seed, 7), &spec.initial, n, spec.dim, grid);
        simulate_controlled_system(spec, policy, n, &grid, &noise).map_err(|e| e.to_string())
    };
    let (a, b) = (run()?, run()?);
    ensure(a.states == b.states && a.common == b.common && a.controls == b.controls, || "same seed, different paths".into())
}

/// `Y_T = g(mu_T)` exactly on every path and every step's martingale
/// residual within `k` standard errors of zero.
pub fn bsde_terminal_and_martingale(sol: &BsdeSolution, k: f64) -> Check {
    ensure(sol.terminal_residual == 0.0, || format!("terminal residual {}", sol.terminal_residual))?;
    for d in &sol.diagnostics {
        ensure(d.residual_ok(k), || {
            format!("step {}: residual mean {:.3e} with stderr {:.3e}", d.step, d.residual_mean, d.residual_stderr)
        })?;
    }
    Ok(())
}

/// A random admissible policy for a 1-D control set `[-a_max, a_max]`.
pub fn random_policy(rng: &mut ChaCha8Rng, a_max: f64) -> (String, Policy) {
    match rng.random_range(0..4) {
        0 => {
            let a = rng.random_range(-a_max..=a_max);
            (format!("constant {a:.3}"), Policy::Constant(vec![a]))
        }
        1 => {
            let (k, c) = (rng.random_range(0.0..3.0), rng.random_range(-1.0..1.0));
            (
                format!("mean feedback -{k:.3} (m - {c:.3})"),
                Policy::EmpiricalFeedback(Arc::new(move |_, s, out| out[0] = -k * (s.mean[0] - c))),
            )
        }
        2 => {
            let (amp, w, phase) = (rng.random_range(0.0..a_max), rng.random_range(0.0..10.0), rng.random_range(0.0..6.3));
            (
                format!("open loop {amp:.3} sin({w:.3} t + {phase:.3})"),
                Policy::OpenLoopPiecewise(Arc::new(move |_, t, _, out| out[0] = amp * (w * t + phase).sin())),
            )
        }
        _ => {
            let k = rng.random_range(0.0..3.0);
            (
                format!("common-state feedback -{k:.3} X0"),
                Policy::CommonStateFeedback(Arc::new(move |_, x0, out| out[0] = -k * x0[0])),
            )
        }
    }
}

/// `J^N(policy) <= Y0 + tol` with `tol` three combined standard errors
/// plus `slack`.
#[allow(clippy::too_many_arguments)]
pub fn suboptimal(
    spec: &CoefficientSpec,
    y0: (f64, f64),
    policy: &Policy,
    n: usize,
    m: usize,
    grid: TimeGrid,
    seed: u64,
    slack: f64,
) -> Result<(f64, f64), String> {
    let rewards = replicate(m, |j| {
        let noise = NoiseBundle::generate(NoiseKey::new(seed, j), &spec.initial, n, spec.dim, grid);
        simulate_reward(spec, policy, &noise)
    })
    .map_err(|e| e.to_string())?;
    let (j, se) = mean_stderr(&rewards);
    let tol = 3.0 * (se * se + y0.1 * y0.1).sqrt() + slack;
    ensure(j <= y0.0 + tol, || format!("J = {j:.5} +- {se:.5} exceeds Y0 = {:.5} by more than {tol:.5}", y0.0))?;
    Ok((j, se))
}
