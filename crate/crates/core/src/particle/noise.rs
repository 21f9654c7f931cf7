use crate::error::{Error, Result};
use crate::model::InitialLaw;
use crate::rng::{fill_normal, stream, StreamRole};

use super::TimeGrid;

/// Seeds of the three noise families of one replication.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NoiseKey {
    pub common: u64,
    pub idiosyncratic: u64,
    pub initial: u64,
    pub replication: u64,
}

impl NoiseKey {
    /// All families derived from one seed.
    pub fn new(seed: u64, replication: u64) -> Self {
        NoiseKey { common: seed, idiosyncratic: seed, initial: seed, replication }
    }

    pub fn with_idiosyncratic_seed(self, seed: u64) -> Self {
        NoiseKey { idiosyncratic: seed, ..self }
    }
}

/// Materialized noise of one replication: common increments `dB_i`,
/// idiosyncratic increments `dW^k_i` and initial draws `xi_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseBundle {
    pub key: NoiseKey,
    pub n_particles: usize,
    pub dim: usize,
    pub grid: TimeGrid,
    /// `n_steps x d`
    pub common: Vec<f64>,
    /// `N x n_steps x d`, particle-major.
    pub idiosyncratic: Vec<f64>,
    /// `N x d`
    pub initial: Vec<f64>,
}

impl NoiseBundle {
    /// Regenerates the bundle from its key alone.
    pub fn generate(key: NoiseKey, initial: &InitialLaw, n_particles: usize, dim: usize, grid: TimeGrid) -> Self {
        Self::generate_roles(key, initial, n_particles, dim, grid, StreamRole::Idiosyncratic, StreamRole::Initial)
    }

    /// Reference-cloud bundle: same common increments as [`NoiseBundle::generate`],
    /// particle streams from the reference roles.
    pub fn generate_reference(
        key: NoiseKey,
        initial: &InitialLaw,
        n_particles: usize,
        dim: usize,
        grid: TimeGrid,
    ) -> Self {
        Self::generate_roles(
            key,
            initial,
            n_particles,
            dim,
            grid,
            StreamRole::ReferenceIdiosyncratic,
            StreamRole::ReferenceInitial,
        )
    }

    fn generate_roles(
        key: NoiseKey,
        initial: &InitialLaw,
        n_particles: usize,
        dim: usize,
        grid: TimeGrid,
        idio_role: StreamRole,
        init_role: StreamRole,
    ) -> Self {
        let n = grid.n_steps();
        let dt = grid.dt();
        let mut common = vec![0.0; n * dim];
        fill_normal(&mut stream(key.common, StreamRole::Common, key.replication, 0), dt, &mut common);
        let mut idiosyncratic = vec![0.0; n_particles * n * dim];
        for (k, chunk) in idiosyncratic.chunks_exact_mut(n * dim).enumerate() {
            fill_normal(&mut stream(key.idiosyncratic, idio_role, key.replication, k as u64), dt, chunk);
        }
        let mut init = vec![0.0; n_particles * dim];
        for (k, chunk) in init.chunks_exact_mut(dim).enumerate() {
            initial.sample(&mut stream(key.initial, init_role, key.replication, k as u64), chunk);
        }
        NoiseBundle { key, n_particles, dim, grid, common, idiosyncratic, initial: init }
    }

    /// Replaces the initial draws (quenched initials).
    pub fn with_initial_points(mut self, points: &[f64]) -> Result<Self> {
        if points.len() != self.n_particles * self.dim {
            return Err(Error::DimensionMismatch { expected: self.n_particles * self.dim, got: points.len() });
        }
        self.initial.copy_from_slice(points);
        Ok(self)
    }

    /// Particle `j` of the result carries the streams of particle `perm[j]`.
    pub fn permute(&self, perm: &[usize]) -> Self {
        let n = self.grid.n_steps();
        let d = self.dim;
        let mut out = self.clone();
        for (j, &src) in perm.iter().enumerate() {
            out.idiosyncratic[j * n * d..(j + 1) * n * d]
                .copy_from_slice(&self.idiosyncratic[src * n * d..(src + 1) * n * d]);
            out.initial[j * d..(j + 1) * d].copy_from_slice(&self.initial[src * d..(src + 1) * d]);
        }
        out
    }

    pub fn common_increment(&self, step: usize) -> &[f64] {
        &self.common[step * self.dim..(step + 1) * self.dim]
    }

    pub fn idiosyncratic_increment(&self, particle: usize, step: usize) -> &[f64] {
        let n = self.grid.n_steps();
        let off = (particle * n + step) * self.dim;
        &self.idiosyncratic[off..off + self.dim]
    }

    /// `sum_k dW^k_i`.
    pub fn idiosyncratic_sum(&self, step: usize, out: &mut [f64]) {
        out.iter_mut().for_each(|v| *v = 0.0);
        for k in 0..self.n_particles {
            for (o, w) in out.iter_mut().zip(self.idiosyncratic_increment(k, step)) {
                *o += w;
            }
        }
    }
}

/// Draws `n` quenched initial points from `nu0` (one fixed draw per seed).
pub fn quenched_initials(seed: u64, initial: &InitialLaw, n: usize, dim: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * dim];
    for (k, chunk) in out.chunks_exact_mut(dim).enumerate() {
        initial.sample(&mut stream(seed, StreamRole::Quenched, n as u64, k as u64), chunk);
    }
    out
}
