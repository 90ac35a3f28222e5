//! Euler-Maruyama simulation of the moderately interacting particle system
//! and of its mean-field copies.
//!
//! Particle `(alpha, i)` moves by
//!
//! ```text
//! dX = -(1/N) sum_beta a_ab sum_j grad(V * chi_eps)(X_ai - X_bj) dt + sqrt(2 sigma_a) dB_ai
//! ```
//!
//! and its copy `X~` replaces the empirical interaction by the convolution
//! with a field `f~_beta` computed on a grid, driven by the same `B_ai` and
//! started from the same initial position.

mod coupled;
mod forces;

pub use coupled::{
    drift_from_field, reset_wrap_counter, simulate_coupled, wrapped_evaluations, CoupledRun,
    DriftTimeline,
};
pub use forces::{compute_drift, DriftEngine};

use std::sync::Arc;

use crate::exec::{map_indexed, Execution};
use crate::kernels::{InteractionMatrix, KernelTable, MollifierSpec, RieszSpec};
use crate::rng::{brownian_increment, particle_stream, DOMAIN_INITIAL};
use crate::{Error, Result};

/// Largest admissible `dt / eps^(s+2)`.
pub const DT_CAP_FACTOR: f64 = 0.1;
/// Particles farther than this many box half-widths abort the run.
pub const INSTABILITY_FACTOR: f64 = 1e3;

/// Isotropic Gaussian truncated at `cutoff` around `center`, renormalized.
#[derive(Debug, Clone, PartialEq)]
pub struct InitialDensity {
    pub center: Vec<f64>,
    pub width: f64,
    pub cutoff: f64,
}

impl InitialDensity {
    /// Truncation at six widths.
    pub fn gaussian(center: Vec<f64>, width: f64) -> Self {
        Self {
            center,
            width,
            cutoff: 6.0 * width,
        }
    }

    fn validate(&self, d: usize) -> Result<()> {
        if self.center.len() != d {
            return Err(Error::param(format!(
                "initial center has {} coordinates, expected {d}",
                self.center.len()
            )));
        }
        if !(self.width >= 0.0 && self.width.is_finite()) || !(self.cutoff > 0.0 || self.width == 0.0) {
            return Err(Error::param(format!(
                "initial width must be >= 0 and cutoff > 0, got width {} and cutoff {}",
                self.width, self.cutoff
            )));
        }
        Ok(())
    }

    fn sample(&self, stream: &mut crate::rng::ParticleStream, out: &mut [f64]) {
        if self.width == 0.0 {
            out.copy_from_slice(&self.center);
            return;
        }
        let c2 = self.cutoff * self.cutoff;
        loop {
            let mut r2 = 0.0;
            for (o, c) in out.iter_mut().zip(&self.center) {
                let z = self.width * stream.normal();
                r2 += z * z;
                *o = c + z;
            }
            if r2 <= c2 {
                return;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpeciesConfig {
    /// Diffusion coefficient `sigma_alpha > 0`.
    pub sigma: f64,
    pub init: InitialDensity,
}

/// Everything needed to run the particle system.
#[derive(Debug, Clone)]
pub struct SimConfig {
    pub riesz: RieszSpec,
    pub moll: MollifierSpec,
    pub a: InteractionMatrix,
    pub species: Vec<SpeciesConfig>,
    /// Particles per species, `N`.
    pub n_particles: usize,
    pub dt: f64,
    pub t_end: f64,
    pub seed: u64,
    /// Half-width of the comparison box; sets the instability threshold.
    pub box_half_width: f64,
    /// Times at which snapshots are kept (rounded up to step boundaries);
    /// `t_end` is always kept.
    pub output_times: Vec<f64>,
    pub exec: Execution,
}

impl SimConfig {
    /// Stability cap `0.1 eps^(s+2)` on the time step.
    pub fn dt_cap(&self) -> f64 {
        dt_cap(self.moll.eps(), self.riesz.s())
    }

    pub fn n_species(&self) -> usize {
        self.species.len()
    }

    /// Number of Euler steps, `ceil(T / dt)`.
    pub fn n_steps(&self) -> u64 {
        let ratio = self.t_end / self.dt;
        let rounded = ratio.round();
        if (ratio - rounded).abs() <= 1e-9 * rounded.max(1.0) {
            rounded as u64
        } else {
            ratio.ceil() as u64
        }
    }

    /// Time after `k` steps; the last step is shortened to land on `T`.
    pub fn time_at(&self, k: u64) -> f64 {
        if k >= self.n_steps() {
            self.t_end
        } else {
            k as f64 * self.dt
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.species.len();
        if n == 0 || self.a.n() != n {
            return Err(Error::param(format!(
                "{n} species configured but the interaction matrix is {}x{}",
                self.a.n(),
                self.a.n()
            )));
        }
        if self.n_particles == 0 {
            return Err(Error::param("need at least one particle per species"));
        }
        for (alpha, sp) in self.species.iter().enumerate() {
            if !(sp.sigma >= 0.0 && sp.sigma.is_finite()) {
                return Err(Error::param(format!(
                    "species {alpha}: diffusion coefficient must be >= 0, got {}",
                    sp.sigma
                )));
            }
            sp.init.validate(self.riesz.d())?;
        }
        let cap = self.dt_cap();
        if !(self.dt > 0.0) {
            return Err(Error::param(format!("time step must be positive, got {}", self.dt)));
        }
        if self.dt > cap * (1.0 + 1e-12) {
            return Err(Error::param(format!(
                "time step dt = {} exceeds the stability cap 0.1 eps^(s+2) = {cap:e} (eps = {}, s = {})",
                self.dt,
                self.moll.eps(),
                self.riesz.s()
            )));
        }
        if !(self.t_end >= self.dt * (1.0 - 1e-12)) {
            return Err(Error::param(format!(
                "horizon T = {} must be at least dt = {}",
                self.t_end, self.dt
            )));
        }
        Ok(())
    }

    fn output_steps(&self) -> Vec<u64> {
        let mut steps: Vec<u64> = self
            .output_times
            .iter()
            .filter(|&&t| t >= 0.0 && t <= self.t_end)
            .map(|&t| {
                (0..=self.n_steps())
                    .find(|&k| self.time_at(k) >= t * (1.0 - 1e-12))
                    .unwrap_or(self.n_steps())
            })
            .collect();
        steps.push(self.n_steps());
        steps.sort_unstable();
        steps.dedup();
        steps
    }
}

/// `0.1 eps^(s+2)`.
pub fn dt_cap(eps: f64, s: f64) -> f64 {
    DT_CAP_FACTOR * eps.powf(s + 2.0)
}

/// Largest `dt <= cap` that divides `t_end` evenly.
pub fn default_dt(t_end: f64, eps: f64, s: f64) -> f64 {
    let cap = dt_cap(eps, s);
    t_end / (t_end / cap).ceil().max(1.0)
}

/// Positions of all particles at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct ParticleState {
    pub t: f64,
    pub step_index: u64,
    pub seed: u64,
    pub n_species: usize,
    pub n_particles: usize,
    pub d: usize,
    /// Flattened `(alpha, i, coordinate)`.
    pub positions: Vec<f64>,
}

impl ParticleState {
    pub fn position(&self, alpha: usize, i: usize) -> &[f64] {
        let start = (alpha * self.n_particles + i) * self.d;
        &self.positions[start..start + self.d]
    }

    /// All coordinates of one species, `(i, coordinate)` order.
    pub fn species(&self, alpha: usize) -> &[f64] {
        let len = self.n_particles * self.d;
        &self.positions[alpha * len..(alpha + 1) * len]
    }

    pub fn max_abs(&self) -> f64 {
        self.positions.iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// `N` i.i.d. draws per species from the initial densities.
pub fn sample_initial(config: &SimConfig) -> ParticleState {
    let d = config.riesz.d();
    let n = config.n_species();
    let big_n = config.n_particles;
    let per: Vec<Vec<f64>> = map_indexed(n * big_n, config.exec, |k| {
        let (alpha, i) = (k / big_n, k % big_n);
        let mut stream = particle_stream(config.seed, DOMAIN_INITIAL, alpha, i);
        let mut x = vec![0.0; d];
        config.species[alpha].init.sample(&mut stream, &mut x);
        x
    });
    ParticleState {
        t: 0.0,
        step_index: 0,
        seed: config.seed,
        n_species: n,
        n_particles: big_n,
        d,
        positions: per.concat(),
    }
}

/// Adds the Brownian increment of `step` to every particle, scaled by
/// `sqrt(2 sigma_alpha tau)`.
pub(crate) fn add_noise(
    positions: &mut [f64],
    config: &SimConfig,
    step: u64,
    tau: f64,
) {
    let d = config.riesz.d();
    let big_n = config.n_particles;
    let increments: Vec<Vec<f64>> = map_indexed(config.n_species() * big_n, config.exec, |k| {
        let (alpha, i) = (k / big_n, k % big_n);
        let sigma = config.species[alpha].sigma;
        let mut z = vec![0.0; d];
        if sigma > 0.0 {
            brownian_increment(config.seed, alpha, i, step, (2.0 * sigma * tau).sqrt(), &mut z);
        }
        z
    });
    for (chunk, inc) in positions.chunks_mut(d).zip(&increments) {
        for (x, z) in chunk.iter_mut().zip(inc) {
            *x += z;
        }
    }
}

pub(crate) fn check_stability(state: &ParticleState, config: &SimConfig) -> Result<()> {
    let limit = INSTABILITY_FACTOR * config.box_half_width;
    for (k, p) in state.positions.chunks(state.d).enumerate() {
        let norm = p.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !(norm <= limit) {
            return Err(Error::Unstable {
                species: k / state.n_particles,
                index: k % state.n_particles,
                norm,
                limit,
                step: state.step_index,
            });
        }
    }
    Ok(())
}

/// One Euler-Maruyama step: `X += drift dt + sqrt(2 sigma dt) Z`.
pub fn step(state: &ParticleState, config: &SimConfig, engine: &DriftEngine) -> Result<ParticleState> {
    let k = state.step_index;
    let tau = config.time_at(k + 1) - config.time_at(k);
    let drift = engine.compute(state)?;
    let mut next = state.clone();
    for (x, v) in next.positions.iter_mut().zip(&drift) {
        *x += v * tau;
    }
    add_noise(&mut next.positions, config, k, tau);
    next.step_index = k + 1;
    next.t = config.time_at(k + 1);
    check_stability(&next, config)?;
    Ok(next)
}

/// Runs the particle system to `T`, returning the initial state followed by
/// the snapshots at the requested output times.
pub fn simulate(config: &SimConfig, table: Arc<KernelTable>) -> Result<Vec<ParticleState>> {
    config.validate()?;
    let engine = DriftEngine::new(table, config.a.clone(), config.n_particles, config.exec)?;
    let outputs = config.output_steps();
    let mut state = sample_initial(config);
    let mut snapshots = vec![state.clone()];
    for _ in 0..config.n_steps() {
        state = step(&state, config, &engine)?;
        if outputs.binary_search(&state.step_index).is_ok() {
            snapshots.push(state.clone());
        }
    }
    Ok(snapshots)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::build_kernel_table;

    pub(crate) fn config(n: usize, big_n: usize, a: Vec<Vec<f64>>, sigma: f64, width: f64) -> SimConfig {
        let riesz = RieszSpec::new(1.0, 3).unwrap();
        let moll = MollifierSpec::from_eps(0.5).unwrap();
        SimConfig {
            riesz,
            moll,
            a: InteractionMatrix::new(a).unwrap(),
            species: (0..n)
                .map(|_| SpeciesConfig {
                    sigma,
                    init: InitialDensity::gaussian(vec![0.0; 3], width),
                })
                .collect(),
            n_particles: big_n,
            dt: 0.01,
            t_end: 0.05,
            seed: 11,
            box_half_width: 12.0,
            output_times: vec![],
            exec: Execution::Parallel,
        }
    }

    pub(crate) fn table() -> Arc<KernelTable> {
        Arc::new(
            build_kernel_table(
                &RieszSpec::new(1.0, 3).unwrap(),
                &MollifierSpec::from_eps(0.5).unwrap(),
                256,
                96.0,
            )
            .unwrap(),
        )
    }

    #[test]
    fn dt_cap_is_enforced() {
        let mut c = config(1, 4, vec![vec![0.0]], 1.0, 1.0);
        assert!(c.validate().is_ok());
        c.dt = 0.013;
        let err = c.validate().unwrap_err().to_string();
        assert!(err.contains("0.1 eps^(s+2)"), "{err}");
        assert!(default_dt(0.5, 0.5, 1.0) <= 0.0125);
        assert_eq!(default_dt(0.5, 0.5, 1.0), 0.5 / 40.0);
    }

    #[test]
    fn step_count_and_final_time() {
        let mut c = config(1, 2, vec![vec![0.0]], 0.0, 0.0);
        assert_eq!(c.n_steps(), 5);
        c.t_end = 0.01;
        assert_eq!(c.n_steps(), 1);
        c.t_end = 0.025;
        assert_eq!(c.n_steps(), 3);
        assert_eq!(c.time_at(3), 0.025);
    }

    #[test]
    fn degenerate_width_puts_everyone_at_center() {
        let mut c = config(2, 8, vec![vec![0.0; 2]; 2], 1.0, 0.0);
        c.species[1].init.center = vec![1.0, -2.0, 0.5];
        let s = sample_initial(&c);
        assert!(s.species(0).iter().all(|&v| v == 0.0));
        assert_eq!(s.position(1, 5), &[1.0, -2.0, 0.5]);
    }

    #[test]
    fn sampling_is_deterministic_and_truncated() {
        let c = config(2, 500, vec![vec![0.0; 2]; 2], 1.0, 1.0);
        let a = sample_initial(&c);
        let b = sample_initial(&c);
        assert_eq!(a, b);
        for p in a.positions.chunks(3) {
            assert!(p.iter().map(|v| v * v).sum::<f64>().sqrt() <= 6.0);
        }
    }

    #[test]
    fn frozen_particles_stay_put() {
        let c = config(1, 16, vec![vec![0.0]], 0.0, 1.0);
        let snaps = simulate(&c, table()).unwrap();
        assert_eq!(snaps.first().unwrap().positions, snaps.last().unwrap().positions);
        assert_eq!(snaps.last().unwrap().step_index, 5);
    }

    #[test]
    fn single_step_when_horizon_equals_dt() {
        let mut c = config(1, 4, vec![vec![0.0]], 1.0, 1.0);
        c.t_end = c.dt;
        let snaps = simulate(&c, table()).unwrap();
        assert_eq!(snaps.len(), 2);
        assert_eq!(snaps[1].step_index, 1);
        assert_eq!(snaps[1].t, c.dt);
    }

    #[test]
    fn repulsive_pair_separates_every_step() {
        let mut c = config(1, 2, vec![vec![1.0]], 0.0, 0.0);
        c.t_end = 0.1;
        c.output_times = (1..=10).map(|k| k as f64 * 0.01).collect();
        let eng = DriftEngine::new(table(), c.a.clone(), 2, c.exec).unwrap();
        let mut s = sample_initial(&c);
        s.positions = vec![-0.1, 0.0, 0.0, 0.1, 0.0, 0.0];
        let mut last = 0.2;
        for _ in 0..10 {
            s = step(&s, &c, &eng).unwrap();
            let dist = s.position(0, 1)[0] - s.position(0, 0)[0];
            assert!(dist > last, "{dist} <= {last}");
            last = dist;
        }
    }

    #[test]
    fn instability_aborts() {
        let mut c = config(1, 2, vec![vec![0.0]], 0.0, 0.0);
        c.species[0].init.center = vec![2e4, 0.0, 0.0];
        let err = simulate(&c, table()).unwrap_err();
        assert!(matches!(err, Error::Unstable { .. }));
    }
}
