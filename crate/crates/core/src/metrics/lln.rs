use std::sync::Arc;

use rustfft::num_complex::Complex64;

use crate::exec::{map_indexed, Execution};
use crate::kernels::{auxiliary_k, InteractionMatrix, KernelTable};
use crate::particles::{DriftEngine, ParticleState};
use crate::pde::{convolve_gradient, DensityField, GridFft, GridKernel, KernelChoice, VectorField};
use crate::{Error, Result};

/// Test function `psi` of the deviation statistic.
#[derive(Debug, Clone)]
pub enum Psi {
    /// `grad (V * chi_eps)` from a kernel table.
    GradV(Arc<KernelTable>),
    /// The auxiliary majorant `K_eps`.
    Auxiliary { eps: f64, s: f64 },
    Constant(f64),
    Zero,
}

impl Psi {
    /// `sup |psi|`.
    pub fn sup(&self) -> f64 {
        match self {
            Psi::GradV(t) => t.g_eps().iter().fold(0.0, |m, v| m.max(v.abs())),
            Psi::Auxiliary { eps, s } => (4.0 * eps).powf(-(s + 2.0)),
            Psi::Constant(c) => c.abs(),
            Psi::Zero => 0.0,
        }
    }
}

/// Parameters of the deviation statistic.
#[derive(Debug, Clone)]
pub struct LlnConfig {
    /// Threshold exponent: exceedance means a deviation above `N^-theta`.
    pub theta: f64,
    pub psi: Psi,
    pub reps: usize,
}

impl LlnConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..0.5).contains(&self.theta) {
            return Err(Error::param(format!(
                "theta = {} must lie in [0, 1/2)",
                self.theta
            )));
        }
        Ok(())
    }
}

/// Outcome of one evaluation of the deviation statistic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LlnOutcome {
    pub max_deviation: f64,
    pub threshold: f64,
    pub exceeded: bool,
}

/// `max_{alpha, beta, i} |(1/N) sum_j psi(X_ai - X_bj) - (psi * f_b)(X_ai)|`
/// and whether it exceeds `N^-theta`.
///
/// The particle sums include `j = i`. The convolution with the field is
/// computed on its grid and interpolated multilinearly.
pub fn lln_statistic(
    state: &ParticleState,
    field: &DensityField,
    psi: &Psi,
    theta: f64,
    exec: Execution,
) -> Result<LlnOutcome> {
    if !(0.0..0.5).contains(&theta) {
        return Err(Error::param(format!("theta = {theta} must lie in [0, 1/2)")));
    }
    let (n, big_n, d) = (state.n_species, state.n_particles, state.d);
    if field.n_species() != n || field.grid.d() != d {
        return Err(Error::param("field and particle state differ in shape"));
    }
    let threshold = (big_n as f64).powf(-theta);
    let max_deviation = match psi {
        Psi::Zero => 0.0,
        Psi::Constant(c) => (0..n)
            .map(|beta| (c - c * field.mass(beta)).abs())
            .fold(0.0, f64::max),
        Psi::GradV(table) => grad_deviation(state, field, table, exec)?,
        Psi::Auxiliary { eps, s } => auxiliary_deviation(state, field, *eps, *s, exec)?,
    };
    Ok(LlnOutcome {
        max_deviation,
        threshold,
        exceeded: max_deviation > threshold,
    })
}

fn grad_deviation(
    state: &ParticleState,
    field: &DensityField,
    table: &Arc<KernelTable>,
    exec: Execution,
) -> Result<f64> {
    let (n, big_n, d) = (state.n_species, state.n_particles, state.d);
    let fft = GridFft::new(&field.grid, exec);
    let kernel = GridKernel::new(&field.grid, &KernelChoice::Mollified(table.clone()), &fft, exec);
    let mut worst: f64 = 0.0;
    for beta in 0..n {
        // drift with a_{alpha beta} = -1 is (1/N) sum_j grad(V * chi_eps)(X_ai - X_bj)
        let rows = (0..n)
            .map(|_| (0..n).map(|b| if b == beta { -1.0 } else { 0.0 }).collect())
            .collect();
        let a = InteractionMatrix::new(rows)?;
        let sums = DriftEngine::new(table.clone(), a, big_n, exec)?.compute(state)?;
        let conv = convolve_gradient(&field.species[beta], &kernel, &fft);
        worst = worst.max(max_gap(&sums, &conv, state, d));
    }
    Ok(worst)
}

fn auxiliary_deviation(
    state: &ParticleState,
    field: &DensityField,
    eps: f64,
    s: f64,
    exec: Execution,
) -> Result<f64> {
    if !(eps > 0.0 && s > 0.0) {
        return Err(Error::param("K_eps needs eps > 0 and s > 0"));
    }
    let (n, big_n, d) = (state.n_species, state.n_particles, state.d);
    let grid = &field.grid;
    let fft = GridFft::new(grid, exec);
    // kernel samples at minimum-image offsets, zero beyond the half-width
    let l = grid.half_width();
    let samples: Vec<f64> = map_indexed(grid.len(), exec, |idx| {
        let mut multi = vec![0usize; d];
        grid.unflatten(idx, &mut multi);
        let x: Vec<f64> = multi.iter().map(|&k| grid.min_image(k) as f64 * grid.h()).collect();
        if x.iter().map(|c| c * c).sum::<f64>() >= l * l {
            0.0
        } else {
            auxiliary_k(&x, eps, s)
        }
    });
    let spectrum = fft.forward_real(&samples);
    let vol = grid.cell_volume();
    let mut worst: f64 = 0.0;
    for beta in 0..n {
        let f = fft.forward_real(&field.species[beta]);
        let prod: Vec<Complex64> = spectrum.iter().zip(&f).map(|(a, b)| a * b * vol).collect();
        let conv = VectorField {
            grid: grid.clone(),
            components: vec![fft.inverse_real(prod)],
        };
        let sources = state.species(beta);
        let sums: Vec<f64> = map_indexed(n * big_n, exec, |k| {
            let x = &state.positions[k * d..(k + 1) * d];
            let mut acc = 0.0;
            let mut diff = vec![0.0; d];
            for y in sources.chunks(d) {
                for c in 0..d {
                    diff[c] = x[c] - y[c];
                }
                acc += auxiliary_k(&diff, eps, s);
            }
            acc / big_n as f64
        });
        let mut v = [0.0];
        for (k, &sum) in sums.iter().enumerate() {
            conv.interpolate(&state.positions[k * d..(k + 1) * d], &mut v);
            worst = worst.max((sum - v[0]).abs());
        }
    }
    Ok(worst)
}

// max over particles of |particle sum - interpolated field|, Euclidean in
// the components
fn max_gap(sums: &[f64], field: &VectorField, state: &ParticleState, d: usize) -> f64 {
    let mut v = vec![0.0; d];
    let mut worst: f64 = 0.0;
    for (k, s) in sums.chunks(d).enumerate() {
        field.interpolate(&state.positions[k * d..(k + 1) * d], &mut v);
        let gap = s.iter().zip(&v).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        worst = worst.max(gap);
    }
    worst
}
