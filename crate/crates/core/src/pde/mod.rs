//! Periodic-box solver for the mollified (intermediate) and limiting
//! aggregation-diffusion systems, with the well-posedness monitors.
//!
//! The unknowns are the species densities `f_alpha` on `[-L, L)^d`. The
//! drift of species `alpha` is `-sum_beta a_ab grad K * f_beta` with
//! `K = V * chi_eps` (intermediate system) or `K = V` (limiting system).

mod fft;
mod grid;
mod kernel;
mod smallness;
mod solver;

pub use fft::GridFft;
pub use grid::{DensityField, Grid, VectorField};
pub use kernel::{convolve_gradient, species_velocities, GridKernel, KernelChoice};
pub use smallness::{check_smallness, gns_constant, hls_constant, SmallnessReport};
pub use solver::{
    geometric_output_times, linf_monitor, lp_norm, lp_norm_timeline, solve, FieldTimeline,
    LinfReport, PdeConfig, SolveDiagnostics, CFL_TARGET, MAX_STEP_CLIP, MAX_STEP_MASS_DRIFT,
    MAX_TOTAL_CLIP,
};

use crate::{Error, Result};

/// Samples the truncated isotropic Gaussian `exp(-|x-c|^2 / (2 w^2))`,
/// `|x - c| <= cutoff`, at the grid nodes and normalizes it to unit mass.
pub fn gaussian_density(grid: &Grid, center: &[f64], width: f64, cutoff: f64) -> Result<Vec<f64>> {
    if center.len() != grid.d() {
        return Err(Error::param("center dimension differs from grid dimension"));
    }
    let mut x = vec![0.0; grid.d()];
    let c2 = cutoff * cutoff;
    let mut f: Vec<f64> = (0..grid.len())
        .map(|idx| {
            grid.node(idx, &mut x);
            let r2: f64 = x.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum();
            if r2 > c2 {
                0.0
            } else {
                (-r2 / (2.0 * width * width)).exp()
            }
        })
        .collect();
    let mass = f.iter().sum::<f64>() * grid.cell_volume();
    if !(mass > 0.0 && mass.is_finite()) {
        return Err(Error::param(format!(
            "Gaussian of width {width} is not resolved on a grid with h = {}",
            grid.h()
        )));
    }
    f.iter_mut().for_each(|v| *v /= mass);
    Ok(f)
}
