use std::sync::Arc;

use rustfft::num_complex::Complex64;

use super::{fft::GridFft, Grid, VectorField};
use crate::exec::{map_indexed, Execution};
use crate::kernels::{InteractionMatrix, KernelTable, RieszSpec};

/// Which gradient kernel drives the drift.
#[derive(Debug, Clone)]
pub enum KernelChoice {
    /// `grad (V * chi_eps)` from a radial table.
    Mollified(Arc<KernelTable>),
    /// The singular `grad V = -s x |x|^{-s-2}`.
    Limiting(RieszSpec),
}

impl KernelChoice {
    pub fn eps(&self) -> Option<f64> {
        match self {
            KernelChoice::Mollified(t) => Some(t.eps()),
            KernelChoice::Limiting(_) => None,
        }
    }
}

/// Gradient kernel sampled on the grid at minimum-image offsets and
/// transformed once.
///
/// Samples with `|x| >= L` are zero, and so is the origin sample (the cell
/// average of an odd function over a symmetric cell).
pub struct GridKernel {
    grid: Grid,
    samples: Vec<Vec<f64>>,
    spectra: Vec<Vec<Complex64>>,
}

impl GridKernel {
    pub fn new(grid: &Grid, choice: &KernelChoice, fft: &GridFft, exec: Execution) -> Self {
        let d = grid.d();
        let l = grid.half_width();
        let values: Vec<Vec<f64>> = map_indexed(grid.len(), exec, |idx| {
            let mut multi = vec![0usize; d];
            grid.unflatten(idx, &mut multi);
            let x: Vec<f64> = multi
                .iter()
                .map(|&k| grid.min_image(k) as f64 * grid.h())
                .collect();
            let r2: f64 = x.iter().map(|c| c * c).sum();
            let mut out = vec![0.0; d];
            if r2 == 0.0 || r2 >= l * l {
                return out;
            }
            match choice {
                KernelChoice::Mollified(table) => table.grad_into(&x, 1.0, &mut out),
                KernelChoice::Limiting(riesz) => {
                    let s = riesz.s();
                    let f = -s * r2.powf(-0.5 * s - 1.0);
                    for (o, c) in out.iter_mut().zip(&x) {
                        *o = f * c;
                    }
                }
            }
            out
        });
        let mut samples = vec![vec![0.0; grid.len()]; d];
        for (idx, v) in values.into_iter().enumerate() {
            for c in 0..d {
                samples[c][idx] = v[c];
            }
        }
        let spectra = samples.iter().map(|s| fft.forward_real(s)).collect();
        Self {
            grid: grid.clone(),
            samples,
            spectra,
        }
    }

    /// Kernel samples, one array per component, indexed by node offset.
    pub fn samples(&self) -> &[Vec<f64>] {
        &self.samples
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }
}

/// `(grad K * f)(x_i) = h^d sum_j grad K(x_i - x_j) f_j` by circular
/// convolution.
pub fn convolve_gradient(field: &[f64], kernel: &GridKernel, fft: &GridFft) -> VectorField {
    let spectrum = fft.forward_real(field);
    let vol = kernel.grid.cell_volume();
    let components = kernel
        .spectra
        .iter()
        .map(|k| {
            let prod: Vec<Complex64> = k.iter().zip(&spectrum).map(|(a, b)| a * b * vol).collect();
            fft.inverse_real(prod)
        })
        .collect();
    VectorField {
        grid: kernel.grid.clone(),
        components,
    }
}

/// Velocities `v_alpha = -sum_beta a[alpha][beta] (grad K * f_beta)` for all
/// species, sharing one forward transform per species.
pub fn species_velocities(
    fields: &[Vec<f64>],
    a: &InteractionMatrix,
    kernel: &GridKernel,
    fft: &GridFft,
) -> Vec<VectorField> {
    let vol = kernel.grid.cell_volume();
    let n = fields.len();
    let spectra: Vec<Option<Vec<Complex64>>> = (0..n)
        .map(|beta| {
            let used = (0..n).any(|alpha| a.get(alpha, beta) != 0.0);
            used.then(|| fft.forward_real(&fields[beta]))
        })
        .collect();
    (0..n)
        .map(|alpha| {
            let mut v = VectorField::zeros(kernel.grid.clone());
            if a.row(alpha).iter().all(|&x| x == 0.0) {
                return v;
            }
            for (c, kc) in kernel.spectra.iter().enumerate() {
                let mut acc = vec![Complex64::default(); kc.len()];
                for (beta, spec) in spectra.iter().enumerate() {
                    let w = a.get(alpha, beta);
                    let Some(spec) = spec else { continue };
                    if w == 0.0 {
                        continue;
                    }
                    for ((o, k), f) in acc.iter_mut().zip(kc).zip(spec) {
                        *o += k * f * (-w * vol);
                    }
                }
                v.components[c] = fft.inverse_real(acc);
            }
            v
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{build_kernel_table, MollifierSpec};

    fn setup(m: usize, l: f64) -> (Grid, GridFft) {
        let g = Grid::new(3, m, l).unwrap();
        let fft = GridFft::new(&g, Execution::Parallel);
        (g, fft)
    }

    #[test]
    fn constant_field_gives_zero_drift() {
        let (g, fft) = setup(32, 4.0);
        let k = GridKernel::new(
            &g,
            &KernelChoice::Limiting(RieszSpec::new(1.0, 3).unwrap()),
            &fft,
            Execution::Parallel,
        );
        let f = vec![1.0 / (8.0f64.powi(3)); g.len()];
        let v = convolve_gradient(&f, &k, &fft);
        assert!(v.max_norm() < 1e-12, "{}", v.max_norm());
    }

    #[test]
    fn delta_recovers_sampled_kernel() {
        let (g, fft) = setup(32, 4.0);
        let table = build_kernel_table(
            &RieszSpec::new(1.0, 3).unwrap(),
            &MollifierSpec::from_eps(0.5).unwrap(),
            256,
            32.0,
        )
        .unwrap();
        let k = GridKernel::new(&g, &KernelChoice::Mollified(Arc::new(table)), &fft, Execution::Parallel);
        let mut f = vec![0.0; g.len()];
        f[0] = 1.0 / g.cell_volume();
        let v = convolve_gradient(&f, &k, &fft);
        for c in 0..3 {
            for (a, b) in v.components[c].iter().zip(&k.samples()[c]) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gaussian_far_field_matches_point_mass() {
        let (g, fft) = setup(64, 8.0);
        let riesz = RieszSpec::new(1.0, 3).unwrap();
        let k = GridKernel::new(&g, &KernelChoice::Limiting(riesz), &fft, Execution::Parallel);
        let width: f64 = 0.5;
        let mut x = [0.0; 3];
        let mut f: Vec<f64> = (0..g.len())
            .map(|i| {
                g.node(i, &mut x);
                (-(x[0] * x[0] + x[1] * x[1] + x[2] * x[2]) / (2.0 * width * width)).exp()
            })
            .collect();
        let mass: f64 = f.iter().sum::<f64>() * g.cell_volume();
        f.iter_mut().for_each(|v| *v /= mass);
        let v = convolve_gradient(&f, &k, &fft);
        // node 48 sits at x = L/2 = 4
        let idx = g.flatten(&[48, 32, 32]);
        let r: f64 = 4.0;
        let mag = (0..3).map(|c| v.components[c][idx].powi(2)).sum::<f64>().sqrt();
        let expected = r.powi(-2);
        assert!((mag / expected - 1.0).abs() < 0.02, "{mag} vs {expected}");
        assert!(v.components[0][idx] < 0.0);
    }
}
