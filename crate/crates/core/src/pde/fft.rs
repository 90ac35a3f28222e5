use std::sync::Arc;

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::Grid;
use crate::exec::{for_each_chunk_mut, Execution};

/// Forward and inverse d-dimensional complex transforms on a [`Grid`].
///
/// The inverse is normalized, so `inverse(forward(x)) == x` up to rounding.
pub struct GridFft {
    m: usize,
    d: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    exec: Execution,
}

impl GridFft {
    pub fn new(grid: &Grid, exec: Execution) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            m: grid.m(),
            d: grid.d(),
            forward: planner.plan_fft_forward(grid.m()),
            inverse: planner.plan_fft_inverse(grid.m()),
            exec,
        }
    }

    pub fn forward_real(&self, data: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = data.iter().map(|&x| Complex64::new(x, 0.0)).collect();
        self.transform(&mut buf, false);
        buf
    }

    pub fn forward(&self, data: &mut [Complex64]) {
        self.transform(data, false);
    }

    /// Inverse transform, returning the real part.
    pub fn inverse_real(&self, mut data: Vec<Complex64>) -> Vec<f64> {
        self.transform(&mut data, true);
        data.into_iter().map(|c| c.re).collect()
    }

    fn transform(&self, data: &mut [Complex64], inverse: bool) {
        let plan = if inverse { &self.inverse } else { &self.forward };
        let m = self.m;
        for axis in 0..self.d {
            let stride = m.pow((self.d - 1 - axis) as u32);
            let block = m * stride;
            // each block holds `stride` interleaved lines of length m
            for_each_chunk_mut(data, block, self.exec, |_, chunk| {
                if stride == 1 {
                    plan.process(chunk);
                    return;
                }
                let mut lines = vec![Complex64::default(); block];
                for k in 0..m {
                    for j in 0..stride {
                        lines[j * m + k] = chunk[k * stride + j];
                    }
                }
                plan.process(&mut lines);
                for k in 0..m {
                    for j in 0..stride {
                        chunk[k * stride + j] = lines[j * m + k];
                    }
                }
            });
        }
        if inverse {
            let scale = 1.0 / (m.pow(self.d as u32) as f64);
            for c in data.iter_mut() {
                *c *= scale;
            }
        }
    }

    /// Signed integer wavenumber of index `k`.
    pub fn wavenumber(&self, k: usize) -> i64 {
        if k <= self.m / 2 {
            k as i64
        } else {
            k as i64 - self.m as i64
        }
    }
}
