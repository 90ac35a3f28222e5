use crate::{Error, Result};

/// Uniform periodic grid on `[-L, L)^d` with `m` nodes per axis.
///
/// Node `k` along an axis sits at `-L + k h`; multi-indices are flattened in
/// row-major order (last axis fastest).
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    d: usize,
    m: usize,
    half_width: f64,
    h: f64,
}

impl Grid {
    /// `m` must be even and at least 32.
    pub fn new(d: usize, m: usize, half_width: f64) -> Result<Self> {
        if d == 0 {
            return Err(Error::param("grid dimension must be positive"));
        }
        if m < 32 || m % 2 != 0 {
            return Err(Error::param(format!(
                "grid needs an even number of points per axis >= 32, got m = {m}"
            )));
        }
        if !(half_width > 0.0 && half_width.is_finite()) {
            return Err(Error::param(format!(
                "box half-width must be positive, got {half_width}"
            )));
        }
        Ok(Self {
            d,
            m,
            half_width,
            h: 2.0 * half_width / m as f64,
        })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn h(&self) -> f64 {
        self.h
    }

    /// Volume of one cell, `h^d`.
    pub fn cell_volume(&self) -> f64 {
        self.h.powi(self.d as i32)
    }

    /// Total number of nodes, `m^d`.
    pub fn len(&self) -> usize {
        self.m.pow(self.d as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Coordinate of node `k` along one axis.
    pub fn coord(&self, k: usize) -> f64 {
        -self.half_width + k as f64 * self.h
    }

    /// Row-major stride of `axis`.
    pub fn stride(&self, axis: usize) -> usize {
        self.m.pow((self.d - 1 - axis) as u32)
    }

    /// Multi-index of flat index `idx`, written into `out`.
    pub fn unflatten(&self, mut idx: usize, out: &mut [usize]) {
        for axis in (0..self.d).rev() {
            out[axis] = idx % self.m;
            idx /= self.m;
        }
    }

    pub fn flatten(&self, multi: &[usize]) -> usize {
        multi.iter().fold(0, |acc, &k| acc * self.m + k)
    }

    /// Position of flat node `idx`.
    pub fn node(&self, idx: usize, out: &mut [f64]) {
        let mut rest = idx;
        for axis in (0..self.d).rev() {
            out[axis] = self.coord(rest % self.m);
            rest /= self.m;
        }
    }

    /// Wraps a coordinate into `[-L, L)`.
    pub fn wrap(&self, x: f64) -> f64 {
        let w = 2.0 * self.half_width;
        let y = (x + self.half_width).rem_euclid(w) - self.half_width;
        // rem_euclid may round up to exactly w
        if y >= self.half_width {
            -self.half_width
        } else {
            y
        }
    }

    /// Whether `x` lies in `[-L, L)^d`.
    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .all(|&c| c >= -self.half_width && c < self.half_width)
    }

    /// Signed minimum-image offset of node index `k` from node 0, in units
    /// of `h`: `k` for `k < m/2`, `k - m` otherwise.
    pub fn min_image(&self, k: usize) -> i64 {
        if k < self.m / 2 {
            k as i64
        } else {
            k as i64 - self.m as i64
        }
    }
}

/// Per-species densities on a grid at one time.
///
/// Values are point densities; the mass of species `alpha` is
/// `h^d * sum(values[alpha])`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityField {
    pub grid: Grid,
    pub t: f64,
    pub species: Vec<Vec<f64>>,
}

impl DensityField {
    pub fn new(grid: Grid, t: f64, species: Vec<Vec<f64>>) -> Result<Self> {
        for (alpha, v) in species.iter().enumerate() {
            if v.len() != grid.len() {
                return Err(Error::param(format!(
                    "species {alpha} has {} values, grid has {}",
                    v.len(),
                    grid.len()
                )));
            }
        }
        Ok(Self { grid, t, species })
    }

    pub fn zeros(grid: Grid, n: usize) -> Self {
        let len = grid.len();
        Self {
            grid,
            t: 0.0,
            species: vec![vec![0.0; len]; n],
        }
    }

    pub fn n_species(&self) -> usize {
        self.species.len()
    }

    pub fn mass(&self, alpha: usize) -> f64 {
        self.species[alpha].iter().sum::<f64>() * self.grid.cell_volume()
    }

    /// Mass outside the ball of radius `radius` around the origin.
    pub fn mass_outside(&self, alpha: usize, radius: f64) -> f64 {
        let mut x = vec![0.0; self.grid.d()];
        let r2 = radius * radius;
        let mut sum = 0.0;
        for (idx, &v) in self.species[alpha].iter().enumerate() {
            self.grid.node(idx, &mut x);
            if x.iter().map(|c| c * c).sum::<f64>() > r2 {
                sum += v;
            }
        }
        sum * self.grid.cell_volume()
    }
}

/// A `d`-component vector field on a grid, one array per component.
#[derive(Debug, Clone, PartialEq)]
pub struct VectorField {
    pub grid: Grid,
    pub components: Vec<Vec<f64>>,
}

impl VectorField {
    pub fn zeros(grid: Grid) -> Self {
        let len = grid.len();
        let d = grid.d();
        Self {
            grid,
            components: vec![vec![0.0; len]; d],
        }
    }

    /// `self += factor * other`.
    pub fn add_scaled(&mut self, factor: f64, other: &VectorField) {
        for (a, b) in self.components.iter_mut().zip(&other.components) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += factor * y;
            }
        }
    }

    pub fn max_norm(&self) -> f64 {
        let len = self.grid.len();
        (0..len)
            .map(|i| {
                self.components
                    .iter()
                    .map(|c| c[i] * c[i])
                    .sum::<f64>()
                    .sqrt()
            })
            .fold(0.0, f64::max)
    }

    /// Multilinear interpolation at `x` (periodic). Returns whether `x` had
    /// to be wrapped into the box.
    pub fn interpolate(&self, x: &[f64], out: &mut [f64]) -> bool {
        let g = &self.grid;
        let d = g.d();
        let m = g.m();
        let wrapped = !g.contains(x);
        let mut base = [0usize; 8];
        let mut frac = [0.0f64; 8];
        assert!(d <= 8, "interpolation supports d <= 8");
        for axis in 0..d {
            let y = (g.wrap(x[axis]) + g.half_width()) / g.h();
            let k = y.floor();
            frac[axis] = y - k;
            base[axis] = (k as usize).min(m - 1);
        }
        out.iter_mut().for_each(|o| *o = 0.0);
        for corner in 0..(1usize << d) {
            let mut w = 1.0;
            let mut idx = 0usize;
            for axis in 0..d {
                let upper = (corner >> (d - 1 - axis)) & 1 == 1;
                let k = if upper { (base[axis] + 1) % m } else { base[axis] };
                w *= if upper { frac[axis] } else { 1.0 - frac[axis] };
                idx = idx * m + k;
            }
            if w == 0.0 {
                continue;
            }
            for (o, comp) in out.iter_mut().zip(&self.components) {
                *o += w * comp[idx];
            }
        }
        wrapped
    }
}
