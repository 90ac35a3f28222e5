use crate::pde::Grid;
use crate::{Error, Result};

/// Tolerance on the total mass of a histogram.
pub const MASS_TOLERANCE: f64 = 1e-12;

/// Regular tensor-product binning of `[-half_width, half_width]^dims`.
///
/// Points outside the window are counted in the nearest edge bin, so the
/// edge bins stand for the half-lines beyond the window.
#[derive(Debug, Clone, PartialEq)]
pub struct HistGrid {
    dims: usize,
    bins: usize,
    half_width: f64,
}

impl HistGrid {
    pub fn new(dims: usize, bins: usize, half_width: f64) -> Result<Self> {
        if dims == 0 || bins == 0 {
            return Err(Error::param("histogram needs at least one dimension and one bin"));
        }
        if !(half_width > 0.0 && half_width.is_finite()) {
            return Err(Error::param(format!(
                "histogram half-width must be positive, got {half_width}"
            )));
        }
        if bins.checked_pow(dims as u32).is_none_or(|n| n > 1 << 26) {
            return Err(Error::param(format!(
                "{bins}^{dims} histogram bins is too many"
            )));
        }
        Ok(Self {
            dims,
            bins,
            half_width,
        })
    }

    /// Bins per dimension for `n` samples in `d` dimensions:
    /// `2 round(n^(1/(d+2)))`.
    pub fn default_bins(n: usize, d: usize) -> usize {
        2 * ((n as f64).powf(1.0 / (d as f64 + 2.0)).round() as usize).max(1)
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn bins(&self) -> usize {
        self.bins
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn width(&self) -> f64 {
        2.0 * self.half_width / self.bins as f64
    }

    pub fn bin_volume(&self) -> f64 {
        self.width().powi(self.dims as i32)
    }

    pub fn len(&self) -> usize {
        self.bins.pow(self.dims as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Clamped bin of one coordinate and whether it was clamped.
    pub fn axis_bin(&self, x: f64) -> (usize, bool) {
        let u = (x + self.half_width) / self.width();
        if !(u >= 0.0) {
            (0, true)
        } else if u >= self.bins as f64 {
            (self.bins - 1, x > self.half_width)
        } else {
            (u as usize, false)
        }
    }

    /// Row-major bin index of a point and whether any coordinate was
    /// clamped.
    pub fn bin_of(&self, x: &[f64]) -> (usize, bool) {
        let mut idx = 0;
        let mut clamped = false;
        for &c in x {
            let (k, cl) = self.axis_bin(c);
            idx = idx * self.bins + k;
            clamped |= cl;
        }
        (idx, clamped)
    }

    // Length of [a, b] inside bin k, with the edge bins unbounded.
    fn axis_overlap(&self, k: usize, a: f64, b: f64) -> f64 {
        let w = self.width();
        let lo = if k == 0 { f64::NEG_INFINITY } else { -self.half_width + k as f64 * w };
        let hi = if k + 1 == self.bins {
            f64::INFINITY
        } else {
            -self.half_width + (k + 1) as f64 * w
        };
        (b.min(hi) - a.max(lo)).max(0.0)
    }
}

/// Probability masses on a [`HistGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct Histogram {
    grid: HistGrid,
    masses: Vec<f64>,
    samples: u64,
    clamped: u64,
}

impl Histogram {
    /// Wraps nonnegative masses summing to one.
    pub fn from_masses(grid: HistGrid, masses: Vec<f64>, samples: u64) -> Result<Self> {
        if masses.len() != grid.len() {
            return Err(Error::param(format!(
                "{} masses for a histogram of {} bins",
                masses.len(),
                grid.len()
            )));
        }
        check_probability(&masses)?;
        Ok(Self {
            grid,
            masses,
            samples,
            clamped: 0,
        })
    }

    /// Normalized counts of points given as consecutive `dims`-tuples.
    pub fn from_samples(grid: HistGrid, points: &[f64]) -> Result<Self> {
        let dims = grid.dims();
        if points.is_empty() || points.len() % dims != 0 {
            return Err(Error::param(format!(
                "need a nonempty list of {dims}-dimensional points"
            )));
        }
        if points.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("sample points must be finite"));
        }
        let mut counts = vec![0u64; grid.len()];
        let mut clamped = 0;
        for p in points.chunks(dims) {
            let (b, c) = grid.bin_of(p);
            counts[b] += 1;
            clamped += c as u64;
        }
        let n = (points.len() / dims) as u64;
        let masses = counts.iter().map(|&c| c as f64 / n as f64).collect();
        Ok(Self {
            grid,
            masses,
            samples: n,
            clamped,
        })
    }

    /// Bins one species of a grid density by exact cell integrals.
    ///
    /// Node `k` carries the mass `f_k h^d` spread uniformly over its cell
    /// `x_k + [-h/2, h/2]^d`; the cell is split between bins by volume. The
    /// result is renormalized to unit mass.
    pub fn from_field(grid: HistGrid, pde: &Grid, values: &[f64]) -> Result<Self> {
        if grid.dims() != pde.d() || values.len() != pde.len() {
            return Err(Error::param(
                "field and histogram dimensions differ",
            ));
        }
        if values.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::param("field values must be finite and nonnegative"));
        }
        let d = pde.d();
        let h = pde.h();
        // per axis: the bins each node's cell touches and the fractions
        let axis: Vec<Vec<(usize, f64)>> = (0..pde.m())
            .map(|k| {
                let c = pde.coord(k);
                let (a, b) = (c - 0.5 * h, c + 0.5 * h);
                (0..grid.bins())
                    .filter_map(|bin| {
                        let o = grid.axis_overlap(bin, a, b) / h;
                        (o > 0.0).then_some((bin, o))
                    })
                    .collect()
            })
            .collect();
        let mut masses = vec![0.0; grid.len()];
        let mut multi = vec![0usize; d];
        for (idx, &v) in values.iter().enumerate() {
            if v == 0.0 {
                continue;
            }
            pde.unflatten(idx, &mut multi);
            let combos: usize = multi.iter().map(|&k| axis[k].len()).product();
            for mut combo in 0..combos {
                let mut bin = 0;
                let mut stride = 1;
                let mut frac = v;
                for ax in (0..d).rev() {
                    let list = &axis[multi[ax]];
                    let (b, o) = list[combo % list.len()];
                    combo /= list.len();
                    bin += b * stride;
                    stride *= grid.bins();
                    frac *= o;
                }
                masses[bin] += frac;
            }
        }
        let total: f64 = masses.iter().sum();
        if !(total > 0.0) {
            return Err(Error::param("field has zero mass"));
        }
        masses.iter_mut().for_each(|m| *m /= total);
        Ok(Self {
            grid,
            masses,
            samples: 0,
            clamped: 0,
        })
    }

    pub fn grid(&self) -> &HistGrid {
        &self.grid
    }

    pub fn masses(&self) -> &[f64] {
        &self.masses
    }

    /// Number of samples behind the histogram (0 for binned fields).
    pub fn samples(&self) -> u64 {
        self.samples
    }

    /// Samples that fell outside the window and were counted in an edge bin.
    pub fn clamped(&self) -> u64 {
        self.clamped
    }
}

pub(crate) fn check_probability(masses: &[f64]) -> Result<()> {
    if let Some(k) = masses.iter().position(|m| !(m.is_finite() && *m >= 0.0)) {
        return Err(Error::param(format!(
            "bin {k} has invalid mass {}",
            masses[k]
        )));
    }
    let total: f64 = masses.iter().sum();
    if (total - 1.0).abs() > MASS_TOLERANCE {
        return Err(Error::param(format!(
            "masses sum to {total}, not 1 (tolerance {MASS_TOLERANCE:e})"
        )));
    }
    Ok(())
}
