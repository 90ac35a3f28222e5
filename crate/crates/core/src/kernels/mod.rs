//! Riesz potential, bump mollifier and the mollified interaction kernels.
//!
//! Interaction potentials are `V_ab^eps = a_ab * (V * chi_eps)` with
//! `V(x) = |x|^-s`. Only the scalar radial profile `V * chi_eps` and its
//! radial derivative are tabulated ([`KernelTable`]); the coupling constant
//! is applied at evaluation time.

mod bounds;
mod table;

pub use bounds::{auxiliary_k, fit_lipschitz_constant, lipschitz_ratio, measure_sup_bounds};
pub use table::{build_kernel_table, eval_grad_v_eps, KernelTable, DEFAULT_TABLE_POINTS};

use crate::quadrature::{integrate, QuadOptions};
use crate::{Error, Result};
use serde::{Deserialize, Serialize};

/// Default half-width of the comparison box; the kernel table extends to
/// eight box half-widths.
pub const DEFAULT_BOX_HALF_WIDTH: f64 = 12.0;

/// `V(x) = |x|^-s` in dimension `d`, sub-Coulomb (`s < d-2`) or Coulomb
/// (`s = d-2`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RieszSpec {
    s: f64,
    d: usize,
}

impl RieszSpec {
    pub fn new(s: f64, d: usize) -> Result<Self> {
        if d < 3 {
            return Err(Error::param(format!(
                "dimension d = {d} not supported (need d >= 3)"
            )));
        }
        if !(s > 0.0 && s <= d as f64 - 2.0 + 1e-12) {
            return Err(Error::param(format!(
                "Riesz exponent s = {s} outside 0 < s <= d-2 = {}",
                d - 2
            )));
        }
        Ok(Self { s, d })
    }

    /// The Newtonian case in `d` dimensions.
    pub fn coulomb(d: usize) -> Result<Self> {
        Self::new(d as f64 - 2.0, d)
    }

    pub fn s(&self) -> f64 {
        self.s
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn is_coulomb(&self) -> bool {
        (self.s - (self.d as f64 - 2.0)).abs() < 1e-12
    }
}

/// Evaluates `|x|^-s`; the origin is a singular point.
pub fn riesz_potential(x: &[f64], spec: &RieszSpec) -> Result<f64> {
    let r = norm(x);
    if r == 0.0 {
        return Err(Error::Domain("Riesz potential is singular at x = 0".into()));
    }
    Ok(r.powf(-spec.s))
}

/// Admissible interval for the scaling exponent: `0 < ell < 1/(2s+4)`.
///
/// The bound is used for all `s`; in the Coulomb case the sharper
/// constant-dependent upper bound is not computable.
pub fn ell_upper_bound(s: f64) -> f64 {
    1.0 / (2.0 * s + 4.0)
}

/// Mollification scale `eps`, optionally tied to a particle count through
/// `eps = N^-ell`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MollifierSpec {
    eps: f64,
    scaling: Option<(f64, u64)>,
}

impl MollifierSpec {
    /// `eps = N^-ell`, with `ell` checked against `0 < ell < 1/(2s+4)`.
    pub fn from_scaling(ell: f64, n_particles: u64, riesz: &RieszSpec) -> Result<Self> {
        let upper = ell_upper_bound(riesz.s());
        if !(ell > 0.0 && ell < upper) {
            return Err(Error::param(format!(
                "scaling exponent ell = {ell} outside admissible range 0 < ell < 1/(2s+4) = {upper:.6} (s = {})",
                riesz.s()
            )));
        }
        if n_particles == 0 {
            return Err(Error::param("particle count must be positive"));
        }
        Ok(Self {
            eps: (n_particles as f64).powf(-ell),
            scaling: Some((ell, n_particles)),
        })
    }

    /// A bare mollification scale, not tied to a particle count.
    pub fn from_eps(eps: f64) -> Result<Self> {
        if !(eps > 0.0 && eps.is_finite()) {
            return Err(Error::param(format!("eps = {eps} must be positive")));
        }
        Ok(Self { eps, scaling: None })
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn ell(&self) -> Option<f64> {
        self.scaling.map(|(ell, _)| ell)
    }

    pub fn n_particles(&self) -> Option<u64> {
        self.scaling.map(|(_, n)| n)
    }
}

/// The normalized radial bump `chi(x) = c_d exp(-1/(1-|x|^2))` on the unit
/// ball of `R^d`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BumpProfile {
    d: usize,
    norm: f64,
}

impl BumpProfile {
    pub fn new(d: usize) -> Result<Self> {
        if d == 0 {
            return Err(Error::param("dimension must be positive"));
        }
        let radial = integrate(
            |u| bump_unnormalized(u) * u.powi(d as i32 - 1),
            0.0,
            1.0,
            QuadOptions {
                abs_tol: 1e-16,
                rel_tol: 1e-14,
                max_intervals: 500,
            },
        )?;
        Ok(Self {
            d,
            norm: 1.0 / (sphere_area(d) * radial),
        })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    /// Normalization constant `c_d`.
    pub fn norm(&self) -> f64 {
        self.norm
    }

    /// `chi` as a function of the radius.
    #[inline]
    pub fn radial(&self, u: f64) -> f64 {
        self.norm * bump_unnormalized(u)
    }
}

#[inline]
pub(crate) fn bump_unnormalized(u: f64) -> f64 {
    if u.abs() >= 1.0 {
        0.0
    } else {
        (-1.0 / (1.0 - u * u)).exp()
    }
}

/// `chi_eps(x) = eps^-d chi(x / eps)`; zero for `|x| >= eps`.
pub fn mollifier(x: &[f64], eps: f64, profile: &BumpProfile) -> f64 {
    debug_assert_eq!(x.len(), profile.d);
    mollifier_radial(norm(x), eps, profile)
}

#[inline]
pub(crate) fn mollifier_radial(r: f64, eps: f64, profile: &BumpProfile) -> f64 {
    eps.powi(-(profile.d as i32)) * profile.radial(r / eps)
}

/// The n-by-n matrix of coupling constants `a_ab` (positive: repulsive).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractionMatrix {
    n: usize,
    entries: Vec<f64>,
}

impl InteractionMatrix {
    pub fn new(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::param("interaction matrix needs at least one species"));
        }
        let mut entries = Vec::with_capacity(n * n);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::param(format!(
                    "interaction matrix row {i} has {} entries, expected {n}",
                    row.len()
                )));
            }
            for &v in row {
                if !v.is_finite() {
                    return Err(Error::param(format!("non-finite coupling in row {i}")));
                }
                entries.push(v);
            }
        }
        Ok(Self { n, entries })
    }

    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            entries: vec![0.0; n * n],
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn get(&self, alpha: usize, beta: usize) -> f64 {
        self.entries[alpha * self.n + beta]
    }

    pub fn row(&self, alpha: usize) -> &[f64] {
        &self.entries[alpha * self.n..(alpha + 1) * self.n]
    }

    pub fn is_zero(&self) -> bool {
        self.entries.iter().all(|&v| v == 0.0)
    }

    pub fn max_abs(&self) -> f64 {
        self.entries.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            n: self.n,
            entries: self.entries.iter().map(|v| v * factor).collect(),
        }
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.entries.chunks(self.n).map(|r| r.to_vec()).collect()
    }
}

/// Surface area of the unit sphere `S^{d-1}` in `R^d`.
pub fn sphere_area(d: usize) -> f64 {
    let half = d as f64 / 2.0;
    2.0 * std::f64::consts::PI.powf(half) / statrs::function::gamma::gamma(half)
}

#[inline]
pub(crate) fn norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}
