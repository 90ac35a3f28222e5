//! Smallness condition on the initial data that guarantees global
//! well-posedness of the limiting system.
//!
//! For every species `alpha` the checker compares
//!
//! ```text
//! lhs_alpha = sum_beta |a_ab| ||f_b^0||_{L^p}^{2sp/(d(p-1))}
//! rhs_alpha = 4 sigma_a^2 / (p^2 C_HLS^2 C_GNS^2 sum_beta |a_ab|)
//! ```
//!
//! with `p = d + 1` by default. The constants are:
//!
//! * `C_HLS`: the sharp constant of `||grad V * f||_{L^d} <= C ||f||_{L^{d/(d-s)}}`
//!   taken from Lieb's diagonal Hardy-Littlewood-Sobolev constant for the
//!   kernel `|x|^-(s+1)`, times `s`. The pairing is diagonal only for
//!   `s = 1`; for other `s` the same expression is used as an estimate.
//!   For `d = 3`, `s = 1` it equals `7.303872...`.
//! * `C_GNS`: the sharp Sobolev constant of `||u||_{L^{2d/(d-2)}} <= C ||grad u||_{L^2}`
//!   (Aubin, Talenti), `0.4272605...` for `d = 3`.
//!
//! The verdict is advisory; both constants are reported.

use statrs::function::gamma::gamma;

use super::{lp_norm, DensityField};
use crate::kernels::{InteractionMatrix, RieszSpec};
use crate::{Error, Result};

/// `s` times Lieb's diagonal HLS constant for `|x|^-(s+1)` in `d` dimensions.
pub fn hls_constant(riesz: &RieszSpec) -> f64 {
    let d = riesz.d() as f64;
    let s = riesz.s();
    let lambda = s + 1.0;
    let pi = std::f64::consts::PI;
    s * pi.powf(0.5 * lambda) * gamma(0.5 * d - 0.5 * lambda) / gamma(d - 0.5 * lambda)
        * (gamma(0.5 * d) / gamma(d)).powf(-1.0 + lambda / d)
}

/// Sharp Sobolev constant `[pi d (d-2)]^{-1/2} (Gamma(d) / Gamma(d/2))^{1/d}`.
pub fn gns_constant(d: usize) -> f64 {
    let df = d as f64;
    (std::f64::consts::PI * df * (df - 2.0)).powf(-0.5) * (gamma(df) / gamma(0.5 * df)).powf(1.0 / df)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SmallnessReport {
    pub satisfied: bool,
    pub p: f64,
    pub lhs: Vec<f64>,
    pub rhs: Vec<f64>,
    /// `rhs - lhs` per species; `+inf` when the species does not interact.
    pub margins: Vec<f64>,
    pub c_hls: f64,
    pub c_gns: f64,
}

/// Evaluates the smallness condition with exponent `p >= d/(d-s)`.
pub fn check_smallness(
    initial: &DensityField,
    a: &InteractionMatrix,
    sigma: &[f64],
    riesz: &RieszSpec,
    p: f64,
) -> Result<SmallnessReport> {
    let d = riesz.d() as f64;
    let s = riesz.s();
    let p_min = d / (d - s);
    if !(p >= p_min) || !(p > 1.0) {
        return Err(Error::param(format!(
            "smallness exponent p = {p} must satisfy p >= d/(d-s) = {p_min}"
        )));
    }
    let n = initial.n_species();
    if a.n() != n || sigma.len() != n {
        return Err(Error::param("species count mismatch in smallness check"));
    }
    let c_hls = hls_constant(riesz);
    let c_gns = gns_constant(riesz.d());
    let exponent = 2.0 * s * p / (d * (p - 1.0));
    let norms: Vec<f64> = initial
        .species
        .iter()
        .map(|f| lp_norm(&initial.grid, f, p))
        .collect();
    let mut lhs = Vec::with_capacity(n);
    let mut rhs = Vec::with_capacity(n);
    let mut margins = Vec::with_capacity(n);
    for alpha in 0..n {
        let row_abs: f64 = a.row(alpha).iter().map(|x| x.abs()).sum();
        let l: f64 = (0..n)
            .map(|beta| a.get(alpha, beta).abs() * norms[beta].powf(exponent))
            .sum();
        let r = if row_abs == 0.0 {
            f64::INFINITY
        } else {
            4.0 * sigma[alpha].powi(2) / (p * p * c_hls * c_hls * c_gns * c_gns * row_abs)
        };
        lhs.push(l);
        rhs.push(r);
        margins.push(r - l);
    }
    Ok(SmallnessReport {
        satisfied: margins.iter().all(|m| *m >= 0.0),
        p,
        lhs,
        rhs,
        margins,
        c_hls,
        c_gns,
    })
}
