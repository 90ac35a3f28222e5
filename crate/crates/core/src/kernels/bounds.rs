//! The auxiliary majorant `K_eps` and measured sup-norm bounds of the
//! mollified kernel.

use super::{norm, KernelTable};
use crate::{Error, Result};

/// `K_eps(x) = |x|^-(s+2)` for `|x| >= 4 eps`, and the plateau value
/// `(4 eps)^-(s+2)` inside.
pub fn auxiliary_k(x: &[f64], eps: f64, s: f64) -> f64 {
    auxiliary_k_radial(norm(x), eps, s)
}

#[inline]
pub(crate) fn auxiliary_k_radial(r: f64, eps: f64, s: f64) -> f64 {
    r.max(4.0 * eps).powf(-(s + 2.0))
}

/// Measured `sup |grad^k (V * chi_eps)|` over the table nodes, `k` in {1, 2}.
///
/// For `k = 2` the Hessian `g'(r) rr^T + (g/r)(I - rr^T)` is measured in the
/// Frobenius norm, with `g'` from centered differences of the tabulated
/// derivative at the table spacing.
pub fn measure_sup_bounds(table: &KernelTable, k: u32) -> Result<f64> {
    let g = table.g_eps();
    match k {
        1 => Ok(g.iter().fold(0.0, |m, v| m.max(v.abs()))),
        2 => {
            let r = table.radii();
            let d = table.d() as f64;
            let mut sup: f64 = 0.0;
            for i in 1..r.len() - 1 {
                let (h0, h1) = (r[i] - r[i - 1], r[i + 1] - r[i]);
                // second-order centered difference on a nonuniform grid
                let dg = (g[i + 1] * h0 * h0 - g[i - 1] * h1 * h1 + g[i] * (h1 * h1 - h0 * h0))
                    / (h0 * h1 * (h0 + h1));
                let tangential = g[i] / r[i];
                sup = sup.max((dg * dg + (d - 1.0) * tangential * tangential).sqrt());
            }
            Ok(sup)
        }
        _ => Err(Error::param(format!(
            "derivative order k = {k} not supported (k must be 1 or 2)"
        ))),
    }
}

/// `|grad V_eps(x + xi) - grad V_eps(x)| / (K_eps(x) |xi|)` for unit coupling.
pub fn lipschitz_ratio(table: &KernelTable, x: &[f64], xi: &[f64]) -> f64 {
    let d = x.len();
    let shifted: Vec<f64> = x.iter().zip(xi).map(|(a, b)| a + b).collect();
    let mut g0 = vec![0.0; d];
    let mut g1 = vec![0.0; d];
    table.grad_into(x, 1.0, &mut g0);
    table.grad_into(&shifted, 1.0, &mut g1);
    let diff = g0
        .iter()
        .zip(&g1)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt();
    let step = norm(xi);
    if step == 0.0 {
        return 0.0;
    }
    diff / (auxiliary_k(x, table.eps(), table.s()) * step)
}

/// Largest observed [`lipschitz_ratio`] over calibration pairs, inflated by
/// `safety`; the result is then held fixed.
pub fn fit_lipschitz_constant<'a, I>(table: &KernelTable, pairs: I, safety: f64) -> f64
where
    I: IntoIterator<Item = (&'a [f64], &'a [f64])>,
{
    pairs
        .into_iter()
        .map(|(x, xi)| lipschitz_ratio(table, x, xi))
        .fold(0.0, f64::max)
        * safety
}
