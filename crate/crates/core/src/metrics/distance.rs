use super::histogram::{check_probability, HistGrid, Histogram};
use crate::pde::DensityField;
use crate::{Error, Result};

/// Floor applied to the reference masses by the smoothed entropy.
pub const SMOOTHING_FLOOR: f64 = 1e-12;
/// Largest tolerated negative relative entropy (round-off).
pub const GIBBS_TOLERANCE: f64 = 1e-12;
/// Largest tolerated violation of `||p - q||_1 <= sqrt(2 H(p|q))`.
pub const CKP_TOLERANCE: f64 = 1e-9;

/// `H(p|q) = sum p_k ln(p_k / q_k)`, or `+inf` with the bins where `p_k > 0`
/// but `q_k = 0`.
#[derive(Debug, Clone, PartialEq)]
pub struct RelativeEntropy {
    pub value: f64,
    pub offending_bins: Vec<usize>,
}

impl RelativeEntropy {
    pub fn is_finite(&self) -> bool {
        self.offending_bins.is_empty()
    }
}

/// Relative entropy of two histograms on the same grid.
pub fn relative_entropy(p: &Histogram, q: &Histogram) -> Result<RelativeEntropy> {
    same_grid(p.grid(), q.grid())?;
    Ok(relative_entropy_masses(p.masses(), q.masses()))
}

/// Relative entropy of two mass vectors of equal length, with `0 ln 0 = 0`.
pub fn relative_entropy_masses(p: &[f64], q: &[f64]) -> RelativeEntropy {
    debug_assert_eq!(p.len(), q.len());
    let mut value = 0.0;
    let mut offending_bins = Vec::new();
    for (k, (&pk, &qk)) in p.iter().zip(q).enumerate() {
        if pk == 0.0 {
            continue;
        }
        if qk == 0.0 {
            offending_bins.push(k);
        } else {
            value += pk * (pk / qk).ln();
        }
    }
    if !offending_bins.is_empty() {
        value = f64::INFINITY;
    }
    RelativeEntropy {
        value,
        offending_bins,
    }
}

/// Relative entropy against the reference with its empty bins under `p`
/// raised to [`SMOOTHING_FLOOR`] and renormalized. Always finite; for plots
/// and rate fits only.
pub fn smoothed_relative_entropy(p: &[f64], q: &[f64]) -> f64 {
    let floored = |pk: f64, qk: f64| if qk == 0.0 && pk > 0.0 { SMOOTHING_FLOOR } else { qk };
    let total: f64 = p.iter().zip(q).map(|(&pk, &qk)| floored(pk, qk)).sum();
    let p_total: f64 = p.iter().sum();
    p.iter()
        .zip(q)
        .filter(|(pk, _)| **pk > 0.0)
        .map(|(&pk, &qk)| pk * ((pk * total) / (floored(pk, qk) * p_total)).ln())
        .sum()
}

/// `sum |p_k - q_k|`.
pub fn l1_distance(p: &[f64], q: &[f64]) -> f64 {
    p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum()
}

/// `(sum |p_k - q_k|^2 / vol)^(1/2)`: the L2 distance of the piecewise
/// constant densities with cells of volume `vol`.
pub fn l2_distance(p: &[f64], q: &[f64], vol: f64) -> f64 {
    (p.iter().zip(q).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / vol).sqrt()
}

/// Distances between two probability densities.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceReport {
    /// `H(p|q)` in nats; `+inf` if `p` charges a bin where `q` vanishes.
    pub rel_entropy: f64,
    /// Finite variant with the floored reference.
    pub rel_entropy_smoothed: f64,
    pub l1: f64,
    pub l2: f64,
    /// `sqrt(2 H) - L1`; nonnegative by the Csiszar-Kullback-Pinsker
    /// inequality.
    pub ckp_margin: f64,
    pub offending_bins: Vec<usize>,
}

/// All distances between two histograms, enforcing Gibbs' inequality and
/// the Csiszar-Kullback-Pinsker inequality.
pub fn ckp_check(p: &Histogram, q: &Histogram) -> Result<DistanceReport> {
    same_grid(p.grid(), q.grid())?;
    distance_report(p.masses(), q.masses(), p.grid().bin_volume())
}

/// [`ckp_check`] on raw mass vectors with cell volume `vol`.
pub fn distance_report(p: &[f64], q: &[f64], vol: f64) -> Result<DistanceReport> {
    if p.len() != q.len() {
        return Err(Error::param("mass vectors differ in length"));
    }
    let h = relative_entropy_masses(p, q);
    let l1 = l1_distance(p, q);
    if h.value < -GIBBS_TOLERANCE {
        return Err(Error::Invariant(format!(
            "relative entropy {:e} is negative beyond {GIBBS_TOLERANCE:e}",
            h.value
        )));
    }
    let ckp_margin = (2.0 * h.value.max(0.0)).sqrt() - l1;
    if ckp_margin < -CKP_TOLERANCE {
        return Err(Error::Invariant(format!(
            "L1 distance {l1:e} exceeds sqrt(2 H) = {:e} (margin {ckp_margin:e})",
            (2.0 * h.value.max(0.0)).sqrt()
        )));
    }
    Ok(DistanceReport {
        rel_entropy: h.value,
        rel_entropy_smoothed: smoothed_relative_entropy(p, q),
        l1,
        l2: l2_distance(p, q, vol),
        ckp_margin,
        offending_bins: h.offending_bins,
    })
}

/// Compares species `alpha` of two fields on the same grid, cell by cell.
///
/// Entropy, L1 and the CKP margin use the cell masses `f_k h^d`
/// renormalized to one; `l2` is `||f - g||_{L2}` of the unnormalized
/// fields.
pub fn compare_fields(a: &DensityField, b: &DensityField, alpha: usize) -> Result<DistanceReport> {
    if a.grid != b.grid {
        return Err(Error::param("fields live on different grids"));
    }
    if alpha >= a.n_species() || alpha >= b.n_species() {
        return Err(Error::param(format!("species {alpha} missing from a field")));
    }
    let (fa, fb) = (&a.species[alpha], &b.species[alpha]);
    if fa.iter().chain(fb).any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::param("field values must be finite and nonnegative"));
    }
    let vol = a.grid.cell_volume();
    let p = normalized(fa)?;
    let q = normalized(fb)?;
    let mut report = distance_report(&p, &q, vol)?;
    report.l2 = (fa.iter().zip(fb).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() * vol).sqrt();
    Ok(report)
}

fn normalized(f: &[f64]) -> Result<Vec<f64>> {
    let total: f64 = f.iter().sum();
    if !(total > 0.0) {
        return Err(Error::param("field has zero mass"));
    }
    let p: Vec<f64> = f.iter().map(|v| v / total).collect();
    check_probability(&p).map(|_| p)
}

fn same_grid(a: &HistGrid, b: &HistGrid) -> Result<()> {
    if a != b {
        return Err(Error::param("histograms live on different grids"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn hist(m: &[f64]) -> Histogram {
        Histogram::from_masses(HistGrid::new(1, m.len(), 1.0).unwrap(), m.to_vec(), 0).unwrap()
    }

    #[test]
    fn identical_distributions_have_zero_entropy() {
        let p = hist(&[0.2, 0.3, 0.5]);
        let r = ckp_check(&p, &p).unwrap();
        assert_eq!(r.rel_entropy, 0.0);
        assert_eq!(r.l1, 0.0);
        assert_eq!(r.ckp_margin, 0.0);
    }

    #[test]
    fn two_bin_entropy_by_direct_summation() {
        let h = relative_entropy(&hist(&[0.5, 0.5]), &hist(&[0.25, 0.75])).unwrap();
        let oracle = 0.5 * 2f64.ln() + 0.5 * (2.0f64 / 3.0).ln();
        assert!((h.value - oracle).abs() < 1e-15);
        assert!((h.value - 0.143841).abs() < 1e-6);
        let r = ckp_check(&hist(&[0.5, 0.5]), &hist(&[0.25, 0.75])).unwrap();
        assert!((r.l1 - 0.5).abs() < 1e-15);
        assert!((r.ckp_margin - ((2.0 * oracle).sqrt() - 0.5)).abs() < 1e-15);
        assert!((r.ckp_margin - 0.03636).abs() < 1e-5);
    }

    #[test]
    fn point_mass_against_uniform() {
        let h = relative_entropy(&hist(&[1.0, 0.0]), &hist(&[0.5, 0.5])).unwrap();
        assert!((h.value - 2f64.ln()).abs() < 1e-15);
    }

    #[test]
    fn missing_support_is_flagged_not_floored() {
        let h = relative_entropy(&hist(&[0.5, 0.25, 0.25]), &hist(&[0.5, 0.5, 0.0])).unwrap();
        assert!(!h.is_finite());
        assert_eq!(h.value, f64::INFINITY);
        assert_eq!(h.offending_bins, vec![2]);
        let s = smoothed_relative_entropy(&[0.5, 0.25, 0.25], &[0.5, 0.5, 0.0]);
        assert!(s.is_finite() && s > 5.0);
        // bins outside both supports do not shift the value
        let a = smoothed_relative_entropy(&[0.5, 0.5], &[0.25, 0.75]);
        let b = smoothed_relative_entropy(&[0.5, 0.5, 0.0, 0.0], &[0.25, 0.75, 0.0, 0.0]);
        assert_eq!(a, b);
    }

    #[test]
    fn random_pairs_satisfy_gibbs_and_ckp() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1000 {
            let k = rng.gen_range(2..20);
            let mut p: Vec<f64> = (0..k).map(|_| rng.gen::<f64>().powi(3)).collect();
            let mut q: Vec<f64> = (0..k).map(|_| rng.gen::<f64>() + 1e-3).collect();
            let (sp, sq) = (p.iter().sum::<f64>(), q.iter().sum::<f64>());
            p.iter_mut().for_each(|v| *v /= sp);
            q.iter_mut().for_each(|v| *v /= sq);
            let r = distance_report(&p, &q, 1.0).unwrap();
            assert!(r.rel_entropy >= -GIBBS_TOLERANCE);
            assert!(r.ckp_margin >= -CKP_TOLERANCE);
        }
    }

    #[test]
    fn grids_must_match() {
        let p = hist(&[0.5, 0.5]);
        let q = Histogram::from_masses(HistGrid::new(1, 2, 2.0).unwrap(), vec![0.5, 0.5], 0).unwrap();
        assert!(relative_entropy(&p, &q).is_err());
    }
}
