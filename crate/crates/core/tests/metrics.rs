use proptest::prelude::*;

use msad_core::metrics::{
    distance_report, l1_distance, relative_entropy_masses, smoothed_relative_entropy, wilson_interval,
    HistGrid, Histogram,
};
use msad_core::pde::{gaussian_density, Grid};

fn normalized(v: Vec<f64>) -> Vec<f64> {
    let s: f64 = v.iter().sum();
    v.iter().map(|x| x / s).collect()
}

fn masses(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(1e-6f64..1.0, len).prop_map(normalized)
}

proptest! {
    #[test]
    fn gibbs_and_ckp_hold((p, q) in (2usize..40).prop_flat_map(|n| (masses(n), masses(n)))) {
        let r = distance_report(&p, &q, 1.0).unwrap();
        prop_assert!(r.rel_entropy >= -1e-12);
        prop_assert!(r.ckp_margin >= -1e-9);
        prop_assert!((r.l1 - l1_distance(&p, &q)).abs() == 0.0);
    }

    #[test]
    fn entropy_vanishes_only_on_the_diagonal(p in masses(16)) {
        prop_assert_eq!(relative_entropy_masses(&p, &p).value, 0.0);
        prop_assert_eq!(smoothed_relative_entropy(&p, &p), 0.0);
    }

    #[test]
    fn histogram_keeps_every_sample(points in prop::collection::vec(-10.0f64..10.0, 3..300)) {
        let n = points.len() / 3 * 3;
        let g = HistGrid::new(3, 6, 4.0).unwrap();
        let h = Histogram::from_samples(g, &points[..n]).unwrap();
        prop_assert_eq!(h.samples(), (n / 3) as u64);
        prop_assert!((h.masses().iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn wilson_interval_brackets_the_estimate(hits in 0usize..200, extra in 0usize..200) {
        let n = hits + extra + 1;
        let (lo, hi) = wilson_interval(hits, n);
        let p = hits as f64 / n as f64;
        prop_assert!(0.0 <= lo && lo <= p + 1e-12 && p <= hi + 1e-12 && hi <= 1.0);
    }
}

#[test]
fn samples_and_binned_field_agree() {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use statrs::distribution::Normal;
    let grid = Grid::new(3, 48, 8.0).unwrap();
    let f = gaussian_density(&grid, &[0.0; 3], 1.5, 6.0 * 1.5).unwrap();
    let hist = HistGrid::new(3, 8, 6.0).unwrap();
    let exact = Histogram::from_field(hist.clone(), &grid, &f).unwrap();
    let normal = Normal::new(0.0, 1.5).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let pts: Vec<f64> = (0..3 * 40_000).map(|_| rng.sample(normal)).collect();
    let sampled = Histogram::from_samples(hist, &pts).unwrap();
    let l1 = l1_distance(sampled.masses(), exact.masses());
    assert!(l1 < 0.05, "L1 between samples and binned density {l1}");
}
