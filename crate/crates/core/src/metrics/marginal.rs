use super::histogram::{HistGrid, Histogram};
use crate::kernels::{mollifier, BumpProfile};
use crate::particles::ParticleState;
use crate::pde::{DensityField, Grid};
use crate::{Error, Result};

/// Smallest Monte Carlo replication count for a marginal histogram.
pub const MIN_MARGINAL_REPS: usize = 30;
/// Largest gridded marginal dimension `d |K|`.
pub const MAX_MARGINAL_DIMS: usize = 3;

/// Mollified empirical measure of one species: every particle deposits the
/// bump `chi_b(. - x)` on the periodic grid, rescaled so that it carries
/// exactly `1/N` of discrete mass.
///
/// `positions` holds consecutive `d`-tuples. Positions outside the box are
/// wrapped.
pub fn empirical_density(positions: &[f64], bandwidth: f64, grid: &Grid) -> Result<DensityField> {
    let d = grid.d();
    let h = grid.h();
    if !(bandwidth >= 2.0 * h) {
        return Err(Error::param(format!(
            "bandwidth {bandwidth} is below 2h = {}: the bump is not resolved",
            2.0 * h
        )));
    }
    if bandwidth >= grid.half_width() {
        return Err(Error::param(format!(
            "bandwidth {bandwidth} must be smaller than the box half-width {}",
            grid.half_width()
        )));
    }
    if positions.is_empty() || positions.len() % d != 0 {
        return Err(Error::param(format!("need a nonempty list of {d}-dimensional positions")));
    }
    if positions.iter().any(|v| !v.is_finite()) {
        return Err(Error::param("positions must be finite"));
    }
    let profile = BumpProfile::new(d)?;
    let n = positions.len() / d;
    let m = grid.m() as i64;
    let reach = (bandwidth / h).ceil() as i64;
    let width = (2 * reach + 1) as usize;
    let stencil = width.pow(d as u32);
    let mut density = vec![0.0; grid.len()];
    let mut weights = vec![0.0; stencil];
    let mut nodes = vec![0usize; stencil];
    let mut offset = vec![0.0; d];
    let mut multi = vec![0usize; d];
    for x in positions.chunks(d) {
        let base: Vec<i64> = x
            .iter()
            .map(|&c| ((grid.wrap(c) + grid.half_width()) / h).floor() as i64)
            .collect();
        let wrapped: Vec<f64> = x.iter().map(|&c| grid.wrap(c)).collect();
        let mut total = 0.0;
        for s in 0..stencil {
            let mut rest = s;
            for ax in (0..d).rev() {
                let k = base[ax] + (rest % width) as i64 - reach;
                rest /= width;
                offset[ax] = -grid.half_width() + k as f64 * h - wrapped[ax];
                multi[ax] = k.rem_euclid(m) as usize;
            }
            let w = mollifier(&offset, bandwidth, &profile);
            weights[s] = w;
            nodes[s] = grid.flatten(&multi);
            total += w;
        }
        if !(total > 0.0) {
            return Err(Error::param("bump deposit vanished on the grid"));
        }
        let scale = 1.0 / (total * grid.cell_volume() * n as f64);
        for (&w, &node) in weights.iter().zip(&nodes) {
            density[node] += w * scale;
        }
    }
    DensityField::new(grid.clone(), 0.0, vec![density])
}

/// How replicated states are turned into marginal samples.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MarginalSampling {
    /// The first `K_alpha` particles of each species, one tuple per
    /// replication.
    Designated,
    /// Every disjoint block of `K_alpha` consecutive particles per species
    /// gives a tuple.
    Pooled,
}

/// Histogram of the `K`-marginal over replicated states.
///
/// `k[alpha]` particles of species `alpha` form one tuple of dimension
/// `d |K|`, coordinates ordered by species, then particle, then axis.
pub fn marginal_histogram(
    states: &[ParticleState],
    k: &[usize],
    grid: &HistGrid,
    sampling: MarginalSampling,
) -> Result<Histogram> {
    let first = states
        .first()
        .ok_or_else(|| Error::param("no replicated states"))?;
    if states.len() < MIN_MARGINAL_REPS {
        return Err(Error::param(format!(
            "{} replications given, at least {MIN_MARGINAL_REPS} required",
            states.len()
        )));
    }
    let (n, big_n, d) = (first.n_species, first.n_particles, first.d);
    if states.iter().any(|s| (s.n_species, s.n_particles, s.d) != (n, big_n, d)) {
        return Err(Error::param("replicated states differ in shape"));
    }
    if k.len() != n {
        return Err(Error::param(format!("K lists {} species, states have {n}", k.len())));
    }
    let total_k: usize = k.iter().sum();
    if total_k == 0 {
        return Err(Error::param("K selects no particle"));
    }
    if let Some(alpha) = k.iter().position(|&ka| ka > big_n) {
        return Err(Error::param(format!(
            "K asks for {} particles of species {alpha}, only {big_n} exist",
            k[alpha]
        )));
    }
    let dims = d * total_k;
    if dims > MAX_MARGINAL_DIMS {
        return Err(Error::param(format!(
            "marginal dimension d |K| = {dims} exceeds {MAX_MARGINAL_DIMS}; reduce K"
        )));
    }
    if grid.dims() != dims {
        return Err(Error::param(format!(
            "histogram has {} dimensions, the marginal has {dims}",
            grid.dims()
        )));
    }
    let tuples = match sampling {
        MarginalSampling::Designated => 1,
        MarginalSampling::Pooled => k
            .iter()
            .filter(|&&ka| ka > 0)
            .map(|&ka| big_n / ka)
            .min()
            .unwrap_or(1),
    };
    let mut points = Vec::with_capacity(states.len() * tuples * dims);
    for s in states {
        for t in 0..tuples {
            for (alpha, &ka) in k.iter().enumerate() {
                for i in t * ka..(t + 1) * ka {
                    points.extend_from_slice(s.position(alpha, i));
                }
            }
        }
    }
    Histogram::from_samples(grid.clone(), &points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::distance::l1_distance;
    use crate::pde::lp_norm;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand::distributions::Distribution;
    use statrs::distribution::Normal;

    fn states(n: usize, big_n: usize, d: usize, reps: usize, seed: u64) -> Vec<ParticleState> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0).unwrap();
        (0..reps)
            .map(|_| ParticleState {
                t: 0.0,
                step_index: 0,
                seed,
                n_species: n,
                n_particles: big_n,
                d,
                positions: (0..n * big_n * d).map(|_| normal.sample(&mut rng)).collect(),
            })
            .collect()
    }

    #[test]
    fn deposit_has_unit_mass() {
        let grid = Grid::new(3, 32, 4.0).unwrap();
        let pos = [0.1, -0.3, 3.9, 1.0, 1.0, -2.2, -3.99, 0.0, 0.5];
        let f = empirical_density(&pos, 0.8, &grid).unwrap();
        assert!((f.mass(0) - 1.0).abs() < 1e-10);
        assert!(f.species[0].iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn single_particle_at_node_gives_sampled_mollifier() {
        let grid = Grid::new(2, 32, 4.0).unwrap();
        let profile = BumpProfile::new(2).unwrap();
        let b = 1.0;
        let x = [grid.coord(16), grid.coord(18)];
        let f = empirical_density(&x, b, &grid).unwrap();
        let mut node = [0.0; 2];
        let samples: Vec<f64> = (0..grid.len())
            .map(|idx| {
                grid.node(idx, &mut node);
                mollifier(&[node[0] - x[0], node[1] - x[1]], b, &profile)
            })
            .collect();
        let mass: f64 = samples.iter().sum::<f64>() * grid.cell_volume();
        assert!((mass - 1.0).abs() < 1e-2);
        for (v, s) in f.species[0].iter().zip(&samples) {
            assert!((v - s / mass).abs() < 1e-12, "{v} vs {s}");
        }
    }

    #[test]
    fn under_resolved_bandwidth_rejected() {
        let grid = Grid::new(1, 32, 4.0).unwrap();
        assert!(empirical_density(&[0.0], 0.49, &grid).is_err());
        assert!(empirical_density(&[0.0], 0.5, &grid).is_ok());
    }

    #[test]
    fn deposit_distance_to_gaussian_shrinks_with_n() {
        let grid = Grid::new(1, 64, 8.0).unwrap();
        let exact: Vec<f64> = (0..grid.len())
            .map(|k| {
                let x = grid.coord(k);
                (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
            })
            .collect();
        let l1 = |n: usize| {
            let s = states(1, n, 1, 1, 3);
            let f = empirical_density(&s[0].positions, 0.5, &grid).unwrap();
            let diff: Vec<f64> = f.species[0].iter().zip(&exact).map(|(a, b)| a - b).collect();
            lp_norm(&grid, &diff, 1.0)
        };
        let (a, b, c) = (l1(100), l1(1000), l1(10000));
        assert!(a > b && b > c, "{a} {b} {c}");
    }

    #[test]
    fn marginal_masses_sum_to_one() {
        let s = states(2, 50, 1, 30, 1);
        let g = HistGrid::new(2, 8, 3.0).unwrap();
        let h = marginal_histogram(&s, &[1, 1], &g, MarginalSampling::Designated).unwrap();
        assert!((h.masses().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(h.samples(), 30);
        let p = marginal_histogram(&s, &[1, 1], &g, MarginalSampling::Pooled).unwrap();
        assert_eq!(p.samples(), 30 * 50);
    }

    #[test]
    fn one_particle_marginal_converges_to_its_law() {
        // standard normal samples against the exact bin probabilities
        let g = HistGrid::new(1, 8, 3.0).unwrap();
        let exact: Vec<f64> = (0..8)
            .map(|b| {
                let cdf = |x: f64| 0.5 * (1.0 + statrs::function::erf::erf(x / 2f64.sqrt()));
                let lo = if b == 0 { f64::NEG_INFINITY } else { -3.0 + 0.75 * b as f64 };
                let hi = if b == 7 { f64::INFINITY } else { -3.0 + 0.75 * (b + 1) as f64 };
                cdf(hi) - cdf(lo)
            })
            .collect();
        let err = |reps: usize| {
            let s = states(1, 1, 1, reps, 11);
            let h = marginal_histogram(&s, &[1], &g, MarginalSampling::Designated).unwrap();
            l1_distance(h.masses(), &exact)
        };
        let (a, b) = (err(100), err(100_000));
        assert!(b < a && b < 0.02, "{a} {b}");
    }

    #[test]
    fn independent_species_have_product_marginal() {
        let s = states(2, 1, 1, 40_000, 5);
        let g2 = HistGrid::new(2, 6, 2.0).unwrap();
        let g1 = HistGrid::new(1, 6, 2.0).unwrap();
        let joint = marginal_histogram(&s, &[1, 1], &g2, MarginalSampling::Designated).unwrap();
        let m0 = marginal_histogram(&s, &[1, 0], &g1, MarginalSampling::Designated).unwrap();
        let m1 = marginal_histogram(&s, &[0, 1], &g1, MarginalSampling::Designated).unwrap();
        let product: Vec<f64> = m0
            .masses()
            .iter()
            .flat_map(|a| m1.masses().iter().map(move |b| a * b))
            .collect();
        let mi = crate::metrics::relative_entropy_masses(joint.masses(), &product).value;
        // plug-in bias of the mutual information is about (B-1)^2 / (2 n)
        let floor = 25.0 / (2.0 * 40_000.0);
        assert!(mi < 4.0 * floor, "{mi} vs noise floor {floor}");
    }

    #[test]
    fn too_many_dimensions_rejected() {
        let s = states(2, 4, 3, 30, 1);
        let g = HistGrid::new(3, 4, 1.0).unwrap();
        let err = marginal_histogram(&s, &[1, 1], &g, MarginalSampling::Designated).unwrap_err();
        assert!(err.to_string().contains("reduce K"), "{err}");
        assert!(marginal_histogram(&s[..10], &[1, 0], &g, MarginalSampling::Designated).is_err());
    }
}
