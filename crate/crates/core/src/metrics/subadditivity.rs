use std::collections::HashMap;

use rand::Rng;

use super::distance::relative_entropy_masses;
use crate::{Error, Result};

/// Largest species count of a discrete joint law.
pub const MAX_SPECIES: usize = 2;
/// Largest particle count per species.
pub const MAX_PARTICLES: usize = 4;
/// Largest single-particle state space.
pub const MAX_STATES: usize = 8;

const EXCHANGE_TOLERANCE: f64 = 1e-12;

/// Joint law of `n` species with `N` particles each on a finite state
/// space `{0, .., S-1}`.
///
/// Configurations are indexed in base `S` with particle `(alpha, i)` at
/// digit position `alpha N + i`, most significant first.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteJoint {
    n_species: usize,
    n_particles: usize,
    states: usize,
    probs: Vec<f64>,
}

impl DiscreteJoint {
    pub fn new(n_species: usize, n_particles: usize, states: usize, probs: Vec<f64>) -> Result<Self> {
        check_shape(n_species, n_particles, states)?;
        let len = states.pow((n_species * n_particles) as u32);
        if probs.len() != len {
            return Err(Error::param(format!(
                "{} probabilities for {len} configurations",
                probs.len()
            )));
        }
        super::histogram::check_probability(&probs)?;
        Ok(Self {
            n_species,
            n_particles,
            states,
            probs,
        })
    }

    /// `rho_1^{(x) N} (x) ... (x) rho_n^{(x) N}`.
    pub fn product(rho: &[Vec<f64>], n_particles: usize) -> Result<Self> {
        let n = rho.len();
        let states = rho.first().map_or(0, |r| r.len());
        check_shape(n, n_particles, states)?;
        if rho.iter().any(|r| r.len() != states) {
            return Err(Error::param("one-particle laws differ in state count"));
        }
        for r in rho {
            super::histogram::check_probability(r)?;
        }
        let sites = n * n_particles;
        let mut digits = vec![0usize; sites];
        let probs = (0..states.pow(sites as u32))
            .map(|idx| {
                decode(idx, states, &mut digits);
                digits
                    .iter()
                    .enumerate()
                    .map(|(site, &x)| rho[site / n_particles][x])
                    .product()
            })
            .collect();
        Self::new(n, n_particles, states, probs)
    }

    /// Random within-species exchangeable law: a random weight for every
    /// unordered configuration, shared by all its orderings, mixed with
    /// weight `1 - w` into the product of `rho`.
    pub fn random_exchangeable<R: Rng>(
        rho: &[Vec<f64>],
        n_particles: usize,
        w: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let base = Self::product(rho, n_particles)?;
        let (n, states) = (base.n_species, base.states);
        let sites = n * n_particles;
        let mut digits = vec![0usize; sites];
        let mut weights: HashMap<Vec<usize>, f64> = HashMap::new();
        let mut raw = Vec::with_capacity(base.probs.len());
        for idx in 0..base.probs.len() {
            decode(idx, states, &mut digits);
            let key = canonical(&digits, n_particles);
            let v = *weights.entry(key).or_insert_with(|| rng.gen::<f64>().powi(4));
            raw.push(v);
        }
        let total: f64 = raw.iter().sum();
        let probs: Vec<f64> = raw
            .iter()
            .zip(&base.probs)
            .map(|(r, p)| (1.0 - w) * p + w * r / total)
            .collect();
        let sum: f64 = probs.iter().sum();
        Self::new(n, n_particles, states, probs.iter().map(|p| p / sum).collect())
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    /// Largest violation of invariance under swapping two particles of the
    /// same species.
    pub fn exchangeability_defect(&self) -> f64 {
        let sites = self.n_species * self.n_particles;
        let mut digits = vec![0usize; sites];
        let mut worst: f64 = 0.0;
        for (idx, &p) in self.probs.iter().enumerate() {
            decode(idx, self.states, &mut digits);
            for alpha in 0..self.n_species {
                for i in 0..self.n_particles.saturating_sub(1) {
                    let site = alpha * self.n_particles + i;
                    digits.swap(site, site + 1);
                    let q = self.probs[encode(&digits, self.states)];
                    digits.swap(site, site + 1);
                    worst = worst.max((p - q).abs());
                }
            }
        }
        worst
    }

    /// Law of the first `k[alpha]` particles of each species, indexed like
    /// the joint with the kept sites in species-then-particle order.
    pub fn marginal(&self, k: &[usize]) -> Result<Vec<f64>> {
        if k.len() != self.n_species || k.iter().any(|&ka| ka > self.n_particles) {
            return Err(Error::param(format!(
                "K = {k:?} does not fit {} species of {} particles",
                self.n_species, self.n_particles
            )));
        }
        let kept: Vec<usize> = (0..self.n_species)
            .flat_map(|alpha| (0..k[alpha]).map(move |i| alpha * self.n_particles + i))
            .collect();
        let sites = self.n_species * self.n_particles;
        let mut digits = vec![0usize; sites];
        let mut out = vec![0.0; self.states.pow(kept.len() as u32)];
        for (idx, &p) in self.probs.iter().enumerate() {
            decode(idx, self.states, &mut digits);
            let m = kept.iter().fold(0, |acc, &site| acc * self.states + digits[site]);
            out[m] += p;
        }
        Ok(out)
    }
}

/// Both sides of the marginal subadditivity inequality.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SubadditivityReport {
    /// `H(f^(K) | rho^(K))`.
    pub lhs: f64,
    /// `(max_alpha K_alpha / N) H(f_N | rho^(N))`.
    pub rhs: f64,
    pub holds: bool,
}

/// Evaluates `H(f^(K) | (x)_alpha rho_alpha^{(x) K_alpha})` against
/// `(max K_alpha / N) H(f_N | (x)_alpha rho_alpha^{(x) N})` by exhaustive
/// enumeration.
///
/// Sums run over at most `8^8` terms in double precision; `holds` allows a
/// round-off slack of `1e-12` relative plus `1e-15` absolute.
pub fn subadditivity_check(
    joint: &DiscreteJoint,
    rho: &[Vec<f64>],
    k: &[usize],
) -> Result<SubadditivityReport> {
    let defect = joint.exchangeability_defect();
    if defect > EXCHANGE_TOLERANCE {
        return Err(Error::param(format!(
            "joint law is not exchangeable within species (defect {defect:e})"
        )));
    }
    if k.iter().all(|&ka| ka == 0) {
        return Err(Error::param("K selects no particle"));
    }
    let reference = DiscreteJoint::product(rho, joint.n_particles)?;
    if reference.states != joint.states || reference.n_species != joint.n_species {
        return Err(Error::param("reference laws do not match the joint"));
    }
    let full = relative_entropy_masses(&joint.probs, &reference.probs).value;
    let lhs = relative_entropy_masses(&joint.marginal(k)?, &reference.marginal(k)?).value;
    let max_k = *k.iter().max().expect("nonempty K") as f64;
    let rhs = max_k / joint.n_particles as f64 * full;
    Ok(SubadditivityReport {
        lhs,
        rhs,
        holds: lhs <= rhs + 1e-12 * rhs.abs() + 1e-15,
    })
}

fn check_shape(n: usize, big_n: usize, states: usize) -> Result<()> {
    if n == 0 || n > MAX_SPECIES || big_n == 0 || big_n > MAX_PARTICLES || states < 2 || states > MAX_STATES {
        return Err(Error::param(format!(
            "discrete joint needs 1 <= n <= {MAX_SPECIES}, 1 <= N <= {MAX_PARTICLES} and \
             2 <= states <= {MAX_STATES}; got n = {n}, N = {big_n}, states = {states}"
        )));
    }
    Ok(())
}

fn decode(mut idx: usize, states: usize, digits: &mut [usize]) {
    for d in digits.iter_mut().rev() {
        *d = idx % states;
        idx /= states;
    }
}

fn encode(digits: &[usize], states: usize) -> usize {
    digits.iter().fold(0, |acc, &d| acc * states + d)
}

// per species sorted states: the unordered configuration
fn canonical(digits: &[usize], n_particles: usize) -> Vec<usize> {
    let mut key = digits.to_vec();
    for block in key.chunks_mut(n_particles) {
        block.sort_unstable();
    }
    key
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn product_joint_gives_zero_on_both_sides() {
        let rho = vec![vec![0.3, 0.7], vec![0.5, 0.5]];
        let joint = DiscreteJoint::product(&rho, 3).unwrap();
        let r = subadditivity_check(&joint, &rho, &[1, 2]).unwrap();
        assert_eq!((r.lhs, r.rhs), (0.0, 0.0));
        assert!(r.holds);
    }

    #[test]
    fn two_particle_correlated_joint_by_enumeration() {
        // states (0,0), (0,1), (1,0), (1,1)
        let joint = DiscreteJoint::new(1, 2, 2, vec![0.4, 0.1, 0.1, 0.4]).unwrap();
        let rho = vec![vec![0.5, 0.5]];
        let r = subadditivity_check(&joint, &rho, &[1]).unwrap();
        // the one-particle marginal is (1/2, 1/2): lhs = 0
        assert!(r.lhs.abs() < 1e-15);
        let full = 2.0 * 0.4 * (0.4f64 / 0.25).ln() + 2.0 * 0.1 * (0.1f64 / 0.25).ln();
        assert!((r.rhs - 0.5 * full).abs() < 1e-15);
        assert!(r.holds);
        // a biased reference makes both sides positive
        let rho = vec![vec![0.8, 0.2]];
        let r = subadditivity_check(&joint, &rho, &[1]).unwrap();
        let lhs = 0.5 * (0.5f64 / 0.8).ln() + 0.5 * (0.5f64 / 0.2).ln();
        assert!((r.lhs - lhs).abs() < 1e-15);
        assert!(r.holds && r.lhs > 0.0);
    }

    #[test]
    fn full_marginal_matches_with_factor_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let rho = vec![vec![0.2, 0.3, 0.5]];
        let joint = DiscreteJoint::random_exchangeable(&rho, 3, 0.7, &mut rng).unwrap();
        let r = subadditivity_check(&joint, &rho, &[3]).unwrap();
        assert!((r.lhs - r.rhs).abs() <= 1e-13 * r.rhs);
        assert!(r.holds);
    }

    #[test]
    fn random_joints_satisfy_the_bound() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..50 {
            let n = rng.gen_range(1..=2);
            let big_n = rng.gen_range(1..=3);
            let s = rng.gen_range(2..=4);
            let rho: Vec<Vec<f64>> = (0..n)
                .map(|_| {
                    let v: Vec<f64> = (0..s).map(|_| rng.gen::<f64>() + 0.05).collect();
                    let t: f64 = v.iter().sum();
                    v.iter().map(|x| x / t).collect()
                })
                .collect();
            let joint = DiscreteJoint::random_exchangeable(&rho, big_n, rng.gen(), &mut rng).unwrap();
            let k: Vec<usize> = (0..n).map(|_| rng.gen_range(0..=big_n)).collect();
            if k.iter().all(|&v| v == 0) {
                continue;
            }
            let r = subadditivity_check(&joint, &rho, &k).unwrap();
            assert!(r.holds, "{r:?} for K = {k:?}");
        }
    }

    #[test]
    fn marginals_never_exceed_the_full_entropy() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let rho = vec![vec![0.25; 4], vec![0.1, 0.2, 0.3, 0.4]];
        let joint = DiscreteJoint::random_exchangeable(&rho, 2, 0.5, &mut rng).unwrap();
        let reference = DiscreteJoint::product(&rho, 2).unwrap();
        let full = relative_entropy_masses(joint.probs(), reference.probs()).value;
        for k in [[1, 0], [0, 1], [1, 1], [2, 1], [2, 2]] {
            let m = relative_entropy_masses(&joint.marginal(&k).unwrap(), &reference.marginal(&k).unwrap());
            assert!(m.value <= full + 1e-15, "{k:?}");
        }
    }

    #[test]
    fn non_exchangeable_joint_rejected() {
        let joint = DiscreteJoint::new(1, 2, 2, vec![0.4, 0.3, 0.1, 0.2]).unwrap();
        let err = subadditivity_check(&joint, &[vec![0.5, 0.5]], &[1]).unwrap_err();
        assert!(err.to_string().contains("exchangeable"));
    }

    #[test]
    fn oversized_spaces_rejected() {
        assert!(DiscreteJoint::product(&[vec![0.5, 0.5]], 5).is_err());
        assert!(DiscreteJoint::product(&[vec![1.0 / 9.0; 9]], 2).is_err());
    }
}
