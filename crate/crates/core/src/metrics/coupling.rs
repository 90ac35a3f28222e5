use crate::harness::valid_ranges;
use crate::particles::CoupledRun;
use crate::{Error, Result};

/// Normal quantile of the 95% Wilson interval.
const Z95: f64 = 1.959_963_984_540_054;

/// Empirical probabilities of the coupling event
/// `max_{alpha,i} |X~_ai - X_ai| >= N^-lambda` at each output time.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingStats {
    pub lambda: f64,
    pub n_particles: usize,
    pub times: Vec<f64>,
    pub hits: Vec<usize>,
    pub probabilities: Vec<f64>,
    /// 95% Wilson intervals `(lo, hi)`.
    pub intervals: Vec<(f64, f64)>,
    pub reps: usize,
}

impl CouplingStats {
    /// Midpoint of the final-time Wilson interval.
    pub fn final_midpoint(&self) -> f64 {
        let (lo, hi) = *self.intervals.last().expect("at least one time");
        0.5 * (lo + hi)
    }

    pub fn final_probability(&self) -> f64 {
        *self.probabilities.last().expect("at least one time")
    }
}

/// 95% Wilson score interval for `hits` successes in `n` trials.
pub fn wilson_interval(hits: usize, n: usize) -> (f64, f64) {
    if n == 0 {
        return (0.0, 1.0);
    }
    let nf = n as f64;
    let p = hits as f64 / nf;
    let z2 = Z95 * Z95;
    let denom = 1.0 + z2 / nf;
    let center = (p + z2 / (2.0 * nf)) / denom;
    let half = Z95 * (p * (1.0 - p) / nf + z2 / (4.0 * nf * nf)).sqrt() / denom;
    let lo = if hits == 0 { 0.0 } else { (center - half).max(0.0) };
    let hi = if hits == n { 1.0 } else { (center + half).min(1.0) };
    (lo, hi)
}

/// Aggregates replicated coupled runs into event probabilities.
///
/// `lambda` must lie in `(ell, 1/2 - ell (s+1))`.
pub fn coupling_event(runs: &[CoupledRun], lambda: f64, ell: f64, s: f64) -> Result<CouplingStats> {
    let first = runs.first().ok_or_else(|| Error::param("no coupled runs"))?;
    let d = first.x.first().map(|s| s.d).unwrap_or(0);
    valid_ranges(ell, s, d)?.check_lambda(lambda)?;
    let times: Vec<f64> = first.x.iter().map(|s| s.t).collect();
    let n_particles = first.x.first().map(|s| s.n_particles).unwrap_or(0);
    for r in runs {
        let t: Vec<f64> = r.x.iter().map(|s| s.t).collect();
        if t != times || r.x_tilde.len() != r.x.len() {
            return Err(Error::param("coupled runs have different output times"));
        }
    }
    let threshold = (n_particles as f64).powf(-lambda);
    let mut hits = vec![0usize; times.len()];
    for r in runs {
        for (h, dev) in hits.iter_mut().zip(r.max_deviation()) {
            // NaN deviations count as events
            if !(dev < threshold) {
                *h += 1;
            }
        }
    }
    let reps = runs.len();
    Ok(CouplingStats {
        lambda,
        n_particles,
        times,
        probabilities: hits.iter().map(|&h| h as f64 / reps as f64).collect(),
        intervals: hits.iter().map(|&h| wilson_interval(h, reps)).collect(),
        hits,
        reps,
    })
}
