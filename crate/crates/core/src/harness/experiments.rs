use std::str::FromStr;
use std::sync::Arc;

use super::rates::{predicted_zeta, valid_ranges, RateTable};
use crate::config::RunConfig;
use crate::exec::{map_indexed, Execution};
use crate::kernels::KernelTable;
use crate::metrics::{
    compare_fields, coupling_event, l1_distance, lln_statistic, HistGrid, Histogram, LlnConfig,
    Psi, MAX_MARGINAL_DIMS,
};
use crate::particles::{simulate, simulate_coupled, DriftEngine, DriftTimeline};
use crate::pde::{check_smallness, solve, FieldTimeline, KernelChoice};
use crate::rng::replica_seed;
use crate::{Error, Result};

/// Fewest replications of the coupling experiment.
pub const MIN_COUPLING_REPS: usize = 50;
/// Fewest replications of the marginal experiment.
pub const MIN_MARGINAL_RATE_REPS: usize = 100;
/// Default replications of the law-of-large-numbers experiment.
pub const DEFAULT_LLN_REPS: usize = 200;
/// Reference exponents `m` of the recorded LLN bound shapes.
pub const LLN_BOUND_M: [u32; 3] = [1, 2, 4];

const TAG_COUPLING: u64 = 1 << 40;
const TAG_MARGINAL: u64 = 2 << 40;
const TAG_LLN: u64 = 3 << 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    PdeError,
    Coupling,
    Marginal,
    Lln,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::PdeError => "pde-error",
            ExperimentKind::Coupling => "coupling",
            ExperimentKind::Marginal => "marginal",
            ExperimentKind::Lln => "lln",
        }
    }
}

impl FromStr for ExperimentKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pde-error" => Ok(ExperimentKind::PdeError),
            "coupling" => Ok(ExperimentKind::Coupling),
            "marginal" => Ok(ExperimentKind::Marginal),
            "lln" => Ok(ExperimentKind::Lln),
            other => Err(Error::Config(format!(
                "unknown experiment {other:?}; expected pde-error, coupling, marginal or lln"
            ))),
        }
    }
}

/// Test function of the LLN experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LlnPsi {
    #[default]
    GradV,
    Auxiliary,
}

/// Runs one experiment with the lists and counts of `config.experiment`.
pub fn run_experiment(kind: ExperimentKind, config: &RunConfig, exec: Execution) -> Result<RateTable> {
    let ex = &config.experiment;
    match kind {
        ExperimentKind::PdeError => run_pde_error_experiment(config, &ex.eps_list, exec),
        ExperimentKind::Coupling => run_coupling_experiment(
            config,
            &ex.n_list,
            config.lambda()?,
            ex.reps.unwrap_or(MIN_COUPLING_REPS),
            exec,
        ),
        ExperimentKind::Marginal => run_marginal_rate_experiment(
            config,
            &ex.n_list,
            ex.reps.unwrap_or(MIN_MARGINAL_RATE_REPS),
            exec,
        ),
        ExperimentKind::Lln => run_lln_experiment(
            config,
            &ex.n_list,
            ex.theta,
            ex.reps.unwrap_or(DEFAULT_LLN_REPS),
            LlnPsi::GradV,
            exec,
        ),
    }
}

fn fit_if_possible(table: &mut RateTable) {
    if let Err(e) = table.fit() {
        log::warn!("{}: no slope fit: {e}", table.experiment);
    }
}

fn mean_and_stderr(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    if v.len() < 2 {
        return (mean, 0.0);
    }
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn binomial_stderr(p: f64, reps: usize) -> f64 {
    (p * (1.0 - p) / reps as f64).sqrt()
}

/// `sup_t sum_alpha (||f~ - f||_{L2}^2 + H_smoothed(f~ | f))` between the
/// intermediate systems at each `eps` and the limiting system.
pub fn run_pde_error_experiment(config: &RunConfig, eps_list: &[f64], exec: Execution) -> Result<RateTable> {
    if eps_list.len() < 3 {
        return Err(Error::param(format!(
            "the PDE error experiment needs at least 3 values of eps, got {}",
            eps_list.len()
        )));
    }
    let grid = config.grid()?;
    let h = grid.h();
    if let Some(eps) = eps_list.iter().find(|&&e| e < 4.0 * h * (1.0 - 1e-12)) {
        return Err(Error::param(format!(
            "eps = {eps} is below 4h = {} (h = {h}); the mollifier is not resolved on the grid",
            4.0 * h
        )));
    }
    let riesz = config.riesz()?;
    let a = config.interaction()?;
    let initial = config.initial_field()?;
    let smallness = check_smallness(&initial, &a, &config.sigma(), &riesz, riesz.d() as f64 + 1.0)?;
    if !smallness.satisfied {
        return Err(Error::param(format!(
            "initial data violate the smallness condition (margins {:?})",
            smallness.margins
        )));
    }
    let limiting = solve(&config.pde_config(KernelChoice::Limiting(riesz), exec)?)?;
    let mut table = RateTable::new("pde-error", "sup_l2sq_plus_entropy");
    for &eps in eps_list {
        let kernel = KernelChoice::Mollified(config.kernel_table(eps)?);
        let tilde = solve(&config.pde_config(kernel, exec)?)?;
        let (mut sup_sum, mut sup_l2, mut sup_h) = (0.0f64, 0.0f64, 0.0f64);
        for (ft, fb) in tilde.fields.iter().zip(&limiting.fields) {
            if (ft.t - fb.t).abs() > 1e-12 {
                return Err(Error::param("intermediate and limiting solves have different output times"));
            }
            let (mut l2sq, mut ent) = (0.0, 0.0);
            for alpha in 0..ft.n_species() {
                let r = compare_fields(ft, fb, alpha)?;
                l2sq += r.l2 * r.l2;
                ent += r.rel_entropy_smoothed;
            }
            sup_sum = sup_sum.max(l2sq + ent);
            sup_l2 = sup_l2.max(l2sq);
            sup_h = sup_h.max(ent);
        }
        table.push(eps, "sup_l2sq_plus_entropy", sup_sum, 0.0, 1, config.seed);
        table.push(eps, "sup_l2sq", sup_l2, 0.0, 1, config.seed);
        table.push(eps, "sup_entropy_smoothed", sup_h, 0.0, 1, config.seed);
    }
    fit_if_possible(&mut table);
    Ok(table)
}

/// Intermediate PDE solution at `eps = N^-ell` and everything derived from
/// it that the mean-field copies need.
struct MeanField {
    eps: f64,
    table: Arc<KernelTable>,
    fields: FieldTimeline,
    drift: DriftTimeline,
    engine: DriftEngine,
}

impl MeanField {
    fn new(config: &RunConfig, big_n: usize, exec: Execution) -> Result<Self> {
        let eps = config.eps_for(big_n);
        let table = config.kernel_table(eps)?;
        let kernel = KernelChoice::Mollified(table.clone());
        let fields = solve(&config.pde_config_dense(kernel.clone(), exec)?)?;
        let drift = DriftTimeline::from_fields(&fields, &kernel)?;
        let engine = DriftEngine::new(table.clone(), config.interaction()?, big_n, exec)?;
        Ok(Self {
            eps,
            table,
            fields,
            drift,
            engine,
        })
    }
}

/// Final-time probability of `max |X - X~| >= N^-lambda` per `N`.
pub fn run_coupling_experiment(
    config: &RunConfig,
    n_list: &[usize],
    lambda: f64,
    reps: usize,
    exec: Execution,
) -> Result<RateTable> {
    if reps < MIN_COUPLING_REPS {
        return Err(Error::param(format!(
            "{reps} replications given, the coupling experiment needs at least {MIN_COUPLING_REPS}"
        )));
    }
    let (ell, s) = (config.particles.ell, config.s());
    valid_ranges(ell, s, config.model.d)?.check_lambda(lambda)?;
    let mut table = RateTable::new("coupling", "mean_max_deviation");
    for &big_n in n_list {
        let mf = MeanField::new(config, big_n, exec)?;
        let runs = map_indexed(reps, exec, |r| {
            let seed = replica_seed(config.seed, TAG_COUPLING | big_n as u64, r as u64);
            let sim = config.sim_config(big_n, seed, exec)?;
            simulate_coupled(&sim, &mf.engine, &mf.drift, true)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        let stats = coupling_event(&runs, lambda, ell, s)?;
        let finals: Vec<f64> = runs
            .iter()
            .map(|r| *r.max_deviation().last().expect("final snapshot"))
            .collect();
        let (mean, se) = mean_and_stderr(&finals);
        let p = stats.final_probability();
        let (lo, hi) = *stats.intervals.last().expect("final time");
        let scale = big_n as f64;
        table.push(scale, "probability", p, binomial_stderr(p, reps), reps, config.seed);
        table.push(scale, "wilson_lo", lo, 0.0, reps, config.seed);
        table.push(scale, "wilson_hi", hi, 0.0, reps, config.seed);
        table.push(scale, "mean_max_deviation", mean, se, reps, config.seed);
        table.push(scale, "threshold", scale.powf(-lambda), 0.0, reps, config.seed);
        table.push(scale, "eps", mf.eps, 0.0, reps, config.seed);
    }
    fit_if_possible(&mut table);
    Ok(table)
}

/// Jackknife (leave one replication out) standard error of a statistic of
/// pooled counts.
fn jackknife<F: Fn(&[u64], u64) -> f64>(per_rep: &[Vec<u64>], per_rep_samples: u64, stat: F) -> f64 {
    let reps = per_rep.len();
    let total = sum_counts(per_rep);
    let loo: Vec<f64> = per_rep
        .iter()
        .map(|c| {
            let rest: Vec<u64> = total.iter().zip(c).map(|(t, v)| t - v).collect();
            stat(&rest, per_rep_samples * (reps as u64 - 1))
        })
        .collect();
    let mean = loo.iter().sum::<f64>() / reps as f64;
    let var = loo.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() * (reps as f64 - 1.0) / reps as f64;
    var.sqrt()
}

/// One-particle marginal per species against the limiting PDE solution.
///
/// Particles of one species are exchangeable, so every particle of every
/// replication contributes a sample of the one-particle marginal. The
/// histogram has `2 round(N^(1/(d+2)))` bins per axis; the reference is the
/// limiting solution at `T` binned by exact cell integrals on the same
/// bins.
pub fn run_marginal_rate_experiment(
    config: &RunConfig,
    n_list: &[usize],
    reps: usize,
    exec: Execution,
) -> Result<RateTable> {
    if reps < MIN_MARGINAL_RATE_REPS {
        return Err(Error::param(format!(
            "{reps} replications given, the marginal experiment needs at least {MIN_MARGINAL_RATE_REPS}"
        )));
    }
    let d = config.model.d;
    if d > MAX_MARGINAL_DIMS {
        return Err(Error::param(format!(
            "one-particle marginal has dimension {d} > {MAX_MARGINAL_DIMS}"
        )));
    }
    let prediction = predicted_zeta(config.particles.ell, config.s(), 0.0, config.experiment.improved_rate)?;
    let limiting = solve(&config.pde_config(KernelChoice::Limiting(config.riesz()?), exec)?)?;
    let fbar = limiting.last();
    let n_species = config.n_species();
    let mut table = RateTable::new("marginal", "l1");
    for &big_n in n_list {
        let hist = HistGrid::new(d, HistGrid::default_bins(big_n, d), config.experiment.hist_half_width)?;
        let reference: Vec<Histogram> = (0..n_species)
            .map(|alpha| Histogram::from_field(hist.clone(), &fbar.grid, &fbar.species[alpha]))
            .collect::<Result<_>>()?;
        let kernel = config.kernel_table(config.eps_for(big_n))?;
        // counts[rep][alpha][bin]
        let counts = map_indexed(reps, exec, |r| -> Result<Vec<Vec<u64>>> {
            let seed = replica_seed(config.seed, TAG_MARGINAL | big_n as u64, r as u64);
            let sim = config.sim_config(big_n, seed, exec)?;
            let last = simulate(&sim, kernel.clone())?.pop().expect("final snapshot");
            Ok((0..n_species)
                .map(|alpha| {
                    let mut c = vec![0u64; hist.len()];
                    for p in last.species(alpha).chunks(d) {
                        c[hist.bin_of(p).0] += 1;
                    }
                    c
                })
                .collect())
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        let samples = big_n as u64;
        let l1_of = |alpha: usize, c: &[u64], n: u64| {
            let masses: Vec<f64> = c.iter().map(|&v| v as f64 / n as f64).collect();
            l1_distance(&masses, reference[alpha].masses())
        };
        let scale = big_n as f64;
        let mut combined = 0.0;
        for alpha in 0..n_species {
            let per_rep: Vec<Vec<u64>> = counts.iter().map(|c| c[alpha].clone()).collect();
            let total = sum_counts(&per_rep);
            let value = l1_of(alpha, &total, samples * reps as u64);
            let se = jackknife(&per_rep, samples, |c, n| l1_of(alpha, c, n));
            combined += value / n_species as f64;
            table.push(scale, &format!("l1_species{alpha}"), value, se, reps, config.seed);
        }
        // the combined statistic concatenates the species' bins
        let per_rep: Vec<Vec<u64>> = counts.iter().map(|c| c.concat()).collect();
        let len = hist.len();
        let combined_of = |c: &[u64], n: u64| {
            (0..n_species)
                .map(|alpha| l1_of(alpha, &c[alpha * len..(alpha + 1) * len], n))
                .sum::<f64>()
                / n_species as f64
        };
        let se = jackknife(&per_rep, samples, combined_of);
        table.push(scale, "l1", combined, se, reps, config.seed);
        table.push(scale, "bins", hist.bins() as f64, 0.0, reps, config.seed);
    }
    fit_if_possible(&mut table);
    table.prediction = Some(prediction);
    Ok(table)
}

fn sum_counts(per_rep: &[Vec<u64>]) -> Vec<u64> {
    let mut total = vec![0u64; per_rep[0].len()];
    for c in per_rep {
        for (t, v) in total.iter_mut().zip(c) {
            *t += v;
        }
    }
    total
}

/// Frequency with which the deviation statistic of the mean-field copies
/// at `T` exceeds `N^-theta`.
///
/// Also records the bound shapes `sup|psi|^(2m) N^(m(2 theta - 1) + 1)`
/// for `m` in [`LLN_BOUND_M`], with the measured `sup|psi|`.
pub fn run_lln_experiment(
    config: &RunConfig,
    n_list: &[usize],
    theta: f64,
    reps: usize,
    psi: LlnPsi,
    exec: Execution,
) -> Result<RateTable> {
    LlnConfig {
        theta,
        psi: Psi::Zero,
        reps,
    }
    .validate()?;
    if reps == 0 {
        return Err(Error::param("need at least one replication"));
    }
    let mut table = RateTable::new("lln", "mean_max_deviation");
    for &big_n in n_list {
        let mf = MeanField::new(config, big_n, exec)?;
        let psi = match psi {
            LlnPsi::GradV => Psi::GradV(mf.table.clone()),
            LlnPsi::Auxiliary => Psi::Auxiliary {
                eps: mf.eps,
                s: config.s(),
            },
        };
        let field = mf.fields.last();
        let outcomes = map_indexed(reps, exec, |r| {
            let seed = replica_seed(config.seed, TAG_LLN | big_n as u64, r as u64);
            let sim = config.sim_config(big_n, seed, exec)?;
            let run = simulate_coupled(&sim, &mf.engine, &mf.drift, false)?;
            let state = run.x_tilde.last().expect("final snapshot");
            lln_statistic(state, field, &psi, theta, exec)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
        let hits = outcomes.iter().filter(|o| o.exceeded).count();
        let freq = hits as f64 / reps as f64;
        let devs: Vec<f64> = outcomes.iter().map(|o| o.max_deviation).collect();
        let (mean, se) = mean_and_stderr(&devs);
        let scale = big_n as f64;
        let sup = psi.sup();
        table.push(scale, "exceedance_frequency", freq, binomial_stderr(freq, reps), reps, config.seed);
        table.push(scale, "mean_max_deviation", mean, se, reps, config.seed);
        table.push(scale, "threshold", scale.powf(-theta), 0.0, reps, config.seed);
        table.push(scale, "psi_sup", sup, 0.0, reps, config.seed);
        for m in LLN_BOUND_M {
            let mf = m as f64;
            let bound = sup.powf(2.0 * mf) * scale.powf(mf * (2.0 * theta - 1.0) + 1.0);
            table.push(scale, &format!("bound_m{m}"), bound, 0.0, reps, config.seed);
        }
    }
    fit_if_possible(&mut table);
    Ok(table)
}

/// `true` when each value is at most the previous one plus `slack`.
pub fn is_nonincreasing(values: &[f64], slack: f64) -> bool {
    values.windows(2).all(|w| w[1] <= w[0] + slack)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(a: &str, extra: &str) -> RunConfig {
        RunConfig::from_toml_str(&format!(
            "seed = 5\n[model]\nd = 3\na = {a}\nt_end = 0.05\n[grid]\nm = 32\nhalf_width = 8.0\ndt = 0.01\noutputs = 2\ndrift_interval = 0.025\n[particles]\ntable_points = 256\n{extra}"
        ))
        .unwrap()
    }

    #[test]
    fn experiment_names_round_trip() {
        for k in [
            ExperimentKind::PdeError,
            ExperimentKind::Coupling,
            ExperimentKind::Marginal,
            ExperimentKind::Lln,
        ] {
            assert_eq!(k.name().parse::<ExperimentKind>().unwrap(), k);
        }
        assert!("pde".parse::<ExperimentKind>().is_err());
    }

    #[test]
    fn unresolved_mollifier_is_rejected() {
        let c = RunConfig::reference();
        let err = run_pde_error_experiment(&c, &[0.4, 0.2, 0.1], Execution::Parallel).unwrap_err();
        assert!(err.to_string().contains("below 4h = 2"), "{err}");
    }

    #[test]
    fn pde_error_without_interaction_is_zero() {
        let c = small("[[0.0]]", "");
        let t = run_pde_error_experiment(&c, &[4.0, 3.0, 2.0], Execution::Parallel).unwrap();
        // identical heat flows
        let v = t.values("sup_l2sq_plus_entropy");
        assert!(v.iter().all(|&x| x.abs() < 1e-14), "{v:?}");
        assert!(t.values("sup_l2sq").iter().all(|&x| x == 0.0));
    }

    #[test]
    fn coupling_without_interaction_never_separates() {
        let c = small("[[0.0, 0.0], [0.0, 0.0]]", "");
        let t = run_coupling_experiment(&c, &[16, 32], 0.2, 50, Execution::Parallel).unwrap();
        assert_eq!(t.values("probability"), vec![0.0, 0.0]);
        assert_eq!(t.values("mean_max_deviation"), vec![0.0, 0.0]);
        assert!(run_coupling_experiment(&c, &[16], 0.2, 49, Execution::Parallel).is_err());
        assert!(run_coupling_experiment(&c, &[16], 0.35, 50, Execution::Parallel).is_err());
    }

    #[test]
    fn lln_at_theta_zero_never_exceeds_a_small_psi() {
        let c = small("[[0.0]]", "");
        // sup |grad V_eps| at eps = 32^-0.1 is about 1.2; theta = 0 still never
        // sees a deviation of 1 for these sizes
        let t = run_lln_experiment(&c, &[32, 64, 128], 0.0, 5, LlnPsi::Auxiliary, Execution::Parallel).unwrap();
        assert_eq!(t.values("threshold"), vec![1.0; 3]);
        let sup = t.values("psi_sup");
        let bound = t.values("bound_m1");
        for (k, n) in [32.0f64, 64.0, 128.0].iter().enumerate() {
            assert!((bound[k] - sup[k].powi(2) * n.powf(0.0)).abs() < 1e-12 * bound[k]);
        }
        assert!(run_lln_experiment(&c, &[32], 0.5, 5, LlnPsi::GradV, Execution::Parallel).is_err());
    }

    #[test]
    fn marginal_reports_prediction_and_is_replayable() {
        let c = small("[[0.0]]", "");
        let run = || run_marginal_rate_experiment(&c, &[32, 64, 128], 100, Execution::Parallel).unwrap();
        let t = run();
        assert!((t.prediction.unwrap().zeta - 0.1).abs() < 1e-15);
        assert_eq!(t.values("bins"), vec![4.0, 4.0, 6.0]);
        assert!(t.values("l1").iter().all(|v| *v > 0.0 && *v < 0.5));
        assert!(t.metric("l1").iter().all(|r| r.stderr > 0.0));
        assert_eq!(t, run());
        assert!(run_marginal_rate_experiment(&c, &[32], 99, Execution::Parallel).is_err());
    }

    #[test]
    fn jackknife_of_the_mean_matches_the_classical_stderr() {
        // the statistic "fraction in bin 0" is a mean of per-rep fractions
        let per_rep = vec![vec![3, 7], vec![5, 5], vec![9, 1], vec![4, 6]];
        let se = jackknife(&per_rep, 10, |c, n| c[0] as f64 / n as f64);
        let fr = [0.3, 0.5, 0.9, 0.4];
        let (_, classical) = mean_and_stderr(&fr);
        assert!((se - classical).abs() < 1e-14, "{se} {classical}");
    }
}
