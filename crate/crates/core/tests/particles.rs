use std::sync::Arc;

use msad_core::config::RunConfig;
use msad_core::exec::Execution;
use msad_core::kernels::{build_kernel_table, InteractionMatrix, KernelTable, MollifierSpec, RieszSpec};
use msad_core::particles::{
    sample_initial, simulate, simulate_coupled, DriftEngine, DriftTimeline, InitialDensity,
    SimConfig, SpeciesConfig,
};
use msad_core::pde::{solve, KernelChoice};

fn table(eps: f64) -> Arc<KernelTable> {
    let riesz = RieszSpec::coulomb(3).unwrap();
    let moll = MollifierSpec::from_eps(eps).unwrap();
    Arc::new(build_kernel_table(&riesz, &moll, 1024, 200.0).unwrap())
}

fn config(big_n: usize, a: Vec<Vec<f64>>, seed: u64) -> SimConfig {
    let n = a.len();
    SimConfig {
        riesz: RieszSpec::coulomb(3).unwrap(),
        moll: MollifierSpec::from_eps(0.5).unwrap(),
        a: InteractionMatrix::new(a).unwrap(),
        species: (0..n)
            .map(|alpha| SpeciesConfig {
                sigma: 1.0,
                init: InitialDensity::gaussian(vec![alpha as f64, 0.0, 0.0], 1.0),
            })
            .collect(),
        n_particles: big_n,
        dt: 0.0125,
        t_end: 0.5,
        seed,
        box_half_width: 12.0,
        output_times: vec![0.25],
        exec: Execution::Parallel,
    }
}

#[test]
fn free_particles_spread_like_brownian_motion() {
    let c = config(2000, vec![vec![0.0]], 11);
    let snaps = simulate(&c, table(0.5)).unwrap();
    let last = snaps.last().unwrap();
    assert_eq!(last.t, 0.5);
    let xs = &last.positions;
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    // variance w^2 + 2 sigma T per coordinate
    let expected = 1.0 + 2.0 * 0.5;
    let se_var = expected * (2.0 / n).sqrt();
    assert!((var - expected).abs() < 4.0 * se_var, "variance {var}, expected {expected}");
    assert!(mean.abs() < 4.0 * (expected / n).sqrt(), "mean {mean}");
}

#[test]
fn drift_is_permutation_equivariant() {
    let c = config(200, vec![vec![0.3, -0.2], vec![-0.2, 0.4]], 3);
    let state = sample_initial(&c);
    let engine = DriftEngine::new(table(0.5), c.a.clone(), 200, Execution::Parallel).unwrap();
    let drift = engine.compute(&state).unwrap();
    // reverse the order of the particles inside each species
    let d = 3;
    let mut permuted = state.clone();
    for alpha in 0..2 {
        for i in 0..200 {
            let src = state.position(alpha, 199 - i);
            let start = (alpha * 200 + i) * d;
            permuted.positions[start..start + d].copy_from_slice(src);
        }
    }
    let pdrift = engine.compute(&permuted).unwrap();
    let scale = drift.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    for alpha in 0..2 {
        for i in 0..200 {
            for k in 0..d {
                let a = drift[(alpha * 200 + 199 - i) * d + k];
                let b = pdrift[(alpha * 200 + i) * d + k];
                assert!((a - b).abs() <= 1e-12 * scale, "({alpha}, {i}, {k}): {a} vs {b}");
            }
        }
    }
}

#[test]
fn self_interaction_forces_sum_to_zero() {
    let c = config(300, vec![vec![1.0]], 5);
    let state = sample_initial(&c);
    for engine in [
        DriftEngine::new(table(0.5), c.a.clone(), 300, Execution::Parallel).unwrap(),
        DriftEngine::new(table(0.5), c.a.clone(), 300, Execution::Parallel).unwrap().generic(),
    ] {
        let drift = engine.compute(&state).unwrap();
        let scale = drift.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for k in 0..3 {
            let total: f64 = drift.iter().skip(k).step_by(3).sum();
            assert!(total.abs() <= 1e-10 * scale * 300.0, "axis {k}: {total:e}");
        }
    }
}

#[test]
fn fast_and_generic_drift_agree() {
    let c = config(256, vec![vec![0.3, -0.2], vec![-0.2, 0.4]], 9);
    let state = sample_initial(&c);
    let fast = DriftEngine::new(table(0.5), c.a.clone(), 256, Execution::Parallel).unwrap();
    let generic = DriftEngine::new(table(0.5), c.a.clone(), 256, Execution::Parallel).unwrap().generic();
    let (u, v) = (fast.compute(&state).unwrap(), generic.compute(&state).unwrap());
    let scale = u.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    for (a, b) in u.iter().zip(&v) {
        assert!((a - b).abs() <= 1e-6 * scale, "{a} vs {b}");
    }
}

#[test]
fn runs_replay_and_ignore_the_execution_policy() {
    let a = vec![vec![0.3, -0.2], vec![-0.2, 0.4]];
    let mut c = config(128, a.clone(), 21);
    let par = simulate(&c, table(0.5)).unwrap();
    assert_eq!(par.len(), 3);
    assert_eq!(par, simulate(&c, table(0.5)).unwrap());
    c.exec = Execution::Sequential;
    assert_eq!(par, simulate(&c, table(0.5)).unwrap());
    let other = simulate(&config(128, a, 22), table(0.5)).unwrap();
    assert_ne!(par.last().unwrap().positions, other.last().unwrap().positions);
}

#[test]
fn exchangeable_initial_law_per_species() {
    let c = config(4000, vec![vec![0.0, 0.0], vec![0.0, 0.0]], 4);
    let s = sample_initial(&c);
    for alpha in 0..2 {
        let xs: Vec<f64> = s.species(alpha).iter().step_by(3).copied().collect();
        let mean = xs.iter().sum::<f64>() / xs.len() as f64;
        assert!((mean - alpha as f64).abs() < 4.0 / (xs.len() as f64).sqrt(), "species {alpha}: {mean}");
        // the two halves of the sample have matching second moments
        let half = xs.len() / 2;
        let m2 = |v: &[f64]| v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / v.len() as f64;
        assert!((m2(&xs[..half]) - m2(&xs[half..])).abs() < 0.15);
    }
}

#[test]
fn uncoupled_copies_follow_the_particles_exactly() {
    let mut rc = RunConfig::reference();
    rc.model.a = vec![vec![0.0, 0.0], vec![0.0, 0.0]];
    rc.model.t_end = 0.1;
    rc.grid.m = 32;
    rc.grid.half_width = 8.0;
    let big_n = 64;
    let sim = rc.sim_config(big_n, 13, Execution::Parallel).unwrap();
    let tbl = rc.kernel_table(sim.moll.eps()).unwrap();
    let tl = solve(&rc.pde_config_dense(KernelChoice::Mollified(tbl.clone()), Execution::Parallel).unwrap()).unwrap();
    let drift = DriftTimeline::from_fields(&tl, &KernelChoice::Mollified(tbl.clone())).unwrap();
    let engine = DriftEngine::new(tbl, sim.a.clone(), big_n, Execution::Parallel).unwrap();
    let run = simulate_coupled(&sim, &engine, &drift, true).unwrap();
    assert!(run.max_deviation().iter().all(|d| *d == 0.0));
}

#[test]
fn coupled_deviation_starts_at_zero_and_stays_small() {
    let mut rc = RunConfig::reference();
    rc.model.t_end = 0.1;
    rc.grid.m = 32;
    rc.grid.half_width = 8.0;
    let big_n = 256;
    let sim = rc.sim_config(big_n, 17, Execution::Parallel).unwrap();
    let tbl = rc.kernel_table(sim.moll.eps()).unwrap();
    let tl = solve(&rc.pde_config_dense(KernelChoice::Mollified(tbl.clone()), Execution::Parallel).unwrap()).unwrap();
    let drift = DriftTimeline::from_fields(&tl, &KernelChoice::Mollified(tbl.clone())).unwrap();
    let engine = DriftEngine::new(tbl, sim.a.clone(), big_n, Execution::Parallel).unwrap();
    let run = simulate_coupled(&sim, &engine, &drift, true).unwrap();
    let dev = run.max_deviation();
    assert_eq!(dev[0], 0.0);
    assert!(dev.iter().skip(1).all(|d| *d > 0.0 && *d < 0.5), "{dev:?}");
}
