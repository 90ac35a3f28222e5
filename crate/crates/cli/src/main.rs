//! `msad`: command-line driver for kernel tables, particle runs, PDE solves,
//! comparisons and the rate experiments.
//!
//! Exit status: 0 success, 1 usage or configuration error, 2 runtime
//! failure, 3 violated mathematical invariant.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use msad_core::config::RunConfig;
use msad_core::error::ErrorKind;
use msad_core::exec::Execution;
use msad_core::harness::{run_experiment, ExperimentKind, RateTable};
use msad_core::io;
use msad_core::kernels::{MollifierSpec, RieszSpec};
use msad_core::metrics::{compare_fields, coupling_event};
use msad_core::particles::{simulate, simulate_coupled, CoupledRun, DriftEngine, DriftTimeline};
use msad_core::pde::{check_smallness, solve, FieldTimeline, KernelChoice, SolveDiagnostics};
use msad_core::rng::replica_seed;

#[derive(Parser)]
#[command(name = "msad", version, about = "Multi-species moderately interacting particle laboratory")]
#[command(arg_required_else_help = true)]
struct Cli {
    /// Overrides the seed of the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Tabulate V * chi_eps and its radial derivative.
    KernelTable {
        #[arg(long)]
        s: f64,
        #[arg(long)]
        d: usize,
        #[arg(long)]
        eps: f64,
        #[arg(long, default_value_t = msad_core::kernels::DEFAULT_TABLE_POINTS)]
        points: usize,
        /// Outer table radius (default: eight default box half-widths).
        #[arg(long)]
        r_max: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the particle system and write snapshots.
    Simulate {
        #[command(flatten)]
        common: ConfigOut,
        /// Particles per species (default: particles.n_particles).
        #[arg(long)]
        n: Option<usize>,
    },
    /// Run the particle system together with its mean-field copies.
    Couple {
        #[command(flatten)]
        common: ConfigOut,
        /// Directory of field files driving the copies (default: solve the
        /// intermediate system).
        #[arg(long)]
        fields: Option<PathBuf>,
        #[arg(long)]
        n: Option<usize>,
        #[arg(long, default_value_t = 1)]
        reps: usize,
    },
    /// Solve the mollified or the limiting system.
    SolvePde {
        #[command(flatten)]
        common: ConfigOut,
        #[arg(long, conflicts_with = "limiting", required_unless_present = "limiting")]
        mollified: bool,
        #[arg(long)]
        limiting: bool,
        /// Mollification scale (default: N^-ell with particles.n_particles).
        #[arg(long)]
        eps: Option<f64>,
    },
    /// Evaluate the smallness condition on the initial data.
    CheckSmallness {
        #[arg(long)]
        config: PathBuf,
        /// Lebesgue exponent (default: d + 1).
        #[arg(long)]
        p: Option<f64>,
    },
    /// Distances between two field files.
    Compare {
        #[arg(long)]
        field_a: PathBuf,
        #[arg(long)]
        field_b: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Coupling-event probabilities of a directory written by `couple`.
    CouplingStats {
        #[arg(long)]
        runs_dir: PathBuf,
        #[arg(long)]
        lambda: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a rate experiment.
    Rates {
        #[arg(long)]
        experiment: String,
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value = "rates.csv")]
        out: PathBuf,
        /// Also write `x y yerr` triples of the headline metric.
        #[arg(long)]
        plot_data: Option<PathBuf>,
    },
}

#[derive(Args)]
struct ConfigOut {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out_dir: PathBuf,
}

#[derive(Serialize)]
struct FileChecksum {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct RunManifest {
    command: String,
    version: String,
    config_sha256: String,
    seed: Option<u64>,
    threads: usize,
    wall_clock_seconds: f64,
    files: Vec<FileChecksum>,
}

/// Collects outputs and writes the manifest once at the end of a run.
struct Run {
    command: String,
    config_text: String,
    seed: Option<u64>,
    started: Instant,
    files: Vec<PathBuf>,
}

impl Run {
    fn new(command: &str, config_text: String, seed: Option<u64>) -> Self {
        Self {
            command: command.to_string(),
            config_text,
            seed,
            started: Instant::now(),
            files: Vec::new(),
        }
    }

    fn record(&mut self, path: &Path) {
        self.files.push(path.to_path_buf());
    }

    fn finish(self, manifest: &Path) -> anyhow::Result<()> {
        let files = self
            .files
            .iter()
            .map(|p| {
                let bytes = fs::read(p).with_context(|| format!("reading {}", p.display()))?;
                Ok(FileChecksum {
                    path: p.display().to_string(),
                    sha256: sha256_hex(&bytes),
                })
            })
            .collect::<anyhow::Result<Vec<_>>>()?;
        let m = RunManifest {
            command: self.command,
            version: env!("CARGO_PKG_VERSION").to_string(),
            config_sha256: sha256_hex(self.config_text.as_bytes()),
            seed: self.seed,
            threads: rayon::current_num_threads(),
            wall_clock_seconds: self.started.elapsed().as_secs_f64(),
            files,
        };
        let json = serde_json::to_string_pretty(&m)?;
        fs::write(manifest, json + "\n").with_context(|| format!("writing {}", manifest.display()))?;
        Ok(())
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    format!("{:x}", Sha256::digest(bytes))
}

fn load_config(path: &Path, seed: Option<u64>) -> anyhow::Result<RunConfig> {
    let mut c = RunConfig::load(path)?;
    if let Some(s) = seed {
        c.seed = s;
    }
    Ok(c)
}

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_fields(run: &mut Run, dir: &Path, timeline: &FieldTimeline) -> anyhow::Result<()> {
    for (k, f) in timeline.fields.iter().enumerate() {
        let path = dir.join(format!("field_{k:03}.msadf1"));
        io::write_field(&path, f)?;
        run.record(&path);
    }
    Ok(())
}

fn read_fields(dir: &Path) -> anyhow::Result<FieldTimeline> {
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .with_context(|| format!("listing {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "msadf1"))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(anyhow!("no .msadf1 files in {}", dir.display()));
    }
    let fields = paths.iter().map(|p| io::read_field(p)).collect::<Result<Vec<_>, _>>()?;
    Ok(FieldTimeline {
        fields,
        diagnostics: SolveDiagnostics::default(),
    })
}

fn kernel_table(cli_seed: Option<u64>, cmd: &Command) -> anyhow::Result<()> {
    let Command::KernelTable {
        s,
        d,
        eps,
        points,
        r_max,
        out,
    } = cmd
    else {
        unreachable!()
    };
    let riesz = RieszSpec::new(*s, *d)?;
    let moll = MollifierSpec::from_eps(*eps)?;
    let r_max = r_max.unwrap_or(8.0 * msad_core::kernels::DEFAULT_BOX_HALF_WIDTH);
    let params = format!("s = {s}\nd = {d}\neps = {eps}\npoints = {points}\nr_max = {r_max}\n");
    let mut run = Run::new("kernel-table", params, cli_seed);
    let table = io::cached_kernel_table(&riesz, &moll, *points, r_max)?;
    io::write_kernel_table(out, &table)?;
    run.record(out);
    println!("wrote {} radii to {}", table.radii().len(), out.display());
    run.finish(&manifest_beside(out))
}

fn manifest_beside(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}

fn simulate_cmd(config: &RunConfig, out_dir: &Path, n: Option<usize>) -> anyhow::Result<()> {
    let big_n = n.unwrap_or(config.particles.n_particles);
    let sim = config.sim_config(big_n, config.seed, Execution::Parallel)?;
    let table = config.kernel_table(sim.moll.eps())?;
    create_dir(out_dir)?;
    let mut run = Run::new("simulate", config.to_toml(), Some(config.seed));
    let states = simulate(&sim, table)?;
    for (k, s) in states.iter().enumerate() {
        let path = out_dir.join(format!("snapshot_{k:03}.msadp1"));
        io::write_snapshot(&path, s)?;
        run.record(&path);
    }
    println!("{} snapshots, N = {big_n}, eps = {:.6}, dt = {:e}", states.len(), sim.moll.eps(), sim.dt);
    run.finish(&out_dir.join("manifest.json"))
}

fn couple_cmd(
    config: &RunConfig,
    out_dir: &Path,
    fields: Option<&Path>,
    n: Option<usize>,
    reps: usize,
) -> anyhow::Result<()> {
    if reps == 0 {
        return Err(anyhow!(msad_core::Error::Config("--reps must be positive".into())));
    }
    let big_n = n.unwrap_or(config.particles.n_particles);
    let eps = config.eps_for(big_n);
    let table = config.kernel_table(eps)?;
    let kernel = KernelChoice::Mollified(table.clone());
    let timeline = match fields {
        Some(dir) => read_fields(dir)?,
        None => solve(&config.pde_config_dense(kernel.clone(), Execution::Parallel)?)?,
    };
    let drift = DriftTimeline::from_fields(&timeline, &kernel)?;
    let engine = DriftEngine::new(table, config.interaction()?, big_n, Execution::Parallel)?;
    create_dir(out_dir)?;
    let text = config.to_toml();
    let mut run = Run::new("couple", text.clone(), Some(config.seed));
    let config_path = out_dir.join("config.toml");
    write_text(&config_path, &text)?;
    run.record(&config_path);
    for r in 0..reps {
        let seed = if reps == 1 {
            config.seed
        } else {
            replica_seed(config.seed, big_n as u64, r as u64)
        };
        let sim = config.sim_config(big_n, seed, Execution::Parallel)?;
        let coupled = simulate_coupled(&sim, &engine, &drift, true)?;
        let dir = out_dir.join(format!("rep_{r:03}"));
        create_dir(&dir)?;
        for (k, (x, xt)) in coupled.x.iter().zip(&coupled.x_tilde).enumerate() {
            for (prefix, s) in [("x", x), ("xt", xt)] {
                let path = dir.join(format!("{prefix}_{k:03}.msadp1"));
                io::write_snapshot(&path, s)?;
                run.record(&path);
            }
        }
        let dev = coupled.max_deviation();
        println!("rep {r}: final max |X - X~| = {:e}", dev.last().copied().unwrap_or(0.0));
    }
    run.finish(&out_dir.join("manifest.json"))
}

fn solve_cmd(config: &RunConfig, out_dir: &Path, mollified: bool, eps: Option<f64>) -> anyhow::Result<()> {
    let kernel = if mollified {
        let eps = eps.unwrap_or_else(|| config.eps_for(config.particles.n_particles));
        KernelChoice::Mollified(config.kernel_table(eps)?)
    } else {
        KernelChoice::Limiting(config.riesz()?)
    };
    create_dir(out_dir)?;
    let mut run = Run::new("solve-pde", config.to_toml(), Some(config.seed));
    let timeline = solve(&config.pde_config(kernel, Execution::Parallel)?)?;
    write_fields(&mut run, out_dir, &timeline)?;
    let diag = &timeline.diagnostics;
    println!(
        "{} fields, {} steps, {} advection substeps, clipped mass {:?}",
        timeline.fields.len(),
        diag.steps,
        diag.advection_substeps,
        diag.clipped_mass
    );
    run.finish(&out_dir.join("manifest.json"))
}

fn smallness_cmd(config: &RunConfig, p: Option<f64>) -> anyhow::Result<()> {
    let riesz = config.riesz()?;
    let p = p.unwrap_or(riesz.d() as f64 + 1.0);
    let r = check_smallness(&config.initial_field()?, &config.interaction()?, &config.sigma(), &riesz, p)?;
    println!("p = {p}, C_HLS = {:.7}, C_GNS = {:.7}", r.c_hls, r.c_gns);
    for alpha in 0..r.lhs.len() {
        println!(
            "species {alpha}: lhs = {:e}, rhs = {:e}, margin = {:e}",
            r.lhs[alpha], r.rhs[alpha], r.margins[alpha]
        );
    }
    println!("satisfied: {}", r.satisfied);
    Ok(())
}

fn compare_cmd(a: &Path, b: &Path, out: Option<&Path>) -> anyhow::Result<()> {
    let fa = io::read_field(a)?;
    let fb = io::read_field(b)?;
    let mut text = String::new();
    for alpha in 0..fa.n_species().min(fb.n_species()) {
        let r = compare_fields(&fa, &fb, alpha)?;
        for (metric, value) in [
            ("rel_entropy", r.rel_entropy),
            ("rel_entropy_smoothed", r.rel_entropy_smoothed),
            ("l1", r.l1),
            ("l2", r.l2),
            ("ckp_margin", r.ckp_margin),
        ] {
            text.push_str(&format!("{metric} species={alpha},t={} {value:e} 0\n", fa.t));
        }
        if !r.offending_bins.is_empty() {
            text.push_str(&format!(
                "offending_bins species={alpha} {} 0\n",
                r.offending_bins.len()
            ));
        }
    }
    emit(&text, out, "compare", String::new())
}

fn emit(text: &str, out: Option<&Path>, command: &str, config_text: String) -> anyhow::Result<()> {
    print!("{text}");
    if let Some(path) = out {
        let mut run = Run::new(command, config_text, None);
        write_text(path, text)?;
        run.record(path);
        run.finish(&manifest_beside(path))?;
    }
    Ok(())
}

fn coupling_stats_cmd(runs_dir: &Path, lambda: f64, out: Option<&Path>) -> anyhow::Result<()> {
    let config_text = fs::read_to_string(runs_dir.join("config.toml"))
        .with_context(|| format!("reading {}/config.toml", runs_dir.display()))?;
    let config = RunConfig::from_toml_str(&config_text)?;
    let mut rep_dirs: Vec<PathBuf> = fs::read_dir(runs_dir)
        .with_context(|| format!("listing {}", runs_dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && p.file_name().is_some_and(|n| n.to_string_lossy().starts_with("rep_")))
        .collect();
    rep_dirs.sort();
    let mut runs = Vec::with_capacity(rep_dirs.len());
    for dir in &rep_dirs {
        let mut run = CoupledRun {
            x: Vec::new(),
            x_tilde: Vec::new(),
        };
        for k in 0.. {
            let x = dir.join(format!("x_{k:03}.msadp1"));
            if !x.exists() {
                break;
            }
            run.x.push(io::read_snapshot(&x)?);
            run.x_tilde.push(io::read_snapshot(&dir.join(format!("xt_{k:03}.msadp1")))?);
        }
        runs.push(run);
    }
    let stats = coupling_event(&runs, lambda, config.particles.ell, config.s())?;
    let mut text = String::new();
    for (k, t) in stats.times.iter().enumerate() {
        let params = format!("t={t},N={},lambda={lambda},reps={}", stats.n_particles, stats.reps);
        let p = stats.probabilities[k];
        let se = (p * (1.0 - p) / stats.reps as f64).sqrt();
        let (lo, hi) = stats.intervals[k];
        text.push_str(&format!("probability {params} {p:e} {se:e}\n"));
        text.push_str(&format!("wilson_lo {params} {lo:e} 0\n"));
        text.push_str(&format!("wilson_hi {params} {hi:e} 0\n"));
    }
    emit(&text, out, "coupling-stats", config_text)
}

fn rates_cmd(
    config: &RunConfig,
    experiment: &str,
    out: &Path,
    plot_data: Option<&Path>,
) -> anyhow::Result<()> {
    let kind: ExperimentKind = experiment.parse()?;
    let mut run = Run::new(&format!("rates {experiment}"), config.to_toml(), Some(config.seed));
    let table = run_experiment(kind, config, Execution::Parallel)?;
    let file = fs::File::create(out).with_context(|| format!("creating {}", out.display()))?;
    table.write_csv(std::io::BufWriter::new(file))?;
    run.record(out);
    if let Some(path) = plot_data {
        let file = fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
        table.write_plot_data(std::io::BufWriter::new(file))?;
        run.record(path);
    }
    print_table(&table);
    run.finish(&manifest_beside(out))
}

fn print_table(table: &RateTable) {
    println!("{:<12} {:>10} {:<24} {:>14} {:>12}", "experiment", "scale", "metric", "value", "stderr");
    for r in &table.rows {
        println!(
            "{:<12} {:>10} {:<24} {:>14.6e} {:>12.4e}",
            r.experiment, r.scale, r.metric, r.value, r.stderr
        );
    }
    match &table.fit {
        Some(f) => println!(
            "fit of {}: slope {:.4} +- {:.4} (R^2 {:.4})",
            table.fit_metric, f.slope, f.stderr, f.r2
        ),
        None => println!("fit of {}: not available", table.fit_metric),
    }
    if let Some(p) = &table.prediction {
        println!(
            "predicted zeta = {:.4} (ell = {}, s = {}, varrho = {}, admissible: {})",
            p.zeta, p.ell, p.s, p.varrho, p.admissible
        );
    }
}

fn dispatch(cli: Cli) -> anyhow::Result<()> {
    if let Some(t) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| anyhow!("thread pool: {e}"))?;
    }
    let seed = cli.seed;
    match &cli.command {
        Command::KernelTable { .. } => kernel_table(seed, &cli.command),
        Command::Simulate { common, n } => {
            simulate_cmd(&load_config(&common.config, seed)?, &common.out_dir, *n)
        }
        Command::Couple {
            common,
            fields,
            n,
            reps,
        } => couple_cmd(
            &load_config(&common.config, seed)?,
            &common.out_dir,
            fields.as_deref(),
            *n,
            *reps,
        ),
        Command::SolvePde {
            common,
            mollified,
            eps,
            ..
        } => solve_cmd(&load_config(&common.config, seed)?, &common.out_dir, *mollified, *eps),
        Command::CheckSmallness { config, p } => smallness_cmd(&load_config(config, seed)?, *p),
        Command::Compare {
            field_a,
            field_b,
            out,
        } => compare_cmd(field_a, field_b, out.as_deref()),
        Command::CouplingStats {
            runs_dir,
            lambda,
            out,
        } => coupling_stats_cmd(runs_dir, *lambda, out.as_deref()),
        Command::Rates {
            experiment,
            config,
            out,
            plot_data,
        } => rates_cmd(&load_config(config, seed)?, experiment, out, plot_data.as_deref()),
    }
}

fn exit_status(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<msad_core::Error>().map(|e| e.kind()) {
        Some(ErrorKind::Config) => 1,
        Some(ErrorKind::Invariant) => 3,
        _ => 2,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() || e.kind() == clap::error::ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_status(&e))
        }
    }
}
