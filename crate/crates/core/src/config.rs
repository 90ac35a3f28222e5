//! Strict TOML run configuration.
//!
//! Unknown keys are rejected. Every constraint violation names the formula
//! it breaks and the value computed from the configuration.
//!
//! Defaults (applied when a key is absent):
//!
//! | key | default |
//! |-----|---------|
//! | `seed` | `0` |
//! | `model.s` | `d - 2` (Coulomb) |
//! | `model.sigma` | `1` per species |
//! | `model.width` | `2` per species |
//! | `model.center` | origin |
//! | `model.cutoff_widths` | `6` |
//! | `model.t_end` | `0.5` |
//! | `particles.n_particles` | `1024` |
//! | `particles.ell` | `0.1` |
//! | `particles.dt` | largest divisor of `T` below `0.1 eps^(s+2)` |
//! | `particles.outputs` | `0` (initial and final state only) |
//! | `particles.table_points` | `2048` |
//! | `grid.m` | `48` |
//! | `grid.half_width` | `12` |
//! | `grid.dt` | `0.01` |
//! | `grid.outputs` | `6` geometric output times |
//! | `grid.drift_interval` | `0.025` |
//! | `experiment.n_list` | `[256, 1024, 4096]` |
//! | `experiment.eps_list` | `[0.4, 0.2, 0.1]` |
//! | `experiment.lambda` | midpoint of `(ell, 1/2 - ell (s+1))` |
//! | `experiment.theta` | `0.3` |
//! | `experiment.reps` | `50` coupling, `100` marginal, `200` lln |
//! | `experiment.hist_half_width` | `8` |
//! | `experiment.improved_rate` | `false` |

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::exec::Execution;
use crate::harness::valid_ranges;
use crate::kernels::{
    ell_upper_bound, InteractionMatrix, KernelTable, MollifierSpec, RieszSpec,
};
use crate::particles::{default_dt, dt_cap, InitialDensity, SimConfig, SpeciesConfig};
use crate::pde::{gaussian_density, geometric_output_times, DensityField, Grid, KernelChoice, PdeConfig};
use crate::{Error, Result};

/// The acceptance configuration: two species in `d = 3` with Coulomb
/// interaction, repulsive within and attractive across species.
pub const REFERENCE_TOML: &str = r#"seed = 20240607

[model]
d = 3
s = 1.0
a = [[0.05, -0.03], [-0.03, 0.05]]
sigma = [1.0, 1.0]
width = [2.0, 2.0]
t_end = 0.5

[particles]
n_particles = 1024
ell = 0.1

[grid]
m = 48
half_width = 12.0
dt = 0.01

[experiment]
n_list = [256, 1024, 4096]
eps_list = [0.4, 0.2, 0.1]
lambda = 0.2
theta = 0.3
"#;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub model: ModelSection,
    #[serde(default)]
    pub particles: ParticleSection,
    #[serde(default)]
    pub grid: GridSection,
    #[serde(default)]
    pub experiment: ExperimentSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub d: usize,
    pub s: Option<f64>,
    /// Interaction matrix `a_ab`; positive entries repel.
    pub a: Vec<Vec<f64>>,
    pub sigma: Option<Vec<f64>>,
    /// Initial Gaussian width per species.
    pub width: Option<Vec<f64>>,
    pub center: Option<Vec<Vec<f64>>>,
    /// Truncation radius of the initial Gaussians in widths.
    #[serde(default = "default_cutoff_widths")]
    pub cutoff_widths: f64,
    #[serde(default = "default_t_end")]
    pub t_end: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParticleSection {
    #[serde(default = "default_n_particles")]
    pub n_particles: usize,
    #[serde(default = "default_ell")]
    pub ell: f64,
    pub dt: Option<f64>,
    /// Number of geometric snapshot times besides the initial state.
    #[serde(default)]
    pub outputs: usize,
    #[serde(default = "default_table_points")]
    pub table_points: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    #[serde(default = "default_m")]
    pub m: usize,
    #[serde(default = "default_half_width")]
    pub half_width: f64,
    #[serde(default = "default_grid_dt")]
    pub dt: f64,
    #[serde(default = "default_grid_outputs")]
    pub outputs: usize,
    /// Spacing of the stored fields that drive the mean-field copies.
    #[serde(default = "default_drift_interval")]
    pub drift_interval: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentSection {
    #[serde(default = "default_n_list")]
    pub n_list: Vec<usize>,
    #[serde(default = "default_eps_list")]
    pub eps_list: Vec<f64>,
    pub lambda: Option<f64>,
    #[serde(default = "default_theta")]
    pub theta: f64,
    pub reps: Option<usize>,
    #[serde(default = "default_hist_half_width")]
    pub hist_half_width: f64,
    #[serde(default)]
    pub improved_rate: bool,
}

fn default_cutoff_widths() -> f64 {
    6.0
}
fn default_t_end() -> f64 {
    0.5
}
fn default_n_particles() -> usize {
    1024
}
fn default_ell() -> f64 {
    0.1
}
fn default_table_points() -> usize {
    crate::kernels::DEFAULT_TABLE_POINTS
}
fn default_m() -> usize {
    48
}
fn default_half_width() -> f64 {
    crate::kernels::DEFAULT_BOX_HALF_WIDTH
}
fn default_grid_dt() -> f64 {
    0.01
}
fn default_grid_outputs() -> usize {
    6
}
fn default_drift_interval() -> f64 {
    0.025
}
fn default_n_list() -> Vec<usize> {
    vec![256, 1024, 4096]
}
fn default_eps_list() -> Vec<f64> {
    vec![0.4, 0.2, 0.1]
}
fn default_theta() -> f64 {
    0.3
}
fn default_hist_half_width() -> f64 {
    8.0
}

impl Default for ParticleSection {
    fn default() -> Self {
        Self {
            n_particles: default_n_particles(),
            ell: default_ell(),
            dt: None,
            outputs: 0,
            table_points: default_table_points(),
        }
    }
}

impl Default for GridSection {
    fn default() -> Self {
        Self {
            m: default_m(),
            half_width: default_half_width(),
            dt: default_grid_dt(),
            outputs: default_grid_outputs(),
            drift_interval: default_drift_interval(),
        }
    }
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            n_list: default_n_list(),
            eps_list: default_eps_list(),
            lambda: None,
            theta: default_theta(),
            reps: None,
            hist_half_width: default_hist_half_width(),
            improved_rate: false,
        }
    }
}

impl RunConfig {
    /// Parses and validates a TOML document.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Reads, parses and validates a TOML file.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn reference() -> Self {
        Self::from_toml_str(REFERENCE_TOML).expect("reference configuration is valid")
    }

    /// Canonical TOML rendering, used for hashing and replay.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }

    pub fn n_species(&self) -> usize {
        self.model.a.len()
    }

    pub fn s(&self) -> f64 {
        self.model.s.unwrap_or(self.model.d as f64 - 2.0)
    }

    pub fn riesz(&self) -> Result<RieszSpec> {
        RieszSpec::new(self.s(), self.model.d)
    }

    pub fn interaction(&self) -> Result<InteractionMatrix> {
        InteractionMatrix::new(self.model.a.clone())
    }

    pub fn sigma(&self) -> Vec<f64> {
        self.model.sigma.clone().unwrap_or_else(|| vec![1.0; self.n_species()])
    }

    pub fn widths(&self) -> Vec<f64> {
        self.model.width.clone().unwrap_or_else(|| vec![2.0; self.n_species()])
    }

    pub fn centers(&self) -> Vec<Vec<f64>> {
        self.model
            .center
            .clone()
            .unwrap_or_else(|| vec![vec![0.0; self.model.d]; self.n_species()])
    }

    /// `eps = N^-ell`.
    pub fn eps_for(&self, n_particles: usize) -> f64 {
        (n_particles as f64).powf(-self.particles.ell)
    }

    /// Coupling threshold exponent, defaulting to the midpoint of the
    /// admissible interval.
    pub fn lambda(&self) -> Result<f64> {
        let ranges = valid_ranges(self.particles.ell, self.s(), self.model.d)?;
        Ok(self
            .experiment
            .lambda
            .unwrap_or(0.5 * (ranges.lambda.0 + ranges.lambda.1)))
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.model.d;
        let n = self.n_species();
        let riesz = self.riesz()?;
        let s = riesz.s();
        self.interaction()?;
        let per_species = |name: &str, len: usize| -> Result<()> {
            if len != n {
                return Err(Error::Config(format!(
                    "model.{name} has {len} entries but a has {n} species"
                )));
            }
            Ok(())
        };
        let sigma = self.sigma();
        per_species("sigma", sigma.len())?;
        if let Some(v) = sigma.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
            return Err(Error::Config(format!("diffusion coefficients must satisfy sigma > 0, got {v}")));
        }
        let widths = self.widths();
        per_species("width", widths.len())?;
        if let Some(v) = widths.iter().find(|v| !(**v > 0.0 && v.is_finite())) {
            return Err(Error::Config(format!("initial widths must be positive, got {v}")));
        }
        let centers = self.centers();
        per_species("center", centers.len())?;
        if let Some(c) = centers.iter().find(|c| c.len() != d) {
            return Err(Error::Config(format!(
                "initial center {c:?} has {} coordinates, expected d = {d}",
                c.len()
            )));
        }
        if !(self.model.cutoff_widths > 0.0) {
            return Err(Error::Config("model.cutoff_widths must be positive".into()));
        }
        if !(self.model.t_end > 0.0 && self.model.t_end.is_finite()) {
            return Err(Error::Config(format!("horizon t_end = {} must be positive", self.model.t_end)));
        }

        let ell = self.particles.ell;
        let upper = ell_upper_bound(s);
        if !(ell > 0.0 && ell < upper) {
            return Err(Error::Config(format!(
                "ell = {ell} must satisfy 0 < ell < 1/(2s+4) = {upper:.4} (s = {s})"
            )));
        }
        if self.particles.n_particles == 0 {
            return Err(Error::Config("particles.n_particles must be positive".into()));
        }
        if let Some(dt) = self.particles.dt {
            let mut sizes = vec![self.particles.n_particles];
            sizes.extend(&self.experiment.n_list);
            for big_n in sizes {
                self.check_particle_dt(dt, big_n)?;
            }
        }

        let grid = self.grid()?;
        if !(self.grid.dt > 0.0) || !(self.grid.drift_interval > 0.0) {
            return Err(Error::Config("grid.dt and grid.drift_interval must be positive".into()));
        }
        let reach = widths
            .iter()
            .zip(&centers)
            .map(|(w, c)| w * self.model.cutoff_widths + c.iter().map(|x| x * x).sum::<f64>().sqrt())
            .fold(0.0, f64::max);
        if reach > grid.half_width() {
            log::warn!(
                "initial support radius {reach} exceeds the box half-width {}; the truncated Gaussians wrap",
                grid.half_width()
            );
        }

        let ex = &self.experiment;
        if ex.n_list.contains(&0) {
            return Err(Error::Config("experiment.n_list entries must be positive".into()));
        }
        if let Some(e) = ex.eps_list.iter().find(|e| !(**e > 0.0 && e.is_finite())) {
            return Err(Error::Config(format!("experiment.eps_list entries must be positive, got {e}")));
        }
        if let Some(lambda) = ex.lambda {
            valid_ranges(ell, s, d)
                .and_then(|r| r.check_lambda(lambda))
                .map_err(|e| Error::Config(e.to_string()))?;
        }
        if !(0.0..0.5).contains(&ex.theta) {
            return Err(Error::Config(format!(
                "theta = {} must satisfy 0 <= theta < 1/2",
                ex.theta
            )));
        }
        if ex.reps == Some(0) {
            return Err(Error::Config("experiment.reps must be positive".into()));
        }
        if !(ex.hist_half_width > 0.0) {
            return Err(Error::Config("experiment.hist_half_width must be positive".into()));
        }
        Ok(())
    }

    fn check_particle_dt(&self, dt: f64, big_n: usize) -> Result<()> {
        let eps = self.eps_for(big_n);
        let cap = dt_cap(eps, self.s());
        if !(dt > 0.0) || dt > cap * (1.0 + 1e-12) {
            return Err(Error::Config(format!(
                "dt = {dt} exceeds the stability cap 0.1 eps^(s+2) = {cap:.6e} (eps = N^-ell = {eps:.6}, N = {big_n})"
            )));
        }
        Ok(())
    }

    /// Euler step for `N` particles per species.
    pub fn particle_dt(&self, big_n: usize) -> Result<f64> {
        match self.particles.dt {
            Some(dt) => {
                self.check_particle_dt(dt, big_n)?;
                Ok(dt)
            }
            None => Ok(default_dt(self.model.t_end, self.eps_for(big_n), self.s())),
        }
    }

    pub fn grid(&self) -> Result<Grid> {
        Grid::new(self.model.d, self.grid.m, self.grid.half_width)
            .map_err(|e| Error::Config(format!("grid: {e}")))
    }

    /// Initial densities as the truncated Gaussians on the grid.
    pub fn initial_field(&self) -> Result<DensityField> {
        let grid = self.grid()?;
        let species = self
            .widths()
            .iter()
            .zip(&self.centers())
            .map(|(&w, c)| gaussian_density(&grid, c, w, w * self.model.cutoff_widths))
            .collect::<Result<Vec<_>>>()?;
        DensityField::new(grid, 0.0, species)
    }

    /// Particle system with `N` particles per species.
    pub fn sim_config(&self, big_n: usize, seed: u64, exec: Execution) -> Result<SimConfig> {
        let riesz = self.riesz()?;
        let moll = MollifierSpec::from_scaling(self.particles.ell, big_n as u64, &riesz)?;
        let species = self
            .sigma()
            .into_iter()
            .zip(self.widths().into_iter().zip(self.centers()))
            .map(|(sigma, (w, c))| SpeciesConfig {
                sigma,
                init: InitialDensity {
                    center: c,
                    width: w,
                    cutoff: w * self.model.cutoff_widths,
                },
            })
            .collect();
        let output_times = if self.particles.outputs == 0 {
            Vec::new()
        } else {
            geometric_output_times(self.model.t_end, self.particles.outputs)
        };
        let config = SimConfig {
            riesz,
            moll,
            a: self.interaction()?,
            species,
            n_particles: big_n,
            dt: self.particle_dt(big_n)?,
            t_end: self.model.t_end,
            seed,
            box_half_width: self.grid.half_width,
            output_times,
            exec,
        };
        config.validate()?;
        Ok(config)
    }

    /// PDE solve with the given kernel at the geometric output times.
    pub fn pde_config(&self, kernel: KernelChoice, exec: Execution) -> Result<PdeConfig> {
        Ok(PdeConfig {
            riesz: self.riesz()?,
            a: self.interaction()?,
            sigma: self.sigma(),
            initial: self.initial_field()?,
            dt: self.grid.dt,
            t_end: self.model.t_end,
            kernel,
            output_times: geometric_output_times(self.model.t_end, self.grid.outputs),
            exec,
        })
    }

    /// PDE solve whose fields are stored every `drift_interval`, for driving
    /// mean-field copies.
    pub fn pde_config_dense(&self, kernel: KernelChoice, exec: Execution) -> Result<PdeConfig> {
        let mut config = self.pde_config(kernel, exec)?;
        let t_end = self.model.t_end;
        let steps = (t_end / self.grid.drift_interval).ceil().max(1.0) as usize;
        config.output_times = (0..=steps).map(|k| t_end * k as f64 / steps as f64).collect();
        Ok(config)
    }

    /// Radial table of `V * chi_eps`, through the on-disk cache.
    pub fn kernel_table(&self, eps: f64) -> Result<Arc<KernelTable>> {
        let riesz = self.riesz()?;
        let moll = MollifierSpec::from_eps(eps)?;
        let r_max = 8.0 * self.grid.half_width;
        crate::io::cached_kernel_table(&riesz, &moll, self.particles.table_points, r_max).map(Arc::new)
    }
}
