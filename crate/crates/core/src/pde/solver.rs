use super::fft::GridFft;
use super::kernel::{species_velocities, GridKernel, KernelChoice};
use super::{DensityField, Grid, VectorField};
use crate::exec::{map_indexed, Execution};
use crate::kernels::{InteractionMatrix, RieszSpec};
use crate::{Error, Result};

/// Largest advective Courant number `sum_axis max|v_axis| dt / h` per
/// substep.
pub const CFL_TARGET: f64 = 0.5;
/// Negative mass that may be clipped in one step, relative to the total.
pub const MAX_STEP_CLIP: f64 = 1e-6;
/// Negative mass that may be clipped over a run, relative to the total.
pub const MAX_TOTAL_CLIP: f64 = 1e-3;
/// Relative mass change tolerated in one step.
pub const MAX_STEP_MASS_DRIFT: f64 = 1e-12;
const MAX_SUBSTEPS: usize = 100_000;

/// Parameters of one solve of the mollified or limiting system.
#[derive(Debug, Clone)]
pub struct PdeConfig {
    pub riesz: RieszSpec,
    pub a: InteractionMatrix,
    pub sigma: Vec<f64>,
    pub initial: DensityField,
    /// Largest time step; steps shrink to land on output times.
    pub dt: f64,
    pub t_end: f64,
    pub kernel: KernelChoice,
    /// Sorted output times in `[0, t_end]`; `0` and `t_end` are always added.
    pub output_times: Vec<f64>,
    pub exec: Execution,
}

impl PdeConfig {
    fn validate(&self) -> Result<()> {
        let n = self.initial.n_species();
        if self.a.n() != n || self.sigma.len() != n {
            return Err(Error::param(format!(
                "species count mismatch: {n} initial densities, {}x{} couplings, {} diffusion coefficients",
                self.a.n(),
                self.a.n(),
                self.sigma.len()
            )));
        }
        if self.initial.grid.d() != self.riesz.d() {
            return Err(Error::param("grid and potential dimensions differ"));
        }
        if let Some(sig) = self.sigma.iter().find(|s| !(**s > 0.0)) {
            return Err(Error::param(format!("diffusion coefficients must be positive, got {sig}")));
        }
        if !(self.dt > 0.0) || !(self.t_end >= 0.0) {
            return Err(Error::param(format!(
                "need dt > 0 and T >= 0, got dt = {}, T = {}",
                self.dt, self.t_end
            )));
        }
        for (alpha, f) in self.initial.species.iter().enumerate() {
            if f.iter().any(|v| !(*v >= 0.0)) {
                return Err(Error::param(format!("initial density {alpha} has negative or NaN values")));
            }
            let mass = self.initial.mass(alpha);
            if (mass - 1.0).abs() > 1e-10 {
                return Err(Error::param(format!("initial density {alpha} has mass {mass}, expected 1")));
            }
        }
        Ok(())
    }

    fn schedule(&self) -> Vec<f64> {
        let mut times: Vec<f64> = self
            .output_times
            .iter()
            .copied()
            .filter(|&t| t > 0.0 && t < self.t_end)
            .collect();
        times.push(0.0);
        times.push(self.t_end);
        times.sort_by(f64::total_cmp);
        times.dedup();
        times
    }
}

/// Output times `t_end * 2^-k` for `k < count`, plus `0`.
pub fn geometric_output_times(t_end: f64, count: usize) -> Vec<f64> {
    let mut times = vec![0.0];
    for k in (0..count).rev() {
        times.push(t_end * 0.5f64.powi(k as i32));
    }
    times.dedup();
    times
}

/// Run statistics of a solve.
#[derive(Debug, Clone, Default)]
pub struct SolveDiagnostics {
    pub steps: usize,
    pub advection_substeps: usize,
    /// Cumulative clipped negative mass per species.
    pub clipped_mass: Vec<f64>,
    /// Largest relative one-step mass change seen.
    pub max_step_mass_drift: f64,
    /// Largest per-species mass beyond the inscribed ball seen at output times.
    pub boundary_mass: f64,
}

/// Fields at the output times of a solve.
#[derive(Debug, Clone)]
pub struct FieldTimeline {
    pub fields: Vec<DensityField>,
    pub diagnostics: SolveDiagnostics,
}

impl FieldTimeline {
    pub fn times(&self) -> Vec<f64> {
        self.fields.iter().map(|f| f.t).collect()
    }

    pub fn last(&self) -> &DensityField {
        self.fields.last().expect("timeline is never empty")
    }
}

/// Solves `d_t f_a = sigma_a Lap f_a + div(f_a sum_b a_ab grad K * f_b)` on
/// the periodic box by Strang splitting: exact-in-time diffusion with the
/// finite-difference Laplacian symbol, and conservative MUSCL advection with
/// van Leer limiting and SSP-RK2 substeps under a frozen velocity.
pub fn solve(config: &PdeConfig) -> Result<FieldTimeline> {
    config.validate()?;
    let mut solver = Solver::new(config);
    let schedule = config.schedule();
    let mut fields = vec![solver.snapshot(0.0)];
    let mut t = 0.0;
    for &target in &schedule[1..] {
        while t < target {
            let remaining = target - t;
            // absorb a sliver shorter than 1e-9 dt into this step
            let tau = if remaining <= config.dt * (1.0 + 1e-9) {
                remaining
            } else {
                config.dt
            };
            solver.step(tau)?;
            t = if tau == remaining { target } else { t + tau };
        }
        fields.push(solver.snapshot(target));
    }
    let mut diagnostics = solver.diagnostics;
    let radius = config.initial.grid.half_width();
    for f in &fields {
        for alpha in 0..f.n_species() {
            diagnostics.boundary_mass = diagnostics.boundary_mass.max(f.mass_outside(alpha, radius));
        }
    }
    Ok(FieldTimeline { fields, diagnostics })
}

struct Solver<'a> {
    config: &'a PdeConfig,
    grid: Grid,
    fft: GridFft,
    kernel: Option<GridKernel>,
    symbol: Vec<f64>,
    f: Vec<Vec<f64>>,
    diagnostics: SolveDiagnostics,
}

impl<'a> Solver<'a> {
    fn new(config: &'a PdeConfig) -> Self {
        let grid = config.initial.grid.clone();
        let fft = GridFft::new(&grid, config.exec);
        let kernel = (!config.a.is_zero())
            .then(|| GridKernel::new(&grid, &config.kernel, &fft, config.exec));
        let h = grid.h();
        let m = grid.m();
        let d = grid.d();
        let axis_symbol: Vec<f64> = (0..m)
            .map(|k| 4.0 / (h * h) * (std::f64::consts::PI * k as f64 / m as f64).sin().powi(2))
            .collect();
        let symbol = map_indexed(grid.len(), config.exec, |idx| {
            let mut rest = idx;
            let mut sum = 0.0;
            for _ in 0..d {
                sum += axis_symbol[rest % m];
                rest /= m;
            }
            sum
        });
        let n = config.initial.n_species();
        Self {
            config,
            grid,
            fft,
            kernel,
            symbol,
            f: config.initial.species.clone(),
            diagnostics: SolveDiagnostics {
                clipped_mass: vec![0.0; n],
                ..Default::default()
            },
        }
    }

    fn snapshot(&self, t: f64) -> DensityField {
        DensityField {
            grid: self.grid.clone(),
            t,
            species: self.f.clone(),
        }
    }

    fn step(&mut self, tau: f64) -> Result<()> {
        let vol = self.grid.cell_volume();
        let before: Vec<f64> = self.f.iter().map(|f| f.iter().sum::<f64>() * vol).collect();
        self.diffuse(0.5 * tau);
        if let Some(kernel) = &self.kernel {
            let velocities = species_velocities(&self.f, &self.config.a, kernel, &self.fft);
            for alpha in 0..self.f.len() {
                if velocities[alpha].components.iter().all(|c| c.iter().all(|&v| v == 0.0)) {
                    continue;
                }
                let f = std::mem::take(&mut self.f[alpha]);
                self.f[alpha] = self.advect(alpha, f, &velocities[alpha], tau)?;
            }
        }
        self.diffuse(0.5 * tau);
        for alpha in 0..self.f.len() {
            self.clip(alpha, before[alpha])?;
        }
        self.diagnostics.steps += 1;
        Ok(())
    }

    fn diffuse(&mut self, tau: f64) {
        for (alpha, f) in self.f.iter_mut().enumerate() {
            let rate = self.config.sigma[alpha] * tau;
            let mut spec = self.fft.forward_real(f);
            for (c, lam) in spec.iter_mut().zip(&self.symbol) {
                *c *= (-rate * lam).exp();
            }
            *f = self.fft.inverse_real(spec);
        }
    }

    // Removes negative values, checks the conservation budget and rescales
    // back to the pre-step mass.
    fn clip(&mut self, alpha: usize, target_mass: f64) -> Result<()> {
        let vol = self.grid.cell_volume();
        let f = &mut self.f[alpha];
        let mut negative = 0.0;
        let mut total = 0.0;
        for v in f.iter_mut() {
            total += *v;
            if *v < 0.0 {
                negative -= *v;
                *v = 0.0;
            }
        }
        let (negative, total) = (negative * vol, total * vol);
        let drift = (total - target_mass).abs() / target_mass;
        self.diagnostics.max_step_mass_drift = self.diagnostics.max_step_mass_drift.max(drift);
        if drift > MAX_STEP_MASS_DRIFT {
            return Err(Error::Invariant(format!(
                "species {alpha} mass changed by {drift:e} (relative) in one step, tolerance {MAX_STEP_MASS_DRIFT:e}"
            )));
        }
        if negative > MAX_STEP_CLIP * target_mass {
            return Err(Error::Positivity(format!(
                "species {alpha}: {negative:e} of negative mass in one step exceeds {MAX_STEP_CLIP:e}"
            )));
        }
        self.diagnostics.clipped_mass[alpha] += negative;
        if self.diagnostics.clipped_mass[alpha] > MAX_TOTAL_CLIP * target_mass {
            return Err(Error::Positivity(format!(
                "species {alpha}: cumulative clipped mass {:e} exceeds {MAX_TOTAL_CLIP:e}",
                self.diagnostics.clipped_mass[alpha]
            )));
        }
        if negative > 0.0 {
            log::debug!("species {alpha}: clipped {negative:e} of negative mass");
        }
        let after: f64 = f.iter().sum::<f64>() * vol;
        let scale = target_mass / after;
        f.iter_mut().for_each(|v| *v *= scale);
        Ok(())
    }

    fn advect(&mut self, alpha: usize, f: Vec<f64>, v: &VectorField, tau: f64) -> Result<Vec<f64>> {
        let h = self.grid.h();
        let courant: f64 = v
            .components
            .iter()
            .map(|c| c.iter().fold(0.0f64, |m, x| m.max(x.abs())))
            .sum::<f64>()
            * tau
            / h;
        let substeps = ((courant / CFL_TARGET).ceil() as usize).max(1);
        if substeps > MAX_SUBSTEPS || !courant.is_finite() {
            return Err(Error::Cfl(format!(
                "species {alpha}: Courant number {courant:e} would need {substeps} substeps"
            )));
        }
        self.diagnostics.advection_substeps += substeps;
        let delta = tau / substeps as f64;
        let faces = face_velocities(&self.grid, v, self.config.exec);
        let mut f = f;
        for _ in 0..substeps {
            let l0 = transport_rate(&self.grid, &f, &faces, self.config.exec);
            let f1: Vec<f64> = f.iter().zip(&l0).map(|(a, b)| a + delta * b).collect();
            let l1 = transport_rate(&self.grid, &f1, &faces, self.config.exec);
            f = f
                .iter()
                .zip(&f1)
                .zip(&l1)
                .map(|((a, b), c)| 0.5 * a + 0.5 * (b + delta * c))
                .collect();
        }
        Ok(f)
    }
}

#[inline]
fn neighbor(idx: usize, stride: usize, m: usize, forward: bool) -> usize {
    let k = (idx / stride) % m;
    match (forward, k) {
        (true, k) if k + 1 == m => idx + stride - m * stride,
        (true, _) => idx + stride,
        (false, 0) => idx + (m - 1) * stride,
        (false, _) => idx - stride,
    }
}

// Velocity on the face between node idx and its forward neighbour, per axis.
fn face_velocities(grid: &Grid, v: &VectorField, exec: Execution) -> Vec<Vec<f64>> {
    let m = grid.m();
    (0..grid.d())
        .map(|axis| {
            let stride = grid.stride(axis);
            let c = &v.components[axis];
            map_indexed(grid.len(), exec, |idx| {
                0.5 * (c[idx] + c[neighbor(idx, stride, m, true)])
            })
        })
        .collect()
}

#[inline]
fn van_leer(a: f64, b: f64) -> f64 {
    if a * b > 0.0 {
        2.0 * a * b / (a + b)
    } else {
        0.0
    }
}

// -div(f u) by MUSCL reconstruction with upwinded face fluxes.
fn transport_rate(grid: &Grid, f: &[f64], faces: &[Vec<f64>], exec: Execution) -> Vec<f64> {
    let m = grid.m();
    let h = grid.h();
    let mut rate = vec![0.0; f.len()];
    for (axis, u) in faces.iter().enumerate() {
        let stride = grid.stride(axis);
        let slope = |idx: usize| {
            let prev = f[neighbor(idx, stride, m, false)];
            let next = f[neighbor(idx, stride, m, true)];
            van_leer(f[idx] - prev, next - f[idx])
        };
        let flux = map_indexed(f.len(), exec, |idx| {
            let up = neighbor(idx, stride, m, true);
            let w = u[idx];
            if w > 0.0 {
                w * (f[idx] + 0.5 * slope(idx))
            } else if w < 0.0 {
                w * (f[up] - 0.5 * slope(up))
            } else {
                0.0
            }
        });
        for (idx, r) in rate.iter_mut().enumerate() {
            *r -= (flux[idx] - flux[neighbor(idx, stride, m, false)]) / h;
        }
    }
    rate
}

/// `L^p` norm of one grid function, `p >= 1`.
pub fn lp_norm(grid: &Grid, f: &[f64], p: f64) -> f64 {
    let vol = grid.cell_volume();
    if p.is_infinite() {
        return f.iter().fold(0.0, |m, v| m.max(v.abs()));
    }
    (f.iter().map(|v| v.abs().powf(p)).sum::<f64>() * vol).powf(1.0 / p)
}

/// Per-time, per-species `L^p` norms of a timeline.
pub fn lp_norm_timeline(timeline: &FieldTimeline, p: f64) -> Result<Vec<Vec<f64>>> {
    if !(p >= 1.0) {
        return Err(Error::param(format!("L^p norm needs p >= 1, got {p}")));
    }
    Ok(timeline
        .fields
        .iter()
        .map(|f| f.species.iter().map(|s| lp_norm(&f.grid, s, p)).collect())
        .collect())
}

/// Running maximum of the sup norm.
#[derive(Debug, Clone, PartialEq)]
pub struct LinfReport {
    pub initial: Vec<f64>,
    /// Maximum over time, per species.
    pub max: Vec<f64>,
    /// Running maximum at each output time, per species.
    pub running: Vec<Vec<f64>>,
    /// Growth beyond twice the initial sup norm for some species.
    pub suspicious: bool,
}

pub fn linf_monitor(timeline: &FieldTimeline) -> LinfReport {
    let n = timeline.fields.first().map_or(0, |f| f.n_species());
    let sup = |f: &DensityField, alpha: usize| f.species[alpha].iter().fold(0.0f64, |m, v| m.max(*v));
    let initial: Vec<f64> = (0..n).map(|a| sup(&timeline.fields[0], a)).collect();
    let mut max = initial.clone();
    let mut running = Vec::with_capacity(timeline.fields.len());
    for f in &timeline.fields {
        for (alpha, m) in max.iter_mut().enumerate() {
            *m = m.max(sup(f, alpha));
        }
        running.push(max.clone());
    }
    let suspicious = max.iter().zip(&initial).any(|(m, i)| *m > 2.0 * i);
    LinfReport {
        initial,
        max,
        running,
        suspicious,
    }
}
