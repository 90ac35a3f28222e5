use std::sync::atomic::{AtomicU64, Ordering};

use super::{add_noise, check_stability, sample_initial, DriftEngine, ParticleState, SimConfig};
use crate::exec::map_indexed;
use crate::kernels::InteractionMatrix;
use crate::pde::{convolve_gradient, FieldTimeline, GridFft, GridKernel, KernelChoice, VectorField};
use crate::{Error, Result};

static WRAPPED: AtomicU64 = AtomicU64::new(0);

/// Number of field evaluations so far whose point lay outside the box and
/// was wrapped periodically.
pub fn wrapped_evaluations() -> u64 {
    WRAPPED.load(Ordering::Relaxed)
}

pub fn reset_wrap_counter() {
    WRAPPED.store(0, Ordering::Relaxed);
}

/// Mean-field drift `-sum_beta a[alpha][beta] (grad K * f_beta)(x)` from
/// gradient fields `grads[beta]` by multilinear interpolation.
///
/// Points outside the box are wrapped periodically and counted.
pub fn drift_from_field(x: &[f64], grads: &[VectorField], a_row: &[f64], out: &mut [f64]) {
    out.iter_mut().for_each(|o| *o = 0.0);
    let mut g = vec![0.0; x.len()];
    let mut wrapped = false;
    for (beta, field) in grads.iter().enumerate() {
        let w = a_row[beta];
        if w == 0.0 {
            continue;
        }
        wrapped |= field.interpolate(x, &mut g);
        for (o, v) in out.iter_mut().zip(&g) {
            *o -= w * v;
        }
    }
    if wrapped && WRAPPED.fetch_add(1, Ordering::Relaxed) == 0 {
        log::warn!("particle at {x:?} left the field box; wrapping periodically");
    }
}

/// Gradient fields `grad K * f_beta` at a sequence of times, interpolated
/// linearly in time in between.
pub struct DriftTimeline {
    times: Vec<f64>,
    grads: Vec<Vec<VectorField>>,
}

impl DriftTimeline {
    /// Convolves every field of `timeline` with the kernel.
    pub fn from_fields(timeline: &FieldTimeline, kernel: &KernelChoice) -> Result<Self> {
        let first = timeline
            .fields
            .first()
            .ok_or_else(|| Error::param("empty field timeline"))?;
        let grid = first.grid.clone();
        let fft = GridFft::new(&grid, crate::exec::Execution::Parallel);
        let k = GridKernel::new(&grid, kernel, &fft, crate::exec::Execution::Parallel);
        let grads = timeline
            .fields
            .iter()
            .map(|f| f.species.iter().map(|s| convolve_gradient(s, &k, &fft)).collect())
            .collect();
        Ok(Self {
            times: timeline.times(),
            grads,
        })
    }

    pub fn from_parts(times: Vec<f64>, grads: Vec<Vec<VectorField>>) -> Result<Self> {
        if times.is_empty() || times.len() != grads.len() || times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::param("drift timeline needs strictly increasing times, one set of fields each"));
        }
        Ok(Self { times, grads })
    }

    pub fn start(&self) -> f64 {
        self.times[0]
    }

    pub fn end(&self) -> f64 {
        *self.times.last().expect("nonempty")
    }

    /// Gradient fields at time `t`.
    pub fn at(&self, t: f64) -> Result<Vec<VectorField>> {
        let tol = 1e-12 * self.end().abs().max(1.0);
        if t < self.start() - tol || t > self.end() + tol {
            return Err(Error::TimelineGap {
                t,
                start: self.start(),
                end: self.end(),
            });
        }
        let k = self.times.partition_point(|&s| s <= t);
        if k == 0 {
            return Ok(self.grads[0].clone());
        }
        if k == self.times.len() || self.times[k - 1] == t {
            return Ok(self.grads[k - 1].clone());
        }
        let (t0, t1) = (self.times[k - 1], self.times[k]);
        let w = (t - t0) / (t1 - t0);
        Ok(self.grads[k - 1]
            .iter()
            .zip(&self.grads[k])
            .map(|(a, b)| {
                let mut out = a.clone();
                for (ca, cb) in out.components.iter_mut().zip(&b.components) {
                    for (x, y) in ca.iter_mut().zip(cb) {
                        *x += w * (y - *x);
                    }
                }
                out
            })
            .collect())
    }
}

/// Paired trajectories of the particle system and its mean-field copies.
#[derive(Debug, Clone)]
pub struct CoupledRun {
    pub x: Vec<ParticleState>,
    pub x_tilde: Vec<ParticleState>,
}

impl CoupledRun {
    /// `max_{alpha,i} |X - X~|` at each snapshot.
    pub fn max_deviation(&self) -> Vec<f64> {
        self.x
            .iter()
            .zip(&self.x_tilde)
            .map(|(a, b)| {
                a.positions
                    .chunks(a.d)
                    .zip(b.positions.chunks(b.d))
                    .map(|(p, q)| p.iter().zip(q).map(|(u, v)| (u - v) * (u - v)).sum::<f64>().sqrt())
                    .fold(0.0, f64::max)
            })
            .collect()
    }
}

/// Runs `X` and `X~` with shared initial positions and Brownian increments.
///
/// `engine` drives `X`; `X~` follows the mean-field drift read from
/// `fields`. With `with_particles = false` only `X~` is advanced and `x`
/// holds copies of the initial state.
pub fn simulate_coupled(
    config: &SimConfig,
    engine: &DriftEngine,
    fields: &DriftTimeline,
    with_particles: bool,
) -> Result<CoupledRun> {
    config.validate()?;
    if fields.start() > 1e-12 || fields.end() < config.t_end * (1.0 - 1e-12) {
        return Err(Error::TimelineGap {
            t: if fields.start() > 1e-12 { 0.0 } else { config.t_end },
            start: fields.start(),
            end: fields.end(),
        });
    }
    let outputs = config.output_steps();
    let d = config.riesz.d();
    let big_n = config.n_particles;
    let a: &InteractionMatrix = &config.a;
    let mut x = sample_initial(config);
    let mut xt = x.clone();
    let mut run = CoupledRun {
        x: vec![x.clone()],
        x_tilde: vec![xt.clone()],
    };
    for k in 0..config.n_steps() {
        let t = config.time_at(k);
        let tau = config.time_at(k + 1) - t;
        if with_particles {
            let drift = engine.compute(&x)?;
            for (p, v) in x.positions.iter_mut().zip(&drift) {
                *p += v * tau;
            }
            add_noise(&mut x.positions, config, k, tau);
        }
        let grads = fields.at(t)?;
        let mf: Vec<Vec<f64>> = map_indexed(config.n_species() * big_n, config.exec, |idx| {
            let alpha = idx / big_n;
            let mut out = vec![0.0; d];
            drift_from_field(&xt.positions[idx * d..(idx + 1) * d], &grads, a.row(alpha), &mut out);
            out
        });
        for (p, v) in xt.positions.iter_mut().zip(mf.concat()) {
            *p += v * tau;
        }
        add_noise(&mut xt.positions, config, k, tau);
        for s in [&mut x, &mut xt] {
            s.step_index = k + 1;
            s.t = config.time_at(k + 1);
        }
        check_stability(&xt, config)?;
        if with_particles {
            check_stability(&x, config)?;
        }
        if outputs.binary_search(&(k + 1)).is_ok() {
            run.x.push(x.clone());
            run.x_tilde.push(xt.clone());
        }
    }
    Ok(run)
}
