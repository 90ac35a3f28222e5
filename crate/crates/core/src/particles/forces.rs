use std::sync::Arc;

use super::ParticleState;
use crate::exec::{map_indexed, Execution};
use crate::kernels::{InteractionMatrix, KernelTable};
use crate::{Error, Result};

const LANES: usize = 8;
const BLOCK: usize = 64;
// pad coordinate: the pair weight underflows to exactly 0
const PAD: f64 = 1e150;

/// Direct-summation drift of the particle system.
///
/// Drift of particle `(alpha, i)`:
/// `-(1/N) sum_beta a_ab sum_j grad(V * chi_eps)(x_ai - x_bj)`, including
/// the vanishing self term. Every partial sum is reduced in a fixed order,
/// so the result does not depend on the number of threads.
///
/// For the 3-d Coulomb kernel the mollified gradient equals `-x/|x|^3`
/// exactly for `|x| >= eps`; that range is evaluated in closed form over
/// blocks of pairs, each unordered pair once, and only closer pairs go
/// through the table.
pub struct DriftEngine {
    table: Arc<KernelTable>,
    a: InteractionMatrix,
    n_particles: usize,
    exec: Execution,
    fast: bool,
    cutoff: Option<f64>,
}

impl DriftEngine {
    pub fn new(
        table: Arc<KernelTable>,
        a: InteractionMatrix,
        n_particles: usize,
        exec: Execution,
    ) -> Result<Self> {
        if n_particles == 0 {
            return Err(Error::param("drift needs at least one particle per species"));
        }
        let fast = table.is_coulomb() && table.d() == 3;
        Ok(Self {
            table,
            a,
            n_particles,
            exec,
            fast,
            cutoff: None,
        })
    }

    /// Forces the per-pair table evaluation even when a closed form exists.
    pub fn generic(mut self) -> Self {
        self.fast = false;
        self
    }

    /// Ignores pairs farther apart than `radius`. This biases the drift and
    /// is meant for benchmarking only.
    pub fn with_cutoff(mut self, radius: f64) -> Self {
        self.cutoff = Some(radius);
        self.fast = false;
        self
    }

    pub fn with_execution(mut self, exec: Execution) -> Self {
        self.exec = exec;
        self
    }

    pub fn table(&self) -> &KernelTable {
        &self.table
    }

    /// Drift vectors in `(alpha, i, coordinate)` order.
    pub fn compute(&self, state: &ParticleState) -> Result<Vec<f64>> {
        let n = state.n_species;
        let big_n = state.n_particles;
        let d = state.d;
        if n != self.a.n() || big_n != self.n_particles || d != self.table.d() {
            return Err(Error::param(format!(
                "state shape ({n} species, {big_n} particles, d = {d}) does not match the drift engine"
            )));
        }
        let scale = 1.0 / big_n as f64;
        let drift = if self.fast {
            SoA::new(state).drift(&self.a, scale, &self.table, self.exec)
        } else {
            let per: Vec<Vec<f64>> = map_indexed(n * big_n, self.exec, |k| {
                let alpha = k / big_n;
                let x = &state.positions[k * d..(k + 1) * d];
                let mut total = vec![0.0; d];
                for beta in 0..n {
                    let w = self.a.get(alpha, beta);
                    if w == 0.0 {
                        continue;
                    }
                    let sum = self.generic_sum(state, beta, x);
                    for (t, s) in total.iter_mut().zip(&sum) {
                        *t -= scale * w * s;
                    }
                }
                total
            });
            per.concat()
        };
        if let Some(bad) = drift.iter().position(|v| !v.is_finite()) {
            return Err(self.locate_non_finite(state, bad / d));
        }
        Ok(drift)
    }

    fn generic_sum(&self, state: &ParticleState, beta: usize, x: &[f64]) -> Vec<f64> {
        let d = state.d;
        let mut sum = vec![0.0; d];
        let mut diff = vec![0.0; d];
        let mut g = vec![0.0; d];
        let cut2 = self.cutoff.map(|c| c * c);
        for y in state.species(beta).chunks(d) {
            let mut r2 = 0.0;
            for c in 0..d {
                diff[c] = x[c] - y[c];
                r2 += diff[c] * diff[c];
            }
            if cut2.is_some_and(|c2| r2 > c2) {
                continue;
            }
            self.table.grad_into(&diff, 1.0, &mut g);
            for (s, v) in sum.iter_mut().zip(&g) {
                *s += v;
            }
        }
        sum
    }

    fn locate_non_finite(&self, state: &ParticleState, target: usize) -> Error {
        let (alpha, i) = (target / state.n_particles, target % state.n_particles);
        let x = state.position(alpha, i);
        let mut g = vec![0.0; state.d];
        let mut diff = vec![0.0; state.d];
        for beta in 0..state.n_species {
            for j in 0..state.n_particles {
                let y = state.position(beta, j);
                for c in 0..state.d {
                    diff[c] = x[c] - y[c];
                }
                self.table.grad_into(&diff, self.a.get(alpha, beta), &mut g);
                if g.iter().any(|v| !v.is_finite()) || diff.iter().any(|v| !v.is_finite()) {
                    return Error::NonFiniteDrift {
                        target: (alpha, i),
                        source_particle: (beta, j),
                    };
                }
            }
        }
        Error::NonFiniteDrift {
            target: (alpha, i),
            source_particle: (alpha, i),
        }
    }
}

/// One-shot drift of `state` under the given table and couplings.
pub fn compute_drift(
    state: &ParticleState,
    table: Arc<KernelTable>,
    a: &InteractionMatrix,
    exec: Execution,
) -> Result<Vec<f64>> {
    DriftEngine::new(table, a.clone(), state.n_particles, exec)?.compute(state)
}

// Structure-of-arrays copy of 3-d positions, each species padded to whole
// blocks with far-away sentinels that contribute exactly zero.
struct SoA {
    xs: Vec<f64>,
    ys: Vec<f64>,
    zs: Vec<f64>,
    n_particles: usize,
    blocks_per_species: usize,
}

// Row task output: scaled drift of the row block and the contributions it
// makes to every later block.
struct RowOut {
    row: Vec<[f64; 3]>,
    cols: Vec<[f64; 3]>,
}

impl SoA {
    fn new(state: &ParticleState) -> Self {
        let blocks_per_species = state.n_particles.div_ceil(BLOCK);
        let len = state.n_species * blocks_per_species * BLOCK;
        let mut xs = vec![PAD; len];
        let mut ys = vec![0.0; len];
        let mut zs = vec![0.0; len];
        for beta in 0..state.n_species {
            let base = beta * blocks_per_species * BLOCK;
            for (j, p) in state.species(beta).chunks(3).enumerate() {
                xs[base + j] = p[0];
                ys[base + j] = p[1];
                zs[base + j] = p[2];
            }
        }
        Self {
            xs,
            ys,
            zs,
            n_particles: state.n_particles,
            blocks_per_species,
        }
    }

    fn block(&self, b: usize) -> [&[f64; BLOCK]; 3] {
        let r = b * BLOCK..(b + 1) * BLOCK;
        [
            self.xs[r.clone()].try_into().expect("block"),
            self.ys[r.clone()].try_into().expect("block"),
            self.zs[r].try_into().expect("block"),
        ]
    }

    // Every unordered pair of blocks is visited once. Row task `I` handles
    // the blocks `J >= I`; the drift of block `B` is then the contributions
    // of rows `I < B` in increasing `I`, followed by row `B` itself.
    fn drift(&self, a: &InteractionMatrix, scale: f64, table: &KernelTable, exec: Execution) -> Vec<f64> {
        let nb = self.blocks_per_species * a.n();
        let rows = map_indexed(nb, exec, |i| self.row_task(i, a, scale, table));
        let mut out = Vec::with_capacity(a.n() * self.n_particles * 3);
        for b in 0..nb {
            let mut acc = [[0.0f64; 3]; BLOCK];
            for (i, r) in rows.iter().enumerate().take(b) {
                let off = (b - i - 1) * BLOCK;
                for (t, v) in acc.iter_mut().zip(&r.cols[off..off + BLOCK]) {
                    for c in 0..3 {
                        t[c] += v[c];
                    }
                }
            }
            let first = (b % self.blocks_per_species) * BLOCK;
            let take = BLOCK.min(self.n_particles.saturating_sub(first));
            for (t, v) in acc.iter().zip(&rows[b].row).take(take) {
                for c in 0..3 {
                    out.push(t[c] + v[c]);
                }
            }
        }
        out
    }

    // Dispatches to a wider instruction set when available; the arithmetic
    // is the same IEEE operations in the same order either way.
    fn row_task(&self, i: usize, a: &InteractionMatrix, scale: f64, table: &KernelTable) -> RowOut {
        #[cfg(target_arch = "x86_64")]
        {
            if std::arch::is_x86_feature_detected!("avx512f") {
                // SAFETY: the required feature was detected at runtime.
                return unsafe { self.row_task_avx512(i, a, scale, table) };
            }
            if std::arch::is_x86_feature_detected!("avx2") {
                // SAFETY: as above.
                return unsafe { self.row_task_avx2(i, a, scale, table) };
            }
        }
        self.row_task_portable(i, a, scale, table)
    }

    #[cfg(target_arch = "x86_64")]
    #[target_feature(enable = "avx512f")]
    unsafe fn row_task_avx512(&self, i: usize, a: &InteractionMatrix, scale: f64, table: &KernelTable) -> RowOut {
        self.row_task_portable(i, a, scale, table)
    }

    #[cfg(target_arch = "x86_64")]
    #[target_feature(enable = "avx2")]
    unsafe fn row_task_avx2(&self, i: usize, a: &InteractionMatrix, scale: f64, table: &KernelTable) -> RowOut {
        self.row_task_portable(i, a, scale, table)
    }

    #[inline(always)]
    fn row_task_portable(&self, ib: usize, a: &InteractionMatrix, scale: f64, table: &KernelTable) -> RowOut {
        let nb = self.blocks_per_species * a.n();
        let eps2 = table.eps() * table.eps();
        let alpha = ib / self.blocks_per_species;
        let target = self.block(ib);
        let mut row = vec![[0.0f64; 3]; BLOCK];
        let mut cols = vec![[0.0f64; 3]; (nb - ib - 1) * BLOCK];
        let mut row_f = [[0.0f64; 3]; BLOCK];
        let mut col_f = [[0.0f64; BLOCK]; 3];
        for jb in ib..nb {
            let beta = jb / self.blocks_per_species;
            let w_row = scale * a.get(alpha, beta);
            let w_col = scale * a.get(beta, alpha);
            let source = self.block(jb);
            if jb == ib {
                if w_row == 0.0 {
                    continue;
                }
                tile::<false>(target, source, eps2, table, &mut row_f, &mut col_f);
            } else {
                if w_row == 0.0 && w_col == 0.0 {
                    continue;
                }
                col_f = [[0.0; BLOCK]; 3];
                tile::<true>(target, source, eps2, table, &mut row_f, &mut col_f);
                let off = (jb - ib - 1) * BLOCK;
                for (j, t) in cols[off..off + BLOCK].iter_mut().enumerate() {
                    for c in 0..3 {
                        t[c] += w_col * col_f[c][j];
                    }
                }
            }
            for (t, f) in row.iter_mut().zip(&row_f) {
                for c in 0..3 {
                    t[c] -= w_row * f[c];
                }
            }
        }
        RowOut { row, cols }
    }
}

// Pair forces F_ij = grad(V * chi_eps)(t_i - s_j) of one tile: row sums over
// `j` go to `row_f` (overwritten); with `SYM` the column sums over `i` are
// added to `col_f`. Pairs with |x| >= eps use -x/|x|^3 in closed form, the
// rest go through the table.
#[inline(always)]
fn tile<const SYM: bool>(
    t: [&[f64; BLOCK]; 3],
    s: [&[f64; BLOCK]; 3],
    eps2: f64,
    table: &KernelTable,
    row_f: &mut [[f64; 3]; BLOCK],
    col_f: &mut [[f64; BLOCK]; 3],
) {
    let [sx, sy, sz] = s;
    for i in 0..BLOCK {
        let p = [t[0][i], t[1][i], t[2][i]];
        let mut acc = [[0.0f64; LANES]; 3];
        let mut min_r2 = [f64::INFINITY; LANES];
        for c in 0..BLOCK / LANES {
            for l in 0..LANES {
                let j = c * LANES + l;
                let dx = p[0] - sx[j];
                let dy = p[1] - sy[j];
                let dz = p[2] - sz[j];
                let r2 = dx * dx + dy * dy + dz * dz;
                let y = inv_sqrt(r2);
                let w = if r2 >= eps2 { y * y * y } else { 0.0 };
                let (fx, fy, fz) = (w * dx, w * dy, w * dz);
                acc[0][l] -= fx;
                acc[1][l] -= fy;
                acc[2][l] -= fz;
                if SYM {
                    col_f[0][j] -= fx;
                    col_f[1][j] -= fy;
                    col_f[2][j] -= fz;
                }
                min_r2[l] = if r2 < min_r2[l] { r2 } else { min_r2[l] };
            }
        }
        for c in 0..3 {
            let a = &acc[c];
            row_f[i][c] = ((a[0] + a[1]) + (a[2] + a[3])) + ((a[4] + a[5]) + (a[6] + a[7]));
        }
        let m = min_r2.iter().fold(f64::INFINITY, |m, &v| if v < m { v } else { m });
        if m < eps2 {
            near_row::<SYM>(p, s, eps2, table, &mut row_f[i], col_f);
        }
    }
}

// Table contributions of the pairs of one row inside the mollifier radius.
#[inline(never)]
fn near_row<const SYM: bool>(
    p: [f64; 3],
    s: [&[f64; BLOCK]; 3],
    eps2: f64,
    table: &KernelTable,
    row: &mut [f64; 3],
    col_f: &mut [[f64; BLOCK]; 3],
) {
    let mut g = [0.0; 3];
    for j in 0..BLOCK {
        let diff = [p[0] - s[0][j], p[1] - s[1][j], p[2] - s[2][j]];
        let r2 = diff[0] * diff[0] + diff[1] * diff[1] + diff[2] * diff[2];
        if r2 < eps2 && r2 > 0.0 {
            table.grad_into(&diff, 1.0, &mut g);
            for c in 0..3 {
                row[c] += g[c];
                if SYM {
                    col_f[c][j] += g[c];
                }
            }
        }
    }
}

// 1/sqrt(x) for normal positive x from a bit-level first guess (relative
// error < 3.5%) refined by four Newton steps, accurate to a few ulp. Only
// IEEE multiply/subtract and integer operations are involved, so every
// instruction set produces the same bits. Non-normal inputs are never used:
// those pairs fall inside the mollifier radius or are padding.
#[inline(always)]
fn inv_sqrt(x: f64) -> f64 {
    let mut y = f64::from_bits(0x5fe6_eb50_c7b5_37a9u64.wrapping_sub(x.to_bits() >> 1));
    let half = 0.5 * x;
    for _ in 0..4 {
        y *= 1.5 - half * y * y;
    }
    y
}
