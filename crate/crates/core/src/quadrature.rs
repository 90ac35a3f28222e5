//! Adaptive Gauss-Kronrod (7/15) quadrature on finite intervals.

use crate::{Error, Result};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];

const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];

// Gauss weights for the nodes XGK[1], XGK[3], XGK[5], XGK[7].
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// Tolerances and subdivision budget for [`integrate`].
#[derive(Debug, Clone, Copy)]
pub struct QuadOptions {
    pub abs_tol: f64,
    pub rel_tol: f64,
    pub max_intervals: usize,
}

impl Default for QuadOptions {
    fn default() -> Self {
        Self {
            abs_tol: 1e-14,
            rel_tol: 1e-12,
            max_intervals: 2000,
        }
    }
}

#[derive(Debug, Clone, Copy)]
struct Segment {
    lo: f64,
    hi: f64,
    value: f64,
    error: f64,
    // integral of |f|, used to detect the round-off floor
    magnitude: f64,
}

fn kronrod15<F: FnMut(f64) -> f64>(f: &mut F, lo: f64, hi: f64) -> Segment {
    let center = 0.5 * (lo + hi);
    let half = 0.5 * (hi - lo);
    let fc = f(center);
    let mut kronrod = fc * WGK[7];
    let mut gauss = fc * WG[3];
    let mut magnitude = fc.abs() * WGK[7];
    for (k, (&x, &w)) in XGK.iter().zip(WGK.iter()).take(7).enumerate() {
        let dx = half * x;
        let (left, right) = (f(center - dx), f(center + dx));
        let pair = left + right;
        kronrod += w * pair;
        magnitude += w * (left.abs() + right.abs());
        if k % 2 == 1 {
            gauss += WG[k / 2] * pair;
        }
    }
    Segment {
        lo,
        hi,
        value: kronrod * half,
        error: ((kronrod - gauss) * half).abs(),
        magnitude: magnitude * half.abs(),
    }
}

/// Integrates `f` over `[lo, hi]` by globally adaptive bisection of the
/// segment with the largest error estimate.
///
/// Convergence is declared when the error estimate meets the absolute or
/// relative tolerance, or falls below the round-off floor of the integral of
/// `|f|`. On failure the error carries the residual of the worst remaining
/// segment.
pub fn integrate<F: FnMut(f64) -> f64>(
    mut f: F,
    lo: f64,
    hi: f64,
    opts: QuadOptions,
) -> Result<f64> {
    if lo == hi {
        return Ok(0.0);
    }
    let mut segments = vec![kronrod15(&mut f, lo, hi)];
    loop {
        let total: f64 = segments.iter().map(|s| s.value).sum();
        let err: f64 = segments.iter().map(|s| s.error).sum();
        if !total.is_finite() {
            return Err(Error::Quadrature {
                residual: f64::NAN,
                lo,
                hi,
                context: "non-finite integrand".into(),
            });
        }
        let floor = 50.0 * f64::EPSILON * segments.iter().map(|s| s.magnitude).sum::<f64>();
        if err <= opts.abs_tol.max(opts.rel_tol * total.abs()).max(floor) {
            return Ok(total);
        }
        let (worst_idx, worst) = segments
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.error.total_cmp(&b.1.error))
            .map(|(i, s)| (i, *s))
            .expect("segments never empty");
        let mid = 0.5 * (worst.lo + worst.hi);
        if segments.len() >= opts.max_intervals || mid <= worst.lo || mid >= worst.hi {
            return Err(Error::Quadrature {
                residual: worst.error,
                lo: worst.lo,
                hi: worst.hi,
                context: format!("total error {err:e} after {} segments", segments.len()),
            });
        }
        segments[worst_idx] = kronrod15(&mut f, worst.lo, mid);
        segments.push(kronrod15(&mut f, mid, worst.hi));
    }
}

/// Integrates over consecutive pieces `[p0, p1], [p1, p2], ...`, used to keep
/// kinks of the integrand on segment boundaries.
pub fn integrate_pieces<F: FnMut(f64) -> f64>(
    mut f: F,
    breaks: &[f64],
    opts: QuadOptions,
) -> Result<f64> {
    let mut sum = 0.0;
    for w in breaks.windows(2) {
        if w[1] > w[0] {
            sum += integrate(&mut f, w[0], w[1], opts)?;
        }
    }
    Ok(sum)
}
