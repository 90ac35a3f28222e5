use super::{norm, sphere_area, BumpProfile, MollifierSpec, RieszSpec};
use crate::quadrature::{integrate_pieces, QuadOptions};
use crate::{Error, Result};

/// Default number of radial nodes (including `r = 0`).
pub const DEFAULT_TABLE_POINTS: usize = 2048;

/// Innermost positive node as a fraction of `eps`; below it the profile is
/// extended by its Taylor behaviour at the origin.
const INNER_RADIUS_FRACTION: f64 = 1e-3;

/// Radial profile of `V * chi_eps` and of its radial derivative.
///
/// Nodes are `0` followed by a geometric grid from `eps * 1e-3` to `r_max`.
/// Between nodes the profile is interpolated by a monotone (Fritsch-Carlson)
/// cubic in `(ln r, ln |y|)`, which reproduces the far-field power laws
/// exactly. Beyond `r_max` the unmollified closed form is used.
#[derive(Debug, Clone)]
pub struct KernelTable {
    s: f64,
    d: usize,
    eps: f64,
    radii: Vec<f64>,
    v_eps: Vec<f64>,
    g_eps: Vec<f64>,
    log_v: LogPchip,
    log_g: LogPchip,
}

impl KernelTable {
    /// Rebuilds a table from stored arrays (e.g. the on-disk cache).
    pub fn from_parts(
        s: f64,
        d: usize,
        eps: f64,
        radii: Vec<f64>,
        v_eps: Vec<f64>,
        g_eps: Vec<f64>,
    ) -> Result<Self> {
        if radii.len() < 3 || radii.len() != v_eps.len() || radii.len() != g_eps.len() {
            return Err(Error::param("kernel table arrays must have equal length >= 3"));
        }
        if radii[0] != 0.0 || radii.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::param("kernel table radii must start at 0 and increase strictly"));
        }
        if v_eps.iter().chain(&g_eps).any(|v| !v.is_finite()) {
            return Err(Error::param("kernel table contains non-finite values"));
        }
        if g_eps[1..].iter().any(|&g| g >= 0.0) {
            return Err(Error::param("kernel table derivative must be negative for r > 0"));
        }
        let log_r: Vec<f64> = radii[1..].iter().map(|r| r.ln()).collect();
        let log_v = LogPchip::new(&log_r, v_eps[1..].iter().map(|v| v.ln()).collect())?;
        let log_g = LogPchip::new(&log_r, g_eps[1..].iter().map(|g| (-g).ln()).collect())?;
        Ok(Self {
            s,
            d,
            eps,
            radii,
            v_eps,
            g_eps,
            log_v,
            log_g,
        })
    }

    pub fn s(&self) -> f64 {
        self.s
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn radii(&self) -> &[f64] {
        &self.radii
    }

    pub fn v_eps(&self) -> &[f64] {
        &self.v_eps
    }

    pub fn g_eps(&self) -> &[f64] {
        &self.g_eps
    }

    pub fn r_max(&self) -> f64 {
        *self.radii.last().expect("non-empty table")
    }

    pub fn is_coulomb(&self) -> bool {
        (self.s - (self.d as f64 - 2.0)).abs() < 1e-12
    }

    /// `(V * chi_eps)(r)`.
    pub fn potential(&self, r: f64) -> f64 {
        let r1 = self.radii[1];
        if r >= self.r_max() {
            r.powf(-self.s)
        } else if r < r1 {
            let t = r / r1;
            self.v_eps[0] + (self.v_eps[1] - self.v_eps[0]) * t * t
        } else {
            self.log_v.eval(r.ln()).exp()
        }
    }

    /// `d/dr (V * chi_eps)(r)`; zero at the origin, negative elsewhere.
    #[inline]
    pub fn radial_derivative(&self, r: f64) -> f64 {
        let r1 = self.radii[1];
        if r >= self.r_max() {
            -self.s * r.powf(-self.s - 1.0)
        } else if r < r1 {
            self.g_eps[1] * (r / r1)
        } else {
            -self.log_g.eval(r.ln()).exp()
        }
    }

    /// Writes `a * grad (V * chi_eps)(x)` into `out`.
    #[inline]
    pub fn grad_into(&self, x: &[f64], a: f64, out: &mut [f64]) {
        let r = norm(x);
        if r == 0.0 || a == 0.0 {
            out.iter_mut().for_each(|o| *o = 0.0);
            return;
        }
        let scale = a * self.radial_derivative(r) / r;
        for (o, xi) in out.iter_mut().zip(x) {
            *o = scale * xi;
        }
    }
}

/// `a * grad (V * chi_eps)(x)` as a fresh vector.
pub fn eval_grad_v_eps(x: &[f64], table: &KernelTable, a: f64) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    table.grad_into(x, a, &mut out);
    out
}

/// Tabulates `V * chi_eps` and its radial derivative by adaptive
/// Gauss-Kronrod quadrature of the convolution in radial coordinates.
///
/// `r_max` is the outer edge of the table (eight box half-widths by
/// default, see [`super::DEFAULT_BOX_HALF_WIDTH`]).
pub fn build_kernel_table(
    riesz: &RieszSpec,
    moll: &MollifierSpec,
    n_points: usize,
    r_max: f64,
) -> Result<KernelTable> {
    if n_points < 64 {
        return Err(Error::param(format!(
            "kernel table needs at least 64 points, got {n_points}"
        )));
    }
    let eps = moll.eps();
    let r1 = eps * INNER_RADIUS_FRACTION;
    if !(r_max > 2.0 * eps) {
        return Err(Error::param(format!(
            "table radius r_max = {r_max} must exceed 2 eps = {}",
            2.0 * eps
        )));
    }
    let profile = BumpProfile::new(riesz.d())?;
    let conv = RadialConvolution::new(riesz, eps, profile);

    let mut radii = Vec::with_capacity(n_points);
    radii.push(0.0);
    let steps = (n_points - 2) as f64;
    let ratio = (r_max / r1).ln() / steps;
    for k in 0..n_points - 1 {
        radii.push(if k == n_points - 2 {
            r_max
        } else {
            r1 * (ratio * k as f64).exp()
        });
    }

    let mut v_eps = Vec::with_capacity(n_points);
    let mut g_eps = Vec::with_capacity(n_points);
    let mut worst: Option<Error> = None;
    for &r in &radii {
        match (conv.potential(r), conv.derivative(r)) {
            (Ok(v), Ok(g)) => {
                v_eps.push(v);
                g_eps.push(g);
            }
            (Err(e), _) | (_, Err(e)) => {
                // keep the failure with the largest residual
                let replace = match (&worst, &e) {
                    (None, _) => true,
                    (
                        Some(Error::Quadrature { residual: old, .. }),
                        Error::Quadrature { residual: new, .. },
                    ) => new > old,
                    _ => false,
                };
                if replace {
                    worst = Some(e);
                }
                v_eps.push(f64::NAN);
                g_eps.push(f64::NAN);
            }
        }
    }
    if let Some(e) = worst {
        return Err(e);
    }
    KernelTable::from_parts(riesz.s(), riesz.d(), eps, radii, v_eps, g_eps)
}

/// Quadrature of `r -> (V * chi_eps)(r)` written as
/// `int_0^1 chi(u) u^{d-1} A(r, eps u) du`, where `A` is the integral of
/// `|x - y|^-s` over the sphere `|y| = rho`.
struct RadialConvolution {
    s: f64,
    d: usize,
    eps: f64,
    profile: BumpProfile,
    outer: QuadOptions,
}

impl RadialConvolution {
    fn new(riesz: &RieszSpec, eps: f64, profile: BumpProfile) -> Self {
        Self {
            s: riesz.s(),
            d: riesz.d(),
            eps,
            profile,
            outer: QuadOptions {
                abs_tol: 1e-300,
                rel_tol: 1e-10,
                max_intervals: 400,
            },
        }
    }

    // absolute accuracy relative to the sup of the k-th derivative, ~eps^-(s+k)
    fn options(&self, k: f64) -> QuadOptions {
        QuadOptions {
            abs_tol: 1e-13 * self.eps.powf(-(self.s + k)),
            ..self.outer
        }
    }

    fn breaks(&self, r: f64) -> Vec<f64> {
        let u = r / self.eps;
        if u > 0.0 && u < 1.0 {
            vec![0.0, u, 1.0]
        } else {
            vec![0.0, 1.0]
        }
    }

    fn potential(&self, r: f64) -> Result<f64> {
        let d = self.d;
        let mut inner_err = None;
        let v = integrate_pieces(
            |u| {
                let w = self.profile.radial(u) * u.powi(d as i32 - 1);
                if w == 0.0 {
                    return 0.0;
                }
                match sphere_mean(self.s, d, r, self.eps * u, false) {
                    Ok(a) => w * a,
                    Err(e) => {
                        inner_err.get_or_insert(e);
                        f64::NAN
                    }
                }
            },
            &self.breaks(r),
            self.options(0.0),
        );
        if let Some(e) = inner_err {
            return Err(e);
        }
        v.map_err(|e| annotate(e, "potential", r))
    }

    fn derivative(&self, r: f64) -> Result<f64> {
        if r == 0.0 {
            return Ok(0.0);
        }
        let d = self.d;
        let mut inner_err = None;
        let g = integrate_pieces(
            |u| {
                let w = self.profile.radial(u) * u.powi(d as i32 - 1);
                if w == 0.0 {
                    return 0.0;
                }
                match sphere_mean(self.s, d, r, self.eps * u, true) {
                    Ok(a) => w * a,
                    Err(e) => {
                        inner_err.get_or_insert(e);
                        f64::NAN
                    }
                }
            },
            &self.breaks(r),
            self.options(1.0),
        );
        if let Some(e) = inner_err {
            return Err(e);
        }
        g.map_err(|e| annotate(e, "derivative", r))
    }
}

fn annotate(e: Error, what: &str, r: f64) -> Error {
    match e {
        Error::Quadrature {
            residual,
            lo,
            hi,
            context,
        } => Error::Quadrature {
            residual,
            lo,
            hi,
            context: format!("{what} at r = {r:e}: {context}"),
        },
        other => other,
    }
}

/// Integral of `|x - y|^-s` (or its derivative in `r = |x|`) over the sphere
/// `|y| = rho`.
fn sphere_mean(s: f64, d: usize, r: f64, rho: f64, derivative: bool) -> Result<f64> {
    if r == 0.0 || rho == 0.0 {
        let dist = r.max(rho);
        return Ok(if derivative {
            if rho == 0.0 {
                -s * sphere_area(d) * r.powf(-s - 1.0)
            } else {
                0.0
            }
        } else {
            sphere_area(d) * dist.powf(-s)
        });
    }
    if d == 3 {
        return Ok(sphere_mean_3d(s, r, rho, derivative));
    }
    let weight = sphere_area(d - 1);
    let k = d as i32 - 2;
    let f = |theta: f64| {
        let half = (0.5 * theta).sin();
        let q = (r - rho).powi(2) + 4.0 * r * rho * half * half;
        let sk = theta.sin().powi(k);
        if q <= 0.0 {
            return 0.0;
        }
        if derivative {
            let radial = (r - rho) + 2.0 * rho * half * half;
            -s * radial * q.powf(-0.5 * s - 1.0) * sk
        } else {
            q.powf(-0.5 * s) * sk
        }
    };
    let opts = QuadOptions {
        abs_tol: 1e-300,
        rel_tol: 1e-12,
        max_intervals: 2000,
    };
    // the integrand peaks in a layer of width |r - rho| / sqrt(r rho) at 0
    let layer = (r - rho).abs() / (r * rho).sqrt();
    let mut breaks = vec![0.0];
    for t in [layer, 10.0 * layer] {
        if t > 0.0 && t < 1.0 {
            breaks.push(t);
        }
    }
    breaks.push(std::f64::consts::PI);
    Ok(weight * integrate_pieces(f, &breaks, opts)?)
}

// Closed form of the d = 3 angular integral, written in the ratio
// x = min(r, rho) / max(r, rho) so that small ratios do not cancel.
fn sphere_mean_3d(s: f64, r: f64, rho: f64, derivative: bool) -> f64 {
    use std::f64::consts::PI;
    let p = 2.0 - s;
    let outer = r.max(rho);
    let x = r.min(rho) / outer;
    let (q, dq) = odd_difference_quotient(p, x);
    let scale = 2.0 * PI / p;
    if !derivative {
        return scale * outer.powf(p - 2.0) * q;
    }
    if rho > r {
        scale * outer.powf(p - 3.0) * dq
    } else {
        scale * outer.powf(p - 3.0) * ((p - 2.0) * q - x * dq)
    }
}

// q(x) = ((1 + x)^p - (1 - x)^p) / x and q'(x) on 0 <= x <= 1.
fn odd_difference_quotient(p: f64, x: f64) -> (f64, f64) {
    if p == 1.0 {
        return (2.0, 0.0);
    }
    if x < 0.25 {
        // binomial series: q = 2 sum_j C(p, 2j+1) x^2j
        let (mut q, mut dq) = (0.0, 0.0);
        let mut binom = p;
        let mut k = 1.0;
        let mut xpow = 1.0;
        for j in 0..24 {
            q += 2.0 * binom * xpow;
            if j > 0 {
                dq += 2.0 * binom * (2 * j) as f64 * xpow / x;
            }
            binom *= (p - k) * (p - k - 1.0) / ((k + 1.0) * (k + 2.0));
            k += 2.0;
            xpow *= x * x;
            if binom == 0.0 {
                break;
            }
        }
        return (q, dq);
    }
    let q = ((1.0 + x).powf(p) - (1.0 - x).powf(p)) / x;
    // at x = 1 with p = 1 the one-sided limits of (1 - x)^(p-1) differ in
    // sign between r < rho and r > rho; take their mean
    let lower = if x < 1.0 { (1.0 - x).powf(p - 1.0) } else { 0.0 };
    let dq = (p * ((1.0 + x).powf(p - 1.0) + lower) - q) / x;
    (q, dq)
}

/// Shape-preserving cubic Hermite interpolant on a uniform grid.
#[derive(Debug, Clone)]
struct LogPchip {
    x0: f64,
    dx: f64,
    y: Vec<f64>,
    m: Vec<f64>,
}

impl LogPchip {
    fn new(x: &[f64], y: Vec<f64>) -> Result<Self> {
        let n = x.len();
        if n < 3 || y.iter().any(|v| !v.is_finite()) {
            return Err(Error::param("interpolation data must be finite with >= 3 nodes"));
        }
        let x0 = x[0];
        let dx = (x[n - 1] - x0) / (n - 1) as f64;
        let delta: Vec<f64> = y.windows(2).map(|w| (w[1] - w[0]) / dx).collect();
        let mut m = vec![0.0; n];
        for k in 1..n - 1 {
            let (a, b) = (delta[k - 1], delta[k]);
            m[k] = if a * b <= 0.0 { 0.0 } else { 2.0 * a * b / (a + b) };
        }
        m[0] = end_slope(delta[0], delta[1]);
        m[n - 1] = end_slope(delta[n - 2], delta[n - 3]);
        Ok(Self { x0, dx, y, m })
    }

    #[inline]
    fn eval(&self, x: f64) -> f64 {
        let n = self.y.len();
        let u = (x - self.x0) / self.dx;
        let i = (u.floor().max(0.0) as usize).min(n - 2);
        let t = u - i as f64;
        let t2 = t * t;
        let t3 = t2 * t;
        let h00 = 2.0 * t3 - 3.0 * t2 + 1.0;
        let h10 = t3 - 2.0 * t2 + t;
        let h01 = -2.0 * t3 + 3.0 * t2;
        let h11 = t3 - t2;
        h00 * self.y[i] + h10 * self.dx * self.m[i] + h01 * self.y[i + 1] + h11 * self.dx * self.m[i + 1]
    }
}

fn end_slope(d0: f64, d1: f64) -> f64 {
    let m = 0.5 * (3.0 * d0 - d1);
    if m * d0 <= 0.0 {
        0.0
    } else if d0 * d1 <= 0.0 && m.abs() > 3.0 * d0.abs() {
        3.0 * d0
    } else {
        m
    }
}
