use std::io::Write;

use serde::Serialize;

use crate::kernels::ell_upper_bound;
use crate::{Error, Result};

/// Predicted marginal convergence exponent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RatePrediction {
    pub zeta: f64,
    pub ell: f64,
    pub s: f64,
    pub varrho: f64,
    pub improved: bool,
    /// Whether `0 < ell < 1/(2s+4)`.
    pub admissible: bool,
}

/// `zeta = min(ell, 1/2 - ell (s+2) - varrho)`, or with `s+1` in place of
/// `s+2` when `improved` is set.
///
/// `varrho` is the arbitrarily small slack of the rate; `0` gives the
/// limiting value. Inadmissible `ell` still yields a value.
pub fn predicted_zeta(ell: f64, s: f64, varrho: f64, improved: bool) -> Result<RatePrediction> {
    if !(varrho >= 0.0 && varrho.is_finite()) {
        return Err(Error::param(format!("varrho = {varrho} must be nonnegative")));
    }
    if !(ell.is_finite() && s > 0.0) {
        return Err(Error::param(format!("need finite ell and s > 0, got ell = {ell}, s = {s}")));
    }
    let shift = if improved { s + 1.0 } else { s + 2.0 };
    Ok(RatePrediction {
        zeta: ell.min(0.5 - ell * shift - varrho),
        ell,
        s,
        varrho,
        improved,
        admissible: ell > 0.0 && ell < ell_upper_bound(s),
    })
}

/// Admissible scaling exponents for a Riesz exponent `s`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ValidRanges {
    /// `(0, 1/(2s+4))`.
    pub ell: (f64, f64),
    /// `(ell, 1/2 - ell (s+1))`.
    pub lambda: (f64, f64),
}

impl ValidRanges {
    pub fn check_lambda(&self, lambda: f64) -> Result<()> {
        let (lo, hi) = self.lambda;
        if !(lambda > lo && lambda < hi) {
            return Err(Error::param(format!(
                "lambda = {lambda} must satisfy ell < lambda < 1/2 - ell (s+1) = ({lo}, {hi})"
            )));
        }
        Ok(())
    }

    pub fn check_ell(&self, ell: f64) -> Result<()> {
        let (lo, hi) = self.ell;
        if !(ell > lo && ell < hi) {
            return Err(Error::param(format!(
                "ell = {ell} must satisfy 0 < ell < 1/(2s+4) = {hi}"
            )));
        }
        Ok(())
    }
}

/// The `ell` and `lambda` intervals; errors when the `lambda` interval is
/// empty. The bound `1/(2s+4)` is used for Coulomb interactions as well.
pub fn valid_ranges(ell: f64, s: f64, d: usize) -> Result<ValidRanges> {
    if !(s > 0.0 && d >= 3 && s <= d as f64 - 2.0 + 1e-12) {
        return Err(Error::param(format!(
            "need 0 < s <= d - 2 with d >= 3, got s = {s}, d = {d}"
        )));
    }
    let lambda = (ell, 0.5 - ell * (s + 1.0));
    if !(lambda.1 > lambda.0) {
        return Err(Error::param(format!(
            "lambda interval (ell, 1/2 - ell (s+1)) = ({}, {}) is empty",
            lambda.0, lambda.1
        )));
    }
    Ok(ValidRanges {
        ell: (0.0, ell_upper_bound(s)),
        lambda,
    })
}

/// Least-squares line through `(ln scale, ln value)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SlopeFit {
    pub slope: f64,
    pub intercept: f64,
    pub stderr: f64,
    pub r2: f64,
}

/// Weighted least squares of `ln value` on `ln scale`.
///
/// Row weights are `(value / stderr)^2`, the inverse variance of
/// `ln value`; if any stderr is zero or missing all rows weigh the same.
pub fn fit_loglog_slope(scales: &[f64], values: &[f64], stderrs: &[f64]) -> Result<SlopeFit> {
    let n = scales.len();
    if n < 3 || values.len() != n || stderrs.len() != n {
        return Err(Error::param(format!("a slope fit needs at least 3 rows, got {n}")));
    }
    for (k, (&x, &y)) in scales.iter().zip(values).enumerate() {
        if !(x > 0.0 && x.is_finite()) || !(y > 0.0 && y.is_finite()) {
            return Err(Error::param(format!(
                "row {k} (scale {x}, value {y}) is not positive; log-log fit impossible"
            )));
        }
    }
    let weighted = stderrs.iter().all(|&e| e > 0.0 && e.is_finite());
    let w: Vec<f64> = (0..n)
        .map(|k| if weighted { (values[k] / stderrs[k]).powi(2) } else { 1.0 })
        .collect();
    let x: Vec<f64> = scales.iter().map(|v| v.ln()).collect();
    let y: Vec<f64> = values.iter().map(|v| v.ln()).collect();
    let sw: f64 = w.iter().sum();
    let mx = w.iter().zip(&x).map(|(a, b)| a * b).sum::<f64>() / sw;
    let my = w.iter().zip(&y).map(|(a, b)| a * b).sum::<f64>() / sw;
    let sxx: f64 = (0..n).map(|k| w[k] * (x[k] - mx).powi(2)).sum();
    let sxy: f64 = (0..n).map(|k| w[k] * (x[k] - mx) * (y[k] - my)).sum();
    let syy: f64 = (0..n).map(|k| w[k] * (y[k] - my).powi(2)).sum();
    if !(sxx > 0.0) {
        return Err(Error::param("scales must not all coincide"));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let rss: f64 = (0..n).map(|k| w[k] * (y[k] - intercept - slope * x[k]).powi(2)).sum();
    // residual-based standard error, rescaled to the average weight
    let stderr = (rss / (n as f64 - 2.0) / sxx).sqrt();
    let r2 = if syy > 0.0 { 1.0 - rss / syy } else { 1.0 };
    Ok(SlopeFit {
        slope,
        intercept,
        stderr,
        r2,
    })
}

/// One measured value at one scale.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateRow {
    pub experiment: String,
    pub scale: f64,
    pub metric: String,
    pub value: f64,
    pub stderr: f64,
    pub reps: usize,
    pub seed: u64,
}

/// Rows of one experiment plus the slope fit of its headline metric.
#[derive(Debug, Clone, PartialEq)]
pub struct RateTable {
    pub experiment: String,
    pub rows: Vec<RateRow>,
    /// Metric the fit refers to.
    pub fit_metric: String,
    pub fit: Option<SlopeFit>,
    /// Predicted exponent printed beside the fit, where one applies.
    pub prediction: Option<RatePrediction>,
}

impl RateTable {
    pub fn new(experiment: &str, fit_metric: &str) -> Self {
        Self {
            experiment: experiment.to_string(),
            rows: Vec::new(),
            fit_metric: fit_metric.to_string(),
            fit: None,
            prediction: None,
        }
    }

    pub fn push(&mut self, scale: f64, metric: &str, value: f64, stderr: f64, reps: usize, seed: u64) {
        self.rows.push(RateRow {
            experiment: self.experiment.clone(),
            scale,
            metric: metric.to_string(),
            value,
            stderr,
            reps,
            seed,
        });
    }

    /// Rows of one metric in table order.
    pub fn metric(&self, name: &str) -> Vec<&RateRow> {
        self.rows.iter().filter(|r| r.metric == name).collect()
    }

    /// Values of one metric in table order.
    pub fn values(&self, name: &str) -> Vec<f64> {
        self.rows.iter().filter(|r| r.metric == name).map(|r| r.value).collect()
    }

    /// Fits the headline metric; needs at least three strictly monotone
    /// scales.
    pub fn fit(&mut self) -> Result<SlopeFit> {
        let rows = self.metric(&self.fit_metric);
        let scales: Vec<f64> = rows.iter().map(|r| r.scale).collect();
        let increasing = scales.windows(2).all(|w| w[1] > w[0]);
        let decreasing = scales.windows(2).all(|w| w[1] < w[0]);
        if !(increasing || decreasing) {
            return Err(Error::param(format!(
                "scales of metric {} are not strictly monotone",
                self.fit_metric
            )));
        }
        let values: Vec<f64> = rows.iter().map(|r| r.value).collect();
        let errs: Vec<f64> = rows.iter().map(|r| r.stderr).collect();
        let fit = fit_loglog_slope(&scales, &values, &errs)?;
        self.fit = Some(fit);
        Ok(fit)
    }

    /// CSV with columns experiment, scale, metric, value, stderr, reps,
    /// seed.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        for r in &self.rows {
            w.serialize(r).map_err(csv_error)?;
        }
        w.flush().map_err(|e| Error::Config(format!("csv output: {e}")))?;
        Ok(())
    }

    /// `x y yerr` triples of the headline metric, one per line.
    pub fn write_plot_data<W: Write>(&self, mut out: W) -> Result<()> {
        let io = |e: std::io::Error| Error::Config(format!("plot data output: {e}"));
        writeln!(out, "# {} {}: x y yerr", self.experiment, self.fit_metric).map_err(io)?;
        for r in self.metric(&self.fit_metric) {
            writeln!(out, "{:e} {:e} {:e}", r.scale, r.value, r.stderr).map_err(io)?;
        }
        Ok(())
    }
}

fn csv_error(e: csv::Error) -> Error {
    Error::Config(format!("csv output: {e}"))
}
