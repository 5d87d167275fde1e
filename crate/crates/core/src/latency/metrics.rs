use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::dataset::LatencySample;
use super::predictor::LatencyModel;

/// Mean absolute percentage error of `predicted` against `actual`. Pairs with
/// a zero label are skipped with a warning.
pub fn mape(predicted: &[f64], actual: &[f64]) -> Result<f64> {
    if predicted.len() != actual.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} labels",
            predicted.len(),
            actual.len()
        )));
    }
    let mut total = 0.0;
    let mut n = 0usize;
    for (&p, &a) in predicted.iter().zip(actual) {
        if a == 0.0 {
            log::warn!("skipping zero latency label in MAPE");
            continue;
        }
        total += ((p - a) / a).abs();
        n += 1;
    }
    if n == 0 {
        return Err(Error::Input("no nonzero labels to evaluate".into()));
    }
    Ok(100.0 * total / n as f64)
}

/// Held-out MAPE of a latency model on int8 labels, in percent.
pub fn evaluate_mape(model: &dyn LatencyModel, heldout: &[LatencySample]) -> Result<f64> {
    let pred: Vec<f64> = heldout.iter().map(|s| model.predict_ms(&s.arch)).collect();
    let actual: Vec<f64> = heldout.iter().map(|s| s.latency_int8_ms).collect();
    mape(&pred, &actual)
}

/// Least-squares line `y = slope * x + intercept`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinearFit {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub n: usize,
}

pub fn fit_ols(x: &[f64], y: &[f64]) -> Result<LinearFit> {
    if x.len() != y.len() {
        return Err(Error::Shape(format!(
            "{} x values for {} y values",
            x.len(),
            y.len()
        )));
    }
    let n = x.len();
    if n < 2 {
        return Err(Error::Regression(format!(
            "need at least 2 points, got {n}"
        )));
    }
    let nf = n as f64;
    let mx = x.iter().sum::<f64>() / nf;
    let my = y.iter().sum::<f64>() / nf;
    let sxx: f64 = x.iter().map(|v| (v - mx) * (v - mx)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    if !(sxx > f64::EPSILON * mx.abs().max(1.0) * nf) {
        return Err(Error::Regression("regressor has no variance".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_res: f64 = x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - slope * a - intercept).powi(2))
        .sum();
    let ss_tot: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    let r_squared = if ss_tot > 0.0 {
        1.0 - ss_res / ss_tot
    } else {
        1.0
    };
    Ok(LinearFit {
        slope,
        intercept,
        r_squared,
        n,
    })
}

/// Published fit of fp32 on int8 latency, reported for comparison only.
pub const REFERENCE_SLOPE: f64 = 1.75;
pub const REFERENCE_INTERCEPT: f64 = -2.65;

/// fp32-on-int8 latency regression with the published line alongside.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionReport {
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub n: usize,
    pub reference_slope: f64,
    pub reference_intercept: f64,
}

/// OLS of fp32 latency on int8 latency over samples that have both.
pub fn fit_latency_regression(samples: &[LatencySample]) -> Result<RegressionReport> {
    let (x, y): (Vec<f64>, Vec<f64>) = samples
        .iter()
        .filter_map(|s| s.latency_f32_ms.map(|f| (s.latency_int8_ms, f)))
        .unzip();
    let fit = fit_ols(&x, &y)?;
    Ok(RegressionReport {
        slope: fit.slope,
        intercept: fit.intercept,
        r_squared: fit.r_squared,
        n: fit.n,
        reference_slope: REFERENCE_SLOPE,
        reference_intercept: REFERENCE_INTERCEPT,
    })
}

impl std::fmt::Display for RegressionReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(
            f,
            "latency_f32 = {:.4} * latency_int8 + {:.4}",
            self.slope, self.intercept
        )?;
        writeln!(f, "slope: {:.6}", self.slope)?;
        writeln!(f, "intercept: {:.6}", self.intercept)?;
        writeln!(f, "r_squared: {:.6}", self.r_squared)?;
        writeln!(f, "n: {}", self.n)?;
        writeln!(f, "reference_slope: {}", self.reference_slope)?;
        write!(f, "reference_intercept: {}", self.reference_intercept)
    }
}
