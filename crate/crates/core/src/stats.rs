//! Small statistics helpers for the audits and scaling fits.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Median of a non-empty sample (mean of the middle pair for even sizes).
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len().is_multiple_of(2) {
        0.5 * (v[mid - 1] + v[mid])
    } else {
        v[mid]
    })
}

pub fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Unbiased sample variance.
pub fn sample_variance(values: &[f64]) -> f64 {
    let m = mean(values);
    values.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (values.len() as f64 - 1.0)
}

/// Least-squares line through `(x, y)`, returning `(slope, intercept)`.
pub fn fit_line(xs: &[f64], ys: &[f64]) -> Result<(f64, f64)> {
    if xs.len() != ys.len() || xs.len() < 2 {
        return Err(Error::invalid("line fit needs at least two paired points"));
    }
    let mx = mean(xs);
    let my = mean(ys);
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    if !(sxx > 1e-12 * xs.len() as f64) {
        return Err(Error::invalid("line fit rejected: abscissae have zero span"));
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}

/// Slope of log(y) against log(x).
pub fn log_log_slope(xs: &[f64], ys: &[f64]) -> Result<f64> {
    if xs.iter().chain(ys).any(|v| !(*v > 0.0)) {
        return Err(Error::invalid("log-log fit needs strictly positive data"));
    }
    let lx: Vec<f64> = xs.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|v| v.ln()).collect();
    Ok(fit_line(&lx, &ly)?.0)
}

/// A binomial proportion with its two-sided Wilson score interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BinomialRate {
    pub events: u64,
    pub trials: u64,
    pub rate: f64,
    pub lower: f64,
    pub upper: f64,
    pub level: f64,
}

impl BinomialRate {
    pub fn wilson(events: u64, trials: u64, level: f64) -> Self {
        assert!(trials > 0 && events <= trials);
        assert!(level > 0.0 && level < 1.0);
        let z = Normal::standard().inverse_cdf(0.5 + level / 2.0);
        let n = trials as f64;
        let p = events as f64 / n;
        let z2 = z * z;
        let denom = 1.0 + z2 / n;
        let centre = (p + z2 / (2.0 * n)) / denom;
        let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
        BinomialRate {
            events,
            trials,
            rate: p,
            lower: (centre - half).max(0.0),
            upper: (centre + half).min(1.0),
            level,
        }
    }

    /// Whether the data are compatible with a true rate of at most
    /// `threshold`, i.e. the interval reaches down to it.
    pub fn consistent_with_at_most(&self, threshold: f64) -> bool {
        self.lower <= threshold
    }
}
