//! Order statistics and straight-line fits used by the reporting code.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lsq::weighted_linear_fit;

fn sorted_finite(values: &[f64]) -> Result<Vec<f64>> {
    if values.is_empty() {
        return Err(Error::InvalidInput("no values".to_string()));
    }
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(Error::InvalidInput(format!("non-finite value {v}")));
    }
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    Ok(s)
}

/// Quantile of already sorted data by inclusive linear interpolation
/// (position p·(n − 1), the common "type 7" rule).
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = p.clamp(0.0, 1.0) * (n - 1) as f64;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

pub fn quantile(values: &[f64], p: f64) -> Result<f64> {
    Ok(quantile_sorted(&sorted_finite(values)?, p))
}

/// Median; the mean of the central pair for even counts.
pub fn median(values: &[f64]) -> Result<f64> {
    quantile(values, 0.5)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub mean: f64,
}

pub fn summarize(values: &[f64]) -> Result<Summary> {
    let s = sorted_finite(values)?;
    Ok(Summary {
        n: s.len(),
        median: quantile_sorted(&s, 0.5),
        q1: quantile_sorted(&s, 0.25),
        q3: quantile_sorted(&s, 0.75),
        mean: s.iter().sum::<f64>() / s.len() as f64,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineFit {
    pub slope: f64,
    pub intercept: f64,
    pub slope_sigma: f64,
    pub intercept_sigma: f64,
    pub residual_ss: f64,
    pub n: usize,
}

impl LineFit {
    pub fn at(&self, x: f64) -> f64 {
        self.intercept + self.slope * x
    }
}

/// Ordinary least-squares line y = intercept + slope·x, with standard errors
/// scaled by the residual variance.
pub fn ols_line(x: &[f64], y: &[f64]) -> Result<LineFit> {
    if x.len() != y.len() {
        return Err(Error::InvalidInput(format!(
            "{} abscissae but {} ordinates",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 3 {
        return Err(Error::InsufficientPoints {
            needed: 3,
            got: x.len(),
        });
    }
    let n = x.len();
    let design = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { x[i] });
    let fit = weighted_linear_fit(&design, y, &vec![1.0; n], true)?;
    Ok(LineFit {
        intercept: fit.coef[0],
        slope: fit.coef[1],
        intercept_sigma: fit.covariance[(0, 0)].sqrt(),
        slope_sigma: fit.covariance[(1, 1)].sqrt(),
        residual_ss: fit.wssr,
        n,
    })
}
