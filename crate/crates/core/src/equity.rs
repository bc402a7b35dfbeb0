//! Equity imputation from interbank positions.
//!
//! Equity follows a power law in the average interbank position,
//! `E = exp(a) * ((s_in + s_out) / 2)^b`, fitted by least squares on
//! natural logarithms.

use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::NodeMargins;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionFit {
    pub intercept: f64,
    pub slope: f64,
    pub pearson_r: f64,
    pub r_squared: f64,
    pub count: usize,
}

impl RegressionFit {
    /// A fit given directly by its coefficients.
    pub fn from_coefficients(intercept: f64, slope: f64) -> Self {
        RegressionFit { intercept, slope, pearson_r: f64::NAN, r_squared: f64::NAN, count: 0 }
    }

    pub fn predict(&self, position: f64) -> f64 {
        libm::exp(self.intercept + self.slope * libm::log(position))
    }
}

/// Ordinary least squares of `ln(equity)` on `ln(position)`.
///
/// `pairs` holds `(average position, equity)` per bank; at least three
/// strictly positive pairs are required.
pub fn fit_log_regression(pairs: &[(f64, f64)]) -> Result<RegressionFit> {
    if pairs.len() < 3 {
        return Err(Error::Degenerate(alloc::format!("need at least 3 pairs, got {}", pairs.len())));
    }
    if let Some(&(x, y)) = pairs.iter().find(|(x, y)| !(*x > 0.0 && *y > 0.0) || !x.is_finite() || !y.is_finite()) {
        return Err(Error::InvalidParameter(alloc::format!("position and equity must be positive, got ({x}, {y})")));
    }
    let logs: Vec<(f64, f64)> = pairs.iter().map(|&(x, y)| (libm::log(x), libm::log(y))).collect();
    let n = logs.len() as f64;
    let mx = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let my = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for &(x, y) in &logs {
        let (dx, dy) = (x - mx, y - my);
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if !(sxx > 1e-300) {
        return Err(Error::Degenerate("positions have no spread on the log scale".into()));
    }
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let (pearson_r, r_squared) = if syy > 0.0 {
        let r = sxy / libm::sqrt(sxx * syy);
        (r, r * r)
    } else {
        (0.0, 0.0)
    };
    Ok(RegressionFit { intercept, slope, pearson_r, r_squared, count: pairs.len() })
}

/// Imputed equity for a bank with the given interbank totals.
pub fn impute_equity(fit: &RegressionFit, s_in: f64, s_out: f64) -> Result<f64> {
    let position = 0.5 * (s_in + s_out);
    if !(position > 0.0) {
        return Err(Error::Degenerate("no interbank position to impute equity from".into()));
    }
    Ok(fit.predict(position))
}

/// Imputed equity for every bank.
pub fn impute_all(fit: &RegressionFit, margins: &NodeMargins) -> Result<Vec<f64>> {
    margins.s_in.iter().zip(&margins.s_out).map(|(&si, &so)| impute_equity(fit, si, so)).collect()
}
