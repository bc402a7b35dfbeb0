//! Valuation functions for interbank claims.
//!
//! Each function maps a borrower's current equity to the fraction of face
//! value its creditors book for their claims on it.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which valuation function drives the re-valuation rounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ValuationSpec {
    /// Contagion on default: claims keep full value until the borrower's
    /// equity turns negative, then only `recovery` is kept.
    Furfine { recovery: f64 },
    /// Claims lose value in proportion to the borrower's relative equity loss.
    LinearDebtRank,
    /// Exponentially damped distress transmission; `alpha = 0` is linear.
    NonlinearDebtRank { alpha: f64 },
}

impl ValuationSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ValuationSpec::Furfine { recovery } if !(0.0..1.0).contains(&recovery) => {
                Err(Error::InvalidParameter(alloc::format!("recovery rate {recovery} outside [0, 1)")))
            }
            ValuationSpec::NonlinearDebtRank { alpha } if !(alpha >= 0.0) => {
                Err(Error::InvalidParameter(alloc::format!("alpha {alpha} must be nonnegative")))
            }
            _ => Ok(()),
        }
    }

    /// Value factor of a claim on a borrower with current equity `equity`,
    /// initial equity `equity0` and default flag `defaulted`.
    #[inline]
    pub fn value(&self, equity: f64, equity0: f64, defaulted: bool) -> f64 {
        match *self {
            ValuationSpec::Furfine { recovery } => furfine_value(equity, recovery, defaulted),
            ValuationSpec::LinearDebtRank => linear_dr_value(equity, equity0),
            ValuationSpec::NonlinearDebtRank { alpha } => nonlinear_dr_value(equity, equity0, alpha),
        }
    }

    /// Short stable name used in reports.
    pub fn name(&self) -> &'static str {
        match self {
            ValuationSpec::Furfine { .. } => "furfine",
            ValuationSpec::LinearDebtRank => "dr",
            ValuationSpec::NonlinearDebtRank { .. } => "nldr",
        }
    }

    /// The numeric parameter (recovery or alpha), if any.
    pub fn parameter(&self) -> Option<f64> {
        match *self {
            ValuationSpec::Furfine { recovery } => Some(recovery),
            ValuationSpec::LinearDebtRank => None,
            ValuationSpec::NonlinearDebtRank { alpha } => Some(alpha),
        }
    }
}

/// 1 while solvent, `recovery` once the equity is negative or the bank was
/// put into default.
#[inline]
pub fn furfine_value(equity: f64, recovery: f64, defaulted: bool) -> f64 {
    if defaulted || equity < 0.0 {
        recovery
    } else {
        1.0
    }
}

/// Relative equity `E/E0` clipped to `[0, 1]`.
#[inline]
pub fn linear_dr_value(equity: f64, equity0: f64) -> f64 {
    debug_assert!(equity0 > 0.0);
    (equity / equity0).clamp(0.0, 1.0)
}

/// `1 - (1 - v) exp(-alpha v)` with `v` the linear DebtRank value.
///
/// Equals `v` at `alpha = 0`, stays in `[v, 1]`, and approaches the
/// zero-recovery default step as `alpha` grows.
#[inline]
pub fn nonlinear_dr_value(equity: f64, equity0: f64, alpha: f64) -> f64 {
    let v = linear_dr_value(equity, equity0);
    1.0 - (1.0 - v) * libm::exp(-alpha * v)
}

/// The damped form with the exponent written as `-alpha (v - 1)`.
///
/// Kept only for side-by-side comparison: it goes negative for small `v`
/// and does not reach the default step as `alpha` grows, so the engine
/// never uses it.
pub fn nonlinear_dr_value_alt_exponent(equity: f64, equity0: f64, alpha: f64) -> f64 {
    let v = linear_dr_value(equity, equity0);
    (v - 1.0) * libm::exp(-alpha * (v - 1.0)) + 1.0
}
