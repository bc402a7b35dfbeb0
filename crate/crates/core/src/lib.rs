//! Interbank stress testing against a maximum-entropy null model.
//!
//! The crate covers the algorithmic side only and runs without `std`:
//!
//! - [`network`]: exposure networks, margins and balance sheets;
//! - [`valuation`] and [`contagion`]: equity re-valuation dynamics with
//!   default-only, linear and damped distress transmission, plus the
//!   aggregate loss, impact and vulnerability metrics;
//! - [`sdecm`]: fitting and sampling the degree- and strength-preserving
//!   null ensemble;
//! - [`ensemble`]: observed-versus-expected comparison over that ensemble;
//! - [`equity`]: log-log regression used to impute missing equity;
//! - [`synthetic`]: heavy-tailed synthetic snapshots for testing.
//!
//! File formats, the command line and the parallel ensemble driver live in
//! the `sysrisk` crate.
#![no_std]

extern crate alloc;

pub mod contagion;
pub mod ensemble;
pub mod equity;
pub mod error;
mod float_serde;
mod linalg;
pub mod network;
pub mod sdecm;
pub mod synthetic;
pub mod valuation;

pub use contagion::{
    aggregate_loss_h, apply_shock, run, run_terminal, EquityTrajectory, Relevance, RunConfig, ShockSpec, ShockedState,
    SingleDefaultCache,
};
pub use error::{Error, Result};
pub use network::{
    compute_margins, derive_balance_sheets, validate, BalanceSheet, Banks, InterbankNetwork, NetworkBuilder,
    NodeMargins, Violation,
};
pub use sdecm::{FitTargets, SdecmParams};
pub use valuation::ValuationSpec;
