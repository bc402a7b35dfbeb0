//! Equity re-valuation dynamics and the risk metrics built on them.
//!
//! After a shock every bank re-values its interbank claims with the chosen
//! [`ValuationSpec`] and updates its equity,
//!
//! ```text
//! E_i(t+1) = N_i + sum_j w_ij V(E_j(t)) - s_i^in
//! ```
//!
//! until the equities stop moving. The update is evaluated in loss form,
//! `E_i(t+1) = E_i(1) - sum_j w_ij (1 - V(E_j(t)))`, which is the same map
//! (using the balance-sheet identity) and keeps an unshocked system exactly
//! at its starting point.

use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{BalanceSheet, InterbankNetwork};
use crate::valuation::ValuationSpec;

pub const DEFAULT_TOLERANCE: f64 = 1e-10;
pub const DEFAULT_MAX_ROUNDS: usize = 5000;

/// Initial shock hitting the system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ShockSpec {
    /// Every bank loses the fraction `lambda` of its equity through its
    /// net external assets.
    ProportionalAll { lambda: f64 },
    /// A single bank (by index) loses all of its equity and is put into
    /// default; everyone else is untouched.
    DefaultOne { bank: usize },
}

impl ShockSpec {
    /// Checks `0 < lambda < 1`.
    pub fn validate(&self) -> Result<()> {
        match *self {
            ShockSpec::ProportionalAll { lambda } if !(lambda > 0.0 && lambda < 1.0) => {
                Err(Error::InvalidParameter(alloc::format!("shock size {lambda} outside (0, 1)")))
            }
            _ => Ok(()),
        }
    }
}

/// Balance sheets after the shock together with the starting state of the
/// dynamics.
#[derive(Debug, Clone, PartialEq)]
pub struct ShockedState {
    /// Sheets with the net external assets reduced by the shock.
    pub sheets: Vec<BalanceSheet>,
    /// Equity right after the shock, `E(1)`.
    pub equity1: Vec<f64>,
    /// Banks in default from the start.
    pub defaulted: Vec<bool>,
    /// Bank whose equity stays pinned at zero.
    pub pinned: Option<usize>,
}

/// Applies `shock` to the balance sheets.
///
/// `ProportionalAll` accepts `lambda` in `[0, 1)` here; zero is useful as a
/// null scenario. Use [`ShockSpec::validate`] to require a proper shock.
pub fn apply_shock(sheets: &[BalanceSheet], shock: ShockSpec) -> Result<ShockedState> {
    let n = sheets.len();
    let mut shocked = sheets.to_vec();
    let mut equity1: Vec<f64> = sheets.iter().map(|s| s.equity0).collect();
    let mut defaulted = vec![false; n];
    let mut pinned = None;
    match shock {
        ShockSpec::ProportionalAll { lambda } => {
            if !(0.0..1.0).contains(&lambda) {
                return Err(Error::InvalidParameter(alloc::format!("shock size {lambda} outside [0, 1)")));
            }
            for (s, e1) in shocked.iter_mut().zip(equity1.iter_mut()) {
                let loss = lambda * s.equity0;
                s.net_external -= loss;
                *e1 = s.equity0 - loss;
            }
        }
        ShockSpec::DefaultOne { bank } => {
            if bank >= n {
                return Err(Error::UnknownBank(alloc::format!("#{bank}")));
            }
            shocked[bank].net_external -= shocked[bank].equity0;
            equity1[bank] = 0.0;
            defaulted[bank] = true;
            pinned = Some(bank);
        }
    }
    Ok(ShockedState { sheets: shocked, equity1, defaulted, pinned })
}

/// Stopping rule of the dynamics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Largest per-bank equity change, relative to initial equity, that
    /// counts as converged.
    pub tolerance: f64,
    pub max_rounds: usize,
    /// Rounds at which reports sample `H`.
    #[serde(default)]
    pub record_steps: Vec<usize>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig { tolerance: DEFAULT_TOLERANCE, max_rounds: DEFAULT_MAX_ROUNDS, record_steps: Vec::new() }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tolerance > 0.0) || self.max_rounds == 0 {
            return Err(Error::InvalidParameter(alloc::format!(
                "tolerance must be positive and max_rounds at least 1, got {} / {}",
                self.tolerance,
                self.max_rounds
            )));
        }
        Ok(())
    }
}

/// Equities for every round `t = 0, 1, ..., t*`.
#[derive(Debug, Clone, PartialEq)]
pub struct EquityTrajectory {
    /// `equity[t][i]` is bank `i`'s equity after round `t`; `equity[0]` is
    /// the pre-shock equity and `equity[1]` the post-shock one.
    pub equity: Vec<Vec<f64>>,
    pub converged: bool,
}

impl EquityTrajectory {
    /// Index `t*` of the last recorded round.
    pub fn terminal_round(&self) -> usize {
        self.equity.len() - 1
    }

    /// Number of re-valuation rounds performed after the shock.
    pub fn iterations(&self) -> usize {
        self.equity.len() - 2
    }

    pub fn initial(&self) -> &[f64] {
        &self.equity[0]
    }

    pub fn shocked(&self) -> &[f64] {
        &self.equity[1]
    }

    pub fn terminal(&self) -> &[f64] {
        self.equity.last().unwrap()
    }

    /// Equity at round `t`; rounds past convergence return the terminal
    /// state.
    pub fn at(&self, t: usize) -> &[f64] {
        &self.equity[t.min(self.terminal_round())]
    }

    /// Aggregate contagion loss `H` at round `t` (`t >= 1`).
    pub fn h_at(&self, t: usize) -> f64 {
        aggregate_loss_h(self.initial(), self.shocked(), self.at(t))
    }

    pub fn h_terminal(&self) -> f64 {
        self.h_at(self.terminal_round())
    }
}

/// Mean relative equity loss caused by the re-valuation rounds alone:
/// `sum_i (E_i(1) - E_i(t)) / sum_j E_j(0)`.
pub fn aggregate_loss_h(equity0: &[f64], equity1: &[f64], equity_t: &[f64]) -> f64 {
    let total0: f64 = equity0.iter().sum();
    let lost: f64 = equity1.iter().zip(equity_t).map(|(a, b)| a - b).sum();
    lost / total0
}

/// Reusable iteration state for one run.
struct Dynamics<'a> {
    net: &'a InterbankNetwork,
    valuation: ValuationSpec,
    equity0: Vec<f64>,
    equity1: &'a [f64],
    defaulted: Vec<bool>,
    pinned: Option<usize>,
    scale: Vec<f64>,
    values: Vec<f64>,
}

impl<'a> Dynamics<'a> {
    fn new(net: &'a InterbankNetwork, state: &'a ShockedState, valuation: ValuationSpec) -> Result<Self> {
        let n = net.n();
        if state.sheets.len() != n {
            return Err(Error::LengthMismatch { expected: n, found: state.sheets.len() });
        }
        valuation.validate()?;
        let equity0: Vec<f64> = state.sheets.iter().map(|s| s.equity0).collect();
        let mean = if n == 0 { 0.0 } else { equity0.iter().sum::<f64>() / n as f64 };
        let floor = 1e-12 * mean;
        let scale = equity0.iter().map(|&e| e.max(floor)).collect();
        Ok(Dynamics {
            net,
            valuation,
            equity0,
            equity1: &state.equity1,
            defaulted: state.defaulted.clone(),
            pinned: state.pinned,
            scale,
            values: vec![0.0; n],
        })
    }

    /// One re-valuation round; returns the largest relative change.
    fn step(&mut self, current: &[f64], next: &mut [f64]) -> f64 {
        for (j, v) in self.values.iter_mut().enumerate() {
            *v = self.valuation.value(current[j], self.equity0[j], self.defaulted[j]);
        }
        let mut change: f64 = 0.0;
        for i in 0..next.len() {
            if self.pinned == Some(i) {
                next[i] = current[i];
                continue;
            }
            let (borrowers, amounts) = self.net.out_edges(i);
            let loss: f64 = borrowers.iter().zip(amounts).map(|(&j, &w)| w * (1.0 - self.values[j])).sum();
            next[i] = self.equity1[i] - loss;
            // default is absorbing
            if next[i] < 0.0 {
                self.defaulted[i] = true;
            }
            change = change.max((next[i] - current[i]).abs() / self.scale[i]);
        }
        change
    }
}

/// Runs the dynamics from a shocked state and records every round.
///
/// Hitting `max_rounds` is not an error: the trajectory comes back with
/// `converged == false`.
pub fn run(
    net: &InterbankNetwork,
    state: &ShockedState,
    valuation: ValuationSpec,
    cfg: &RunConfig,
) -> Result<EquityTrajectory> {
    cfg.validate()?;
    let mut dynamics = Dynamics::new(net, state, valuation)?;
    let mut equity = vec![dynamics.equity0.clone(), state.equity1.clone()];
    let mut converged = false;
    for _ in 0..cfg.max_rounds {
        let mut next = vec![0.0; net.n()];
        let change = dynamics.step(equity.last().unwrap(), &mut next);
        equity.push(next);
        if change < cfg.tolerance {
            converged = true;
            break;
        }
    }
    Ok(EquityTrajectory { equity, converged })
}

/// Final state of a run without the intermediate rounds.
#[derive(Debug, Clone, PartialEq)]
pub struct TerminalState {
    pub equity: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

/// Like [`run`] but keeps only the terminal equities.
pub fn run_terminal(
    net: &InterbankNetwork,
    state: &ShockedState,
    valuation: ValuationSpec,
    cfg: &RunConfig,
) -> Result<TerminalState> {
    cfg.validate()?;
    let mut dynamics = Dynamics::new(net, state, valuation)?;
    let mut current = state.equity1.clone();
    let mut next = vec![0.0; net.n()];
    let mut converged = false;
    let mut iterations = 0;
    while iterations < cfg.max_rounds {
        let change = dynamics.step(&current, &mut next);
        core::mem::swap(&mut current, &mut next);
        iterations += 1;
        if change < cfg.tolerance {
            converged = true;
            break;
        }
    }
    Ok(TerminalState { equity: current, iterations, converged })
}

/// Terminal equities of all `n` single-default scenarios on one network.
///
/// Both impact and vulnerability read from the same `n` runs.
#[derive(Debug, Clone, PartialEq)]
pub struct SingleDefaultCache {
    equity0: Vec<f64>,
    /// `terminal[j]` holds the terminal equities when bank `j` defaults.
    terminal: Vec<Vec<f64>>,
    pub all_converged: bool,
}

impl SingleDefaultCache {
    pub fn compute(
        net: &InterbankNetwork,
        sheets: &[BalanceSheet],
        valuation: ValuationSpec,
        cfg: &RunConfig,
    ) -> Result<Self> {
        let n = net.n();
        if n < 2 {
            return Err(Error::Degenerate("systemic relevance needs at least two banks".into()));
        }
        let mut terminal = Vec::with_capacity(n);
        let mut all_converged = true;
        for j in 0..n {
            let state = apply_shock(sheets, ShockSpec::DefaultOne { bank: j })?;
            let t = run_terminal(net, &state, valuation, cfg)?;
            all_converged &= t.converged;
            terminal.push(t.equity);
        }
        Ok(SingleDefaultCache { equity0: sheets.iter().map(|s| s.equity0).collect(), terminal, all_converged })
    }

    pub fn n(&self) -> usize {
        self.equity0.len()
    }

    /// Terminal equities when `bank` defaults.
    pub fn scenario(&self, bank: usize) -> &[f64] {
        &self.terminal[bank]
    }

    /// Relative equity lost by everyone else when `bank` defaults.
    pub fn impact(&self, bank: usize) -> f64 {
        let (mut num, mut den) = (0.0, 0.0);
        for (j, (&e, &e0)) in self.terminal[bank].iter().zip(&self.equity0).enumerate() {
            if j != bank {
                num += e;
                den += e0;
            }
        }
        1.0 - num / den
    }

    /// Average relative equity loss of `bank` over the defaults of every
    /// other bank.
    pub fn vulnerability(&self, bank: usize) -> f64 {
        let n = self.n();
        let e0 = self.equity0[bank];
        let total: f64 = (0..n).filter(|&j| j != bank).map(|j| 1.0 - self.terminal[j][bank] / e0).sum();
        total / (n - 1) as f64
    }

    pub fn relevance(&self) -> Relevance {
        let n = self.n();
        Relevance {
            impact: (0..n).map(|i| self.impact(i)).collect(),
            vulnerability: (0..n).map(|i| self.vulnerability(i)).collect(),
            all_converged: self.all_converged,
        }
    }
}

/// Per-bank impact and vulnerability.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Relevance {
    pub impact: Vec<f64>,
    pub vulnerability: Vec<f64>,
    pub all_converged: bool,
}

/// Impact of the default of `bank` on the rest of the system.
pub fn impact(
    net: &InterbankNetwork,
    sheets: &[BalanceSheet],
    bank: usize,
    valuation: ValuationSpec,
    cfg: &RunConfig,
) -> Result<f64> {
    let n = net.n();
    if n < 2 {
        return Err(Error::Degenerate("impact is undefined for a single bank".into()));
    }
    let state = apply_shock(sheets, ShockSpec::DefaultOne { bank })?;
    let t = run_terminal(net, &state, valuation, cfg)?;
    let (mut num, mut den) = (0.0, 0.0);
    for j in (0..n).filter(|&j| j != bank) {
        num += t.equity[j];
        den += sheets[j].equity0;
    }
    Ok(1.0 - num / den)
}

/// Vulnerability of `bank`, running all `n - 1` default scenarios.
pub fn vulnerability(
    net: &InterbankNetwork,
    sheets: &[BalanceSheet],
    bank: usize,
    valuation: ValuationSpec,
    cfg: &RunConfig,
) -> Result<f64> {
    let n = net.n();
    if n < 2 {
        return Err(Error::Degenerate("vulnerability is undefined for a single bank".into()));
    }
    if bank >= n {
        return Err(Error::UnknownBank(alloc::format!("#{bank}")));
    }
    let e0 = sheets[bank].equity0;
    let mut total = 0.0;
    for j in (0..n).filter(|&j| j != bank) {
        let state = apply_shock(sheets, ShockSpec::DefaultOne { bank: j })?;
        let t = run_terminal(net, &state, valuation, cfg)?;
        total += 1.0 - t.equity[bank] / e0;
    }
    Ok(total / (n - 1) as f64)
}
