//! Interbank exposure networks and the balance sheets attached to them.
//!
//! Banks are addressed by a dense index `0..n`. Indices follow the
//! lexicographic order of the bank labels, so two networks built from the
//! same edge set get the same indexing whatever the insertion order.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::sync::Arc;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Relative tolerance used when checking the balance-sheet identity.
pub const IDENTITY_RTOL: f64 = 1e-9;

/// The set of banks in a snapshot, with a label lookup table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Banks {
    labels: Vec<String>,
    index: BTreeMap<String, usize>,
}

impl Banks {
    /// Builds the bank set from labels; duplicates collapse and indices
    /// follow the sorted label order.
    pub fn new<I, S>(labels: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let index: BTreeMap<String, usize> = labels
            .into_iter()
            .map(|l| (l.into(), 0))
            .collect::<BTreeMap<_, _>>()
            .into_keys()
            .enumerate()
            .map(|(i, l)| (l, i))
            .collect();
        let labels = index.keys().cloned().collect();
        Banks { labels, index }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn label(&self, i: usize) -> &str {
        &self.labels[i]
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.index.get(label).copied()
    }

    pub fn require(&self, label: &str) -> Result<usize> {
        self.index_of(label).ok_or_else(|| Error::UnknownBank(label.to_string()))
    }
}

/// A directed weighted exposure network. `(lender, borrower, amount)` means
/// the lender has lent `amount` to the borrower.
///
/// Stored as compressed rows over lenders with borrowers sorted inside each
/// row. Adjacency is implied by the presence of an entry.
#[derive(Debug, Clone, PartialEq)]
pub struct InterbankNetwork {
    banks: Arc<Banks>,
    offsets: Vec<usize>,
    borrowers: Vec<usize>,
    amounts: Vec<f64>,
}

impl InterbankNetwork {
    /// Builds a network over an existing bank set from indexed edges.
    ///
    /// Parallel edges are summed. Self-loops and non-positive or non-finite
    /// amounts are rejected.
    pub fn from_indexed<I>(banks: Arc<Banks>, edges: I) -> Result<Self>
    where
        I: IntoIterator<Item = (usize, usize, f64)>,
    {
        let n = banks.len();
        let mut checked = Vec::new();
        for (i, j, w) in edges {
            if i >= n || j >= n {
                return Err(Error::InvalidParameter(alloc::format!("edge ({i}, {j}) out of range for {n} banks")));
            }
            if i == j {
                return Err(Error::SelfLoop(banks.label(i).to_string()));
            }
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::InvalidAmount {
                    lender: banks.label(i).to_string(),
                    borrower: banks.label(j).to_string(),
                    amount: w,
                });
            }
            checked.push((i, j, w));
        }
        Ok(Self::assemble(banks, checked))
    }

    /// Builds a network without rejecting self-loops or bad amounts. Meant
    /// for loading raw data that is then passed to [`validate`].
    pub fn from_indexed_unchecked<I>(banks: Arc<Banks>, edges: I) -> Self
    where
        I: IntoIterator<Item = (usize, usize, f64)>,
    {
        Self::assemble(banks, edges.into_iter().collect())
    }

    fn assemble(banks: Arc<Banks>, mut edges: Vec<(usize, usize, f64)>) -> Self {
        let n = banks.len();
        edges.sort_by(|a, b| (a.0, a.1).cmp(&(b.0, b.1)));
        let mut offsets = Vec::with_capacity(n + 1);
        let mut borrowers = Vec::with_capacity(edges.len());
        let mut amounts: Vec<f64> = Vec::with_capacity(edges.len());
        let mut last: Option<(usize, usize)> = None;
        let mut row = 0;
        offsets.push(0);
        for (i, j, w) in edges {
            while row < i {
                offsets.push(borrowers.len());
                row += 1;
            }
            if last == Some((i, j)) {
                *amounts.last_mut().unwrap() += w;
            } else {
                borrowers.push(j);
                amounts.push(w);
                last = Some((i, j));
            }
        }
        while row < n {
            offsets.push(borrowers.len());
            row += 1;
        }
        InterbankNetwork { banks, offsets, borrowers, amounts }
    }

    /// A network with the given banks and no exposures.
    pub fn empty(banks: Arc<Banks>) -> Self {
        Self::assemble(banks, Vec::new())
    }

    pub fn n(&self) -> usize {
        self.banks.len()
    }

    pub fn banks(&self) -> &Arc<Banks> {
        &self.banks
    }

    pub fn link_count(&self) -> usize {
        self.borrowers.len()
    }

    pub fn total_volume(&self) -> f64 {
        self.amounts.iter().sum()
    }

    /// Borrowers of `lender` and the amounts lent to each.
    pub fn out_edges(&self, lender: usize) -> (&[usize], &[f64]) {
        let (a, b) = (self.offsets[lender], self.offsets[lender + 1]);
        (&self.borrowers[a..b], &self.amounts[a..b])
    }

    /// Exposure of `lender` to `borrower`, zero when absent.
    pub fn exposure(&self, lender: usize, borrower: usize) -> f64 {
        let (bs, ws) = self.out_edges(lender);
        match bs.binary_search(&borrower) {
            Ok(k) => ws[k],
            Err(_) => 0.0,
        }
    }

    pub fn has_link(&self, lender: usize, borrower: usize) -> bool {
        self.out_edges(lender).0.binary_search(&borrower).is_ok()
    }

    /// All edges in (lender, borrower) order.
    pub fn edges(&self) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
        (0..self.n()).flat_map(move |i| {
            let (bs, ws) = self.out_edges(i);
            bs.iter().zip(ws).map(move |(&j, &w)| (i, j, w))
        })
    }

    pub fn margins(&self) -> NodeMargins {
        compute_margins(self)
    }

    /// Same topology with every exposure multiplied by `factor`.
    pub fn scaled(&self, factor: f64) -> Self {
        let mut out = self.clone();
        out.amounts.iter_mut().for_each(|w| *w *= factor);
        out
    }
}

/// Incrementally collects labelled exposures, summing repeated loans
/// between the same ordered pair.
#[derive(Debug, Default, Clone)]
pub struct NetworkBuilder {
    labels: Vec<String>,
    edges: Vec<(String, String, f64)>,
}

impl NetworkBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a bank, so it is kept even without any exposure.
    pub fn add_bank(&mut self, label: &str) -> &mut Self {
        self.labels.push(label.to_string());
        self
    }

    pub fn add_exposure(&mut self, lender: &str, borrower: &str, amount: f64) -> Result<&mut Self> {
        if lender == borrower {
            return Err(Error::SelfLoop(lender.to_string()));
        }
        if !(amount > 0.0 && amount.is_finite()) {
            return Err(Error::InvalidAmount { lender: lender.to_string(), borrower: borrower.to_string(), amount });
        }
        self.labels.push(lender.to_string());
        self.labels.push(borrower.to_string());
        self.edges.push((lender.to_string(), borrower.to_string(), amount));
        Ok(self)
    }

    pub fn build(&self) -> InterbankNetwork {
        let banks = Arc::new(Banks::new(self.labels.iter().cloned()));
        let edges: Vec<_> =
            self.edges.iter().map(|(l, b, w)| (banks.index_of(l).unwrap(), banks.index_of(b).unwrap(), *w)).collect();
        InterbankNetwork::assemble(banks, edges)
    }
}

/// Degrees and strengths of every bank.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeMargins {
    /// Number of borrowers of each bank.
    pub k_out: Vec<usize>,
    /// Number of lenders of each bank.
    pub k_in: Vec<usize>,
    /// Total amount lent.
    pub s_out: Vec<f64>,
    /// Total amount borrowed.
    pub s_in: Vec<f64>,
}

impl NodeMargins {
    pub fn zeros(n: usize) -> Self {
        NodeMargins {
            k_out: alloc::vec![0; n],
            k_in: alloc::vec![0; n],
            s_out: alloc::vec![0.0; n],
            s_in: alloc::vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.k_out.len()
    }

    pub fn is_empty(&self) -> bool {
        self.k_out.is_empty()
    }
}

/// Row and column counts and sums of the exposure matrix.
pub fn compute_margins(net: &InterbankNetwork) -> NodeMargins {
    let mut m = NodeMargins::zeros(net.n());
    for (i, j, w) in net.edges() {
        m.k_out[i] += 1;
        m.k_in[j] += 1;
        m.s_out[i] += w;
        m.s_in[j] += w;
    }
    m
}

/// Balance sheet of a single bank: `s_out + net_external = s_in + equity0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BalanceSheet {
    pub equity0: f64,
    pub net_external: f64,
    pub s_in: f64,
    pub s_out: f64,
}

impl BalanceSheet {
    /// `s_out + N - s_in - E`, zero for a consistent sheet.
    pub fn identity_gap(&self) -> f64 {
        self.s_out + self.net_external - self.s_in - self.equity0
    }

    pub fn identity_holds(&self) -> bool {
        let scale = self.s_out.abs().max(self.net_external.abs()).max(self.s_in.abs()).max(self.equity0.abs());
        self.identity_gap().abs() <= IDENTITY_RTOL * scale
    }
}

/// Balance sheets with the net external assets taken as the residual of
/// the accounting identity. `equity` is indexed like the network.
pub fn derive_balance_sheets(net: &InterbankNetwork, equity: &[f64]) -> Result<Vec<BalanceSheet>> {
    if equity.len() != net.n() {
        return Err(Error::LengthMismatch { expected: net.n(), found: equity.len() });
    }
    let m = net.margins();
    equity
        .iter()
        .enumerate()
        .map(|(i, &e)| {
            if !(e > 0.0 && e.is_finite()) {
                return Err(Error::NonPositiveEquity { bank: net.banks().label(i).to_string(), equity: e });
            }
            Ok(BalanceSheet {
                equity0: e,
                net_external: m.s_in[i] + e - m.s_out[i],
                s_in: m.s_in[i],
                s_out: m.s_out[i],
            })
        })
        .collect()
}

/// Same as [`derive_balance_sheets`] with equity looked up by bank label.
pub fn derive_balance_sheets_by_label(
    net: &InterbankNetwork,
    equity: &BTreeMap<String, f64>,
) -> Result<Vec<BalanceSheet>> {
    let values = net
        .banks()
        .labels()
        .iter()
        .map(|l| equity.get(l).copied().ok_or_else(|| Error::MissingEquity(l.clone())))
        .collect::<Result<Vec<_>>>()?;
    derive_balance_sheets(net, &values)
}

/// A problem found by [`validate`].
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    SelfLoop {
        bank: String,
        amount: f64,
    },
    NonPositiveWeight {
        lender: String,
        borrower: String,
        amount: f64,
    },
    NonPositiveEquity {
        bank: String,
        equity: f64,
    },
    Identity {
        bank: String,
        gap: f64,
    },
    /// Sheet strengths disagree with the network margins.
    MarginMismatch {
        bank: String,
        sheet_s_in: f64,
        sheet_s_out: f64,
        s_in: f64,
        s_out: f64,
    },
    SheetCount {
        expected: usize,
        found: usize,
    },
}

/// Diagnostics over a snapshot; an empty list means it is valid.
pub fn validate(net: &InterbankNetwork, sheets: &[BalanceSheet]) -> Vec<Violation> {
    let banks = net.banks();
    let mut out = Vec::new();
    for (i, j, w) in net.edges() {
        if i == j {
            out.push(Violation::SelfLoop { bank: banks.label(i).to_string(), amount: w });
        } else if !(w > 0.0 && w.is_finite()) {
            out.push(Violation::NonPositiveWeight {
                lender: banks.label(i).to_string(),
                borrower: banks.label(j).to_string(),
                amount: w,
            });
        }
    }
    if sheets.len() != net.n() {
        out.push(Violation::SheetCount { expected: net.n(), found: sheets.len() });
        return out;
    }
    let m = net.margins();
    for (i, sheet) in sheets.iter().enumerate() {
        let bank = banks.label(i);
        if !(sheet.equity0 > 0.0) {
            out.push(Violation::NonPositiveEquity { bank: bank.to_string(), equity: sheet.equity0 });
        }
        if !sheet.identity_holds() {
            out.push(Violation::Identity { bank: bank.to_string(), gap: sheet.identity_gap() });
        }
        let tol = |a: f64, b: f64| (a - b).abs() <= IDENTITY_RTOL * a.abs().max(b.abs());
        if !tol(sheet.s_in, m.s_in[i]) || !tol(sheet.s_out, m.s_out[i]) {
            out.push(Violation::MarginMismatch {
                bank: bank.to_string(),
                sheet_s_in: sheet.s_in,
                sheet_s_out: sheet.s_out,
                s_in: m.s_in[i],
                s_out: m.s_out[i],
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    fn two_bank() -> InterbankNetwork {
        let mut b = NetworkBuilder::new();
        b.add_exposure("1", "2", 5.0).unwrap();
        b.build()
    }

    #[test]
    fn single_edge_margins() {
        let net = two_bank();
        let m = net.margins();
        assert_eq!(m.k_out, vec![1, 0]);
        assert_eq!(m.k_in, vec![0, 1]);
        assert_eq!(m.s_out, vec![5.0, 0.0]);
        assert_eq!(m.s_in, vec![0.0, 5.0]);
    }

    #[test]
    fn empty_network_margins() {
        let net = InterbankNetwork::empty(Arc::new(Banks::new(["a", "b", "c"])));
        assert_eq!(net.margins(), NodeMargins::zeros(3));
    }

    #[test]
    fn ring_margins() {
        let mut b = NetworkBuilder::new();
        b.add_exposure("1", "2", 1.0).unwrap();
        b.add_exposure("2", "3", 1.0).unwrap();
        b.add_exposure("3", "1", 1.0).unwrap();
        let m = b.build().margins();
        assert_eq!(m.k_out, vec![1; 3]);
        assert_eq!(m.k_in, vec![1; 3]);
        assert_eq!(m.s_out, vec![1.0; 3]);
        assert_eq!(m.s_in, vec![1.0; 3]);
    }

    #[test]
    fn parallel_loans_are_summed() {
        let mut b = NetworkBuilder::new();
        b.add_exposure("a", "b", 3.0).unwrap();
        b.add_exposure("a", "b", 2.0).unwrap();
        let net = b.build();
        assert_eq!(net.link_count(), 1);
        assert_eq!(net.exposure(0, 1), 5.0);
    }

    #[test]
    fn builder_rejects_self_loop_and_bad_amounts() {
        let mut b = NetworkBuilder::new();
        assert_eq!(b.add_exposure("a", "a", 1.0).unwrap_err(), Error::SelfLoop("a".into()));
        assert!(b.add_exposure("a", "b", 0.0).is_err());
        assert!(b.add_exposure("a", "b", -1.0).is_err());
        assert!(b.add_exposure("a", "b", f64::NAN).is_err());
    }

    #[test]
    fn balance_sheet_residual() {
        // bank "a" lends 4 to "b" and borrows 10 from "c"
        let mut b = NetworkBuilder::new();
        b.add_exposure("a", "b", 4.0).unwrap();
        b.add_exposure("c", "a", 10.0).unwrap();
        b.add_bank("z");
        let net = b.build();
        let sheets = derive_balance_sheets(&net, &[3.0, 1.0, 2.0, 1.0]).unwrap();
        assert_eq!(sheets[0].net_external, 9.0);
        // isolated bank
        assert_eq!(sheets[3].net_external, 1.0);
        // "c": s_in = 0, s_out = 10, E = 2
        assert_eq!(sheets[2].net_external, -8.0);
        assert!(validate(&net, &sheets).is_empty());
    }

    #[test]
    fn negative_net_external_is_allowed() {
        let mut b = NetworkBuilder::new();
        b.add_exposure("a", "b", 8.0).unwrap();
        let net = b.build();
        let sheets = derive_balance_sheets(&net, &[2.0, 1.0]).unwrap();
        assert_eq!(sheets[0].net_external, -6.0);
        assert!(sheets[0].identity_holds());
    }

    #[test]
    fn missing_and_nonpositive_equity() {
        let net = two_bank();
        let mut eq = BTreeMap::new();
        eq.insert("1".to_string(), 1.0);
        assert_eq!(derive_balance_sheets_by_label(&net, &eq).unwrap_err(), Error::MissingEquity("2".into()));
        assert!(matches!(derive_balance_sheets(&net, &[1.0, 0.0]), Err(Error::NonPositiveEquity { .. })));
    }

    #[test]
    fn validate_reports_injected_problems() {
        let banks = Arc::new(Banks::new(["1", "2"]));
        let net = InterbankNetwork::from_indexed_unchecked(banks.clone(), [(0, 0, 1.0), (0, 1, 5.0)]);
        let sheets = vec![
            BalanceSheet { equity0: 1.0, net_external: -4.0, s_in: 1.0, s_out: 6.0 },
            BalanceSheet { equity0: 1.0, net_external: 6.0, s_in: 5.0, s_out: 0.0 },
        ];
        let v = validate(&net, &sheets);
        assert_eq!(v.len(), 1, "{v:?}");
        assert!(matches!(v[0], Violation::SelfLoop { .. }));

        let net = two_bank();
        let mut sheets = derive_balance_sheets(&net, &[1.0, 1.0]).unwrap();
        sheets[1].equity0 = 0.0;
        sheets[1].net_external = sheets[1].s_in - sheets[1].s_out;
        let v = validate(&net, &sheets);
        assert_eq!(v, vec![Violation::NonPositiveEquity { bank: "2".into(), equity: 0.0 }]);
    }

    #[test]
    fn checked_constructor_rejects_self_loops() {
        let banks = Arc::new(Banks::new(["1", "2"]));
        assert!(InterbankNetwork::from_indexed(banks, [(1, 1, 2.0)]).is_err());
    }
}
