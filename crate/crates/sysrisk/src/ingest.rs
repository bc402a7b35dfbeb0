//! From files on disk to a validated snapshot.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sysrisk_core::equity::{fit_log_regression, impute_equity, RegressionFit};
use sysrisk_core::sdecm::SdecmParams;
use sysrisk_core::{derive_balance_sheets, validate, BalanceSheet, InterbankNetwork, NetworkBuilder};

use crate::error::{CliError, CliResult};
use crate::files;

/// Where equity comes from: a balance-sheet file, a regression, or both
/// (the regression then fills banks missing from the file).
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct EquitySource {
    pub sheets: Option<PathBuf>,
    /// `position,equity` pairs to fit the regression on.
    pub calibration: Option<PathBuf>,
    /// Regression coefficients given directly (natural logs).
    pub intercept: Option<f64>,
    pub slope: Option<f64>,
}

impl EquitySource {
    pub fn regression(&self) -> CliResult<Option<RegressionFit>> {
        match (&self.calibration, self.slope) {
            (Some(_), Some(_)) => Err(CliError::Usage("give either a calibration file or a slope, not both".into())),
            (Some(path), None) => {
                let pairs = files::read_calibration(path)?;
                Ok(Some(fit_log_regression(&pairs)?))
            }
            (None, Some(slope)) => Ok(Some(RegressionFit::from_coefficients(self.intercept.unwrap_or(0.0), slope))),
            (None, None) if self.intercept.is_some() => Err(CliError::Usage("an intercept needs a slope".into())),
            (None, None) => Ok(None),
        }
    }

    pub fn files(&self) -> Vec<&Path> {
        self.sheets.iter().chain(&self.calibration).map(PathBuf::as_path).collect()
    }
}

/// A network with consistent balance sheets.
#[derive(Debug, Clone)]
pub struct Snapshot {
    pub network: InterbankNetwork,
    pub equity: Vec<f64>,
    pub sheets: Vec<BalanceSheet>,
    /// Which banks had their equity imputed.
    pub imputed: Vec<bool>,
    pub regression: Option<RegressionFit>,
}

impl Snapshot {
    pub fn labels(&self) -> &[String] {
        self.network.banks().labels()
    }
}

/// Reads the edge list, sums repeated pairs, attaches equity and validates.
///
/// Banks that appear only in the balance-sheet file are kept as isolated
/// nodes.
pub fn ingest(edges: &Path, source: &EquitySource) -> CliResult<Snapshot> {
    let rows = files::read_edges(edges)?;
    let given = match &source.sheets {
        Some(p) => Some(files::read_sheets(p)?),
        None => None,
    };
    let regression = source.regression()?;
    if given.is_none() && regression.is_none() {
        return Err(CliError::Usage(
            "no equity source: give a balance-sheet file, a calibration file or a slope".into(),
        ));
    }

    let mut builder = NetworkBuilder::new();
    for r in &rows {
        builder.add_exposure(&r.lender, &r.borrower, r.amount).map_err(|e| CliError::Parse {
            path: edges.into(),
            line: r.line,
            message: e.to_string(),
        })?;
    }
    if let Some(map) = &given {
        for bank in map.keys() {
            builder.add_bank(bank);
        }
    }
    let network = builder.build();
    if network.n() == 0 {
        return Err(CliError::Validation(format!("{}: no banks", edges.display())));
    }

    let margins = network.margins();
    let mut equity = Vec::with_capacity(network.n());
    let mut imputed = Vec::with_capacity(network.n());
    for (i, label) in network.banks().labels().iter().enumerate() {
        if let Some(&e) = given.as_ref().and_then(|m| m.get(label)) {
            equity.push(e);
            imputed.push(false);
        } else if let Some(fit) = &regression {
            let e = impute_equity(fit, margins.s_in[i], margins.s_out[i]).map_err(|_| {
                CliError::Validation(format!("bank `{label}` has no interbank position to impute equity from"))
            })?;
            equity.push(e);
            imputed.push(true);
        } else {
            return Err(CliError::Validation(format!(
                "bank `{label}` has exposures but no equity (not in the balance-sheet file and no regression given)"
            )));
        }
    }

    let sheets = derive_balance_sheets(&network, &equity)?;
    let problems = validate(&network, &sheets);
    if !problems.is_empty() {
        return Err(CliError::Validation(format!("{problems:?}")));
    }
    Ok(Snapshot { network, equity, sheets, imputed, regression })
}

pub fn load_params(path: &Path) -> CliResult<SdecmParams> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let params: SdecmParams =
        serde_json::from_str(&text).map_err(|e| CliError::Format { path: path.into(), message: e.to_string() })?;
    params.validate()?;
    Ok(params)
}

pub fn params_json(params: &SdecmParams) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(params).expect("params serialize");
    bytes.push(b'\n');
    bytes
}
