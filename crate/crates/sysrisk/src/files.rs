//! CSV formats.
//!
//! * edge list: `lender,borrower,amount`
//! * balance sheets: `bank,equity`
//! * equity calibration: `position,equity`
//!
//! Headers are required, column order is free, whitespace around fields is
//! ignored. Amounts are decimal floats.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use sysrisk_core::InterbankNetwork;

use crate::error::{CliError, CliResult};

/// One exposure as read from disk.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeRow {
    pub line: u64,
    pub lender: String,
    pub borrower: String,
    pub amount: f64,
}

struct Table {
    columns: Vec<usize>,
    rows: Vec<(u64, csv::StringRecord)>,
}

/// Maps byte offsets to 1-based physical line numbers; the CSV reader's
/// own line counter skips blank lines.
struct Lines<'a> {
    bytes: &'a [u8],
    starts: Vec<u64>,
}

impl<'a> Lines<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        let starts = std::iter::once(0)
            .chain(bytes.iter().enumerate().filter(|(_, &b)| b == b'\n').map(|(i, _)| i as u64 + 1))
            .collect();
        Lines { bytes, starts }
    }

    fn of(&self, pos: Option<&csv::Position>) -> u64 {
        let Some(p) = pos else { return 0 };
        // a record's offset can sit on the blank lines before it
        let mut at = p.byte() as usize;
        while matches!(self.bytes.get(at), Some(b'\n' | b'\r')) {
            at += 1;
        }
        self.starts.partition_point(|&s| s <= at as u64) as u64
    }
}

fn read_table(path: &Path, wanted: &[&str]) -> CliResult<Table> {
    let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
    let lines = Lines::new(&bytes);
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(bytes.as_slice());
    let headers = reader.headers().map_err(|e| csv_error(path, &lines, e))?.clone();
    let mut columns = Vec::with_capacity(wanted.len());
    for name in wanted {
        match headers.iter().position(|h| h.eq_ignore_ascii_case(name)) {
            Some(c) => columns.push(c),
            None => {
                return Err(CliError::Parse {
                    path: path.into(),
                    line: 1,
                    message: format!("missing column `{name}` (expected header {})", wanted.join(",")),
                })
            }
        }
    }
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| csv_error(path, &lines, e))?;
        let line = lines.of(rec.position());
        if rec.iter().all(|f| f.is_empty()) {
            continue;
        }
        rows.push((line, rec));
    }
    Ok(Table { columns, rows })
}

fn csv_error(path: &Path, lines: &Lines, e: csv::Error) -> CliError {
    let line = lines.of(e.position());
    match e.into_kind() {
        csv::ErrorKind::Io(io) => CliError::io(path, io),
        kind => CliError::Parse { path: path.into(), line, message: format!("{kind:?}") },
    }
}

fn field<'r>(path: &Path, line: u64, rec: &'r csv::StringRecord, col: usize, name: &str) -> CliResult<&'r str> {
    match rec.get(col) {
        Some(v) if !v.is_empty() => Ok(v),
        _ => Err(CliError::Parse { path: path.into(), line, message: format!("empty `{name}`") }),
    }
}

fn number(path: &Path, line: u64, raw: &str, name: &str) -> CliResult<f64> {
    raw.parse::<f64>().map_err(|_| CliError::Parse {
        path: path.into(),
        line,
        message: format!("`{name}` is not a number: {raw:?}"),
    })
}

/// Reads an edge list. Self-loops and non-positive or non-finite amounts
/// are hard errors naming the row; repeated pairs are kept as separate rows.
pub fn read_edges(path: &Path) -> CliResult<Vec<EdgeRow>> {
    let table = read_table(path, &["lender", "borrower", "amount"])?;
    let [cl, cb, ca] = table.columns[..] else { unreachable!() };
    table
        .rows
        .iter()
        .map(|(line, rec)| {
            let line = *line;
            let lender = field(path, line, rec, cl, "lender")?;
            let borrower = field(path, line, rec, cb, "borrower")?;
            let amount = number(path, line, field(path, line, rec, ca, "amount")?, "amount")?;
            if lender == borrower {
                return Err(CliError::Parse {
                    path: path.into(),
                    line,
                    message: format!("self-loop: `{lender}` lends to itself"),
                });
            }
            if !(amount > 0.0 && amount.is_finite()) {
                return Err(CliError::Parse {
                    path: path.into(),
                    line,
                    message: format!("amount must be positive and finite, got {amount}"),
                });
            }
            Ok(EdgeRow { line, lender: lender.to_string(), borrower: borrower.to_string(), amount })
        })
        .collect()
}

/// Reads `bank,equity`; each bank may appear once and equity must be
/// positive.
pub fn read_sheets(path: &Path) -> CliResult<BTreeMap<String, f64>> {
    let table = read_table(path, &["bank", "equity"])?;
    let [cb, ce] = table.columns[..] else { unreachable!() };
    let mut out = BTreeMap::new();
    for (line, rec) in &table.rows {
        let line = *line;
        let bank = field(path, line, rec, cb, "bank")?;
        let equity = number(path, line, field(path, line, rec, ce, "equity")?, "equity")?;
        if !(equity > 0.0 && equity.is_finite()) {
            return Err(CliError::Parse {
                path: path.into(),
                line,
                message: format!("equity of `{bank}` must be positive, got {equity}"),
            });
        }
        if out.insert(bank.to_string(), equity).is_some() {
            return Err(CliError::Parse { path: path.into(), line, message: format!("bank `{bank}` listed twice") });
        }
    }
    Ok(out)
}

/// Reads `position,equity` calibration pairs.
pub fn read_calibration(path: &Path) -> CliResult<Vec<(f64, f64)>> {
    let table = read_table(path, &["position", "equity"])?;
    let [cp, ce] = table.columns[..] else { unreachable!() };
    table
        .rows
        .iter()
        .map(|(line, rec)| {
            let line = *line;
            let p = number(path, line, field(path, line, rec, cp, "position")?, "position")?;
            let e = number(path, line, field(path, line, rec, ce, "equity")?, "equity")?;
            if !(p > 0.0 && e > 0.0 && p.is_finite() && e.is_finite()) {
                return Err(CliError::Parse {
                    path: path.into(),
                    line,
                    message: format!("position and equity must be positive, got ({p}, {e})"),
                });
            }
            Ok((p, e))
        })
        .collect()
}

/// Shortest decimal text that reads back to the same float.
pub fn fmt_f64(x: f64) -> String {
    format!("{x}")
}

pub fn fmt_opt(x: Option<f64>) -> String {
    x.map(fmt_f64).unwrap_or_default()
}

/// Buffers CSV rows and writes them in one go.
pub struct CsvOut {
    writer: csv::Writer<Vec<u8>>,
}

impl CsvOut {
    pub fn new(header: &[&str]) -> Self {
        let mut writer = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        writer.write_record(header).expect("writing to memory");
        CsvOut { writer }
    }

    pub fn row<I, S>(&mut self, fields: I)
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.writer.write_record(fields).expect("writing to memory");
    }

    pub fn into_bytes(self) -> Vec<u8> {
        self.writer.into_inner().expect("flushing to memory")
    }

    pub fn save(self, path: &Path) -> CliResult<()> {
        let bytes = self.into_bytes();
        fs::write(path, bytes).map_err(|e| CliError::io(path, e))
    }
}

pub fn edges_csv(net: &InterbankNetwork) -> CsvOut {
    let banks = net.banks();
    let mut out = CsvOut::new(&["lender", "borrower", "amount"]);
    for (i, j, w) in net.edges() {
        out.row([banks.label(i), banks.label(j), &fmt_f64(w)]);
    }
    out
}

pub fn sheets_csv(labels: &[String], equity: &[f64]) -> CsvOut {
    let mut out = CsvOut::new(&["bank", "equity"]);
    for (l, e) in labels.iter().zip(equity) {
        out.row([l.as_str(), &fmt_f64(*e)]);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn temp(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f
    }

    #[test]
    fn edges_parse_with_free_column_order() {
        let f = temp("amount, borrower ,lender\n3,B,A\n\n2.5,C,A\n");
        let rows = read_edges(f.path()).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[0].lender, "A");
        assert_eq!(rows[1].amount, 2.5);
        assert_eq!(rows[1].line, 4);
    }

    #[test]
    fn self_loop_names_the_row() {
        let f = temp("lender,borrower,amount\nA,B,1\nC,C,2\n");
        let err = read_edges(f.path()).unwrap_err();
        match &err {
            CliError::Parse { line, message, .. } => {
                assert_eq!(*line, 3);
                assert!(message.contains("self-loop"), "{message}");
            }
            other => panic!("{other:?}"),
        }
        assert_eq!(err.exit_code(), crate::error::exit::VALIDATION);
    }

    #[test]
    fn bad_numbers_and_headers() {
        let f = temp("lender,borrower,amount\nA,B,x\n");
        assert!(matches!(read_edges(f.path()), Err(CliError::Parse { line: 2, .. })));
        let f = temp("lender,borrower,amount\nA,B,-1\n");
        assert!(matches!(read_edges(f.path()), Err(CliError::Parse { line: 2, .. })));
        let f = temp("from,to,amount\nA,B,1\n");
        assert!(matches!(read_edges(f.path()), Err(CliError::Parse { line: 1, .. })));
        let f = temp("bank,equity\nA,1\nA,2\n");
        assert!(matches!(read_sheets(f.path()), Err(CliError::Parse { line: 3, .. })));
        let f = temp("bank,equity\nA,0\n");
        assert!(read_sheets(f.path()).is_err());
        assert!(matches!(read_edges(Path::new("/definitely/not/here.csv")), Err(CliError::Io { .. })));
    }

    #[test]
    fn floats_round_trip_through_text() {
        for x in [0.1, 1.0 / 3.0, 1e-300, 12345.678, 5e20] {
            assert_eq!(fmt_f64(x).parse::<f64>().unwrap(), x);
        }
    }
}
