//! JSON-lines ledgers and CSV tables.
//!
//! Every ledger line is one [`Record`]:
//!
//! ```json
//! {"scenario":"reference","seed":42,"kind":"snapshot","data":{...}}
//! ```
//!
//! Floats are written with 17 significant digits; non-finite values become
//! `null`. Record kinds: `scenario`, `affine_summary`, `frame_bounds`,
//! `eulerian`, `run_header`, `snapshot`, `run_summary`, `lagrangian`,
//! `identity_check`, `identity_summary`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::ser::Formatter;
use serde_json::Value;

use crate::error::{CliError, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub scenario: String,
    pub seed: u64,
    pub kind: String,
    pub data: Value,
}

/// `serde_json` formatter printing every `f64` as `{:.16e}`.
#[derive(Clone, Copy, Debug, Default)]
pub struct SeventeenDigits;

impl Formatter for SeventeenDigits {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> std::io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> std::io::Result<()> {
        self.write_f64(writer, value as f64)
    }
}

/// One line of JSON, no trailing newline.
pub fn to_line<T: Serialize>(value: &T) -> String {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, SeventeenDigits);
    value.serialize(&mut ser).expect("ledger values serialise");
    String::from_utf8(buf).expect("json is utf-8")
}

/// `{:.16e}` for CSV cells.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        format!("{v}")
    }
}

pub struct LedgerWriter {
    path: PathBuf,
    out: BufWriter<File>,
    scenario: String,
    seed: u64,
}

impl LedgerWriter {
    pub fn create(path: &Path, scenario: &str, seed: u64) -> Result<Self> {
        let file = File::create(path).map_err(|source| CliError::Io { path: path.into(), source })?;
        Ok(Self { path: path.into(), out: BufWriter::new(file), scenario: scenario.into(), seed })
    }

    pub fn write<T: Serialize>(&mut self, kind: &str, data: &T) -> Result<()> {
        let data = serde_json::to_value(data).expect("ledger values serialise");
        let rec = Record { scenario: self.scenario.clone(), seed: self.seed, kind: kind.into(), data };
        writeln!(self.out, "{}", to_line(&rec)).map_err(|source| CliError::Io { path: self.path.clone(), source })
    }

    pub fn finish(mut self) -> Result<PathBuf> {
        self.out.flush().map_err(|source| CliError::Io { path: self.path.clone(), source })?;
        Ok(self.path)
    }
}

/// Parses a ledger file; blank lines are skipped, anything else must be a
/// [`Record`].
pub fn read_ledger(path: &Path) -> Result<Vec<Record>> {
    let file = File::open(path).map_err(|source| CliError::Io { path: path.into(), source })?;
    let mut out = Vec::new();
    for (k, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|source| CliError::Io { path: path.into(), source })?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record = serde_json::from_str(&line)
            .map_err(|e| CliError::LedgerCorrupt { path: path.into(), line: k + 1, reason: e.to_string() })?;
        out.push(rec);
    }
    Ok(out)
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|source| CliError::Io { path: path.into(), source })
}

/// CSV with the given header; cells are already formatted.
pub fn csv_table(header: &[&str], rows: &[Vec<String>]) -> String {
    let mut s = header.join(",");
    s.push('\n');
    for r in rows {
        s.push_str(&r.join(","));
        s.push('\n');
    }
    s
}
