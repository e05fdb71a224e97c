//! Flattens ledgers into long-format rows `scenario,seed,kind,metric,value`.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde_json::Value;

use crate::error::{CliError, Result};
use crate::ledger::{csv_table, read_ledger, Record};

#[derive(Clone, Debug, PartialEq)]
pub struct Row {
    pub scenario: String,
    pub seed: u64,
    pub kind: String,
    pub metric: String,
    pub value: String,
}

/// Every `*.jsonl` under `paths` (files are taken as given, directories are
/// walked), sorted by path.
pub fn collect_ledgers(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        walk(p, &mut out)?;
    }
    out.sort();
    out.dedup();
    Ok(out)
}

fn walk(p: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
    if p.is_file() {
        out.push(p.to_path_buf());
        return Ok(());
    }
    let entries = std::fs::read_dir(p).map_err(|source| CliError::Io { path: p.into(), source })?;
    for e in entries {
        let e = e.map_err(|source| CliError::Io { path: p.into(), source })?;
        let path = e.path();
        if path.is_dir() {
            walk(&path, out)?;
        } else if path.extension().is_some_and(|x| x == "jsonl") {
            out.push(path);
        }
    }
    Ok(())
}

fn flatten(prefix: &str, v: &Value, out: &mut Vec<(String, String)>) {
    let key = |k: &str| if prefix.is_empty() { k.to_string() } else { format!("{prefix}.{k}") };
    match v {
        Value::Object(m) => {
            for (k, x) in m {
                flatten(&key(k), x, out);
            }
        }
        Value::Array(a) if a.iter().all(|x| !x.is_object() && !x.is_array()) && a.len() <= 4 => {
            for (k, x) in a.iter().enumerate() {
                flatten(&key(&k.to_string()), x, out);
            }
        }
        // long arrays and tables of objects stay in the jsonl files
        Value::Array(_) => {}
        Value::Null => out.push((prefix.into(), "nan".into())),
        Value::String(s) => out.push((prefix.into(), s.clone())),
        other => out.push((prefix.into(), other.to_string())),
    }
}

/// Scalar metrics of the summary kinds, grouped by scenario. `snapshot`,
/// `identity_check` and `scenario` records are skipped except for a count.
pub fn rows(records: &[Record]) -> Vec<Row> {
    let mut grouped: BTreeMap<(String, u64), Vec<&Record>> = BTreeMap::new();
    for r in records {
        grouped.entry((r.scenario.clone(), r.seed)).or_default().push(r);
    }
    let mut out = Vec::new();
    for ((scenario, seed), recs) in grouped {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for r in &recs {
            *counts.entry(r.kind.as_str()).or_default() += 1;
            if matches!(r.kind.as_str(), "snapshot" | "identity_check" | "scenario") {
                continue;
            }
            let mut cells = Vec::new();
            flatten("", &r.data, &mut cells);
            for (metric, value) in cells {
                out.push(Row { scenario: scenario.clone(), seed, kind: r.kind.clone(), metric, value });
            }
        }
        for (kind, n) in counts {
            out.push(Row { scenario: scenario.clone(), seed, kind: kind.into(), metric: "records".into(), value: n.to_string() });
        }
    }
    out
}

/// Reads every ledger and returns the rows; an empty set is an error.
pub fn report(paths: &[PathBuf]) -> Result<Vec<Row>> {
    let mut records = Vec::new();
    for p in collect_ledgers(paths)? {
        records.extend(read_ledger(&p)?);
    }
    if records.is_empty() {
        return Err(CliError::EmptyLedgerSet);
    }
    Ok(rows(&records))
}

pub fn to_csv(rows: &[Row]) -> String {
    let cells: Vec<Vec<String>> = rows
        .iter()
        .map(|r| vec![r.scenario.clone(), r.seed.to_string(), r.kind.clone(), r.metric.clone(), quote(&r.value)])
        .collect();
    csv_table(&["scenario", "seed", "kind", "metric", "value"], &cells)
}

fn quote(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.into()
    }
}
