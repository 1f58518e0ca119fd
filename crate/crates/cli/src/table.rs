//! CSV tables with content hashes.

use std::path::Path;

use anyhow::Context;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Shortest round-trip representation; identical bits give identical text.
pub fn num(v: f64) -> String {
    format!("{v:?}")
}

pub fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub name: String,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(name: &str, header: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn file_name(&self) -> String {
        format!("{}.csv", self.name)
    }

    pub fn to_bytes(&self) -> anyhow::Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        Ok(w.into_inner().map_err(|e| anyhow::anyhow!("csv flush: {e}"))?)
    }

    pub fn write(&self, dir: &Path) -> anyhow::Result<OutputFile> {
        let bytes = self.to_bytes()?;
        let path = dir.join(self.file_name());
        std::fs::write(&path, &bytes).with_context(|| format!("writing {}", path.display()))?;
        Ok(OutputFile {
            file: self.file_name(),
            rows: self.rows.len(),
            sha256: sha256_hex(&bytes),
        })
    }
}

/// Reads a CSV written by [`Table::write`].
pub fn read_table(path: &Path) -> anyhow::Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
    let header = r.headers()?.iter().map(String::from).collect();
    let mut rows = Vec::new();
    for rec in r.records() {
        rows.push(rec?.iter().map(String::from).collect());
    }
    Ok((header, rows))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutputFile {
    pub file: String,
    pub rows: usize,
    pub sha256: String,
}

/// One row of `summary.csv`: an estimate (or plain value when `stderr` is
/// absent) with an optional reference such as a bound or envelope.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub kind: String,
    pub level: Option<usize>,
    pub quantity: String,
    pub mean: f64,
    pub stderr: Option<f64>,
    pub count: usize,
    pub reference: Option<f64>,
}

pub const SUMMARY_HEADER: [&str; 7] = ["kind", "level", "quantity", "mean", "stderr", "count", "reference"];

impl SummaryRow {
    pub fn to_record(&self) -> Vec<String> {
        vec![
            self.kind.clone(),
            self.level.map(|l| l.to_string()).unwrap_or_default(),
            self.quantity.clone(),
            num(self.mean),
            opt(self.stderr),
            self.count.to_string(),
            opt(self.reference),
        ]
    }

    pub fn from_record(r: &[String]) -> anyhow::Result<Self> {
        anyhow::ensure!(r.len() == 7, "summary row has {} fields, expected 7", r.len());
        let f = |s: &str| -> anyhow::Result<Option<f64>> {
            if s.is_empty() {
                Ok(None)
            } else {
                Ok(Some(s.parse::<f64>().with_context(|| format!("bad number `{s}`"))?))
            }
        };
        Ok(Self {
            kind: r[0].clone(),
            level: if r[1].is_empty() { None } else { Some(r[1].parse()?) },
            quantity: r[2].clone(),
            mean: f(&r[3])?.unwrap_or(f64::NAN),
            stderr: f(&r[4])?,
            count: r[5].parse()?,
            reference: f(&r[6])?,
        })
    }
}

pub fn summary_table(rows: &[SummaryRow]) -> Table {
    let mut t = Table::new("summary", &SUMMARY_HEADER);
    for r in rows {
        t.push(r.to_record());
    }
    t
}
