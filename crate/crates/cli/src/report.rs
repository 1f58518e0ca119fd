//! Cross-experiment summary. Rows from repeated runs of one experiment
//! (same config apart from seed and output) are pooled.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use anyhow::bail;
use homlab_core::Estimate;

use crate::manifest::Manifest;
use crate::table::{num, opt, read_table, SummaryRow, Table, SUMMARY_HEADER};

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub kind: String,
    pub level: Option<usize>,
    pub quantity: String,
    pub mean: f64,
    pub stderr: Option<f64>,
    pub count: usize,
    pub reference: Option<f64>,
    pub runs: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub rows: Vec<ReportRow>,
}

#[derive(Debug)]
pub struct IntegrityError {
    pub files: Vec<(String, String)>,
}

impl std::fmt::Display for IntegrityError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "hash mismatch in {} file(s):", self.files.len())?;
        for (file, why) in &self.files {
            writeln!(f, "  {file}: {why}")?;
        }
        Ok(())
    }
}

impl std::error::Error for IntegrityError {}

fn pool_rows(rows: &[&SummaryRow]) -> (f64, Option<f64>, usize) {
    let count: usize = rows.iter().map(|r| r.count).sum();
    if rows.len() == 1 {
        return (rows[0].mean, rows[0].stderr, rows[0].count);
    }
    if rows.iter().all(|r| r.stderr.is_some() && r.count >= 2) {
        let mut acc = Estimate {
            mean: rows[0].mean,
            stderr: rows[0].stderr.unwrap_or(0.0),
            count: rows[0].count,
            seed: 0,
        };
        for r in &rows[1..] {
            acc = acc.pool(&Estimate {
                mean: r.mean,
                stderr: r.stderr.unwrap_or(0.0),
                count: r.count,
                seed: 0,
            });
        }
        (acc.mean, Some(acc.stderr), acc.count)
    } else {
        let w: f64 = rows.iter().map(|r| r.count as f64 * r.mean).sum();
        (w / count as f64, None, count)
    }
}

/// Verifies every manifest's outputs and merges their summaries.
pub fn report(manifests: &[PathBuf]) -> anyhow::Result<Report> {
    if manifests.is_empty() {
        bail!("no manifests given");
    }
    let mut bad = Vec::new();
    let mut loaded = Vec::new();
    for p in manifests {
        let m = Manifest::read(p)?;
        let dir = p.parent().map(Path::to_path_buf).unwrap_or_default();
        if let Err(e) = m.loaded_config() {
            bad.push((p.display().to_string(), e.to_string()));
        }
        bad.extend(m.verify_outputs(&dir));
        loaded.push((m, dir));
    }
    if !bad.is_empty() {
        return Err(IntegrityError { files: bad }.into());
    }
    // (experiment, kind, level, quantity) -> rows, in first-seen order
    let mut order = Vec::new();
    let mut groups: BTreeMap<(String, String, Option<usize>, String), Vec<SummaryRow>> = BTreeMap::new();
    for (m, dir) in &loaded {
        let (header, rows) = read_table(&dir.join("summary.csv"))?;
        if header != SUMMARY_HEADER {
            bail!("{}: unexpected summary header", dir.display());
        }
        for r in rows {
            let s = SummaryRow::from_record(&r)?;
            let key = (m.experiment_key.clone(), s.kind.clone(), s.level, s.quantity.clone());
            if !groups.contains_key(&key) {
                order.push(key.clone());
            }
            groups.entry(key).or_default().push(s);
        }
    }
    let rows = order
        .iter()
        .map(|k| {
            let g = &groups[k];
            let refs: Vec<&SummaryRow> = g.iter().collect();
            let (mean, stderr, count) = pool_rows(&refs);
            ReportRow {
                kind: k.1.clone(),
                level: k.2,
                quantity: k.3.clone(),
                mean,
                stderr,
                count,
                reference: g[0].reference,
                runs: g.len(),
            }
        })
        .collect();
    Ok(Report { rows })
}

impl Report {
    pub fn table(&self) -> Table {
        let mut t = Table::new(
            "report",
            &["kind", "level", "quantity", "mean", "stderr", "count", "reference", "runs"],
        );
        for r in &self.rows {
            t.push(vec![
                r.kind.clone(),
                r.level.map(|l| l.to_string()).unwrap_or_default(),
                r.quantity.clone(),
                num(r.mean),
                opt(r.stderr),
                r.count.to_string(),
                opt(r.reference),
                r.runs.to_string(),
            ]);
        }
        t
    }

    /// Aligned plain-text rendering.
    pub fn text(&self) -> String {
        let header = ["kind", "level", "quantity", "mean", "stderr", "n", "reference", "runs"];
        let cells: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|r| {
                vec![
                    r.kind.clone(),
                    r.level.map(|l| l.to_string()).unwrap_or_else(|| "-".into()),
                    r.quantity.clone(),
                    format!("{:.6}", r.mean),
                    r.stderr.map(|s| format!("{s:.2e}")).unwrap_or_else(|| "-".into()),
                    r.count.to_string(),
                    r.reference.map(|s| format!("{s:.4e}")).unwrap_or_else(|| "-".into()),
                    r.runs.to_string(),
                ]
            })
            .collect();
        let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
        for row in &cells {
            for (w, c) in widths.iter_mut().zip(row) {
                *w = (*w).max(c.chars().count());
            }
        }
        let mut out = String::new();
        let line = |out: &mut String, row: &[String]| {
            let parts: Vec<String> = row.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect();
            let _ = writeln!(out, "{}", parts.join("  ").trim_end());
        };
        line(&mut out, &header.iter().map(|s| s.to_string()).collect::<Vec<_>>());
        for row in &cells {
            line(&mut out, row);
        }
        out
    }
}
