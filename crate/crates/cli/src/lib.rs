//! Config-driven runner for the homlab experiments.
//!
//! A run reads one TOML config, refuses to start if the work estimate exceeds
//! the budget ceiling, writes its result tables as CSV and finishes with a
//! `manifest.json` that echoes the config and hashes every output.

pub mod config;
pub mod experiments;
pub mod manifest;
pub mod report;
pub mod table;

use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context};

pub use config::{load_config, parse_config, ExperimentConfig, Kind, LoadedConfig};
pub use manifest::{Assertion, Manifest, MANIFEST_FILE};
pub use report::{report, Report};

use crate::table::{sha256_hex, summary_table};

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const ASSERTION_FAILED: i32 = 1;
    pub const USAGE: i32 = 2;
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Overrides `output` from the config.
    pub out: Option<PathBuf>,
    /// Worker threads; `None` uses the rayon default.
    pub workers: Option<usize>,
    /// Overrides `budget` from the config.
    pub budget: Option<f64>,
    pub dry_run: bool,
}

#[derive(Debug)]
pub enum RunResult {
    DryRun { work_estimate: f64, budget: Option<f64> },
    Completed { manifest: Manifest, dir: PathBuf },
}

#[derive(Debug)]
pub struct BudgetExceeded {
    pub estimate: f64,
    pub ceiling: f64,
}

impl std::fmt::Display for BudgetExceeded {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "work estimate {:.3e} exceeds budget ceiling {:.3e}; refusing to run",
            self.estimate, self.ceiling
        )
    }
}

impl std::error::Error for BudgetExceeded {}

/// Validates, gates on the budget and, unless `dry_run`, runs the experiment
/// and writes its outputs and manifest.
pub fn run_experiment(loaded: &LoadedConfig, opts: &RunOptions) -> anyhow::Result<RunResult> {
    let cfg = &loaded.config;
    cfg.validate()?;
    let work = experiments::work_estimate(cfg)?;
    let ceiling = opts.budget.or(cfg.budget);
    if let Some(c) = ceiling {
        if work > c {
            return Err(BudgetExceeded { estimate: work, ceiling: c }.into());
        }
    }
    if opts.dry_run {
        return Ok(RunResult::DryRun {
            work_estimate: work,
            budget: ceiling,
        });
    }
    let dir = opts.out.clone().unwrap_or_else(|| cfg.output.clone());
    std::fs::create_dir_all(&dir).with_context(|| format!("creating output directory {}", dir.display()))?;

    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(w) = opts.workers {
        if w == 0 {
            bail!("worker count must be at least 1");
        }
        builder = builder.num_threads(w);
    }
    let pool = builder.build()?;
    let workers = pool.current_num_threads();

    let start = Instant::now();
    let outcome = pool.install(|| experiments::run(cfg))?;
    let wall = start.elapsed().as_secs_f64();

    let mut outputs = Vec::new();
    for t in &outcome.tables {
        outputs.push(t.write(&dir)?);
    }
    outputs.push(summary_table(&outcome.summary).write(&dir)?);

    let manifest = Manifest {
        artifact_version: env!("CARGO_PKG_VERSION").to_string(),
        kind: cfg.kind,
        config_text: loaded.text.clone(),
        config: cfg.clone(),
        config_hash: sha256_hex(loaded.text.as_bytes()),
        experiment_key: manifest::experiment_key(cfg)?,
        seed_partition: outcome.seeds,
        workers,
        work_estimate: work,
        wall_clock_seconds: wall,
        step_counts: outcome.step_counts,
        outputs,
        assertions: outcome.assertions,
    };
    manifest.write(&dir)?;
    Ok(RunResult::Completed { manifest, dir })
}

/// Reruns the experiment recorded in a manifest.
pub fn rerun(manifest_path: &Path, opts: &RunOptions) -> anyhow::Result<RunResult> {
    let m = Manifest::read(manifest_path)?;
    let loaded = m.loaded_config()?;
    run_experiment(&loaded, opts)
}
