use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use homlab_cli::{exit, load_config, report, rerun, run_experiment, Kind, RunOptions, RunResult};

#[derive(Parser)]
#[command(name = "homlab", version, about = "Numerical experiments for diffusions in random environments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// Experiment config (TOML).
    #[arg(long)]
    config: PathBuf,
    #[command(flatten)]
    common: CommonArgs,
}

#[derive(Args, Clone)]
struct CommonArgs {
    /// Output directory (overrides `output` in the config).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long)]
    workers: Option<usize>,
    /// Work ceiling (overrides `budget` in the config).
    #[arg(long)]
    budget: Option<f64>,
    /// Validate and print the work estimate without running.
    #[arg(long)]
    dry_run: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run any experiment; the kind is taken from the config.
    Run(RunArgs),
    /// Rerun the experiment recorded in a manifest.
    Rerun {
        manifest: PathBuf,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Verify manifests and print a pooled summary.
    Report {
        #[arg(required = true)]
        manifests: Vec<PathBuf>,
        /// Also write report.csv here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    Audit(RunArgs),
    Alpha(RunArgs),
    Controls(RunArgs),
    Pi(RunArgs),
    Cauchy(RunArgs),
    Compare(RunArgs),
    Homogenize(RunArgs),
    TimeAverage(RunArgs),
}

fn options(c: &CommonArgs) -> RunOptions {
    RunOptions {
        out: c.out.clone(),
        workers: c.workers,
        budget: c.budget,
        dry_run: c.dry_run,
    }
}

fn finish(r: anyhow::Result<RunResult>) -> i32 {
    match r {
        Ok(RunResult::DryRun { work_estimate, budget }) => {
            match budget {
                Some(b) => println!("config ok; work estimate {work_estimate:.3e} (ceiling {b:.3e})"),
                None => println!("config ok; work estimate {work_estimate:.3e} (no ceiling)"),
            }
            exit::OK
        }
        Ok(RunResult::Completed { manifest, dir }) => {
            for o in &manifest.outputs {
                println!("wrote {} ({} rows)", dir.join(&o.file).display(), o.rows);
            }
            for a in &manifest.assertions {
                println!("[{}] {}: {}", if a.passed { "ok" } else { "FAILED" }, a.name, a.detail);
            }
            println!("manifest {}", dir.join(homlab_cli::MANIFEST_FILE).display());
            if manifest.all_passed() {
                exit::OK
            } else {
                exit::ASSERTION_FAILED
            }
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            exit::USAGE
        }
    }
}

fn run_kind(args: &RunArgs, expected: Option<Kind>) -> i32 {
    let loaded = match load_config(&args.config) {
        Ok(l) => l,
        Err(e) => {
            eprintln!("error: {e:#}");
            return exit::USAGE;
        }
    };
    if let Some(k) = expected {
        if loaded.config.kind != k {
            eprintln!(
                "error: config {} is of kind `{}`, not `{k}`",
                args.config.display(),
                loaded.config.kind
            );
            return exit::USAGE;
        }
    }
    finish(run_experiment(&loaded, &options(&args.common)))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let code = match &cli.command {
        Command::Run(a) => run_kind(a, None),
        Command::Rerun { manifest, common } => finish(rerun(manifest, &options(common))),
        Command::Report { manifests, out } => match report(manifests) {
            Ok(r) => {
                print!("{}", r.text());
                match out {
                    Some(dir) => match std::fs::create_dir_all(dir).map_err(anyhow::Error::from).and_then(|_| r.table().write(dir)) {
                        Ok(_) => exit::OK,
                        Err(e) => {
                            eprintln!("error: {e:#}");
                            exit::USAGE
                        }
                    },
                    None => exit::OK,
                }
            }
            Err(e) => {
                eprintln!("error: {e:#}");
                exit::USAGE
            }
        },
        Command::Audit(a) => run_kind(a, Some(Kind::Audit)),
        Command::Alpha(a) => run_kind(a, Some(Kind::Alpha)),
        Command::Controls(a) => run_kind(a, Some(Kind::Controls)),
        Command::Pi(a) => run_kind(a, Some(Kind::Pi)),
        Command::Cauchy(a) => run_kind(a, Some(Kind::Cauchy)),
        Command::Compare(a) => run_kind(a, Some(Kind::Compare)),
        Command::Homogenize(a) => run_kind(a, Some(Kind::Homogenize)),
        Command::TimeAverage(a) => run_kind(a, Some(Kind::TimeAverage)),
    };
    ExitCode::from(code as u8)
}
