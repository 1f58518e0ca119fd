use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use homlab_cli::table::read_table;
use homlab_cli::{load_config, parse_config, report, rerun, run_experiment, Manifest, RunOptions, RunResult};
use homlab_core::Estimate;

fn smoke(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/smoke").join(name)
}

fn homlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_homlab")).args(args).output().unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_variant(dir: &Path, name: &str, edit: impl Fn(&str) -> String) -> PathBuf {
    let text = std::fs::read_to_string(smoke("alpha.toml")).unwrap();
    let p = dir.join(name);
    std::fs::write(&p, edit(&text)).unwrap();
    p
}

fn run_to(config: &Path, out: &Path) -> Manifest {
    let loaded = load_config(config).unwrap();
    let opts = RunOptions {
        out: Some(out.to_path_buf()),
        ..Default::default()
    };
    match run_experiment(&loaded, &opts).unwrap() {
        RunResult::Completed { manifest, .. } => manifest,
        RunResult::DryRun { .. } => panic!("expected a run"),
    }
}

#[test]
fn missing_seed_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_variant(tmp.path(), "c.toml", |t| {
        t.lines().filter(|l| !l.starts_with("seed")).collect::<Vec<_>>().join("\n")
    });
    let o = homlab(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("missing field `seed`"), "{}", stderr(&o));
}

#[test]
fn unknown_field_is_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_variant(tmp.path(), "c.toml", |t| t.replace("n_paths = 20", "n_paths = 20\npaths = 5"));
    let o = homlab(&["run", "--config", cfg.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("unknown field `paths`"), "{}", stderr(&o));
}

#[test]
fn foreign_section_is_rejected() {
    let text = std::fs::read_to_string(smoke("alpha.toml")).unwrap() + "\n[audit]\nsamples = 10\n";
    let err = parse_config(&text).unwrap_err().to_string();
    assert!(err.contains("[audit]"), "{err}");
}

#[test]
fn kind_mismatch_exits_with_usage_code() {
    let o = homlab(&["pi", "--config", smoke("alpha.toml").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn dry_run_writes_nothing() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let o = homlab(&[
        "run",
        "--config",
        smoke("pi.toml").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--dry-run",
    ]);
    assert_eq!(o.status.code(), Some(0));
    assert!(String::from_utf8_lossy(&o.stdout).contains("work estimate"));
    assert!(!out.exists());
}

#[test]
fn budget_ceiling_refuses_to_run() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    let o = homlab(&[
        "pi",
        "--config",
        smoke("pi.toml").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--budget",
        "10",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("exceeds budget ceiling"), "{}", stderr(&o));
    assert!(!out.exists());
}

#[test]
fn run_writes_manifest_and_summary() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("alpha");
    let o = homlab(&[
        "alpha",
        "--config",
        smoke("alpha.toml").to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let m = Manifest::read(&out.join("manifest.json")).unwrap();
    assert_eq!(m.config.seed, m.seed_partition.master_seed);
    assert!(m.outputs.iter().any(|f| f.file == "summary.csv"));
    assert!(m.verify_outputs(&out).is_empty());
    let loaded = m.loaded_config().unwrap();
    assert_eq!(loaded.config, m.config);
}

#[test]
fn rerun_reproduces_outputs_bit_for_bit() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let first = run_to(&smoke("homogenize.toml"), &a);
    let opts = RunOptions {
        out: Some(b.clone()),
        workers: Some(3),
        ..Default::default()
    };
    rerun(&a.join("manifest.json"), &opts).unwrap();
    for o in &first.outputs {
        assert_eq!(
            std::fs::read(a.join(&o.file)).unwrap(),
            std::fs::read(b.join(&o.file)).unwrap(),
            "{}",
            o.file
        );
    }
}

#[test]
fn report_pools_repeated_runs() {
    let tmp = tempfile::tempdir().unwrap();
    let c1 = write_variant(tmp.path(), "s1.toml", |t| t.to_string());
    let c2 = write_variant(tmp.path(), "s2.toml", |t| t.replace("seed = 12", "seed = 99"));
    let m1 = run_to(&c1, &tmp.path().join("r1"));
    let m2 = run_to(&c2, &tmp.path().join("r2"));
    assert_eq!(m1.experiment_key, m2.experiment_key);
    let r = report(&[tmp.path().join("r1/manifest.json"), tmp.path().join("r2/manifest.json")]).unwrap();
    let row = r.rows.iter().find(|r| r.quantity == "alpha").expect("alpha row");
    assert_eq!(row.runs, 2);

    let est = |dir: &str| {
        let (header, rows) = read_table(&tmp.path().join(dir).join("summary.csv")).unwrap();
        let col = |n: &str| header.iter().position(|h| h == n).unwrap();
        let rec = rows.iter().find(|r| r[col("quantity")] == "alpha").unwrap();
        Estimate {
            mean: rec[col("mean")].parse().unwrap(),
            stderr: rec[col("stderr")].parse().unwrap(),
            count: rec[col("count")].parse().unwrap(),
            seed: 0,
        }
    };
    let (a, b) = (est("r1"), est("r2"));
    let n = (a.count + b.count) as f64;
    let mean = (a.count as f64 * a.mean + b.count as f64 * b.mean) / n;
    let ss = |e: &Estimate| (e.count as f64 - 1.0) * e.sample_variance() + e.count as f64 * e.mean * e.mean;
    let var = (ss(&a) + ss(&b) - n * mean * mean) / (n - 1.0);
    assert!((row.mean - mean).abs() <= 1e-12 * mean.abs().max(1.0));
    assert!((row.stderr.unwrap() - (var / n).sqrt()).abs() <= 1e-12);
    assert_eq!(row.count, a.count + b.count);
}

#[test]
fn report_names_corrupted_file() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    run_to(&smoke("time_average.toml"), &out);
    let target = out.join("time_average.csv");
    let mut bytes = std::fs::read(&target).unwrap();
    bytes.extend_from_slice(b"0,0\n");
    std::fs::write(&target, bytes).unwrap();
    let o = homlab(&["report", out.join("manifest.json").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
    let msg = stderr(&o);
    assert!(msg.contains("hash mismatch") && msg.contains("time_average.csv"), "{msg}");
}

#[test]
fn report_rejects_edited_config_echo() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    run_to(&smoke("alpha.toml"), &out);
    let path = out.join("manifest.json");
    let text = std::fs::read_to_string(&path).unwrap();
    std::fs::write(&path, text.replace("n_paths = 20", "n_paths = 21")).unwrap();
    assert!(report(&[path]).is_err());
}
