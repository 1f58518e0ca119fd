//! One pipeline per experiment kind. Each returns its tables, a summary and
//! the exact invariants it checked; nothing here touches the file system.

use std::collections::BTreeMap;
use std::sync::Arc;

use anyhow::Context;
use homlab_core::diffusion::{alpha_samples, path_box, path_statistics, TailConfig};
use homlab_core::environment::{audit_environment, sample_environment};
use homlab_core::homogenize::{convergence_sweep, environment_time_average, sweep_work, Probe, SweepParams};
use homlab_core::renorm::{
    cauchy_gap, coarse_comparison, coarse_comparison_extent, contraction_stat, environment_seed,
    estimate_pi_n, plan_pi, CoarseParams, ControlParams, FourierField, PiParams,
};
use homlab_core::rng::derive_seed;
use homlab_core::stats::{bootstrap_std_band, mean, sample_std};
use homlab_core::{Cube, Envelope, EnvironmentSpec, Estimate, Grid, LocalObservable, ScaleHierarchy, SignedPermutation};
use rayon::prelude::*;

use crate::config::{ExperimentConfig, Kind};
use crate::manifest::{Assertion, SeedPartition};
use crate::table::{num, opt, SummaryRow, Table};

const STREAM_COMPARE_FIELD: u64 = 31;
const STREAM_TIME_AVERAGE: u64 = 32;
const STREAM_BOOTSTRAP: u64 = 33;

pub struct Outcome {
    pub tables: Vec<Table>,
    pub summary: Vec<SummaryRow>,
    pub assertions: Vec<Assertion>,
    pub step_counts: BTreeMap<String, f64>,
    pub seeds: SeedPartition,
}

fn partition(seed: u64, units: usize, scheme: &str) -> SeedPartition {
    SeedPartition {
        master_seed: seed,
        units,
        scheme: scheme.to_string(),
    }
}

fn row(kind: Kind, level: Option<usize>, quantity: &str, mean: f64, stderr: Option<f64>, count: usize, reference: Option<f64>) -> SummaryRow {
    SummaryRow {
        kind: kind.name().to_string(),
        level,
        quantity: quantity.to_string(),
        mean,
        stderr,
        count,
        reference,
    }
}

fn est_row(kind: Kind, level: Option<usize>, quantity: &str, e: &Estimate, reference: Option<f64>) -> SummaryRow {
    row(kind, level, quantity, e.mean, Some(e.stderr), e.count, reference)
}

fn bounded(name: &str, values: &[f64], bound: f64) -> Assertion {
    let worst = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let ok = values.iter().all(|v| v.is_finite()) && worst <= bound * (1.0 + 1e-12) + 1e-300;
    Assertion::new(name, ok, format!("max |value| = {worst:?}, bound = {bound:?}"))
}

fn pi_params(cfg: &ExperimentConfig, ball_factor: f64, powers: usize) -> PiParams {
    PiParams {
        solver: cfg.solver_params().expect("validated"),
        ball_factor,
        powers,
        budget: None,
    }
}

fn ball_nodes(radius: f64, h: f64, d: usize) -> f64 {
    (2.0 * (radius / h).ceil() + 3.0).powi(d as i32)
}

fn cube_nodes(hw: f64, h: f64, d: usize) -> f64 {
    (2.0 * (hw / h).ceil() + 1.0).powi(d as i32)
}

/// Estimated cost in elementary updates (path steps or grid node updates).
pub fn work_estimate(cfg: &ExperimentConfig) -> anyhow::Result<f64> {
    let h = cfg.hierarchy()?;
    let spec = cfg.environment_spec();
    let d = spec.dimension;
    let (_, lam) = spec.eigenvalue_bounds();
    let b = spec.drift_bound();
    Ok(match cfg.kind {
        Kind::Audit => {
            let a = cfg.audit.as_ref().expect("validated");
            let group: f64 = (1..=d).map(|k| 2.0 * k as f64).product();
            a.samples as f64 * (18.0 + group)
        }
        Kind::Alpha => {
            let a = cfg.alpha.as_ref().expect("validated");
            let t = h.level(a.level)?.time();
            (a.n_env * a.n_paths) as f64 * (t / a.dt).ceil()
        }
        Kind::Controls => {
            let c = cfg.controls.as_ref().expect("validated");
            let level = h.level(c.level)?;
            let (l, t) = (level.l_f64(), level.time());
            let s = cfg.solver_params().expect("validated");
            let mut w = 0.0;
            if let Some(k) = &c.contraction {
                let v = k.cutoff_multiplier * l;
                let gauss = 6.0 * (k.alpha * t).sqrt() + s.h;
                let f_hw = 2.0 * v + 2.0 * l + s.margin_with(lam, b, t).max(gauss) + 2.0 * s.h;
                let per = cube_nodes(f_hw, s.h, d) * s.steps_with(d, lam, t) as f64;
                let refine = if k.refine { 1.0 + 4.0 * 2f64.powi(d as i32) } else { 1.0 };
                w += (k.n_env * k.n_fields) as f64 * per * refine;
                if k.tail_paths > 0 {
                    let dt = k.tail_dt.unwrap_or(t / 1e4);
                    w += (k.n_env * k.tail_paths) as f64 * (t / dt).ceil();
                }
            }
            if let Some(k) = &c.tails {
                let paths = (k.n_env * k.paths_per_env) as f64;
                let sym = 1.0 + 2.0 * k.symmetries.len() as f64;
                w += paths * ((t / k.dt).ceil() + sym * (k.t / k.dt).ceil());
            }
            w
        }
        Kind::Pi => {
            let p = cfg.pi.as_ref().expect("validated");
            let plan = plan_pi(&spec, &h, p.level, &p.observable, &pi_params(cfg, p.ball_factor, p.powers))?;
            plan.work_per_env * p.n_env as f64
        }
        Kind::Cauchy => {
            let c = cfg.cauchy.as_ref().expect("validated");
            let lower = pi_params(cfg, c.ball_factor, c.powers);
            let mut upper = lower.clone();
            upper.solver.h = c.upper_h;
            let a = plan_pi(&spec, &h, c.level, &c.observable, &lower)?;
            let bb = plan_pi(&spec, &h, c.level + 1, &c.observable, &upper)?;
            (a.work_per_env + bb.work_per_env) * c.n_env as f64
        }
        Kind::Compare => {
            let c = cfg.compare.as_ref().expect("validated");
            let s = cfg.solver_params().expect("validated");
            let lo = h.level(c.level)?;
            h.level(c.level + 1)?;
            let spec = Arc::new(spec);
            let probe = sample_environment(&spec, cfg.seed, Cube::centered(d, 1.0 + spec.bump.radius))?;
            let params = CoarseParams {
                solver: s.clone(),
                ball_factor: c.ball_factor,
                budget: None,
            };
            let hw = coarse_comparison_extent(&probe, &h, c.level, c.k, c.alpha, &params)?;
            let nodes = cube_nodes(hw, s.h, d);
            let m_total = (c.k as u64 * lo.ell * lo.ell) as f64;
            let per = 6.0 * nodes * ball_nodes(c.ball_factor * lo.d_tilde, s.h, d) * s.steps_with(d, lam, lo.time()) as f64
                + nodes * s.steps_with(d, lam, m_total * lo.time()) as f64;
            per * c.n_env as f64
        }
        Kind::Homogenize => {
            let m = cfg.homogenize.as_ref().expect("validated");
            let s = cfg.solver_params().expect("validated");
            let probes: Vec<Probe> = m.probes.iter().map(|p| Probe::new(p.x.clone(), p.t)).collect();
            let mut w = sweep_work(&spec, &m.eps, &probes, m.n_env, &s);
            if let Some(r) = &m.reference {
                let plan = plan_pi(&spec, &h, r.level, &m.observable, &pi_params(cfg, r.ball_factor, r.powers))?;
                w += plan.work_per_env * r.n_env as f64;
            }
            w
        }
        Kind::TimeAverage => {
            let t = cfg.time_average.as_ref().expect("validated");
            t.n_env as f64 * (t.horizon / t.dt).ceil()
        }
    })
}

pub fn run(cfg: &ExperimentConfig) -> anyhow::Result<Outcome> {
    let hierarchy = cfg.hierarchy()?;
    let spec = cfg.spec();
    match cfg.kind {
        Kind::Audit => audit(cfg, &spec),
        Kind::Alpha => alpha(cfg, &spec, &hierarchy),
        Kind::Controls => controls(cfg, &spec, &hierarchy),
        Kind::Pi => pi(cfg, &spec, &hierarchy),
        Kind::Cauchy => cauchy(cfg, &spec, &hierarchy),
        Kind::Compare => compare(cfg, &spec, &hierarchy),
        Kind::Homogenize => homogenize(cfg, &spec, &hierarchy),
        Kind::TimeAverage => time_average(cfg, &spec),
    }
}

fn audit(cfg: &ExperimentConfig, spec: &Arc<EnvironmentSpec>) -> anyhow::Result<Outcome> {
    let a = cfg.audit.as_ref().expect("validated");
    let r = audit_environment(spec, a.samples, cfg.seed)?;
    let mut t = Table::new("audit", &["quantity", "observed", "bound"]);
    let mut put = |q: &str, o: f64, b: Option<f64>| t.push(vec![q.into(), num(o), opt(b)]);
    put("max_drift", r.max_drift, Some(r.bound_drift));
    put("max_deviation", r.max_deviation, Some(r.bound_deviation));
    put("min_eigenvalue", r.min_eigenvalue, Some(r.bound_eigenvalues.0));
    put("max_eigenvalue", r.max_eigenvalue, Some(r.bound_eigenvalues.1));
    put("drift_lipschitz", r.drift_lipschitz_estimate, Some(r.bound_drift_lipschitz));
    put("matrix_lipschitz", r.matrix_lipschitz_estimate, Some(r.bound_matrix_lipschitz));
    put("far_correlation", r.far_correlation, Some(3.0 / (r.n_samples as f64).sqrt()));
    put("isotropy_discrepancy", r.isotropy_discrepancy, Some(3.0 * r.isotropy_stderr_scale));
    put("law_discrepancy", r.law_discrepancy, None);
    let n = r.n_samples;
    let summary = vec![
        row(Kind::Audit, None, "min_eigenvalue", r.min_eigenvalue, None, n, Some(r.bound_eigenvalues.0)),
        row(Kind::Audit, None, "max_eigenvalue", r.max_eigenvalue, None, n, Some(r.bound_eigenvalues.1)),
        row(Kind::Audit, None, "far_correlation", r.far_correlation, None, n, Some(3.0 / (n as f64).sqrt())),
    ];
    let assertions = vec![
        Assertion::new("pointwise_bounds", r.within_bounds, "drift, deviation and eigenvalues within the interval bounds"),
        Assertion::new("site_law_isotropy", r.law_discrepancy <= 1e-15, format!("law discrepancy {:?}", r.law_discrepancy)),
    ];
    Ok(Outcome {
        tables: vec![t],
        summary,
        assertions,
        step_counts: BTreeMap::from([("realizations".into(), n as f64)]),
        seeds: partition(cfg.seed, n, "realization k: derive_seed(seed, [audit, k])"),
    })
}

fn alpha(cfg: &ExperimentConfig, spec: &Arc<EnvironmentSpec>, h: &ScaleHierarchy) -> anyhow::Result<Outcome> {
    let a = cfg.alpha.as_ref().expect("validated");
    let level = h.level(a.level)?.clone();
    let samples = alpha_samples(spec, h, a.level, a.n_env, a.n_paths, Some(a.dt), cfg.seed)?;
    let est = if a.n_env >= 2 {
        let means: Vec<f64> = samples.iter().map(|s| mean(s)).collect();
        Estimate::from_samples(&means, cfg.seed)?
    } else {
        Estimate::from_samples(&samples.concat(), cfg.seed)?
    };
    let mut per_env = Table::new("alpha_env", &["env", "paths", "mean", "std"]);
    for (k, s) in samples.iter().enumerate() {
        per_env.push(vec![k.to_string(), s.len().to_string(), num(mean(s)), num(sample_std(s))]);
    }
    let nu = spec.nu;
    let mut t = Table::new(
        "alpha",
        &["level", "L", "d_tilde", "dt", "n_env", "n_paths", "alpha", "stderr", "lower", "upper"],
    );
    t.push(vec![
        a.level.to_string(),
        level.l.to_string(),
        num(level.d_tilde),
        num(a.dt),
        a.n_env.to_string(),
        a.n_paths.to_string(),
        num(est.mean),
        num(est.stderr),
        num(1.0 / (2.0 * nu)),
        num(2.0 * nu),
    ]);
    let flat = samples.concat();
    let steps = (a.n_env * a.n_paths) as f64 * (level.time() / a.dt).ceil();
    Ok(Outcome {
        tables: vec![t, per_env],
        summary: vec![est_row(Kind::Alpha, Some(a.level), "alpha", &est, None)],
        assertions: vec![Assertion::new(
            "finite_nonnegative_samples",
            flat.iter().all(|v| v.is_finite() && *v >= 0.0),
            format!("{} samples", flat.len()),
        )],
        step_counts: BTreeMap::from([("path_steps_max".into(), steps), ("paths".into(), flat.len() as f64)]),
        seeds: partition(cfg.seed, a.n_env, "environment e: derive_seed(seed, [env, e]); path p: derive_seed(env seed, [path, p])"),
    })
}

fn controls(cfg: &ExperimentConfig, spec: &Arc<EnvironmentSpec>, h: &ScaleHierarchy) -> anyhow::Result<Outcome> {
    let c = cfg.controls.as_ref().expect("validated");
    let level = h.level(c.level)?.clone();
    let mut tables = Vec::new();
    let mut summary = Vec::new();
    let mut assertions = Vec::new();
    let mut steps = BTreeMap::new();
    let mut units = 0;
    if let Some(k) = &c.contraction {
        let params = ControlParams {
            solver: cfg.solver_params().expect("validated"),
            alpha: k.alpha,
            cutoff_multiplier: k.cutoff_multiplier,
            n_fields: k.n_fields,
            correlation_length: k.correlation_length,
            fourier_modes: k.fourier_modes,
            tail_paths: k.tail_paths,
            tail_dt: k.tail_dt,
            refine: k.refine,
        };
        let st = contraction_stat(spec, h, c.level, k.n_env, &params, cfg.seed)?;
        let mut t = Table::new("contraction", &["env", "field", "ratio", "discretization", "tail_pass"]);
        for (e, rs) in st.ratios.iter().enumerate() {
            for (j, r) in rs.iter().enumerate() {
                let disc = st.discretization.get(e).and_then(|v| v.get(j)).copied();
                let tail = st.tail_pass[e].map(|b| b.to_string()).unwrap_or_default();
                t.push(vec![e.to_string(), j.to_string(), num(*r), opt(disc), tail]);
            }
        }
        tables.push(t);
        let n = st.all_ratios().len();
        let lvl = Some(c.level);
        summary.push(row(Kind::Controls, lvl, "contraction_q10", st.q10, None, n, Some(st.envelope)));
        summary.push(row(Kind::Controls, lvl, "contraction_median", st.median, None, n, Some(st.envelope)));
        summary.push(row(Kind::Controls, lvl, "contraction_q90", st.q90, None, n, Some(st.envelope)));
        summary.push(row(Kind::Controls, lvl, "fraction_below_envelope", st.fraction_below_envelope, None, n, None));
        summary.push(row(Kind::Controls, lvl, "event_frequency", st.event_frequency, None, k.n_env, None));
        assertions.push(Assertion::new(
            "finite_ratios",
            st.all_ratios().iter().all(|r| r.is_finite() && *r >= 0.0),
            format!("{n} ratios"),
        ));
        steps.insert("contraction_solves".into(), (k.n_env * k.n_fields) as f64 * if k.refine { 2.0 } else { 1.0 });
        units = units.max(k.n_env);
    }
    if let Some(k) = &c.tails {
        let symmetries = k
            .symmetries
            .iter()
            .map(|(p, s)| SignedPermutation::new(p.clone(), s.clone()))
            .collect::<homlab_core::Result<Vec<_>>>()?;
        let config = TailConfig {
            n_env: k.n_env,
            paths_per_env: k.paths_per_env,
            dt: Some(k.dt),
            t: k.t,
            symmetry_start: k.symmetry_start.clone(),
            symmetries,
        };
        let vs: Vec<f64> = k.v_multiples.iter().map(|m| m * level.d).collect();
        let rep = path_statistics(spec, h, c.level, &vs, &config, cfg.seed)?;
        let mut t = Table::new("tails", &["v", "exceedances", "trials", "empirical", "stderr", "envelope"]);
        for r in &rep.rows {
            t.push(vec![num(r.v), r.exceedances.to_string(), r.trials.to_string(), num(r.empirical), num(r.stderr), num(r.envelope)]);
            summary.push(row(
                Kind::Controls,
                Some(c.level),
                &format!("tail_v={}", num(r.v)),
                r.empirical,
                Some(r.stderr),
                r.trials,
                Some(r.envelope),
            ));
        }
        tables.push(t);
        let mut t = Table::new("displacement", &["coordinate", "mean", "stderr", "count"]);
        for (i, e) in rep.mean_displacement.iter().enumerate() {
            t.push(vec![i.to_string(), num(e.mean), num(e.stderr), e.count.to_string()]);
            summary.push(est_row(Kind::Controls, Some(c.level), &format!("mean_x{i}"), e, Some(0.0)));
        }
        tables.push(t);
        let mut t = Table::new(
            "symmetry",
            &["symmetry", "coordinate", "lhs", "lhs_stderr", "rhs", "rhs_stderr", "z"],
        );
        for (j, s) in rep.symmetry.iter().enumerate() {
            for (i, (a, b)) in s.lhs.iter().zip(&s.rhs).enumerate() {
                let se = (a.stderr.powi(2) + b.stderr.powi(2)).sqrt();
                let z = if se > 0.0 { (a.mean - b.mean).abs() / se } else { 0.0 };
                t.push(vec![j.to_string(), i.to_string(), num(a.mean), num(a.stderr), num(b.mean), num(b.stderr), num(z)]);
            }
            summary.push(row(Kind::Controls, Some(c.level), &format!("symmetry{j}_max_z"), s.max_z, None, s.lhs.len(), Some(3.0)));
        }
        tables.push(t);
        assertions.push(Assertion::new(
            "frequencies_in_unit_interval",
            rep.rows.iter().all(|r| (0.0..=1.0).contains(&r.empirical)),
            format!("{} thresholds", rep.rows.len()),
        ));
        steps.insert("tail_paths".into(), (k.n_env * k.paths_per_env) as f64);
        units = units.max(k.n_env);
    }
    Ok(Outcome {
        tables,
        summary,
        assertions,
        step_counts: steps,
        seeds: partition(cfg.seed, units, "environment k: derive_seed(seed, [stream, k]) per statistic"),
    })
}

fn pi(cfg: &ExperimentConfig, spec: &Arc<EnvironmentSpec>, h: &ScaleHierarchy) -> anyhow::Result<Outcome> {
    let p = cfg.pi.as_ref().expect("validated");
    let params = pi_params(cfg, p.ball_factor, p.powers);
    let rec = estimate_pi_n(spec, h, p.level, &p.observable, p.n_env, &params, cfg.seed)?;
    let mut t = Table::new("pi_samples", &["env", "env_seed", "sample", "direct"]);
    for (k, ((s, dv), seed)) in rec.samples.iter().zip(&rec.direct).zip(&rec.env_seeds).enumerate() {
        t.push(vec![k.to_string(), seed.to_string(), num(*s), num(*dv)]);
    }
    let direct = Estimate::from_samples(&rec.direct, cfg.seed)?;
    let mut assertions = vec![bounded("max_principle", &rec.samples, p.observable.bound(spec))];
    if let LocalObservable::Constant { value } = p.observable {
        assertions.push(Assertion::new(
            "constants_fixed",
            rec.samples.iter().all(|&s| s == value),
            format!("all samples equal {value:?}"),
        ));
    }
    Ok(Outcome {
        tables: vec![t],
        summary: vec![
            est_row(Kind::Pi, Some(p.level), &format!("pi[{}]", rec.observable), &rec.estimate, None),
            est_row(Kind::Pi, Some(p.level), &format!("direct[{}]", rec.observable), &direct, None),
        ],
        assertions,
        step_counts: BTreeMap::from([("node_updates".into(), rec.work), ("grid_nodes".into(), rec.grid_nodes as f64)]),
        seeds: partition(cfg.seed, p.n_env, "environment k: environment_seed(seed, k), shared by all levels"),
    })
}

fn cauchy(cfg: &ExperimentConfig, spec: &Arc<EnvironmentSpec>, h: &ScaleHierarchy) -> anyhow::Result<Outcome> {
    let c = cfg.cauchy.as_ref().expect("validated");
    let lower = pi_params(cfg, c.ball_factor, c.powers);
    let mut upper = lower.clone();
    upper.solver.h = c.upper_h;
    let g = cauchy_gap(spec, h, c.level, &c.observable, c.n_env, &lower, &upper, cfg.seed)?;
    let mut t = Table::new("cauchy_samples", &["env", "env_seed", "lower", "upper", "difference"]);
    for k in 0..c.n_env {
        let (a, b) = (g.lower.samples[k], g.upper.samples[k]);
        t.push(vec![k.to_string(), g.lower.env_seeds[k].to_string(), num(a), num(b), num(b - a)]);
    }
    let mut s = Table::new(
        "cauchy",
        &["level", "pi_lower", "se_lower", "pi_upper", "se_upper", "gap", "paired_stderr", "unpaired_stderr", "envelope", "envelope_ratio"],
    );
    s.push(vec![
        c.level.to_string(),
        num(g.lower.estimate.mean),
        num(g.lower.estimate.stderr),
        num(g.upper.estimate.mean),
        num(g.upper.estimate.stderr),
        num(g.gap),
        num(g.stderr),
        num(g.unpaired_stderr),
        num(g.envelope),
        num(g.envelope_ratio),
    ]);
    let bound = c.observable.bound(spec);
    let all: Vec<f64> = g.lower.samples.iter().chain(&g.upper.samples).copied().collect();
    let lvl = Some(c.level);
    Ok(Outcome {
        tables: vec![s, t],
        summary: vec![
            est_row(Kind::Cauchy, lvl, "pi_lower", &g.lower.estimate, None),
            est_row(Kind::Cauchy, Some(c.level + 1), "pi_upper", &g.upper.estimate, None),
            row(Kind::Cauchy, lvl, "gap", g.gap, Some(g.stderr), c.n_env, Some(g.envelope)),
        ],
        assertions: vec![bounded("max_principle", &all, bound)],
        step_counts: BTreeMap::from([("node_updates".into(), g.lower.work + g.upper.work)]),
        seeds: partition(cfg.seed, c.n_env, "environment k: environment_seed(seed, k) at both levels"),
    })
}

fn compare(cfg: &ExperimentConfig, spec: &Arc<EnvironmentSpec>, h: &ScaleHierarchy) -> anyhow::Result<Outcome> {
    let c = cfg.compare.as_ref().expect("validated");
    let d = spec.dimension;
    let s = cfg.solver_params().expect("validated");
    let params = CoarseParams {
        solver: s.clone(),
        ball_factor: c.ball_factor,
        budget: None,
    };
    let l = h.level(c.level)?.l_f64();
    let results = (0..c.n_env)
        .into_par_iter()
        .map(|k| {
            let env_seed = environment_seed(cfg.seed, k);
            let probe = sample_environment(spec, env_seed, Cube::centered(d, 1.0 + spec.bump.radius))?;
            let hw = coarse_comparison_extent(&probe, h, c.level, c.k, c.alpha, &params)?;
            let env = sample_environment(spec, env_seed, Cube::centered(d, hw + spec.bump.radius + 2.0 * s.h + 1.0))?;
            let mut field = FourierField::sample(
                d,
                c.fourier_modes,
                c.correlation_length * l,
                derive_seed(cfg.seed, &[STREAM_COMPARE_FIELD, k as u64]),
            );
            let grid = Grid::cube(vec![0.0; d], hw, s.h)?;
            let sup = field.on_grid(&grid).sup_norm();
            field.scale = if sup > 0.0 { 1.0 / sup } else { 1.0 };
            let f = field.on_grid(&grid);
            coarse_comparison(&env, h, c.level, c.k, &f, c.alpha, &params)
        })
        .collect::<homlab_core::Result<Vec<_>>>()?;
    let mut t = Table::new("compare", &["env", "region_radius", "sup_difference", "f_sup", "envelope", "envelope_ratio"]);
    for (k, r) in results.iter().enumerate() {
        t.push(vec![k.to_string(), num(r.region_radius), num(r.sup_difference), num(r.f_sup), num(r.envelope), num(r.envelope_ratio)]);
    }
    let sups: Vec<f64> = results.iter().map(|r| r.sup_difference).collect();
    let envelope = h.decay_envelope(c.level, Envelope::CauchyGap)?;
    let mut summary = Vec::new();
    if sups.len() >= 2 {
        let e = Estimate::from_samples(&sups, cfg.seed)?;
        summary.push(est_row(Kind::Compare, Some(c.level), "sup_difference", &e, Some(envelope)));
    } else if let Some(&v) = sups.first() {
        summary.push(row(Kind::Compare, Some(c.level), "sup_difference", v, None, 1, Some(envelope)));
    }
    let ok = results.iter().all(|r| r.sup_difference <= 2.0 * r.f_sup * (1.0 + 1e-12));
    Ok(Outcome {
        tables: vec![t],
        summary,
        assertions: vec![Assertion::new("sup_norm_bound", ok, "sup |left - right| <= 2 sup |f|")],
        step_counts: BTreeMap::from([("node_updates".into(), results.iter().map(|r| r.work).sum())]),
        seeds: partition(cfg.seed, c.n_env, "environment k: environment_seed(seed, k); test field k: derive_seed(seed, [field, k])"),
    })
}

fn homogenize(cfg: &ExperimentConfig, spec: &Arc<EnvironmentSpec>, h: &ScaleHierarchy) -> anyhow::Result<Outcome> {
    let m = cfg.homogenize.as_ref().expect("validated");
    let solver = cfg.solver_params().expect("validated");
    let reference = match &m.reference {
        Some(r) => {
            let p = pi_params(cfg, r.ball_factor, r.powers);
            Some(estimate_pi_n(spec, h, r.level, &m.observable, r.n_env, &p, cfg.seed).context("reference estimate")?)
        }
        None => None,
    };
    let probes: Vec<Probe> = m.probes.iter().map(|p| Probe::new(p.x.clone(), p.t)).collect();
    let params = SweepParams { solver, budget: None };
    let run = convergence_sweep(
        spec,
        &m.observable,
        &m.eps,
        m.n_env,
        &probes,
        &params,
        reference.as_ref().map(|r| r.estimate.mean),
        cfg.seed,
    )?;
    let mut t = Table::new(
        "homogenize",
        &["probe", "x", "t", "eps", "mean", "stderr", "std", "std_lo", "std_hi", "deviation", "reference_stderr", "combined_stderr"],
    );
    let mut v = Table::new("homogenize_values", &["probe", "eps", "env", "value"]);
    let mut summary = Vec::new();
    let ref_se = reference.as_ref().map(|r| r.estimate.stderr);
    for (pi, p) in probes.iter().enumerate() {
        for (ei, &eps) in m.eps.iter().enumerate() {
            let e = run.entry(ei, pi);
            let (lo, hi) = bootstrap_std_band(
                &e.values,
                m.bootstrap_reps,
                derive_seed(cfg.seed, &[STREAM_BOOTSTRAP, pi as u64, ei as u64]),
            );
            let combined = ref_se.map(|r| (r * r + e.stderr * e.stderr).sqrt());
            let x = p.x.iter().map(|c| num(*c)).collect::<Vec<_>>().join(" ");
            t.push(vec![
                pi.to_string(),
                x,
                num(p.t),
                num(eps),
                num(e.mean),
                num(e.stderr),
                num(e.std),
                num(lo),
                num(hi),
                opt(e.deviation),
                opt(ref_se),
                opt(combined),
            ]);
            for (k, val) in e.values.iter().enumerate() {
                v.push(vec![pi.to_string(), num(eps), k.to_string(), num(*val)]);
            }
            summary.push(row(
                Kind::Homogenize,
                None,
                &format!("u[probe={pi},eps={}]", num(eps)),
                e.mean,
                Some(e.stderr),
                e.n_env,
                reference.as_ref().map(|r| r.estimate.mean),
            ));
        }
    }
    if let Some(r) = &reference {
        summary.push(est_row(Kind::Homogenize, Some(r.level), "pi_reference", &r.estimate, None));
    }
    let all: Vec<f64> = run.entries.iter().flat_map(|e| e.values.iter().copied()).collect();
    Ok(Outcome {
        tables: vec![t, v],
        summary,
        assertions: vec![bounded("max_principle", &all, m.observable.bound(spec))],
        step_counts: BTreeMap::from([("solves".into(), (m.n_env * probes.len()) as f64)]),
        seeds: partition(cfg.seed, m.n_env, "environment k: environment_seed(seed, k), shared with the reference estimate"),
    })
}

fn time_average(cfg: &ExperimentConfig, spec: &Arc<EnvironmentSpec>) -> anyhow::Result<Outcome> {
    let ta = cfg.time_average.as_ref().expect("validated");
    let reach = 0.0;
    let active = path_box(spec, reach, ta.horizon);
    let active = Cube {
        half_width: active.half_width + ta.observable.radius(spec) + spec.drift_bound() * ta.horizon,
        ..active
    };
    let traces = (0..ta.n_env)
        .into_par_iter()
        .map(|k| {
            let env = sample_environment(spec, environment_seed(cfg.seed, k), active.clone())?;
            environment_time_average(
                &env,
                &ta.observable,
                ta.horizon,
                ta.dt,
                ta.n_out,
                derive_seed(cfg.seed, &[STREAM_TIME_AVERAGE, k as u64]),
            )
        })
        .collect::<homlab_core::Result<Vec<_>>>()?;
    let mut t = Table::new("time_average", &["env", "time", "average"]);
    for (k, tr) in traces.iter().enumerate() {
        for (s, a) in tr.times.iter().zip(&tr.averages) {
            t.push(vec![k.to_string(), num(*s), num(*a)]);
        }
    }
    let finals: Vec<f64> = traces.iter().map(|t| t.last()).collect();
    let mut summary = Vec::new();
    if finals.len() >= 2 {
        let e = Estimate::from_samples(&finals, cfg.seed)?;
        summary.push(est_row(Kind::TimeAverage, None, &format!("average[T={}]", num(ta.horizon)), &e, None));
    }
    let all: Vec<f64> = traces.iter().flat_map(|t| t.averages.iter().copied()).collect();
    Ok(Outcome {
        tables: vec![t],
        summary,
        assertions: vec![bounded("average_bounded", &all, ta.observable.bound(spec))],
        step_counts: BTreeMap::from([("path_steps".into(), ta.n_env as f64 * (ta.horizon / ta.dt).ceil())]),
        seeds: partition(cfg.seed, ta.n_env, "environment k: environment_seed(seed, k); path k: derive_seed(seed, [time_average, k])"),
    })
}
