//! Renormalization estimators: `π_n(f)`, Cauchy gaps between levels,
//! contraction statistics of the defect operator and the coarse kernel
//! comparison.
//!
//! Environment seeds depend only on the master seed and the realization index,
//! never on the level, so estimates at levels `n` and `n + 1` are paired
//! sample by sample.

use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffusion::{simulate_path, PathConfig};
use crate::environment::{
    evaluate_observable, sample_environment, Cube, EnvironmentRealization, EnvironmentSpec,
    LocalObservable,
};
use crate::error::{Error, Result};
use crate::grid::{Grid, GridField};
use crate::kernels::{
    cutoff_field, defect_field, gaussian_steps, localized_field, scaled_holder_norm,
    solve_localized, solve_quenched, SolverParams,
};
use crate::rng::{derive_seed, stream_rng};
use crate::scales::{Envelope, ScaleHierarchy};
use crate::stats::{binomial_stderr, quantile, Estimate};

const STREAM_ENV: u64 = 11;
const STREAM_FIELD: u64 = 12;
const STREAM_TAIL: u64 = 13;

/// Seed of realization `k` under master seed `seed`; shared by all levels.
pub fn environment_seed(seed: u64, k: usize) -> u64 {
    derive_seed(seed, &[STREAM_ENV, k as u64])
}

fn check_dims(spec: &EnvironmentSpec, h: &ScaleHierarchy) -> Result<()> {
    spec.validate()?;
    if spec.dimension != h.params.dimension {
        return Err(Error::InvalidParameter(
            "environment and scale dimensions differ".into(),
        ));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiParams {
    pub solver: SolverParams,
    /// Ball radius in units of `D̃_n` (6 in the definition of `π_n`).
    pub ball_factor: f64,
    /// Number of localized applications (6 in the definition of `π_n`).
    pub powers: usize,
    /// Ceiling on the work estimate (node updates); `None` disables the gate.
    pub budget: Option<f64>,
}

impl PiParams {
    pub fn new(h: f64) -> Self {
        Self {
            solver: SolverParams::new(h),
            ball_factor: 6.0,
            powers: 6,
            budget: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiRecord {
    pub level: usize,
    pub observable: String,
    pub estimate: Estimate,
    /// `(R̃_n)^p R_1 f (0, ω_k)` per realization.
    pub samples: Vec<f64>,
    /// `f(0, ω_k)` per realization.
    pub direct: Vec<f64>,
    pub env_seeds: Vec<u64>,
    pub h: f64,
    pub ball_radius: f64,
    pub grid_nodes: usize,
    pub work: f64,
}

/// Geometry and cost of one `π_n` sample.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PiPlan {
    pub ball_radius: f64,
    pub grid: Grid,
    pub active: Cube,
    pub work_per_env: f64,
}

pub fn plan_pi(
    spec: &EnvironmentSpec,
    hierarchy: &ScaleHierarchy,
    n: usize,
    obs: &LocalObservable,
    params: &PiParams,
) -> Result<PiPlan> {
    check_dims(spec, hierarchy)?;
    let level = hierarchy.level(n)?;
    let d = spec.dimension;
    let s = &params.solver;
    let (_, lam) = spec.eigenvalue_bounds();
    let b = spec.drift_bound();
    let ball = params.ball_factor * level.d_tilde;
    let hw = ball + 2.0 * s.h + s.margin_cells_with(lam, b, 1.0) as f64 * s.h;
    let grid = Grid::cube(vec![0.0; d], hw, s.h)?;
    let active = Cube::centered(d, grid.half_widths()[0] + obs.radius(spec) + spec.bump.radius + 1.0);
    let nodes = grid.len() as f64;
    let ball_nodes = (2.0 * (ball / s.h).ceil() + 3.0).powi(d as i32);
    let work = nodes * (1.0 + s.steps_with(d, lam, 1.0) as f64)
        + params.powers as f64 * ball_nodes * s.steps_with(d, lam, level.time()) as f64;
    Ok(PiPlan {
        ball_radius: ball,
        grid,
        active,
        work_per_env: work,
    })
}

fn gate(work: f64, budget: Option<f64>) -> Result<()> {
    match budget {
        Some(c) if work > c => Err(Error::Budget {
            estimate: work,
            ceiling: c,
        }),
        _ => Ok(()),
    }
}

/// One sample `(R̃_n)^p R_1 f(0, ω)` and `f(0, ω)` for a realization.
pub fn pi_sample(
    env: &EnvironmentRealization,
    hierarchy: &ScaleHierarchy,
    n: usize,
    obs: &LocalObservable,
    plan: &PiPlan,
    params: &PiParams,
) -> Result<(f64, f64)> {
    let level = hierarchy.level(n)?;
    let f = GridField::try_from_fn(plan.grid.clone(), |x| evaluate_observable(obs, env, x))?
        .with_level(n);
    let direct = f.center_value();
    let mut g = solve_quenched(env, &f, 1.0, &params.solver)?;
    let origin = vec![0.0; env.dim()];
    for _ in 0..params.powers {
        g = solve_localized(env, &g, level.time(), plan.ball_radius, &origin, &params.solver)?;
    }
    Ok((g.center_value(), direct))
}

/// `π̂_n(f)`: average over `n_env` realizations of `(R̃_n)^6 R_1 f(0, ω)`.
pub fn estimate_pi_n(
    spec: &Arc<EnvironmentSpec>,
    hierarchy: &ScaleHierarchy,
    n: usize,
    obs: &LocalObservable,
    n_env: usize,
    params: &PiParams,
    seed: u64,
) -> Result<PiRecord> {
    let plan = plan_pi(spec, hierarchy, n, obs, params)?;
    let work = plan.work_per_env * n_env as f64;
    gate(work, params.budget)?;
    if n_env < 2 {
        return Err(Error::InsufficientSamples { got: n_env, need: 2 });
    }
    let env_seeds: Vec<u64> = (0..n_env).map(|k| environment_seed(seed, k)).collect();
    let pairs = env_seeds
        .par_iter()
        .map(|&s| {
            let env = sample_environment(spec, s, plan.active.clone())?;
            pi_sample(&env, hierarchy, n, obs, &plan, params)
        })
        .collect::<Result<Vec<_>>>()?;
    let samples: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let direct: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    Ok(PiRecord {
        level: n,
        observable: obs.id(),
        estimate: Estimate::from_samples(&samples, seed)?,
        samples,
        direct,
        env_seeds,
        h: params.solver.h,
        ball_radius: plan.ball_radius,
        grid_nodes: plan.grid.len(),
        work,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CauchyGap {
    pub level: usize,
    pub lower: PiRecord,
    pub upper: PiRecord,
    /// `|π̂_{n+1} − π̂_n|`
    pub gap: f64,
    /// Standard error of the paired differences.
    pub stderr: f64,
    /// `sqrt(se_n² + se_{n+1}²)`, ignoring the pairing.
    pub unpaired_stderr: f64,
    pub envelope: f64,
    pub envelope_ratio: f64,
}

/// `|π̂_{n+1}(f) − π̂_n(f)|` on matched environment seeds. `upper` gives the
/// solver settings for level `n + 1` (a coarser grid is usually needed).
pub fn cauchy_gap(
    spec: &Arc<EnvironmentSpec>,
    hierarchy: &ScaleHierarchy,
    n: usize,
    obs: &LocalObservable,
    n_env: usize,
    lower: &PiParams,
    upper: &PiParams,
    seed: u64,
) -> Result<CauchyGap> {
    hierarchy.level(n + 1)?;
    let plan_lo = plan_pi(spec, hierarchy, n, obs, lower)?;
    let plan_hi = plan_pi(spec, hierarchy, n + 1, obs, upper)?;
    let total = (plan_lo.work_per_env + plan_hi.work_per_env) * n_env as f64;
    gate(total, upper.budget.or(lower.budget))?;
    let a = estimate_pi_n(spec, hierarchy, n, obs, n_env, lower, seed)?;
    let b = estimate_pi_n(spec, hierarchy, n + 1, obs, n_env, upper, seed)?;
    let diffs: Vec<f64> = b.samples.iter().zip(&a.samples).map(|(x, y)| x - y).collect();
    let paired = Estimate::from_samples(&diffs, seed)?;
    let envelope = hierarchy.decay_envelope(n, Envelope::CauchyGap)?;
    let gap = (b.estimate.mean - a.estimate.mean).abs();
    Ok(CauchyGap {
        level: n,
        unpaired_stderr: (a.estimate.stderr.powi(2) + b.estimate.stderr.powi(2)).sqrt(),
        lower: a,
        upper: b,
        gap,
        stderr: paired.stderr,
        envelope,
        envelope_ratio: gap / envelope,
    })
}

/// Random Fourier field `Σ_m c_m cos(ω_m · x + φ_m)` with Gaussian spectral
/// density of correlation length `length`: a smooth stand-in for
/// Gaussian-smoothed white noise that can be sampled on any grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FourierField {
    pub frequencies: Vec<Vec<f64>>,
    pub phases: Vec<f64>,
    pub amplitudes: Vec<f64>,
    pub scale: f64,
}

impl FourierField {
    pub fn sample(d: usize, modes: usize, length: f64, seed: u64) -> Self {
        let mut rng = stream_rng(seed);
        let mut frequencies = Vec::with_capacity(modes);
        let mut phases = Vec::with_capacity(modes);
        let mut amplitudes = Vec::with_capacity(modes);
        for _ in 0..modes {
            frequencies.push(
                (0..d)
                    .map(|_| rng.sample::<f64, _>(StandardNormal) / length)
                    .collect(),
            );
            phases.push(rng.random_range(0.0..std::f64::consts::TAU));
            amplitudes.push(rng.sample::<f64, _>(StandardNormal) * (2.0 / modes as f64).sqrt());
        }
        Self {
            frequencies,
            phases,
            amplitudes,
            scale: 1.0,
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let mut s = 0.0;
        for ((w, p), a) in self.frequencies.iter().zip(&self.phases).zip(&self.amplitudes) {
            let arg: f64 = w.iter().zip(x).map(|(a, b)| a * b).sum::<f64>() + p;
            s += a * arg.cos();
        }
        self.scale * s
    }

    pub fn on_grid(&self, grid: &Grid) -> GridField {
        GridField::from_fn(grid.clone(), |x| self.value(x))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlParams {
    pub solver: SolverParams,
    /// Frozen `α̂_n` for the Gaussian part of the defect.
    pub alpha: f64,
    /// Cutoff radius `v = multiplier · L_n`.
    pub cutoff_multiplier: f64,
    pub n_fields: usize,
    /// Correlation length of the test fields in units of `L_n`.
    pub correlation_length: f64,
    pub fourier_modes: usize,
    /// Paths per realization for the localization check (0 disables it).
    pub tail_paths: usize,
    pub tail_dt: Option<f64>,
    /// Also solve at `h/2` and report Richardson error estimates.
    pub refine: bool,
}

impl ControlParams {
    pub fn new(h: f64, d: usize, alpha: f64) -> Self {
        Self {
            solver: SolverParams::new(h),
            alpha,
            cutoff_multiplier: 30.0 * (d as f64).sqrt(),
            n_fields: 4,
            correlation_length: 0.5,
            fourier_modes: 32,
            tail_paths: 0,
            tail_dt: None,
            refine: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlStatistics {
    pub level: usize,
    /// `ratios[k][j] = |χ_{n,0} S_n f_j|_n / |f_j|_n` in realization `k`.
    pub ratios: Vec<Vec<f64>>,
    /// Richardson error estimates of each ratio (empty unless refined).
    pub discretization: Vec<Vec<f64>>,
    pub envelope: f64,
    pub fraction_below_envelope: f64,
    pub q10: f64,
    pub median: f64,
    pub q90: f64,
    /// Per realization: whether `P(X*_{L²} >= D_n)` stayed below `e^{-1}`
    /// (plus three binomial standard errors).
    pub tail_pass: Vec<Option<bool>>,
    /// Fraction of realizations where every ratio is below the envelope and
    /// the tail check (if run) passed.
    pub event_frequency: f64,
}

impl ControlStatistics {
    pub fn all_ratios(&self) -> Vec<f64> {
        self.ratios.iter().flatten().copied().collect()
    }
}

/// Test fields `f_j`, normalized to `|f_j|_n = 1` on `grid`.
pub fn contraction_fields(
    grid: &Grid,
    l: f64,
    beta: f64,
    params: &ControlParams,
    seed: u64,
) -> Vec<FourierField> {
    (0..params.n_fields)
        .map(|j| {
            let mut f = FourierField::sample(
                grid.dim(),
                params.fourier_modes,
                params.correlation_length * l,
                derive_seed(seed, &[STREAM_FIELD, j as u64]),
            );
            let norm = scaled_holder_norm(&f.on_grid(grid), l, beta);
            f.scale = if norm > 0.0 { 1.0 / norm } else { 1.0 };
            f
        })
        .collect()
}

fn cut_defect(
    env: &EnvironmentRealization,
    field: &FourierField,
    f_half_width: f64,
    out: &Grid,
    cut: &GridField,
    l: f64,
    solver: &SolverParams,
    alpha: f64,
) -> Result<GridField> {
    let g = Grid::cube(vec![0.0; env.dim()], f_half_width, solver.h)?;
    let f = field.on_grid(&g);
    let s = defect_field(env, &f, l, alpha, solver)?;
    let s = if (s.grid.h - out.h).abs() < 1e-12 {
        s.restrict(out)?
    } else {
        s.sample_on(out)?
    };
    s.mul(cut)
}

/// Hölder contraction statistics of the cut-off defect `χ_{n,0} S_n f`.
pub fn contraction_stat(
    spec: &Arc<EnvironmentSpec>,
    hierarchy: &ScaleHierarchy,
    n: usize,
    n_env: usize,
    params: &ControlParams,
    seed: u64,
) -> Result<ControlStatistics> {
    check_dims(spec, hierarchy)?;
    let level = hierarchy.level(n)?.clone();
    let d = spec.dimension;
    let l = level.l_f64();
    let t = level.time();
    let beta = hierarchy.beta();
    let s = &params.solver;
    let (_, lam) = spec.eigenvalue_bounds();
    let b = spec.drift_bound();
    let v = params.cutoff_multiplier * l;
    let out = Grid::cube(vec![0.0; d], 2.0 * v + 2.0 * l, s.h)?;
    let gauss = 6.0 * (params.alpha * t).sqrt() + s.h;
    let f_hw = out.half_widths()[0] + s.margin_with(lam, b, t).max(gauss) + 2.0 * s.h;
    let reach = (level.d + 12.0 * (lam * d as f64 * t).sqrt()).max(f_hw);
    let active = Cube::centered(d, reach + spec.bump.radius + 1.0);
    let f_grid = Grid::cube(vec![0.0; d], f_hw, s.h)?;
    let fields = contraction_fields(&f_grid, l, beta, params, seed);
    let cut = cutoff_field(v, &vec![0.0; d], &out)?;
    let envelope = hierarchy.decay_envelope(n, Envelope::HolderContraction)?;
    let fine = s.with_h(s.h / 2.0);
    let f_norms: Vec<f64> = fields
        .iter()
        .map(|f| scaled_holder_norm(&f.on_grid(&f_grid), l, beta))
        .collect();

    let per_env = (0..n_env)
        .into_par_iter()
        .map(|k| {
            let env = sample_environment(spec, environment_seed(seed, k), active.clone())?;
            let mut ratios = Vec::with_capacity(fields.len());
            let mut disc = Vec::new();
            for (field, &norm) in fields.iter().zip(&f_norms) {
                let cs = cut_defect(&env, field, f_hw, &out, &cut, l, s, params.alpha)?;
                let r = scaled_holder_norm(&cs, l, beta) / norm;
                ratios.push(r);
                if params.refine {
                    let cs_fine = cut_defect(&env, field, f_hw, &out, &cut, l, &fine, params.alpha)?;
                    let diff = cs.sub(&cs_fine)?;
                    disc.push(4.0 / 3.0 * scaled_holder_norm(&diff, l, beta) / norm);
                }
            }
            let tail = if params.tail_paths > 0 {
                let dt = params.tail_dt.unwrap_or(t / 1e4);
                let cfg = PathConfig::new(dt, t, vec![0.0; d]);
                let env_seed = derive_seed(seed, &[STREAM_TAIL, k as u64]);
                let mut hits = 0usize;
                for p in 0..params.tail_paths {
                    let r = simulate_path(&env, &cfg, derive_seed(env_seed, &[p as u64]))?;
                    if r.running_max >= level.d {
                        hits += 1;
                    }
                }
                let freq = hits as f64 / params.tail_paths as f64;
                let bound = hierarchy.decay_envelope(n, Envelope::LocalizationTail { v: level.d })?;
                Some(freq <= bound + 3.0 * binomial_stderr(freq, params.tail_paths))
            } else {
                None
            };
            Ok((ratios, disc, tail))
        })
        .collect::<Result<Vec<_>>>()?;

    let ratios: Vec<Vec<f64>> = per_env.iter().map(|e| e.0.clone()).collect();
    let discretization: Vec<Vec<f64>> = per_env.iter().map(|e| e.1.clone()).collect();
    let tail_pass: Vec<Option<bool>> = per_env.iter().map(|e| e.2).collect();
    let all: Vec<f64> = ratios.iter().flatten().copied().collect();
    let below = all.iter().filter(|&&r| r <= envelope).count();
    let events = ratios
        .iter()
        .zip(&tail_pass)
        .filter(|(rs, tp)| rs.iter().all(|&r| r <= envelope) && tp.unwrap_or(true))
        .count();
    let (q10, median, q90) = if all.is_empty() {
        (0.0, 0.0, 0.0)
    } else {
        (quantile(&all, 0.1), quantile(&all, 0.5), quantile(&all, 0.9))
    };
    Ok(ControlStatistics {
        level: n,
        fraction_below_envelope: if all.is_empty() { 0.0 } else { below as f64 / all.len() as f64 },
        ratios,
        discretization,
        envelope,
        q10,
        median,
        q90,
        tail_pass,
        event_frequency: if n_env == 0 { 0.0 } else { events as f64 / n_env as f64 },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoarseParams {
    pub solver: SolverParams,
    pub ball_factor: f64,
    pub budget: Option<f64>,
}

impl CoarseParams {
    pub fn new(h: f64) -> Self {
        Self {
            solver: SolverParams::new(h),
            ball_factor: 6.0,
            budget: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoarseComparison {
    pub level: usize,
    pub k: usize,
    pub region_radius: f64,
    pub sup_difference: f64,
    pub envelope: f64,
    pub envelope_ratio: f64,
    pub f_sup: f64,
    pub work: f64,
}

/// Half-width of the data grid `f` must cover for [`coarse_comparison`].
pub fn coarse_comparison_extent(
    env: &EnvironmentRealization,
    hierarchy: &ScaleHierarchy,
    n: usize,
    k: usize,
    alpha: f64,
    params: &CoarseParams,
) -> Result<f64> {
    let lo = hierarchy.level(n)?;
    let hi = hierarchy.level(n + 1)?;
    let region = 4.0 * (k as f64).sqrt() * hi.d_tilde;
    let s = &params.solver;
    let steps = k as f64 * (lo.ell * lo.ell) as f64;
    let left = s.margin(env, steps * lo.time());
    let gauss = 6.0 * ((steps - 6.0).max(0.0) * alpha * lo.time()).sqrt() + s.h;
    let ball = params.ball_factor * lo.d_tilde;
    let right = gauss + 6.0 * (ball + 3.0 * s.h);
    Ok(region + left.max(right) + 2.0 * s.h)
}

/// `sup |(R_{n+1})^k f − (R̄_n)^{kℓ_n² − 6} (R̃_n)^6 f|` over `B_{4√k D̃_{n+1}}`.
/// `R_{n+1}^k` is one quenched solve of duration `k ℓ_n² L_n²`; each `R̃_n`
/// application is a ball solve centered at every output point.
pub fn coarse_comparison(
    env: &EnvironmentRealization,
    hierarchy: &ScaleHierarchy,
    n: usize,
    k: usize,
    f: &GridField,
    alpha: f64,
    params: &CoarseParams,
) -> Result<CoarseComparison> {
    let lo = hierarchy.level(n)?.clone();
    let hi = hierarchy.level(n + 1)?.clone();
    let m_total = k * (lo.ell * lo.ell) as usize;
    if k == 0 || m_total < 6 {
        return Err(Error::InvalidParameter(format!(
            "need k ℓ_n² >= 6, got {m_total}"
        )));
    }
    let s = &params.solver;
    let d = env.dim();
    let ball = params.ball_factor * lo.d_tilde;
    let region = 4.0 * (k as f64).sqrt() * hi.d_tilde;
    let (lam, _) = env.coefficient_bounds();
    let ball_nodes = (2.0 * (ball / s.h).ceil() + 3.0).powi(d as i32);
    let work = 6.0 * f.grid.len() as f64 * ball_nodes * s.steps_with(d, lam, lo.time()) as f64
        + f.grid.len() as f64 * s.steps_with(d, lam, m_total as f64 * lo.time()) as f64;
    gate(work, params.budget)?;
    let out = Grid::cube(f.grid.center.clone(), region, s.h)?;

    let left = solve_quenched(env, f, m_total as f64 * lo.time(), s)?;
    let mut g = f.clone();
    for _ in 0..6 {
        g = localized_field(env, &g, lo.time(), ball, s)?;
    }
    let right = gaussian_steps(&g, alpha * lo.time(), m_total - 6)?;
    if !left.grid.contains_grid(&out) || !right.grid.contains_grid(&out) {
        return Err(Error::BoxTooSmall {
            needed: region,
            available: left.grid.half_widths()[0].min(right.grid.half_widths()[0]),
        });
    }
    let diff = left.restrict(&out)?.sub(&right.restrict(&out)?)?;
    let sup_difference = diff.sup_norm();
    let envelope = hierarchy.decay_envelope(n, Envelope::CauchyGap)?;
    Ok(CoarseComparison {
        level: n,
        k,
        region_radius: region,
        sup_difference,
        envelope,
        envelope_ratio: sup_difference / envelope,
        f_sup: f.sup_norm(),
        work,
    })
}
