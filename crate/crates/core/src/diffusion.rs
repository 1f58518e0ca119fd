//! Euler–Maruyama paths in a frozen environment and the annealed Monte Carlo
//! estimators built on them.
//!
//! Each path draws its Gaussian increments from its own ChaCha stream whose
//! seed is derived from `(master, environment index, path index)`. Results
//! are gathered in index order and summed with compensation, so parallel and
//! sequential runs agree bit for bit.

use std::sync::Arc;

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::environment::{
    sample_environment, sym_sqrt, CoefScratch, Cube, EnvironmentRealization, EnvironmentSpec,
    SignedPermutation,
};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, stream_rng};
use crate::scales::{Envelope, ScaleHierarchy};
use crate::stats::{binomial_stderr, mean, CompensatedSum};

pub use crate::stats::Estimate;

const STREAM_ENV: u64 = 1;
const STREAM_PATH: u64 = 2;
const STREAM_TAIL: u64 = 3;
const STREAM_MEAN: u64 = 4;
const STREAM_SYM_LHS: u64 = 5;
const STREAM_SYM_RHS: u64 = 6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathConfig {
    pub dt: f64,
    pub horizon: f64,
    /// Stopping radius around the start point; `None` disables stopping.
    pub stop_radius: Option<f64>,
    pub start: Vec<f64>,
    /// End the simulation at the exit time instead of running to the horizon.
    pub halt_on_exit: bool,
}

impl PathConfig {
    pub fn new(dt: f64, horizon: f64, start: Vec<f64>) -> Self {
        Self {
            dt,
            horizon,
            stop_radius: None,
            start,
            halt_on_exit: false,
        }
    }

    pub fn with_stop(mut self, radius: f64, halt: bool) -> Self {
        self.stop_radius = Some(radius);
        self.halt_on_exit = halt;
        self
    }

    pub fn validate(&self, drift_bound: f64) -> Result<()> {
        if !(self.dt > 0.0 && self.horizon > 0.0 && self.dt <= self.horizon * (1.0 + 1e-12)) {
            return Err(Error::InvalidParameter(format!(
                "need 0 < dt <= T, got dt = {}, T = {}",
                self.dt, self.horizon
            )));
        }
        if let Some(r) = self.stop_radius {
            if r < 0.0 {
                return Err(Error::InvalidParameter("stopping radius must be >= 0".into()));
            }
            if r > 0.0 && drift_bound * self.dt > r / 100.0 {
                return Err(Error::InvalidParameter(format!(
                    "per-step drift displacement {} exceeds stopping radius / 100",
                    drift_bound * self.dt
                )));
            }
        }
        Ok(())
    }

    pub fn n_steps(&self) -> usize {
        ((self.horizon / self.dt) - 1e-9).ceil().max(1.0) as usize
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathResult {
    pub endpoint: Vec<f64>,
    /// `max_{s <= T} |X_s − X_0|` over the simulated steps.
    pub running_max: f64,
    pub exit_time: Option<f64>,
    /// `X_{T ∧ exit}`.
    pub stopped_endpoint: Vec<f64>,
    pub steps: usize,
}

/// Simulates one path of `dX = −b(X) dt + σ(X) dB` from `config.start`.
pub fn simulate_path(
    env: &EnvironmentRealization,
    config: &PathConfig,
    seed: u64,
) -> Result<PathResult> {
    simulate_path_visit(env, config, seed, |_, _, _| Ok(()))
}

/// [`simulate_path`] calling `visit(k, t_k, X_{t_k})` at the start point and
/// after every step.
pub fn simulate_path_visit<F>(
    env: &EnvironmentRealization,
    config: &PathConfig,
    seed: u64,
    mut visit: F,
) -> Result<PathResult>
where
    F: FnMut(usize, f64, &[f64]) -> Result<()>,
{
    let d = env.dim();
    if config.start.len() != d {
        return Err(Error::InvalidParameter("start point has wrong dimension".into()));
    }
    let (lambda_max, b_max) = env.coefficient_bounds();
    config.validate(b_max)?;
    let mut scratch = CoefScratch::new(d);
    if !env.evaluable_with(&config.start, &mut scratch) {
        return Err(Error::PathExit { step: 0, time: 0.0 });
    }
    let x0 = config.start.clone();
    let mut x = x0.clone();
    visit(0, 0.0, &x)?;
    let mut rng = stream_rng(seed);
    let n = config.n_steps();
    let mut xi = vec![0.0; d];
    let mut sig = vec![0.0; d * d];
    let mut running_max: f64 = 0.0;
    let mut exit_time = None;
    let mut stopped = None;
    if let Some(r) = config.stop_radius {
        if r <= 0.0 {
            exit_time = Some(0.0);
            stopped = Some(x0.clone());
            if config.halt_on_exit {
                return Ok(PathResult {
                    endpoint: x0.clone(),
                    running_max: 0.0,
                    exit_time,
                    stopped_endpoint: x0,
                    steps: 0,
                });
            }
        }
    }
    let trivial = env.is_trivial();
    let iso = env.ellipticity_lower() == lambda_max;
    let iso_scale = lambda_max.sqrt();
    let mut steps = 0;
    for k in 0..n {
        let h = if k + 1 == n {
            config.horizon - config.dt * (n - 1) as f64
        } else {
            config.dt
        };
        let sh = h.sqrt();
        for v in xi.iter_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
        if trivial || iso && b_max == 0.0 {
            if !env.evaluable_with(&x, &mut scratch) {
                return Err(Error::PathExit {
                    step: k,
                    time: k as f64 * config.dt,
                });
            }
            let s = sh * iso_scale;
            for i in 0..d {
                x[i] += s * xi[i];
            }
        } else {
            if env.coefficients_into(&x, &mut scratch).is_err() {
                return Err(Error::PathExit {
                    step: k,
                    time: k as f64 * config.dt,
                });
            }
            sym_sqrt(&scratch.a, d, &mut sig);
            for i in 0..d {
                let mut noise = 0.0;
                for j in 0..d {
                    noise += sig[i * d + j] * xi[j];
                }
                x[i] += -scratch.b[i] * h + sh * noise;
            }
        }
        steps += 1;
        let mut r2 = 0.0;
        for i in 0..d {
            if !x[i].is_finite() {
                return Err(Error::NonFinite { step: k });
            }
            r2 += (x[i] - x0[i]) * (x[i] - x0[i]);
        }
        let dist = r2.sqrt();
        running_max = running_max.max(dist);
        let now = if k + 1 == n { config.horizon } else { config.dt * (k + 1) as f64 };
        visit(k + 1, now, &x)?;
        if exit_time.is_none() {
            if let Some(r) = config.stop_radius {
                if dist >= r {
                    exit_time = Some((config.dt * k as f64 + h).min(config.horizon));
                    stopped = Some(x.clone());
                    if config.halt_on_exit {
                        break;
                    }
                }
            }
        }
    }
    let stopped_endpoint = stopped.unwrap_or_else(|| x.clone());
    Ok(PathResult {
        endpoint: x,
        running_max,
        exit_time,
        stopped_endpoint,
        steps,
    })
}

/// Active box for paths of duration `t` that may reach distance `reach`.
pub fn path_box(spec: &EnvironmentSpec, reach: f64, t: f64) -> Cube {
    let (_, hi) = spec.eigenvalue_bounds();
    let d = spec.dimension as f64;
    let hw = reach + 12.0 * (hi.max(1.0) * d * t).sqrt() + spec.bump.radius + 1.0;
    Cube::centered(spec.dimension, hw)
}

/// Environment factory: `(environment seed, active box) -> realization`.
pub trait EnvironmentSource: Sync {
    fn dim(&self) -> usize;
    fn drift_bound(&self) -> f64;
    fn lambda_max(&self) -> f64;
    fn make(&self, seed: u64, active: Cube) -> Result<EnvironmentRealization>;
}

impl EnvironmentSource for Arc<EnvironmentSpec> {
    fn dim(&self) -> usize {
        self.dimension
    }
    fn drift_bound(&self) -> f64 {
        EnvironmentSpec::drift_bound(self)
    }
    fn lambda_max(&self) -> f64 {
        self.eigenvalue_bounds().1
    }
    fn make(&self, seed: u64, active: Cube) -> Result<EnvironmentRealization> {
        sample_environment(self, seed, active)
    }
}

/// `A ≡ c I`, `b ≡ 0` for every seed.
#[derive(Debug, Clone, Copy)]
pub struct ConstantSource {
    pub dimension: usize,
    pub diffusivity: f64,
}

impl EnvironmentSource for ConstantSource {
    fn dim(&self) -> usize {
        self.dimension
    }
    fn drift_bound(&self) -> f64 {
        0.0
    }
    fn lambda_max(&self) -> f64 {
        self.diffusivity
    }
    fn make(&self, _seed: u64, active: Cube) -> Result<EnvironmentRealization> {
        Ok(EnvironmentRealization::constant_diffusivity(
            self.dimension,
            self.diffusivity,
            active,
        ))
    }
}

fn source_box(src: &impl EnvironmentSource, reach: f64, t: f64, dt: f64) -> Cube {
    let d = src.dim() as f64;
    let lam = src.lambda_max().max(1.0);
    let hw = reach + 10.0 * (lam * d * dt).sqrt() + src.drift_bound() * dt + 2.0;
    let hw = if reach.is_finite() {
        hw
    } else {
        12.0 * (lam * d * t).sqrt() + src.drift_bound() * t + 2.0
    };
    Cube::centered(src.dim(), hw)
}

/// Default time step `L_n² / 10⁴`.
pub fn default_dt(h: &ScaleHierarchy, n: usize) -> Result<f64> {
    Ok(h.level(n)?.time() / 1e4)
}

/// `α̂_n = E₀|X_{T_n ∧ L_n²}|² / (d L_n²)`, averaged over `n_env` environments
/// with `n_paths` paths each. With two or more environments the standard
/// error is computed from the per-environment means, which is the correct
/// annealed error under environment clustering.
pub fn estimate_alpha(
    spec: &Arc<EnvironmentSpec>,
    hierarchy: &ScaleHierarchy,
    n: usize,
    n_env: usize,
    n_paths: usize,
    dt: Option<f64>,
    seed: u64,
) -> Result<Estimate> {
    spec.validate()?;
    if spec.dimension != hierarchy.params.dimension {
        return Err(Error::InvalidParameter(
            "environment and scale dimensions differ".into(),
        ));
    }
    estimate_alpha_with(spec, hierarchy, n, n_env, n_paths, dt, seed)
}

pub fn estimate_alpha_with(
    source: &impl EnvironmentSource,
    hierarchy: &ScaleHierarchy,
    n: usize,
    n_env: usize,
    n_paths: usize,
    dt: Option<f64>,
    seed: u64,
) -> Result<Estimate> {
    let samples = alpha_samples(source, hierarchy, n, n_env, n_paths, dt, seed)?;
    if n_env >= 2 {
        let means: Vec<f64> = samples.iter().map(|s| mean(s)).collect();
        Estimate::from_samples(&means, seed)
    } else {
        let flat: Vec<f64> = samples.concat();
        Estimate::from_samples(&flat, seed)
    }
}

/// Per-environment lists of `|X_{T_n ∧ L_n²}|² / (d L_n²)`.
pub fn alpha_samples(
    source: &impl EnvironmentSource,
    hierarchy: &ScaleHierarchy,
    n: usize,
    n_env: usize,
    n_paths: usize,
    dt: Option<f64>,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    if n_env * n_paths < 2 {
        return Err(Error::InsufficientSamples {
            got: n_env * n_paths,
            need: 2,
        });
    }
    let level = hierarchy.level(n)?.clone();
    let t = level.time();
    let dt = match dt {
        Some(v) => v,
        None => default_dt(hierarchy, n)?,
    };
    let d = source.dim();
    let active = source_box(source, level.d_tilde, t, dt);
    let scale = 1.0 / (d as f64 * t);
    (0..n_env)
        .into_par_iter()
        .map(|e| {
            let env_seed = derive_seed(seed, &[STREAM_ENV, e as u64]);
            let env = source.make(env_seed, active.clone())?;
            let cfg = PathConfig::new(dt, t, vec![0.0; d]).with_stop(level.d_tilde, true);
            (0..n_paths)
                .map(|p| {
                    let ps = derive_seed(env_seed, &[STREAM_PATH, p as u64]);
                    let r = simulate_path(&env, &cfg, ps)?;
                    let r2: f64 = r.stopped_endpoint.iter().map(|v| v * v).sum();
                    Ok(r2 * scale)
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect()
}

/// Halves `dt` from the default until successive `α̂` differ by less than the
/// larger standard error, or `max_halvings` is reached.
pub fn alpha_dt_sweep(
    spec: &Arc<EnvironmentSpec>,
    hierarchy: &ScaleHierarchy,
    n: usize,
    n_env: usize,
    n_paths: usize,
    max_halvings: usize,
    seed: u64,
) -> Result<Vec<(f64, Estimate)>> {
    let mut dt = default_dt(hierarchy, n)?;
    let mut out = vec![(dt, estimate_alpha(spec, hierarchy, n, n_env, n_paths, Some(dt), seed)?)];
    for _ in 0..max_halvings {
        dt /= 2.0;
        let e = estimate_alpha(spec, hierarchy, n, n_env, n_paths, Some(dt), seed)?;
        let prev = out.last().expect("non-empty").1;
        out.push((dt, e));
        if (e.mean - prev.mean).abs() < e.stderr.max(prev.stderr) {
            break;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailConfig {
    pub n_env: usize,
    pub paths_per_env: usize,
    pub dt: Option<f64>,
    /// Time for the mean-displacement and symmetry statistics.
    pub t: f64,
    pub symmetry_start: Vec<f64>,
    pub symmetries: Vec<SignedPermutation>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailRow {
    pub level: usize,
    pub v: f64,
    pub exceedances: usize,
    pub trials: usize,
    pub empirical: f64,
    pub stderr: f64,
    /// `exp(−v / D_n)`
    pub envelope: f64,
}

impl TailRow {
    pub fn within(&self, k: f64) -> bool {
        self.empirical <= self.envelope + k * self.stderr
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SymmetryRow {
    pub symmetry: SignedPermutation,
    pub start: Vec<f64>,
    /// `Ê_x[(r X_t)_i]`
    pub lhs: Vec<Estimate>,
    /// `Ê_{rx}[(X_t)_i]`
    pub rhs: Vec<Estimate>,
    pub max_abs_diff: f64,
    /// `max_i |lhs_i − rhs_i| / sqrt(se_lhs² + se_rhs²)`
    pub max_z: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailReport {
    pub level: usize,
    pub d_n: f64,
    pub horizon: f64,
    pub rows: Vec<TailRow>,
    pub mean_time: f64,
    pub mean_displacement: Vec<Estimate>,
    pub symmetry: Vec<SymmetryRow>,
}

impl TailReport {
    pub fn mean_max_z(&self) -> f64 {
        self.mean_displacement
            .iter()
            .map(|e| if e.stderr > 0.0 { e.mean.abs() / e.stderr } else if e.mean == 0.0 { 0.0 } else { f64::INFINITY })
            .fold(0.0, f64::max)
    }
}

/// Per-environment cluster means of `g(path)` (a `d`-vector per path).
fn cluster_means(
    source: &impl EnvironmentSource,
    active: &Cube,
    cfg: &PathConfig,
    n_env: usize,
    n_paths: usize,
    seed: u64,
    stream: u64,
    g: impl Fn(&PathResult) -> Vec<f64> + Sync,
) -> Result<Vec<Vec<f64>>> {
    (0..n_env)
        .into_par_iter()
        .map(|e| {
            let env_seed = derive_seed(seed, &[stream, e as u64]);
            let env = source.make(env_seed, active.clone())?;
            let d = cfg.start.len();
            let mut sums = vec![CompensatedSum::new(); d];
            for p in 0..n_paths {
                let r = simulate_path(&env, cfg, derive_seed(env_seed, &[STREAM_PATH, p as u64]))?;
                for (s, v) in sums.iter_mut().zip(g(&r)) {
                    s.add(v);
                }
            }
            Ok(sums.iter().map(|s| s.value() / n_paths as f64).collect())
        })
        .collect()
}

fn per_coordinate(clusters: &[Vec<f64>], seed: u64) -> Result<Vec<Estimate>> {
    let d = clusters.first().map(|c| c.len()).unwrap_or(0);
    (0..d)
        .map(|i| {
            let col: Vec<f64> = clusters.iter().map(|c| c[i]).collect();
            Estimate::from_samples(&col, seed)
        })
        .collect()
}

/// Localization tails, annealed mean displacement and symmetry discrepancies.
pub fn path_statistics(
    source: &impl EnvironmentSource,
    hierarchy: &ScaleHierarchy,
    n: usize,
    vs: &[f64],
    config: &TailConfig,
    seed: u64,
) -> Result<TailReport> {
    let level = hierarchy.level(n)?.clone();
    let d = source.dim();
    let horizon = level.time();
    let dt_tail = config.dt.unwrap_or(horizon / 1e4);
    let dt_mean = config.dt.unwrap_or(config.t / 1e3).min(config.t);
    let v_max = vs.iter().copied().fold(0.0, f64::max);

    // Tail frequencies: counts per environment, pooled.
    let tail_box = source_box(source, f64::INFINITY, horizon, dt_tail);
    let tail_box = Cube {
        half_width: tail_box.half_width + v_max,
        ..tail_box
    };
    let tail_cfg = PathConfig::new(dt_tail, horizon, vec![0.0; d]);
    let maxima: Vec<Vec<f64>> = (0..config.n_env)
        .into_par_iter()
        .map(|e| {
            let env_seed = derive_seed(seed, &[STREAM_TAIL, e as u64]);
            let env = source.make(env_seed, tail_box.clone())?;
            (0..config.paths_per_env)
                .map(|p| {
                    simulate_path(&env, &tail_cfg, derive_seed(env_seed, &[STREAM_PATH, p as u64]))
                        .map(|r| r.running_max)
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let trials = config.n_env * config.paths_per_env;
    let rows = vs
        .iter()
        .map(|&v| {
            let exceedances = maxima.iter().flatten().filter(|&&m| m >= v).count();
            let p = exceedances as f64 / trials as f64;
            Ok(TailRow {
                level: n,
                v,
                exceedances,
                trials,
                empirical: p,
                stderr: binomial_stderr(p, trials),
                envelope: hierarchy.decay_envelope(n, Envelope::LocalizationTail { v })?,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mean_box = source_box(source, f64::INFINITY, config.t, dt_mean);
    let sym_reach = config.symmetry_start.iter().map(|v| v.abs()).fold(0.0, f64::max) * (d as f64).sqrt();
    let mean_box = Cube {
        half_width: mean_box.half_width + sym_reach,
        ..mean_box
    };
    let cfg0 = PathConfig::new(dt_mean, config.t, vec![0.0; d]);
    let clusters = cluster_means(
        source,
        &mean_box,
        &cfg0,
        config.n_env,
        config.paths_per_env,
        seed,
        STREAM_MEAN,
        |r| r.endpoint.clone(),
    )?;
    let mean_displacement = per_coordinate(&clusters, seed)?;

    let mut symmetry = Vec::new();
    for (k, r) in config.symmetries.iter().enumerate() {
        let x = config.symmetry_start.clone();
        let rx = r.apply(&x);
        let lhs_seed = derive_seed(seed, &[STREAM_SYM_LHS, k as u64]);
        let rhs_seed = derive_seed(seed, &[STREAM_SYM_RHS, k as u64]);
        let cfg_l = PathConfig::new(dt_mean, config.t, x.clone());
        let cfg_r = PathConfig::new(dt_mean, config.t, rx);
        let rr = r.clone();
        let lhs_c = cluster_means(
            source,
            &mean_box,
            &cfg_l,
            config.n_env,
            config.paths_per_env,
            lhs_seed,
            STREAM_SYM_LHS,
            move |p| rr.apply(&p.endpoint),
        )?;
        let rhs_c = cluster_means(
            source,
            &mean_box,
            &cfg_r,
            config.n_env,
            config.paths_per_env,
            rhs_seed,
            STREAM_SYM_RHS,
            |p| p.endpoint.clone(),
        )?;
        let lhs = per_coordinate(&lhs_c, lhs_seed)?;
        let rhs = per_coordinate(&rhs_c, rhs_seed)?;
        let mut max_abs_diff: f64 = 0.0;
        let mut max_z: f64 = 0.0;
        for (a, b) in lhs.iter().zip(&rhs) {
            let diff = (a.mean - b.mean).abs();
            let se = (a.stderr * a.stderr + b.stderr * b.stderr).sqrt();
            max_abs_diff = max_abs_diff.max(diff);
            max_z = max_z.max(if se > 0.0 { diff / se } else if diff == 0.0 { 0.0 } else { f64::INFINITY });
        }
        symmetry.push(SymmetryRow {
            symmetry: r.clone(),
            start: x,
            lhs,
            rhs,
            max_abs_diff,
            max_z,
        });
    }

    Ok(TailReport {
        level: n,
        d_n: level.d,
        horizon,
        rows,
        mean_time: config.t,
        mean_displacement,
        symmetry,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scales::{build_hierarchy, ScaleParams};

    fn flat_env(d: usize) -> EnvironmentRealization {
        let spec = Arc::new(EnvironmentSpec::new(d, 0.0, 1));
        sample_environment(&spec, 3, Cube::centered(d, 100.0)).unwrap()
    }

    #[test]
    fn single_step_unrolls_the_recursion() {
        let spec = Arc::new(EnvironmentSpec::new(2, 0.1, 1));
        let env = sample_environment(&spec, 9, Cube::centered(2, 20.0)).unwrap();
        let x0 = vec![0.3, -0.2];
        let t = 0.5;
        let cfg = PathConfig::new(t, t, x0.clone());
        let r = simulate_path(&env, &cfg, 77).unwrap();
        let c = env.eval_coefficients(&x0).unwrap();
        let mut rng = stream_rng(77);
        let xi: Vec<f64> = (0..2).map(|_| StandardNormal.sample(&mut rng)).collect();
        for i in 0..2 {
            let noise: f64 = (0..2).map(|j| c.sigma[(i, j)] * xi[j]).sum();
            let expect = x0[i] - c.b[i] * t + t.sqrt() * noise;
            assert!((r.endpoint[i] - expect).abs() < 1e-14);
        }
        assert_eq!(r.steps, 1);
    }

    #[test]
    fn zero_stopping_radius_exits_immediately() {
        let env = flat_env(2);
        let cfg = PathConfig::new(0.01, 1.0, vec![1.0, 2.0]).with_stop(0.0, false);
        let r = simulate_path(&env, &cfg, 5).unwrap();
        assert_eq!(r.exit_time, Some(0.0));
        assert_eq!(r.stopped_endpoint, vec![1.0, 2.0]);
        assert!(r.running_max >= 0.0);
    }

    #[test]
    fn reruns_are_bit_identical() {
        let spec = Arc::new(EnvironmentSpec::new(3, 0.1, 1));
        let env = sample_environment(&spec, 4, Cube::centered(3, 30.0)).unwrap();
        let cfg = PathConfig::new(0.01, 2.0, vec![0.0; 3]).with_stop(1.5, false);
        let a = simulate_path(&env, &cfg, 123).unwrap();
        let b = simulate_path(&env, &cfg, 123).unwrap();
        assert_eq!(a, b);
        assert!(a.running_max
            >= a.endpoint.iter().map(|v| v * v).sum::<f64>().sqrt() - 1e-15);
        if let Some(t) = a.exit_time {
            assert!(t <= 2.0);
        }
    }

    #[test]
    fn leaving_the_box_is_an_error() {
        let spec = Arc::new(EnvironmentSpec::new(1, 0.0, 1));
        let env = sample_environment(&spec, 4, Cube::centered(1, 1.5)).unwrap();
        let cfg = PathConfig::new(0.01, 100.0, vec![0.0]);
        assert!(matches!(simulate_path(&env, &cfg, 1), Err(Error::PathExit { .. })));
    }

    #[test]
    fn brownian_endpoint_variance_matches_horizon() {
        let env = flat_env(2);
        let t = 2.0;
        let cfg = PathConfig::new(0.05, t, vec![0.0, 0.0]);
        let n = 10_000;
        let xs: Vec<f64> = (0..n)
            .map(|k| simulate_path(&env, &cfg, derive_seed(1, &[k])).unwrap().endpoint[0])
            .collect();
        let var = crate::stats::sample_std(&xs).powi(2);
        // Var of the sample variance of N(0, t) is 2 t² / (n − 1).
        let se = (2.0 * t * t / (n as f64 - 1.0)).sqrt();
        assert!((var - t).abs() < 3.0 * se, "var {var}");
    }

    #[test]
    fn constant_diffusivity_hook_scales_alpha() {
        let h = build_hierarchy(&ScaleParams {
            dimension: 2,
            beta: 0.5,
            a: 0.5,
            l0: 25,
            c0: 1.0,
            max_level: 0,
            strict_mode: false,
        })
        .unwrap();
        let src = ConstantSource {
            dimension: 2,
            diffusivity: 2.0,
        };
        let e = estimate_alpha_with(&src, &h, 0, 4, 400, Some(0.5), 11).unwrap();
        assert!(e.agrees_with(2.0, 3.0), "{e:?}");
    }
}
