//! Homogenization experiments. The ε-problem is never discretized directly:
//! `u^ε(x, t, ω) = u(x/ε, t/ε², ω)` for the unscaled quenched solution `u`,
//! so every ε-quantity is an unscaled solve read at a rescaled probe.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffusion::{simulate_path_visit, PathConfig};
use crate::environment::{
    evaluate_observable, sample_environment, Cube, EnvironmentRealization, EnvironmentSpec,
    LocalObservable,
};
use crate::error::{Error, Result};
use crate::grid::{Grid, GridField};
use crate::kernels::{solve_quenched_snapshots, SolverParams};
use crate::renorm::environment_seed;
use crate::stats::{mean, sample_std};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Probe {
    pub x: Vec<f64>,
    pub t: f64,
}

impl Probe {
    pub fn new(x: Vec<f64>, t: f64) -> Self {
        Self { x, t }
    }
}

/// Unscaled solutions at `y` for increasing times, from one solve on a grid
/// centered at `y`.
pub fn unscaled_snapshots(
    env: &EnvironmentRealization,
    obs: &LocalObservable,
    y: &[f64],
    times: &[f64],
    params: &SolverParams,
) -> Result<Vec<f64>> {
    let t_max = times.last().copied().unwrap_or(0.0);
    let hw = (params.margin_cells(env, t_max) + 1) as f64 * params.h;
    let grid = Grid::cube(y.to_vec(), hw, params.h)?;
    let f = GridField::try_from_fn(grid, |p| evaluate_observable(obs, env, p))?;
    let snaps = solve_quenched_snapshots(env, &f, times, params)?;
    Ok(snaps.iter().map(|u| u.center_value()).collect())
}

/// `u^ε(x, t)` as the unscaled solution at `(x/ε, t/ε²)`.
pub fn solve_epsilon(
    env: &EnvironmentRealization,
    obs: &LocalObservable,
    eps: f64,
    probe: &Probe,
    params: &SolverParams,
) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter(format!("epsilon must be positive, got {eps}")));
    }
    let y: Vec<f64> = probe.x.iter().map(|v| v / eps).collect();
    let s = probe.t / (eps * eps);
    if s == 0.0 {
        return evaluate_observable(obs, env, &y);
    }
    Ok(unscaled_snapshots(env, obs, &y, &[s], params)?[0])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub eps: f64,
    pub probe: usize,
    pub mean: f64,
    /// Across-environment sample standard deviation.
    pub std: f64,
    pub stderr: f64,
    pub n_env: usize,
    pub deviation: Option<f64>,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HomogenizationRun {
    pub observable: String,
    pub eps: Vec<f64>,
    pub probes: Vec<Probe>,
    pub reference: Option<f64>,
    pub entries: Vec<SweepEntry>,
}

impl HomogenizationRun {
    pub fn entry(&self, eps_index: usize, probe: usize) -> &SweepEntry {
        &self.entries[probe * self.eps.len() + eps_index]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepParams {
    pub solver: SolverParams,
    pub budget: Option<f64>,
}

/// Work estimate (node updates) of a sweep.
pub fn sweep_work(
    spec: &EnvironmentSpec,
    eps: &[f64],
    probes: &[Probe],
    n_env: usize,
    params: &SolverParams,
) -> f64 {
    let d = spec.dimension;
    let (_, lam) = spec.eigenvalue_bounds();
    let b = spec.drift_bound();
    let mut work = 0.0;
    for p in probes {
        for &e in eps {
            let s = p.t / (e * e);
            let cells = params.margin_cells_with(lam, b, s) as f64 + 1.0;
            work += (2.0 * cells + 1.0).powi(d as i32) * (1.0 + params.steps_with(d, lam, s) as f64);
        }
    }
    work * n_env as f64
}

/// Mean and across-environment spread of `u^ε` at each probe, for each `ε`.
/// Realization `k` uses the same seed as in the `π_n` estimators.
pub fn convergence_sweep(
    spec: &Arc<EnvironmentSpec>,
    obs: &LocalObservable,
    eps: &[f64],
    n_env: usize,
    probes: &[Probe],
    params: &SweepParams,
    reference: Option<f64>,
    seed: u64,
) -> Result<HomogenizationRun> {
    spec.validate()?;
    if eps.is_empty() || eps.iter().any(|&e| !(e > 0.0)) || eps.windows(2).any(|w| w[1] >= w[0]) {
        return Err(Error::InvalidParameter("epsilon list must be positive and strictly decreasing".into()));
    }
    if n_env < 2 {
        return Err(Error::InsufficientSamples { got: n_env, need: 2 });
    }
    if let Some(c) = params.budget {
        let w = sweep_work(spec, eps, probes, n_env, &params.solver);
        if w > c {
            return Err(Error::Budget { estimate: w, ceiling: c });
        }
    }
    let d = spec.dimension;
    let (_, lam) = spec.eigenvalue_bounds();
    let b = spec.drift_bound();
    let s = &params.solver;
    let mut reach: f64 = 0.0;
    for p in probes {
        if p.x.len() != d {
            return Err(Error::InvalidParameter("probe dimension mismatch".into()));
        }
        for &e in eps {
            let y = p.x.iter().fold(0.0f64, |m, v| m.max((v / e).abs()));
            let m = (s.margin_cells_with(lam, b, p.t / (e * e)) + 1) as f64 * s.h;
            reach = reach.max(y + m);
        }
    }
    let active = Cube::centered(d, reach + obs.radius(spec) + spec.bump.radius + 1.0);
    // values[k][probe][eps]
    let values = (0..n_env)
        .into_par_iter()
        .map(|k| {
            let env = sample_environment(spec, environment_seed(seed, k), active.clone())?;
            probes
                .iter()
                .map(|p| {
                    if p.x.iter().all(|&v| v == 0.0) {
                        // one snapshot solve for all ε, times increasing
                        let times: Vec<f64> = eps.iter().map(|e| p.t / (e * e)).collect();
                        let origin = vec![0.0; d];
                        if times[0] == 0.0 {
                            let v = evaluate_observable(obs, &env, &origin)?;
                            return Ok(vec![v; eps.len()]);
                        }
                        unscaled_snapshots(&env, obs, &origin, &times, s)
                    } else {
                        eps.iter().map(|&e| solve_epsilon(&env, obs, e, p, s)).collect()
                    }
                })
                .collect::<Result<Vec<Vec<f64>>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let mut entries = Vec::new();
    for (pi, _) in probes.iter().enumerate() {
        for (ei, &e) in eps.iter().enumerate() {
            let vals: Vec<f64> = values.iter().map(|v| v[pi][ei]).collect();
            let m = mean(&vals);
            let sd = sample_std(&vals);
            entries.push(SweepEntry {
                eps: e,
                probe: pi,
                mean: m,
                std: sd,
                stderr: sd / (n_env as f64).sqrt(),
                n_env,
                deviation: reference.map(|r| (m - r).abs()),
                values: vals,
            });
        }
    }
    Ok(HomogenizationRun {
        observable: obs.id(),
        eps: eps.to_vec(),
        probes: probes.to_vec(),
        reference,
        entries,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum VariantKind {
    /// `∫_0^t ũ^ε(x, s) ds`, trapezoidal rule with `intervals` uniform steps.
    Rhs { intervals: usize },
    /// `∫_0^T e^{-s} ũ^ε(x, s) ds` on a geometric grid of `intervals` steps,
    /// integrating `e^{-s}` exactly against the piecewise-linear interpolant.
    Elliptic {
        horizon: f64,
        tolerance: f64,
        intervals: usize,
    },
}

/// Quadrature nodes for `kind` with probe time `t`.
pub fn quadrature_nodes(kind: &VariantKind, t: f64) -> Result<Vec<f64>> {
    match *kind {
        VariantKind::Rhs { intervals } => {
            let n = intervals.max(1);
            Ok((0..=n).map(|j| t * j as f64 / n as f64).collect())
        }
        VariantKind::Elliptic {
            horizon,
            tolerance,
            intervals,
        } => {
            let tail = (-horizon).exp();
            if tail > tolerance {
                return Err(Error::Truncation {
                    horizon,
                    tail,
                    tolerance,
                });
            }
            let n = intervals.max(1) as i32;
            // spacing doubles from one interval to the next
            let denom = 2f64.powi(n) - 1.0;
            Ok((0..=n).map(|j| horizon * (2f64.powi(j) - 1.0) / denom).collect())
        }
    }
}

/// Weighted sum of samples `u(s_j)` at the quadrature nodes.
pub fn quadrature(kind: &VariantKind, nodes: &[f64], u: &[f64]) -> f64 {
    let mut acc = 0.0;
    for j in 1..nodes.len() {
        let (a, b) = (nodes[j - 1], nodes[j]);
        let (ua, ub) = (u[j - 1], u[j]);
        acc += match kind {
            VariantKind::Rhs { .. } => 0.5 * (b - a) * (ua + ub),
            VariantKind::Elliptic { .. } => {
                let i0 = (-a).exp() - (-b).exp();
                let i1 = (-a).exp() - (-b).exp() * (1.0 + (b - a));
                ua * i0 + (ub - ua) * i1 / (b - a)
            }
        };
    }
    acc
}

/// Right-hand-side or elliptic variant at `probe` (`probe.t` is ignored for
/// the elliptic kind).
pub fn variant_solutions(
    env: &EnvironmentRealization,
    obs: &LocalObservable,
    eps: f64,
    probe: &Probe,
    kind: &VariantKind,
    params: &SolverParams,
) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter(format!("epsilon must be positive, got {eps}")));
    }
    let nodes = quadrature_nodes(kind, probe.t)?;
    let y: Vec<f64> = probe.x.iter().map(|v| v / eps).collect();
    let times: Vec<f64> = nodes.iter().map(|s| s / (eps * eps)).collect();
    let u = unscaled_snapshots(env, obs, &y, &times, params)?;
    Ok(quadrature(kind, &nodes, &u))
}

/// Doubles the number of intervals until successive answers differ by less
/// than `tol`; returns the last value and its interval count.
pub fn variant_adaptive(
    env: &EnvironmentRealization,
    obs: &LocalObservable,
    eps: f64,
    probe: &Probe,
    kind: &VariantKind,
    params: &SolverParams,
    tol: f64,
    max_doublings: usize,
) -> Result<(f64, usize)> {
    let mut k = *kind;
    let mut prev = variant_solutions(env, obs, eps, probe, &k, params)?;
    for _ in 0..max_doublings {
        k = match k {
            VariantKind::Rhs { intervals } => VariantKind::Rhs { intervals: intervals * 2 },
            VariantKind::Elliptic {
                horizon,
                tolerance,
                intervals,
            } => VariantKind::Elliptic {
                horizon,
                tolerance,
                intervals: intervals + 1,
            },
        };
        let next = variant_solutions(env, obs, eps, probe, &k, params)?;
        let n = match k {
            VariantKind::Rhs { intervals } | VariantKind::Elliptic { intervals, .. } => intervals,
        };
        if (next - prev).abs() < tol {
            return Ok((next, n));
        }
        prev = next;
    }
    let n = match k {
        VariantKind::Rhs { intervals } | VariantKind::Elliptic { intervals, .. } => intervals,
    };
    Ok((prev, n))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeAverageTrace {
    pub times: Vec<f64>,
    /// `(1/T) ∫_0^T f(X_s) ds` at each output time (left-point rule).
    pub averages: Vec<f64>,
}

impl TimeAverageTrace {
    pub fn last(&self) -> f64 {
        self.averages.last().copied().unwrap_or(0.0)
    }
}

/// Running averages of `f(X_s, ω)` along one path on `n_out` log-spaced times.
pub fn environment_time_average(
    env: &EnvironmentRealization,
    obs: &LocalObservable,
    horizon: f64,
    dt: f64,
    n_out: usize,
    seed: u64,
) -> Result<TimeAverageTrace> {
    let d = env.dim();
    let cfg = PathConfig::new(dt, horizon, vec![0.0; d]);
    let n_out = n_out.max(1);
    let t0 = dt.min(horizon);
    let outputs: Vec<f64> = (0..n_out)
        .map(|j| {
            if n_out == 1 {
                horizon
            } else {
                t0 * (horizon / t0).powf(j as f64 / (n_out - 1) as f64)
            }
        })
        .collect();
    let mut times = Vec::with_capacity(n_out);
    let mut averages = Vec::with_capacity(n_out);
    let mut integral = crate::stats::CompensatedSum::new();
    let mut prev: Option<(f64, f64)> = None;
    let mut next_out = 0;
    simulate_path_visit(env, &cfg, seed, |_, t, x| {
        if let Some((tp, fp)) = prev {
            integral.add(fp * (t - tp));
            while next_out < outputs.len() && t >= outputs[next_out] * (1.0 - 1e-12) {
                times.push(t);
                averages.push(integral.value() / t);
                next_out += 1;
            }
        }
        prev = Some((t, evaluate_observable(obs, env, x)?));
        Ok(())
    })?;
    Ok(TimeAverageTrace { times, averages })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn env(eta: f64) -> EnvironmentRealization {
        let spec = Arc::new(EnvironmentSpec::new(1, eta, 2));
        sample_environment(&spec, 5, Cube::centered(1, 200.0)).unwrap()
    }

    #[test]
    fn constants_are_fixed_by_every_variant() {
        let w = env(0.1);
        let c = LocalObservable::Constant { value: 0.5 };
        let p = SolverParams::new(0.5);
        let probe = Probe::new(vec![0.3], 1.0);
        assert_eq!(solve_epsilon(&w, &c, 0.5, &probe, &p).unwrap(), 0.5);
        let rhs = variant_solutions(&w, &c, 0.5, &probe, &VariantKind::Rhs { intervals: 4 }, &p).unwrap();
        assert!((rhs - 0.5).abs() < 1e-14);
        let kind = VariantKind::Elliptic { horizon: 20.0, tolerance: 1e-8, intervals: 6 };
        let ell = variant_solutions(&w, &c, 1.0, &probe, &kind, &p).unwrap();
        assert!((ell - 0.5 * (1.0 - (-20.0f64).exp())).abs() < 1e-14);
        let tr = environment_time_average(&w, &c, 10.0, 0.01, 5, 1).unwrap();
        assert!(tr.averages.iter().all(|&a| (a - 0.5).abs() < 1e-14));
        assert_eq!(tr.times.len(), 5);
    }

    #[test]
    fn truncation_tolerance_is_enforced() {
        let kind = VariantKind::Elliptic { horizon: 3.0, tolerance: 1e-6, intervals: 4 };
        assert!(matches!(quadrature_nodes(&kind, 0.0), Err(Error::Truncation { .. })));
    }

    #[test]
    fn elliptic_quadrature_integrates_linear_data_exactly() {
        let kind = VariantKind::Elliptic { horizon: 40.0, tolerance: 1e-12, intervals: 8 };
        let nodes = quadrature_nodes(&kind, 0.0).unwrap();
        let u: Vec<f64> = nodes.iter().map(|s| 2.0 + 3.0 * s).collect();
        // ∫_0^T e^{-s}(2 + 3s) ds = 2(1 − e^{-T}) + 3(1 − e^{-T}(1 + T))
        let t = 40.0f64;
        let exact = 2.0 * (1.0 - (-t).exp()) + 3.0 * (1.0 - (-t).exp() * (1.0 + t));
        assert!((quadrature(&kind, &nodes, &u) - exact).abs() < 1e-12);
    }

    #[test]
    fn small_time_is_the_initial_condition() {
        let w = env(0.1);
        let f = LocalObservable::DriftProfile { component: 0, bound: 2.0 };
        let p = SolverParams::new(0.25);
        let probe = Probe::new(vec![1.25], 0.0);
        let direct = evaluate_observable(&f, &w, &[1.25]).unwrap();
        assert_eq!(solve_epsilon(&w, &f, 1.0, &probe, &p).unwrap(), direct);
    }

    #[test]
    fn rescaling_identity_matches_unscaled_solve() {
        let w = env(0.1);
        let f = LocalObservable::DriftProfile { component: 0, bound: 2.0 };
        let p = SolverParams::new(0.25);
        let a = solve_epsilon(&w, &f, 0.5, &Probe::new(vec![0.5], 1.0), &p).unwrap();
        let b = unscaled_snapshots(&w, &f, &[1.0], &[4.0], &p).unwrap()[0];
        assert_eq!(a, b);
    }
}
