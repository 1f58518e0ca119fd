//! Grid solvers and norms: the quenched parabolic semigroup `R_t`, its
//! ball-localized version, discrete Gaussian kernels, rescaled Hölder norms,
//! cutoffs and the finite-difference versus Monte Carlo duality check.
//!
//! The quenched equation `u_t = ½ tr(A D²u) − b·Du` is advanced by an explicit
//! monotone scheme written in difference form,
//! `u'(x) = u(x) + Δt Σ_k r_k(x) (u(x + o_k) − u(x))` with all `r_k >= 0`, so
//! constants are preserved exactly and every step is a convex combination.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::diffusion::{simulate_path, PathConfig};
use crate::environment::{CoefScratch, EnvironmentRealization};
use crate::error::{Error, Result};
use crate::grid::{Grid, GridField};
use crate::rng::derive_seed;
use crate::stats::Estimate;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// Centered drift where the stencil stays monotone, upwind elsewhere.
    Hybrid,
    /// Upwind drift everywhere (first order in the drift term).
    Upwind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverParams {
    pub h: f64,
    /// Explicit time step; `None` selects `h² / (2 d λ_max)`.
    pub dt: Option<f64>,
    /// Number of diffusive standard deviations kept as boundary margin.
    pub margin_sigmas: f64,
    pub scheme: Scheme,
}

impl SolverParams {
    pub fn new(h: f64) -> Self {
        Self {
            h,
            dt: None,
            margin_sigmas: 6.0,
            scheme: Scheme::Hybrid,
        }
    }

    pub fn with_h(&self, h: f64) -> Self {
        Self { h, ..self.clone() }
    }

    /// Boundary margin for a solve of duration `t`.
    pub fn margin(&self, env: &EnvironmentRealization, t: f64) -> f64 {
        let (lam, b) = env.coefficient_bounds();
        self.margin_with(lam, b, t)
    }

    /// Margin from explicit bounds `λ_max(A) <= lam`, `|b| <= b`.
    pub fn margin_with(&self, lam: f64, b: f64, t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        self.margin_sigmas * (lam * t).sqrt() + b * t + self.h
    }

    pub fn margin_cells_with(&self, lam: f64, b: f64, t: f64) -> usize {
        (self.margin_with(lam, b, t) / self.h).ceil() as usize
    }

    /// Steps for duration `t` given `λ_max`.
    pub fn steps_with(&self, d: usize, lam: f64, t: f64) -> usize {
        if t <= 0.0 {
            return 0;
        }
        let dt = self.dt.unwrap_or(self.h * self.h / (2.0 * d as f64 * lam));
        (t / dt - 1e-9).ceil().max(1.0) as usize
    }

    pub fn margin_cells(&self, env: &EnvironmentRealization, t: f64) -> usize {
        (self.margin(env, t) / self.h).ceil() as usize
    }

    pub fn default_dt(&self, env: &EnvironmentRealization) -> f64 {
        let (lam, _) = env.coefficient_bounds();
        self.h * self.h / (2.0 * env.dim() as f64 * lam.max(1e-300))
    }
}

/// Stencil directions: `±e_i`, then `±(e_i + e_j)`, `±(e_i − e_j)` for `i < j`.
fn directions(d: usize) -> Vec<Vec<i64>> {
    let mut dirs = Vec::new();
    for i in 0..d {
        for s in [1, -1] {
            let mut v = vec![0; d];
            v[i] = s;
            dirs.push(v);
        }
    }
    for i in 0..d {
        for j in i + 1..d {
            for (si, sj) in [(1, 1), (-1, -1), (1, -1), (-1, 1)] {
                let mut v = vec![0; d];
                v[i] = si;
                v[j] = sj;
                dirs.push(v);
            }
        }
    }
    dirs
}

/// Rates `r_k` for one node from `A` (row-major) and `b`.
fn node_rates(a: &[f64], b: &[f64], d: usize, h: f64, scheme: Scheme, out: &mut [f64]) -> std::result::Result<(), String> {
    let h2 = 2.0 * h * h;
    for i in 0..d {
        let off: f64 = (0..d).filter(|&j| j != i).map(|j| a[i * d + j].abs()).sum();
        let base = (a[i * d + i] - off) / h2;
        if base < 0.0 {
            return Err(format!("a_{i}{i} = {} below off-diagonal sum {off}", a[i * d + i]));
        }
        let bi = b[i];
        let (mut plus, mut minus) = (base, base);
        if scheme == Scheme::Hybrid && base - bi.abs() / (2.0 * h) >= 0.0 {
            plus -= bi / (2.0 * h);
            minus += bi / (2.0 * h);
        } else if bi > 0.0 {
            minus += bi / h;
        } else {
            plus -= bi / h;
        }
        out[2 * i] = plus;
        out[2 * i + 1] = minus;
    }
    let mut k = 2 * d;
    for i in 0..d {
        for j in i + 1..d {
            let aij = a[i * d + j];
            let (pp, pm) = if aij > 0.0 { (aij / h2, 0.0) } else { (0.0, -aij / h2) };
            out[k] = pp;
            out[k + 1] = pp;
            out[k + 2] = pm;
            out[k + 3] = pm;
            k += 4;
        }
    }
    Ok(())
}

enum Rates {
    Uniform(Vec<f64>),
    PerNode(Vec<f64>),
}

/// Discrete generator on a set of active nodes of a grid.
struct Operator {
    active: Vec<usize>,
    offsets: Vec<isize>,
    rates: Rates,
    max_rate_sum: f64,
}

impl Operator {
    fn build(
        env: &EnvironmentRealization,
        grid: &Grid,
        params: &SolverParams,
        keep: impl Fn(&[f64]) -> bool,
    ) -> Result<Self> {
        let d = grid.dim();
        if env.dim() != d {
            return Err(Error::GridMismatch("grid and environment dimensions differ".into()));
        }
        let shape = grid.shape();
        let strides = grid.strides();
        let dirs = directions(d);
        let offsets: Vec<isize> = dirs
            .iter()
            .map(|v| v.iter().zip(&strides).map(|(&s, &st)| s as isize * st as isize).sum())
            .collect();
        let k = dirs.len();
        let mut active = Vec::new();
        let mut p = vec![0.0; d];
        for n in 0..grid.len() {
            let idx = grid.multi(n);
            if idx.iter().zip(&shape).any(|(&i, &s)| i == 0 || i + 1 == s) {
                continue;
            }
            grid.point_into(n, &mut p);
            if keep(&p) {
                active.push(n);
            }
        }
        let mut scratch = CoefScratch::new(d);
        let uniform = env.is_trivial() || env.coefficient_bounds().1 == 0.0 && env.ellipticity_lower() == env.coefficient_bounds().0;
        let mut row = vec![0.0; k];
        let rates = if uniform {
            if let Some(&n) = active.first() {
                grid.point_into(n, &mut p);
                env.coefficients_into(&p, &mut scratch)?;
            } else {
                let (lam, _) = env.coefficient_bounds();
                scratch.a.iter_mut().for_each(|v| *v = 0.0);
                for i in 0..d {
                    scratch.a[i * d + i] = lam;
                }
            }
            node_rates(&scratch.a, &scratch.b, d, grid.h, params.scheme, &mut row)
                .map_err(|reason| Error::NotMonotone { point: p.clone(), reason })?;
            Rates::Uniform(row.clone())
        } else {
            let mut all = vec![0.0; active.len() * k];
            for (a, &n) in active.iter().enumerate() {
                grid.point_into(n, &mut p);
                env.coefficients_into(&p, &mut scratch)?;
                node_rates(&scratch.a, &scratch.b, d, grid.h, params.scheme, &mut all[a * k..(a + 1) * k])
                    .map_err(|reason| Error::NotMonotone { point: p.clone(), reason })?;
            }
            Rates::PerNode(all)
        };
        let max_rate_sum = match &rates {
            Rates::Uniform(r) => r.iter().sum(),
            Rates::PerNode(r) => r.chunks(k).map(|c| c.iter().sum::<f64>()).fold(0.0, f64::max),
        };
        Ok(Self {
            active,
            offsets,
            rates,
            max_rate_sum,
        })
    }

    fn check_dt(&self, dt: f64) -> Result<()> {
        let limit = if self.max_rate_sum > 0.0 { 1.0 / self.max_rate_sum } else { f64::INFINITY };
        if dt > limit * (1.0 + 1e-12) {
            return Err(Error::Stability { dt, limit });
        }
        Ok(())
    }

    /// Advances `u` by `steps` steps of size `dt`, clamping to `[lo, hi]`.
    fn advance(&self, u: &mut Vec<f64>, next: &mut Vec<f64>, dt: f64, steps: usize, lo: f64, hi: f64) {
        let k = self.offsets.len();
        next.clone_from(u);
        for _ in 0..steps {
            match &self.rates {
                Rates::Uniform(r) => {
                    for &n in &self.active {
                        let un = u[n];
                        let mut s = 0.0;
                        for (o, rk) in self.offsets.iter().zip(r) {
                            s += rk * (u[n.wrapping_add_signed(*o)] - un);
                        }
                        next[n] = (un + dt * s).clamp(lo, hi);
                    }
                }
                Rates::PerNode(r) => {
                    for (a, &n) in self.active.iter().enumerate() {
                        let un = u[n];
                        let mut s = 0.0;
                        for (o, rk) in self.offsets.iter().zip(&r[a * k..(a + 1) * k]) {
                            s += rk * (u[n.wrapping_add_signed(*o)] - un);
                        }
                        next[n] = (un + dt * s).clamp(lo, hi);
                    }
                }
            }
            std::mem::swap(u, next);
        }
    }
}

fn check_grid_in_box(env: &EnvironmentRealization, grid: &Grid) -> Result<()> {
    let d = grid.dim();
    let hw = grid.half_widths();
    for corner in 0..(1usize << d) {
        let p: Vec<f64> = (0..d)
            .map(|i| grid.center[i] + if corner >> i & 1 == 1 { hw[i] } else { -hw[i] })
            .collect();
        if !env.can_evaluate(&p, 0.0) {
            return Err(Error::OutOfBox { point: p });
        }
    }
    Ok(())
}

fn step_plan(params: &SolverParams, env: &EnvironmentRealization, t: f64) -> (f64, usize) {
    if t <= 0.0 {
        return (0.0, 0);
    }
    let dt = params.dt.unwrap_or_else(|| params.default_dt(env));
    let n = (t / dt - 1e-9).ceil().max(1.0) as usize;
    (t / n as f64, n)
}

/// Number of explicit steps a solve of duration `t` takes.
pub fn step_count(env: &EnvironmentRealization, t: f64, params: &SolverParams) -> usize {
    step_plan(params, env, t).1
}

/// Evolves `f` for time `t` with the outer ring frozen; no restriction.
fn evolve_full(
    env: &EnvironmentRealization,
    f: &GridField,
    times: &[f64],
    params: &SolverParams,
    keep: impl Fn(&[f64]) -> bool,
) -> Result<Vec<GridField>> {
    if (f.grid.h - params.h).abs() > 1e-12 * params.h {
        return Err(Error::GridMismatch(format!(
            "field spacing {} differs from solver spacing {}",
            f.grid.h, params.h
        )));
    }
    check_grid_in_box(env, &f.grid)?;
    let op = Operator::build(env, &f.grid, params, keep)?;
    let (lo, hi) = (f.min(), f.max());
    let mut u = f.values.clone();
    let mut next = Vec::new();
    let mut out = Vec::with_capacity(times.len());
    let mut now = 0.0;
    for &t in times {
        if t < now {
            return Err(Error::InvalidParameter("snapshot times must be increasing".into()));
        }
        let (dt, steps) = step_plan(params, env, t - now);
        if steps > 0 {
            op.check_dt(dt)?;
            op.advance(&mut u, &mut next, dt, steps, lo, hi);
        }
        now = t;
        out.push(GridField {
            grid: f.grid.clone(),
            values: u.clone(),
            level: f.level,
        });
    }
    Ok(out)
}

/// `R_t f` on the grid of `f` shrunk by the margin for duration `t`.
pub fn solve_quenched(
    env: &EnvironmentRealization,
    f: &GridField,
    t: f64,
    params: &SolverParams,
) -> Result<GridField> {
    let mut v = solve_quenched_snapshots(env, f, &[t], params)?;
    Ok(v.pop().expect("one snapshot"))
}

/// `R_{t_k} f` for increasing `t_k`, each restricted by its own margin.
pub fn solve_quenched_snapshots(
    env: &EnvironmentRealization,
    f: &GridField,
    times: &[f64],
    params: &SolverParams,
) -> Result<Vec<GridField>> {
    if let Some(&t_max) = times.last() {
        f.grid.shrink(params.margin_cells(env, t_max))?;
    }
    let full = evolve_full(env, f, times, params, |_| true)?;
    full.iter()
        .zip(times)
        .map(|(u, &t)| u.shrink(params.margin_cells(env, t)))
        .collect()
}

/// Sub-grid of `grid` centered at the node nearest `x` covering `B_radius(x)`
/// plus one frozen ring.
fn ball_grid(grid: &Grid, x: &[f64], radius: f64) -> Result<Grid> {
    let d = grid.dim();
    let mut center = Vec::with_capacity(d);
    let mut m = 0usize;
    for i in 0..d {
        let k = ((x[i] - grid.center[i]) / grid.h).round();
        let c = grid.center[i] + k * grid.h;
        let reach = ((radius + (x[i] - c).abs()) / grid.h).ceil() as usize + 1;
        m = m.max(reach);
        center.push(c);
    }
    let sub = Grid::new(center, grid.h, vec![m; d])?;
    if !grid.contains_grid(&sub) {
        return Err(Error::BoxTooSmall {
            needed: radius + grid.h,
            available: grid.half_widths().into_iter().fold(f64::INFINITY, f64::min),
        });
    }
    Ok(sub)
}

/// `R̃_{t, ρ}` centered at `x`: the evolution on the open ball `B_ρ(x)` with
/// values outside the ball frozen at `f`. Returns a field on `f`'s grid.
pub fn solve_localized(
    env: &EnvironmentRealization,
    f: &GridField,
    t: f64,
    radius: f64,
    x: &[f64],
    params: &SolverParams,
) -> Result<GridField> {
    let sub = ball_grid(&f.grid, x, radius)?;
    let local = f.restrict(&sub)?;
    let r2 = radius * radius;
    let solved = evolve_full(env, &local, &[t], params, |p| {
        p.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() < r2
    })?;
    let mut out = f.clone();
    let origin: Vec<usize> = (0..sub.dim())
        .map(|i| {
            let k = ((sub.center[i] - f.grid.center[i]) / f.grid.h).round() as i64;
            (f.grid.half_counts[i] as i64 + k - sub.half_counts[i] as i64) as usize
        })
        .collect();
    let strides = f.grid.strides();
    for (n, v) in solved[0].values.iter().enumerate() {
        let idx = sub.multi(n);
        let flat: usize = idx.iter().zip(&origin).zip(&strides).map(|((a, o), s)| (a + o) * s).sum();
        out.values[flat] = *v;
    }
    Ok(out)
}

/// `(R̃_{t,ρ} f)(x)`: the localized solve centered at `x`, read at `x`.
pub fn localized_value(
    env: &EnvironmentRealization,
    f: &GridField,
    t: f64,
    radius: f64,
    x: &[f64],
    params: &SolverParams,
) -> Result<f64> {
    let sub = ball_grid(&f.grid, x, radius)?;
    let local = f.restrict(&sub)?;
    let r2 = radius * radius;
    let solved = evolve_full(env, &local, &[t], params, |p| {
        p.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() < r2
    })?;
    solved[0].interpolate(x)
}

/// The function `y ↦ (R̃_{t,ρ} f)(y)` (ball centered at each evaluation
/// point) on `f`'s grid shrunk by the ball radius.
pub fn localized_field(
    env: &EnvironmentRealization,
    f: &GridField,
    t: f64,
    radius: f64,
    params: &SolverParams,
) -> Result<GridField> {
    let cells = (radius / f.grid.h).ceil() as usize + 2;
    let out_grid = f.grid.shrink(cells)?;
    let values = (0..out_grid.len())
        .into_par_iter()
        .map(|n| localized_value(env, f, t, radius, &out_grid.point(n), params))
        .collect::<Result<Vec<f64>>>()?;
    Ok(GridField {
        grid: out_grid,
        values,
        level: f.level,
    })
}

/// Normalized weights `∝ exp(−(j h)² / 2s)` for `|j h| <= 6 √s`.
pub fn gaussian_weights(s: f64, h: f64) -> Vec<f64> {
    let j_max = (6.0 * s.sqrt() / h).ceil() as i64;
    let raw: Vec<f64> = (-j_max..=j_max)
        .map(|j| {
            let x = j as f64 * h;
            (-x * x / (2.0 * s)).exp()
        })
        .collect();
    let total: f64 = raw.iter().sum();
    raw.iter().map(|w| w / total).collect()
}

/// `m`-fold self-convolution of [`gaussian_weights`], truncated at
/// `6 √(m s)` and renormalized.
pub fn gaussian_weights_power(s: f64, h: f64, m: usize) -> Vec<f64> {
    let base = gaussian_weights(s, h);
    let mut acc = vec![1.0];
    for _ in 0..m {
        let mut next = vec![0.0; acc.len() + base.len() - 1];
        for (i, a) in acc.iter().enumerate() {
            for (j, b) in base.iter().enumerate() {
                next[i + j] += a * b;
            }
        }
        acc = next;
    }
    let half = (acc.len() / 2) as i64;
    let j_max = ((6.0 * (m as f64 * s).sqrt() / h).ceil() as i64).min(half);
    let cut: Vec<f64> = acc[(half - j_max) as usize..=(half + j_max) as usize].to_vec();
    let total: f64 = cut.iter().sum();
    cut.iter().map(|w| w / total).collect()
}

/// Convolution along one axis in difference form; that axis shrinks by the
/// kernel half-length.
fn convolve_axis(f: &GridField, axis: usize, w: &[f64]) -> Result<GridField> {
    let j = w.len() / 2;
    let mut half_counts = f.grid.half_counts.clone();
    if half_counts[axis] < j {
        return Err(Error::Margin {
            needed: j,
            available: half_counts[axis],
        });
    }
    half_counts[axis] -= j;
    let out_grid = Grid::new(f.grid.center.clone(), f.grid.h, half_counts)?;
    let in_strides = f.grid.strides();
    let stride = in_strides[axis] as isize;
    let d = f.grid.dim();
    let mut values = Vec::with_capacity(out_grid.len());
    for n in 0..out_grid.len() {
        let mut idx = out_grid.multi(n);
        idx[axis] += j;
        let src: usize = idx.iter().zip(&in_strides).map(|(a, s)| a * s).sum();
        let u0 = f.values[src];
        let mut s = 0.0;
        for (k, wk) in w.iter().enumerate() {
            let off = (k as isize - j as isize) * stride;
            s += wk * (f.values[src.wrapping_add_signed(off)] - u0);
        }
        values.push(u0 + s);
    }
    debug_assert_eq!(d, out_grid.dim());
    Ok(GridField {
        grid: out_grid,
        values,
        level: f.level,
    })
}

fn separable(f: &GridField, w: &[f64]) -> Result<GridField> {
    let mut g = f.clone();
    for axis in 0..f.grid.dim() {
        g = convolve_axis(&g, axis, w)?;
    }
    Ok(g)
}

/// Discrete heat step `R̄`: convolution with the centered Gaussian of
/// per-coordinate variance `s`. The output grid is shrunk by `6 √s`.
pub fn gaussian_step(f: &GridField, s: f64) -> Result<GridField> {
    if !(s > 0.0) {
        return Err(Error::InvalidParameter(format!("variance must be positive, got {s}")));
    }
    separable(f, &gaussian_weights(s, f.grid.h))
}

/// `R̄^m` with the `m`-fold kernel, truncated at `6 √(m s)`.
pub fn gaussian_steps(f: &GridField, s: f64, m: usize) -> Result<GridField> {
    if m == 0 {
        return Ok(f.clone());
    }
    if !(s > 0.0) {
        return Err(Error::InvalidParameter(format!("variance must be positive, got {s}")));
    }
    separable(f, &gaussian_weights_power(s, f.grid.h, m))
}

/// `S_n f = R_{L²} f − R̄ f` with `R̄` of variance `α̂ L²`, on the common grid.
pub fn defect_field(
    env: &EnvironmentRealization,
    f: &GridField,
    l: f64,
    alpha: f64,
    params: &SolverParams,
) -> Result<GridField> {
    let t = l * l;
    let q = solve_quenched(env, f, t, params)?;
    let g = gaussian_step(f, alpha * t)?;
    q.sub(&g)
}

/// Largest `|f(x) − f(y)| / |x − y|^β` over node pairs with `|x − y| <= 2L`.
pub fn holder_quotient(f: &GridField, l: f64, beta: f64) -> f64 {
    let grid = &f.grid;
    let d = grid.dim();
    let shape: Vec<i64> = grid.shape().iter().map(|&s| s as i64).collect();
    let strides: Vec<i64> = grid.strides().iter().map(|&s| s as i64).collect();
    let h = grid.h;
    let r_cells = ((2.0 * l / h) + 1e-9).floor() as i64;
    let r_max2 = (2.0 * l) * (2.0 * l) * (1.0 + 1e-12);
    let mut best: f64 = 0.0;
    let mut o = vec![-r_cells; d];
    o[0] = 0;
    let vals = &f.values;
    loop {
        let first_nz = o.iter().position(|&v| v != 0);
        let positive = matches!(first_nz, Some(i) if o[i] > 0);
        let dist2 = o.iter().map(|&v| (v as f64 * h).powi(2)).sum::<f64>();
        if positive && dist2 <= r_max2 && o.iter().zip(&shape).all(|(&v, &s)| v.abs() < s) {
            let delta: i64 = o.iter().zip(&strides).map(|(a, b)| a * b).sum();
            let lo: Vec<i64> = o.iter().map(|&v| (-v).max(0)).collect();
            let hi: Vec<i64> = o.iter().zip(&shape).map(|(&v, &s)| s - v.max(0)).collect();
            let mut max_diff: f64 = 0.0;
            let mut idx = lo.clone();
            let last = d - 1;
            'outer: loop {
                let base: i64 = idx[..last].iter().zip(&strides[..last]).map(|(a, b)| a * b).sum();
                for k in lo[last]..hi[last] {
                    let p = (base + k) as usize;
                    let q = (base + k + delta) as usize;
                    max_diff = max_diff.max((vals[q] - vals[p]).abs());
                }
                let mut axis = last;
                loop {
                    if axis == 0 {
                        break 'outer;
                    }
                    axis -= 1;
                    idx[axis] += 1;
                    if idx[axis] < hi[axis] {
                        break;
                    }
                    idx[axis] = lo[axis];
                }
            }
            best = best.max(max_diff / dist2.sqrt().powf(beta));
        }
        // next offset: axis 0 runs over [0, r], the others over [−r, r]
        let mut axis = d;
        loop {
            if axis == 0 {
                return best;
            }
            axis -= 1;
            if o[axis] < r_cells {
                o[axis] += 1;
                break;
            }
            o[axis] = if axis == 0 { 0 } else { -r_cells };
        }
    }
}

/// `|f|_L = sup |f| + L^β · (Hölder quotient over pairs within 2L)`.
pub fn scaled_holder_norm(f: &GridField, l: f64, beta: f64) -> f64 {
    f.sup_norm() + l.powf(beta) * holder_quotient(f, l, beta)
}

/// `χ(r) = min(1, max(0, 2 − r))`.
#[inline]
pub fn cutoff(r: f64) -> f64 {
    (2.0 - r).clamp(0.0, 1.0)
}

/// Samples `χ(|y − x| / v)` on `grid`.
pub fn cutoff_field(v: f64, x: &[f64], grid: &Grid) -> Result<GridField> {
    if !(v > 0.0) {
        return Err(Error::InvalidParameter(format!("cutoff radius must be positive, got {v}")));
    }
    Ok(GridField::from_fn(grid.clone(), |y| {
        let r = y.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        cutoff(r / v)
    }))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McParams {
    pub n_paths: usize,
    pub dt: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DualityReport {
    pub probes: Vec<Vec<f64>>,
    /// Finite differences at spacing `h`.
    pub fd: Vec<f64>,
    /// Finite differences at spacing `h/2`.
    pub fd_fine: Vec<f64>,
    pub mc: Vec<Estimate>,
    /// Per-probe Richardson estimate `(4/3)|u_h − u_{h/2}|` of the error at `h`.
    pub discretization: Vec<f64>,
    pub max_abs_diff: f64,
    /// Largest `|fd − mc| / (3 se + discretization)` over probes.
    pub max_tolerance_ratio: f64,
}

impl DualityReport {
    pub fn passed(&self) -> bool {
        self.max_tolerance_ratio <= 1.0
    }

    pub fn max_discretization(&self) -> f64 {
        self.discretization.iter().copied().fold(0.0, f64::max)
    }
}

/// Compares `R_t f` from the grid solver against Monte Carlo averages of
/// `f(X_t)` at the probe points.
pub fn duality_check(
    env: &EnvironmentRealization,
    f: &(dyn Fn(&[f64]) -> f64 + Sync),
    t: f64,
    probes: &[Vec<f64>],
    params: &SolverParams,
    mc: &McParams,
    seed: u64,
) -> Result<DualityReport> {
    let d = env.dim();
    let reach = probes
        .iter()
        .flat_map(|p| p.iter().map(|v| v.abs()))
        .fold(0.0, f64::max);
    let fine = params.with_h(params.h / 2.0);
    let hw = reach + params.margin(env, t) + 2.0 * params.h;
    let solve_at = |p: &SolverParams| -> Result<Vec<f64>> {
        let grid = Grid::cube(vec![0.0; d], hw, p.h)?;
        let u0 = GridField::from_fn(grid, f);
        let u = solve_quenched(env, &u0, t, p)?;
        probes.iter().map(|x| u.interpolate(x)).collect()
    };
    let fd = solve_at(params)?;
    let fd_fine = solve_at(&fine)?;
    let mc_est = probes
        .iter()
        .enumerate()
        .map(|(k, x)| {
            let cfg = PathConfig::new(mc.dt, t, x.clone());
            let vals = (0..mc.n_paths)
                .into_par_iter()
                .map(|p| {
                    simulate_path(env, &cfg, derive_seed(seed, &[k as u64, p as u64]))
                        .map(|r| f(&r.endpoint))
                })
                .collect::<Result<Vec<f64>>>()?;
            Estimate::from_samples(&vals, seed)
        })
        .collect::<Result<Vec<_>>>()?;
    let discretization: Vec<f64> = fd
        .iter()
        .zip(&fd_fine)
        .map(|(a, b)| 4.0 / 3.0 * (a - b).abs())
        .collect();
    let mut max_abs_diff: f64 = 0.0;
    let mut max_ratio: f64 = 0.0;
    for k in 0..probes.len() {
        let diff = (fd[k] - mc_est[k].mean).abs();
        let tol = 3.0 * mc_est[k].stderr + discretization[k];
        max_abs_diff = max_abs_diff.max(diff);
        max_ratio = max_ratio.max(if tol > 0.0 {
            diff / tol
        } else if diff == 0.0 {
            0.0
        } else {
            f64::INFINITY
        });
    }
    Ok(DualityReport {
        probes: probes.to_vec(),
        fd,
        fd_fine,
        mc: mc_est,
        discretization,
        max_abs_diff,
        max_tolerance_ratio: max_ratio,
    })
}
