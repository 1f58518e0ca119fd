//! Seeded finite-range random environments.
//!
//! Coefficients are built from i.i.d. site variables on the lattice
//! `s (Z^d + U)`, `U` uniform on the unit cell, spread by a compactly supported
//! radial bump `ψ` of radius `ρ < R/2`:
//!
//! ```text
//! b(x) = η₀ Σ_z V_z ψ(x − s(z + U))
//! A(x) = I + η₀ Σ_z M_z ψ(x − s(z + U))
//! ```
//!
//! Two points at distance `>= R` never share a site, which gives finite-range
//! dependence; the site laws are invariant under signed permutations, which
//! gives restricted isotropy. Site variables are derived from the seed and the
//! site coordinates alone, so nothing is materialised and the field restricted
//! to any box is the restriction of a single infinite field.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector, Matrix2, Matrix3, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, hash_words, splitmix64, unit_f64};

const TAG_OFFSET: u64 = 0x4f46_4653;
const TAG_SITE: u64 = 0x5349_5445;
const TAG_AUDIT: u64 = 0x4155_4449;

/// Radial profile `ψ(r) = (1 − r²/ρ²)³` for `r < ρ`, zero outside.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bump {
    pub radius: f64,
}

impl Bump {
    #[inline]
    pub fn value_sq(&self, r2: f64) -> f64 {
        let q = 1.0 - r2 / (self.radius * self.radius);
        if q <= 0.0 {
            0.0
        } else {
            q * q * q
        }
    }

    /// `max |ψ'|`, attained at `r = ρ/√5`.
    pub fn lipschitz(&self) -> f64 {
        96.0 / (25.0 * 5f64.sqrt() * self.radius)
    }
}

/// Laws of the per-site variables: drift components i.i.d. uniform on
/// `[-drift, drift]`; matrix diagonal i.i.d. uniform on `[-diag, diag]`;
/// off-diagonal i.i.d. uniform on `[-offdiag, offdiag]`, symmetrised.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SiteLaw {
    pub drift_half_width: f64,
    pub diag_half_width: f64,
    pub offdiag_half_width: f64,
}

impl Default for SiteLaw {
    fn default() -> Self {
        Self {
            drift_half_width: 1.0,
            diag_half_width: 1.0,
            offdiag_half_width: 0.5,
        }
    }
}

impl SiteLaw {
    /// Gershgorin bound on the operator norm of a site matrix.
    pub fn matrix_norm_bound(&self, d: usize) -> f64 {
        self.diag_half_width + (d as f64 - 1.0) * self.offdiag_half_width
    }

    pub fn drift_norm_bound(&self, d: usize) -> f64 {
        self.drift_half_width * (d as f64).sqrt()
    }

    /// Largest entrywise change between the second-moment tensors of the site
    /// vector `(V, M)` and of its image `(rV, rMrᵗ)`. First moments vanish for
    /// centred laws; entries are independent, so the covariance is diagonal
    /// with variance `w²/3` for a uniform of half-width `w`.
    pub fn moment_discrepancy(&self, r: &SignedPermutation) -> f64 {
        let d = r.dim();
        let var_diag = self.diag_half_width.powi(2) / 3.0;
        let var_off = self.offdiag_half_width.powi(2) / 3.0;
        let var_m = |i: usize, j: usize| if i == j { var_diag } else { var_off };
        let mut worst: f64 = 0.0;
        // Cov(V) is a multiple of I, so only the matrix part can move.
        for i in 0..d {
            for j in 0..d {
                let (pi, pj) = (r.perm[i], r.perm[j]);
                let transformed = var_m(pi, pj);
                worst = worst.max((transformed - var_m(i, j)).abs());
            }
        }
        worst
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentSpec {
    pub dimension: usize,
    /// Perturbation size η₀.
    pub eta0: f64,
    /// Dependence range R.
    pub range: f64,
    /// Ellipticity bound ν > 1.
    pub nu: f64,
    pub bump: Bump,
    /// Lattice spacing `s` of the site variables.
    pub site_spacing: f64,
    pub site_law: SiteLaw,
    pub master_seed: u64,
}

impl EnvironmentSpec {
    pub fn new(dimension: usize, eta0: f64, master_seed: u64) -> Self {
        Self {
            dimension,
            eta0,
            range: 1.5,
            nu: 2.0,
            bump: Bump { radius: 0.7 },
            site_spacing: 1.0,
            site_law: SiteLaw::default(),
            master_seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        if self.dimension == 0 {
            return bad("dimension must be >= 1".into());
        }
        if !(self.eta0 >= 0.0 && self.eta0.is_finite()) {
            return bad(format!("eta0 must be >= 0, got {}", self.eta0));
        }
        if !(self.nu > 1.0) {
            return bad(format!("nu must exceed 1, got {}", self.nu));
        }
        if !(self.site_spacing > 0.0) {
            return bad("site spacing must be positive".into());
        }
        if !(self.bump.radius > 0.0 && 2.0 * self.bump.radius < self.range) {
            return bad(format!(
                "bump radius {} must be positive and below R/2 = {}",
                self.bump.radius,
                self.range / 2.0
            ));
        }
        let l = &self.site_law;
        if !(l.drift_half_width >= 0.0 && l.diag_half_width >= 0.0 && l.offdiag_half_width >= 0.0)
        {
            return bad("site law half-widths must be >= 0".into());
        }
        Ok(())
    }

    /// Upper bound on the number of sites within distance `ρ` of any point.
    ///
    /// Sites inside an open ball of radius `ρ` are pairwise closer than `2ρ`.
    /// If `2ρ <= s` no two lattice points qualify; if `2ρ <= √2 s` all pairs are
    /// at distance exactly `s`, and the unit-distance graph of `Z^d` has no
    /// triangles. Otherwise fall back to counting points in a cube of side `2ρ`.
    pub fn overlap_count(&self) -> usize {
        let q = 2.0 * self.bump.radius / self.site_spacing;
        if q <= 1.0 {
            1
        } else if q <= std::f64::consts::SQRT_2 {
            2
        } else {
            (q.floor() as usize + 1).pow(self.dimension as u32)
        }
    }

    /// `sup_x Σ_z ψ(x − s z)`, bounded by the overlap count since `ψ <= 1`.
    pub fn bump_sum_bound(&self) -> f64 {
        self.overlap_count() as f64
    }

    /// Bound on `|A(x) − I|` in operator norm.
    pub fn perturbation_bound(&self) -> f64 {
        self.eta0 * self.bump_sum_bound() * self.site_law.matrix_norm_bound(self.dimension)
    }

    /// Guaranteed enclosure of the eigenvalues of `A(x)`.
    pub fn eigenvalue_bounds(&self) -> (f64, f64) {
        let p = self.perturbation_bound();
        (1.0 - p, 1.0 + p)
    }

    /// Bound on `|b(x)|`.
    pub fn drift_bound(&self) -> f64 {
        self.eta0 * self.bump_sum_bound() * self.site_law.drift_norm_bound(self.dimension)
    }

    pub fn drift_lipschitz_bound(&self) -> f64 {
        self.eta0
            * self.overlap_count() as f64
            * self.bump.lipschitz()
            * self.site_law.drift_norm_bound(self.dimension)
    }

    pub fn matrix_lipschitz_bound(&self) -> f64 {
        self.eta0
            * self.overlap_count() as f64
            * self.bump.lipschitz()
            * self.site_law.matrix_norm_bound(self.dimension)
    }

    /// Fails unless the eigenvalue enclosure sits inside `[1/ν, ν]`.
    pub fn check_ellipticity(&self) -> Result<()> {
        let (lo, hi) = self.eigenvalue_bounds();
        if lo < 1.0 / self.nu || hi > self.nu {
            return Err(Error::Ellipticity {
                lower: lo,
                upper: hi,
                nu: self.nu,
            });
        }
        Ok(())
    }

    fn n_matrix_entries(&self) -> usize {
        self.dimension * (self.dimension + 1) / 2
    }
}

/// Axis-aligned cube.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cube {
    pub center: Vec<f64>,
    pub half_width: f64,
}

impl Cube {
    pub fn centered(d: usize, half_width: f64) -> Self {
        Self {
            center: vec![0.0; d],
            half_width,
        }
    }

    #[inline]
    pub fn contains_with_margin(&self, p: &[f64], margin: f64) -> bool {
        let w = self.half_width - margin;
        p.iter()
            .zip(&self.center)
            .all(|(x, c)| (x - c).abs() <= w)
    }
}

/// Orthogonal map preserving the coordinate axes: `(r x)_i = s_i x_{p(i)}`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SignedPermutation {
    perm: Vec<usize>,
    signs: Vec<i8>,
}

impl SignedPermutation {
    pub fn new(perm: Vec<usize>, signs: Vec<i8>) -> Result<Self> {
        let d = perm.len();
        let mut seen = vec![false; d];
        for &p in &perm {
            if p >= d || seen[p] {
                return Err(Error::InvalidParameter(format!("{perm:?} is not a permutation")));
            }
            seen[p] = true;
        }
        if signs.len() != d || signs.iter().any(|&s| s != 1 && s != -1) {
            return Err(Error::InvalidParameter("signs must be ±1, one per axis".into()));
        }
        Ok(Self { perm, signs })
    }

    pub fn identity(d: usize) -> Self {
        Self {
            perm: (0..d).collect(),
            signs: vec![1; d],
        }
    }

    /// `x ↦ −x`.
    pub fn reflection(d: usize) -> Self {
        Self {
            perm: (0..d).collect(),
            signs: vec![-1; d],
        }
    }

    pub fn swap(d: usize, i: usize, j: usize) -> Self {
        let mut perm: Vec<usize> = (0..d).collect();
        perm.swap(i, j);
        Self {
            perm,
            signs: vec![1; d],
        }
    }

    pub fn dim(&self) -> usize {
        self.perm.len()
    }

    pub fn is_identity(&self) -> bool {
        self.perm.iter().enumerate().all(|(i, &p)| i == p) && self.signs.iter().all(|&s| s == 1)
    }

    #[inline]
    pub fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        for i in 0..self.perm.len() {
            let v = x[self.perm[i]];
            out[i] = if self.signs[i] < 0 { -v } else { v };
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; x.len()];
        self.apply_into(x, &mut out);
        out
    }

    /// `self ∘ other`.
    pub fn compose(&self, other: &Self) -> Self {
        let d = self.dim();
        let mut perm = vec![0; d];
        let mut signs = vec![1; d];
        for i in 0..d {
            let p = self.perm[i];
            perm[i] = other.perm[p];
            signs[i] = self.signs[i] * other.signs[p];
        }
        Self { perm, signs }
    }

    pub fn inverse(&self) -> Self {
        let d = self.dim();
        let mut perm = vec![0; d];
        let mut signs = vec![1; d];
        for i in 0..d {
            perm[self.perm[i]] = i;
            signs[self.perm[i]] = self.signs[i];
        }
        Self { perm, signs }
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        let d = self.dim();
        let mut m = DMatrix::zeros(d, d);
        for i in 0..d {
            m[(i, self.perm[i])] = self.signs[i] as f64;
        }
        m
    }

    /// `r M rᵗ` for a row-major `d × d` matrix.
    pub fn conjugate(&self, m: &[f64]) -> Vec<f64> {
        let d = self.dim();
        let mut out = vec![0.0; d * d];
        for i in 0..d {
            for j in 0..d {
                let s = (self.signs[i] * self.signs[j]) as f64;
                out[i * d + j] = s * m[self.perm[i] * d + self.perm[j]];
            }
        }
        out
    }

    /// All `2^d d!` elements of the group.
    pub fn all(d: usize) -> Vec<Self> {
        let mut perms = Vec::new();
        permutations(&mut (0..d).collect::<Vec<_>>(), 0, &mut perms);
        let mut out = Vec::new();
        for p in perms {
            for mask in 0..(1u32 << d) {
                let signs = (0..d)
                    .map(|i| if mask >> i & 1 == 1 { -1 } else { 1 })
                    .collect();
                out.push(Self {
                    perm: p.clone(),
                    signs,
                });
            }
        }
        out
    }
}

fn permutations(v: &mut Vec<usize>, k: usize, out: &mut Vec<Vec<usize>>) {
    if k == v.len() {
        out.push(v.clone());
        return;
    }
    for i in k..v.len() {
        v.swap(k, i);
        permutations(v, k + 1, out);
        v.swap(k, i);
    }
}

/// Symmetric positive square root of a row-major symmetric matrix.
pub fn sym_sqrt(a: &[f64], d: usize, out: &mut [f64]) {
    match d {
        1 => out[0] = a[0].max(0.0).sqrt(),
        2 => {
            let m = Matrix2::from_row_slice(a);
            let e = SymmetricEigen::new(m);
            let s = e.eigenvectors
                * Matrix2::from_diagonal(&e.eigenvalues.map(|l| l.max(0.0).sqrt()))
                * e.eigenvectors.transpose();
            for i in 0..2 {
                for j in 0..2 {
                    out[i * 2 + j] = s[(i, j)];
                }
            }
        }
        3 => {
            let m = Matrix3::from_row_slice(a);
            let e = SymmetricEigen::new(m);
            let s = e.eigenvectors
                * Matrix3::from_diagonal(&e.eigenvalues.map(|l| l.max(0.0).sqrt()))
                * e.eigenvectors.transpose();
            for i in 0..3 {
                for j in 0..3 {
                    out[i * 3 + j] = s[(i, j)];
                }
            }
        }
        _ => {
            let m = DMatrix::from_row_slice(d, d, a);
            let e = SymmetricEigen::new(m);
            let s = &e.eigenvectors
                * DMatrix::from_diagonal(&e.eigenvalues.map(|l| l.max(0.0).sqrt()))
                * e.eigenvectors.transpose();
            for i in 0..d {
                for j in 0..d {
                    out[i * d + j] = s[(i, j)];
                }
            }
        }
    }
}

/// Eigenvalues (ascending) of a small symmetric row-major matrix.
pub fn sym_eigenvalues(a: &[f64], d: usize) -> Vec<f64> {
    let m = DMatrix::from_row_slice(d, d, a);
    let mut ev: Vec<f64> = SymmetricEigen::new(m).eigenvalues.iter().copied().collect();
    ev.sort_by(|x, y| x.total_cmp(y));
    ev
}

/// Coefficients at one point: `A` and `σ = A^{1/2}` row-major, `b` a vector.
#[derive(Debug, Clone, PartialEq)]
pub struct Coefficients {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub sigma: DMatrix<f64>,
}

/// Scratch buffers for allocation-free coefficient evaluation.
#[derive(Debug, Clone)]
pub struct CoefScratch {
    pub b: Vec<f64>,
    /// row-major `d × d`
    pub a: Vec<f64>,
    p: Vec<f64>,
    lo: Vec<i64>,
    hi: Vec<i64>,
    z: Vec<i64>,
    packed: Vec<f64>,
}

impl CoefScratch {
    pub fn new(d: usize) -> Self {
        Self {
            b: vec![0.0; d],
            a: vec![0.0; d * d],
            p: vec![0.0; d],
            lo: vec![0; d],
            hi: vec![0; d],
            z: vec![0; d],
            packed: vec![0.0; d * (d + 1) / 2],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum FieldKind {
    Random,
    /// Test hook: `A ≡ c I`, `b ≡ 0`, bypassing the perturbation bounds.
    ConstantDiffusivity(f64),
}

/// One realization ω, viewed through the frame `x ↦ r x + y`.
#[derive(Debug, Clone)]
pub struct EnvironmentRealization {
    spec: Arc<EnvironmentSpec>,
    seed: u64,
    active: Cube,
    offset: Vec<f64>,
    shift: Vec<f64>,
    symmetry: SignedPermutation,
    kind: FieldKind,
}

/// Samples ω for `spec` and `seed`, evaluable on `active` (underlying
/// coordinates) minus the bump radius.
pub fn sample_environment(
    spec: &Arc<EnvironmentSpec>,
    seed: u64,
    active: Cube,
) -> Result<EnvironmentRealization> {
    spec.validate()?;
    spec.check_ellipticity()?;
    let d = spec.dimension;
    if active.center.len() != d {
        return Err(Error::InvalidParameter(format!(
            "active box has dimension {}, spec has {d}",
            active.center.len()
        )));
    }
    if active.half_width <= spec.bump.radius {
        return Err(Error::BoxTooSmall {
            needed: spec.bump.radius,
            available: active.half_width,
        });
    }
    let offset = (0..d)
        .map(|i| unit_f64(hash_words(seed, &[TAG_OFFSET, i as u64])))
        .collect();
    Ok(EnvironmentRealization {
        spec: Arc::clone(spec),
        seed,
        active,
        offset,
        shift: vec![0.0; d],
        symmetry: SignedPermutation::identity(d),
        kind: FieldKind::Random,
    })
}

impl EnvironmentRealization {
    /// Deterministic field `A ≡ c I`, `b ≡ 0` for calibrating estimators.
    pub fn constant_diffusivity(d: usize, c: f64, active: Cube) -> Self {
        let mut spec = EnvironmentSpec::new(d, 0.0, 0);
        spec.nu = c.max(1.0 / c).max(1.0) + 1.0;
        Self {
            spec: Arc::new(spec),
            seed: 0,
            active,
            offset: vec![0.0; d],
            shift: vec![0.0; d],
            symmetry: SignedPermutation::identity(d),
            kind: FieldKind::ConstantDiffusivity(c),
        }
    }

    pub fn spec(&self) -> &EnvironmentSpec {
        &self.spec
    }

    pub fn dim(&self) -> usize {
        self.spec.dimension
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn active_box(&self) -> &Cube {
        &self.active
    }

    pub fn offset(&self) -> &[f64] {
        &self.offset
    }

    /// True when `b ≡ 0` and `A ≡ I` identically.
    pub fn is_trivial(&self) -> bool {
        match self.kind {
            FieldKind::Random => self.spec.eta0 == 0.0,
            FieldKind::ConstantDiffusivity(c) => c == 1.0,
        }
    }

    /// Upper bounds `(λ_max(A), |b|_max)` valid everywhere.
    pub fn coefficient_bounds(&self) -> (f64, f64) {
        match self.kind {
            FieldKind::Random => (self.spec.eigenvalue_bounds().1, self.spec.drift_bound()),
            FieldKind::ConstantDiffusivity(c) => (c, 0.0),
        }
    }

    /// Lower bound on `λ_min(A)`.
    pub fn ellipticity_lower(&self) -> f64 {
        match self.kind {
            FieldKind::Random => self.spec.eigenvalue_bounds().0,
            FieldKind::ConstantDiffusivity(c) => c,
        }
    }

    /// The view `x ↦ ω(r x + y)` composed with the current frame.
    pub fn transform(&self, y: &[f64], r: &SignedPermutation) -> Result<Self> {
        let d = self.dim();
        if y.len() != d || r.dim() != d {
            return Err(Error::InvalidParameter("shift/symmetry dimension mismatch".into()));
        }
        let ry = self.symmetry.apply(y);
        let shift = ry.iter().zip(&self.shift).map(|(a, b)| a + b).collect();
        Ok(Self {
            shift,
            symmetry: self.symmetry.compose(r),
            ..self.clone()
        })
    }

    /// Pure shift `τ_y`.
    pub fn shifted(&self, y: &[f64]) -> Result<Self> {
        self.transform(y, &SignedPermutation::identity(self.dim()))
    }

    #[inline]
    fn to_underlying(&self, x: &[f64], out: &mut [f64]) {
        self.symmetry.apply_into(x, out);
        for (o, s) in out.iter_mut().zip(&self.shift) {
            *o += s;
        }
    }

    /// Maps a view-coordinate point to the coordinates of the underlying field.
    pub fn underlying_point(&self, x: &[f64]) -> Vec<f64> {
        let mut p = vec![0.0; x.len()];
        self.to_underlying(x, &mut p);
        p
    }

    /// Allocation-free domain check for hot loops.
    #[inline]
    pub fn evaluable_with(&self, x: &[f64], s: &mut CoefScratch) -> bool {
        self.to_underlying(x, &mut s.p);
        self.active
            .contains_with_margin(&s.p, self.spec.bump.radius)
    }

    /// Whether `x` (view coordinates) can be evaluated with `extra` margin.
    pub fn can_evaluate(&self, x: &[f64], extra: f64) -> bool {
        let p = self.underlying_point(x);
        self.active
            .contains_with_margin(&p, self.spec.bump.radius + extra)
    }

    fn check_underlying(&self, p: &[f64], extra: f64) -> Result<()> {
        if self.active.contains_with_margin(p, self.spec.bump.radius + extra) {
            Ok(())
        } else {
            Err(Error::OutOfBox { point: p.to_vec() })
        }
    }

    /// Site-variable key for lattice site `z`.
    fn site_key(&self, z: &[i64]) -> u64 {
        let mut words = [0u64; 8];
        let d = z.len();
        if d + 1 <= words.len() {
            words[0] = TAG_SITE;
            for (w, &zi) in words[1..].iter_mut().zip(z) {
                *w = zi as u64;
            }
            hash_words(self.seed, &words[..d + 1])
        } else {
            let mut v = vec![TAG_SITE];
            v.extend(z.iter().map(|&zi| zi as u64));
            hash_words(self.seed, &v)
        }
    }

    #[inline]
    fn site_value(key: u64, k: u64, half_width: f64) -> f64 {
        half_width * (2.0 * unit_f64(splitmix64(key ^ (k + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15))) - 1.0)
    }

    /// Unscaled profiles `b̂ = Σ V_z ψ`, `M̂ = Σ M_z ψ` at an underlying point,
    /// written into `s.b` and `s.packed` (upper triangle, row-major).
    fn profiles_underlying(&self, p: &[f64], s: &mut CoefScratch) {
        let d = self.dim();
        let spacing = self.spec.site_spacing;
        let rho = self.spec.bump.radius;
        let law = &self.spec.site_law;
        s.b.iter_mut().for_each(|v| *v = 0.0);
        s.packed.iter_mut().for_each(|v| *v = 0.0);
        for i in 0..d {
            s.lo[i] = ((p[i] - rho) / spacing - self.offset[i]).ceil() as i64;
            s.hi[i] = ((p[i] + rho) / spacing - self.offset[i]).floor() as i64;
            if s.lo[i] > s.hi[i] {
                return;
            }
            s.z[i] = s.lo[i];
        }
        let n_m = self.spec.n_matrix_entries();
        loop {
            let mut r2 = 0.0;
            for i in 0..d {
                let dx = p[i] - spacing * (s.z[i] as f64 + self.offset[i]);
                r2 += dx * dx;
            }
            let w = self.spec.bump.value_sq(r2);
            if w > 0.0 {
                let key = self.site_key(&s.z);
                for i in 0..d {
                    s.b[i] += w * Self::site_value(key, i as u64, law.drift_half_width);
                }
                let mut k = 0;
                for i in 0..d {
                    for j in i..d {
                        let hw = if i == j {
                            law.diag_half_width
                        } else {
                            law.offdiag_half_width
                        };
                        s.packed[k] += w * Self::site_value(key, (d + k) as u64, hw);
                        k += 1;
                    }
                }
                debug_assert_eq!(k, n_m);
            }
            // odometer
            let mut axis = d;
            loop {
                if axis == 0 {
                    return;
                }
                axis -= 1;
                if s.z[axis] < s.hi[axis] {
                    s.z[axis] += 1;
                    break;
                }
                s.z[axis] = s.lo[axis];
            }
        }
    }

    /// Evaluates `A` (row-major) and `b` at `x` into `s.a`, `s.b`.
    pub fn coefficients_into(&self, x: &[f64], s: &mut CoefScratch) -> Result<()> {
        let d = self.dim();
        let mut p = std::mem::take(&mut s.p);
        self.to_underlying(x, &mut p);
        let checked = self.check_underlying(&p, 0.0);
        if let Err(e) = checked {
            s.p = p;
            return Err(e);
        }
        match self.kind {
            FieldKind::ConstantDiffusivity(c) => {
                s.b.iter_mut().for_each(|v| *v = 0.0);
                s.a.iter_mut().for_each(|v| *v = 0.0);
                for i in 0..d {
                    s.a[i * d + i] = c;
                }
            }
            FieldKind::Random => {
                let eta = self.spec.eta0;
                if eta == 0.0 {
                    s.b.iter_mut().for_each(|v| *v = 0.0);
                    s.a.iter_mut().for_each(|v| *v = 0.0);
                    for i in 0..d {
                        s.a[i * d + i] = 1.0;
                    }
                } else {
                    self.profiles_underlying(&p, s);
                    for v in s.b.iter_mut() {
                        *v *= eta;
                    }
                    let mut k = 0;
                    for i in 0..d {
                        for j in i..d {
                            let v = eta * s.packed[k];
                            let v = if i == j { 1.0 + v } else { v };
                            s.a[i * d + j] = v;
                            s.a[j * d + i] = v;
                            k += 1;
                        }
                    }
                }
            }
        }
        s.p = p;
        Ok(())
    }

    /// `(A(x), b(x), σ(x))` with `σ` the symmetric positive square root of `A`.
    pub fn eval_coefficients(&self, x: &[f64]) -> Result<Coefficients> {
        let d = self.dim();
        let mut s = CoefScratch::new(d);
        self.coefficients_into(x, &mut s)?;
        let mut sig = vec![0.0; d * d];
        sym_sqrt(&s.a, d, &mut sig);
        Ok(Coefficients {
            a: DMatrix::from_row_slice(d, d, &s.a),
            b: DVector::from_column_slice(&s.b),
            sigma: DMatrix::from_row_slice(d, d, &sig),
        })
    }

    /// Unscaled drift profile `b̂(x)` (equal to `b/η₀` when `η₀ > 0`).
    pub fn drift_profile(&self, x: &[f64]) -> Result<Vec<f64>> {
        let d = self.dim();
        let mut s = CoefScratch::new(d);
        let p = self.underlying_point(x);
        self.check_underlying(&p, 0.0)?;
        if self.kind != FieldKind::Random {
            return Ok(vec![0.0; d]);
        }
        self.profiles_underlying(&p, &mut s);
        Ok(s.b)
    }

    /// Lattice sites whose variables enter the coefficients at `x`.
    pub fn site_dependencies(&self, x: &[f64]) -> Vec<Vec<i64>> {
        let d = self.dim();
        let p = self.underlying_point(x);
        let spacing = self.spec.site_spacing;
        let rho = self.spec.bump.radius;
        let lo: Vec<i64> = (0..d)
            .map(|i| ((p[i] - rho) / spacing - self.offset[i]).ceil() as i64)
            .collect();
        let hi: Vec<i64> = (0..d)
            .map(|i| ((p[i] + rho) / spacing - self.offset[i]).floor() as i64)
            .collect();
        let mut out = Vec::new();
        if lo.iter().zip(&hi).any(|(l, h)| l > h) {
            return out;
        }
        let mut z = lo.clone();
        loop {
            let r2: f64 = (0..d)
                .map(|i| (p[i] - spacing * (z[i] as f64 + self.offset[i])).powi(2))
                .sum();
            if self.spec.bump.value_sq(r2) > 0.0 {
                out.push(z.clone());
            }
            let mut axis = d;
            loop {
                if axis == 0 {
                    return out;
                }
                axis -= 1;
                if z[axis] < hi[axis] {
                    z[axis] += 1;
                    break;
                }
                z[axis] = lo[axis];
            }
        }
    }
}

/// Stationary local functional `f(x, ω)` of the coefficients near `x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum LocalObservable {
    Constant { value: f64 },
    /// `clamp(b̂_i(x), −bound, bound)` for the unscaled drift profile.
    DriftProfile { component: usize, bound: f64 },
    /// `clamp(b_i(x)/η₀, −1, 1)`, identically 0 when `η₀ = 0`.
    ScaledDrift { component: usize },
    /// `1{b̂_i(x) > threshold}`.
    DriftIndicator { component: usize, threshold: f64 },
    /// Mean of `|A(z) − I|_F` over a cubic grid of `points_per_axis^d` points
    /// restricted to the ball `B_radius(x)`.
    MatrixDeviationMean { radius: f64, points_per_axis: usize },
    Combination { terms: Vec<(f64, LocalObservable)> },
}

impl LocalObservable {
    /// Declared measurability radius R₁.
    pub fn radius(&self, spec: &EnvironmentSpec) -> f64 {
        match self {
            LocalObservable::Constant { .. } => 0.0,
            LocalObservable::DriftProfile { .. }
            | LocalObservable::ScaledDrift { .. }
            | LocalObservable::DriftIndicator { .. } => spec.bump.radius,
            LocalObservable::MatrixDeviationMean { radius, .. } => *radius,
            LocalObservable::Combination { terms } => terms
                .iter()
                .map(|(_, o)| o.radius(spec))
                .fold(0.0, f64::max),
        }
    }

    /// Sup-norm bound M.
    pub fn bound(&self, spec: &EnvironmentSpec) -> f64 {
        match self {
            LocalObservable::Constant { value } => value.abs(),
            LocalObservable::DriftProfile { bound, .. } => *bound,
            LocalObservable::ScaledDrift { .. } | LocalObservable::DriftIndicator { .. } => 1.0,
            LocalObservable::MatrixDeviationMean { .. } => {
                let d = spec.dimension as f64;
                let l = &spec.site_law;
                let frob = (d * l.diag_half_width.powi(2)
                    + d * (d - 1.0) * l.offdiag_half_width.powi(2))
                .sqrt();
                spec.eta0 * spec.bump_sum_bound() * frob
            }
            LocalObservable::Combination { terms } => {
                terms.iter().map(|(c, o)| c.abs() * o.bound(spec)).sum()
            }
        }
    }

    /// Short identifier used in result tables.
    pub fn id(&self) -> String {
        match self {
            LocalObservable::Constant { value } => format!("const({value})"),
            LocalObservable::DriftProfile { component, bound } => {
                format!("drift{component}[{bound}]")
            }
            LocalObservable::ScaledDrift { component } => format!("scaled_drift{component}"),
            LocalObservable::DriftIndicator {
                component,
                threshold,
            } => format!("1(drift{component}>{threshold})"),
            LocalObservable::MatrixDeviationMean {
                radius,
                points_per_axis,
            } => format!("mean|A-I|(r={radius},m={points_per_axis})"),
            LocalObservable::Combination { terms } => terms
                .iter()
                .map(|(c, o)| format!("{c}*{}", o.id()))
                .collect::<Vec<_>>()
                .join("+"),
        }
    }

    pub fn is_constant(&self) -> bool {
        matches!(self, LocalObservable::Constant { .. })
    }
}

/// `f(x, ω)`. The window is anchored at the underlying point of `x`, so
/// `evaluate_observable(obs, τ_y ω, x)` and `evaluate_observable(obs, ω, x + y)`
/// perform identical arithmetic.
pub fn evaluate_observable(
    obs: &LocalObservable,
    realization: &EnvironmentRealization,
    x: &[f64],
) -> Result<f64> {
    let p = realization.underlying_point(x);
    let spec = realization.spec();
    realization.check_underlying(&p, obs.radius(spec))?;
    let mut s = CoefScratch::new(realization.dim());
    eval_at_underlying(obs, realization, &p, &mut s)
}

fn eval_at_underlying(
    obs: &LocalObservable,
    w: &EnvironmentRealization,
    p: &[f64],
    s: &mut CoefScratch,
) -> Result<f64> {
    let spec = w.spec();
    let random = w.kind == FieldKind::Random;
    Ok(match obs {
        LocalObservable::Constant { value } => *value,
        LocalObservable::DriftProfile { component, bound } => {
            if !random {
                return Ok(0.0);
            }
            w.profiles_underlying(p, s);
            s.b[*component].clamp(-bound, *bound)
        }
        LocalObservable::ScaledDrift { component } => {
            if !random || spec.eta0 == 0.0 {
                return Ok(0.0);
            }
            w.profiles_underlying(p, s);
            let b = spec.eta0 * s.b[*component];
            (b / spec.eta0).clamp(-1.0, 1.0)
        }
        LocalObservable::DriftIndicator {
            component,
            threshold,
        } => {
            if !random {
                return Ok(if 0.0 > *threshold { 1.0 } else { 0.0 });
            }
            w.profiles_underlying(p, s);
            if s.b[*component] > *threshold {
                1.0
            } else {
                0.0
            }
        }
        LocalObservable::MatrixDeviationMean {
            radius,
            points_per_axis,
        } => {
            if !random || spec.eta0 == 0.0 {
                return Ok(0.0);
            }
            let d = w.dim();
            let m = (*points_per_axis).max(1);
            let step = if m > 1 { 2.0 * radius / (m - 1) as f64 } else { 0.0 };
            let coord = |k: usize| if m > 1 { -radius + step * k as f64 } else { 0.0 };
            let mut idx = vec![0usize; d];
            let mut q = vec![0.0; d];
            let mut sum = 0.0;
            let mut count = 0usize;
            loop {
                let mut r2 = 0.0;
                for i in 0..d {
                    let off = coord(idx[i]);
                    r2 += off * off;
                    q[i] = p[i] + off;
                }
                if r2 <= radius * radius * (1.0 + 1e-12) {
                    w.profiles_underlying(&q, s);
                    let mut f2 = 0.0;
                    let mut k = 0;
                    for i in 0..d {
                        for j in i..d {
                            let v = spec.eta0 * s.packed[k];
                            f2 += if i == j { v * v } else { 2.0 * v * v };
                            k += 1;
                        }
                    }
                    sum += f2.sqrt();
                    count += 1;
                }
                let mut axis = d;
                let done = loop {
                    if axis == 0 {
                        break true;
                    }
                    axis -= 1;
                    if idx[axis] + 1 < m {
                        idx[axis] += 1;
                        break false;
                    }
                    idx[axis] = 0;
                };
                if done {
                    break;
                }
            }
            sum / count as f64
        }
        LocalObservable::Combination { terms } => {
            let mut acc = 0.0;
            for (c, o) in terms {
                acc += c * eval_at_underlying(o, w, p, s)?;
            }
            acc
        }
    })
}

/// Summary statistics of `n_samples` realizations checked against the
/// structural bounds of the construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditReport {
    pub n_samples: usize,
    pub max_drift: f64,
    pub max_deviation: f64,
    pub min_eigenvalue: f64,
    pub max_eigenvalue: f64,
    pub drift_lipschitz_estimate: f64,
    pub matrix_lipschitz_estimate: f64,
    pub bound_drift: f64,
    pub bound_deviation: f64,
    pub bound_eigenvalues: (f64, f64),
    pub bound_drift_lipschitz: f64,
    pub bound_matrix_lipschitz: f64,
    /// Correlation of `b₁(0)` and `b₁(R e₁)` across realizations.
    pub far_correlation: f64,
    pub far_distance: f64,
    /// `max_r` of the discrepancy between empirical moments at `r x₀` and the
    /// transformed moments at `x₀`.
    pub isotropy_discrepancy: f64,
    /// Largest standard error among the compared moments, for scale.
    pub isotropy_stderr_scale: f64,
    /// Moment check on the site-law generator itself.
    pub law_discrepancy: f64,
    pub within_bounds: bool,
}

pub fn audit_environment(
    spec: &Arc<EnvironmentSpec>,
    n_samples: usize,
    seed: u64,
) -> Result<AuditReport> {
    if n_samples < 100 {
        return Err(Error::InsufficientSamples {
            got: n_samples,
            need: 100,
        });
    }
    spec.validate()?;
    let d = spec.dimension;
    let rho = spec.bump.radius;
    let far = spec.range;
    let active = Cube::centered(d, far + 2.0 + 2.0 * rho);
    let points_per_env = 8;
    let fd_step = 1e-5;

    let mut max_drift: f64 = 0.0;
    let mut max_dev: f64 = 0.0;
    let mut min_ev = f64::INFINITY;
    let mut max_ev = f64::NEG_INFINITY;
    let mut lip_b: f64 = 0.0;
    let mut lip_a: f64 = 0.0;
    let mut near = Vec::with_capacity(n_samples);
    let mut far_vals = Vec::with_capacity(n_samples);

    let group = SignedPermutation::all(d);
    let x0: Vec<f64> = (0..d).map(|i| 0.31 + 0.17 * i as f64).collect();
    // Per group element: sums of b, b bᵗ, A at r x0.
    let mut sums_b = vec![vec![0.0; d]; group.len()];
    let mut sums_bb = vec![vec![0.0; d * d]; group.len()];
    let mut sums_a = vec![vec![0.0; d * d]; group.len()];
    let mut sq_b = vec![vec![0.0; d]; group.len()];

    let mut s = CoefScratch::new(d);
    for k in 0..n_samples {
        let env_seed = derive_seed(seed, &[TAG_AUDIT, k as u64]);
        let w = sample_environment(spec, env_seed, active.clone())?;
        for j in 0..points_per_env {
            let x: Vec<f64> = (0..d)
                .map(|i| {
                    2.0 * unit_f64(hash_words(env_seed, &[TAG_AUDIT, j as u64, i as u64])) - 1.0
                })
                .collect();
            w.coefficients_into(&x, &mut s)?;
            let b0 = s.b.clone();
            let a0 = s.a.clone();
            max_drift = max_drift.max(norm(&b0));
            let mut dev = a0.clone();
            for i in 0..d {
                dev[i * d + i] -= 1.0;
            }
            let ev_dev = sym_eigenvalues(&dev, d);
            max_dev = max_dev.max(ev_dev[0].abs().max(ev_dev[d - 1].abs()));
            let ev = sym_eigenvalues(&a0, d);
            min_ev = min_ev.min(ev[0]);
            max_ev = max_ev.max(ev[d - 1]);

            let dir: Vec<f64> = {
                let raw: Vec<f64> = (0..d)
                    .map(|i| {
                        2.0 * unit_f64(hash_words(env_seed, &[TAG_AUDIT, 100 + j as u64, i as u64]))
                            - 1.0
                    })
                    .collect();
                let n = norm(&raw).max(1e-12);
                raw.iter().map(|v| v / n).collect()
            };
            let x1: Vec<f64> = x.iter().zip(&dir).map(|(a, b)| a + fd_step * b).collect();
            w.coefficients_into(&x1, &mut s)?;
            let db: Vec<f64> = s.b.iter().zip(&b0).map(|(a, b)| a - b).collect();
            lip_b = lip_b.max(norm(&db) / fd_step);
            let da: Vec<f64> = s.a.iter().zip(&a0).map(|(a, b)| a - b).collect();
            let ev_da = sym_eigenvalues(&da, d);
            lip_a = lip_a.max(ev_da[0].abs().max(ev_da[d - 1].abs()) / fd_step);
        }

        let origin = vec![0.0; d];
        w.coefficients_into(&origin, &mut s)?;
        near.push(s.b[0]);
        let mut xf = vec![0.0; d];
        xf[0] = far;
        w.coefficients_into(&xf, &mut s)?;
        far_vals.push(s.b[0]);

        for (g, r) in group.iter().enumerate() {
            let rx = r.apply(&x0);
            w.coefficients_into(&rx, &mut s)?;
            for i in 0..d {
                sums_b[g][i] += s.b[i];
                sq_b[g][i] += s.b[i] * s.b[i];
                for j in 0..d {
                    sums_bb[g][i * d + j] += s.b[i] * s.b[j];
                    sums_a[g][i * d + j] += s.a[i * d + j];
                }
            }
        }
    }

    let n = n_samples as f64;
    let id = group.iter().position(|r| r.is_identity()).unwrap_or(0);
    let mean_b0: Vec<f64> = sums_b[id].iter().map(|v| v / n).collect();
    let mean_bb0: Vec<f64> = sums_bb[id].iter().map(|v| v / n).collect();
    let mean_a0: Vec<f64> = sums_a[id].iter().map(|v| v / n).collect();
    let mut iso: f64 = 0.0;
    let mut scale: f64 = 0.0;
    for (g, r) in group.iter().enumerate() {
        let mb: Vec<f64> = sums_b[g].iter().map(|v| v / n).collect();
        let rb = r.apply(&mean_b0);
        let mbb: Vec<f64> = sums_bb[g].iter().map(|v| v / n).collect();
        let rbb = r.conjugate(&mean_bb0);
        let ma: Vec<f64> = sums_a[g].iter().map(|v| v / n).collect();
        let ra = r.conjugate(&mean_a0);
        for i in 0..d {
            iso = iso.max((mb[i] - rb[i]).abs());
            let var = (sq_b[g][i] / n - mb[i] * mb[i]).max(0.0);
            scale = scale.max((var / n).sqrt());
        }
        for k in 0..d * d {
            iso = iso.max((mbb[k] - rbb[k]).abs());
            iso = iso.max((ma[k] - ra[k]).abs());
        }
    }
    let law_discrepancy = group
        .iter()
        .map(|r| spec.site_law.moment_discrepancy(r))
        .fold(0.0, f64::max);

    let far_correlation = correlation(&near, &far_vals);
    let (lo, hi) = spec.eigenvalue_bounds();
    let slack = 1e-12;
    let within_bounds = max_drift <= spec.drift_bound() + slack
        && max_dev <= spec.perturbation_bound() + slack
        && min_ev >= lo - slack
        && max_ev <= hi + slack;
    Ok(AuditReport {
        n_samples,
        max_drift,
        max_deviation: max_dev,
        min_eigenvalue: min_ev,
        max_eigenvalue: max_ev,
        drift_lipschitz_estimate: lip_b,
        matrix_lipschitz_estimate: lip_a,
        bound_drift: spec.drift_bound(),
        bound_deviation: spec.perturbation_bound(),
        bound_eigenvalues: (lo, hi),
        bound_drift_lipschitz: spec.drift_lipschitz_bound(),
        bound_matrix_lipschitz: spec.matrix_lipschitz_bound(),
        far_correlation,
        far_distance: far,
        isotropy_discrepancy: iso,
        isotropy_stderr_scale: scale,
        law_discrepancy,
        within_bounds,
    })
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Pearson correlation; 0 when either sample is constant.
pub fn correlation(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        0.0
    } else {
        sxy / (sxx * syy).sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(d: usize, eta: f64) -> Arc<EnvironmentSpec> {
        Arc::new(EnvironmentSpec::new(d, eta, 3))
    }

    fn points(d: usize, n: usize, half: f64, seed: u64) -> Vec<Vec<f64>> {
        (0..n)
            .map(|k| {
                (0..d)
                    .map(|i| half * (2.0 * unit_f64(hash_words(seed, &[k as u64, i as u64])) - 1.0))
                    .collect()
            })
            .collect()
    }

    #[test]
    fn zero_perturbation_is_identity_field() {
        let w = sample_environment(&spec(3, 0.0), 1, Cube::centered(3, 5.0)).unwrap();
        for x in points(3, 20, 3.0, 2) {
            let c = w.eval_coefficients(&x).unwrap();
            assert_eq!(c.a, DMatrix::identity(3, 3));
            assert_eq!(c.sigma, DMatrix::identity(3, 3));
            assert!(c.b.iter().all(|&v| v == 0.0));
        }
        let obs = LocalObservable::ScaledDrift { component: 0 };
        assert_eq!(evaluate_observable(&obs, &w, &[0.0; 3]).unwrap(), 0.0);
    }

    #[test]
    fn same_seed_same_field() {
        let s = spec(2, 0.1);
        let w1 = sample_environment(&s, 9, Cube::centered(2, 6.0)).unwrap();
        let w2 = sample_environment(&s, 9, Cube::centered(2, 6.0)).unwrap();
        for x in points(2, 100, 4.0, 5) {
            let (a, b) = (w1.eval_coefficients(&x).unwrap(), w2.eval_coefficients(&x).unwrap());
            assert_eq!(a.a, b.a);
            assert_eq!(a.b, b.b);
        }
    }

    #[test]
    fn eigenvalues_within_interval_bound() {
        let s = spec(2, 0.1);
        let (lo, hi) = s.eigenvalue_bounds();
        assert!(lo >= 0.5 && hi <= 2.0);
        let w = sample_environment(&s, 4, Cube::centered(2, 8.0)).unwrap();
        for x in points(2, 200, 6.0, 7) {
            let c = w.eval_coefficients(&x).unwrap();
            let sq = &c.sigma * &c.sigma.transpose();
            assert!((sq - &c.a).abs().max() < 1e-12);
            let ev = c.a.symmetric_eigenvalues();
            assert!(ev.min() >= lo - 1e-12 && ev.max() <= hi + 1e-12);
        }
    }

    #[test]
    fn incompatible_eta_is_rejected() {
        let s = spec(2, 0.6);
        assert!(matches!(
            sample_environment(&s, 1, Cube::centered(2, 5.0)),
            Err(Error::Ellipticity { .. })
        ));
        let s = spec(2, 0.1);
        assert!(matches!(
            sample_environment(&s, 1, Cube::centered(2, 0.5)),
            Err(Error::BoxTooSmall { .. })
        ));
    }

    #[test]
    fn out_of_box_evaluation_errors() {
        let w = sample_environment(&spec(2, 0.1), 1, Cube::centered(2, 3.0)).unwrap();
        assert!(matches!(w.eval_coefficients(&[2.9, 0.0]), Err(Error::OutOfBox { .. })));
    }

    #[test]
    fn transforms_compose_and_invert() {
        let w = sample_environment(&spec(2, 0.1), 6, Cube::centered(2, 10.0)).unwrap();
        let y = [0.37, -1.21];
        let back = w.shifted(&y).unwrap().shifted(&[-0.37, 1.21]).unwrap();
        let r = SignedPermutation::new(vec![1, 0], vec![-1, 1]).unwrap();
        let view = w.transform(&y, &r).unwrap();
        for x in points(2, 30, 3.0, 8) {
            assert_eq!(w.eval_coefficients(&x).unwrap().b, back.eval_coefficients(&x).unwrap().b);
            let rxy: Vec<f64> = r.apply(&x).iter().zip(&y).map(|(a, b)| a + b).collect();
            let lhs = view.eval_coefficients(&x).unwrap();
            let rhs = w.eval_coefficients(&rxy).unwrap();
            assert!((lhs.a - rhs.a).abs().max() < 1e-15);
        }
    }

    #[test]
    fn observables_are_stationary_and_bounded() {
        let s = spec(2, 0.1);
        let w = sample_environment(&s, 11, Cube::centered(2, 12.0)).unwrap();
        let obs = LocalObservable::MatrixDeviationMean { radius: 0.6, points_per_axis: 4 };
        let ys = points(2, 50, 3.0, 12);
        let xs = points(2, 50, 3.0, 13);
        for (y, x) in ys.iter().zip(&xs) {
            let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a + b).collect();
            let a = evaluate_observable(&obs, &w.shifted(y).unwrap(), x).unwrap();
            let b = evaluate_observable(&obs, &w, &xy).unwrap();
            assert_eq!(a, b);
            assert!(a.abs() <= obs.bound(&s));
        }
        let one = LocalObservable::Constant { value: 1.0 };
        assert_eq!(evaluate_observable(&one, &w, &[0.5, 0.5]).unwrap(), 1.0);
    }

    #[test]
    fn distant_points_use_disjoint_sites() {
        let s = spec(2, 0.1);
        let w = sample_environment(&s, 2, Cube::centered(2, 10.0)).unwrap();
        let a = w.site_dependencies(&[0.0, 0.0]);
        let b = w.site_dependencies(&[s.range, 0.0]);
        assert!(!a.is_empty());
        assert!(a.iter().all(|z| !b.contains(z)));
    }

    #[test]
    fn signed_permutations_form_a_group() {
        let g = SignedPermutation::all(3);
        assert_eq!(g.len(), 48);
        for r in &g {
            assert!(r.compose(&r.inverse()).is_identity());
            let m = r.matrix();
            assert!((&m * m.transpose() - DMatrix::identity(3, 3)).abs().max() == 0.0);
        }
    }

    #[test]
    fn site_law_is_isotropic() {
        let s = spec(3, 0.1);
        for r in SignedPermutation::all(3) {
            assert!(s.site_law.moment_discrepancy(&r) < 1e-15);
        }
    }

    #[test]
    fn audit_of_zero_field_is_exactly_zero() {
        let r = audit_environment(&spec(2, 0.0), 100, 1).unwrap();
        assert_eq!(r.max_drift, 0.0);
        assert_eq!(r.max_deviation, 0.0);
        assert_eq!(r.isotropy_discrepancy, 0.0);
        assert!(audit_environment(&spec(2, 0.0), 50, 1).is_err());
    }

    #[test]
    fn audit_respects_bounds() {
        let r = audit_environment(&spec(2, 0.1), 400, 5).unwrap();
        assert!(r.within_bounds);
        assert!(r.min_eigenvalue >= 0.5 && r.max_eigenvalue <= 2.0);
        assert!(r.far_correlation.abs() <= 3.0 / (400f64).sqrt());
        assert!(r.drift_lipschitz_estimate <= r.bound_drift_lipschitz * (1.0 + 1e-3));
    }
}
