//! Uniform lattices over cubes and the scalar fields sampled on them.
//!
//! A [`Grid`] has nodes `center + h k` with `k_i ∈ [-n_i, n_i]`, so the center
//! is always a node and grids with equal `h` and centers on a common lattice
//! nest exactly. Values are stored row-major with the last axis fastest.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MAGIC: &[u8; 8] = b"HLGRID01";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub center: Vec<f64>,
    pub h: f64,
    /// Nodes per axis are `2 n_i + 1`.
    pub half_counts: Vec<usize>,
}

impl Grid {
    pub fn new(center: Vec<f64>, h: f64, half_counts: Vec<usize>) -> Result<Self> {
        if !(h > 0.0 && h.is_finite()) {
            return Err(Error::InvalidParameter(format!("grid spacing must be positive, got {h}")));
        }
        if center.len() != half_counts.len() || center.is_empty() {
            return Err(Error::GridMismatch("center and counts differ in dimension".into()));
        }
        Ok(Self {
            center,
            h,
            half_counts,
        })
    }

    /// Cube of half-width at least `half_width` (rounded up to whole cells).
    pub fn cube(center: Vec<f64>, half_width: f64, h: f64) -> Result<Self> {
        let n = (half_width / h - 1e-9).ceil().max(0.0) as usize;
        let d = center.len();
        Self::new(center, h, vec![n; d])
    }

    pub fn dim(&self) -> usize {
        self.center.len()
    }

    pub fn shape(&self) -> Vec<usize> {
        self.half_counts.iter().map(|n| 2 * n + 1).collect()
    }

    pub fn len(&self) -> usize {
        self.half_counts.iter().map(|n| 2 * n + 1).product()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn half_widths(&self) -> Vec<f64> {
        self.half_counts.iter().map(|&n| n as f64 * self.h).collect()
    }

    pub fn min_half_count(&self) -> usize {
        self.half_counts.iter().copied().min().unwrap_or(0)
    }

    /// Flat-index increments per axis.
    pub fn strides(&self) -> Vec<usize> {
        let shape = self.shape();
        let mut s = vec![1; shape.len()];
        for i in (0..shape.len().saturating_sub(1)).rev() {
            s[i] = s[i + 1] * shape[i + 1];
        }
        s
    }

    pub fn flat(&self, idx: &[usize]) -> usize {
        let shape = self.shape();
        idx.iter().zip(&shape).fold(0, |acc, (&i, &n)| acc * n + i)
    }

    pub fn multi(&self, mut flat: usize) -> Vec<usize> {
        let shape = self.shape();
        let mut idx = vec![0; shape.len()];
        for i in (0..shape.len()).rev() {
            idx[i] = flat % shape[i];
            flat /= shape[i];
        }
        idx
    }

    pub fn point_into(&self, flat: usize, out: &mut [f64]) {
        let shape = self.shape();
        let mut f = flat;
        for i in (0..shape.len()).rev() {
            let k = (f % shape[i]) as f64 - self.half_counts[i] as f64;
            out[i] = self.center[i] + self.h * k;
            f /= shape[i];
        }
    }

    pub fn point(&self, flat: usize) -> Vec<f64> {
        let mut p = vec![0.0; self.dim()];
        self.point_into(flat, &mut p);
        p
    }

    /// Flat index of the node at `x`, if `x` is a node up to `1e-9 h`.
    pub fn node_at(&self, x: &[f64]) -> Option<usize> {
        let mut idx = Vec::with_capacity(self.dim());
        for i in 0..self.dim() {
            let k = (x[i] - self.center[i]) / self.h;
            let r = k.round();
            if (k - r).abs() > 1e-9 || r.abs() > self.half_counts[i] as f64 {
                return None;
            }
            idx.push((r as i64 + self.half_counts[i] as i64) as usize);
        }
        Some(self.flat(&idx))
    }

    pub fn center_index(&self) -> usize {
        self.flat(&self.half_counts)
    }

    /// Grid with `cells` nodes removed from every side.
    pub fn shrink(&self, cells: usize) -> Result<Self> {
        let avail = self.min_half_count();
        if cells > avail {
            return Err(Error::Margin {
                needed: cells,
                available: avail,
            });
        }
        Ok(Self {
            center: self.center.clone(),
            h: self.h,
            half_counts: self.half_counts.iter().map(|n| n - cells).collect(),
        })
    }

    /// Whether every node of `other` is a node of `self`.
    pub fn contains_grid(&self, other: &Grid) -> bool {
        if (self.h - other.h).abs() > 1e-12 * self.h || self.dim() != other.dim() {
            return false;
        }
        (0..self.dim()).all(|i| {
            let k = (other.center[i] - self.center[i]) / self.h;
            let r = k.round();
            (k - r).abs() < 1e-9
                && r.abs() + other.half_counts[i] as f64 <= self.half_counts[i] as f64
        })
    }

    /// Offset (in nodes, per axis) of `other`'s first node inside `self`.
    fn origin_of(&self, other: &Grid) -> Vec<usize> {
        (0..self.dim())
            .map(|i| {
                let k = ((other.center[i] - self.center[i]) / self.h).round() as i64;
                (self.half_counts[i] as i64 + k - other.half_counts[i] as i64) as usize
            })
            .collect()
    }

    pub fn contains_point(&self, x: &[f64], margin: f64) -> bool {
        (0..self.dim())
            .all(|i| (x[i] - self.center[i]).abs() <= self.half_counts[i] as f64 * self.h - margin)
    }
}

/// A scalar function sampled on a [`Grid`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridField {
    pub grid: Grid,
    pub values: Vec<f64>,
    pub level: Option<usize>,
}

impl GridField {
    pub fn new(grid: Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::GridMismatch(format!(
                "{} values for a grid of {} nodes",
                values.len(),
                grid.len()
            )));
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::GridMismatch(format!("non-finite value at node {i}")));
        }
        Ok(Self {
            grid,
            values,
            level: None,
        })
    }

    pub fn constant(grid: Grid, c: f64) -> Self {
        let n = grid.len();
        Self {
            grid,
            values: vec![c; n],
            level: None,
        }
    }

    pub fn from_fn(grid: Grid, mut f: impl FnMut(&[f64]) -> f64) -> Self {
        let mut p = vec![0.0; grid.dim()];
        let values = (0..grid.len())
            .map(|k| {
                grid.point_into(k, &mut p);
                f(&p)
            })
            .collect();
        Self {
            grid,
            values,
            level: None,
        }
    }

    pub fn try_from_fn(grid: Grid, mut f: impl FnMut(&[f64]) -> Result<f64>) -> Result<Self> {
        let mut p = vec![0.0; grid.dim()];
        let mut values = Vec::with_capacity(grid.len());
        for k in 0..grid.len() {
            grid.point_into(k, &mut p);
            values.push(f(&p)?);
        }
        Ok(Self {
            grid,
            values,
            level: None,
        })
    }

    pub fn with_level(mut self, level: usize) -> Self {
        self.level = Some(level);
        self
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn center_value(&self) -> f64 {
        self.values[self.grid.center_index()]
    }

    /// Value at a node; `x` must be a node.
    pub fn at(&self, x: &[f64]) -> Result<f64> {
        self.grid
            .node_at(x)
            .map(|k| self.values[k])
            .ok_or_else(|| Error::OutOfBox { point: x.to_vec() })
    }

    /// Multilinear interpolation.
    pub fn interpolate(&self, x: &[f64]) -> Result<f64> {
        let d = self.grid.dim();
        if !self.grid.contains_point(x, 0.0) {
            return Err(Error::OutOfBox { point: x.to_vec() });
        }
        let shape = self.grid.shape();
        let strides = self.grid.strides();
        let mut base = 0usize;
        let mut frac = vec![0.0; d];
        for i in 0..d {
            let k = (x[i] - self.grid.center[i]) / self.grid.h + self.grid.half_counts[i] as f64;
            let k0 = (k.floor() as usize).min(shape[i].saturating_sub(2));
            frac[i] = if shape[i] == 1 { 0.0 } else { k - k0 as f64 };
            base += k0 * strides[i];
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << d) {
            let mut w = 1.0;
            let mut idx = base;
            for i in 0..d {
                if corner >> i & 1 == 1 {
                    w *= frac[i];
                    idx += if shape[i] > 1 { strides[i] } else { 0 };
                } else {
                    w *= 1.0 - frac[i];
                }
            }
            if w != 0.0 {
                acc += w * self.values[idx];
            }
        }
        Ok(acc)
    }

    /// Restriction to a sub-grid whose nodes are nodes of `self.grid`.
    pub fn restrict(&self, target: &Grid) -> Result<GridField> {
        if !self.grid.contains_grid(target) {
            return Err(Error::GridMismatch("target grid is not a sub-grid".into()));
        }
        let origin = self.grid.origin_of(target);
        let strides = self.grid.strides();
        let d = target.dim();
        let tshape = target.shape();
        let mut values = Vec::with_capacity(target.len());
        let mut idx = vec![0usize; d];
        let row = tshape[d - 1];
        loop {
            let start: usize = (0..d).map(|i| (origin[i] + idx[i]) * strides[i]).sum();
            values.extend_from_slice(&self.values[start..start + row]);
            let mut axis = d - 1;
            loop {
                if axis == 0 {
                    return Ok(GridField {
                        grid: target.clone(),
                        values,
                        level: self.level,
                    });
                }
                axis -= 1;
                idx[axis] += 1;
                if idx[axis] < tshape[axis] {
                    break;
                }
                idx[axis] = 0;
            }
        }
    }

    /// Values at the nodes of `target`, each of which must be a node of
    /// `self.grid` (e.g. a coarser concentric grid).
    pub fn sample_on(&self, target: &Grid) -> Result<GridField> {
        let mut p = vec![0.0; target.dim()];
        let mut values = Vec::with_capacity(target.len());
        for k in 0..target.len() {
            target.point_into(k, &mut p);
            values.push(self.at(&p)?);
        }
        Ok(GridField {
            grid: target.clone(),
            values,
            level: self.level,
        })
    }

    pub fn shrink(&self, cells: usize) -> Result<GridField> {
        let g = self.grid.shrink(cells)?;
        self.restrict(&g)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> GridField {
        GridField {
            grid: self.grid.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
            level: self.level,
        }
    }

    /// Pointwise combination on the common sub-grid (the smaller of two
    /// concentric grids).
    pub fn zip_with(&self, other: &GridField, f: impl Fn(f64, f64) -> f64) -> Result<GridField> {
        let (a, b) = if self.grid.contains_grid(&other.grid) {
            (self.restrict(&other.grid)?, other.clone())
        } else if other.grid.contains_grid(&self.grid) {
            (self.clone(), other.restrict(&self.grid)?)
        } else {
            return Err(Error::GridMismatch("grids are not nested".into()));
        };
        let values = a.values.iter().zip(&b.values).map(|(&x, &y)| f(x, y)).collect();
        Ok(GridField {
            grid: a.grid,
            values,
            level: self.level.or(other.level),
        })
    }

    pub fn sub(&self, other: &GridField) -> Result<GridField> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &GridField) -> Result<GridField> {
        self.zip_with(other, |a, b| a * b)
    }

    /// Flat binary layout: magic, dimension, per-axis node counts, center,
    /// half-widths, spacing, level, then little-endian `f64` values row-major.
    pub fn write_binary(&self, mut w: impl Write) -> Result<()> {
        let d = self.grid.dim();
        w.write_all(MAGIC)?;
        w.write_all(&(d as u64).to_le_bytes())?;
        for n in self.grid.shape() {
            w.write_all(&(n as u64).to_le_bytes())?;
        }
        for c in &self.grid.center {
            w.write_all(&c.to_le_bytes())?;
        }
        for hw in self.grid.half_widths() {
            w.write_all(&hw.to_le_bytes())?;
        }
        w.write_all(&self.grid.h.to_le_bytes())?;
        let level = self.level.map(|l| l as i64).unwrap_or(-1);
        w.write_all(&level.to_le_bytes())?;
        for v in &self.values {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_binary(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read_binary(mut r: impl Read) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(Error::Format("bad magic".into()));
        }
        let mut u = || -> Result<u64> {
            let mut b = [0u8; 8];
            r.read_exact(&mut b)?;
            Ok(u64::from_le_bytes(b))
        };
        let d = u()? as usize;
        if d == 0 || d > 16 {
            return Err(Error::Format(format!("implausible dimension {d}")));
        }
        let mut shape = Vec::with_capacity(d);
        for _ in 0..d {
            let n = u()? as usize;
            if n % 2 == 0 {
                return Err(Error::Format("node counts must be odd".into()));
            }
            shape.push(n);
        }
        let mut center = Vec::with_capacity(d);
        for _ in 0..d {
            center.push(f64::from_bits(u()?));
        }
        let mut hws = Vec::with_capacity(d);
        for _ in 0..d {
            hws.push(f64::from_bits(u()?));
        }
        let h = f64::from_bits(u()?);
        let level = u()? as i64;
        let half_counts: Vec<usize> = shape.iter().map(|n| n / 2).collect();
        for (hw, &n) in hws.iter().zip(&half_counts) {
            if (hw - n as f64 * h).abs() > 1e-9 * (1.0 + hw.abs()) {
                return Err(Error::Format("half-widths inconsistent with counts and spacing".into()));
            }
        }
        let grid = Grid::new(center, h, half_counts)?;
        let mut values = Vec::with_capacity(grid.len());
        for _ in 0..grid.len() {
            values.push(f64::from_bits(u()?));
        }
        let mut f = GridField::new(grid, values)?;
        f.level = (level >= 0).then_some(level as usize);
        Ok(f)
    }

    /// `x_0,...,x_{d-1},value` rows with a header.
    pub fn to_csv(&self) -> String {
        let d = self.grid.dim();
        let mut s = String::new();
        for i in 0..d {
            s.push_str(&format!("x{i},"));
        }
        s.push_str("value\n");
        let mut p = vec![0.0; d];
        for (k, v) in self.values.iter().enumerate() {
            self.grid.point_into(k, &mut p);
            for x in &p {
                s.push_str(&format!("{x},"));
            }
            s.push_str(&format!("{v}\n"));
        }
        s
    }
}
