//! Uniform cell grids on the torus `R^d/Λ` and grid functions on them.
//!
//! Cells are indexed in reduced coordinates `u = B^{-1}x ∈ [0,1)^d` with the
//! first axis varying fastest. Values live at cell centers.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::periodic::{wrap_unit, Lattice};

#[derive(Debug, Clone, PartialEq)]
pub struct TorusGrid {
    dim: usize,
    m: usize,
    lattice: Lattice,
    /// Shift of the binning origin in units of one cell.
    offset: f64,
}

impl TorusGrid {
    pub fn new(lattice: Lattice, m: usize) -> Result<Self> {
        Self::with_offset(lattice, m, 0.0)
    }

    pub fn with_offset(lattice: Lattice, m: usize, offset: f64) -> Result<Self> {
        let dim = lattice.dim();
        if m == 0 {
            return Err(Error::InvalidConfig("grid resolution must be positive".into()));
        }
        if dim == 0 || dim > 3 {
            return Err(Error::UnsupportedDimension(dim));
        }
        let cells = (m as u128).pow(dim as u32);
        if cells > 10u128.pow(7) {
            return Err(Error::InvalidConfig(format!("grid with {cells} cells is too large")));
        }
        Ok(Self { dim, m, lattice, offset })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn offset(&self) -> f64 {
        self.offset
    }

    pub fn lattice(&self) -> &Lattice {
        &self.lattice
    }

    pub fn len(&self) -> usize {
        self.m.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Multi-index of a flat cell index.
    pub fn multi_index(&self, mut idx: usize, out: &mut [usize]) {
        for o in out.iter_mut().take(self.dim) {
            *o = idx % self.m;
            idx /= self.m;
        }
    }

    pub fn flat_index(&self, multi: &[usize]) -> usize {
        multi.iter().rev().fold(0, |acc, &i| acc * self.m + i % self.m)
    }

    /// Reduced coordinates of a cell center.
    pub fn center_reduced(&self, idx: usize, u: &mut [f64]) {
        let mut rem = idx;
        for c in u.iter_mut().take(self.dim) {
            let i = rem % self.m;
            rem /= self.m;
            *c = wrap_unit((i as f64 + 0.5 + self.offset) / self.m as f64);
        }
    }

    /// Physical coordinates of a cell center.
    pub fn center(&self, idx: usize) -> Vec<f64> {
        let mut u = vec![0.0; self.dim];
        let mut x = vec![0.0; self.dim];
        self.center_reduced(idx, &mut u);
        self.lattice.to_physical(&u, &mut x);
        x
    }

    pub fn centers(&self) -> Vec<Vec<f64>> {
        (0..self.len()).map(|i| self.center(i)).collect()
    }

    /// Cell containing the reduced point `u` (any real coordinates).
    #[inline]
    pub fn cell_of_reduced(&self, u: &[f64]) -> usize {
        let m = self.m as f64;
        let mut idx = 0usize;
        for k in (0..self.dim).rev() {
            let s = wrap_unit(u[k] - self.offset / m) * m;
            let i = (s as usize).min(self.m - 1);
            idx = idx * self.m + i;
        }
        idx
    }

    /// Cell containing the physical point `x`.
    #[inline]
    pub fn cell_of(&self, x: &[f64]) -> usize {
        let mut u = [0.0f64; 3];
        self.lattice.to_reduced(x, &mut u[..self.dim]);
        self.cell_of_reduced(&u[..self.dim])
    }

    /// Periodic multilinear interpolation weights at reduced point `u`:
    /// calls `f(cell, weight)` for each of the `2^d` surrounding centers.
    #[inline]
    pub fn interp_weights<F: FnMut(usize, f64)>(&self, u: &[f64], mut f: F) {
        let m = self.m;
        let mf = m as f64;
        let mut base = [0usize; 3];
        let mut frac = [0.0f64; 3];
        for k in 0..self.dim {
            let s = wrap_unit(u[k] - (0.5 + self.offset) / mf) * mf;
            let i = s.floor();
            base[k] = (i as usize).min(m - 1);
            frac[k] = (s - i).clamp(0.0, 1.0);
        }
        for corner in 0..(1usize << self.dim) {
            let mut w = 1.0;
            let mut idx = 0usize;
            for k in (0..self.dim).rev() {
                let hi = (corner >> k) & 1 == 1;
                let i = if hi { (base[k] + 1) % m } else { base[k] };
                w *= if hi { frac[k] } else { 1.0 - frac[k] };
                idx = idx * m + i;
            }
            if w != 0.0 {
                f(idx, w);
            }
        }
    }
}

/// Scalar function sampled at the cell centers of a [`TorusGrid`].
#[derive(Debug, Clone, PartialEq)]
pub struct GridFunction {
    pub grid: TorusGrid,
    pub values: Vec<f64>,
}

impl GridFunction {
    pub fn new(grid: TorusGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::DimensionMismatch { expected: grid.len(), got: values.len() });
        }
        Ok(Self { grid, values })
    }

    pub fn constant(grid: TorusGrid, c: f64) -> Self {
        let n = grid.len();
        Self { grid, values: vec![c; n] }
    }

    /// Samples `f` at cell centers (physical coordinates).
    pub fn from_fn<F: Fn(&[f64]) -> f64>(grid: TorusGrid, f: F) -> Self {
        let values = (0..grid.len()).map(|i| f(&grid.center(i))).collect();
        Self { grid, values }
    }

    #[inline]
    pub fn interpolate_reduced(&self, u: &[f64]) -> f64 {
        let mut acc = 0.0;
        self.grid.interp_weights(u, |i, w| acc += w * self.values[i]);
        acc
    }

    /// Periodic multilinear interpolation at a physical point.
    #[inline]
    pub fn interpolate(&self, x: &[f64]) -> f64 {
        let mut u = [0.0f64; 3];
        let d = self.grid.dim();
        self.grid.lattice().to_reduced(x, &mut u[..d]);
        self.interpolate_reduced(&u[..d])
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0f64, |a, v| a.max(v.abs()))
    }
}

/// Compact serializable description of a grid, used in file headers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub dim: usize,
    pub m: usize,
    pub lattice: Vec<Vec<f64>>,
    #[serde(default)]
    pub offset: f64,
}

impl From<&TorusGrid> for GridSpec {
    fn from(g: &TorusGrid) -> Self {
        Self { dim: g.dim, m: g.m, lattice: g.lattice.generators(), offset: g.offset }
    }
}

impl TryFrom<&GridSpec> for TorusGrid {
    type Error = Error;
    fn try_from(s: &GridSpec) -> Result<Self> {
        let lat = Lattice::from_generators(&s.lattice)?;
        if lat.dim() != s.dim {
            return Err(Error::DimensionMismatch { expected: s.dim, got: lat.dim() });
        }
        TorusGrid::with_offset(lat, s.m, s.offset)
    }
}
