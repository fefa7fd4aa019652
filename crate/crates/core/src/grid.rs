//! Uniform finite-volume meshes and cell-average fields.
//!
//! Coordinates are always computed as `lo + k * dx`, never by accumulation,
//! so they are reproducible bit for bit. 2D grids are tensor products of two
//! 1D axes with row-major cell ordering (x fastest).

use crate::error::{Error, Result};

/// Minimum number of cells per axis.
pub const MIN_CELLS: usize = 4;

/// Number of zero-density ghost layers on each side of every axis.
pub const GHOST_LAYERS: usize = 2;

/// Sampled values of magnitude below this that come out negative are
/// treated as round-off and clamped to zero by [`project_function`].
const CLAMP_TOLERANCE: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    dim: usize,
    lo: [f64; 2],
    hi: [f64; 2],
    n: [usize; 2],
    dx: [f64; 2],
}

impl Grid {
    /// Builds a 1D grid on `[lo, hi]` with `n` cells.
    pub fn new_1d(lo: f64, hi: f64, n: usize) -> Result<Self> {
        build_grid(&[lo], &[hi], &[n])
    }

    /// Builds a 2D tensor-product grid.
    pub fn new_2d(lo: [f64; 2], hi: [f64; 2], n: [usize; 2]) -> Result<Self> {
        build_grid(&lo, &hi, &n)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn lo(&self, axis: usize) -> f64 {
        self.lo[axis]
    }

    pub fn hi(&self, axis: usize) -> f64 {
        self.hi[axis]
    }

    pub fn n(&self, axis: usize) -> usize {
        self.n[axis]
    }

    pub fn dx(&self, axis: usize) -> f64 {
        self.dx[axis]
    }

    /// Smallest cell width over the active axes.
    pub fn min_dx(&self) -> f64 {
        self.dx[..self.dim].iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn cell_count(&self) -> usize {
        self.n[..self.dim].iter().product()
    }

    /// Length (1D) or area (2D) of one cell.
    pub fn cell_measure(&self) -> f64 {
        self.dx[..self.dim].iter().product()
    }

    /// Length (1D) or area (2D) of the whole domain.
    pub fn domain_measure(&self) -> f64 {
        (0..self.dim).map(|a| self.hi[a] - self.lo[a]).product()
    }

    /// Center coordinate of cell `j` along `axis`.
    pub fn center(&self, axis: usize, j: usize) -> f64 {
        self.lo[axis] + (j as f64 + 0.5) * self.dx[axis]
    }

    /// Coordinate of interface `k` along `axis`; interface `k` is the left
    /// face of cell `k`, so `k` ranges over `0..=n`.
    pub fn interface(&self, axis: usize, k: usize) -> f64 {
        self.lo[axis] + k as f64 * self.dx[axis]
    }

    /// Flat cell index from per-axis indices.
    pub fn index(&self, ix: usize, iy: usize) -> usize {
        iy * self.n[0] + ix
    }

    /// Per-axis indices of a flat cell index.
    pub fn unravel(&self, index: usize) -> [usize; 2] {
        [index % self.n[0], index / self.n[0]]
    }

    /// Center of a flat cell index; the second coordinate is 0 in 1D.
    pub fn cell_center(&self, index: usize) -> [f64; 2] {
        let [ix, iy] = self.unravel(index);
        let y = if self.dim == 2 { self.center(1, iy) } else { 0.0 };
        [self.center(0, ix), y]
    }

    /// Shape of the interface array normal to `axis`, as `[nx, ny]`.
    pub fn interface_shape(&self, axis: usize) -> [usize; 2] {
        let mut shape = [self.n[0], if self.dim == 2 { self.n[1] } else { 1 }];
        shape[axis] += 1;
        shape
    }

    pub fn interface_count(&self, axis: usize) -> usize {
        let [a, b] = self.interface_shape(axis);
        a * b
    }

    /// Whether `[lo, hi]` along `axis` lies inside the domain with at least
    /// `margin` whole cells to spare on both sides.
    pub fn contains_with_margin(&self, axis: usize, lo: f64, hi: f64, margin: usize) -> bool {
        let pad = margin as f64 * self.dx[axis];
        lo >= self.lo[axis] + pad && hi <= self.hi[axis] - pad
    }
}

/// Builds a uniform grid; `lo`, `hi` and `n` carry one entry per axis.
pub fn build_grid(lo: &[f64], hi: &[f64], n: &[usize]) -> Result<Grid> {
    let dim = lo.len();
    if !(1..=2).contains(&dim) {
        return Err(Error::UnsupportedDimension(dim));
    }
    if hi.len() != dim || n.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            got: hi.len().min(n.len()),
        });
    }
    let mut grid = Grid {
        dim,
        lo: [0.0; 2],
        hi: [1.0; 2],
        n: [1; 2],
        dx: [1.0; 2],
    };
    for axis in 0..dim {
        let (l, h) = (lo[axis], hi[axis]);
        if !(l.is_finite() && h.is_finite() && h > l) {
            return Err(Error::InvalidBounds { axis, lo: l, hi: h });
        }
        if n[axis] < MIN_CELLS {
            return Err(Error::TooFewCells { axis, n: n[axis] });
        }
        grid.lo[axis] = l;
        grid.hi[axis] = h;
        grid.n[axis] = n[axis];
        grid.dx[axis] = (h - l) / n[axis] as f64;
    }
    Ok(grid)
}

/// Cell-average density values on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: Grid,
    values: Vec<f64>,
}

impl Field {
    pub fn zeros(grid: &Grid) -> Self {
        Self {
            grid: *grid,
            values: vec![0.0; grid.cell_count()],
        }
    }

    /// Wraps raw cell values; every entry must be finite.
    pub fn from_values(grid: &Grid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.cell_count() {
            return Err(Error::SizeMismatch {
                expected: grid.cell_count(),
                got: values.len(),
            });
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteSample {
                position: grid.cell_center(index),
                value: values[index],
            });
        }
        Ok(Self {
            grid: *grid,
            values,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// Samples `f` at every cell center (midpoint rule). `f` receives one
/// coordinate per axis.
pub fn project_function<F>(grid: &Grid, f: F) -> Result<Field>
where
    F: Fn(&[f64]) -> f64,
{
    let mut values = Vec::with_capacity(grid.cell_count());
    for index in 0..grid.cell_count() {
        let center = grid.cell_center(index);
        let value = f(&center[..grid.dim()]);
        if !value.is_finite() {
            return Err(Error::NonFiniteSample {
                position: center,
                value,
            });
        }
        values.push(if value < 0.0 && value >= -CLAMP_TOLERANCE {
            0.0
        } else {
            value
        });
    }
    Ok(Field {
        grid: *grid,
        values,
    })
}

/// Exact cell averages of `value · 1_box`, where the box is given by
/// per-axis bounds. Used for analytic reference profiles whose edges do not
/// fall on cell faces.
pub fn box_cell_averages(grid: &Grid, lo: &[f64], hi: &[f64], value: f64) -> Result<Field> {
    if lo.len() != grid.dim() || hi.len() != grid.dim() {
        return Err(Error::DimensionMismatch {
            expected: grid.dim(),
            got: lo.len(),
        });
    }
    let coverage = |axis: usize, j: usize| {
        let a = grid.interface(axis, j);
        let b = grid.interface(axis, j + 1);
        let overlap = (b.min(hi[axis]) - a.max(lo[axis])).max(0.0);
        overlap / grid.dx(axis)
    };
    let values = (0..grid.cell_count())
        .map(|index| {
            let [ix, iy] = grid.unravel(index);
            let mut c = coverage(0, ix);
            if grid.dim() == 2 {
                c *= coverage(1, iy);
            }
            value * c
        })
        .collect();
    Field::from_values(grid, values)
}
