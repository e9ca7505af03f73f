//! Pixel grids and scan geometry.

use crate::error::{Error, Result};

/// Geometry and integration time of a raster scan.
///
/// Pixel `(ix, iy)` sits at `(x0 + ix * pitch, y0 + iy * pitch)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScanGrid {
    pub x0_nm: f64,
    pub y0_nm: f64,
    pub pitch_nm: f64,
    pub nx: usize,
    pub ny: usize,
    pub dwell_s: f64,
}

impl ScanGrid {
    pub fn new(x0_nm: f64, y0_nm: f64, pitch_nm: f64, nx: usize, ny: usize, dwell_s: f64) -> Result<Self> {
        let g = ScanGrid {
            x0_nm,
            y0_nm,
            pitch_nm,
            nx,
            ny,
            dwell_s,
        };
        g.validate()?;
        Ok(g)
    }

    /// A grid of `n x n` pixels centered on the origin.
    pub fn centered(n: usize, pitch_nm: f64, dwell_s: f64) -> Result<Self> {
        let half = pitch_nm * (n as f64 - 1.0) / 2.0;
        Self::new(-half, -half, pitch_nm, n, n, dwell_s)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.pitch_nm > 0.0 && self.pitch_nm.is_finite()) {
            return Err(Error::invalid("pitch_nm", "must be > 0"));
        }
        if self.nx == 0 || self.ny == 0 {
            return Err(Error::invalid("nx/ny", "grid needs at least one pixel"));
        }
        if !(self.dwell_s > 0.0 && self.dwell_s.is_finite()) {
            return Err(Error::invalid("dwell_s", "must be > 0"));
        }
        if !(self.x0_nm.is_finite() && self.y0_nm.is_finite()) {
            return Err(Error::invalid("x0_nm/y0_nm", "must be finite"));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.nx * self.ny
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn position(&self, ix: usize, iy: usize) -> (f64, f64) {
        (
            self.x0_nm + ix as f64 * self.pitch_nm,
            self.y0_nm + iy as f64 * self.pitch_nm,
        )
    }

    /// Position of the pixel with row-major index `i`.
    pub fn position_of(&self, i: usize) -> (f64, f64) {
        self.position(i % self.nx, i / self.nx)
    }

    pub fn with_dwell(mut self, dwell_s: f64) -> Self {
        self.dwell_s = dwell_s;
        self
    }
}

/// Row-major 2D array; row `iy` holds `nx` values with `y` increasing per row.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid<T> {
    nx: usize,
    ny: usize,
    data: Vec<T>,
}

impl<T: Clone> Grid<T> {
    pub fn filled(nx: usize, ny: usize, value: T) -> Self {
        Grid {
            nx,
            ny,
            data: vec![value; nx * ny],
        }
    }
}

impl<T> Grid<T> {
    pub fn from_vec(nx: usize, ny: usize, data: Vec<T>) -> Result<Self> {
        if data.len() != nx * ny {
            return Err(Error::DimensionMismatch {
                expected_nx: nx,
                expected_ny: ny,
                found_nx: data.len(),
                found_ny: 1,
            });
        }
        Ok(Grid { nx, ny, data })
    }

    pub fn from_fn(nx: usize, ny: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(nx * ny);
        for iy in 0..ny {
            for ix in 0..nx {
                data.push(f(ix, iy));
            }
        }
        Grid { nx, ny, data }
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn index(&self, ix: usize, iy: usize) -> usize {
        iy * self.nx + ix
    }

    pub fn get(&self, ix: usize, iy: usize) -> &T {
        &self.data[iy * self.nx + ix]
    }

    pub fn get_mut(&mut self, ix: usize, iy: usize) -> &mut T {
        &mut self.data[iy * self.nx + ix]
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn iter(&self) -> std::slice::Iter<'_, T> {
        self.data.iter()
    }

    pub fn map<U>(&self, f: impl FnMut(&T) -> U) -> Grid<U> {
        Grid {
            nx: self.nx,
            ny: self.ny,
            data: self.data.iter().map(f).collect(),
        }
    }

    pub fn same_shape<U>(&self, other: &Grid<U>) -> bool {
        self.nx == other.nx && self.ny == other.ny
    }

    /// Errors unless the grid is `nx x ny`.
    pub fn check_shape(&self, nx: usize, ny: usize) -> Result<()> {
        if self.nx != nx || self.ny != ny {
            return Err(Error::DimensionMismatch {
                expected_nx: nx,
                expected_ny: ny,
                found_nx: self.nx,
                found_ny: self.ny,
            });
        }
        Ok(())
    }
}

impl<T> std::ops::Index<usize> for Grid<T> {
    type Output = T;

    fn index(&self, i: usize) -> &T {
        &self.data[i]
    }
}

impl<T> std::ops::IndexMut<usize> for Grid<T> {
    fn index_mut(&mut self, i: usize) -> &mut T {
        &mut self.data[i]
    }
}
