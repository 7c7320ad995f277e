//! Regular grids, time-indexed raster stacks and cell masks.

use alloc::vec;
use alloc::vec::Vec;
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Kilometres per degree of latitude used by the equirectangular projection.
pub const KM_PER_DEGREE: f64 = 111.195;

/// A regular grid. Cell centres sit at integer coordinates `(x, y)` with `y`
/// increasing northward; `(0, 0)` is located at `(origin_lon, origin_lat)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub n_x: usize,
    pub n_y: usize,
    /// Kilometres per cell.
    pub cell_size: f64,
    pub origin_lon: f64,
    pub origin_lat: f64,
}

impl Grid {
    pub fn new(n_x: usize, n_y: usize, cell_size: f64, origin_lon: f64, origin_lat: f64) -> Result<Self> {
        if n_x == 0 || n_y == 0 {
            return Err(invalid("grid dimensions must be positive"));
        }
        if !(cell_size > 0.0 && cell_size.is_finite()) {
            return Err(invalid("cell size must be positive"));
        }
        if !origin_lon.is_finite() || !origin_lat.is_finite() || origin_lat.abs() >= 89.0 {
            return Err(invalid("grid origin must be finite and away from the poles"));
        }
        Ok(Self { n_x, n_y, cell_size, origin_lon, origin_lat })
    }

    pub fn len(&self) -> usize {
        self.n_x * self.n_y
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub fn index(&self, x: usize, y: usize) -> usize {
        y * self.n_x + x
    }

    #[inline]
    pub fn coords(&self, idx: usize) -> (usize, usize) {
        (idx % self.n_x, idx / self.n_x)
    }

    pub fn contains(&self, x: i64, y: i64) -> bool {
        x >= 0 && y >= 0 && (x as usize) < self.n_x && (y as usize) < self.n_y
    }

    fn km_per_degree_lon(&self) -> f64 {
        KM_PER_DEGREE * self.origin_lat.to_radians().cos()
    }

    /// Continuous grid coordinates of a geographic location.
    pub fn lonlat_to_cell(&self, lon: f64, lat: f64) -> (f64, f64) {
        let x = (lon - self.origin_lon) * self.km_per_degree_lon() / self.cell_size;
        let y = (lat - self.origin_lat) * KM_PER_DEGREE / self.cell_size;
        (x, y)
    }

    pub fn cell_to_lonlat(&self, x: f64, y: f64) -> (f64, f64) {
        let lon = self.origin_lon + x * self.cell_size / self.km_per_degree_lon();
        let lat = self.origin_lat + y * self.cell_size / KM_PER_DEGREE;
        (lon, lat)
    }
}

/// Scale on which the values of a stack are expressed.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ScaleTag {
    Observed,
    Exp1,
    Gauss,
    Mask,
}

impl ScaleTag {
    pub fn code(self) -> u8 {
        match self {
            ScaleTag::Observed => 0,
            ScaleTag::Exp1 => 1,
            ScaleTag::Gauss => 2,
            ScaleTag::Mask => 255,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(ScaleTag::Observed),
            1 => Some(ScaleTag::Exp1),
            2 => Some(ScaleTag::Gauss),
            255 => Some(ScaleTag::Mask),
            _ => None,
        }
    }
}

/// A time-indexed stack of rasters sharing one grid. Values are stored as
/// `f32` (the on-disk precision), rasters row-major with `x` fastest.
#[derive(Debug, Clone, PartialEq)]
pub struct GriddedFieldStack {
    pub grid: Grid,
    pub times: Vec<i64>,
    pub scale: ScaleTag,
    data: Vec<f32>,
}

impl GriddedFieldStack {
    pub fn new(grid: Grid, times: Vec<i64>, scale: ScaleTag, data: Vec<f32>) -> Result<Self> {
        if data.len() != times.len() * grid.len() {
            return Err(invalid("raster data length does not match grid and time count"));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid("times must be strictly increasing"));
        }
        if scale == ScaleTag::Observed && data.iter().any(|v| *v < 0.0) {
            return Err(invalid("observed wind speeds must be nonnegative"));
        }
        Ok(Self { grid, times, scale, data })
    }

    /// Stack with times `1..=n_t` filled with `value`.
    pub fn filled(grid: Grid, n_t: usize, scale: ScaleTag, value: f32) -> Self {
        let times = (1..=n_t as i64).collect();
        Self { grid, times, scale, data: vec![value; n_t * grid.len()] }
    }

    pub fn n_t(&self) -> usize {
        self.times.len()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn raster(&self, t: usize) -> &[f32] {
        let n = self.grid.len();
        &self.data[t * n..(t + 1) * n]
    }

    pub fn raster_mut(&mut self, t: usize) -> &mut [f32] {
        let n = self.grid.len();
        &mut self.data[t * n..(t + 1) * n]
    }

    #[inline]
    pub fn get(&self, t: usize, x: usize, y: usize) -> f32 {
        self.data[t * self.grid.len() + self.grid.index(x, y)]
    }

    /// Position of time step `t` in the stack.
    pub fn time_index(&self, t: i64) -> Option<usize> {
        self.times.binary_search(&t).ok()
    }

    /// Per-cell time series (length `n_t`).
    pub fn cell_series(&self, cell: usize) -> Vec<f64> {
        let n = self.grid.len();
        (0..self.n_t()).map(|t| self.data[t * n + cell] as f64).collect()
    }

    pub fn with_scale(mut self, scale: ScaleTag) -> Self {
        self.scale = scale;
        self
    }
}

/// Cells included in marginal fitting and cluster membership.
#[derive(Debug, Clone, PartialEq)]
pub struct CellMask {
    pub grid: Grid,
    pub included: Vec<bool>,
}

impl CellMask {
    pub fn all(grid: Grid) -> Self {
        Self { grid, included: vec![true; grid.len()] }
    }

    pub fn new(grid: Grid, included: Vec<bool>) -> Result<Self> {
        if included.len() != grid.len() {
            return Err(invalid("mask shape does not match grid"));
        }
        Ok(Self { grid, included })
    }

    #[inline]
    pub fn is_included(&self, cell: usize) -> bool {
        self.included[cell]
    }

    pub fn to_stack(&self) -> GriddedFieldStack {
        let data = self.included.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        GriddedFieldStack { grid: self.grid, times: vec![1], scale: ScaleTag::Mask, data }
    }

    pub fn from_stack(stack: &GriddedFieldStack) -> Result<Self> {
        if stack.scale != ScaleTag::Mask || stack.n_t() != 1 {
            return Err(Error::InvalidInput("mask must be a single raster tagged as mask".into()));
        }
        let included = stack.raster(0).iter().map(|v| *v != 0.0).collect();
        Ok(Self { grid: stack.grid, included })
    }
}
