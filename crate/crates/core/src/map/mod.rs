//! Total-magnetic-intensity grid maps.
//!
//! A [`MapGrid`] is a north-up raster of square cells. Internally row 0 is the
//! *southernmost* row so that row and column indices grow with the local north
//! and east coordinates; the file formats in [`io`] keep the usual north-first
//! row order and are flipped on load and save.
//!
//! Local coordinates are (north, east) metres from the lower-left (south-west)
//! corner of the grid. Cell `(r, c)` has its centre at
//! `((r + 0.5) * cell_size, (c + 0.5) * cell_size)`, and map values are point
//! samples at cell centres.

pub mod io;
pub mod synthetic;

use nalgebra::Vector2;
use thiserror::Error;

use crate::geo::{GeoPosition, LocalFrame};

pub use io::{load_grid, GridFormat};
pub use synthetic::SyntheticMapSpec;

#[derive(Debug, Error)]
pub enum MapError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("invalid grid: {0}")]
    Invalid(String),
    #[error("position ({north:.3}, {east:.3}) m is outside the sampleable map area")]
    OutOfBounds { north: f64, east: f64 },
    #[error("nodata cell next to position ({north:.3}, {east:.3}) m")]
    NoData { north: f64, east: f64 },
    #[error("invalid argument: {0}")]
    Argument(String),
}

/// Georeferenced raster of TMI values in nanotesla.
#[derive(Debug, Clone, PartialEq)]
pub struct MapGrid {
    /// Latitude of the south-west grid corner (degrees).
    pub origin_lat: f64,
    /// Longitude of the south-west grid corner (degrees).
    pub origin_lon: f64,
    /// Cell edge length (m).
    pub cell_size: f64,
    pub n_rows: usize,
    pub n_cols: usize,
    /// Row-major values, row 0 southernmost.
    values: Vec<f64>,
    pub nodata: f64,
}

/// Summary used by `map-info`.
#[derive(Debug, Clone, PartialEq)]
pub struct GridStats {
    pub min: f64,
    pub max: f64,
    pub nodata_count: usize,
}

impl MapGrid {
    /// Build a grid from south-first row-major values.
    pub fn new(
        origin_lat: f64,
        origin_lon: f64,
        cell_size: f64,
        n_rows: usize,
        n_cols: usize,
        values: Vec<f64>,
        nodata: f64,
    ) -> Result<Self, MapError> {
        if n_rows == 0 || n_cols == 0 {
            return Err(MapError::Invalid(format!(
                "grid must have at least one row and column, got {n_rows}x{n_cols}"
            )));
        }
        if !(cell_size > 0.0 && cell_size.is_finite()) {
            return Err(MapError::Invalid(format!("cell size must be positive, got {cell_size}")));
        }
        if values.len() != n_rows * n_cols {
            return Err(MapError::Invalid(format!(
                "expected {} values for {n_rows}x{n_cols}, got {}",
                n_rows * n_cols,
                values.len()
            )));
        }
        let grid = Self { origin_lat, origin_lon, cell_size, n_rows, n_cols, values, nodata };
        if let Some(i) = grid.values.iter().position(|v| !grid.is_nodata(*v) && !v.is_finite()) {
            return Err(MapError::Invalid(format!(
                "non-finite value at row {}, col {}",
                i / n_cols,
                i % n_cols
            )));
        }
        Ok(grid)
    }

    /// Grid with the same georeferencing and new values.
    pub fn with_values(&self, values: Vec<f64>, nodata: f64) -> Result<Self, MapError> {
        Self::new(
            self.origin_lat,
            self.origin_lon,
            self.cell_size,
            self.n_rows,
            self.n_cols,
            values,
            nodata,
        )
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn is_nodata(&self, v: f64) -> bool {
        v == self.nodata || (v.is_nan() && self.nodata.is_nan())
    }

    /// Raw stored value, including the nodata sentinel.
    #[inline]
    pub fn raw(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.n_cols + col]
    }

    /// Cell value, `None` for nodata or out-of-range indices.
    #[inline]
    pub fn get(&self, row: usize, col: usize) -> Option<f64> {
        if row >= self.n_rows || col >= self.n_cols {
            return None;
        }
        let v = self.raw(row, col);
        (!self.is_nodata(v)).then_some(v)
    }

    pub fn frame(&self) -> LocalFrame {
        LocalFrame::new(self.origin_lat, self.origin_lon)
    }

    pub fn to_local(&self, g: &GeoPosition) -> Vector2<f64> {
        self.frame().to_local(g)
    }

    pub fn cell_centre(&self, row: usize, col: usize) -> Vector2<f64> {
        Vector2::new((row as f64 + 0.5) * self.cell_size, (col as f64 + 0.5) * self.cell_size)
    }

    /// Total (north, east) extent in metres.
    pub fn extent(&self) -> Vector2<f64> {
        Vector2::new(self.n_rows as f64 * self.cell_size, self.n_cols as f64 * self.cell_size)
    }

    /// True when `p` lies inside the grid footprint.
    pub fn contains(&self, p: &Vector2<f64>) -> bool {
        let e = self.extent();
        p.x >= 0.0 && p.y >= 0.0 && p.x <= e.x && p.y <= e.y
    }

    /// True when `p` lies within the hull of cell centres, where [`sample`](Self::sample) is defined.
    pub fn in_sample_bounds(&self, p: &Vector2<f64>) -> bool {
        let h = 0.5 * self.cell_size;
        let e = self.extent();
        p.x >= h && p.y >= h && p.x <= e.x - h && p.y <= e.y - h
    }

    /// Cell containing `p`, if any.
    pub fn cell_of(&self, p: &Vector2<f64>) -> Option<(usize, usize)> {
        if !self.contains(p) {
            return None;
        }
        let r = ((p.x / self.cell_size) as usize).min(self.n_rows - 1);
        let c = ((p.y / self.cell_size) as usize).min(self.n_cols - 1);
        Some((r, c))
    }

    /// Bilinear interpolation of the four cell centres around `p`.
    pub fn sample(&self, p: &Vector2<f64>) -> Result<f64, MapError> {
        let oob = || MapError::OutOfBounds { north: p.x, east: p.y };
        if !p.x.is_finite() || !p.y.is_finite() || !self.in_sample_bounds(p) {
            return Err(oob());
        }
        // continuous index space where cell centres sit on integers
        let u = (p.x / self.cell_size - 0.5).clamp(0.0, (self.n_rows - 1) as f64);
        let v = (p.y / self.cell_size - 0.5).clamp(0.0, (self.n_cols - 1) as f64);
        let r0 = (u.floor() as usize).min(self.n_rows.saturating_sub(2));
        let c0 = (v.floor() as usize).min(self.n_cols.saturating_sub(2));
        let r1 = (r0 + 1).min(self.n_rows - 1);
        let c1 = (c0 + 1).min(self.n_cols - 1);
        let fu = u - r0 as f64;
        let fv = v - c0 as f64;
        let nd = || MapError::NoData { north: p.x, east: p.y };
        let v00 = self.get(r0, c0).ok_or_else(nd)?;
        let v01 = self.get(r0, c1).ok_or_else(nd)?;
        let v10 = self.get(r1, c0).ok_or_else(nd)?;
        let v11 = self.get(r1, c1).ok_or_else(nd)?;
        Ok(v00 * (1.0 - fu) * (1.0 - fv)
            + v01 * (1.0 - fu) * fv
            + v10 * fu * (1.0 - fv)
            + v11 * fu * fv)
    }

    /// Central-difference gradient (nT/m) at a cell centre, one-sided at edges
    /// and next to nodata. Zero along an axis with no usable neighbour.
    pub fn gradient(&self, row: usize, col: usize) -> Vector2<f64> {
        let Some(centre) = self.get(row, col) else {
            return Vector2::zeros();
        };
        let axis = |lo: Option<f64>, hi: Option<f64>| match (lo, hi) {
            (Some(a), Some(b)) => (b - a) / (2.0 * self.cell_size),
            (None, Some(b)) => (b - centre) / self.cell_size,
            (Some(a), None) => (centre - a) / self.cell_size,
            (None, None) => 0.0,
        };
        let south = row.checked_sub(1).and_then(|r| self.get(r, col));
        let north = self.get(row + 1, col);
        let west = col.checked_sub(1).and_then(|c| self.get(row, c));
        let east = self.get(row, col + 1);
        Vector2::new(axis(south, north), axis(west, east))
    }

    /// Block-mean downsampling. Blocks are anchored at the south-west corner;
    /// partial blocks along the north and east edges are dropped. Nodata cells
    /// are excluded from each mean, and an all-nodata block stays nodata.
    pub fn downsample(&self, factor: usize) -> Result<MapGrid, MapError> {
        if factor < 2 {
            return Err(MapError::Argument(format!("downsample factor must be >= 2, got {factor}")));
        }
        let rows = self.n_rows / factor;
        let cols = self.n_cols / factor;
        if rows == 0 || cols == 0 {
            return Err(MapError::Argument(format!(
                "factor {factor} leaves no complete block in a {}x{} grid",
                self.n_rows, self.n_cols
            )));
        }
        let mut out = Vec::with_capacity(rows * cols);
        for br in 0..rows {
            for bc in 0..cols {
                let mut sum = 0.0;
                let mut n = 0usize;
                for r in br * factor..(br + 1) * factor {
                    for c in bc * factor..(bc + 1) * factor {
                        if let Some(v) = self.get(r, c) {
                            sum += v;
                            n += 1;
                        }
                    }
                }
                out.push(if n > 0 { sum / n as f64 } else { self.nodata });
            }
        }
        MapGrid::new(
            self.origin_lat,
            self.origin_lon,
            self.cell_size * factor as f64,
            rows,
            cols,
            out,
            self.nodata,
        )
    }

    pub fn stats(&self) -> GridStats {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        let mut nodata_count = 0;
        for &v in &self.values {
            if self.is_nodata(v) {
                nodata_count += 1;
            } else {
                min = min.min(v);
                max = max.max(v);
            }
        }
        GridStats { min, max, nodata_count }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid(n_rows: usize, n_cols: usize, values: Vec<f64>, cell: f64) -> MapGrid {
        MapGrid::new(-38.0, 144.5, cell, n_rows, n_cols, values, -9999.0).unwrap()
    }

    fn random_grid(rng: &mut ChaCha8Rng, n_rows: usize, n_cols: usize) -> MapGrid {
        let v = (0..n_rows * n_cols).map(|_| rng.random_range(-500.0..500.0)).collect();
        grid(n_rows, n_cols, v, 85.0)
    }

    // Standalone bilinear evaluation written against cell indices.
    fn bilinear_reference(g: &MapGrid, p: Vector2<f64>) -> f64 {
        let x = p.x / g.cell_size - 0.5;
        let y = p.y / g.cell_size - 0.5;
        let i = (x.floor() as usize).min(g.n_rows - 2);
        let j = (y.floor() as usize).min(g.n_cols - 2);
        let tx = x - i as f64;
        let ty = y - j as f64;
        let lerp = |a: f64, b: f64, t: f64| a + (b - a) * t;
        let south = lerp(g.raw(i, j), g.raw(i, j + 1), ty);
        let north = lerp(g.raw(i + 1, j), g.raw(i + 1, j + 1), ty);
        lerp(south, north, tx)
    }

    #[test]
    fn sample_exact_at_every_cell_centre() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = random_grid(&mut rng, 7, 5);
        for r in 0..7 {
            for c in 0..5 {
                assert_eq!(g.sample(&g.cell_centre(r, c)).unwrap(), g.raw(r, c));
            }
        }
    }

    #[test]
    fn sample_midpoint_is_average() {
        let g = grid(2, 2, vec![10.0, 20.0, 10.0, 20.0], 85.0);
        let p = Vector2::new(42.5, 85.0);
        assert!((g.sample(&p).unwrap() - 15.0).abs() < 1e-12);
    }

    #[test]
    fn sample_matches_reference_formula() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let g = random_grid(&mut rng, 5, 5);
        for _ in 0..500 {
            let p = Vector2::new(rng.random_range(42.5..382.5), rng.random_range(42.5..382.5));
            let a = g.sample(&p).unwrap();
            let b = bilinear_reference(&g, p);
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }

    #[test]
    fn sample_errors() {
        let g = grid(3, 3, vec![1.0, 2.0, 3.0, 4.0, -9999.0, 6.0, 7.0, 8.0, 9.0], 10.0);
        assert!(matches!(g.sample(&Vector2::new(1.0, 15.0)), Err(MapError::OutOfBounds { .. })));
        assert!(matches!(g.sample(&Vector2::new(12.0, 12.0)), Err(MapError::NoData { .. })));
        assert!(matches!(g.sample(&Vector2::new(f64::NAN, 12.0)), Err(MapError::OutOfBounds { .. })));
    }

    #[test]
    fn downsample_constant_field() {
        let g = grid(4, 4, vec![7.0; 16], 85.0);
        let d = g.downsample(2).unwrap();
        assert_eq!((d.n_rows, d.n_cols), (2, 2));
        assert_eq!(d.cell_size, 170.0);
        assert!(d.values().iter().all(|&v| v == 7.0));
    }

    #[test]
    fn downsample_single_block_mean() {
        let g = grid(2, 2, vec![1.0, 2.0, 3.0, 4.0], 85.0);
        let d = g.downsample(2).unwrap();
        assert_eq!((d.n_rows, d.n_cols), (1, 1));
        assert_eq!(d.raw(0, 0), 2.5);
    }

    #[test]
    fn downsample_matches_brute_force_block_means() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = random_grid(&mut rng, 10, 10);
        let d = g.downsample(3).unwrap();
        assert_eq!((d.n_rows, d.n_cols), (3, 3));
        for br in 0..3 {
            for bc in 0..3 {
                let mut acc = 0.0;
                for dr in 0..3 {
                    for dc in 0..3 {
                        acc += g.raw(3 * br + dr, 3 * bc + dc);
                    }
                }
                assert!((d.raw(br, bc) - acc / 9.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn downsample_skips_nodata() {
        let g = grid(2, 2, vec![1.0, -9999.0, 3.0, -9999.0], 85.0);
        assert_eq!(g.downsample(2).unwrap().raw(0, 0), 2.0);
        let g = grid(2, 2, vec![-9999.0; 4], 85.0);
        assert_eq!(g.downsample(2).unwrap().raw(0, 0), -9999.0);
    }

    #[test]
    fn downsample_rejects_small_factor() {
        let g = grid(4, 4, vec![0.0; 16], 85.0);
        assert!(matches!(g.downsample(1), Err(MapError::Argument(_))));
        assert!(matches!(g.downsample(5), Err(MapError::Argument(_))));
    }

    #[test]
    fn chained_downsample_of_constant_is_identity_on_values() {
        let g = grid(12, 12, vec![-3.25; 144], 85.0);
        let d = g.downsample(2).unwrap().downsample(3).unwrap();
        assert_eq!((d.n_rows, d.n_cols, d.cell_size), (2, 2, 510.0));
        assert!(d.values().iter().all(|&v| v == -3.25));
    }

    #[test]
    fn gradient_of_linear_ramp() {
        let mut v = Vec::new();
        for r in 0..4 {
            for c in 0..5 {
                v.push(2.0 * r as f64 * 10.0 - 0.5 * c as f64 * 10.0);
            }
        }
        let g = grid(4, 5, v, 10.0);
        for (r, c) in [(0, 0), (1, 2), (3, 4)] {
            let d = g.gradient(r, c);
            assert!((d.x - 2.0).abs() < 1e-12 && (d.y + 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn invalid_construction() {
        assert!(MapGrid::new(0.0, 0.0, 0.0, 2, 2, vec![0.0; 4], -9999.0).is_err());
        assert!(MapGrid::new(0.0, 0.0, 1.0, 2, 2, vec![0.0; 3], -9999.0).is_err());
        assert!(MapGrid::new(0.0, 0.0, 1.0, 2, 2, vec![0.0, f64::NAN, 0.0, 0.0], -9999.0).is_err());
    }

    proptest! {
        #[test]
        fn bilinear_stays_within_value_range(seed in 0u64..1000, fx in 0.0f64..1.0, fy in 0.0f64..1.0) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let g = random_grid(&mut rng, 6, 4);
            let p = Vector2::new(42.5 + fx * 5.0 * 85.0, 42.5 + fy * 3.0 * 85.0);
            let s = g.sample(&p).unwrap();
            let st = g.stats();
            prop_assert!(s >= st.min - 1e-9 && s <= st.max + 1e-9);
        }
    }
}
