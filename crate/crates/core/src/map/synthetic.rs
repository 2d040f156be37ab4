//! Seeded synthetic TMI maps for desk-scale experiments.
//!
//! The field is a sum of Gaussian-smoothed white-noise octaves (each octave
//! halves the correlation length and scales the amplitude by `persistence`),
//! rescaled to the requested standard deviation, plus an optional linear ramp
//! and a constant base level.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{MapError, MapGrid};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticMapSpec {
    pub n_rows: usize,
    pub n_cols: usize,
    pub cell_size: f64,
    pub origin_lat: f64,
    pub origin_lon: f64,
    /// Correlation length of the coarsest octave (m).
    pub correlation_length: f64,
    pub octaves: u32,
    pub persistence: f64,
    /// Standard deviation of the anomaly field (nT).
    pub amplitude: f64,
    /// Linear ramp (nT per km) along north and east.
    pub ramp_north: f64,
    pub ramp_east: f64,
    /// Constant added everywhere (nT).
    pub base: f64,
    pub seed: u64,
}

impl Default for SyntheticMapSpec {
    fn default() -> Self {
        Self {
            n_rows: 512,
            n_cols: 512,
            cell_size: 85.0,
            origin_lat: -38.0,
            origin_lon: 144.5,
            correlation_length: 1500.0,
            octaves: 3,
            persistence: 0.5,
            amplitude: 150.0,
            ramp_north: 0.0,
            ramp_east: 0.0,
            base: 58_000.0,
            seed: 1,
        }
    }
}

impl SyntheticMapSpec {
    pub fn generate(&self) -> Result<MapGrid, MapError> {
        if self.n_rows < 2 || self.n_cols < 2 {
            return Err(MapError::Argument("synthetic map needs at least 2x2 cells".into()));
        }
        if !(self.correlation_length > 0.0) || !(self.cell_size > 0.0) || self.octaves == 0 {
            return Err(MapError::Argument(
                "correlation length, cell size and octave count must be positive".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let n = self.n_rows * self.n_cols;
        let mut field = vec![0.0; n];
        let mut weight = 1.0;
        for octave in 0..self.octaves {
            let length = self.correlation_length / f64::from(1u32 << octave);
            let sigma_cells = (length / self.cell_size).max(0.5);
            let mut layer = smoothed_noise(&mut rng, self.n_rows, self.n_cols, sigma_cells);
            normalise(&mut layer);
            for (f, l) in field.iter_mut().zip(&layer) {
                *f += weight * l;
            }
            weight *= self.persistence;
        }
        normalise(&mut field);
        let mut values = Vec::with_capacity(n);
        for r in 0..self.n_rows {
            let north_km = (r as f64 + 0.5) * self.cell_size / 1000.0;
            for c in 0..self.n_cols {
                let east_km = (c as f64 + 0.5) * self.cell_size / 1000.0;
                values.push(
                    self.base
                        + self.amplitude * field[r * self.n_cols + c]
                        + self.ramp_north * north_km
                        + self.ramp_east * east_km,
                );
            }
        }
        MapGrid::new(
            self.origin_lat,
            self.origin_lon,
            self.cell_size,
            self.n_rows,
            self.n_cols,
            values,
            -9999.0,
        )
    }
}

/// Zero-mean, unit-variance rescale in place.
fn normalise(v: &mut [f64]) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    for x in v.iter_mut() {
        *x = if sd > 0.0 { (*x - mean) / sd } else { 0.0 };
    }
}

/// White noise on a padded grid blurred by a separable Gaussian, cropped to size.
fn smoothed_noise(rng: &mut ChaCha8Rng, rows: usize, cols: usize, sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as usize;
    let kernel: Vec<f64> = (0..=2 * radius)
        .map(|i| {
            let d = i as f64 - radius as f64;
            (-0.5 * d * d / (sigma * sigma)).exp()
        })
        .collect();
    let pr = rows + 2 * radius;
    let pc = cols + 2 * radius;
    let noise: Vec<f64> = (0..pr * pc).map(|_| StandardNormal.sample(rng)).collect();

    // along columns (east), keeping all padded rows
    let mut tmp = vec![0.0; pr * cols];
    for r in 0..pr {
        let src = &noise[r * pc..(r + 1) * pc];
        for c in 0..cols {
            tmp[r * cols + c] = kernel.iter().zip(&src[c..c + kernel.len()]).map(|(k, x)| k * x).sum();
        }
    }
    // along rows (north)
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for (k, w) in kernel.iter().enumerate() {
            let src = &tmp[(r + k) * cols..(r + k + 1) * cols];
            let dst = &mut out[r * cols..(r + 1) * cols];
            for (d, s) in dst.iter_mut().zip(src) {
                *d += w * s;
            }
        }
    }
    out
}
