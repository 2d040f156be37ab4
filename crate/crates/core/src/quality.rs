//! Map informativeness: feature variability rasters and Monte Carlo PDA
//! error statistics against sensor noise and grid resolution.

use nalgebra::{Matrix2, Vector2};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::map::{MapError, MapGrid};
use crate::pda::{self, GateParams, MagMeasurement, PdaError, PriorPosition};
use crate::rng::{derive_seed, stream_rng};

/// Nodata marker used in quality rasters.
pub const QUALITY_NODATA: f64 = -1.0;

#[derive(Debug, Error)]
pub enum QualityError {
    #[error("search window has no neighbour cells")]
    EmptyWindow,
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error(transparent)]
    Map(#[from] MapError),
    #[error(transparent)]
    Pda(#[from] PdaError),
}

/// Neighbourhood used by the variability metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "kebab-case")]
pub enum SearchWindow {
    /// Cells whose centre offset `d` satisfies `d' cov⁻¹ d <= gamma`.
    Ellipse { cov: Matrix2<f64>, gamma: f64 },
    /// `(2r+1)²` square of cells.
    Square { radius: usize },
}

impl SearchWindow {
    pub fn isotropic(std: f64, gamma: f64) -> Self {
        SearchWindow::Ellipse { cov: Matrix2::identity() * std * std, gamma }
    }

    /// Cell offsets `(d_row, d_col)` in the window, excluding the centre.
    pub fn offsets(&self, cell_size: f64) -> Result<Vec<(isize, isize)>, QualityError> {
        let mut out = Vec::new();
        match *self {
            SearchWindow::Square { radius } => {
                let r = radius as isize;
                for dr in -r..=r {
                    for dc in -r..=r {
                        if (dr, dc) != (0, 0) {
                            out.push((dr, dc));
                        }
                    }
                }
            }
            SearchWindow::Ellipse { cov, gamma } => {
                let inv = cov.try_inverse().ok_or_else(|| QualityError::Argument("singular window covariance".into()))?;
                if !(gamma > 0.0) {
                    return Err(QualityError::Argument(format!("gamma must be positive, got {gamma}")));
                }
                let reach = |var: f64| ((gamma * var).sqrt() / cell_size).floor() as isize;
                let (rn, re) = (reach(cov[(0, 0)]), reach(cov[(1, 1)]));
                for dr in -rn..=rn {
                    for dc in -re..=re {
                        let d = Vector2::new(dr as f64, dc as f64) * cell_size;
                        if (dr, dc) != (0, 0) && (d.transpose() * inv * d)[0] <= gamma {
                            out.push((dr, dc));
                        }
                    }
                }
            }
        }
        if out.is_empty() {
            return Err(QualityError::EmptyWindow);
        }
        Ok(out)
    }
}

/// Per-cell quality values sharing the source map's georeferencing.
/// Cells without a value hold [`QUALITY_NODATA`].
#[derive(Debug, Clone, PartialEq)]
pub struct QualityRaster {
    pub grid: MapGrid,
}

impl QualityRaster {
    pub fn get(&self, row: usize, col: usize) -> Option<f64> {
        self.grid.get(row, col)
    }

    pub fn max(&self) -> Option<f64> {
        self.grid.values().iter().copied().filter(|v| !self.grid.is_nodata(*v)).reduce(f64::max)
    }

    /// Mean over cells with a value.
    pub fn mean(&self) -> Option<f64> {
        let (s, n) = self
            .grid
            .values()
            .iter()
            .filter(|v| !self.grid.is_nodata(**v))
            .fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
        (n > 0).then(|| s / n as f64)
    }

    /// Values divided by the raster maximum; unchanged when the maximum is zero.
    pub fn normalized(&self) -> QualityRaster {
        let m = self.max().unwrap_or(0.0);
        if m <= 0.0 {
            return self.clone();
        }
        let values = self.grid.values().iter().map(|&v| if self.grid.is_nodata(v) { v } else { v / m }).collect();
        QualityRaster { grid: self.grid.with_values(values, QUALITY_NODATA).expect("same shape") }
    }
}

/// Map feature variability: mean squared difference between each cell and
/// the valid cells of its window. Nodata cells, and cells with no valid
/// neighbour, are nodata in the output.
pub fn mfv(map: &MapGrid, window: &SearchWindow, normalize: bool) -> Result<QualityRaster, QualityError> {
    let offsets = window.offsets(map.cell_size)?;
    let (rows, cols) = (map.n_rows as isize, map.n_cols as isize);
    let values: Vec<f64> = (0..map.n_rows)
        .into_par_iter()
        .flat_map_iter(|r| {
            let offsets = &offsets;
            (0..map.n_cols).map(move |c| {
                let Some(centre) = map.get(r, c) else { return QUALITY_NODATA };
                let (mut sum, mut n) = (0.0, 0usize);
                for &(dr, dc) in offsets {
                    let (rr, cc) = (r as isize + dr, c as isize + dc);
                    if rr < 0 || cc < 0 || rr >= rows || cc >= cols {
                        continue;
                    }
                    if let Some(v) = map.get(rr as usize, cc as usize) {
                        sum += (centre - v) * (centre - v);
                        n += 1;
                    }
                }
                if n == 0 {
                    QUALITY_NODATA
                } else {
                    sum / n as f64
                }
            })
        })
        .collect();
    let raster = QualityRaster { grid: map.with_values(values, QUALITY_NODATA)? };
    Ok(if normalize { raster.normalized() } else { raster })
}

/// Mean PDA error per cell: the reading is the cell value plus noise and the
/// prior is centred on the cell. Cells where every draw gates empty are nodata.
pub fn pda_error_map(
    map: &MapGrid,
    sigma: f64,
    prior_cov: &Matrix2<f64>,
    params: &GateParams,
    n_samples: usize,
    seed: u64,
) -> Result<QualityRaster, QualityError> {
    if n_samples == 0 {
        return Err(QualityError::Argument("n_samples must be at least 1".into()));
    }
    MagMeasurement::new(0.0, sigma, 0.0)?;
    PriorPosition::new(Vector2::zeros(), *prior_cov)?;
    let values: Result<Vec<f64>, PdaError> = (0..map.n_rows * map.n_cols)
        .into_par_iter()
        .map(|idx| {
            let (r, c) = (idx / map.n_cols, idx % map.n_cols);
            let Some(value) = map.get(r, c) else { return Ok(QUALITY_NODATA) };
            let truth = map.cell_centre(r, c);
            let prior = PriorPosition { mean: truth, cov: *prior_cov };
            let mut rng = stream_rng(derive_seed(seed, idx as u64), 0);
            let (mut sum, mut n) = (0.0, 0usize);
            for _ in 0..n_samples {
                let z: f64 = rng.sample(StandardNormal);
                let meas = MagMeasurement { value: value + sigma * z, sigma, time: 0.0 };
                if let Some((fix, _)) = pda::map_measurement(map, &prior, &meas, params)? {
                    sum += pda::pda_error(&fix, &truth);
                    n += 1;
                }
            }
            Ok(if n == 0 { QUALITY_NODATA } else { sum / n as f64 })
        })
        .collect();
    Ok(QualityRaster { grid: map.with_values(values?, QUALITY_NODATA)? })
}

/// RMS difference between the fine map's cell values and the coarse map
/// interpolated at the same centres, over the coarse map's sample area.
pub fn representation_error(fine: &MapGrid, coarse: &MapGrid) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for r in 0..fine.n_rows {
        for c in 0..fine.n_cols {
            let p = fine.cell_centre(r, c);
            if let (Some(v), Ok(u)) = (fine.get(r, c), coarse.sample(&p)) {
                sum += (v - u) * (v - u);
                n += 1;
            }
        }
    }
    if n == 0 {
        0.0
    } else {
        (sum / n as f64).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    /// Number of random truth points per sweep cell.
    pub n_samples: usize,
    pub seed: u64,
    /// Isotropic prior standard deviation (m).
    pub prior_std: f64,
    pub gate: GateParams,
}

impl Default for SweepConfig {
    fn default() -> Self {
        // a gamma = 9.21 ellipse of about 6.8 km²
        Self { n_samples: 1000, seed: 1, prior_std: 485.0, gate: GateParams::default() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub sigma: f64,
    pub factor: usize,
    /// Mean PDA error over points that produced a fix (m).
    pub mean_error: f64,
    /// Standard deviation of those errors (m).
    pub std_error: f64,
    /// Points that produced a fix.
    pub n_samples: usize,
    /// Points whose gate came back empty.
    pub n_empty: usize,
}

impl SweepResult {
    /// Standard error of `mean_error`.
    pub fn std_of_mean(&self) -> f64 {
        self.std_error / (self.n_samples.max(1) as f64).sqrt()
    }
}

/// Full factorial sweep of PDA error over noise levels and downsampling factors.
///
/// Truth points are uniform over the region every resolution covers, shrunk
/// by the window's semi-axis. Each point's reading is the full-resolution map
/// interpolated at the point plus `sigma` times a standard normal draw; the
/// points and draws are shared by every (sigma, factor) pair. Gating runs on
/// the downsampled map with the prior centred on the truth.
pub fn noise_resolution_sweep(
    map: &MapGrid,
    sigmas: &[f64],
    factors: &[usize],
    config: &SweepConfig,
) -> Result<Vec<SweepResult>, QualityError> {
    if sigmas.is_empty() || factors.is_empty() || config.n_samples == 0 {
        return Err(QualityError::Argument("sigmas, factors and n_samples must be non-empty".into()));
    }
    if let Some(s) = sigmas.iter().find(|s| !(**s > 0.0)) {
        return Err(QualityError::Argument(format!("sigma must be positive, got {s}")));
    }
    if !(config.prior_std > 0.0) {
        return Err(QualityError::Argument("prior_std must be positive".into()));
    }
    let grids: Vec<MapGrid> = factors
        .iter()
        .map(|&f| match f {
            0 => Err(QualityError::Argument("factor must be at least 1".into())),
            1 => Ok(map.clone()),
            f => Ok(map.downsample(f)?),
        })
        .collect::<Result<_, _>>()?;
    let gates: Vec<GateParams> = grids
        .iter()
        .zip(factors)
        .map(|(g, &f)| {
            let extra = if f == 1 { 0.0 } else { representation_error(map, g) };
            GateParams { map_sigma: config.gate.map_sigma.hypot(extra), ..config.gate }
        })
        .collect();
    let margin = (config.gate.gamma).sqrt() * config.prior_std;
    // region covered by every grid's cell-centre hull
    let mut hi = Vector2::new(f64::INFINITY, f64::INFINITY);
    let mut lo = Vector2::new(0.5 * map.cell_size, 0.5 * map.cell_size);
    for g in &grids {
        hi = hi.inf(&(g.extent() - Vector2::repeat(0.5 * g.cell_size)));
        lo = lo.sup(&Vector2::repeat(0.5 * g.cell_size));
    }
    let lo = lo + Vector2::repeat(margin);
    let hi = hi - Vector2::repeat(margin);
    if lo.x >= hi.x || lo.y >= hi.y {
        return Err(QualityError::Argument("map too small for the search window".into()));
    }
    let cov = Matrix2::identity() * config.prior_std * config.prior_std;

    // per point: errors[factor][sigma], None when gated empty
    let per_point: Vec<Vec<Vec<Option<f64>>>> = (0..config.n_samples)
        .into_par_iter()
        .map(|j| {
            let mut rng = stream_rng(derive_seed(config.seed, j as u64), 0);
            let (truth, clean) = loop {
                let p = Vector2::new(rng.random_range(lo.x..hi.x), rng.random_range(lo.y..hi.y));
                if let Ok(v) = map.sample(&p) {
                    break (p, v);
                }
            };
            let z: f64 = rng.sample(StandardNormal);
            let prior = PriorPosition { mean: truth, cov };
            grids
                .iter()
                .zip(&gates)
                .map(|(g, gate)| {
                    sigmas
                        .iter()
                        .map(|&sigma| {
                            let meas = MagMeasurement { value: clean + sigma * z, sigma, time: 0.0 };
                            pda::map_measurement(g, &prior, &meas, gate)
                                .map(|r| r.map(|(fix, _)| pda::pda_error(&fix, &truth)))
                        })
                        .collect::<Result<Vec<_>, _>>()
                })
                .collect::<Result<Vec<_>, _>>()
        })
        .collect::<Result<_, PdaError>>()?;

    let mut out = Vec::with_capacity(sigmas.len() * factors.len());
    for (fi, &factor) in factors.iter().enumerate() {
        for (si, &sigma) in sigmas.iter().enumerate() {
            let errs: Vec<f64> = per_point.iter().filter_map(|p| p[fi][si]).collect();
            let n = errs.len();
            let mean = if n > 0 { errs.iter().sum::<f64>() / n as f64 } else { f64::NAN };
            let std = if n > 1 {
                (errs.iter().map(|e| (e - mean) * (e - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
            } else {
                0.0
            };
            out.push(SweepResult {
                sigma,
                factor,
                mean_error: mean,
                std_error: std,
                n_samples: n,
                n_empty: config.n_samples - n,
            });
        }
    }
    Ok(out)
}
