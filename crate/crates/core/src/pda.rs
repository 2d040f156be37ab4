//! Gating and probabilistic data association of a single scalar reading.
//!
//! A magnetometer value is mapped to a position estimate in three steps:
//!
//! 1. [`gate_candidates`] collects every cell centre inside the prior's
//!    χ² ellipse whose map value is compatible with the reading,
//! 2. [`pda_weights`] weights each candidate by the Gaussian density of its
//!    offset from the prior mean under its own covariance `R_i`,
//! 3. [`pda_estimate`] returns the weighted mean and the spread-of-means
//!    covariance.
//!
//! The per-candidate position covariance `R_i` converts signal noise into
//! position noise through the local map slope,
//! `R_i = σ² / |∇m(z_i)|² · I`, clamped between a half-cell and the gate
//! ellipse's major semi-axis.
//!
//! The signal gate compares the reading with the value stored at each cell
//! centre. Because the true position is rarely exactly on a centre, the gate
//! widens the tolerance by the value spread expected across a cell:
//! `|s - m(z_i)| <= kappa * sqrt(σ² + σ_map² + (q |∇m| h)²)` with cell size
//! `h` and map value error `σ_map`. Setting both to zero gives the bare
//! `kappa * σ` gate.

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::map::MapGrid;

/// χ² with two degrees of freedom at 99 %.
pub const CHI2_2DOF_99: f64 = 9.210_340_371_976_184;

#[derive(Debug, Error, PartialEq)]
pub enum PdaError {
    #[error("prior mean ({north:.1}, {east:.1}) m lies outside the map")]
    OutOfBounds { north: f64, east: f64 },
    #[error("invalid measurement: {0}")]
    InvalidMeasurement(String),
    #[error("prior covariance is not symmetric positive definite")]
    InvalidPrior,
    #[error("invalid gate parameters: {0}")]
    InvalidParams(String),
    #[error("candidate set is empty")]
    Empty,
    #[error("candidate weights are not normalised (sum {0})")]
    Unnormalised(f64),
}

/// One scalar magnetometer reading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MagMeasurement {
    /// Measured intensity (nT).
    pub value: f64,
    /// Noise standard deviation (nT).
    pub sigma: f64,
    pub time: f64,
}

impl MagMeasurement {
    pub fn new(value: f64, sigma: f64, time: f64) -> Result<Self, PdaError> {
        if !value.is_finite() {
            return Err(PdaError::InvalidMeasurement(format!("value {value} is not finite")));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(PdaError::InvalidMeasurement(format!("sigma must be positive, got {sigma}")));
        }
        Ok(Self { value, sigma, time })
    }
}

/// Gaussian belief about where the reading was taken, in map-local metres.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriorPosition {
    pub mean: Vector2<f64>,
    pub cov: Matrix2<f64>,
}

impl PriorPosition {
    pub fn new(mean: Vector2<f64>, cov: Matrix2<f64>) -> Result<Self, PdaError> {
        let sym = (cov - cov.transpose()).abs().max() <= 1e-9 * cov.abs().max().max(1.0);
        if !sym || !mean.iter().all(|v| v.is_finite()) || cov.cholesky().is_none() {
            return Err(PdaError::InvalidPrior);
        }
        Ok(Self { mean, cov })
    }

    pub fn isotropic(mean: Vector2<f64>, std: f64) -> Result<Self, PdaError> {
        Self::new(mean, Matrix2::identity() * std * std)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GateParams {
    /// χ² threshold of the geometric gate.
    pub gamma: f64,
    /// Signal gate width in standard deviations.
    pub kappa: f64,
    /// Cell-spread factor `q`: the value spread across a cell is taken as
    /// `q |∇m| h`. Zero disables it.
    pub quantization: f64,
    /// Standard deviation of the map's own value error (nT).
    pub map_sigma: f64,
}

impl Default for GateParams {
    fn default() -> Self {
        Self { gamma: CHI2_2DOF_99, kappa: 3.0, quantization: 0.5, map_sigma: 0.0 }
    }
}

impl GateParams {
    pub fn exact(gamma: f64, kappa: f64) -> Self {
        Self { gamma, kappa, quantization: 0.0, map_sigma: 0.0 }
    }

    fn validate(&self) -> Result<(), PdaError> {
        if !(self.gamma > 0.0) || !(self.kappa > 0.0) || !(self.quantization >= 0.0) || !(self.map_sigma >= 0.0) {
            return Err(PdaError::InvalidParams(format!(
                "gamma={}, kappa={}, quantization={}, map_sigma={}",
                self.gamma, self.kappa, self.quantization, self.map_sigma
            )));
        }
        Ok(())
    }

    /// Sensor and map value noise combined (nT).
    pub fn value_sigma(&self, sigma: f64) -> f64 {
        sigma.hypot(self.map_sigma)
    }

    /// Standard deviation of a reading about a cell value, for a cell with
    /// gradient magnitude `slope` (nT/m).
    pub fn cell_sigma(&self, sigma: f64, slope: f64, cell_size: f64) -> f64 {
        self.value_sigma(sigma).hypot(self.quantization * slope * cell_size)
    }

    pub fn signal_tolerance(&self, sigma: f64, slope: f64, cell_size: f64) -> f64 {
        self.kappa * self.cell_sigma(sigma, slope, cell_size)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    /// Cell centre (north, east) in map-local metres.
    pub location: Vector2<f64>,
    pub map_value: f64,
    pub weight: f64,
    /// Position covariance of this candidate (m²).
    pub cov: Matrix2<f64>,
    /// Standard deviation of the reading about this cell's value (nT),
    /// including the cell-spread term.
    pub value_sigma: f64,
    pub cell: (usize, usize),
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CandidateSet {
    pub candidates: Vec<Candidate>,
    pub time: f64,
    /// Set when every candidate density underflowed and weights fell back to uniform.
    pub underflow: bool,
}

impl CandidateSet {
    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }
}

/// Position estimate with covariance produced by map matching.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PositionFix {
    /// (north, east) map-local metres.
    pub mean: Vector2<f64>,
    pub cov: Matrix2<f64>,
    pub time: f64,
    pub n_candidates: usize,
    pub mfv_weight: Option<f64>,
}

/// Log of the bivariate normal density of offset `d` under covariance `cov`.
pub fn gaussian_log_density(d: &Vector2<f64>, cov: &Matrix2<f64>) -> f64 {
    let det = cov.determinant();
    match cov.try_inverse() {
        Some(inv) if det > 0.0 => {
            -0.5 * (d.transpose() * inv * d)[0] - 0.5 * det.ln() - (2.0 * std::f64::consts::PI).ln()
        }
        _ => f64::NEG_INFINITY,
    }
}

/// Normalise log-weights into probabilities in place (log-sum-exp).
/// Returns `true` when no entry was finite and uniform weights were used.
pub fn normalize_log_weights(logw: &mut [f64]) -> bool {
    if logw.is_empty() {
        return false;
    }
    let max = logw.iter().copied().filter(|v| v.is_finite()).fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        let u = 1.0 / logw.len() as f64;
        logw.iter_mut().for_each(|w| *w = u);
        return true;
    }
    let mut sum = 0.0;
    for w in logw.iter_mut() {
        *w = if w.is_finite() { (*w - max).exp() } else { 0.0 };
        sum += *w;
    }
    logw.iter_mut().for_each(|w| *w /= sum);
    false
}

/// Largest eigenvalue of a symmetric 2×2 matrix.
pub(crate) fn max_eigenvalue(m: &Matrix2<f64>) -> f64 {
    let tr = m[(0, 0)] + m[(1, 1)];
    let det = m[(0, 0)] * m[(1, 1)] - m[(0, 1)] * m[(1, 0)];
    0.5 * tr + (0.25 * tr * tr - det).max(0.0).sqrt()
}

/// `R_i` for a cell: signal variance over squared slope, clamped to
/// `[(h/2)², max((h/2)², semi_axis²)]`.
pub fn candidate_cov(map: &MapGrid, cell: (usize, usize), sigma: f64, semi_axis_sq: f64) -> Matrix2<f64> {
    let lo = 0.25 * map.cell_size * map.cell_size;
    let hi = lo.max(semi_axis_sq);
    let slope_sq = map.gradient(cell.0, cell.1).norm_squared();
    let var = if slope_sq > 0.0 { sigma * sigma / slope_sq } else { f64::INFINITY };
    Matrix2::identity() * var.clamp(lo, hi)
}

/// Collect the candidate cells for one reading.
///
/// Returns an empty set (not an error) when nothing passes both gates.
pub fn gate_candidates(
    map: &MapGrid,
    prior: &PriorPosition,
    meas: &MagMeasurement,
    params: &GateParams,
) -> Result<CandidateSet, PdaError> {
    params.validate()?;
    if !map.contains(&prior.mean) {
        return Err(PdaError::OutOfBounds { north: prior.mean.x, east: prior.mean.y });
    }
    let inv = prior.cov.try_inverse().ok_or(PdaError::InvalidPrior)?;
    let semi_axis_sq = params.gamma * max_eigenvalue(&prior.cov);
    let h = map.cell_size;
    let half_n = (params.gamma * prior.cov[(0, 0)]).sqrt();
    let half_e = (params.gamma * prior.cov[(1, 1)]).sqrt();
    let index_range = |centre: f64, half: f64, n: usize| {
        let lo = ((centre - half) / h - 0.5).floor().max(0.0) as usize;
        let hi = (((centre + half) / h - 0.5).ceil().max(0.0) as usize).min(n - 1);
        lo..=hi
    };
    let mut out = CandidateSet { candidates: Vec::new(), time: meas.time, underflow: false };
    for r in index_range(prior.mean.x, half_n, map.n_rows) {
        for c in index_range(prior.mean.y, half_e, map.n_cols) {
            let z = map.cell_centre(r, c);
            let d = z - prior.mean;
            if (d.transpose() * inv * d)[0] > params.gamma {
                continue;
            }
            let Some(value) = map.get(r, c) else { continue };
            let slope = map.gradient(r, c).norm();
            let tol = params.signal_tolerance(meas.sigma, slope, h);
            if (meas.value - value).abs() > tol {
                continue;
            }
            out.candidates.push(Candidate {
                location: z,
                map_value: value,
                weight: 0.0,
                cov: candidate_cov(map, (r, c), params.value_sigma(meas.sigma), semi_axis_sq),
                value_sigma: params.cell_sigma(meas.sigma, slope, h),
                cell: (r, c),
            });
        }
    }
    Ok(out)
}

/// Weights `w_i ∝ N(z_i; mean, extra + R_i)`, written into the set.
/// Tests use a non-zero `extra` to check the density algebra.
pub(crate) fn assign_weights(cands: &mut CandidateSet, mean: &Vector2<f64>, extra: &Matrix2<f64>) {
    let mut logw: Vec<f64> =
        cands.candidates.iter().map(|c| gaussian_log_density(&(c.location - mean), &(extra + c.cov))).collect();
    cands.underflow = normalize_log_weights(&mut logw);
    for (c, w) in cands.candidates.iter_mut().zip(logw) {
        c.weight = w;
    }
}

/// Fill in PDA weights `w_i ∝ N(z_i; x, R_i)` about the prior mean `x`.
/// The prior covariance only shapes the gate.
pub fn pda_weights(mut cands: CandidateSet, prior: &PriorPosition) -> Result<CandidateSet, PdaError> {
    if cands.is_empty() {
        return Err(PdaError::Empty);
    }
    assign_weights(&mut cands, &prior.mean, &Matrix2::zeros());
    Ok(cands)
}

/// Weighted mean and spread-of-means covariance of a weighted candidate set.
pub fn pda_estimate(cands: &CandidateSet) -> Result<PositionFix, PdaError> {
    if cands.is_empty() {
        return Err(PdaError::Empty);
    }
    let total: f64 = cands.candidates.iter().map(|c| c.weight).sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(PdaError::Unnormalised(total));
    }
    let mean = cands.candidates.iter().fold(Vector2::zeros(), |acc, c| acc + c.location * c.weight);
    let cov = cands.candidates.iter().fold(Matrix2::zeros(), |acc, c| {
        let d = c.location - mean;
        acc + (c.cov + d * d.transpose()) * c.weight
    });
    Ok(PositionFix {
        mean,
        cov: 0.5 * (cov + cov.transpose()),
        time: cands.time,
        n_candidates: cands.len(),
        mfv_weight: None,
    })
}

/// Euclidean distance between the fix and the true position (m).
pub fn pda_error(fix: &PositionFix, truth: &Vector2<f64>) -> f64 {
    (fix.mean - truth).norm()
}

/// Gate, weight and estimate in one call; `None` when gating comes back empty.
pub fn map_measurement(
    map: &MapGrid,
    prior: &PriorPosition,
    meas: &MagMeasurement,
    params: &GateParams,
) -> Result<Option<(PositionFix, CandidateSet)>, PdaError> {
    let cands = gate_candidates(map, prior, meas, params)?;
    if cands.is_empty() {
        return Ok(None);
    }
    let cands = pda_weights(cands, prior)?;
    Ok(Some((pda_estimate(&cands)?, cands)))
}
