//! Batch map matching over a short sequence of magnetometer readings.
//!
//! A [`Batch`] holds `m` readings, the INS position prior at each reading and
//! the INS displacement between consecutive readings. Two estimators return
//! the position at the last reading:
//!
//! * [`pmht_mm`], an expectation-maximisation smoother that alternates soft
//!   candidate association with a Rauch-Tung-Striebel pass;
//! * [`viterbi_mm`], the maximum-likelihood sequence of gated cells.
//!
//! Positions are map-local (north, east) metres. The motion model moves the
//! position by the INS displacement with covariance
//! `velocity_cov * dt² + (h/4)² I`, `h` being the cell size.

mod pmht;
mod viterbi;

use nalgebra::{Matrix2, Vector2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::map::MapGrid;
use crate::pda::{GateParams, MagMeasurement, PdaError, PositionFix, PriorPosition, CHI2_2DOF_99};

pub use pmht::{gate_batch, pmht_mm, pmht_objective};
pub use viterbi::{viterbi_decode, viterbi_mm, ViterbiPath};

#[derive(Debug, Error, PartialEq)]
pub enum MatchError {
    #[error("invalid batch: {0}")]
    InvalidBatch(String),
    #[error(transparent)]
    Pda(#[from] PdaError),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BatchEpoch {
    pub measurement: MagMeasurement,
    pub prior: PriorPosition,
}

/// Displacement from one epoch to the next and its uncertainty.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Motion {
    pub displacement: Vector2<f64>,
    pub cov: Matrix2<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub epochs: Vec<BatchEpoch>,
    /// `epochs.len() - 1` steps.
    pub motion: Vec<Motion>,
}

impl Batch {
    pub fn new(epochs: Vec<BatchEpoch>, motion: Vec<Motion>) -> Result<Self, MatchError> {
        if epochs.is_empty() {
            return Err(MatchError::InvalidBatch("no epochs".into()));
        }
        if motion.len() + 1 != epochs.len() {
            return Err(MatchError::InvalidBatch(format!(
                "{} epochs need {} motion steps, got {}",
                epochs.len(),
                epochs.len() - 1,
                motion.len()
            )));
        }
        if epochs.windows(2).any(|w| !(w[1].measurement.time > w[0].measurement.time)) {
            return Err(MatchError::InvalidBatch("measurement times must increase strictly".into()));
        }
        for m in &motion {
            let c = &m.cov;
            let spd = c[(0, 0)] > 0.0 && c.determinant() > 0.0 && (c[(0, 1)] - c[(1, 0)]).abs() <= 1e-12 * c.norm();
            if !spd || !m.displacement.iter().all(|v| v.is_finite()) {
                return Err(MatchError::InvalidBatch("motion covariance must be symmetric positive definite".into()));
            }
        }
        Ok(Self { epochs, motion })
    }

    /// Displacements taken from consecutive prior means, with covariance
    /// `velocity_cov * dt² + (cell_size/4)² I`.
    pub fn from_priors(
        epochs: Vec<BatchEpoch>,
        velocity_cov: &Matrix2<f64>,
        cell_size: f64,
    ) -> Result<Self, MatchError> {
        let floor = Matrix2::identity() * (cell_size / 4.0).powi(2);
        let motion = epochs
            .windows(2)
            .map(|w| {
                let dt = w[1].measurement.time - w[0].measurement.time;
                Motion { displacement: w[1].prior.mean - w[0].prior.mean, cov: velocity_cov * (dt * dt) + floor }
            })
            .collect();
        Self::new(epochs, motion)
    }

    /// Prior-only belief at the last epoch: first prior carried forward by the motion model.
    pub fn prior_at_end(&self) -> (Vector2<f64>, Matrix2<f64>) {
        let first = &self.epochs[0].prior;
        self.motion.iter().fold((first.mean, first.cov), |(x, p), m| (x + m.displacement, p + m.cov))
    }

    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    /// Shift every prior by `offset`.
    pub fn translated(&self, offset: &Vector2<f64>) -> Batch {
        let mut out = self.clone();
        for e in &mut out.epochs {
            e.prior.mean += offset;
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MatchParams {
    pub gate: GateParams,
    /// EM stops when no smoothed position moves more than this (m).
    pub tolerance: f64,
    pub max_iterations: usize,
    /// Final-epoch Viterbi states within this log-likelihood of the best
    /// contribute to the fix covariance.
    pub near_optimal: f64,
}

impl Default for MatchParams {
    fn default() -> Self {
        Self { gate: GateParams::default(), tolerance: 1.0, max_iterations: 20, near_optimal: 0.5 * CHI2_2DOF_99 }
    }
}

/// Divide the batch's own prior out of a fix, leaving the information the
/// map contributed. `None` when the map adds nothing in some direction.
pub fn map_evidence(batch: &Batch, fix: &PositionFix) -> Option<PositionFix> {
    let (prior_mean, prior_cov) = batch.prior_at_end();
    let fix_info = fix.cov.try_inverse()?;
    let prior_info = prior_cov.try_inverse()?;
    let info = fix_info - prior_info;
    let info = 0.5 * (info + info.transpose());
    if info.symmetric_eigenvalues().min() <= 1e-12 * fix_info.trace() {
        return None;
    }
    let cov = info.try_inverse()?;
    let mean = cov * (fix_info * fix.mean - prior_info * prior_mean);
    Some(PositionFix { mean, cov: 0.5 * (cov + cov.transpose()), ..*fix })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MatchResult {
    /// Position at the last epoch.
    pub fix: PositionFix,
    pub smoothed_track: Vec<Vector2<f64>>,
    pub iterations: usize,
    pub converged: bool,
    /// Objective after initialisation and after each iteration.
    pub objective: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Algorithm {
    #[default]
    Pmht,
    Viterbi,
}

/// Run the selected estimator. `Ok(None)` means no fix this cycle.
pub fn match_batch(
    algorithm: Algorithm,
    batch: &Batch,
    map: &MapGrid,
    params: &MatchParams,
) -> Result<Option<MatchResult>, MatchError> {
    match algorithm {
        Algorithm::Pmht => pmht_mm(batch, map, params),
        Algorithm::Viterbi => viterbi_mm(batch, map, params),
    }
}

/// One epoch of the batch file format.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub t: f64,
    #[serde(rename = "s_nT")]
    pub s_nt: f64,
    #[serde(rename = "sigma_nT")]
    pub sigma_nt: f64,
    pub prior_mean_m: [f64; 2],
    pub prior_cov_m2: [[f64; 2]; 2],
}

/// Batch file: epochs plus the INS velocity covariance used for the motion model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BatchFile {
    pub epochs: Vec<EpochRecord>,
    #[serde(default)]
    pub velocity_cov_m2_s2: [[f64; 2]; 2],
}

impl BatchFile {
    pub fn to_batch(&self, cell_size: f64) -> Result<Batch, MatchError> {
        let epochs = self
            .epochs
            .iter()
            .map(|r| {
                let c = r.prior_cov_m2;
                Ok(BatchEpoch {
                    measurement: MagMeasurement::new(r.s_nt, r.sigma_nt, r.t)?,
                    prior: PriorPosition::new(
                        Vector2::new(r.prior_mean_m[0], r.prior_mean_m[1]),
                        Matrix2::new(c[0][0], c[0][1], c[1][0], c[1][1]),
                    )?,
                })
            })
            .collect::<Result<Vec<_>, MatchError>>()?;
        let v = self.velocity_cov_m2_s2;
        Batch::from_priors(epochs, &Matrix2::new(v[0][0], v[0][1], v[1][0], v[1][1]), cell_size)
    }
}

/// Gaussian position measurement used by the smoother.
#[derive(Debug, Clone, Copy)]
pub(crate) struct PositionObs {
    pub mean: Vector2<f64>,
    pub cov: Matrix2<f64>,
}

/// Kalman filter and RTS smoother for a position that moves by known
/// displacements. Returns smoothed means and covariances.
pub(crate) fn smooth_positions(
    prior: &PriorPosition,
    motion: &[Motion],
    obs: &[Option<PositionObs>],
) -> (Vec<Vector2<f64>>, Vec<Matrix2<f64>>) {
    let n = obs.len();
    let mut xf = Vec::with_capacity(n);
    let mut pf = Vec::with_capacity(n);
    let mut xp = Vec::with_capacity(n);
    let mut pp = Vec::with_capacity(n);
    let (mut x, mut p) = (prior.mean, prior.cov);
    for k in 0..n {
        if k > 0 {
            x += motion[k - 1].displacement;
            p += motion[k - 1].cov;
        }
        xp.push(x);
        pp.push(p);
        if let Some(o) = &obs[k] {
            let s = p + o.cov;
            let gain = p * s.try_inverse().expect("innovation covariance is positive definite");
            x += gain * (o.mean - x);
            let ik = Matrix2::identity() - gain;
            p = ik * p * ik.transpose() + gain * o.cov * gain.transpose();
            p = 0.5 * (p + p.transpose());
        }
        xf.push(x);
        pf.push(p);
    }
    let mut xs = xf.clone();
    let mut ps = pf.clone();
    for k in (0..n.saturating_sub(1)).rev() {
        let c = pf[k] * pp[k + 1].try_inverse().expect("predicted covariance is positive definite");
        xs[k] = xf[k] + c * (xs[k + 1] - xp[k + 1]);
        let pk = pf[k] + c * (ps[k + 1] - pp[k + 1]) * c.transpose();
        ps[k] = 0.5 * (pk + pk.transpose());
    }
    (xs, ps)
}

#[cfg(test)]
pub(crate) mod test_support {
    use super::*;

    pub fn grid(rows: usize, cols: usize, cell: f64, f: impl Fn(usize, usize) -> f64) -> MapGrid {
        let mut v = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                v.push(f(r, c));
            }
        }
        MapGrid::new(-37.0, 145.0, cell, rows, cols, v, -99999.0).unwrap()
    }

    /// Readings taken exactly at `truth` points with the given priors.
    pub fn batch_along(
        map: &MapGrid,
        truth: &[Vector2<f64>],
        prior_offset: Vector2<f64>,
        prior_std: f64,
        sigma: f64,
    ) -> Batch {
        let epochs = truth
            .iter()
            .enumerate()
            .map(|(k, p)| BatchEpoch {
                measurement: MagMeasurement::new(map.sample(p).unwrap(), sigma, 10.0 * k as f64).unwrap(),
                prior: PriorPosition::isotropic(p + prior_offset, prior_std).unwrap(),
            })
            .collect();
        Batch::from_priors(epochs, &Matrix2::identity(), map.cell_size).unwrap()
    }
}
