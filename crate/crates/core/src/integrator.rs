//! Loosely coupled fusion of position fixes into the navigation state.
//!
//! The filter state is the INS error `δx` (estimate minus truth) with zero
//! mean after every correction. A fix `y` observes the true position, so in
//! a local frame centred on the estimated position the observation function
//! is `h(δx) = -δr`. The update runs the unscented transform over that
//! function, folds the posterior error mean back into the navigation state
//! and keeps the posterior covariance.

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{GeoPosition, LocalFrame};
use crate::ins::{ErrorVector, ImuSample, Ins, InsError, NavState, N_ERR, POS};
use crate::map::MapGrid;
use crate::pda::PositionFix;

/// χ² with two degrees of freedom at 99.9 %.
pub const CHI2_2DOF_999: f64 = 13.815_510_557_964_274;

#[derive(Debug, Error, PartialEq)]
pub enum IntegratorError {
    #[error("fix time {fix} does not match state time {state}")]
    TimeMismatch { fix: f64, state: f64 },
    #[error("fix covariance is not symmetric positive semidefinite")]
    InvalidCovariance,
    #[error("innovation covariance is singular")]
    Singular,
    #[error(transparent)]
    Ins(#[from] InsError),
}

/// Position fix expressed for the filter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AidingMeasurement {
    pub position: GeoPosition,
    /// (north, east) covariance in m².
    pub cov: Matrix2<f64>,
    pub time: f64,
}

impl AidingMeasurement {
    /// Convert a map-local fix to geodetic coordinates.
    pub fn from_fix(fix: &PositionFix, map: &MapGrid, height: f64) -> Self {
        Self { position: map.frame().from_local(&fix.mean, height), cov: fix.cov, time: fix.time }
    }

    pub fn validate(&self) -> Result<(), IntegratorError> {
        let c = &self.cov;
        let finite = c.iter().all(|v| v.is_finite());
        let symmetric = (c[(0, 1)] - c[(1, 0)]).abs() <= 1e-9 * c.norm().max(1e-300);
        if !finite || !symmetric || c.symmetric_eigenvalues().min() < 0.0 {
            return Err(IntegratorError::InvalidCovariance);
        }
        Ok(())
    }
}

/// Unscented transform spread parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UkfParams {
    pub alpha: f64,
    pub beta: f64,
    pub kappa: f64,
}

impl Default for UkfParams {
    fn default() -> Self {
        Self { alpha: 1.0, beta: 2.0, kappa: 0.0 }
    }
}

/// Inverse-MFV covariance scaling `clamp(reference / mfv, min_scale, max_scale)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MfvWeighting {
    pub reference: f64,
    pub min_scale: f64,
    pub max_scale: f64,
}

impl MfvWeighting {
    pub fn scale(&self, mfv: f64) -> f64 {
        if mfv <= 0.0 {
            return self.max_scale;
        }
        (self.reference / mfv).clamp(self.min_scale, self.max_scale)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IntegratorConfig {
    /// Fixes whose normalised innovation squared exceeds this are rejected.
    pub reject_threshold: f64,
    pub ukf: UkfParams,
    pub mfv: Option<MfvWeighting>,
}

impl Default for IntegratorConfig {
    fn default() -> Self {
        Self { reject_threshold: CHI2_2DOF_999, ukf: UkfParams::default(), mfv: None }
    }
}

/// Scale the fix covariance by the inverse map variability. The mean is untouched.
pub fn apply_mfv_weighting(fix: &AidingMeasurement, mfv: f64, weighting: &MfvWeighting) -> AidingMeasurement {
    AidingMeasurement { cov: fix.cov * weighting.scale(mfv), ..*fix }
}

/// Prediction is the INS propagation itself.
pub fn predict(ins: &mut Ins<'_>, state: &NavState, imu: &ImuSample, dt: f64) -> Result<NavState, IntegratorError> {
    Ok(ins.propagate(state, imu, dt)?)
}

/// Posterior of an unscented update.
#[derive(Debug, Clone, PartialEq)]
pub struct UkfPosterior {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    pub innovation: DVector<f64>,
    pub innovation_cov: DMatrix<f64>,
    /// Normalised innovation squared.
    pub nis: f64,
}

/// Symmetric square root: Cholesky when possible, otherwise an
/// eigen-decomposition with negative eigenvalues clipped to zero.
fn matrix_sqrt(p: &DMatrix<f64>) -> DMatrix<f64> {
    if let Some(c) = p.clone().cholesky() {
        return c.l();
    }
    let eig = p.clone().symmetric_eigen();
    let d = DMatrix::from_diagonal(&eig.eigenvalues.map(|v| v.max(0.0).sqrt()));
    &eig.eigenvectors * d
}

/// Unscented update of `N(mean, cov)` with measurement `y = h(x) + v`, `v ~ N(0, r)`.
pub fn ukf_update_vec(
    mean: &DVector<f64>,
    cov: &DMatrix<f64>,
    y: &DVector<f64>,
    r: &DMatrix<f64>,
    h: impl Fn(&DVector<f64>) -> DVector<f64>,
    params: &UkfParams,
) -> Result<UkfPosterior, IntegratorError> {
    let n = mean.len();
    let nf = n as f64;
    let lambda = params.alpha * params.alpha * (nf + params.kappa) - nf;
    let root = matrix_sqrt(&(cov * (nf + lambda)));
    let mut points = Vec::with_capacity(2 * n + 1);
    points.push(mean.clone());
    for i in 0..n {
        points.push(mean + root.column(i));
    }
    for i in 0..n {
        points.push(mean - root.column(i));
    }
    let w0m = lambda / (nf + lambda);
    let w0c = w0m + 1.0 - params.alpha * params.alpha + params.beta;
    let wi = 0.5 / (nf + lambda);
    let wm = |i: usize| if i == 0 { w0m } else { wi };
    let wc = |i: usize| if i == 0 { w0c } else { wi };

    let ys: Vec<DVector<f64>> = points.iter().map(&h).collect();
    let m = y.len();
    let y_mean = ys.iter().enumerate().fold(DVector::zeros(m), |acc, (i, v)| acc + v * wm(i));
    let dys: Vec<DVector<f64>> = ys.iter().map(|v| v - &y_mean).collect();
    let mut s = r.clone();
    let mut c = DMatrix::zeros(n, m);
    for (i, (p, dy)) in points.iter().zip(&dys).enumerate() {
        s += dy * dy.transpose() * wc(i);
        c += (p - mean) * dy.transpose() * wc(i);
    }
    let s = 0.5 * (&s + s.transpose());
    let s_inv = s.clone().try_inverse().ok_or(IntegratorError::Singular)?;
    let gain = &c * &s_inv;
    let innovation = y - &y_mean;
    let nis = (innovation.transpose() * &s_inv * &innovation)[0];
    let post_mean = mean + &gain * &innovation;
    // P - K S K^T written as a sum of outer products so that a posterior far
    // tighter than the prior keeps its relative precision.
    let mut post_cov = &gain * r * gain.transpose();
    for (i, (p, dy)) in points.iter().zip(&dys).enumerate() {
        let d = (p - mean) - &gain * dy;
        post_cov += &d * d.transpose() * wc(i);
    }
    Ok(UkfPosterior {
        mean: post_mean,
        cov: 0.5 * (&post_cov + post_cov.transpose()),
        innovation,
        innovation_cov: s,
        nis,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub enum UpdateOutcome {
    Accepted { state: NavState, nis: f64 },
    Rejected { nis: f64 },
}

/// Fuse a position fix into the predicted state. Rejected fixes leave the
/// state untouched.
pub fn ukf_update(
    pred: &NavState,
    fix: &AidingMeasurement,
    config: &IntegratorConfig,
) -> Result<UpdateOutcome, IntegratorError> {
    if (fix.time - pred.time).abs() > 1e-6 {
        return Err(IntegratorError::TimeMismatch { fix: fix.time, state: pred.time });
    }
    fix.validate()?;
    let frame = LocalFrame::new(pred.position.lat, pred.position.lon);
    let y: Vector2<f64> = frame.to_local(&fix.position);
    let mean = DVector::zeros(N_ERR);
    let cov = DMatrix::from_iterator(N_ERR, N_ERR, pred.cov.iter().copied());
    let r = DMatrix::from_iterator(2, 2, fix.cov.iter().copied());
    let h = |dx: &DVector<f64>| DVector::from_vec(vec![-dx[POS], -dx[POS + 1]]);
    let post = ukf_update_vec(&mean, &cov, &DVector::from_vec(vec![y.x, y.y]), &r, h, &config.ukf)?;
    if !(post.nis <= config.reject_threshold) {
        return Ok(UpdateOutcome::Rejected { nis: post.nis });
    }
    let dx = ErrorVector::from_iterator(post.mean.iter().copied());
    let mut state = pred.corrected(&dx);
    state.cov.copy_from(&post.cov);
    Ok(UpdateOutcome::Accepted { state, nis: post.nis })
}
