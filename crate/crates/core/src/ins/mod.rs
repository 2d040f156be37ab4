//! Truth trajectories, IMU simulation and inertial error propagation.
//!
//! The navigation solution is carried as a full [`NavState`], but it is
//! advanced through a linearised error model about the truth:
//!
//! ```text
//! δr' = δv
//! δv_N' =  g ψ_E + δf_N        ψ_N' =  δv_E / R - δω_N
//! δv_E' = -g ψ_N + δf_E        ψ_E' = -δv_N / R - δω_E
//!                              ψ_D' = -δω_D
//! ```
//!
//! where `δf` and `δω` are the bias-corrected IMU errors rotated into the
//! navigation frame and `ψ` is the attitude error. Gravity feedback through
//! the `1/R` terms gives the Schuler oscillation with period `2π sqrt(R/g)`.
//! The vertical channel follows the truth height.
//!
//! The error-state ordering is `[δr_N, δr_E, δv_N, δv_E, ψ_N, ψ_E, ψ_D,
//! δb_a (3), δb_g (3)]`, each error being estimate minus truth.

pub mod sensors;
pub mod trajectory;

use nalgebra::{DMatrix, Rotation3, SMatrix, SVector, Vector2, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geo::{GeoPosition, LocalFrame};
pub use sensors::{body_to_nav, ideal_imu, simulate_imu, ImuSample, ImuStream, SensorSpec, DEG_PER_HOUR};
pub use trajectory::{TruthSample, TruthTrajectory};

pub const GRAVITY: f64 = 9.80665;
pub const EARTH_RADIUS: f64 = 6_371_000.0;
pub const EARTH_RATE: f64 = 7.292_115e-5;

/// Error-state dimension.
pub const N_ERR: usize = 13;
pub const POS: usize = 0;
pub const VEL: usize = 2;
pub const ATT: usize = 4;
pub const ACC_BIAS: usize = 7;
pub const GYRO_BIAS: usize = 10;

pub type ErrorVector = SVector<f64, N_ERR>;
pub type ErrorCov = SMatrix<f64, N_ERR, N_ERR>;

/// `2π sqrt(R/g)` in seconds.
pub fn schuler_period() -> f64 {
    2.0 * std::f64::consts::PI * (EARTH_RADIUS / GRAVITY).sqrt()
}

#[derive(Debug, Error, PartialEq)]
pub enum InsError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("propagation error at t={time}: {message}")]
    Propagation { time: f64, message: String },
}

/// Navigation solution with the covariance of its error state.
#[derive(Debug, Clone, PartialEq)]
pub struct NavState {
    pub position: GeoPosition,
    /// North, east, down (m/s).
    pub velocity: Vector3<f64>,
    /// Roll, pitch, yaw (rad).
    pub attitude: Vector3<f64>,
    /// Estimated accelerometer bias (m/s²).
    pub accel_bias: Vector3<f64>,
    /// Estimated gyro bias (rad/s).
    pub gyro_bias: Vector3<f64>,
    pub cov: ErrorCov,
    pub time: f64,
}

impl NavState {
    /// Remove an estimated error `dx` (estimate minus truth) from the state.
    /// The covariance is left as is.
    pub fn corrected(&self, dx: &ErrorVector) -> NavState {
        let frame = LocalFrame::new(self.position.lat, self.position.lon);
        let position = frame.from_local(&Vector2::new(-dx[POS], -dx[POS + 1]), self.position.height);
        let psi = Vector3::new(dx[ATT], dx[ATT + 1], dx[ATT + 2]);
        let c = Rotation3::new(psi) * body_to_nav(&self.attitude);
        let (r, p, y) = c.euler_angles();
        NavState {
            position,
            velocity: self.velocity - Vector3::new(dx[VEL], dx[VEL + 1], 0.0),
            attitude: Vector3::new(r, p, y),
            accel_bias: self.accel_bias - dx.fixed_rows::<3>(ACC_BIAS),
            gyro_bias: self.gyro_bias - dx.fixed_rows::<3>(GYRO_BIAS),
            cov: self.cov,
            time: self.time,
        }
    }

    pub fn position_cov(&self) -> nalgebra::Matrix2<f64> {
        self.cov.fixed_view::<2, 2>(POS, POS).into_owned()
    }
}

/// Initial error standard deviations.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InitialUncertainty {
    /// Horizontal position (m).
    pub position: f64,
    /// Horizontal velocity (m/s).
    pub velocity: f64,
    /// Roll and pitch (rad).
    pub tilt: f64,
    /// Heading (rad).
    pub heading: f64,
    /// Bias standard deviations; `None` uses the spread of the sensor's bias draw.
    pub accel_bias: Option<f64>,
    pub gyro_bias: Option<f64>,
}

impl Default for InitialUncertainty {
    fn default() -> Self {
        Self { position: 10.0, velocity: 0.05, tilt: 1e-5, heading: 1e-4, accel_bias: None, gyro_bias: None }
    }
}

impl InitialUncertainty {
    pub fn covariance(&self, spec: &SensorSpec) -> ErrorCov {
        let mut d = ErrorVector::zeros();
        d[POS] = self.position.powi(2);
        d[POS + 1] = self.position.powi(2);
        d[VEL] = self.velocity.powi(2);
        d[VEL + 1] = self.velocity.powi(2);
        d[ATT] = self.tilt.powi(2);
        d[ATT + 1] = self.tilt.powi(2);
        d[ATT + 2] = self.heading.powi(2);
        let ab = self.accel_bias.map_or(spec.accel_bias_std(), Vector3::repeat);
        let gb = self.gyro_bias.map_or(spec.gyro_bias_std(), Vector3::repeat);
        for i in 0..3 {
            d[ACC_BIAS + i] = ab[i] * ab[i];
            d[GYRO_BIAS + i] = gb[i] * gb[i];
        }
        ErrorCov::from_diagonal(&d)
    }
}

type NavMatrix = SMatrix<f64, 7, 7>;
type InputMatrix = SMatrix<f64, 7, 5>;

#[derive(Debug, Clone)]
struct Discretization {
    key: (Rotation3<f64>, f64),
    nav_phi: NavMatrix,
    input: InputMatrix,
    phi: ErrorCov,
    qd: ErrorCov,
}

/// INS error propagation referenced to a known truth trajectory.
#[derive(Debug, Clone)]
pub struct Ins<'a> {
    truth: &'a TruthTrajectory,
    spec: SensorSpec,
    cache: Option<Discretization>,
}

impl<'a> Ins<'a> {
    pub fn new(truth: &'a TruthTrajectory, spec: &SensorSpec) -> Result<Self, InsError> {
        spec.validate()?;
        if truth.is_empty() {
            return Err(InsError::Config("empty truth trajectory".into()));
        }
        Ok(Self { truth, spec: *spec, cache: None })
    }

    pub fn truth(&self) -> &TruthTrajectory {
        self.truth
    }

    pub fn spec(&self) -> &SensorSpec {
        &self.spec
    }

    /// Estimate equal to the truth at t = 0 with zero bias estimates.
    pub fn initial_state(&self, init: &InitialUncertainty) -> NavState {
        let t0 = &self.truth.samples[0];
        NavState {
            position: t0.position,
            velocity: t0.velocity,
            attitude: self.truth.attitude,
            accel_bias: Vector3::zeros(),
            gyro_bias: Vector3::zeros(),
            cov: init.covariance(&self.spec),
            time: t0.time,
        }
    }

    /// Horizontal position error (north, east) in metres at the state's time.
    pub fn position_error(&self, state: &NavState) -> Vector2<f64> {
        self.truth.frame.to_local(&state.position) - self.truth.at(state.time).local
    }

    /// Navigation part of the error (position, velocity, attitude).
    pub fn nav_error(&self, state: &NavState) -> SVector<f64, 7> {
        let truth = self.truth.at(state.time);
        let dr = self.truth.frame.to_local(&state.position) - truth.local;
        let dv = state.velocity - truth.velocity;
        let m = body_to_nav(&state.attitude) * body_to_nav(&self.truth.attitude).inverse();
        let psi = -rotation_vector(&m);
        SVector::<f64, 7>::from_column_slice(&[dr.x, dr.y, dv.x, dv.y, psi.x, psi.y, psi.z])
    }

    fn rebuild(&self, truth: &TruthSample, e: &SVector<f64, 7>, like: &NavState) -> NavState {
        let local = truth.local + Vector2::new(e[0], e[1]);
        let psi = Vector3::new(e[4], e[5], e[6]);
        let c = Rotation3::new(-psi) * body_to_nav(&self.truth.attitude);
        let (r, p, y) = c.euler_angles();
        NavState {
            position: self.truth.frame.from_local(&local, self.truth.height),
            velocity: truth.velocity + Vector3::new(e[2], e[3], 0.0),
            attitude: Vector3::new(r, p, y),
            accel_bias: like.accel_bias,
            gyro_bias: like.gyro_bias,
            cov: like.cov,
            time: truth.time,
        }
    }

    fn discretize(&mut self, c: Rotation3<f64>, dt: f64) -> &Discretization {
        let fresh = matches!(&self.cache, Some(d) if d.key == (c, dt));
        if !fresh {
            self.cache = Some(build_discretization(&self.spec, c, dt));
        }
        self.cache.as_ref().expect("cache filled")
    }

    /// Advance the state by `dt` using one IMU sample.
    pub fn propagate(&mut self, state: &NavState, imu: &ImuSample, dt: f64) -> Result<NavState, InsError> {
        let max_dt = (1.0 + 1e-9) / self.spec.rate;
        let fail = |message: String| InsError::Propagation { time: state.time, message };
        if !(dt > 0.0) || dt > max_dt {
            return Err(fail(format!("time step {dt} outside (0, {max_dt}]")));
        }
        let finite = state.velocity.iter().chain(state.attitude.iter()).all(|v| v.is_finite())
            && state.position.lat.is_finite()
            && state.position.lon.is_finite()
            && imu.specific_force.iter().chain(imu.angular_rate.iter()).all(|v| v.is_finite());
        if !finite {
            return Err(fail("non-finite state or IMU sample".into()));
        }
        let truth0 = self.truth.at(state.time);
        let truth1 = self.truth.at(state.time + dt);
        let e = self.nav_error(state);
        let c = body_to_nav(&self.truth.attitude);
        let (f_ideal, w_ideal) = ideal_imu(&truth0, &self.truth.attitude);
        let df = c * (imu.specific_force - state.accel_bias - f_ideal);
        let dw = c * (imu.angular_rate - state.gyro_bias - w_ideal);
        let u = SVector::<f64, 5>::new(df.x, df.y, dw.x, dw.y, dw.z);
        let d = self.discretize(c, dt).clone();
        let e1 = d.nav_phi * e + d.input * u;
        let mut cov = d.phi * state.cov * d.phi.transpose() + d.qd;
        cov = 0.5 * (cov + cov.transpose());
        if !cov.iter().all(|v| v.is_finite()) || !e1.iter().all(|v| v.is_finite()) {
            return Err(fail("non-finite propagation result".into()));
        }
        let eig = cov.symmetric_eigenvalues();
        if eig.min() < -1e-9 * eig.max().abs().max(1e-30) {
            return Err(fail(format!("covariance lost positive semidefiniteness ({})", eig.min())));
        }
        let mut next = self.rebuild(&truth1, &e1, state);
        next.cov = cov;
        Ok(next)
    }
}

/// Rotation vector of `m`, accurate for micro-radian angles.
pub fn rotation_vector(m: &Rotation3<f64>) -> Vector3<f64> {
    let r = m.matrix();
    let v = 0.5 * Vector3::new(r[(2, 1)] - r[(1, 2)], r[(0, 2)] - r[(2, 0)], r[(1, 0)] - r[(0, 1)]);
    let s = v.norm();
    if s == 0.0 {
        return Vector3::zeros();
    }
    let angle = s.atan2(0.5 * (r.trace() - 1.0));
    v * (angle / s)
}

/// Continuous error dynamics for body-to-nav rotation `c`.
fn error_dynamics(c: &Rotation3<f64>) -> (ErrorCov, SMatrix<f64, N_ERR, 6>) {
    let r = EARTH_RADIUS;
    let mut f = ErrorCov::zeros();
    f[(POS, VEL)] = 1.0;
    f[(POS + 1, VEL + 1)] = 1.0;
    f[(VEL, ATT + 1)] = GRAVITY;
    f[(VEL + 1, ATT)] = -GRAVITY;
    f[(ATT, VEL + 1)] = 1.0 / r;
    f[(ATT + 1, VEL)] = -1.0 / r;
    let cm = c.matrix();
    // bias-corrected IMU error is -δb + noise
    let mut g = SMatrix::<f64, N_ERR, 6>::zeros();
    for i in 0..3 {
        for j in 0..2 {
            f[(VEL + j, ACC_BIAS + i)] = -cm[(j, i)];
            g[(VEL + j, i)] = cm[(j, i)];
        }
        for j in 0..3 {
            f[(ATT + j, GYRO_BIAS + i)] = cm[(j, i)];
            g[(ATT + j, 3 + i)] = -cm[(j, i)];
        }
    }
    (f, g)
}

fn build_discretization(spec: &SensorSpec, c: Rotation3<f64>, dt: f64) -> Discretization {
    let (f, g) = error_dynamics(&c);
    let psd = SVector::<f64, 6>::from_iterator(spec.accel_psd().iter().chain(spec.gyro_psd().iter()).copied());
    let qc = g * SMatrix::<f64, 6, 6>::from_diagonal(&psd) * g.transpose();

    // Van Loan: exp([[-F, Qc], [0, F']] dt)
    let n = N_ERR;
    let mut a = DMatrix::<f64>::zeros(2 * n, 2 * n);
    a.view_mut((0, 0), (n, n)).copy_from(&(-f * dt));
    a.view_mut((0, n), (n, n)).copy_from(&(qc * dt));
    a.view_mut((n, n), (n, n)).copy_from(&(f.transpose() * dt));
    let b = a.exp();
    let phi: ErrorCov = b.view((n, n), (n, n)).transpose().into_owned().fixed_view::<N_ERR, N_ERR>(0, 0).into();
    let m12: ErrorCov = b.view((0, n), (n, n)).into_owned().fixed_view::<N_ERR, N_ERR>(0, 0).into();
    let qd = phi * m12;

    // navigation block driven by the realised IMU error, held over dt
    let mut aug = DMatrix::<f64>::zeros(12, 12);
    aug.view_mut((0, 0), (7, 7)).copy_from(&(f.fixed_view::<7, 7>(0, 0) * dt));
    let mut bin = InputMatrix::zeros();
    bin[(VEL, 0)] = 1.0;
    bin[(VEL + 1, 1)] = 1.0;
    bin[(ATT, 2)] = -1.0;
    bin[(ATT + 1, 3)] = -1.0;
    bin[(ATT + 2, 4)] = -1.0;
    aug.view_mut((0, 7), (7, 5)).copy_from(&(bin * dt));
    let e = aug.exp();
    Discretization {
        key: (c, dt),
        nav_phi: e.view((0, 0), (7, 7)).into_owned().fixed_view::<7, 7>(0, 0).into(),
        input: e.view((0, 7), (7, 5)).into_owned().fixed_view::<7, 5>(0, 0).into(),
        phi,
        qd: 0.5 * (qd + qd.transpose()),
    }
}
