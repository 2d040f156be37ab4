//! Inertial sensor error specifications and IMU stream simulation.

use nalgebra::{Rotation3, Vector3};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::trajectory::{TruthSample, TruthTrajectory};
use super::{InsError, EARTH_RADIUS, EARTH_RATE, GRAVITY};
use crate::rng::stream_rng;

/// deg/h to rad/s.
pub const DEG_PER_HOUR: f64 = std::f64::consts::PI / 180.0 / 3600.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ImuSample {
    /// Specific force in body axes (m/s²).
    pub specific_force: Vector3<f64>,
    /// Angular rate in body axes (rad/s).
    pub angular_rate: Vector3<f64>,
    pub time: f64,
}

/// Per-axis error magnitudes. Body x and y take the horizontal figures and
/// z the vertical ones.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorSpec {
    /// Bias bound (m/s²); each run draws a constant bias uniformly in ±bound.
    pub accel_bias: [f64; 3],
    /// White-noise density (m/s²/√Hz).
    pub accel_noise: [f64; 3],
    /// Bias bound (deg/h).
    pub gyro_bias: [f64; 3],
    /// White-noise density (deg/h/√Hz).
    pub gyro_noise: [f64; 3],
    /// Sample rate (Hz).
    pub rate: f64,
}

impl Default for SensorSpec {
    fn default() -> Self {
        Self::precision()
    }
}

impl SensorSpec {
    /// Precision-grade accelerometers and gyros at 1 Hz.
    pub fn precision() -> Self {
        Self {
            accel_bias: [2e-6, 2e-6, 2.5e-8],
            accel_noise: [8e-5, 8e-5, 1.6e-6],
            gyro_bias: [2e-5, 2e-5, 1e-3],
            gyro_noise: [1e-3, 1e-3, 3e-2],
            rate: 1.0,
        }
    }

    /// Typical navigation-grade unit (0.01 deg/h, 25 µg) at 1 Hz.
    pub fn navigation() -> Self {
        Self {
            accel_bias: [2.5e-4; 3],
            accel_noise: [2e-4; 3],
            gyro_bias: [0.01; 3],
            gyro_noise: [0.12; 3],
            rate: 1.0,
        }
    }

    /// Error-free sensors at `rate`.
    pub fn perfect(rate: f64) -> Self {
        Self { accel_bias: [0.0; 3], accel_noise: [0.0; 3], gyro_bias: [0.0; 3], gyro_noise: [0.0; 3], rate }
    }

    pub fn validate(&self) -> Result<(), InsError> {
        let all = self.accel_bias.iter().chain(&self.accel_noise).chain(&self.gyro_bias).chain(&self.gyro_noise);
        if !(self.rate > 0.0 && self.rate.is_finite()) {
            return Err(InsError::Config(format!("sensor rate must be positive, got {}", self.rate)));
        }
        if all.clone().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return Err(InsError::Config("sensor biases and noise densities must be non-negative".into()));
        }
        Ok(())
    }

    /// Continuous accelerometer noise spectral densities (m²/s³).
    pub fn accel_psd(&self) -> Vector3<f64> {
        Vector3::from(self.accel_noise).map(|d| d * d)
    }

    /// Continuous gyro noise spectral densities (rad²/s).
    pub fn gyro_psd(&self) -> Vector3<f64> {
        Vector3::from(self.gyro_noise).map(|d| (d * DEG_PER_HOUR).powi(2))
    }

    /// Standard deviation of a uniform bias draw, SI units.
    pub fn accel_bias_std(&self) -> Vector3<f64> {
        Vector3::from(self.accel_bias) / 3f64.sqrt()
    }

    pub fn gyro_bias_std(&self) -> Vector3<f64> {
        Vector3::from(self.gyro_bias) * DEG_PER_HOUR / 3f64.sqrt()
    }
}

/// Body-to-navigation rotation for roll, pitch, yaw.
pub fn body_to_nav(attitude: &Vector3<f64>) -> Rotation3<f64> {
    Rotation3::from_euler_angles(attitude.x, attitude.y, attitude.z)
}

/// Error-free specific force and angular rate for a level vehicle moving at
/// constant velocity over a spherical earth.
pub fn ideal_imu(sample: &TruthSample, attitude: &Vector3<f64>) -> (Vector3<f64>, Vector3<f64>) {
    let c_nb = body_to_nav(attitude).inverse();
    let lat = sample.position.lat.to_radians();
    let r = EARTH_RADIUS + sample.position.height;
    let v = sample.velocity;
    let earth = Vector3::new(EARTH_RATE * lat.cos(), 0.0, -EARTH_RATE * lat.sin());
    let transport = Vector3::new(v.y / r, -v.x / r, -v.y * lat.tan() / r);
    (c_nb * Vector3::new(0.0, 0.0, -GRAVITY), c_nb * (earth + transport))
}

/// A simulated IMU record and the constant biases drawn for it.
#[derive(Debug, Clone, PartialEq)]
pub struct ImuStream {
    pub samples: Vec<ImuSample>,
    /// True accelerometer bias (m/s²).
    pub accel_bias: Vector3<f64>,
    /// True gyro bias (rad/s).
    pub gyro_bias: Vector3<f64>,
}

/// One sample per truth epoch: ideal kinematics plus a constant bias drawn
/// once per seed plus white noise of standard deviation `density * sqrt(rate)`.
pub fn simulate_imu(truth: &TruthTrajectory, spec: &SensorSpec, seed: u64) -> Result<ImuStream, InsError> {
    spec.validate()?;
    let mut rng = stream_rng(seed, 1);
    let mut uniform = |bound: f64| if bound > 0.0 { rng.random_range(-bound..=bound) } else { 0.0 };
    let accel_bias = Vector3::new(uniform(spec.accel_bias[0]), uniform(spec.accel_bias[1]), uniform(spec.accel_bias[2]));
    let gyro_bias = Vector3::new(uniform(spec.gyro_bias[0]), uniform(spec.gyro_bias[1]), uniform(spec.gyro_bias[2]))
        * DEG_PER_HOUR;
    let root_rate = spec.rate.sqrt();
    let accel_std = Vector3::from(spec.accel_noise) * root_rate;
    let gyro_std = Vector3::from(spec.gyro_noise) * DEG_PER_HOUR * root_rate;
    let mut noise = stream_rng(seed, 2);
    let mut draw = |std: &Vector3<f64>| {
        Vector3::new(
            std.x * noise.sample::<f64, _>(StandardNormal),
            std.y * noise.sample::<f64, _>(StandardNormal),
            std.z * noise.sample::<f64, _>(StandardNormal),
        )
    };
    let samples = truth
        .samples
        .iter()
        .map(|s| {
            let (f, w) = ideal_imu(s, &truth.attitude);
            ImuSample {
                specific_force: f + accel_bias + draw(&accel_std),
                angular_rate: w + gyro_bias + draw(&gyro_std),
                time: s.time,
            }
        })
        .collect();
    Ok(ImuStream { samples, accel_bias, gyro_bias })
}
