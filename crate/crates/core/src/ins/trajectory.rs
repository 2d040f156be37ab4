//! Straight constant-speed truth trajectories.

use nalgebra::{Vector2, Vector3};

use super::InsError;
use crate::geo::{GeoPosition, LocalFrame};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruthSample {
    pub time: f64,
    /// (north, east) metres in the trajectory frame.
    pub local: Vector2<f64>,
    pub position: GeoPosition,
    /// North, east, down (m/s).
    pub velocity: Vector3<f64>,
}

/// Uniformly sampled truth. Attitude is level with constant heading.
#[derive(Debug, Clone, PartialEq)]
pub struct TruthTrajectory {
    pub frame: LocalFrame,
    pub samples: Vec<TruthSample>,
    /// Roll, pitch, yaw (rad).
    pub attitude: Vector3<f64>,
    pub speed: f64,
    pub height: f64,
    pub rate: f64,
}

impl TruthTrajectory {
    /// Straight path from `start` towards `end` in the frame anchored at
    /// `start`, sampled at `rate` until the end point is reached.
    pub fn straight(start: GeoPosition, end: GeoPosition, speed: f64, rate: f64) -> Result<Self, InsError> {
        if !(speed > 0.0 && speed.is_finite()) || !(rate > 0.0 && rate.is_finite()) {
            return Err(InsError::Config(format!("speed and rate must be positive, got {speed} and {rate}")));
        }
        if !start.is_valid() || !end.is_valid() {
            return Err(InsError::Config("start or end position out of range".into()));
        }
        let frame = LocalFrame::new(start.lat, start.lon);
        let delta = frame.to_local(&end);
        let length = delta.norm();
        if length == 0.0 {
            return Err(InsError::Config("start and end coincide".into()));
        }
        let dir = delta / length;
        let duration = length / speed;
        let n = (duration * rate * (1.0 + 1e-12)).floor() as usize + 1;
        let velocity = Vector3::new(dir.x * speed, dir.y * speed, 0.0);
        let samples = (0..n)
            .map(|k| {
                let time = k as f64 / rate;
                let local = dir * (speed * time);
                TruthSample { time, local, position: frame.from_local(&local, start.height), velocity }
            })
            .collect();
        Ok(Self {
            frame,
            samples,
            attitude: Vector3::new(0.0, 0.0, dir.y.atan2(dir.x)),
            speed,
            height: start.height,
            rate,
        })
    }

    /// Vehicle at rest for `duration` seconds.
    pub fn stationary(position: GeoPosition, yaw: f64, duration: f64, rate: f64) -> Result<Self, InsError> {
        if !(rate > 0.0) || !(duration >= 0.0) {
            return Err(InsError::Config("rate must be positive and duration non-negative".into()));
        }
        let frame = LocalFrame::new(position.lat, position.lon);
        let n = (duration * rate * (1.0 + 1e-12)).floor() as usize + 1;
        let samples = (0..n)
            .map(|k| TruthSample {
                time: k as f64 / rate,
                local: Vector2::zeros(),
                position,
                velocity: Vector3::zeros(),
            })
            .collect();
        Ok(Self {
            frame,
            samples,
            attitude: Vector3::new(0.0, 0.0, yaw),
            speed: 0.0,
            height: position.height,
            rate,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.samples.last().map_or(0.0, |s| s.time)
    }

    /// Truth at time `t`, linear between samples and clamped to the ends.
    pub fn at(&self, t: f64) -> TruthSample {
        let last = self.samples.len() - 1;
        let x = (t * self.rate).clamp(0.0, last as f64);
        let k = (x.floor() as usize).min(last);
        let a = &self.samples[k];
        if k == last || x == k as f64 {
            return TruthSample { time: t, ..*a };
        }
        let b = &self.samples[k + 1];
        let f = x - k as f64;
        let local = a.local + (b.local - a.local) * f;
        TruthSample {
            time: t,
            local,
            position: self.frame.from_local(&local, self.height),
            velocity: a.velocity + (b.velocity - a.velocity) * f,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn one_kilometre_at_ten_metres_per_second() {
        let start = GeoPosition::new(-38.0, 144.5, 100.0);
        let frame = LocalFrame::new(start.lat, start.lon);
        let end = frame.from_local(&Vector2::new(600.0, 800.0), 100.0);
        let t = TruthTrajectory::straight(start, end, 10.0, 1.0).unwrap();
        assert_eq!(t.len(), 101);
        assert!((t.duration() - 100.0).abs() < 1e-9);
        assert!((t.samples[100].local - Vector2::new(600.0, 800.0)).norm() < 1e-6);
        assert!((t.attitude.z - 0.8f64.atan2(0.6)).abs() < 1e-12);
        assert!(t.samples.iter().all(|s| s.position.height == 100.0));
    }

    #[test]
    fn melbourne_to_sydney_takes_over_three_point_six_hours() {
        let t = TruthTrajectory::straight(
            GeoPosition::new(-38.0, 144.5, 100.0),
            GeoPosition::new(-35.0, 150.0, 100.0),
            22.0,
            1.0,
        )
        .unwrap();
        assert!(t.duration() > 3.6 * 3600.0);
    }

    #[test]
    fn rejects_degenerate_paths() {
        let p = GeoPosition::new(-38.0, 144.5, 0.0);
        assert!(TruthTrajectory::straight(p, p, 10.0, 1.0).is_err());
        assert!(TruthTrajectory::straight(p, GeoPosition::new(-37.0, 144.5, 0.0), 0.0, 1.0).is_err());
        assert!(TruthTrajectory::straight(p, GeoPosition::new(-37.0, 144.5, 0.0), 10.0, -1.0).is_err());
    }

    #[test]
    fn interpolation_is_exact_on_straight_paths() {
        let t = TruthTrajectory::straight(
            GeoPosition::new(-38.0, 144.5, 0.0),
            GeoPosition::new(-37.9, 144.6, 0.0),
            22.0,
            1.0,
        )
        .unwrap();
        let mid = t.at(10.25);
        let dir = t.samples[1].local / t.samples[1].local.norm();
        assert!((mid.local - dir * 22.0 * 10.25).norm() < 1e-9);
        assert_eq!(t.at(-5.0).local, t.samples[0].local);
    }

    proptest! {
        #[test]
        fn consecutive_samples_are_speed_over_rate_apart(
            dlat in -0.5f64..0.5, dlon in -0.5f64..0.5, speed in 1.0f64..300.0, rate in 0.5f64..10.0
        ) {
            prop_assume!(dlat.abs() + dlon.abs() > 0.01);
            let start = GeoPosition::new(-36.0, 146.0, 50.0);
            let end = GeoPosition::new(-36.0 + dlat, 146.0 + dlon, 50.0);
            let t = TruthTrajectory::straight(start, end, speed, rate).unwrap();
            for w in t.samples.windows(2) {
                prop_assert!(((w[1].local - w[0].local).norm() - speed / rate).abs() < 1e-6);
                prop_assert!((w[0].velocity.norm() - speed).abs() < 1e-9);
            }
        }
    }
}
