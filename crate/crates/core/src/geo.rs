//! Geodetic positions and a local tangent-plane frame.
//!
//! The local frame is an equirectangular approximation about an origin: north
//! and east offsets are the latitude and longitude differences scaled by the
//! WGS-84 meridional and prime-vertical radii at the origin latitude. It is
//! exactly invertible, and over a few hundred kilometres its distortion is far
//! below a map cell.

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

/// WGS-84 semi-major axis (m).
pub const WGS84_A: f64 = 6_378_137.0;
/// WGS-84 flattening.
pub const WGS84_F: f64 = 1.0 / 298.257_223_563;

/// Geodetic position in degrees with ellipsoidal height in metres.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeoPosition {
    pub lat: f64,
    pub lon: f64,
    #[serde(default)]
    pub height: f64,
}

impl GeoPosition {
    pub fn new(lat: f64, lon: f64, height: f64) -> Self {
        Self { lat, lon, height }
    }

    /// True when latitude and longitude lie in their principal ranges.
    pub fn is_valid(&self) -> bool {
        self.lat.is_finite()
            && self.lon.is_finite()
            && (-90.0..=90.0).contains(&self.lat)
            && (-180.0..=180.0).contains(&self.lon)
    }
}

/// Local north/east frame anchored at a geodetic origin.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalFrame {
    pub origin_lat: f64,
    pub origin_lon: f64,
    /// Metres per degree of latitude at the origin.
    pub north_scale: f64,
    /// Metres per degree of longitude at the origin.
    pub east_scale: f64,
}

impl LocalFrame {
    pub fn new(origin_lat: f64, origin_lon: f64) -> Self {
        let e2 = WGS84_F * (2.0 - WGS84_F);
        let phi = origin_lat.to_radians();
        let s2 = phi.sin().powi(2);
        let w = (1.0 - e2 * s2).sqrt();
        let meridional = WGS84_A * (1.0 - e2) / (w * w * w);
        let prime_vertical = WGS84_A / w;
        let deg = std::f64::consts::PI / 180.0;
        Self {
            origin_lat,
            origin_lon,
            north_scale: meridional * deg,
            east_scale: prime_vertical * phi.cos() * deg,
        }
    }

    /// (north, east) metres of `g` relative to the origin.
    pub fn to_local(&self, g: &GeoPosition) -> Vector2<f64> {
        Vector2::new(
            (g.lat - self.origin_lat) * self.north_scale,
            (g.lon - self.origin_lon) * self.east_scale,
        )
    }

    pub fn from_local(&self, p: &Vector2<f64>, height: f64) -> GeoPosition {
        GeoPosition {
            lat: self.origin_lat + p.x / self.north_scale,
            lon: self.origin_lon + p.y / self.east_scale,
            height,
        }
    }
}
