//! Scenario configuration (JSON).

use std::path::{Path, PathBuf};

use nalgebra::Vector2;
use serde::{Deserialize, Serialize};

use super::HarnessError;
use crate::geo::{GeoPosition, LocalFrame};
use crate::ins::{InitialUncertainty, SensorSpec, TruthTrajectory};
use crate::integrator::IntegratorConfig;
use crate::map::io::{load_grid, GridFormat};
use crate::map::synthetic::SyntheticMapSpec;
use crate::map::MapGrid;
use crate::matching::{Algorithm, MatchParams};

pub const SCHEMA_VERSION: u32 = 1;

/// Where the TMI grid comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum MapSource {
    /// ESRI ASCII or CSV grid on disk.
    File { path: PathBuf },
    /// Generated grid exactly as specified.
    Synthetic { spec: SyntheticMapSpec },
    /// Generated grid sized to cover the path plus `margin_m` on every side.
    /// The spec's size and origin are replaced.
    Corridor { margin_m: f64, spec: SyntheticMapSpec },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub schema_version: u32,
    pub map: MapSource,
    pub start: GeoPosition,
    pub end: GeoPosition,
    /// Ground speed (m/s).
    pub speed: f64,
    /// Flight height (m).
    pub height: f64,
    /// Stop after this many seconds instead of at the end point.
    pub duration: Option<f64>,
    pub sensors: SensorSpec,
    pub initial: InitialUncertainty,
    /// Magnetometer noise standard deviation (nT).
    pub mag_sigma: f64,
    /// Seconds between magnetometer readings.
    pub mag_period: f64,
    /// Readings per map-matching batch.
    pub batch_length: usize,
    /// When false the magnetometer is simulated but never used.
    pub aiding: bool,
    pub algorithm: Algorithm,
    pub matching: MatchParams,
    pub integrator: IntegratorConfig,
    /// Strip the INS prior out of each fix before fusing it, since the
    /// navigation filter already holds that information.
    pub remove_fix_prior: bool,
    /// Half-width in cells of the MFV window used for covariance weighting.
    pub mfv_window: usize,
    pub n_runs: usize,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            map: MapSource::Corridor { margin_m: 5000.0, spec: SyntheticMapSpec::default() },
            start: GeoPosition::new(-38.0, 144.5, 100.0),
            end: GeoPosition::new(-35.0, 150.0, 100.0),
            speed: 22.0,
            height: 100.0,
            duration: None,
            sensors: SensorSpec::precision(),
            initial: InitialUncertainty::default(),
            mag_sigma: 0.015,
            mag_period: 10.0,
            batch_length: 30,
            aiding: true,
            algorithm: Algorithm::Pmht,
            matching: MatchParams::default(),
            integrator: IntegratorConfig::default(),
            remove_fix_prior: true,
            mfv_window: 3,
            n_runs: 100,
            seed: 1,
        }
    }
}

impl ScenarioConfig {
    /// Parse a JSON config. A relative map path is taken relative to the file.
    pub fn from_json_file(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: ScenarioConfig = serde_json::from_str(&text)
            .map_err(|e| HarnessError::Config(format!("{}: {e}", path.display())))?;
        if let MapSource::File { path: map_path } = &mut cfg.map {
            if map_path.is_relative() {
                if let Some(dir) = path.parent() {
                    *map_path = dir.join(&*map_path);
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let fail = |m: String| Err(HarnessError::Config(m));
        if self.schema_version != SCHEMA_VERSION {
            return fail(format!("unsupported schema_version {} (expected {SCHEMA_VERSION})", self.schema_version));
        }
        if !(self.speed > 0.0 && self.speed.is_finite()) {
            return fail(format!("speed must be positive, got {}", self.speed));
        }
        if !self.height.is_finite() {
            return fail("height must be finite".into());
        }
        self.sensors.validate().map_err(|e| HarnessError::Config(e.to_string()))?;
        let steps = self.mag_period * self.sensors.rate;
        if !(self.mag_period > 0.0) || (steps - steps.round()).abs() > 1e-9 || steps.round() < 1.0 {
            return fail(format!("mag_period {} must be a positive multiple of the IMU interval", self.mag_period));
        }
        if !(self.mag_sigma >= 0.0 && self.mag_sigma.is_finite()) {
            return fail(format!("mag_sigma must be non-negative, got {}", self.mag_sigma));
        }
        if self.batch_length == 0 {
            return fail("batch_length must be at least 1".into());
        }
        if self.n_runs == 0 {
            return fail("n_runs must be at least 1".into());
        }
        if let Some(d) = self.duration {
            if !(d > 0.0) {
                return fail(format!("duration must be positive, got {d}"));
            }
        }
        if let MapSource::Corridor { margin_m, .. } = &self.map {
            if !(*margin_m >= 0.0) {
                return fail(format!("corridor margin must be non-negative, got {margin_m}"));
            }
        }
        Ok(())
    }

    /// Truth path at the configured height, cut at `duration` if set.
    pub fn truth(&self) -> Result<TruthTrajectory, HarnessError> {
        let start = GeoPosition { height: self.height, ..self.start };
        let end = GeoPosition { height: self.height, ..self.end };
        let mut t = TruthTrajectory::straight(start, end, self.speed, self.sensors.rate)
            .map_err(|e| HarnessError::Config(e.to_string()))?;
        if let Some(d) = self.duration {
            if d > t.duration() + 1e-9 {
                return Err(HarnessError::Config(format!(
                    "duration {d} s exceeds the path duration {:.1} s",
                    t.duration()
                )));
            }
            t.samples.retain(|s| s.time <= d + 1e-9);
        }
        Ok(t)
    }

    pub fn load_map(&self) -> Result<MapGrid, HarnessError> {
        match &self.map {
            MapSource::File { path } => Ok(load_grid(path, GridFormat::from_path(path))?),
            MapSource::Synthetic { spec } => Ok(spec.generate()?),
            MapSource::Corridor { margin_m, spec } => Ok(self.corridor_spec(*margin_m, spec)?.generate()?),
        }
    }

    /// Generator spec covering the flown part of the path plus a margin.
    pub fn corridor_spec(&self, margin: f64, spec: &SyntheticMapSpec) -> Result<SyntheticMapSpec, HarnessError> {
        let truth = self.truth()?;
        let frame = LocalFrame::new(self.start.lat, self.start.lon);
        let a = Vector2::zeros();
        let b = truth.samples.last().map_or(a, |s| s.local);
        let lo = a.inf(&b) - Vector2::repeat(margin);
        let hi = a.sup(&b) + Vector2::repeat(margin);
        let origin = frame.from_local(&lo, 0.0);
        let cells = |len: f64| ((len / spec.cell_size).ceil() as usize).max(2);
        Ok(SyntheticMapSpec {
            n_rows: cells(hi.x - lo.x),
            n_cols: cells(hi.y - lo.y),
            origin_lat: origin.lat,
            origin_lon: origin.lon,
            ..spec.clone()
        })
    }
}
