//! End-to-end navigation scenarios and Monte Carlo experiments.
//!
//! A run flies a straight truth path, simulates the IMU, propagates the INS
//! at the IMU rate and takes a magnetometer reading every `mag_period`
//! seconds. Every `batch_length` readings the batch is map matched and the
//! fix, if any, is fused into the navigation state. The horizontal position
//! error is recorded at every IMU epoch.

mod config;
mod report;

use std::path::Path;

use nalgebra::Matrix2;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::ins::{simulate_imu, Ins, InsError, NavState, TruthTrajectory, VEL};
use crate::integrator::{apply_mfv_weighting, predict, ukf_update, AidingMeasurement, IntegratorError, UpdateOutcome};
use crate::map::{MapError, MapGrid};
use crate::matching::{map_evidence, match_batch, Batch, BatchEpoch, MatchError};
use crate::pda::{MagMeasurement, PdaError, PriorPosition};
use crate::quality::{mfv, QualityError, QualityRaster, SearchWindow};
use crate::rng::{derive_seed, stream_rng};

pub use config::{MapSource, ScenarioConfig, SCHEMA_VERSION};
pub use report::{read_rms_csv, write_rms_csv, write_run_csv, write_svg, RmsRow};

/// Smallest filter sigma used when the configured magnetometer noise is zero.
pub const MIN_FILTER_SIGMA: f64 = 1e-6;

const MAG_STREAM: u64 = 3;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("map error: {0}")]
    Map(#[from] MapError),
    #[error("quality error: {0}")]
    Quality(#[from] QualityError),
    #[error("INS error: {0}")]
    Ins(#[from] InsError),
    #[error("integration error: {0}")]
    Integrator(#[from] IntegratorError),
    #[error("map matching error: {0}")]
    Matching(#[from] MatchError),
    #[error("run {index}: {source}")]
    Run { index: usize, source: Box<HarnessError> },
    #[error("I/O error on {path}: {message}")]
    Io { path: String, message: String },
}

impl HarnessError {
    /// Configuration problems as opposed to runtime failures.
    pub fn is_config(&self) -> bool {
        match self {
            HarnessError::Config(_) | HarnessError::Map(_) => true,
            HarnessError::Run { source, .. } => source.is_config(),
            _ => false,
        }
    }
}

/// One IMU epoch of a run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ErrorSample {
    pub t: f64,
    pub truth_lat: f64,
    pub truth_lon: f64,
    pub est_lat: f64,
    pub est_lon: f64,
    pub err_m: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct RunMetrics {
    pub samples: Vec<ErrorSample>,
    pub n_measurements: usize,
    pub n_attempts: usize,
    pub n_fixes: usize,
    pub n_rejected: usize,
    pub n_no_fix: usize,
    /// Normalised innovation squared of every fix offered to the filter.
    pub nis: Vec<f64>,
}

impl RunMetrics {
    pub fn final_error(&self) -> f64 {
        self.samples.last().map_or(0.0, |s| s.err_m)
    }
}

/// Prepared inputs shared by all runs of a scenario.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ScenarioConfig,
    pub map: MapGrid,
    pub truth: TruthTrajectory,
    pub mfv: Option<QualityRaster>,
}

impl Scenario {
    pub fn new(config: ScenarioConfig) -> Result<Self, HarnessError> {
        config.validate()?;
        let map = config.load_map()?;
        Self::with_map(config, map)
    }

    pub fn with_map(config: ScenarioConfig, map: MapGrid) -> Result<Self, HarnessError> {
        config.validate()?;
        let truth = config.truth()?;
        if let Some(s) = truth.samples.iter().find(|s| !map.contains(&map.to_local(&s.position))) {
            return Err(HarnessError::Config(format!(
                "trajectory leaves the map at t={} s ({:.5}, {:.5})",
                s.time, s.position.lat, s.position.lon
            )));
        }
        let mfv = match config.integrator.mfv {
            Some(_) => Some(mfv(&map, &SearchWindow::Square { radius: config.mfv_window }, false)?),
            None => None,
        };
        Ok(Self { config, map, truth, mfv })
    }

    /// A single run with its own seed.
    pub fn run(&self, run_seed: u64) -> Result<RunMetrics, HarnessError> {
        let cfg = &self.config;
        let truth = &self.truth;
        let imu = simulate_imu(truth, &cfg.sensors, run_seed)?;
        let mut ins = Ins::new(truth, &cfg.sensors)?;
        let mut state = ins.initial_state(&cfg.initial);
        let mut mag_rng = stream_rng(run_seed, MAG_STREAM);
        let filter_sigma = cfg.mag_sigma.max(MIN_FILTER_SIGMA);
        let dt = 1.0 / cfg.sensors.rate;
        let steps_per_reading = (cfg.mag_period * cfg.sensors.rate).round() as usize;

        let mut metrics = RunMetrics::default();
        let mut pending: Vec<BatchEpoch> = Vec::with_capacity(cfg.batch_length);
        metrics.samples.push(self.sample(&ins, &state));
        for k in 1..truth.len() {
            state = predict(&mut ins, &state, &imu.samples[k - 1], dt)?;
            if k % steps_per_reading == 0 {
                metrics.n_measurements += 1;
                let truth_now = truth.samples[k].position;
                let noise: f64 = StandardNormal.sample(&mut mag_rng);
                let value = self.map.sample(&self.map.to_local(&truth_now))? + cfg.mag_sigma * noise;
                if cfg.aiding {
                    let measurement = MagMeasurement::new(value, filter_sigma, state.time)
                        .map_err(|e| HarnessError::Matching(e.into()))?;
                    match self.prior_of(&state) {
                        Some(prior) => pending.push(BatchEpoch { measurement, prior }),
                        None => pending.clear(),
                    }
                    if metrics.n_measurements % cfg.batch_length == 0 {
                        metrics.n_attempts += 1;
                        let epochs = std::mem::take(&mut pending);
                        state = self.aid(state, epochs, &mut metrics)?;
                    }
                }
            }
            metrics.samples.push(self.sample(&ins, &state));
        }
        Ok(metrics)
    }

    fn sample(&self, ins: &Ins<'_>, state: &NavState) -> ErrorSample {
        let truth = self.truth.at(state.time).position;
        ErrorSample {
            t: state.time,
            truth_lat: truth.lat,
            truth_lon: truth.lon,
            est_lat: state.position.lat,
            est_lon: state.position.lon,
            err_m: ins.position_error(state).norm(),
        }
    }

    /// INS position belief about the centre of the cell holding the vehicle,
    /// in map coordinates; `None` when it is off the map.
    fn prior_of(&self, state: &NavState) -> Option<PriorPosition> {
        let mean = self.map.to_local(&state.position);
        let floor = Matrix2::identity() * (1e-6 + self.map.cell_size.powi(2) / 12.0);
        let cov = state.position_cov() + floor;
        PriorPosition::new(mean, 0.5 * (cov + cov.transpose())).ok().filter(|p| self.map.contains(&p.mean))
    }

    fn aid(&self, state: NavState, epochs: Vec<BatchEpoch>, metrics: &mut RunMetrics) -> Result<NavState, HarnessError> {
        let cfg = &self.config;
        if epochs.len() < cfg.batch_length {
            metrics.n_no_fix += 1;
            return Ok(state);
        }
        let v = state.cov.fixed_view::<2, 2>(VEL, VEL).into_owned();
        let batch = Batch::from_priors(epochs, &(0.5 * (v + v.transpose())), self.map.cell_size)?;
        let result = match match_batch(cfg.algorithm, &batch, &self.map, &cfg.matching) {
            Ok(r) => r,
            Err(MatchError::Pda(PdaError::OutOfBounds { .. })) => None,
            Err(e) => return Err(e.into()),
        };
        let fix = match (result, cfg.remove_fix_prior) {
            (Some(r), true) => map_evidence(&batch, &r.fix),
            (r, _) => r.map(|r| r.fix),
        };
        let Some(fix) = fix else {
            metrics.n_no_fix += 1;
            return Ok(state);
        };
        let mut aiding = AidingMeasurement::from_fix(&fix, &self.map, state.position.height);
        if let (Some(w), Some(raster)) = (cfg.integrator.mfv, &self.mfv) {
            let value = self
                .map
                .cell_of(&fix.mean)
                .and_then(|(r, c)| raster.get(r, c))
                .unwrap_or(0.0);
            aiding = apply_mfv_weighting(&aiding, value, &w);
        }
        match ukf_update(&state, &aiding, &cfg.integrator)? {
            UpdateOutcome::Accepted { state, nis } => {
                metrics.n_fixes += 1;
                metrics.nis.push(nis);
                Ok(state)
            }
            UpdateOutcome::Rejected { nis } => {
                metrics.n_rejected += 1;
                metrics.nis.push(nis);
                Ok(state)
            }
        }
    }
}

/// Per-run seed derived from the master seed by counter.
pub fn run_seed(master: u64, index: usize) -> u64 {
    derive_seed(master, index as u64)
}

pub fn run_scenario(scenario: &Scenario, run_seed: u64) -> Result<RunMetrics, HarnessError> {
    scenario.run(run_seed)
}

/// Aggregate over independent runs.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MonteCarloResult {
    pub runs: Vec<RunMetrics>,
    pub times: Vec<f64>,
    /// Root mean square error across runs at each time.
    pub rms: Vec<f64>,
    pub n_attempts: usize,
    pub n_fixes: usize,
    pub n_rejected: usize,
    pub n_no_fix: usize,
}

impl MonteCarloResult {
    pub fn from_runs(runs: Vec<RunMetrics>) -> Result<Self, HarnessError> {
        let first = runs.first().ok_or_else(|| HarnessError::Config("no runs".into()))?;
        let times: Vec<f64> = first.samples.iter().map(|s| s.t).collect();
        if runs.iter().any(|r| r.samples.len() != times.len()) {
            return Err(HarnessError::Config("runs have different lengths".into()));
        }
        let n = runs.len() as f64;
        let rms = (0..times.len())
            .map(|i| (runs.iter().map(|r| r.samples[i].err_m.powi(2)).sum::<f64>() / n).sqrt())
            .collect();
        Ok(Self {
            times,
            rms,
            n_attempts: runs.iter().map(|r| r.n_attempts).sum(),
            n_fixes: runs.iter().map(|r| r.n_fixes).sum(),
            n_rejected: runs.iter().map(|r| r.n_rejected).sum(),
            n_no_fix: runs.iter().map(|r| r.n_no_fix).sum(),
            runs,
        })
    }

    pub fn n_runs(&self) -> usize {
        self.runs.len()
    }

    pub fn final_rms(&self) -> f64 {
        self.rms.last().copied().unwrap_or(0.0)
    }

    /// Fraction of aiding attempts that produced an accepted fix.
    pub fn success_rate(&self) -> f64 {
        if self.n_attempts == 0 {
            return 0.0;
        }
        self.n_fixes as f64 / self.n_attempts as f64
    }

    pub fn rms_rows(&self) -> Vec<RmsRow> {
        self.times.iter().zip(&self.rms).map(|(t, r)| RmsRow { t: *t, rms_m: *r, n_runs: self.n_runs() }).collect()
    }
}

/// `n_runs` independent runs in parallel; results are ordered by run index.
pub fn run_monte_carlo(scenario: &Scenario) -> Result<MonteCarloResult, HarnessError> {
    let cfg = &scenario.config;
    let runs = (0..cfg.n_runs)
        .into_par_iter()
        .map(|i| scenario.run(run_seed(cfg.seed, i)).map_err(|e| HarnessError::Run { index: i, source: Box::new(e) }))
        .collect::<Result<Vec<_>, _>>()?;
    MonteCarloResult::from_runs(runs)
}

/// Write the RMS CSV and, if requested, the SVG plot for one or more cases.
pub fn emit_report(
    cases: &[(String, &MonteCarloResult)],
    csv_path: &Path,
    svg_path: Option<&Path>,
) -> Result<(), HarnessError> {
    if cases.is_empty() || cases.iter().any(|(_, r)| r.times.is_empty()) {
        return Err(HarnessError::Config("nothing to report".into()));
    }
    let rows: Vec<(String, Vec<RmsRow>)> = cases.iter().map(|(n, r)| (n.clone(), r.rms_rows())).collect();
    write_rms_csv(csv_path, &rows)?;
    if let Some(svg) = svg_path {
        write_svg(svg, &rows)?;
    }
    Ok(())
}
