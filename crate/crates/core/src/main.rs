use std::path::{Path, PathBuf};
use std::io::Write;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use rand_distr::{Distribution, StandardNormal};
use serde_json::json;

use magnav::geo::GeoPosition;
use magnav::harness::{
    emit_report, run_monte_carlo, run_seed, write_run_csv, HarnessError, MonteCarloResult, Scenario, ScenarioConfig,
};
use magnav::map::io::{load_grid, save_grid, GridFormat};
use magnav::map::synthetic::SyntheticMapSpec;
use magnav::map::MapGrid;
use magnav::matching::{match_batch, Algorithm, BatchFile, MatchParams};
use magnav::pda::{gate_candidates, pda_error, pda_estimate, pda_weights, GateParams, MagMeasurement, PositionFix, PriorPosition};
use magnav::quality::{mfv, noise_resolution_sweep, SearchWindow, SweepConfig};
use magnav::rng::stream_rng;

/// Magnetic-anomaly map matching for aided inertial navigation.
#[derive(Parser)]
#[command(name = "magnav", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Print grid dimensions, cell size, value range and nodata count.
    MapInfo { path: PathBuf },
    /// Write a seeded synthetic TMI grid (.asc or .csv).
    Synth {
        #[arg(long)]
        out: PathBuf,
        /// JSON generator spec; defaults are used for missing fields.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Single-scan PDA fix for a reading simulated at a point.
    Pda {
        #[arg(long)]
        map: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        lat: f64,
        #[arg(long, allow_hyphen_values = true)]
        lon: f64,
        /// Magnetometer noise (nT).
        #[arg(long)]
        sigma: f64,
        #[arg(long, default_value_t = GateParams::default().gamma)]
        gamma: f64,
        #[arg(long, default_value_t = GateParams::default().kappa)]
        kappa: f64,
        /// Prior standard deviation about the true point (m).
        #[arg(long, default_value_t = 485.0)]
        prior_std: f64,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Map feature variability raster.
    Mfv {
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Square window half-width in cells.
        #[arg(long, default_value_t = 3)]
        radius: usize,
        /// Divide by the raster maximum.
        #[arg(long)]
        normalize: bool,
    },
    /// PDA error over noise levels and grid resolutions.
    Sweep {
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0.001,0.01,0.1,1")]
        sigmas: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_value = "1,5,10")]
        factors: Vec<usize>,
        #[arg(long, default_value_t = 1000)]
        samples: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
    },
    /// Match a batch of readings against a map and print the fix as JSON.
    Match {
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        batch: PathBuf,
        #[arg(long, value_enum, default_value = "pmht")]
        algo: AlgoArg,
    },
    /// One aided navigation run; writes the per-second error CSV.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Monte Carlo runs; writes the RMS error CSV and optionally an SVG plot.
    Montecarlo {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        svg: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        runs: Option<usize>,
        /// Run one case per magnetometer noise level instead of the configured one.
        #[arg(long, value_delimiter = ',')]
        sigmas: Vec<f64>,
        /// Add an INS-only case.
        #[arg(long)]
        unaided: bool,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum AlgoArg {
    Pmht,
    Viterbi,
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        if e.is_config() {
            Failure::Config(e.to_string())
        } else {
            Failure::Runtime(e.to_string())
        }
    }
}

fn config_err(e: impl std::fmt::Display) -> Failure {
    Failure::Config(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> Failure {
    Failure::Runtime(e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Config(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(3)
        }
    }
}

fn load_map(path: &Path) -> Result<MapGrid, Failure> {
    load_grid(path, GridFormat::from_path(path)).map_err(|e| config_err(format!("{}: {e}", path.display())))
}

fn print_json(v: &serde_json::Value) {
    let text = serde_json::to_string_pretty(v).expect("serialisable");
    // a closed pipe downstream is not an error
    let _ = writeln!(std::io::stdout().lock(), "{text}");
}

fn write_err(path: &Path) -> impl Fn(magnav::map::MapError) -> Failure + '_ {
    move |e| runtime_err(format!("{}: {e}", path.display()))
}

fn fix_json(map: &MapGrid, fix: &PositionFix) -> serde_json::Value {
    let g = map.frame().from_local(&fix.mean, 0.0);
    json!({
        "time": fix.time,
        "north_m": fix.mean.x,
        "east_m": fix.mean.y,
        "lat": g.lat,
        "lon": g.lon,
        "cov_m2": [[fix.cov[(0, 0)], fix.cov[(0, 1)]], [fix.cov[(1, 0)], fix.cov[(1, 1)]]],
        "n_candidates": fix.n_candidates,
    })
}

fn load_config(path: &Path, seed: Option<u64>, runs: Option<usize>) -> Result<ScenarioConfig, Failure> {
    let mut cfg = ScenarioConfig::from_json_file(path)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(n) = runs {
        cfg.n_runs = n;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::MapInfo { path } => {
            let map = load_map(&path)?;
            let stats = map.stats();
            print_json(&json!({
                "n_rows": map.n_rows,
                "n_cols": map.n_cols,
                "cell_size_m": map.cell_size,
                "origin_lat": map.origin_lat,
                "origin_lon": map.origin_lon,
                "min_nT": stats.min,
                "max_nT": stats.max,
                "nodata_count": stats.nodata_count,
            }));
        }
        Command::Synth { out, spec, seed } => {
            let mut spec: SyntheticMapSpec = match spec {
                Some(p) => {
                    let text = std::fs::read_to_string(&p).map_err(|e| config_err(format!("{}: {e}", p.display())))?;
                    serde_json::from_str(&text).map_err(|e| config_err(format!("{}: {e}", p.display())))?
                }
                None => SyntheticMapSpec::default(),
            };
            if let Some(s) = seed {
                spec.seed = s;
            }
            let map = spec.generate().map_err(config_err)?;
            save_grid(&map, &out, GridFormat::from_path(&out)).map_err(write_err(&out))?;
        }
        Command::Pda { map, lat, lon, sigma, gamma, kappa, prior_std, seed } => {
            let map = load_map(&map)?;
            let truth = map.to_local(&GeoPosition::new(lat, lon, 0.0));
            if !map.in_sample_bounds(&truth) {
                return Err(config_err(format!("({lat}, {lon}) is outside the map")));
            }
            let noise: f64 = StandardNormal.sample(&mut stream_rng(seed, 0));
            let value = map.sample(&truth).map_err(config_err)? + sigma * noise;
            let meas = MagMeasurement::new(value, sigma, 0.0).map_err(config_err)?;
            let prior = PriorPosition::isotropic(truth, prior_std).map_err(config_err)?;
            let gate = GateParams { gamma, kappa, ..Default::default() };
            let cands = gate_candidates(&map, &prior, &meas, &gate).map_err(config_err)?;
            if cands.is_empty() {
                print_json(&json!({ "fix": null, "n_candidates": 0, "reading_nT": value }));
                return Ok(());
            }
            let fix = pda_estimate(&pda_weights(cands, &prior).map_err(runtime_err)?).map_err(runtime_err)?;
            print_json(&json!({
                "fix": fix_json(&map, &fix),
                "n_candidates": fix.n_candidates,
                "reading_nT": value,
                "error_m": pda_error(&fix, &truth),
            }));
        }
        Command::Mfv { map, out, radius, normalize } => {
            let map = load_map(&map)?;
            let raster = mfv(&map, &SearchWindow::Square { radius }, normalize).map_err(config_err)?;
            save_grid(&raster.grid, &out, GridFormat::from_path(&out)).map_err(write_err(&out))?;
            print_json(&json!({ "max": raster.max(), "mean": raster.mean() }));
        }
        Command::Sweep { map, out, sigmas, factors, samples, seed } => {
            let map = load_map(&map)?;
            let cfg = SweepConfig { n_samples: samples, seed, ..Default::default() };
            let rows = noise_resolution_sweep(&map, &sigmas, &factors, &cfg).map_err(config_err)?;
            let mut w = csv::Writer::from_path(&out).map_err(|e| runtime_err(format!("{}: {e}", out.display())))?;
            for r in &rows {
                w.serialize(r).map_err(runtime_err)?;
            }
            w.flush().map_err(runtime_err)?;
        }
        Command::Match { map, batch, algo } => {
            let map = load_map(&map)?;
            let text = std::fs::read_to_string(&batch).map_err(|e| config_err(format!("{}: {e}", batch.display())))?;
            let file: BatchFile =
                serde_json::from_str(&text).map_err(|e| config_err(format!("{}: {e}", batch.display())))?;
            let batch = file.to_batch(map.cell_size).map_err(config_err)?;
            let algorithm = match algo {
                AlgoArg::Pmht => Algorithm::Pmht,
                AlgoArg::Viterbi => Algorithm::Viterbi,
            };
            let result = match_batch(algorithm, &batch, &map, &MatchParams::default()).map_err(runtime_err)?;
            match result {
                Some(r) => print_json(&json!({
                    "fix": fix_json(&map, &r.fix),
                    "iterations": r.iterations,
                    "converged": r.converged,
                    "smoothed_track_m": r.smoothed_track.iter().map(|p| [p.x, p.y]).collect::<Vec<_>>(),
                })),
                None => print_json(&json!({ "fix": null })),
            }
        }
        Command::Simulate { config, out, seed } => {
            let cfg = load_config(&config, seed, None)?;
            let scenario = Scenario::new(cfg)?;
            let metrics = scenario.run(run_seed(scenario.config.seed, 0))?;
            write_run_csv(&out, &metrics.samples)?;
            print_json(&json!({
                "final_error_m": metrics.final_error(),
                "n_measurements": metrics.n_measurements,
                "n_attempts": metrics.n_attempts,
                "n_fixes": metrics.n_fixes,
                "n_rejected": metrics.n_rejected,
                "n_no_fix": metrics.n_no_fix,
            }));
        }
        Command::Montecarlo { config, out, svg, seed, runs, sigmas, unaided } => {
            let cfg = load_config(&config, seed, runs)?;
            let base = Scenario::new(cfg.clone())?;
            let mut cases: Vec<(String, ScenarioConfig)> = Vec::new();
            if unaided {
                cases.push(("INS only".into(), ScenarioConfig { aiding: false, ..cfg.clone() }));
            }
            if sigmas.is_empty() {
                cases.push((format!("{} nT", cfg.mag_sigma), cfg.clone()));
            }
            for s in sigmas {
                cases.push((format!("{s} nT"), ScenarioConfig { mag_sigma: s, ..cfg.clone() }));
            }
            let mut results: Vec<(String, MonteCarloResult)> = Vec::new();
            for (name, c) in cases {
                let scenario = Scenario::with_map(c, base.map.clone())?;
                results.push((name, run_monte_carlo(&scenario)?));
            }
            let refs: Vec<(String, &MonteCarloResult)> = results.iter().map(|(n, r)| (n.clone(), r)).collect();
            emit_report(&refs, &out, svg.as_deref())?;
            let summary: Vec<_> = results
                .iter()
                .map(|(n, r)| {
                    json!({
                        "case": n,
                        "n_runs": r.n_runs(),
                        "final_rms_m": r.final_rms(),
                        "n_attempts": r.n_attempts,
                        "n_fixes": r.n_fixes,
                        "n_rejected": r.n_rejected,
                        "n_no_fix": r.n_no_fix,
                    })
                })
                .collect();
            print_json(&json!(summary));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn negative_coordinates_parse() {
        let cli = Cli::try_parse_from(["magnav", "pda", "--map", "m.asc", "--lat", "-37.5", "--lon", "145", "--sigma", "0.1"])
            .unwrap();
        assert!(matches!(cli.command, Command::Pda { lat, .. } if lat == -37.5));
    }
}
