//! Acceptance criteria, one PASS/FAIL line each.
//!
//! `cargo test --test acceptance` runs criteria 1 to 8. Pass criterion
//! numbers after `--` to run a subset. Criterion 9 needs a real TMI grid:
//! set `MAGNAV_REAL_MAP` to its path (and optionally `MAGNAV_REAL_MAP_RUNS`).

use std::f64::consts::PI;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use nalgebra::{DMatrix, DVector, Matrix2, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use magnav::harness::{run_monte_carlo, MapSource, Scenario, ScenarioConfig};
use magnav::ins::{ErrorCov, NavState, SensorSpec, N_ERR};
use magnav::integrator::{ukf_update, ukf_update_vec, AidingMeasurement, IntegratorConfig, UkfParams, UpdateOutcome};
use magnav::map::io::{load_grid, GridFormat};
use magnav::map::synthetic::SyntheticMapSpec;
use magnav::map::MapGrid;
use magnav::matching::{pmht_mm, viterbi_decode, Batch, BatchEpoch, MatchParams};
use magnav::pda::{gate_candidates, pda_estimate, pda_weights, GateParams, MagMeasurement, PriorPosition};
use magnav::quality::{mfv, noise_resolution_sweep, SearchWindow, SweepConfig};
use magnav::GeoPosition;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300) || a == b
}

fn gauss_density(d: &Vector2<f64>, s: &Matrix2<f64>) -> f64 {
    let det = s[(0, 0)] * s[(1, 1)] - s[(0, 1)] * s[(1, 0)];
    let q = (s[(1, 1)] * d.x * d.x - (s[(0, 1)] + s[(1, 0)]) * d.x * d.y + s[(0, 0)] * d.y * d.y) / det;
    (-0.5 * q).exp() / (2.0 * PI * det.sqrt())
}

fn random_spd2(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Matrix2<f64> {
    let a = rng.random_range(lo..hi);
    let b = rng.random_range(lo..hi);
    let rho = rng.random_range(-0.8..0.8);
    Matrix2::new(a * a, rho * a * b, rho * a * b, b * b)
}

// 1. gating, weights and estimate against exhaustive evaluation
fn criterion_1() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let (mut gate_mismatch, mut value_mismatch, mut checked_sets) = (0, 0, 0);
    for inst in 0..1000 {
        let rows = rng.random_range(4..16usize);
        let cols = rng.random_range(4..16usize);
        let h = rng.random_range(20.0..100.0);
        let vals: Vec<Vec<f64>> = (0..rows).map(|_| (0..cols).map(|_| rng.random_range(0.0..30.0)).collect()).collect();
        let flat: Vec<f64> = vals.iter().flatten().copied().collect();
        let map = MapGrid::new(-38.0, 144.5, h, rows, cols, flat, -9999.0).unwrap();
        let mean = Vector2::new(rng.random_range(0.0..rows as f64 * h), rng.random_range(0.0..cols as f64 * h));
        let cov = random_spd2(&mut rng, 0.5 * h, 4.0 * h);
        let prior = PriorPosition::new(mean, cov).unwrap();
        let meas = MagMeasurement::new(rng.random_range(0.0..30.0), rng.random_range(0.05..5.0), 1.0).unwrap();
        let params = if inst % 2 == 0 {
            GateParams::exact(rng.random_range(1.0..12.0), rng.random_range(1.0..4.0))
        } else {
            GateParams {
                gamma: rng.random_range(1.0..12.0),
                kappa: rng.random_range(1.0..4.0),
                quantization: rng.random_range(0.0..1.0),
                map_sigma: rng.random_range(0.0..2.0),
            }
        };
        let set = gate_candidates(&map, &prior, &meas, &params).unwrap();

        // exhaustive scan of every cell against both inequalities
        let inv = cov.try_inverse().unwrap();
        let tr = cov[(0, 0)] + cov[(1, 1)];
        let det = cov.determinant();
        let lam_max = 0.5 * tr + (0.25 * tr * tr - det).sqrt();
        let value_sigma = (meas.sigma * meas.sigma + params.map_sigma * params.map_sigma).sqrt();
        let mut expected = Vec::new();
        for r in 0..rows {
            for c in 0..cols {
                let z = Vector2::new((r as f64 + 0.5) * h, (c as f64 + 0.5) * h);
                let d = z - mean;
                if (d.transpose() * inv * d)[0] > params.gamma {
                    continue;
                }
                let diff = |lo: Option<f64>, hi: Option<f64>, mid: f64| match (lo, hi) {
                    (Some(a), Some(b)) => (b - a) / (2.0 * h),
                    (None, Some(b)) => (b - mid) / h,
                    (Some(a), None) => (mid - a) / h,
                    (None, None) => 0.0,
                };
                let v = vals[r][c];
                let gn = diff(r.checked_sub(1).map(|i| vals[i][c]), vals.get(r + 1).map(|row| row[c]), v);
                let ge = diff(c.checked_sub(1).map(|j| vals[r][j]), vals[r].get(c + 1).copied(), v);
                let slope = (gn * gn + ge * ge).sqrt();
                let spread = params.quantization * slope * h;
                let tol = params.kappa * (value_sigma * value_sigma + spread * spread).sqrt();
                if (meas.value - v).abs() <= tol {
                    let lo = 0.25 * h * h;
                    let hi = lo.max(params.gamma * lam_max);
                    let var = if slope > 0.0 { value_sigma * value_sigma / (slope * slope) } else { f64::INFINITY };
                    expected.push(((r, c), z, var.clamp(lo, hi)));
                }
            }
        }
        let got: Vec<_> = set.candidates.iter().map(|c| c.cell).collect();
        let want: Vec<_> = expected.iter().map(|e| e.0).collect();
        if got != want {
            gate_mismatch += 1;
            continue;
        }
        if set.is_empty() {
            continue;
        }
        checked_sets += 1;
        let cov_ok = set.candidates.iter().zip(&expected).all(|(c, e)| {
            rel_close(c.cov[(0, 0)], e.2, 1e-9) && rel_close(c.cov[(1, 1)], e.2, 1e-9) && c.cov[(0, 1)] == 0.0
        });

        // brute-force weights and weighted moments
        let dens: Vec<f64> =
            expected.iter().map(|e| gauss_density(&(e.1 - mean), &(Matrix2::identity() * e.2))).collect();
        let total: f64 = dens.iter().sum();
        let weighted = pda_weights(set, &prior).unwrap();
        let fix = pda_estimate(&weighted).unwrap();
        let mut ok = cov_ok;
        if total > 1e-250 {
            let w: Vec<f64> = dens.iter().map(|d| d / total).collect();
            ok &= weighted.candidates.iter().zip(&w).all(|(c, w)| rel_close(c.weight, *w, 1e-9) || (c.weight - w).abs() < 1e-15);
            let mut zbar = Vector2::zeros();
            for (e, wi) in expected.iter().zip(&w) {
                zbar += e.1 * *wi;
            }
            let mut rbar = Matrix2::zeros();
            for (e, wi) in expected.iter().zip(&w) {
                let d = e.1 - zbar;
                rbar += (Matrix2::identity() * e.2 + d * d.transpose()) * *wi;
            }
            let scale = zbar.norm().max(1.0);
            ok &= (fix.mean - zbar).norm() <= 1e-9 * scale;
            ok &= (fix.cov - rbar).norm() <= 1e-9 * rbar.norm();
        }
        let wsum: f64 = weighted.candidates.iter().map(|c| c.weight).sum();
        ok &= (wsum - 1.0).abs() <= 1e-9;
        if !ok {
            value_mismatch += 1;
        }
    }
    outcome(
        gate_mismatch == 0 && value_mismatch == 0 && checked_sets >= 200,
        format!("1000 instances, {checked_sets} non-empty; gate mismatches {gate_mismatch}, weight/estimate mismatches {value_mismatch}"),
    )
}

// 2. Viterbi against enumeration of every path
fn criterion_2() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut mismatches = 0;
    let mut paths = 0u64;
    for _ in 0..200 {
        let epochs = rng.random_range(1..=6usize);
        let sizes: Vec<usize> = (0..epochs).map(|_| rng.random_range(1..=5usize)).collect();
        let em: Vec<Vec<f64>> = sizes.iter().map(|n| (0..*n).map(|_| rng.random_range(-8.0..0.0)).collect()).collect();
        let init: Vec<f64> = (0..sizes[0]).map(|_| rng.random_range(-8.0..0.0)).collect();
        let table: Vec<Vec<Vec<f64>>> = (0..epochs - 1)
            .map(|k| (0..sizes[k]).map(|_| (0..sizes[k + 1]).map(|_| rng.random_range(-8.0..0.0)).collect()).collect())
            .collect();
        let tr = |k: usize, i: usize, j: usize| table[k][i][j];
        let decoded = viterbi_decode(&init, &em, tr).unwrap();
        let total: usize = sizes.iter().product();
        let mut best = f64::NEG_INFINITY;
        for code in 0..total {
            let mut rest = code;
            let path: Vec<usize> = sizes
                .iter()
                .map(|n| {
                    let i = rest % n;
                    rest /= n;
                    i
                })
                .collect();
            let mut s = init[path[0]] + em[0][path[0]];
            for k in 1..epochs {
                s = s + tr(k - 1, path[k - 1], path[k]) + em[k][path[k]];
            }
            best = best.max(s);
            paths += 1;
        }
        if decoded.score != best {
            mismatches += 1;
        }
    }
    outcome(mismatches == 0, format!("200 trellises, {paths} paths enumerated, {mismatches} score mismatches"))
}

fn random_batch(rng: &mut ChaCha8Rng) -> (MapGrid, Batch) {
    let spec = SyntheticMapSpec {
        n_rows: 80,
        n_cols: 80,
        cell_size: 50.0,
        correlation_length: rng.random_range(300.0..900.0),
        octaves: rng.random_range(1..4),
        amplitude: rng.random_range(20.0..100.0),
        seed: rng.random(),
        ..Default::default()
    };
    let map = spec.generate().unwrap();
    let m = rng.random_range(5..=20usize);
    let speed = rng.random_range(5.0..12.0);
    let heading = rng.random_range(0.0..2.0 * PI);
    let step = Vector2::new(heading.cos(), heading.sin()) * speed * 10.0;
    let centre = Vector2::repeat(2000.0);
    let start = centre - step * (m as f64 / 2.0);
    let offset = Vector2::new(rng.random_range(-150.0..150.0), rng.random_range(-150.0..150.0));
    let prior_std = rng.random_range(80.0..200.0);
    let sigma = rng.random_range(0.1..5.0);
    let epochs = (0..m)
        .map(|k| {
            let truth = start + step * k as f64;
            let jitter = Vector2::new(rng.random_range(-10.0..10.0), rng.random_range(-10.0..10.0));
            let value = map.sample(&truth).unwrap() + sigma * rng.random_range(-1.0..1.0);
            BatchEpoch {
                measurement: MagMeasurement::new(value, sigma, 10.0 * k as f64).unwrap(),
                prior: PriorPosition::isotropic(truth + offset + jitter, prior_std).unwrap(),
            }
        })
        .collect();
    let vel_var = rng.random_range(0.01..1.0);
    let batch = Batch::from_priors(epochs, &(Matrix2::identity() * vel_var), map.cell_size).unwrap();
    (map, batch)
}

// 3. PMHT objective never decreases; iterations converge
fn criterion_3() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let (mut decreases, mut converged, mut with_fix) = (0, 0, 0);
    for _ in 0..100 {
        let (map, batch) = random_batch(&mut rng);
        let Some(res) = pmht_mm(&batch, &map, &MatchParams::default()).unwrap() else { continue };
        with_fix += 1;
        if res.objective.windows(2).any(|w| w[1] < w[0] - 1e-9 * w[0].abs().max(1.0)) {
            decreases += 1;
        }
        if res.converged && res.iterations <= 20 {
            converged += 1;
        }
    }
    let rate = converged as f64 / with_fix.max(1) as f64;
    outcome(
        decreases == 0 && with_fix >= 95 && rate >= 0.95,
        format!("{with_fix}/100 batches matched; objective decreases {decreases}; converged within 20 iterations {:.0}%", 100.0 * rate),
    )
}

// 4. noise and resolution ordering, low-noise plateau
fn criterion_4() -> Outcome {
    let map = SyntheticMapSpec {
        amplitude: 5.0,
        correlation_length: 4000.0,
        octaves: 6,
        persistence: 0.6,
        seed: 1,
        ..Default::default()
    }
    .generate()
    .unwrap();
    let sigmas = [1e-3, 2e-3, 5e-3, 1e-2, 2e-2, 5e-2, 0.1, 0.2, 0.5, 1.0];
    let factors = [1usize, 5, 10];
    let res = noise_resolution_sweep(&map, &sigmas, &factors, &SweepConfig::default()).unwrap();
    let ns = sigmas.len();
    let cell = |f: usize, s: usize| &res[f * ns + s];
    let mut worst_inversion = 0.0f64;
    let mut order_ok = true;
    let mut plateau = Vec::new();
    for f in 0..factors.len() {
        for i in 0..ns {
            for j in i + 1..ns {
                let (lo, hi) = (cell(f, i), cell(f, j));
                let std = lo.std_error.max(hi.std_error);
                worst_inversion = worst_inversion.max((lo.mean_error - hi.mean_error) / std);
            }
        }
        let decade_low = cell(f, 0).mean_error;
        let decade_high = cell(f, 3).mean_error;
        plateau.push((decade_low - decade_high).abs() / decade_high);
    }
    for s in 0..ns {
        order_ok &= cell(0, s).mean_error <= cell(1, s).mean_error && cell(1, s).mean_error <= cell(2, s).mean_error;
    }
    let plateau_max = plateau.iter().copied().fold(0.0, f64::max);
    let pass = worst_inversion <= 1.0 && order_ok && plateau_max < 0.10;
    let errs = |f: usize| (0..ns).map(|s| format!("{:.0}", cell(f, s).mean_error)).collect::<Vec<_>>().join("/");
    outcome(
        pass,
        format!(
            "(a) worst inversion {worst_inversion:.3} std; (b) factor ordering {}; (c) lowest-decade change {:.1}%; mean error m, f1 {} f5 {} f10 {}",
            if order_ok { "holds" } else { "violated" },
            100.0 * plateau_max,
            errs(0),
            errs(1),
            errs(2)
        ),
    )
}

/// Period minimising the pooled residual of `c0 + c1 t + c2 t² + a cos ωt + b sin ωt`
/// fitted separately to every series.
fn pooled_period(t: &[f64], series: &[Vec<f64>], lo_min: f64, hi_min: f64) -> f64 {
    let mut best = (f64::INFINITY, 0.0);
    let mut p = lo_min;
    while p <= hi_min {
        let w = 2.0 * PI / (p * 60.0);
        let a = DMatrix::from_fn(t.len(), 5, |i, j| {
            let x = t[i] / 3600.0;
            match j {
                0 => 1.0,
                1 => x,
                2 => x * x,
                3 => (w * t[i]).cos(),
                _ => (w * t[i]).sin(),
            }
        });
        let svd = a.clone().svd(true, true);
        let ss: f64 = series
            .iter()
            .map(|y| {
                let y = DVector::from_column_slice(y);
                (&a * svd.solve(&y, 1e-12).unwrap() - &y).norm_squared()
            })
            .sum();
        if ss < best.0 {
            best = (ss, p);
        }
        p += 0.1;
    }
    best.1
}

// 5. Schuler oscillation of the unaided INS
fn criterion_5() -> Outcome {
    let cfg = ScenarioConfig {
        map: MapSource::Corridor {
            margin_m: 5000.0,
            spec: SyntheticMapSpec { cell_size: 2000.0, octaves: 1, correlation_length: 20000.0, ..Default::default() },
        },
        duration: Some(5.0 * 3600.0),
        sensors: SensorSpec::precision(),
        aiding: false,
        n_runs: 40,
        seed: 1,
        ..Default::default()
    };
    let scenario = Scenario::new(cfg).unwrap();
    let mc = run_monte_carlo(&scenario).unwrap();
    let t: Vec<f64> = mc.runs[0].samples.iter().step_by(10).map(|e| e.t).collect();
    let mut series = Vec::new();
    for run in &mc.runs {
        let (mut north, mut east) = (Vec::new(), Vec::new());
        for e in run.samples.iter().step_by(10) {
            let frame = magnav::LocalFrame::new(e.truth_lat, e.truth_lon);
            let d = frame.to_local(&GeoPosition::new(e.est_lat, e.est_lon, 0.0));
            north.push(d.x);
            east.push(d.y);
        }
        series.push(north);
        series.push(east);
    }
    let period = pooled_period(&t, &series, 60.0, 110.0);
    let expected = 84.4;
    let (at_1h, at_3_6h) = (mc.rms[3600], mc.rms[12960]);
    outcome(
        (period - expected).abs() <= 0.05 * expected && at_3_6h > at_1h,
        format!("measured period {period:.1} min (84.4 +/- 5%); RMS at 1 h {at_1h:.2} m, at 3.6 h {at_3_6h:.2} m"),
    )
}

// 6. aided against unaided, two noise levels, fix rate
fn criterion_6() -> Outcome {
    let base = ScenarioConfig {
        map: MapSource::Corridor {
            margin_m: 6000.0,
            spec: SyntheticMapSpec { amplitude: 150.0, correlation_length: 3000.0, octaves: 4, persistence: 0.5, ..Default::default() },
        },
        duration: Some(3600.0),
        sensors: SensorSpec::navigation(),
        batch_length: 30,
        n_runs: 50,
        seed: 1,
        ..Default::default()
    };
    let map = base.load_map().unwrap();
    let (sigma_low, sigma_high) = (0.5, 5.0);
    let run = |aiding: bool, mag_sigma: f64| {
        let s = Scenario::with_map(ScenarioConfig { aiding, mag_sigma, ..base.clone() }, map.clone()).unwrap();
        run_monte_carlo(&s).unwrap()
    };
    let unaided = run(false, sigma_low);
    let low = run(true, sigma_low);
    let high = run(true, sigma_high);
    let ratio = low.final_rms() / unaided.final_rms();
    let fix_rate = |r: &magnav::harness::MonteCarloResult| r.n_fixes as f64 / r.n_attempts.max(1) as f64;
    let pass = ratio < 0.25 && high.final_rms() >= low.final_rms() && fix_rate(&low) == 1.0 && fix_rate(&high) == 1.0;
    outcome(
        pass,
        format!(
            "50 runs, 1 h: unaided {:.0} m, aided {:.0} m at {sigma_low} nT ({:.1}%), {:.0} m at {sigma_high} nT; fixes {}/{} and {}/{}",
            unaided.final_rms(),
            low.final_rms(),
            100.0 * ratio,
            high.final_rms(),
            low.n_fixes,
            low.n_attempts,
            high.n_fixes,
            high.n_attempts
        ),
    )
}

fn random_spd(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    let scales = DVector::from_fn(n, |_, _| 10f64.powf(rng.random_range(-2.0..2.0)));
    let d = DMatrix::from_diagonal(&scales);
    &d * (&a * a.transpose() + DMatrix::identity(n, n) * 0.1) * &d
}

// 7. unscented update equals the Kalman update on linear models
fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = rng.random_range(2..=13usize);
        let m = rng.random_range(1..=3usize).min(n);
        let mean = DVector::from_fn(n, |_, _| rng.random_range(-10.0..10.0));
        let cov = random_spd(&mut rng, n);
        let hm = DMatrix::from_fn(m, n, |_, _| rng.random_range(-2.0..2.0));
        let r = random_spd(&mut rng, m);
        let y = &hm * &mean + DVector::from_fn(m, |_, _| rng.random_range(-3.0..3.0));
        let post = ukf_update_vec(&mean, &cov, &y, &r, |x| &hm * x, &UkfParams::default()).unwrap();
        let s = &hm * &cov * hm.transpose() + &r;
        let gain = s.cholesky().unwrap().solve(&(&hm * &cov)).transpose();
        let kf_mean = &mean + &gain * (&y - &hm * &mean);
        let ikh = DMatrix::identity(n, n) - &gain * &hm;
        let kf_cov = &ikh * &cov * ikh.transpose() + &gain * &r * gain.transpose();
        worst = worst.max((&post.mean - &kf_mean).norm() / kf_mean.norm().max(1e-12));
        worst = worst.max((&post.cov - &kf_cov).norm() / kf_cov.norm());
    }

    // full navigation-state updates: position covariance only shrinks
    let mut psd_violations = 0;
    let mut nav_worst = 0.0f64;
    let mut accepted = 0;
    for _ in 0..1000 {
        let cov = random_spd(&mut rng, N_ERR);
        let cov = ErrorCov::from_iterator(cov.iter().copied());
        let state = NavState {
            position: GeoPosition::new(rng.random_range(-60.0..60.0), rng.random_range(-180.0..180.0), 100.0),
            velocity: Vector3::new(rng.random_range(-30.0..30.0), rng.random_range(-30.0..30.0), 0.0),
            attitude: Vector3::new(0.0, 0.0, rng.random_range(-PI..PI)),
            accel_bias: Vector3::zeros(),
            gyro_bias: Vector3::zeros(),
            cov,
            time: 300.0,
        };
        let p = state.position_cov();
        let shift = Vector2::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)) * p.trace().sqrt();
        let r = random_spd2(&mut rng, 0.05, 30.0);
        let frame = magnav::LocalFrame::new(state.position.lat, state.position.lon);
        let fix = AidingMeasurement { position: frame.from_local(&shift, 100.0), cov: r, time: 300.0 };
        let config = IntegratorConfig { reject_threshold: f64::INFINITY, ..Default::default() };
        let UpdateOutcome::Accepted { state: post, .. } = ukf_update(&state, &fix, &config).unwrap() else { continue };
        accepted += 1;
        let q = post.position_cov();
        let diff = p - q;
        if diff.symmetric_eigenvalues().min() < -1e-9 * p.norm() {
            psd_violations += 1;
        }
        let kf = p - p * (p + r).try_inverse().unwrap() * p;
        nav_worst = nav_worst.max((q - kf).norm() / kf.norm());
    }
    outcome(
        worst <= 1e-8 && nav_worst <= 1e-8 && psd_violations == 0 && accepted == 1000,
        format!(
            "1000 random linear models, worst relative gap {worst:.1e}; 1000 navigation updates, gap {nav_worst:.1e}, PSD-order violations {psd_violations}"
        ),
    )
}

// 8. MFV invariances and brute force
fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let (mut shift_bad, mut scale_bad, mut brute_bad) = (0, 0, 0);
    for _ in 0..50 {
        let h = rng.random_range(10.0..100.0);
        let vals: Vec<f64> = (0..100).map(|_| rng.random_range(-200.0..200.0)).collect();
        let map = MapGrid::new(-38.0, 144.5, h, 10, 10, vals.clone(), -9999.0).unwrap();
        let radius = rng.random_range(1..=4usize);
        let window = SearchWindow::Square { radius };
        let base = mfv(&map, &window, false).unwrap();

        let offset = rng.random_range(-1e4..1e4);
        let shifted = map.with_values(vals.iter().map(|v| v + offset).collect(), -9999.0).unwrap();
        let rs = mfv(&shifted, &window, false).unwrap();
        let c = rng.random_range(-20.0..20.0);
        let scaled = map.with_values(vals.iter().map(|v| v * c).collect(), -9999.0).unwrap();
        let rc = mfv(&scaled, &window, false).unwrap();
        for ((a, b), s) in base.grid.values().iter().zip(rs.grid.values()).zip(rc.grid.values()) {
            if (a - b).abs() > 1e-9 * a.abs().max(1.0) + 1e-14 * offset * offset {
                shift_bad += 1;
            }
            if (a * c * c - s).abs() > 1e-9 * s.abs().max(1.0) {
                scale_bad += 1;
            }
        }
        for r in 0..10usize {
            for col in 0..10usize {
                let centre = vals[r * 10 + col];
                let (mut sum, mut n) = (0.0, 0.0);
                for rr in 0..10usize {
                    for cc in 0..10usize {
                        let near = rr.abs_diff(r) <= radius && cc.abs_diff(col) <= radius;
                        if near && (rr, cc) != (r, col) {
                            sum += (centre - vals[rr * 10 + cc]).powi(2);
                            n += 1.0;
                        }
                    }
                }
                let want = sum / n;
                if (base.get(r, col).unwrap() - want).abs() > 1e-12 * want.max(1.0) {
                    brute_bad += 1;
                }
            }
        }
    }
    outcome(
        shift_bad == 0 && scale_bad == 0 && brute_bad == 0,
        format!("50 random 10x10 grids: offset mismatches {shift_bad}, c^2 scaling mismatches {scale_bad}, brute-force mismatches {brute_bad}"),
    )
}

// 9. real map, opt-in
fn criterion_9(path: PathBuf) -> Outcome {
    let map = match load_grid(&path, GridFormat::from_path(&path)) {
        Ok(m) => m,
        Err(e) => return outcome(false, format!("cannot load {}: {e}", path.display())),
    };
    let sweep = noise_resolution_sweep(&map, &[0.01], &[1], &SweepConfig::default()).unwrap();
    let pda_mean = sweep[0].mean_error;
    let runs = std::env::var("MAGNAV_REAL_MAP_RUNS").ok().and_then(|s| s.parse().ok()).unwrap_or(100);
    let base = ScenarioConfig { map: MapSource::File { path: path.clone() }, n_runs: runs, ..Default::default() };
    let mission = |mag_sigma: f64| -> Result<f64, String> {
        let s = Scenario::with_map(ScenarioConfig { mag_sigma, ..base.clone() }, map.clone()).map_err(|e| e.to_string())?;
        Ok(run_monte_carlo(&s).map_err(|e| e.to_string())?.final_rms())
    };
    match (mission(0.015), mission(0.15)) {
        (Ok(low), Ok(high)) => {
            let ratio = high / low;
            outcome(
                (75.0..=300.0).contains(&pda_mean) && (1.3..=3.0).contains(&ratio),
                format!("PDA mean error {pda_mean:.0} m at 0.01 nT; mission RMS {low:.0} m vs {high:.0} m, ratio {ratio:.2}"),
            )
        }
        (Err(e), _) | (_, Err(e)) => outcome(false, format!("PDA mean error {pda_mean:.0} m; mission failed: {e}")),
    }
}

fn main() -> ExitCode {
    let wanted: Vec<u32> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let criteria: [(u32, &str, Duration, fn() -> Outcome); 8] = [
        (1, "PDA oracle equivalence", Duration::from_secs(10), criterion_1),
        (2, "Viterbi oracle equivalence", Duration::from_secs(10), criterion_2),
        (3, "PMHT EM monotonicity", Duration::from_secs(600), criterion_3),
        (4, "noise/resolution ordering", Duration::from_secs(300), criterion_4),
        (5, "Schuler oscillation", Duration::from_secs(60), criterion_5),
        (6, "end-to-end aiding", Duration::from_secs(600), criterion_6),
        (7, "integrator correctness", Duration::from_secs(10), criterion_7),
        (8, "MFV properties", Duration::from_secs(5), criterion_8),
    ];
    let mut failed = 0;
    for (id, name, budget, check) in criteria {
        if !wanted.is_empty() && !wanted.contains(&id) {
            continue;
        }
        let start = Instant::now();
        let o = check();
        let elapsed = start.elapsed();
        let pass = o.pass && elapsed <= budget;
        failed += usize::from(!pass);
        println!(
            "criterion {id} ({name}): {} in {:.1} s (budget {} s); {}",
            if pass { "PASS" } else { "FAIL" },
            elapsed.as_secs_f64(),
            budget.as_secs(),
            o.detail
        );
    }
    if wanted.is_empty() || wanted.contains(&9) {
        match std::env::var_os("MAGNAV_REAL_MAP") {
            Some(p) => {
                let start = Instant::now();
                let o = criterion_9(PathBuf::from(p));
                failed += usize::from(!o.pass);
                println!(
                    "criterion 9 (real-map reproduction): {} in {:.1} s; {}",
                    if o.pass { "PASS" } else { "FAIL" },
                    start.elapsed().as_secs_f64(),
                    o.detail
                );
            }
            None => println!("criterion 9 (real-map reproduction): SKIPPED, set MAGNAV_REAL_MAP to a TMI grid to run it"),
        }
    }
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
