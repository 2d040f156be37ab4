//! Expectation-maximisation batch matcher.
//!
//! Each epoch's candidates are gated once against that epoch's INS prior.
//! The E-step weights candidate `i` at epoch `k` by `N(x_k; z_i, R_i)` about
//! the current track `x_k`. Those weights collapse into one synthetic
//! position measurement with information `Σ w_i R_i⁻¹`. The M-step smooths
//! the synthetic measurements along the motion model. The objective
//!
//! ```text
//! log N(x_1; prior) + Σ log N(x_{k+1} - x_k - d_k; Q_k) + Σ log mean_i N(x_k; z_i, R_i)
//! ```
//!
//! cannot decrease from one iteration to the next.

use nalgebra::{Matrix2, Vector2};

use super::{smooth_positions, Batch, MatchError, MatchParams, MatchResult, PositionObs};
use crate::map::MapGrid;
use crate::pda::{gate_candidates, gaussian_log_density, normalize_log_weights, CandidateSet, PositionFix};

/// Gate every epoch of the batch against its own prior.
pub fn gate_batch(batch: &Batch, map: &MapGrid, params: &MatchParams) -> Result<Vec<CandidateSet>, MatchError> {
    batch
        .epochs
        .iter()
        .map(|e| gate_candidates(map, &e.prior, &e.measurement, &params.gate).map_err(MatchError::from))
        .collect()
}

fn log_sum_exp(v: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = v.collect();
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + v.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// Log posterior of a track given the gated candidates.
pub fn pmht_objective(batch: &Batch, sets: &[CandidateSet], track: &[Vector2<f64>]) -> f64 {
    let first = &batch.epochs[0].prior;
    let mut total = gaussian_log_density(&(track[0] - first.mean), &first.cov);
    for (k, m) in batch.motion.iter().enumerate() {
        total += gaussian_log_density(&(track[k + 1] - track[k] - m.displacement), &m.cov);
    }
    for (set, x) in sets.iter().zip(track) {
        if set.is_empty() {
            continue;
        }
        let n = set.len() as f64;
        total += log_sum_exp(set.candidates.iter().map(|c| gaussian_log_density(&(x - c.location), &c.cov))) - n.ln();
    }
    total
}

/// Association weights about `x`.
fn weights(set: &CandidateSet, x: &Vector2<f64>) -> Vec<f64> {
    let mut w: Vec<f64> = set.candidates.iter().map(|c| gaussian_log_density(&(x - c.location), &c.cov)).collect();
    normalize_log_weights(&mut w);
    w
}

/// Information-weighted synthetic measurement, optionally with the
/// candidate spread added to its covariance.
fn synthetic(set: &CandidateSet, x: &Vector2<f64>, with_spread: bool) -> Option<PositionObs> {
    if set.is_empty() {
        return None;
    }
    let w = weights(set, x);
    let mut info = Matrix2::zeros();
    let mut info_mean = Vector2::zeros();
    for (c, wi) in set.candidates.iter().zip(&w) {
        let inv = c.cov.try_inverse()?;
        info += inv * *wi;
        info_mean += inv * c.location * *wi;
    }
    let cov = info.try_inverse()?;
    let mean = cov * info_mean;
    let cov = if with_spread {
        set.candidates.iter().zip(&w).fold(cov, |acc, (c, wi)| {
            let d = c.location - mean;
            acc + d * d.transpose() * *wi
        })
    } else {
        cov
    };
    Some(PositionObs { mean, cov: 0.5 * (cov + cov.transpose()) })
}

/// PMHT map matching. `Ok(None)` when every epoch gates empty.
pub fn pmht_mm(batch: &Batch, map: &MapGrid, params: &MatchParams) -> Result<Option<MatchResult>, MatchError> {
    if params.max_iterations == 0 || !(params.tolerance >= 0.0) {
        return Err(MatchError::InvalidBatch("max_iterations must be ≥ 1 and tolerance ≥ 0".into()));
    }
    let sets = gate_batch(batch, map, params)?;
    if sets.iter().all(|s| s.is_empty()) {
        return Ok(None);
    }
    let first = &batch.epochs[0].prior;
    let em = |track: &[Vector2<f64>]| {
        let obs: Vec<_> = sets.iter().zip(track).map(|(s, x)| synthetic(s, x, false)).collect();
        smooth_positions(first, &batch.motion, &obs).0
    };
    let moved = |a: &[Vector2<f64>], b: &[Vector2<f64>]| a.iter().zip(b).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
    let mut track: Vec<Vector2<f64>> = batch.epochs.iter().map(|e| e.prior.mean).collect();
    let mut objective = vec![pmht_objective(batch, &sets, &track)];
    let mut converged = false;
    let mut iterations = 0;
    // Squared extrapolation between pairs of EM steps, kept only when it
    // beats the plain second step.
    while iterations < params.max_iterations {
        iterations += 1;
        let x1 = em(&track);
        let step = moved(&x1, &track);
        if step < params.tolerance || iterations == params.max_iterations {
            converged = step < params.tolerance;
            track = x1;
            objective.push(pmht_objective(batch, &sets, &track));
            break;
        }
        iterations += 1;
        let x2 = em(&x1);
        let step = moved(&x2, &x1);
        let f2 = pmht_objective(batch, &sets, &x2);
        if step < params.tolerance || iterations == params.max_iterations {
            converged = step < params.tolerance;
            track = x2;
            objective.push(f2);
            break;
        }
        let r: Vec<_> = x1.iter().zip(&track).map(|(a, b)| a - b).collect();
        let v: Vec<_> = x2.iter().zip(&x1).zip(&r).map(|((a, b), r)| a - b - r).collect();
        let norm = |u: &[Vector2<f64>]| u.iter().map(|x| x.norm_squared()).sum::<f64>().sqrt();
        let alpha = -(norm(&r) / norm(&v).max(f64::MIN_POSITIVE)).max(1.0);
        let jump: Vec<_> = track.iter().zip(&r).zip(&v).map(|((x, r), v)| x - 2.0 * alpha * r + alpha * alpha * v).collect();
        iterations += 1;
        let x3 = em(&jump);
        let f3 = pmht_objective(batch, &sets, &x3);
        let (next, f, step) = if f3 >= f2 { let d = moved(&x3, &jump); (x3, f3, d) } else { (x2, f2, f64::INFINITY) };
        track = next;
        objective.push(f);
        if step < params.tolerance {
            converged = true;
            break;
        }
    }
    let obs: Vec<_> = sets.iter().zip(&track).map(|(s, x)| synthetic(s, x, true)).collect();
    let (_, covs) = smooth_positions(first, &batch.motion, &obs);
    let last = batch.len() - 1;
    let fix = PositionFix {
        mean: track[last],
        cov: covs[last],
        time: batch.epochs[last].measurement.time,
        n_candidates: sets.iter().map(|s| s.len()).sum(),
        mfv_weight: None,
    };
    Ok(Some(MatchResult { fix, smoothed_track: track, iterations, converged, objective }))
}
