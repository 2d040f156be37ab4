//! Maximum-likelihood cell sequence over a trellis of gated candidates.

use nalgebra::Matrix2;
use serde::Serialize;

use super::pmht::gate_batch;
use super::{Batch, MatchError, MatchParams, MatchResult};
use crate::map::MapGrid;
use crate::pda::{gaussian_log_density, PositionFix};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ViterbiPath {
    /// State index per epoch.
    pub states: Vec<usize>,
    pub score: f64,
    /// Best score of any path ending in each final state.
    pub final_scores: Vec<f64>,
}

/// Viterbi decoding with log-probabilities. `emissions[k][i]` scores state
/// `i` at epoch `k`, `transition(k, i, j)` the move from `i` at `k` to `j`
/// at `k + 1`. Ties go to the lowest state index. `None` if any epoch has
/// no states.
pub fn viterbi_decode(
    initial: &[f64],
    emissions: &[Vec<f64>],
    transition: impl Fn(usize, usize, usize) -> f64,
) -> Option<ViterbiPath> {
    if emissions.is_empty() || emissions.iter().any(|e| e.is_empty()) || initial.len() != emissions[0].len() {
        return None;
    }
    let mut score: Vec<f64> = initial.iter().zip(&emissions[0]).map(|(a, b)| a + b).collect();
    let mut back: Vec<Vec<usize>> = Vec::with_capacity(emissions.len() - 1);
    for k in 0..emissions.len() - 1 {
        let next = &emissions[k + 1];
        let mut s = Vec::with_capacity(next.len());
        let mut b = Vec::with_capacity(next.len());
        for (j, e) in next.iter().enumerate() {
            let mut best = (f64::NEG_INFINITY, 0);
            for (i, prev) in score.iter().enumerate() {
                let v = prev + transition(k, i, j);
                if v > best.0 {
                    best = (v, i);
                }
            }
            s.push(best.0 + e);
            b.push(best.1);
        }
        score = s;
        back.push(b);
    }
    let mut last = 0;
    for (j, v) in score.iter().enumerate() {
        if *v > score[last] {
            last = j;
        }
    }
    let mut states = vec![last; emissions.len()];
    for k in (0..back.len()).rev() {
        states[k] = back[k][states[k + 1]];
    }
    Some(ViterbiPath { states, score: score[last], final_scores: score })
}

/// Viterbi map matching. `Ok(None)` when some epoch gates empty.
pub fn viterbi_mm(batch: &Batch, map: &MapGrid, params: &MatchParams) -> Result<Option<MatchResult>, MatchError> {
    let sets = gate_batch(batch, map, params)?;
    if sets.iter().any(|s| s.is_empty()) {
        return Ok(None);
    }
    let first = &batch.epochs[0].prior;
    let initial: Vec<f64> =
        sets[0].candidates.iter().map(|c| gaussian_log_density(&(c.location - first.mean), &first.cov)).collect();
    let emissions: Vec<Vec<f64>> = sets
        .iter()
        .zip(&batch.epochs)
        .map(|(s, e)| {
            s.candidates
                .iter()
                .map(|c| {
                    let z = (e.measurement.value - c.map_value) / c.value_sigma;
                    -0.5 * z * z - c.value_sigma.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
                })
                .collect()
        })
        .collect();
    let transition = |k: usize, i: usize, j: usize| {
        let m = &batch.motion[k];
        let d = sets[k + 1].candidates[j].location - sets[k].candidates[i].location - m.displacement;
        gaussian_log_density(&d, &m.cov)
    };
    let Some(path) = viterbi_decode(&initial, &emissions, transition) else {
        return Ok(None);
    };
    let last = batch.len() - 1;
    let finals = &sets[last].candidates;
    let best = &finals[path.states[last]];
    let mut cov = Matrix2::zeros();
    let mut total = 0.0;
    for (c, s) in finals.iter().zip(&path.final_scores) {
        if *s >= path.score - params.near_optimal {
            let w = (s - path.score).exp();
            let d = c.location - best.location;
            cov += (c.cov + d * d.transpose()) * w;
            total += w;
        }
    }
    cov /= total;
    let fix = PositionFix {
        mean: best.location,
        cov: 0.5 * (cov + cov.transpose()),
        time: batch.epochs[last].measurement.time,
        n_candidates: sets.iter().map(|s| s.len()).sum(),
        mfv_weight: None,
    };
    let track = path.states.iter().zip(&sets).map(|(i, s)| s.candidates[*i].location).collect();
    Ok(Some(MatchResult { fix, smoothed_track: track, iterations: 1, converged: true, objective: vec![path.score] }))
}
