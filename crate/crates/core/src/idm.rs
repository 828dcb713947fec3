//! Intelligent Driver Model baseline and its calibration against recorded
//! spacing.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{integrate, A_MAX, A_MIN};
use crate::trajdata::{CarFollowingEvent, Dataset};

#[derive(Debug, Error, PartialEq)]
pub enum IdmError {
    #[error("gap must be positive, got {0}")]
    NonPositiveGap(f64),
    #[error("invalid IDM parameters: {0}")]
    InvalidParams(String),
    #[error("calibration needs at least one event")]
    NoEvents,
    #[error("every candidate collided on every event")]
    AllCandidatesCollide,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IdmParams {
    /// Desired speed, m/s.
    pub v0: f64,
    /// Desired time headway, s.
    #[serde(rename = "T")]
    pub time_headway: f64,
    pub a_max: f64,
    /// Comfortable deceleration (positive), m/s².
    pub b: f64,
    /// Jam distance, m.
    pub s0: f64,
    pub delta: f64,
}

impl Default for IdmParams {
    fn default() -> Self {
        Self { v0: 30.0, time_headway: 1.5, a_max: 1.0, b: 1.5, s0: 2.0, delta: 4.0 }
    }
}

impl IdmParams {
    pub fn validate(&self) -> Result<(), IdmError> {
        let all = [self.v0, self.time_headway, self.a_max, self.b, self.s0, self.delta];
        if all.iter().all(|v| v.is_finite() && *v > 0.0) {
            Ok(())
        } else {
            Err(IdmError::InvalidParams(format!("{self:?}")))
        }
    }

    fn get(&self, i: usize) -> f64 {
        [self.v0, self.time_headway, self.a_max, self.b, self.s0][i]
    }

    fn with(mut self, i: usize, v: f64) -> Self {
        match i {
            0 => self.v0 = v,
            1 => self.time_headway = v,
            2 => self.a_max = v,
            3 => self.b = v,
            _ => self.s0 = v,
        }
        self
    }
}

/// Desired gap `s* = s0 + max(0, v T + v (-rel_v) / (2 sqrt(a b)))`.
pub fn desired_gap(p: &IdmParams, v: f64, rel_v: f64) -> f64 {
    let dynamic = v * p.time_headway + v * (-rel_v) / (2.0 * (p.a_max * p.b).sqrt());
    p.s0 + dynamic.max(0.0)
}

/// IDM acceleration; `rel_v` is lead minus ego speed.
pub fn idm_accel(p: &IdmParams, gap: f64, v: f64, rel_v: f64) -> Result<f64, IdmError> {
    if !(gap > 0.0) {
        return Err(IdmError::NonPositiveGap(gap));
    }
    let s_star = desired_gap(p, v, rel_v);
    Ok(p.a_max * (1.0 - (v / p.v0).powf(p.delta) - (s_star / gap).powi(2)))
}

/// Simulated ego gaps under IDM control, plus whether it collided.
/// After a collision the remaining gaps are reported as zero.
pub fn simulate_gaps(p: &IdmParams, event: &CarFollowingEvent) -> (Vec<f64>, bool) {
    let n = event.frames.len();
    let mut gaps = Vec::with_capacity(n);
    let mut gap = event.gap(0);
    let mut v = event.frames[0].ego_v;
    gaps.push(gap);
    for k in 0..n - 1 {
        let lead_v = event.frames[k].lead_v;
        let a = match idm_accel(p, gap, v, lead_v - v) {
            Ok(a) => a.clamp(A_MIN, A_MAX),
            Err(_) => break,
        };
        let (dx, v_next) = integrate(v, a, event.dt);
        gap += (event.frames[k + 1].lead_x - event.frames[k].lead_x) - dx;
        v = v_next;
        if gap <= 0.0 {
            gaps.resize(n, 0.0);
            return (gaps, true);
        }
        gaps.push(gap);
    }
    (gaps, false)
}

/// Pooled root-mean-square spacing error over all frames, and how many
/// events collided.
pub fn spacing_rmse(p: &IdmParams, events: &Dataset) -> (f64, usize) {
    let mut sq = 0.0;
    let mut count = 0usize;
    let mut collisions = 0;
    for e in &events.events {
        let (gaps, collided) = simulate_gaps(p, e);
        collisions += collided as usize;
        for (k, g) in gaps.iter().enumerate() {
            let d = g - e.gap(k);
            sq += d * d;
            count += 1;
        }
    }
    ((sq / count.max(1) as f64).sqrt(), collisions)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParamBounds {
    pub v0: (f64, f64),
    #[serde(rename = "T")]
    pub time_headway: (f64, f64),
    pub a_max: (f64, f64),
    pub b: (f64, f64),
    pub s0: (f64, f64),
}

impl Default for ParamBounds {
    fn default() -> Self {
        Self { v0: (20.0, 40.0), time_headway: (0.8, 3.0), a_max: (0.5, 3.0), b: (0.5, 4.0), s0: (1.0, 5.0) }
    }
}

impl ParamBounds {
    fn get(&self, i: usize) -> (f64, f64) {
        [self.v0, self.time_headway, self.a_max, self.b, self.s0][i]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationConfig {
    /// Random-search candidates.
    pub iterations: usize,
    /// Coordinate-descent sweeps after the random search.
    pub refine_rounds: usize,
    pub seed: u64,
    pub bounds: ParamBounds,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self { iterations: 200, refine_rounds: 150, seed: 0, bounds: ParamBounds::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Calibration {
    pub params: IdmParams,
    pub rmse: f64,
    /// Objective after the random search and after every accepted move.
    pub history: Vec<f64>,
}

/// Objective: RMSE, with collided events charging their recorded gap for
/// every frame after impact. Infeasible if every event collides.
fn objective(p: &IdmParams, events: &Dataset) -> Option<f64> {
    let (rmse, collisions) = spacing_rmse(p, events);
    (collisions < events.len()).then_some(rmse)
}

pub fn calibrate(events: &Dataset, cfg: &CalibrationConfig) -> Result<IdmParams, IdmError> {
    calibrate_detailed(events, cfg).map(|c| c.params)
}

/// Random search over the bounds refined by coordinate descent with step
/// halving; deterministic per seed.
pub fn calibrate_detailed(events: &Dataset, cfg: &CalibrationConfig) -> Result<Calibration, IdmError> {
    if events.is_empty() {
        return Err(IdmError::NoEvents);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let candidates: Vec<IdmParams> = (0..cfg.iterations.max(1))
        .map(|_| {
            let mut p = IdmParams::default();
            for i in 0..5 {
                let (lo, hi) = cfg.bounds.get(i);
                p = p.with(i, rng.random_range(lo..=hi));
            }
            p
        })
        .collect();
    let scored: Vec<Option<f64>> = candidates.par_iter().map(|p| objective(p, events)).collect();
    let (mut best, mut best_cost) = candidates
        .iter()
        .zip(&scored)
        .filter_map(|(p, c)| c.map(|c| (*p, c)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .ok_or(IdmError::AllCandidatesCollide)?;

    let mut history = vec![best_cost];
    let mut steps: Vec<f64> = (0..5).map(|i| {
        let (lo, hi) = cfg.bounds.get(i);
        0.1 * (hi - lo)
    }).collect();
    for _ in 0..cfg.refine_rounds {
        let mut moved = false;
        for i in 0..5 {
            let (lo, hi) = cfg.bounds.get(i);
            let trials = [best.get(i) + steps[i], best.get(i) - steps[i]]
                .map(|v| best.with(i, v.clamp(lo, hi)));
            let costs: Vec<Option<f64>> = trials.par_iter().map(|p| objective(p, events)).collect();
            let pick = trials
                .iter()
                .zip(costs)
                .filter_map(|(p, c)| c.map(|c| (*p, c)))
                .min_by(|a, b| a.1.total_cmp(&b.1));
            match pick {
                Some((p, c)) if c < best_cost => {
                    best = p;
                    best_cost = c;
                    history.push(c);
                    moved = true;
                }
                _ => steps[i] *= 0.5,
            }
        }
        let converged = (0..5).all(|i| {
            let (lo, hi) = cfg.bounds.get(i);
            steps[i] < 1e-6 * (hi - lo)
        });
        if !moved && converged {
            break;
        }
    }
    Ok(Calibration { params: best, rmse: best_cost, history })
}
