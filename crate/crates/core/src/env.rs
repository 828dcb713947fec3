//! Longitudinal car-following MDP: the ego vehicle chooses an acceleration while
//! the lead vehicle replays its recorded trace open-loop.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rewarddsl::{FeatureVector, RewardProgram};
use crate::trajdata::CarFollowingEvent;

/// Hardest braking the ego may command, m/s².
pub const A_MIN: f64 = -5.0;
/// Strongest acceleration the ego may command, m/s².
pub const A_MAX: f64 = 3.0;

#[derive(Debug, Error, PartialEq)]
pub enum EnvError {
    #[error("event `{event_id}`: cannot step past frame {t_index} (last frame {last})")]
    PastEnd { event_id: String, t_index: usize, last: usize },
    #[error("event `{event_id}` step {step}: reward evaluated to non-finite value {value}")]
    NonFiniteReward { event_id: String, step: usize, value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    /// Bumper-to-bumper spacing, m.
    pub gap: f64,
    pub ego_v: f64,
    pub lead_v: f64,
    /// Lead minus ego speed.
    pub rel_v: f64,
    pub prev_accel: f64,
    pub t_index: usize,
    pub ego_x: f64,
    pub lead_x: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Action {
    pub accel: f64,
}

impl Action {
    pub fn clamped(accel: f64) -> Self {
        Self { accel: accel.clamp(A_MIN, A_MAX) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    EndOfLeadTrace,
    Collision,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRollout {
    pub event_id: String,
    pub dt: f64,
    pub lead_length: f64,
    pub states: Vec<EnvState>,
    pub actions: Vec<Action>,
    pub rewards: Vec<f64>,
    pub terminated_by: Termination,
}

impl EpisodeRollout {
    pub fn undiscounted_return(&self) -> f64 {
        self.rewards.iter().sum()
    }

    pub fn discounted_return(&self, gamma: f64) -> f64 {
        self.rewards.iter().rev().fold(0.0, |acc, r| r + gamma * acc)
    }
}

/// Exact constant-acceleration integration over `dt`; if the speed would go
/// negative the vehicle stops at `t* = v / -a` and stays put.
/// Returns (displacement, next speed).
pub fn integrate(v: f64, a: f64, dt: f64) -> (f64, f64) {
    let v_next = v + a * dt;
    if v_next < 0.0 {
        // only reachable with a < 0
        let t_stop = v / -a;
        (v * t_stop + 0.5 * a * t_stop * t_stop, 0.0)
    } else {
        (v * dt + 0.5 * a * dt * dt, v_next)
    }
}

pub fn reset(event: &CarFollowingEvent) -> EnvState {
    let f = &event.frames[0];
    EnvState {
        gap: f.lead_x - event.lead_length - f.ego_x,
        ego_v: f.ego_v,
        lead_v: f.lead_v,
        rel_v: f.lead_v - f.ego_v,
        prev_accel: 0.0,
        t_index: 0,
        ego_x: f.ego_x,
        lead_x: f.lead_x,
    }
}

/// Advances one frame. Returns the next state and whether the episode is over
/// (last frame reached or gap closed).
pub fn step(
    state: &EnvState,
    action: Action,
    event: &CarFollowingEvent,
    dt: f64,
) -> Result<(EnvState, bool), EnvError> {
    let last = event.frames.len() - 1;
    if state.t_index >= last {
        return Err(EnvError::PastEnd {
            event_id: event.event_id.clone(),
            t_index: state.t_index,
            last,
        });
    }
    let a = action.accel.clamp(A_MIN, A_MAX);
    let (ego_dx, ego_v) = integrate(state.ego_v, a, dt);
    let cur = &event.frames[state.t_index];
    let nxt = &event.frames[state.t_index + 1];
    let lead_dx = nxt.lead_x - cur.lead_x;
    let gap = state.gap + (lead_dx - ego_dx);
    let next = EnvState {
        gap,
        ego_v,
        lead_v: nxt.lead_v,
        rel_v: nxt.lead_v - ego_v,
        prev_accel: a,
        t_index: state.t_index + 1,
        ego_x: state.ego_x + ego_dx,
        lead_x: nxt.lead_x,
    };
    let done = next.t_index == last || gap <= 0.0;
    Ok((next, done))
}

/// Per-step reward features for the transition `state --accel--> next`.
pub fn features(state: &EnvState, accel: f64, next: &EnvState, dt: f64) -> FeatureVector {
    FeatureVector::from_kinematics(
        next.ego_v,
        accel,
        (accel - state.prev_accel) / dt,
        next.gap,
        next.lead_v - next.ego_v,
        next.lead_v,
        next.gap <= 0.0,
    )
}

/// Anything that picks an acceleration from a state.
pub trait Controller {
    fn accel(&mut self, state: &EnvState) -> f64;
}

impl<F: FnMut(&EnvState) -> f64> Controller for F {
    fn accel(&mut self, state: &EnvState) -> f64 {
        self(state)
    }
}

/// Replays the recorded ego accelerations of an event.
pub struct RecordedController {
    accels: Vec<f64>,
}

impl RecordedController {
    pub fn new(event: &CarFollowingEvent) -> Self {
        Self { accels: event.recorded_accels() }
    }
}

impl Controller for RecordedController {
    fn accel(&mut self, state: &EnvState) -> f64 {
        self.accels.get(state.t_index).copied().unwrap_or(0.0)
    }
}

/// Runs a full episode on `event`, scoring each step with `reward`.
pub fn rollout_with<C: Controller + ?Sized>(
    controller: &mut C,
    reward: &RewardProgram,
    event: &CarFollowingEvent,
) -> Result<EpisodeRollout, EnvError> {
    let dt = event.dt;
    let mut state = reset(event);
    let cap = event.frames.len();
    let mut states = Vec::with_capacity(cap);
    let mut actions = Vec::with_capacity(cap);
    let mut rewards = Vec::with_capacity(cap);
    states.push(state);
    let mut terminated_by = Termination::EndOfLeadTrace;
    if event.frames.len() > 1 {
        loop {
            let action = Action::clamped(controller.accel(&state));
            let (next, done) = step(&state, action, event, dt)?;
            let r = reward.eval(&features(&state, action.accel, &next, dt));
            if !r.is_finite() {
                return Err(EnvError::NonFiniteReward {
                    event_id: event.event_id.clone(),
                    step: actions.len(),
                    value: r,
                });
            }
            actions.push(action);
            rewards.push(r);
            states.push(next);
            state = next;
            if done {
                if next.gap <= 0.0 {
                    terminated_by = Termination::Collision;
                }
                break;
            }
        }
    }
    Ok(EpisodeRollout {
        event_id: event.event_id.clone(),
        dt,
        lead_length: event.lead_length,
        states,
        actions,
        rewards,
        terminated_by,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rewarddsl::{parse, RewardProgram};
    use crate::trajdata::Frame;

    fn constant_lead_event(gap: f64, v: f64, n: usize, dt: f64) -> CarFollowingEvent {
        let lead_length = 4.5;
        let frames = (0..n)
            .map(|k| {
                let t = k as f64 * dt;
                Frame { t, lead_x: gap + lead_length + 5.5 + v * t, lead_v: v, ego_x: 5.5 + v * t, ego_v: v }
            })
            .collect();
        CarFollowingEvent::new("c", dt, frames, lead_length).unwrap()
    }

    #[test]
    fn reset_builds_gap() {
        let frames = vec![Frame { t: 0.0, lead_x: 30.0, lead_v: 10.0, ego_x: 5.5, ego_v: 10.0 }];
        let e = CarFollowingEvent::new("r", 0.1, frames, 4.5).unwrap();
        let s = reset(&e);
        assert_eq!(s.gap, 20.0);
        assert_eq!(s.rel_v, 0.0);
        assert_eq!(s.prev_accel, 0.0);

        let tight = vec![Frame { t: 0.0, lead_x: 10.1, lead_v: 3.0, ego_x: 5.5, ego_v: 3.0 }];
        let e = CarFollowingEvent::new("t", 0.1, tight, 4.5).unwrap();
        assert!((reset(&e).gap - 0.1).abs() < 1e-12);
    }

    #[test]
    fn constant_speed_keeps_gap() {
        let e = constant_lead_event(20.0, 10.0, 3, 0.1);
        let s = reset(&e);
        let (n, done) = step(&s, Action { accel: 0.0 }, &e, 0.1).unwrap();
        assert_eq!(n.gap, 20.0);
        assert!(!done);
    }

    #[test]
    fn accelerating_closes_gap() {
        let e = constant_lead_event(20.0, 10.0, 3, 0.1);
        let (n, _) = step(&reset(&e), Action { accel: 1.0 }, &e, 0.1).unwrap();
        assert!((n.ego_v - 10.1).abs() < 1e-12);
        assert!((n.gap - 19.995).abs() < 1e-12);
        assert_eq!(n.prev_accel, 1.0);
    }

    #[test]
    fn stopping_mid_step_uses_exact_stop_time() {
        let (dx, v) = integrate(0.05, -3.0, 0.1);
        assert_eq!(v, 0.0);
        let t_star = 1.0 / 60.0;
        let expected = 0.05 * t_star - 0.5 * 3.0 * t_star * t_star;
        assert!((dx - expected).abs() < 1e-15);
        assert!((dx - 0.05 * 0.05 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn action_is_clamped_and_past_end_errors() {
        let e = constant_lead_event(20.0, 10.0, 2, 0.1);
        let (n, done) = step(&reset(&e), Action { accel: -50.0 }, &e, 0.1).unwrap();
        assert_eq!(n.prev_accel, A_MIN);
        assert!(done);
        assert!(matches!(step(&n, Action { accel: 0.0 }, &e, 0.1), Err(EnvError::PastEnd { .. })));
    }

    #[test]
    fn collision_terminates() {
        let e = constant_lead_event(0.5, 5.0, 50, 0.1);
        let reward = RewardProgram::compile(&parse("0").unwrap());
        let mut full_throttle = |_: &EnvState| A_MAX;
        let ro = rollout_with(&mut full_throttle, &reward, &e).unwrap();
        assert_eq!(ro.terminated_by, Termination::Collision);
        assert!(ro.states.last().unwrap().gap <= 0.0);
        assert!(ro.states[..ro.states.len() - 1].iter().all(|s| s.gap > 0.0));
        assert_eq!(ro.actions.len(), ro.states.len() - 1);
    }

    #[test]
    fn hard_braking_stops_without_collision() {
        let e = constant_lead_event(20.0, 10.0, 100, 0.1);
        let reward = RewardProgram::compile(&parse("0").unwrap());
        let mut brake = |_: &EnvState| -5.0;
        let ro = rollout_with(&mut brake, &reward, &e).unwrap();
        assert_eq!(ro.terminated_by, Termination::EndOfLeadTrace);
        assert_eq!(ro.states.last().unwrap().ego_v, 0.0);
        assert!(ro.states.iter().all(|s| s.ego_v >= 0.0));
        assert!(ro.rewards.iter().all(|&r| r == 0.0));
    }
}
