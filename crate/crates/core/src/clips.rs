//! Replay clips and anonymized A/B comparison batches for preference studies.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::env::{rollout_with, EnvError, EnvState, EpisodeRollout, A_MIN};
use crate::fsutil::write_atomic;
use crate::idm::{idm_accel, IdmParams};
use crate::rewarddsl::{parse, RewardProgram};
use crate::rl::{rollout, ActionMode};
use crate::styledb::StyleDatabase;
use crate::trajdata::{CarFollowingEvent, Dataset, Frame};

#[derive(Debug, Error)]
pub enum ClipError {
    #[error("unknown style record `{0}`")]
    UnknownRecord(String),
    #[error("record `{0}` has no trained policy")]
    MissingPolicy(String),
    #[error("reward of `{0}` does not parse")]
    BadReward(String),
    #[error("test dataset is empty")]
    EmptyTest,
    #[error("comparison book is inconsistent: {0}")]
    Inconsistent(String),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: String, source: serde_json::Error },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Clip {
    pub clip_id: String,
    pub event_id: String,
    pub frames: Vec<Frame>,
    pub lead_length: f64,
    /// Which model drove; never sent to study participants.
    pub source_label: String,
}

impl Clip {
    pub fn from_rollout(clip_id: impl Into<String>, r: &EpisodeRollout, source_label: impl Into<String>) -> Self {
        let frames = r
            .states
            .iter()
            .map(|s: &EnvState| Frame {
                t: s.t_index as f64 * r.dt,
                lead_x: s.lead_x,
                lead_v: s.lead_v,
                ego_x: s.ego_x,
                ego_v: s.ego_v,
            })
            .collect();
        Self {
            clip_id: clip_id.into(),
            event_id: r.event_id.clone(),
            frames,
            lead_length: r.lead_length,
            source_label: source_label.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Side {
    A,
    B,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonSpec {
    pub comparison_id: String,
    pub command: String,
    pub event_id: String,
    pub side_a: String,
    pub side_b: String,
    /// Side showing the customized policy; the other shows the baseline.
    pub ours: Side,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ComparisonBook {
    pub clips: Vec<Clip>,
    pub comparisons: Vec<ComparisonSpec>,
}

/// A command and the style record answering it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BookRequest {
    pub command: String,
    pub record_id: String,
}

fn opaque_id(prefix: &str, parts: &[&str]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.as_bytes());
        h.update([0]);
    }
    let hex: String = h.finalize().iter().take(6).map(|b| format!("{b:02x}")).collect();
    format!("{prefix}-{hex}")
}

/// Rollout of an IDM driver on `event`.
pub fn idm_rollout(params: &IdmParams, event: &CarFollowingEvent) -> Result<EpisodeRollout, EnvError> {
    let zero = RewardProgram::compile(&parse("0").expect("constant parses"));
    let mut ctl = |s: &EnvState| idm_accel(params, s.gap, s.ego_v, s.rel_v).unwrap_or(A_MIN);
    rollout_with(&mut ctl, &zero, event)
}

impl ComparisonBook {
    /// Policy-versus-IDM comparisons on up to `events_per_command` sampled
    /// test events per command, with the side of each model randomized.
    pub fn generate(
        db: &StyleDatabase,
        requests: &[BookRequest],
        test: &Dataset,
        baseline: &IdmParams,
        events_per_command: usize,
        seed: u64,
    ) -> Result<Self, ClipError> {
        if test.is_empty() {
            return Err(ClipError::EmptyTest);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut book = ComparisonBook::default();
        let seed_s = seed.to_string();
        for (ci, req) in requests.iter().enumerate() {
            let rec = db.get(&req.record_id).ok_or_else(|| ClipError::UnknownRecord(req.record_id.clone()))?;
            let policy = db.policy(&req.record_id).ok_or_else(|| ClipError::MissingPolicy(req.record_id.clone()))?;
            let reward = parse(&rec.reward_source)
                .map(|e| RewardProgram::compile(&e))
                .map_err(|_| ClipError::BadReward(req.record_id.clone()))?;
            let mut events: Vec<&CarFollowingEvent> = test.events.iter().collect();
            events.shuffle(&mut rng);
            events.truncate(events_per_command);
            for (j, event) in events.into_iter().enumerate() {
                let ci_s = ci.to_string();
                let j_s = j.to_string();
                let ours = rollout(policy, &reward, event, ActionMode::Mean, 0)?;
                let theirs = idm_rollout(baseline, event)?;
                let ours_id = opaque_id("clip", &[&seed_s, &ci_s, &j_s, "x"]);
                let theirs_id = opaque_id("clip", &[&seed_s, &ci_s, &j_s, "y"]);
                let side = if rng.random_bool(0.5) { Side::A } else { Side::B };
                let (side_a, side_b) = match side {
                    Side::A => (ours_id.clone(), theirs_id.clone()),
                    Side::B => (theirs_id.clone(), ours_id.clone()),
                };
                book.clips.push(Clip::from_rollout(ours_id, &ours, format!("ours:{}", req.record_id)));
                book.clips.push(Clip::from_rollout(theirs_id, &theirs, "baseline:idm"));
                book.comparisons.push(ComparisonSpec {
                    comparison_id: opaque_id("cmp", &[&seed_s, &ci_s, &j_s]),
                    command: req.command.clone(),
                    event_id: event.event_id.clone(),
                    side_a,
                    side_b,
                    ours: side,
                });
            }
        }
        Ok(book)
    }

    pub fn clip(&self, id: &str) -> Option<&Clip> {
        self.clips.iter().find(|c| c.clip_id == id)
    }

    pub fn comparison(&self, id: &str) -> Option<&ComparisonSpec> {
        self.comparisons.iter().find(|c| c.comparison_id == id)
    }

    /// Every comparison references two known clips of the same event.
    pub fn check(&self) -> Result<(), ClipError> {
        for c in &self.comparisons {
            let a = self.clip(&c.side_a).ok_or_else(|| ClipError::Inconsistent(format!("missing clip {}", c.side_a)))?;
            let b = self.clip(&c.side_b).ok_or_else(|| ClipError::Inconsistent(format!("missing clip {}", c.side_b)))?;
            if a.event_id != c.event_id || b.event_id != c.event_id {
                return Err(ClipError::Inconsistent(format!("{} mixes scenarios", c.comparison_id)));
            }
        }
        if let Some(c) = self.clips.iter().find(|c| c.frames.len() < 2) {
            return Err(ClipError::Inconsistent(format!("clip {} has fewer than two frames", c.clip_id)));
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<(), ClipError> {
        let bytes = serde_json::to_vec(self).map_err(|e| ClipError::Json { path: path.display().to_string(), source: e })?;
        write_atomic(path, &bytes).map_err(|e| ClipError::Io { path: path.display().to_string(), source: e })
    }

    pub fn load(path: &Path) -> Result<Self, ClipError> {
        let raw = std::fs::read(path).map_err(|e| ClipError::Io { path: path.display().to_string(), source: e })?;
        let book: Self =
            serde_json::from_slice(&raw).map_err(|e| ClipError::Json { path: path.display().to_string(), source: e })?;
        book.check()?;
        Ok(book)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::ScriptedModel;
    use crate::orchestrator::seed_database;
    use crate::rl::TrainConfig;
    use crate::trajdata::generate_synthetic;

    #[test]
    fn book_is_consistent_and_anonymous_ids() {
        let ds = generate_synthetic(12, 0.1, 8.0, 5).unwrap();
        let cfg = TrainConfig { total_steps: 256, steps_per_batch: 256, epochs_per_batch: 1, n_seeds: 1, ..Default::default() };
        let db = seed_database(&ScriptedModel::builtin(), &ds, &ds, &cfg).unwrap();
        let reqs = [BookRequest { command: "Drive aggressively.".into(), record_id: "aggressive".into() }];
        let book = ComparisonBook::generate(&db, &reqs, &ds, &IdmParams::default(), 5, 9).unwrap();
        assert_eq!(book.comparisons.len(), 5);
        book.check().unwrap();
        for c in &book.comparisons {
            assert!(!c.side_a.contains("aggressive") && !c.side_b.contains("idm"));
            let frames = &book.clip(&c.side_a).unwrap().frames;
            assert!(frames.windows(2).all(|w| w[1].t > w[0].t));
        }
        let again = ComparisonBook::generate(&db, &reqs, &ds, &IdmParams::default(), 5, 9).unwrap();
        assert_eq!(book, again);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("book.json");
        book.save(&p).unwrap();
        assert_eq!(ComparisonBook::load(&p).unwrap(), book);
    }
}
