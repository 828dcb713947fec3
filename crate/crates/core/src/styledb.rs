//! Persistent store of driving styles: reward, trained policy, analytics and
//! the commands that led to each style.
//!
//! On-disk layout under the database directory:
//!
//! ```text
//! manifest.json          version, embedding_dim, record ids
//! records/<id>.json      StyleRecord stamped with the manifest version
//! policies/<id>.json     policy sidecar
//! policies/<id>.f32      little-endian policy weights
//! audit.jsonl            one line per mutation or verdict
//! ```
//!
//! Every file is replaced by rename, and the manifest is written last, so a
//! reader that sees the same manifest before and after reading the records has
//! a consistent snapshot.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fsutil::write_atomic;
use crate::rewarddsl::parse;
use crate::rl::{PolicyParams, RlError};
use crate::statseval::StatsReport;

pub const UNIT_NORM_TOLERANCE: f64 = 1e-6;
/// Cosine of two distinct vectors never reaches this value.
const MAX_DISTINCT_SIMILARITY: f64 = 1.0 - 1e-12;
const LOAD_ATTEMPTS: usize = 50;

#[derive(Debug, Error)]
pub enum DbError {
    #[error("record `{0}` already exists")]
    DuplicateId(String),
    #[error("record `{0}` not found")]
    MissingRecord(String),
    #[error("embedding dimension {found} does not match database dimension {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("record `{id}` is invalid: {message}")]
    InvalidRecord { id: String, message: String },
    #[error("k must be at least 1")]
    ZeroK,
    #[error("database is empty")]
    Empty,
    #[error("fuzzy threshold {0} outside (0, 1]")]
    BadThreshold(f64),
    #[error("record `{id}`: {message}")]
    Corrupt { id: String, message: String },
    #[error("database at {0} kept changing while loading")]
    Unstable(PathBuf),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {source}")]
    Json { path: PathBuf, source: serde_json::Error },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DbError + '_ {
    move |source| DbError::Io { path: path.to_path_buf(), source }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    SeedHuman,
    SeedDataDriven,
    Generated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CommandEntry {
    pub text: String,
    /// Seconds since the Unix epoch as supplied by the caller.
    pub timestamp: u64,
    pub embedding: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleRecord {
    pub id: String,
    pub reward_source: String,
    /// Path of the policy relative to the database directory, without extension.
    pub policy_ref: String,
    pub stats: Option<StatsReport>,
    pub commands: Vec<CommandEntry>,
    pub embedding: Vec<f64>,
    pub provenance: Provenance,
    /// Id of the record that replaced this one; retired records are kept but
    /// never retrieved.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub retired_by: Option<String>,
}

impl StyleRecord {
    pub fn policy_ref_for(id: &str) -> String {
        format!("policies/{id}")
    }

    pub fn is_active(&self) -> bool {
        self.retired_by.is_none()
    }

    /// Text embedded for retrieval: the reward source and a one-line stats digest.
    pub fn retrieval_text(&self) -> String {
        retrieval_text(&self.reward_source, self.stats.as_ref())
    }

    fn check(&self, dim: usize) -> Result<(), DbError> {
        let invalid = |m: String| DbError::InvalidRecord { id: self.id.clone(), message: m };
        if self.id.is_empty() || !self.id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_') {
            return Err(invalid("id must be non-empty ASCII letters, digits, '-' or '_'".into()));
        }
        parse(&self.reward_source).map_err(|d| invalid(format!("reward does not parse: {d}")))?;
        check_embedding(&self.embedding, dim).map_err(|e| match e {
            DbError::InvalidRecord { message, .. } => invalid(message),
            other => other,
        })?;
        for c in &self.commands {
            check_embedding(&c.embedding, dim).map_err(|e| match e {
                DbError::InvalidRecord { message, .. } => invalid(format!("command `{}`: {message}", c.text)),
                other => other,
            })?;
        }
        Ok(())
    }
}

pub fn retrieval_text(reward_source: &str, stats: Option<&StatsReport>) -> String {
    match stats {
        Some(s) => format!("{}\nstats: {}", reward_source.trim_end(), s.digest()),
        None => reward_source.trim_end().to_string(),
    }
}

fn check_embedding(v: &[f64], dim: usize) -> Result<(), DbError> {
    if v.len() != dim {
        return Err(DbError::DimensionMismatch { expected: dim, found: v.len() });
    }
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
        return Err(DbError::InvalidRecord { id: String::new(), message: format!("embedding norm {norm} is not 1") });
    }
    Ok(())
}

/// Cosine similarity; exactly 1.0 only for identical vectors.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    if a == b && a.iter().any(|x| *x != 0.0) {
        return 1.0;
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na * nb)).clamp(-1.0, MAX_DISTINCT_SIMILARITY)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    ChallengerBetter,
    IncumbentBetter,
    Tie,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub version: u64,
    pub action: String,
    pub ids: Vec<String>,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub note: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Manifest {
    version: u64,
    embedding_dim: usize,
    ids: Vec<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct StampedRecord {
    snapshot_version: u64,
    #[serde(flatten)]
    record: StyleRecord,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StyleDatabase {
    records: BTreeMap<String, StyleRecord>,
    policies: BTreeMap<String, PolicyParams>,
    embedding_dim: usize,
    version: u64,
    /// Entries not yet appended to `audit.jsonl`.
    pending_audit: Vec<AuditEntry>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReplaceOutcome {
    Replaced,
    Kept,
    KeptBoth,
}

impl StyleDatabase {
    pub fn new(embedding_dim: usize) -> Self {
        Self {
            records: BTreeMap::new(),
            policies: BTreeMap::new(),
            embedding_dim,
            version: 0,
            pending_audit: Vec::new(),
        }
    }

    pub fn embedding_dim(&self) -> usize {
        self.embedding_dim
    }

    pub fn version(&self) -> u64 {
        self.version
    }

    /// Number of active (non-retired) records.
    pub fn len(&self) -> usize {
        self.records.values().filter(|r| r.is_active()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of stored records, retired included.
    pub fn total_len(&self) -> usize {
        self.records.len()
    }

    pub fn get(&self, id: &str) -> Option<&StyleRecord> {
        self.records.get(id)
    }

    pub fn policy(&self, id: &str) -> Option<&PolicyParams> {
        self.policies.get(id)
    }

    pub fn active(&self) -> impl Iterator<Item = &StyleRecord> {
        self.records.values().filter(|r| r.is_active())
    }

    pub fn all(&self) -> impl Iterator<Item = &StyleRecord> {
        self.records.values()
    }

    fn audit(&mut self, action: &str, ids: &[&str], note: String) {
        self.pending_audit.push(AuditEntry {
            version: self.version,
            action: action.into(),
            ids: ids.iter().map(|s| s.to_string()).collect(),
            note,
        });
    }

    pub fn insert(&mut self, record: StyleRecord, policy: Option<PolicyParams>) -> Result<(), DbError> {
        if self.records.contains_key(&record.id) {
            return Err(DbError::DuplicateId(record.id));
        }
        record.check(self.embedding_dim)?;
        if let Some(p) = &policy {
            p.validate().map_err(|e| DbError::InvalidRecord { id: record.id.clone(), message: e.to_string() })?;
        }
        self.version += 1;
        let id = record.id.clone();
        if let Some(p) = policy {
            self.policies.insert(id.clone(), p);
        }
        self.records.insert(id.clone(), record);
        self.audit("insert", &[&id], String::new());
        Ok(())
    }

    /// Adds a command to a record's history.
    pub fn record_command(&mut self, id: &str, entry: CommandEntry) -> Result<(), DbError> {
        check_embedding(&entry.embedding, self.embedding_dim)?;
        let rec = self.records.get_mut(id).ok_or_else(|| DbError::MissingRecord(id.into()))?;
        rec.commands.push(entry);
        self.version += 1;
        self.audit("command", &[id], String::new());
        Ok(())
    }

    /// Active records by cosine similarity, descending, ties by ascending id.
    pub fn top_k(&self, query: &[f64], k: usize) -> Result<Vec<(&StyleRecord, f64)>, DbError> {
        if k == 0 {
            return Err(DbError::ZeroK);
        }
        if query.len() != self.embedding_dim {
            return Err(DbError::DimensionMismatch { expected: self.embedding_dim, found: query.len() });
        }
        if self.is_empty() {
            return Err(DbError::Empty);
        }
        let mut scored: Vec<(&StyleRecord, f64)> = self.active().map(|r| (r, cosine(query, &r.embedding))).collect();
        scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.id.cmp(&b.0.id)));
        scored.truncate(k);
        Ok(scored)
    }

    /// Active record whose closest stored command reaches `threshold`.
    pub fn fuzzy_lookup(&self, command: &[f64], threshold: f64) -> Result<Option<(&StyleRecord, f64)>, DbError> {
        if !(threshold > 0.0 && threshold <= 1.0) {
            return Err(DbError::BadThreshold(threshold));
        }
        if command.len() != self.embedding_dim {
            return Err(DbError::DimensionMismatch { expected: self.embedding_dim, found: command.len() });
        }
        let mut best: Option<(&StyleRecord, f64)> = None;
        for r in self.active() {
            for c in &r.commands {
                let s = cosine(command, &c.embedding);
                if best.is_none_or(|(_, b)| s > b) {
                    best = Some((r, s));
                }
            }
        }
        Ok(best.filter(|(_, s)| *s >= threshold))
    }

    /// Applies an alignment verdict between an existing record and a newly
    /// trained challenger.
    pub fn replace_if_better(
        &mut self,
        incumbent_id: &str,
        mut challenger: StyleRecord,
        challenger_policy: Option<PolicyParams>,
        verdict: Verdict,
        keep_both_on_tie: bool,
    ) -> Result<ReplaceOutcome, DbError> {
        let incumbent = self.records.get(incumbent_id).ok_or_else(|| DbError::MissingRecord(incumbent_id.into()))?;
        match verdict {
            Verdict::ChallengerBetter => {
                if self.records.contains_key(&challenger.id) {
                    return Err(DbError::DuplicateId(challenger.id));
                }
                let mut history = incumbent.commands.clone();
                history.append(&mut challenger.commands);
                challenger.commands = history;
                challenger.check(self.embedding_dim)?;
                let cid = challenger.id.clone();
                self.version += 1;
                if let Some(p) = challenger_policy {
                    self.policies.insert(cid.clone(), p);
                }
                self.records.insert(cid.clone(), challenger);
                if let Some(inc) = self.records.get_mut(incumbent_id) {
                    inc.retired_by = Some(cid.clone());
                }
                self.audit("replace", &[incumbent_id, &cid], String::new());
                Ok(ReplaceOutcome::Replaced)
            }
            Verdict::Tie if keep_both_on_tie => {
                let cid = challenger.id.clone();
                self.insert(challenger, challenger_policy)?;
                self.pending_audit.last_mut().expect("insert audits").note = format!("tie with {incumbent_id}");
                let _ = cid;
                Ok(ReplaceOutcome::KeptBoth)
            }
            Verdict::Tie | Verdict::IncumbentBetter => {
                let note = if verdict == Verdict::Tie { "tie" } else { "incumbent_better" };
                let cid = challenger.id.clone();
                self.audit("verdict", &[incumbent_id, &cid], note.into());
                Ok(ReplaceOutcome::Kept)
            }
        }
    }

    pub fn audit_pending(&self) -> &[AuditEntry] {
        &self.pending_audit
    }

    /// Writes the database to `dir`. Policies are written before records and
    /// the manifest last.
    pub fn persist(&mut self, dir: impl AsRef<Path>) -> Result<(), DbError> {
        let dir = dir.as_ref();
        let rec_dir = dir.join("records");
        let pol_dir = dir.join("policies");
        fs::create_dir_all(&rec_dir).map_err(io_err(&rec_dir))?;
        fs::create_dir_all(&pol_dir).map_err(io_err(&pol_dir))?;
        for (id, p) in &self.policies {
            let base = dir.join(StyleRecord::policy_ref_for(id));
            let (_, bin) = crate::rl::sidecar_paths(&base);
            if !bin.exists() {
                p.save(&base).map_err(|e| rl_err(id, e))?;
            }
        }
        for (id, r) in &self.records {
            let path = rec_dir.join(format!("{id}.json"));
            let stamped = StampedRecord { snapshot_version: self.version, record: r.clone() };
            let bytes = serde_json::to_vec_pretty(&stamped).map_err(|source| DbError::Json { path: path.clone(), source })?;
            write_if_changed(&path, &bytes)?;
        }
        let manifest = Manifest { version: self.version, embedding_dim: self.embedding_dim, ids: self.records.keys().cloned().collect() };
        let mpath = dir.join("manifest.json");
        let bytes = serde_json::to_vec_pretty(&manifest).map_err(|source| DbError::Json { path: mpath.clone(), source })?;
        write_if_changed(&mpath, &bytes)?;
        if !self.pending_audit.is_empty() {
            let apath = dir.join("audit.jsonl");
            let mut f = fs::OpenOptions::new().create(true).append(true).open(&apath).map_err(io_err(&apath))?;
            for e in &self.pending_audit {
                let line = serde_json::to_string(e).map_err(|source| DbError::Json { path: apath.clone(), source })?;
                writeln!(f, "{line}").map_err(io_err(&apath))?;
            }
            self.pending_audit.clear();
        }
        Ok(())
    }

    /// Loads a consistent snapshot, retrying while a writer is mid-update.
    pub fn load(dir: impl AsRef<Path>) -> Result<Self, DbError> {
        let dir = dir.as_ref();
        let mut last_err = None;
        for attempt in 0..LOAD_ATTEMPTS {
            if attempt > 0 {
                std::thread::sleep(std::time::Duration::from_millis(2 * attempt as u64));
            }
            let before = read_manifest(dir)?;
            match load_snapshot(dir, &before) {
                Ok(db) => {
                    if read_manifest(dir)? == before {
                        return Ok(db);
                    }
                }
                Err(e) => {
                    // a stable manifest means the failure is real, not a race
                    if read_manifest(dir)? == before {
                        return Err(e);
                    }
                    last_err = Some(e);
                }
            }
        }
        Err(last_err.unwrap_or_else(|| DbError::Unstable(dir.to_path_buf())))
    }
}

fn rl_err(id: &str, e: RlError) -> DbError {
    DbError::Corrupt { id: id.into(), message: format!("policy: {e}") }
}

fn write_if_changed(path: &Path, bytes: &[u8]) -> Result<(), DbError> {
    if fs::read(path).ok().as_deref() == Some(bytes) {
        return Ok(());
    }
    write_atomic(path, bytes).map_err(io_err(path))
}

fn read_manifest(dir: &Path) -> Result<Manifest, DbError> {
    let path = dir.join("manifest.json");
    let raw = fs::read(&path).map_err(io_err(&path))?;
    serde_json::from_slice(&raw).map_err(|source| DbError::Json { path, source })
}

fn load_snapshot(dir: &Path, m: &Manifest) -> Result<StyleDatabase, DbError> {
    let mut db = StyleDatabase::new(m.embedding_dim);
    db.version = m.version;
    for id in &m.ids {
        let path = dir.join("records").join(format!("{id}.json"));
        let corrupt = |message: String| DbError::Corrupt { id: id.clone(), message };
        let raw = fs::read(&path).map_err(|e| corrupt(format!("{}: {e}", path.display())))?;
        let stamped: StampedRecord =
            serde_json::from_slice(&raw).map_err(|e| corrupt(format!("{}: {e}", path.display())))?;
        if stamped.snapshot_version != m.version {
            return Err(corrupt(format!(
                "record stamped {} but manifest is at {}",
                stamped.snapshot_version, m.version
            )));
        }
        let rec = stamped.record;
        if &rec.id != id {
            return Err(corrupt(format!("file holds record `{}`", rec.id)));
        }
        rec.check(m.embedding_dim).map_err(|e| corrupt(e.to_string()))?;
        let base = dir.join(&rec.policy_ref);
        let (json, bin) = crate::rl::sidecar_paths(&base);
        if json.exists() || bin.exists() {
            let p = PolicyParams::load(&base).map_err(|e| corrupt(format!("policy {}: {e}", bin.display())))?;
            db.policies.insert(id.clone(), p);
        } else if rec.stats.is_some() {
            return Err(corrupt(format!("policy weight file {} is missing", bin.display())));
        }
        db.records.insert(id.clone(), rec);
    }
    Ok(db)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rl::init_policy;

    fn unit(dim: usize, hot: &[(usize, f64)]) -> Vec<f64> {
        let mut v = vec![0.0; dim];
        for &(i, x) in hot {
            v[i] = x;
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter().map(|x| x / n).collect()
    }

    fn rec(id: &str, emb: Vec<f64>) -> StyleRecord {
        StyleRecord {
            id: id.into(),
            reward_source: "speed".into(),
            policy_ref: StyleRecord::policy_ref_for(id),
            stats: None,
            commands: vec![],
            embedding: emb,
            provenance: Provenance::SeedHuman,
            retired_by: None,
        }
    }

    #[test]
    fn insert_and_duplicates() {
        let mut db = StyleDatabase::new(4);
        db.insert(rec("a", unit(4, &[(0, 1.0)])), None).unwrap();
        assert_eq!(db.len(), 1);
        let before = db.clone();
        assert!(matches!(db.insert(rec("a", unit(4, &[(1, 1.0)])), None), Err(DbError::DuplicateId(_))));
        assert_eq!(db, before);
        assert!(matches!(db.insert(rec("b", unit(3, &[(1, 1.0)])), None), Err(DbError::DimensionMismatch { .. })));
        let mut bad = rec("c", vec![0.5, 0.0, 0.0, 0.0]);
        assert!(db.insert(bad.clone(), None).is_err());
        bad.embedding = unit(4, &[(2, 1.0)]);
        bad.reward_source = "speed +".into();
        assert!(db.insert(bad, None).is_err());
    }

    #[test]
    fn top_k_orders_and_truncates() {
        let mut db = StyleDatabase::new(3);
        db.insert(rec("b", unit(3, &[(0, 1.0)])), None).unwrap();
        db.insert(rec("a", unit(3, &[(0, 1.0)])), None).unwrap();
        db.insert(rec("c", unit(3, &[(1, 1.0)])), None).unwrap();
        let q = unit(3, &[(0, 1.0)]);
        let hits = db.top_k(&q, 3).unwrap();
        let ids: Vec<&str> = hits.iter().map(|h| h.0.id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
        assert_eq!(hits[0].1, 1.0);
        assert_eq!(hits[2].1, 0.0);
        assert_eq!(db.top_k(&q, 10).unwrap().len(), 3);
        assert!(matches!(db.top_k(&q, 0), Err(DbError::ZeroK)));
        assert!(matches!(db.top_k(&[1.0], 1), Err(DbError::DimensionMismatch { .. })));
    }

    #[test]
    fn fuzzy_lookup_uses_command_history() {
        let mut db = StyleDatabase::new(3);
        assert!(db.fuzzy_lookup(&unit(3, &[(0, 1.0)]), 0.9).unwrap().is_none());
        db.insert(rec("a", unit(3, &[(2, 1.0)])), None).unwrap();
        let cmd = unit(3, &[(0, 1.0), (1, 0.2)]);
        db.record_command("a", CommandEntry { text: "go".into(), timestamp: 0, embedding: cmd.clone() }).unwrap();
        let (hit, s) = db.fuzzy_lookup(&cmd, 1.0).unwrap().unwrap();
        assert_eq!((hit.id.as_str(), s), ("a", 1.0));
        let near = unit(3, &[(0, 1.0), (1, 0.21)]);
        assert!(db.fuzzy_lookup(&near, 1.0).unwrap().is_none());
        assert!(db.fuzzy_lookup(&near, 0.99).unwrap().is_some());
        assert!(db.fuzzy_lookup(&unit(3, &[(2, 1.0)]), 0.5).unwrap().is_none());
        assert!(matches!(db.fuzzy_lookup(&near, 0.0), Err(DbError::BadThreshold(_))));
    }

    #[test]
    fn replace_if_better_contract() {
        let mut db = StyleDatabase::new(2);
        let mut inc = rec("inc", unit(2, &[(0, 1.0)]));
        inc.commands.push(CommandEntry { text: "old".into(), timestamp: 1, embedding: unit(2, &[(1, 1.0)]) });
        db.insert(inc, None).unwrap();
        let v = db.version();

        let kept = db.replace_if_better("inc", rec("ch1", unit(2, &[(1, 1.0)])), None, Verdict::IncumbentBetter, true).unwrap();
        assert_eq!(kept, ReplaceOutcome::Kept);
        assert_eq!(db.version(), v);
        assert!(db.get("ch1").is_none());

        let both = db.replace_if_better("inc", rec("ch2", unit(2, &[(1, 1.0)])), None, Verdict::Tie, true).unwrap();
        assert_eq!(both, ReplaceOutcome::KeptBoth);
        assert_eq!(db.len(), 2);

        let n = db.len();
        let r = db.replace_if_better("inc", rec("ch3", unit(2, &[(1, 1.0)])), None, Verdict::ChallengerBetter, false).unwrap();
        assert_eq!(r, ReplaceOutcome::Replaced);
        assert!(db.version() > v);
        assert_eq!(db.len(), n);
        assert_eq!(db.get("inc").unwrap().retired_by.as_deref(), Some("ch3"));
        assert_eq!(db.get("ch3").unwrap().commands[0].text, "old");
        // retired records are no longer recalled
        assert_eq!(db.fuzzy_lookup(&unit(2, &[(1, 1.0)]), 0.9).unwrap().unwrap().0.id, "ch3");
        assert!(matches!(
            db.replace_if_better("nope", rec("x", unit(2, &[(1, 1.0)])), None, Verdict::Tie, false),
            Err(DbError::MissingRecord(_))
        ));
    }

    #[test]
    fn persist_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mut db = StyleDatabase::new(3);
        for (i, id) in ["s1", "s2", "s3"].iter().enumerate() {
            let mut r = rec(id, unit(3, &[(i, 1.0), ((i + 1) % 3, 0.3)]));
            r.commands.push(CommandEntry { text: format!("cmd {i}"), timestamp: i as u64, embedding: unit(3, &[(i, 1.0)]) });
            db.insert(r, Some(init_policy(i as u64))).unwrap();
        }
        db.persist(dir.path()).unwrap();
        let back = StyleDatabase::load(dir.path()).unwrap();
        assert_eq!(back.version(), db.version());
        assert_eq!(back.records, db.records);
        assert_eq!(back.policies, db.policies);
        let audit = fs::read_to_string(dir.path().join("audit.jsonl")).unwrap();
        assert_eq!(audit.lines().count(), 3);
    }

    #[test]
    fn missing_policy_names_the_record() {
        let dir = tempfile::tempdir().unwrap();
        let mut db = StyleDatabase::new(2);
        db.insert(rec("lonely", unit(2, &[(0, 1.0)])), Some(init_policy(1))).unwrap();
        db.persist(dir.path()).unwrap();
        fs::remove_file(dir.path().join("policies/lonely.f32")).unwrap();
        let err = StyleDatabase::load(dir.path()).unwrap_err();
        assert!(err.to_string().contains("lonely"), "{err}");
    }

    #[test]
    fn corrupt_record_names_the_record() {
        let dir = tempfile::tempdir().unwrap();
        let mut db = StyleDatabase::new(2);
        db.insert(rec("broken", unit(2, &[(0, 1.0)])), None).unwrap();
        db.persist(dir.path()).unwrap();
        fs::write(dir.path().join("records/broken.json"), b"{ nope").unwrap();
        let err = StyleDatabase::load(dir.path()).unwrap_err();
        assert!(err.to_string().contains("broken"), "{err}");
    }
}
