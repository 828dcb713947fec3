//! Vote bookkeeping for the preference study. Votes are appended to a JSON
//! lines file and replayed on startup.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::OpenOptions;
use std::io::{self, BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use stylecraft::clips::{ComparisonBook, ComparisonSpec, Side};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Choice {
    A,
    B,
    #[serde(rename = "even", alias = "Even", alias = "similar")]
    Even,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preference {
    Ours,
    Baseline,
    Even,
}

/// De-anonymizes a vote.
pub fn attribute(choice: Choice, ours: Side) -> Preference {
    match (choice, ours) {
        (Choice::Even, _) => Preference::Even,
        (Choice::A, Side::A) | (Choice::B, Side::B) => Preference::Ours,
        _ => Preference::Baseline,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VoteRecord {
    pub comparison_id: String,
    pub command: String,
    pub event_id: String,
    pub choice: Choice,
    pub preference: Preference,
    #[serde(default)]
    pub session: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum VoteError {
    Unknown,
    AlreadyVoted,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TallyRow {
    pub command: String,
    pub prefer_ours: usize,
    pub prefer_baseline: usize,
    pub even: usize,
    /// Distinct scenarios with at least one vote.
    pub tested_events: usize,
    pub pct_ours: f64,
    pub pct_baseline: f64,
    pub pct_even: f64,
}

impl TallyRow {
    pub fn votes(&self) -> usize {
        self.prefer_ours + self.prefer_baseline + self.even
    }

    fn finish(&mut self) {
        let n = self.votes();
        let pct = |c: usize| if n == 0 { 0.0 } else { 100.0 * c as f64 / n as f64 };
        self.pct_ours = pct(self.prefer_ours);
        self.pct_baseline = pct(self.prefer_baseline);
        self.pct_even = pct(self.even);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Results {
    pub commands: Vec<TallyRow>,
    pub total: TallyRow,
}

#[derive(Debug)]
pub struct VoteStore {
    path: PathBuf,
    votes: BTreeMap<String, VoteRecord>,
    served: HashMap<String, BTreeSet<String>>,
}

impl VoteStore {
    /// Opens the store, replaying any votes already in `path`.
    pub fn open(path: impl Into<PathBuf>) -> io::Result<Self> {
        let path = path.into();
        let mut votes = BTreeMap::new();
        if path.exists() {
            for (i, line) in BufReader::new(std::fs::File::open(&path)?).lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let v: VoteRecord = serde_json::from_str(&line).map_err(|e| {
                    io::Error::new(io::ErrorKind::InvalidData, format!("{} line {}: {e}", path.display(), i + 1))
                })?;
                votes.entry(v.comparison_id.clone()).or_insert(v);
            }
        }
        Ok(Self { path, votes, served: HashMap::new() })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.votes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.votes.is_empty()
    }

    /// Next comparison that has no vote and was not yet shown to `session`.
    pub fn next_for<'b>(&mut self, book: &'b ComparisonBook, session: &str) -> Option<&'b ComparisonSpec> {
        let seen = self.served.entry(session.to_string()).or_default();
        let next = book
            .comparisons
            .iter()
            .find(|c| !self.votes.contains_key(&c.comparison_id) && !seen.contains(&c.comparison_id))?;
        seen.insert(next.comparison_id.clone());
        Some(next)
    }

    pub fn vote(
        &mut self,
        book: &ComparisonBook,
        comparison_id: &str,
        choice: Choice,
        session: Option<String>,
    ) -> Result<io::Result<VoteRecord>, VoteError> {
        let spec = book.comparison(comparison_id).ok_or(VoteError::Unknown)?;
        if self.votes.contains_key(comparison_id) {
            return Err(VoteError::AlreadyVoted);
        }
        let record = VoteRecord {
            comparison_id: comparison_id.to_string(),
            command: spec.command.clone(),
            event_id: spec.event_id.clone(),
            choice,
            preference: attribute(choice, spec.ours),
            session,
        };
        // persist before acknowledging so a crash never loses an accepted vote
        let written = (|| {
            let mut f = OpenOptions::new().create(true).append(true).open(&self.path)?;
            writeln!(f, "{}", serde_json::to_string(&record)?)?;
            f.sync_data()
        })();
        Ok(written.map(|_| {
            self.votes.insert(comparison_id.to_string(), record.clone());
            record
        }))
    }

    /// Per-command counts in book order plus a totals row.
    pub fn results(&self, book: &ComparisonBook) -> Results {
        let mut order: Vec<String> = Vec::new();
        for c in &book.comparisons {
            if !order.contains(&c.command) {
                order.push(c.command.clone());
            }
        }
        let mut rows: Vec<TallyRow> =
            order.iter().map(|c| TallyRow { command: c.clone(), ..Default::default() }).collect();
        let mut events: Vec<BTreeSet<&str>> = vec![BTreeSet::new(); rows.len()];
        for v in self.votes.values() {
            let Some(i) = order.iter().position(|c| *c == v.command) else { continue };
            match v.preference {
                Preference::Ours => rows[i].prefer_ours += 1,
                Preference::Baseline => rows[i].prefer_baseline += 1,
                Preference::Even => rows[i].even += 1,
            }
            events[i].insert(&v.event_id);
        }
        let mut total = TallyRow { command: "total".into(), ..Default::default() };
        for (row, ev) in rows.iter_mut().zip(&events) {
            row.tested_events = ev.len();
            row.finish();
            total.prefer_ours += row.prefer_ours;
            total.prefer_baseline += row.prefer_baseline;
            total.even += row.even;
            total.tested_events += row.tested_events;
        }
        total.finish();
        Results { commands: rows, total }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn attribution_follows_the_hidden_side() {
        assert_eq!(attribute(Choice::A, Side::A), Preference::Ours);
        assert_eq!(attribute(Choice::B, Side::A), Preference::Baseline);
        assert_eq!(attribute(Choice::B, Side::B), Preference::Ours);
        assert_eq!(attribute(Choice::Even, Side::B), Preference::Even);
    }

    #[test]
    fn choice_accepts_lowercase_even() {
        let c: Choice = serde_json::from_str("\"even\"").unwrap();
        assert_eq!(c, Choice::Even);
        let c: Choice = serde_json::from_str("\"similar\"").unwrap();
        assert_eq!(c, Choice::Even);
    }
}
