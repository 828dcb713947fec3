//! Style metrics over simulated or recorded driving, normalized against
//! natural-driving percentiles.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::EpisodeRollout;
use crate::trajdata::Dataset;

/// Speed below which headway uses this floor instead of the ego speed.
pub const HEADWAY_SPEED_FLOOR: f64 = 0.5;
pub const HEADWAY_CAP: f64 = 20.0;
/// Half-width of the normalized band labelled `near`.
pub const NEAR_BAND: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetricName {
    Speed,
    Acceleration,
    Jerk,
    Spacing,
    TimeHeadway,
    RelativeSpeed,
}

impl MetricName {
    pub const ALL: [MetricName; 6] = [
        MetricName::Speed,
        MetricName::Acceleration,
        MetricName::Jerk,
        MetricName::Spacing,
        MetricName::TimeHeadway,
        MetricName::RelativeSpeed,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MetricName::Speed => "speed",
            MetricName::Acceleration => "acceleration",
            MetricName::Jerk => "jerk",
            MetricName::Spacing => "spacing",
            MetricName::TimeHeadway => "time_headway",
            MetricName::RelativeSpeed => "relative_speed",
        }
    }

    pub fn parse(s: &str) -> Option<MetricName> {
        Self::ALL.into_iter().find(|m| m.as_str() == s)
    }

    pub fn unit(self) -> &'static str {
        match self {
            MetricName::Speed | MetricName::RelativeSpeed => "m/s",
            MetricName::Acceleration => "m/s^2",
            MetricName::Jerk => "m/s^3",
            MetricName::Spacing => "m",
            MetricName::TimeHeadway => "s",
        }
    }
}

impl fmt::Display for MetricName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum StatsError {
    #[error("no rollouts to summarize")]
    EmptyRollouts,
    #[error("test set is empty")]
    EmptyDataset,
    #[error("metric `{0}` has no samples")]
    NoSamples(MetricName),
    #[error("baseline for `{0}` is degenerate (p90 == p10)")]
    DegenerateBaseline(MetricName),
    #[error("metric `{metric}` missing from the {which} report")]
    MissingMetric { metric: MetricName, which: &'static str },
    #[error("no metrics selected")]
    NoneSelected,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub metric: MetricName,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    pub p10: f64,
    pub p50: f64,
    pub p90: f64,
    pub sample_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsReport {
    pub subject: String,
    pub test_set_id: String,
    pub summaries: Vec<MetricSummary>,
}

impl StatsReport {
    pub fn get(&self, m: MetricName) -> Option<&MetricSummary> {
        self.summaries.iter().find(|s| s.metric == m)
    }

    /// One line per metric: `name mean p10/p50/p90`.
    pub fn digest(&self) -> String {
        self.summaries
            .iter()
            .map(|s| format!("{} mean {:.2} p10 {:.2} p50 {:.2} p90 {:.2}", s.metric, s.mean, s.p10, s.p50, s.p90))
            .collect::<Vec<_>>()
            .join("; ")
    }
}

/// Inclusive linear-interpolation percentile of an ascending slice; `q` in [0, 1].
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let pos = q * (n - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    let frac = pos - lo as f64;
    if frac == 0.0 {
        sorted[lo]
    } else {
        sorted[lo] + frac * (sorted[hi] - sorted[lo])
    }
}

/// Correctly rounded sum (Shewchuk's exact partials), so pooled means do not
/// depend on sample order or duplication.
pub fn exact_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut partials: Vec<f64> = Vec::new();
    for mut x in values {
        let mut i = 0;
        for j in 0..partials.len() {
            let mut y = partials[j];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                partials[i] = lo;
                i += 1;
            }
            x = hi;
        }
        partials.truncate(i);
        partials.push(x);
    }
    // round the partials' exact total, highest magnitude first
    let mut hi = 0.0;
    while let Some(x) = partials.pop() {
        let prev = hi;
        hi = prev + x;
        let lo = x - (hi - prev);
        if lo != 0.0 {
            if let Some(&next) = partials.last() {
                // half-way case: nudge toward the remaining partials' sign
                if (lo < 0.0 && next < 0.0) || (lo > 0.0 && next > 0.0) {
                    let y = lo * 2.0;
                    let x2 = hi + y;
                    if y == x2 - hi {
                        hi = x2;
                    }
                }
            }
            break;
        }
    }
    hi
}

/// Summary of a pooled sample; sorting first makes it order-independent.
pub fn summarize(metric: MetricName, mut samples: Vec<f64>) -> Result<MetricSummary, StatsError> {
    if samples.is_empty() {
        return Err(StatsError::NoSamples(metric));
    }
    samples.sort_by(f64::total_cmp);
    let n = samples.len() as f64;
    let mean = exact_sum(samples.iter().copied()) / n;
    let var = exact_sum(samples.iter().map(|x| (x - mean) * (x - mean))) / n;
    Ok(MetricSummary {
        metric,
        mean,
        std: var.sqrt(),
        p10: percentile(&samples, 0.1),
        p50: percentile(&samples, 0.5),
        p90: percentile(&samples, 0.9),
        sample_count: samples.len(),
    })
}

pub fn time_headway(gap: f64, speed: f64) -> f64 {
    (gap / speed.max(HEADWAY_SPEED_FLOOR)).min(HEADWAY_CAP)
}

#[derive(Default)]
struct Pool {
    speed: Vec<f64>,
    accel: Vec<f64>,
    jerk: Vec<f64>,
    spacing: Vec<f64>,
    headway: Vec<f64>,
    rel: Vec<f64>,
}

impl Pool {
    fn push_state(&mut self, gap: f64, speed: f64, rel: f64) {
        self.speed.push(speed);
        self.spacing.push(gap);
        self.headway.push(time_headway(gap, speed));
        self.rel.push(rel);
    }

    fn push_accels(&mut self, accels: &[f64], dt: f64) {
        self.accel.extend_from_slice(accels);
        self.jerk.extend(accels.windows(2).map(|w| (w[1] - w[0]) / dt));
    }

    fn report(self, subject: &str, test_set_id: &str) -> Result<StatsReport, StatsError> {
        let summaries = vec![
            summarize(MetricName::Speed, self.speed)?,
            summarize(MetricName::Acceleration, self.accel)?,
            summarize(MetricName::Jerk, self.jerk)?,
            summarize(MetricName::Spacing, self.spacing)?,
            summarize(MetricName::TimeHeadway, self.headway)?,
            summarize(MetricName::RelativeSpeed, self.rel)?,
        ];
        Ok(StatsReport { subject: subject.into(), test_set_id: test_set_id.into(), summaries })
    }
}

/// Pools per-frame metrics over simulated episodes.
pub fn compute_report(rollouts: &[EpisodeRollout], subject: &str, test_set_id: &str) -> Result<StatsReport, StatsError> {
    if rollouts.is_empty() {
        return Err(StatsError::EmptyRollouts);
    }
    let mut pool = Pool::default();
    for r in rollouts {
        for s in &r.states {
            pool.push_state(s.gap, s.ego_v, s.rel_v);
        }
        let accels: Vec<f64> = r.actions.iter().map(|a| a.accel).collect();
        pool.push_accels(&accels, r.dt);
    }
    pool.report(subject, test_set_id)
}

/// Metrics of the recorded ego trajectories; acceleration is the first
/// difference of recorded speed.
pub fn natural_baseline(test: &Dataset) -> Result<StatsReport, StatsError> {
    if test.is_empty() {
        return Err(StatsError::EmptyDataset);
    }
    let mut pool = Pool::default();
    for e in &test.events {
        for (i, f) in e.frames.iter().enumerate() {
            pool.push_state(e.gap(i), f.ego_v, f.lead_v - f.ego_v);
        }
        pool.push_accels(&e.recorded_accels(), e.dt);
    }
    pool.report("natural", &test.fingerprint())
}

/// `(value - p10) / (p90 - p10)`, unclamped.
pub fn normalize(value: f64, baseline: &MetricSummary) -> Result<f64, StatsError> {
    let span = baseline.p90 - baseline.p10;
    if span <= 0.0 {
        return Err(StatsError::DegenerateBaseline(baseline.metric));
    }
    Ok((value - baseline.p10) / span)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    Above,
    Near,
    Below,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub metric: MetricName,
    pub candidate_mean: f64,
    pub baseline_mean: f64,
    pub normalized_candidate: f64,
    pub normalized_baseline: f64,
    /// Candidate std over the baseline's p10..p90 span.
    pub normalized_std: f64,
    pub direction: Direction,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub candidate: String,
    pub baseline: String,
    pub rows: Vec<ComparisonRow>,
}

/// Normalized means of the selected metrics and their direction relative to
/// the baseline's own normalized mean.
pub fn compare_reports(
    candidate: &StatsReport,
    baseline: &StatsReport,
    selected: &[MetricName],
) -> Result<Comparison, StatsError> {
    if selected.is_empty() {
        return Err(StatsError::NoneSelected);
    }
    let mut rows = Vec::with_capacity(selected.len());
    for &m in selected {
        let c = candidate.get(m).ok_or(StatsError::MissingMetric { metric: m, which: "candidate" })?;
        let b = baseline.get(m).ok_or(StatsError::MissingMetric { metric: m, which: "baseline" })?;
        let nc = normalize(c.mean, b)?;
        let nb = normalize(b.mean, b)?;
        let direction = if nc > nb + NEAR_BAND {
            Direction::Above
        } else if nc < nb - NEAR_BAND {
            Direction::Below
        } else {
            Direction::Near
        };
        rows.push(ComparisonRow {
            metric: m,
            candidate_mean: c.mean,
            baseline_mean: b.mean,
            normalized_candidate: nc,
            normalized_baseline: nb,
            normalized_std: c.std / (b.p90 - b.p10),
            direction,
        });
    }
    Ok(Comparison { candidate: candidate.subject.clone(), baseline: baseline.subject.clone(), rows })
}
