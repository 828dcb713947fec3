//! Car-following trajectory data: the canonical CSV format, validation,
//! a synthetic IDM-follower generator and event-level train/test splits.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufReader, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::env::{integrate, A_MAX, A_MIN};
use crate::idm::{idm_accel, IdmParams};

/// Lead length used when the CSV omits the column.
pub const DEFAULT_LEAD_LENGTH: f64 = 4.5;
/// Tolerance on frame spacing.
pub const DT_TOLERANCE: f64 = 1e-9;

const REQUIRED_COLUMNS: [&str; 6] = ["event_id", "t", "lead_x", "lead_v", "ego_x", "ego_v"];
const LEAD_LENGTH_COLUMN: &str = "lead_length";

#[derive(Debug, Error)]
pub enum DataError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad header: expected `event_id,t,lead_x,lead_v,ego_x,ego_v[,lead_length]`, found `{0}`")]
    Header(String),
    #[error("row {row}: {message}")]
    MalformedRow { row: usize, message: String },
    #[error("event `{event_id}` row {row}: non-uniform time step (expected dt={expected}, found {found})")]
    NonUniformDt { event_id: String, row: usize, expected: f64, found: f64 },
    #[error("event `{event_id}` row {row}: negative speed")]
    NegativeSpeed { event_id: String, row: usize },
    #[error("event `{event_id}` row {row}: duplicate event id")]
    DuplicateEvent { event_id: String, row: usize },
    #[error("event `{event_id}`: {message}")]
    InvalidEvent { event_id: String, message: String },
    #[error("invalid synthetic dt {0} (supported: 0.04, 0.1)")]
    InvalidDt(f64),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("split needs at least 2 events, got {0}")]
    TooFewEvents(usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub t: f64,
    pub lead_x: f64,
    pub lead_v: f64,
    pub ego_x: f64,
    pub ego_v: f64,
}

/// One recorded lead/ego trajectory pair sampled at a uniform step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CarFollowingEvent {
    pub event_id: String,
    pub dt: f64,
    pub frames: Vec<Frame>,
    pub lead_length: f64,
}

impl CarFollowingEvent {
    /// Builds an event and checks its invariants.
    pub fn new(
        event_id: impl Into<String>,
        dt: f64,
        frames: Vec<Frame>,
        lead_length: f64,
    ) -> Result<Self, DataError> {
        let event = Self { event_id: event_id.into(), dt, frames, lead_length };
        event.validate()?;
        Ok(event)
    }

    pub fn validate(&self) -> Result<(), DataError> {
        let invalid = |message: String| DataError::InvalidEvent {
            event_id: self.event_id.clone(),
            message,
        };
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(invalid(format!("dt must be positive, got {}", self.dt)));
        }
        if !(self.lead_length > 0.0 && self.lead_length.is_finite()) {
            return Err(invalid(format!("lead_length must be positive, got {}", self.lead_length)));
        }
        let Some(first) = self.frames.first() else {
            return Err(invalid("no frames".into()));
        };
        for (i, f) in self.frames.iter().enumerate() {
            let values = [f.t, f.lead_x, f.lead_v, f.ego_x, f.ego_v];
            if values.iter().any(|v| !v.is_finite()) {
                return Err(invalid(format!("frame {i} has a non-finite value")));
            }
            if f.lead_v < 0.0 || f.ego_v < 0.0 {
                return Err(invalid(format!("frame {i} has a negative speed")));
            }
        }
        for (i, pair) in self.frames.windows(2).enumerate() {
            let step = pair[1].t - pair[0].t;
            if (step - self.dt).abs() > DT_TOLERANCE {
                return Err(invalid(format!(
                    "frame {} breaks the uniform step (dt={}, found {step})",
                    i + 1,
                    self.dt
                )));
            }
        }
        let gap0 = first.lead_x - self.lead_length - first.ego_x;
        if gap0 <= 0.0 {
            return Err(invalid(format!("initial gap {gap0} is not positive")));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    /// Bumper-to-bumper gap at frame `i`.
    pub fn gap(&self, i: usize) -> f64 {
        let f = &self.frames[i];
        f.lead_x - self.lead_length - f.ego_x
    }

    /// Ego acceleration by forward difference of recorded speed; one entry per step.
    pub fn recorded_accels(&self) -> Vec<f64> {
        self.frames
            .windows(2)
            .map(|w| (w[1].ego_v - w[0].ego_v) / self.dt)
            .collect()
    }

    /// Largest violation of `|x' - x - v dt| <= 0.5 a_max dt^2` over both vehicles,
    /// as (frame index, excess). `None` when every step is plausible.
    pub fn kinematic_violation(&self, a_max: f64) -> Option<(usize, f64)> {
        let bound = 0.5 * a_max * self.dt * self.dt + 1e-6;
        let mut worst: Option<(usize, f64)> = None;
        for (i, w) in self.frames.windows(2).enumerate() {
            for (x0, x1, v0) in [
                (w[0].ego_x, w[1].ego_x, w[0].ego_v),
                (w[0].lead_x, w[1].lead_x, w[0].lead_v),
            ] {
                let excess = (x1 - x0 - v0 * self.dt).abs() - bound;
                if excess > 0.0 && worst.is_none_or(|(_, e)| excess > e) {
                    worst = Some((i, excess));
                }
            }
        }
        worst
    }

    /// First `n` frames as a new event (at least one frame).
    pub fn truncated(&self, n: usize) -> Self {
        let n = n.clamp(1, self.frames.len());
        Self {
            event_id: self.event_id.clone(),
            dt: self.dt,
            frames: self.frames[..n].to_vec(),
            lead_length: self.lead_length,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitTag {
    Train,
    Test,
    All,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub events: Vec<CarFollowingEvent>,
    pub split_tag: SplitTag,
}

impl Dataset {
    pub fn new(events: Vec<CarFollowingEvent>, split_tag: SplitTag) -> Result<Self, DataError> {
        let mut seen = HashSet::new();
        for e in &events {
            if !seen.insert(e.event_id.as_str()) {
                return Err(DataError::DuplicateEvent { event_id: e.event_id.clone(), row: 0 });
            }
        }
        Ok(Self { events, split_tag })
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn get(&self, event_id: &str) -> Option<&CarFollowingEvent> {
        self.events.iter().find(|e| e.event_id == event_id)
    }

    pub fn ids(&self) -> Vec<&str> {
        self.events.iter().map(|e| e.event_id.as_str()).collect()
    }

    /// Stable short identifier of the event membership, used to tag reports.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        for e in &self.events {
            hasher.update(e.event_id.as_bytes());
            hasher.update([0u8]);
        }
        let digest = hasher.finalize();
        let hex: String = digest.iter().take(6).map(|b| format!("{b:02x}")).collect();
        format!("{}-{}", self.events.len(), hex)
    }

    /// The first `n` events (or all of them), as a probe set.
    pub fn head(&self, n: usize) -> Dataset {
        Dataset {
            events: self.events.iter().take(n).cloned().collect(),
            split_tag: self.split_tag,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitConfig {
    pub test_fraction: f64,
    pub rng_seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self { test_fraction: 0.15, rng_seed: 0 }
    }
}

pub fn load_events(path: impl AsRef<Path>) -> Result<Dataset, DataError> {
    let file = File::open(path)?;
    read_events(BufReader::new(file))
}

/// Parses the canonical CSV format. Row numbers in errors are 1-based file lines.
pub fn read_events<R: Read>(reader: R) -> Result<Dataset, DataError> {
    let mut csv = csv::ReaderBuilder::new().has_headers(true).trim(csv::Trim::All).from_reader(reader);
    let headers = csv
        .headers()
        .map_err(|e| DataError::MalformedRow { row: 1, message: e.to_string() })?
        .clone();
    let names: Vec<&str> = headers.iter().collect();
    let has_length = match names.as_slice() {
        [a, b, c, d, e, f] if [*a, *b, *c, *d, *e, *f] == REQUIRED_COLUMNS => false,
        [a, b, c, d, e, f, g]
            if [*a, *b, *c, *d, *e, *f] == REQUIRED_COLUMNS && *g == LEAD_LENGTH_COLUMN =>
        {
            true
        }
        _ => return Err(DataError::Header(names.join(","))),
    };

    struct Pending {
        id: String,
        first_row: usize,
        lead_length: f64,
        frames: Vec<Frame>,
    }

    let mut events = Vec::new();
    let mut seen: HashSet<String> = HashSet::new();
    let mut current: Option<Pending> = None;
    let mut last_dt = None;

    let finish = |p: Pending, last_dt: &mut Option<f64>| -> Result<CarFollowingEvent, DataError> {
        let dt = if p.frames.len() >= 2 {
            p.frames[1].t - p.frames[0].t
        } else {
            last_dt.unwrap_or(0.1)
        };
        if !(dt > 0.0) {
            return Err(DataError::NonUniformDt {
                event_id: p.id,
                row: p.first_row + 1,
                expected: f64::NAN,
                found: dt,
            });
        }
        for (i, w) in p.frames.windows(2).enumerate() {
            let step = w[1].t - w[0].t;
            if (step - dt).abs() > DT_TOLERANCE {
                return Err(DataError::NonUniformDt {
                    event_id: p.id,
                    row: p.first_row + i + 1,
                    expected: dt,
                    found: step,
                });
            }
        }
        *last_dt = Some(dt);
        CarFollowingEvent::new(p.id, dt, p.frames, p.lead_length)
    };

    for (idx, record) in csv.records().enumerate() {
        let row = idx + 2;
        let record = record.map_err(|e| DataError::MalformedRow { row, message: e.to_string() })?;
        let expected = if has_length { 7 } else { 6 };
        if record.len() != expected {
            return Err(DataError::MalformedRow {
                row,
                message: format!("expected {expected} fields, found {}", record.len()),
            });
        }
        let id = record[0].to_string();
        if id.is_empty() {
            return Err(DataError::MalformedRow { row, message: "empty event_id".into() });
        }
        let num = |col: usize| -> Result<f64, DataError> {
            let raw = &record[col];
            raw.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| DataError::MalformedRow {
                    row,
                    message: format!("column `{}`: `{raw}` is not a finite number", names[col]),
                })
        };
        let frame = Frame { t: num(1)?, lead_x: num(2)?, lead_v: num(3)?, ego_x: num(4)?, ego_v: num(5)? };
        let lead_length = if has_length { num(6)? } else { DEFAULT_LEAD_LENGTH };
        if frame.lead_v < 0.0 || frame.ego_v < 0.0 {
            return Err(DataError::NegativeSpeed { event_id: id, row });
        }

        let continues = current.as_ref().is_some_and(|p| p.id == id);
        if continues {
            current.as_mut().unwrap().frames.push(frame);
        } else {
            if let Some(done) = current.take() {
                events.push(finish(done, &mut last_dt)?);
            }
            if !seen.insert(id.clone()) {
                return Err(DataError::DuplicateEvent { event_id: id, row });
            }
            current = Some(Pending { id, first_row: row, lead_length, frames: vec![frame] });
        }
    }
    if let Some(done) = current.take() {
        events.push(finish(done, &mut last_dt)?);
    }
    Dataset::new(events, SplitTag::All)
}

pub fn write_events(path: impl AsRef<Path>, ds: &Dataset) -> Result<(), DataError> {
    let mut file = std::io::BufWriter::new(File::create(path)?);
    write_events_to(&mut file, ds)?;
    file.flush()?;
    Ok(())
}

pub fn write_events_to<W: Write>(out: &mut W, ds: &Dataset) -> Result<(), DataError> {
    writeln!(out, "event_id,t,lead_x,lead_v,ego_x,ego_v,lead_length")?;
    for e in &ds.events {
        for f in &e.frames {
            writeln!(
                out,
                "{},{},{},{},{},{},{}",
                e.event_id, f.t, f.lead_x, f.lead_v, f.ego_x, f.ego_v, e.lead_length
            )?;
        }
    }
    Ok(())
}

/// How the ego vehicle of a synthetic event is driven.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Follower {
    /// Fresh IDM parameters per event drawn from a highway driver population.
    Population,
    /// Every event uses exactly these parameters.
    Fixed(IdmParams),
    /// Parameters jittered by up to ±10% around a base set, per event.
    Around(IdmParams),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticSpec {
    pub n_events: usize,
    pub dt: f64,
    pub horizon: f64,
    pub seed: u64,
    pub follower: Follower,
}

const LEAD_MAX_SPEED: f64 = 35.0;
const LEAD_ACCEL_RANGE: (f64, f64) = (-3.0, 2.0);
const INITIAL_GAP_RANGE: (f64, f64) = (5.0, 80.0);

/// Synthetic stand-in for naturalistic car-following data.
pub fn generate_synthetic(
    n_events: usize,
    dt: f64,
    horizon: f64,
    style_seed: u64,
) -> Result<Dataset, DataError> {
    generate(&SyntheticSpec { n_events, dt, horizon, seed: style_seed, follower: Follower::Population })
}

pub fn generate(spec: &SyntheticSpec) -> Result<Dataset, DataError> {
    if !((spec.dt - 0.04).abs() < 1e-12 || (spec.dt - 0.1).abs() < 1e-12) {
        return Err(DataError::InvalidDt(spec.dt));
    }
    if spec.n_events == 0 {
        return Err(DataError::InvalidArgument("n_events must be at least 1".into()));
    }
    if !(spec.horizon >= 5.0) {
        return Err(DataError::InvalidArgument(format!("horizon must be >= 5 s, got {}", spec.horizon)));
    }
    let n_frames = (spec.horizon / spec.dt).round() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut events = Vec::with_capacity(spec.n_events);
    for i in 0..spec.n_events {
        let id = format!("syn-{}-{i:04}", spec.seed);
        let mut attempt = 0;
        let event = loop {
            attempt += 1;
            if let Some(e) = synth_event(&id, spec, n_frames, &mut rng) {
                break e;
            }
            if attempt >= 64 {
                return Err(DataError::InvalidEvent {
                    event_id: id,
                    message: "could not synthesize a collision-free event".into(),
                });
            }
        };
        events.push(event);
    }
    Dataset::new(events, SplitTag::All)
}

fn draw_params(follower: &Follower, rng: &mut ChaCha8Rng) -> IdmParams {
    match follower {
        Follower::Fixed(p) => *p,
        Follower::Population => IdmParams {
            v0: rng.random_range(25.0..35.0),
            time_headway: rng.random_range(1.0..2.2),
            a_max: rng.random_range(0.8..2.0),
            b: rng.random_range(1.2..2.5),
            s0: rng.random_range(1.5..3.0),
            delta: 4.0,
        },
        Follower::Around(base) => {
            let mut jitter = |v: f64| v * rng.random_range(0.9..1.1);
            IdmParams {
                v0: jitter(base.v0),
                time_headway: jitter(base.time_headway),
                a_max: jitter(base.a_max),
                b: jitter(base.b),
                s0: jitter(base.s0),
                delta: base.delta,
            }
        }
    }
}

fn synth_event(
    id: &str,
    spec: &SyntheticSpec,
    n_frames: usize,
    rng: &mut ChaCha8Rng,
) -> Option<CarFollowingEvent> {
    let dt = spec.dt;
    let params = draw_params(&spec.follower, rng);
    let lead_length = rng.random_range(4.0..5.0);

    let mut lead_v: f64 = rng.random_range(12.0..30.0);
    let mut ego_v: f64 = (lead_v + rng.random_range(-2.0..2.0)).max(0.0);
    let eq_gap = params.s0 + ego_v * params.time_headway;
    let gap0 = (eq_gap * rng.random_range(0.8..1.5)).clamp(INITIAL_GAP_RANGE.0, INITIAL_GAP_RANGE.1);
    let mut ego_x = 0.0;
    let mut lead_x = gap0 + lead_length;

    let mut seg_left = 0.0;
    let mut seg_accel = 0.0;
    let mut frames = Vec::with_capacity(n_frames);
    for k in 0..n_frames {
        frames.push(Frame { t: k as f64 * dt, lead_x, lead_v, ego_x, ego_v });
        if k + 1 == n_frames {
            break;
        }
        if seg_left <= 0.0 {
            seg_left = rng.random_range(2.0..8.0);
            let (lo, hi) = LEAD_ACCEL_RANGE;
            seg_accel = if rng.random_bool(0.3) {
                0.0
            } else if lead_v < 8.0 {
                rng.random_range(0.0..hi)
            } else if lead_v > 30.0 {
                rng.random_range(lo..0.0)
            } else {
                rng.random_range(lo..hi)
            };
        }
        seg_left -= dt;

        let gap = lead_x - lead_length - ego_x;
        let a_ego = idm_accel(&params, gap, ego_v, lead_v - ego_v).ok()?.clamp(A_MIN, A_MAX);

        let a_lead = seg_accel.clamp((0.0 - lead_v) / dt, (LEAD_MAX_SPEED - lead_v) / dt);
        lead_x += lead_v * dt + 0.5 * a_lead * dt * dt;
        lead_v = (lead_v + a_lead * dt).clamp(0.0, LEAD_MAX_SPEED);

        let (dx, v_next) = integrate(ego_v, a_ego, dt);
        ego_x += dx;
        ego_v = v_next;
        if lead_x - lead_length - ego_x <= 0.0 {
            return None;
        }
    }
    CarFollowingEvent::new(id, dt, frames, lead_length).ok()
}

/// Event-level split; `|test| = max(1, round(f * n))`, original order kept inside each part.
pub fn split_train_test(ds: &Dataset, cfg: &SplitConfig) -> Result<(Dataset, Dataset), DataError> {
    let n = ds.events.len();
    if n < 2 {
        return Err(DataError::TooFewEvents(n));
    }
    if !(cfg.test_fraction > 0.0 && cfg.test_fraction < 1.0) {
        return Err(DataError::InvalidArgument(format!(
            "test_fraction must be in (0, 1), got {}",
            cfg.test_fraction
        )));
    }
    let n_test = ((cfg.test_fraction * n as f64).round() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    order.shuffle(&mut rng);
    let mut is_test = vec![false; n];
    for &i in &order[..n_test] {
        is_test[i] = true;
    }
    let (mut train, mut test) = (Vec::with_capacity(n - n_test), Vec::with_capacity(n_test));
    for (e, t) in ds.events.iter().zip(is_test) {
        if t {
            test.push(e.clone());
        } else {
            train.push(e.clone());
        }
    }
    Ok((
        Dataset { events: train, split_tag: SplitTag::Train },
        Dataset { events: test, split_tag: SplitTag::Test },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    const FIXTURE: &str = "event_id,t,lead_x,lead_v,ego_x,ego_v
a,0,30,10,5.5,10
a,0.04,30.4,10,5.9,10
a,0.08,30.8,10,6.3,10
b,0,50,20,10,20
b,0.04,50.8,20,10.8,20
";

    #[test]
    fn loads_two_events_with_inferred_dt() {
        let ds = read_events(FIXTURE.as_bytes()).unwrap();
        assert_eq!(ds.len(), 2);
        for e in &ds.events {
            assert!((e.dt - 0.04).abs() < 1e-12);
            assert_eq!(e.lead_length, DEFAULT_LEAD_LENGTH);
        }
        assert_eq!(ds.events[0].frames.len(), 3);
    }

    #[test]
    fn gap_in_time_names_event_and_row() {
        let src = "event_id,t,lead_x,lead_v,ego_x,ego_v
a,0,30,10,5.5,10
a,0.1,31,10,6.5,10
b,0,50,20,10,20
b,0.1,52,20,12,20
b,0.3,56,20,16,20
";
        match read_events(src.as_bytes()) {
            Err(DataError::NonUniformDt { event_id, row, .. }) => {
                assert_eq!(event_id, "b");
                assert_eq!(row, 6);
            }
            other => panic!("expected NonUniformDt, got {other:?}"),
        }
    }

    #[test]
    fn header_only_is_empty() {
        let ds = read_events("event_id,t,lead_x,lead_v,ego_x,ego_v,lead_length\n".as_bytes()).unwrap();
        assert!(ds.is_empty());
    }

    #[test]
    fn rejects_negative_speed_duplicates_and_bad_header() {
        let neg = "event_id,t,lead_x,lead_v,ego_x,ego_v\na,0,30,-1,5,10\n";
        assert!(matches!(read_events(neg.as_bytes()), Err(DataError::NegativeSpeed { row: 2, .. })));

        let dup = "event_id,t,lead_x,lead_v,ego_x,ego_v
a,0,30,10,5,10
b,0,30,10,5,10
a,0,30,10,5,10
";
        assert!(matches!(read_events(dup.as_bytes()), Err(DataError::DuplicateEvent { row: 4, .. })));

        let bad = "id,t,lead_x,lead_v,ego_x,ego_v\n";
        assert!(matches!(read_events(bad.as_bytes()), Err(DataError::Header(_))));

        let junk = "event_id,t,lead_x,lead_v,ego_x,ego_v\na,0,thirty,10,5,10\n";
        assert!(matches!(read_events(junk.as_bytes()), Err(DataError::MalformedRow { row: 2, .. })));
    }

    #[test]
    fn csv_round_trip() {
        let ds = generate_synthetic(3, 0.1, 6.0, 11).unwrap();
        let mut buf = Vec::new();
        write_events_to(&mut buf, &ds).unwrap();
        let back = read_events(buf.as_slice()).unwrap();
        assert_eq!(back.events, ds.events);
    }

    #[test]
    fn synthetic_frame_counts() {
        let ds = generate_synthetic(10, 0.1, 60.0, 7).unwrap();
        assert_eq!(ds.len(), 10);
        assert!(ds.events.iter().all(|e| e.frames.len() == 600));
        let one = generate_synthetic(1, 0.1, 5.0, 0).unwrap();
        assert_eq!(one.events[0].frames.len(), 50);
        assert!(matches!(generate_synthetic(1, 0.2, 10.0, 0), Err(DataError::InvalidDt(_))));
        assert!(generate_synthetic(0, 0.1, 10.0, 0).is_err());
        assert!(generate_synthetic(1, 0.1, 4.0, 0).is_err());
    }

    #[test]
    fn synthetic_is_deterministic_and_seed_sensitive() {
        let a = generate_synthetic(4, 0.1, 10.0, 3).unwrap();
        let b = generate_synthetic(4, 0.1, 10.0, 3).unwrap();
        let (mut ba, mut bb) = (Vec::new(), Vec::new());
        write_events_to(&mut ba, &a).unwrap();
        write_events_to(&mut bb, &b).unwrap();
        assert_eq!(ba, bb);
        for s in 0..10u64 {
            let x = generate_synthetic(2, 0.1, 10.0, 100 + 2 * s).unwrap();
            let y = generate_synthetic(2, 0.1, 10.0, 101 + 2 * s).unwrap();
            let differs = x.events.iter().zip(&y.events).any(|(ex, ey)| {
                ex.frames.iter().zip(&ey.frames).any(|(fx, fy)| fx != fy)
            });
            assert!(differs, "seed pair {s} produced identical frames");
        }
    }

    #[test]
    fn synthetic_events_are_plausible() {
        let ds = generate_synthetic(20, 0.04, 20.0, 5).unwrap();
        for e in &ds.events {
            assert_eq!(e.kinematic_violation(5.0), None, "event {}", e.event_id);
            let g0 = e.gap(0);
            assert!((INITIAL_GAP_RANGE.0..=INITIAL_GAP_RANGE.1).contains(&g0));
        }
    }

    #[test]
    fn split_sizes() {
        let ds = generate_synthetic(100, 0.1, 5.0, 1).unwrap();
        let cfg = SplitConfig { test_fraction: 0.15, rng_seed: 9 };
        let (train, test) = split_train_test(&ds, &cfg).unwrap();
        assert_eq!((train.len(), test.len()), (85, 15));
        let (train2, test2) = split_train_test(&ds, &cfg).unwrap();
        assert_eq!(test.ids(), test2.ids());
        assert_eq!(train.ids(), train2.ids());

        let two = ds.head(2);
        let (tr, te) = split_train_test(&two, &cfg).unwrap();
        assert_eq!((tr.len(), te.len()), (1, 1));

        assert!(matches!(split_train_test(&ds.head(1), &cfg), Err(DataError::TooFewEvents(1))));
    }
}
