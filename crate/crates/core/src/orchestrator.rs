//! Command in, driving style out: retrieval, fuzzy memory, candidate reward
//! generation, parallel training, evaluation and the database update.
//!
//! The database is only mutated on the calling thread after every candidate
//! has settled, so a caller that owns the database is its single writer.

use std::sync::mpsc;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::llm::prompts::{render, task_prompt, Template};
use crate::llm::{parse_verdict, AlignmentWinner, ChatTurn, LanguageModel, LlmError, Step, StructuredVerdict};
use crate::rewarddsl::seeds::{seed_corpus, SeedKind};
use crate::rewarddsl::{parse, validate_reward, RewardProgram};
use crate::rl::{ppo_train, rollout, ActionMode, PolicyParams, RlError, TrainConfig, TrainResult};
use crate::statseval::{
    compare_reports, compute_report, natural_baseline, Comparison, MetricName, StatsError, StatsReport,
};
use crate::styledb::{
    retrieval_text, CommandEntry, DbError, Provenance, ReplaceOutcome, StyleDatabase, StyleRecord, Verdict,
};
use crate::trajdata::Dataset;

/// Command complexity tag; metadata only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Level {
    I,
    II,
    III,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserCommand {
    pub text: String,
    /// Seconds since the Unix epoch. Supplied by the caller so runs replay exactly.
    pub received_at: u64,
    #[serde(default)]
    pub level_hint: Option<Level>,
}

impl UserCommand {
    pub fn new(text: impl Into<String>, received_at: u64) -> Self {
        Self { text: text.into(), received_at, level_hint: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Styles retrieved before re-ranking.
    pub k: usize,
    /// Candidate rewards generated per command.
    pub m: usize,
    /// Metrics the judge compares.
    pub n: usize,
    /// Overrides the backend's own fuzzy-memory threshold.
    pub fuzzy_threshold: Option<f64>,
    pub train_cfg: TrainConfig,
    pub keep_both_on_tie: bool,
    /// Wall-clock limit for candidate training; the provisional answer stands on expiry.
    pub training_budget_s: Option<f64>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            k: 3,
            m: 2,
            n: 2,
            fuzzy_threshold: None,
            train_cfg: TrainConfig::default(),
            keep_both_on_tie: false,
            training_budget_s: None,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), PipelineError> {
        if self.k == 0 {
            return Err(PipelineError::Config("k must be at least 1".into()));
        }
        if self.n == 0 || self.n > MetricName::ALL.len() {
            return Err(PipelineError::Config(format!("n must lie in 1..={}", MetricName::ALL.len())));
        }
        if let Some(t) = self.fuzzy_threshold {
            if !(t > 0.0 && t <= 1.0) {
                return Err(PipelineError::Config("fuzzy_threshold must lie in (0, 1]".into()));
            }
        }
        if let Some(b) = self.training_budget_s {
            if !(b > 0.0 && b.is_finite()) {
                return Err(PipelineError::Config("training_budget_s must be positive".into()));
            }
        }
        self.train_cfg.validate().map_err(|e| PipelineError::Config(e.to_string()))
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("command text is empty")]
    EmptyCommand,
    #[error("{0} dataset is empty")]
    EmptyData(&'static str),
    #[error("the style database has no active records")]
    EmptyDatabase,
    #[error("invalid pipeline config: {0}")]
    Config(String),
    #[error("language model ({backend}) failed: {source}")]
    Llm {
        backend: String,
        #[source]
        source: LlmError,
    },
    #[error("{step} answer rejected after repair: {message}")]
    Verdict { step: &'static str, message: String },
    #[error("record `{0}` has no trained policy")]
    MissingPolicy(String),
    #[error("stored reward of `{id}` is invalid: {message}")]
    StoredReward { id: String, message: String },
    #[error(transparent)]
    Db(#[from] DbError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Rl(#[from] RlError),
}

/// Hooks for callers that serve the provisional answer while training runs.
pub trait PipelineObserver: Send + Sync {
    fn provisional_ready(&self, _record_id: &str) {}
    fn training_started(&self, _candidates: usize) {}
    fn training_finished(&self, _completed: usize) {}
}

/// Observer that ignores everything.
pub struct NoObserver;
impl PipelineObserver for NoObserver {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Retrieved {
    pub id: String,
    pub similarity: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CandidateOutcome {
    pub id: String,
    pub reward_source: String,
    pub train_result: Option<TrainResult>,
    pub stats: Option<StatsReport>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, Serialize)]
pub struct PipelineOutcome {
    pub command: String,
    pub chosen_record_id: String,
    pub provisional_record_id: String,
    pub fuzzy_hit: Option<Retrieved>,
    pub retrieved: Vec<Retrieved>,
    pub candidates: Vec<CandidateOutcome>,
    pub verdicts: Vec<StructuredVerdict>,
    pub selected_metrics: Vec<MetricName>,
    /// Normalized comparison of the provisional policy and each candidate with
    /// natural driving on the selected metrics.
    pub alignment_summary: Vec<Comparison>,
    pub replacement: Option<String>,
    pub trainings_launched: usize,
    /// Ordered pipeline milestones.
    pub timeline: Vec<String>,
    pub degraded: Vec<String>,
}

impl PipelineOutcome {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("outcome serializes")
    }
}

/// Training and evaluation data for a pipeline run.
#[derive(Debug, Clone)]
pub struct PipelineData {
    pub train: Arc<Dataset>,
    pub test: Dataset,
}

const SYSTEM_PROMPT: &str = "You help customize an automated car-following controller. Reason step by step in \
plain text, then end with exactly one fenced json block that answers the task.";

fn llm_err(llm: &dyn LanguageModel) -> impl Fn(LlmError) -> PipelineError + '_ {
    move |source| PipelineError::Llm { backend: llm.name(), source }
}

/// Asks for a structured answer, re-prompting once with the problem on failure.
fn ask(llm: &dyn LanguageModel, step: &Step, prompt: &str) -> Result<StructuredVerdict, PipelineError> {
    let mut turns = vec![ChatTurn::system(SYSTEM_PROMPT), ChatTurn::user(prompt)];
    let raw = llm.chat(&turns).map_err(llm_err(llm))?;
    match parse_verdict(step, &raw) {
        Ok(v) => Ok(v),
        Err(e) => {
            turns.push(ChatTurn::assistant(raw));
            turns.push(ChatTurn::user(repair_prompt(prompt, &e.to_string())));
            let raw = llm.chat(&turns).map_err(llm_err(llm))?;
            parse_verdict(step, &raw).map_err(|e| PipelineError::Verdict { step: step.name(), message: e.to_string() })
        }
    }
}

/// The original task followed by the repair note, so the task tag stays first.
fn repair_prompt(prompt: &str, problem: &str) -> String {
    format!("{prompt}\n{}", render(Template::Repair, &[("problem", problem)]))
}

fn short_hash(parts: &[&str]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p.as_bytes());
        h.update([0]);
    }
    h.finalize().iter().take(4).map(|b| format!("{b:02x}")).collect()
}

fn compile(id: &str, source: &str) -> Result<RewardProgram, PipelineError> {
    let expr = parse(source).map_err(|d| PipelineError::StoredReward { id: id.into(), message: d.to_string() })?;
    Ok(RewardProgram::compile(&expr))
}

/// Mean-mode rollouts of `policy` on every test event, pooled into a report.
pub fn evaluate_policy(
    policy: &PolicyParams,
    reward: &RewardProgram,
    test: &Dataset,
    subject: &str,
) -> Result<StatsReport, PipelineError> {
    let rollouts = test
        .events
        .iter()
        .map(|e| rollout(policy, reward, e, ActionMode::Mean, 0))
        .collect::<Result<Vec<_>, _>>()
        .map_err(RlError::from)?;
    Ok(compute_report(&rollouts, subject, &test.fingerprint())?)
}

fn record_stats(db: &StyleDatabase, id: &str, test: &Dataset) -> Result<StatsReport, PipelineError> {
    let rec = db.get(id).ok_or_else(|| DbError::MissingRecord(id.into()))?;
    if let Some(s) = &rec.stats {
        if s.test_set_id == test.fingerprint() {
            return Ok(s.clone());
        }
    }
    let policy = db.policy(id).ok_or_else(|| PipelineError::MissingPolicy(id.into()))?;
    evaluate_policy(policy, &compile(id, &rec.reward_source)?, test, id)
}

fn command_entry(cmd: &UserCommand, embedding: &[f64]) -> CommandEntry {
    CommandEntry { text: cmd.text.clone(), timestamp: cmd.received_at, embedding: embedding.to_vec() }
}

/// Runs one command through the pipeline and applies the result to `db`.
pub fn run_command(
    cmd: &UserCommand,
    db: &mut StyleDatabase,
    data: &PipelineData,
    llm: &dyn LanguageModel,
    cfg: &PipelineConfig,
    observer: &dyn PipelineObserver,
) -> Result<PipelineOutcome, PipelineError> {
    cfg.validate()?;
    let text = cmd.text.trim();
    if text.is_empty() {
        return Err(PipelineError::EmptyCommand);
    }
    if data.test.is_empty() {
        return Err(PipelineError::EmptyData("test"));
    }
    if db.is_empty() {
        return Err(PipelineError::EmptyDatabase);
    }
    let mut out = PipelineOutcome {
        command: cmd.text.clone(),
        chosen_record_id: String::new(),
        provisional_record_id: String::new(),
        fuzzy_hit: None,
        retrieved: Vec::new(),
        candidates: Vec::new(),
        verdicts: Vec::new(),
        selected_metrics: Vec::new(),
        alignment_summary: Vec::new(),
        replacement: None,
        trainings_launched: 0,
        timeline: Vec::new(),
        degraded: Vec::new(),
    };

    let query = llm.embed(text).map_err(llm_err(llm))?;
    out.timeline.push("embedded".into());

    let threshold = cfg.fuzzy_threshold.unwrap_or_else(|| llm.fuzzy_threshold());
    if let Some((rec, sim)) = db.fuzzy_lookup(&query, threshold)? {
        let id = rec.id.clone();
        out.fuzzy_hit = Some(Retrieved { id: id.clone(), similarity: sim });
        out.timeline.push(format!("fuzzy_hit:{id}"));
        observer.provisional_ready(&id);
        db.record_command(&id, command_entry(cmd, &query))?;
        out.provisional_record_id = id.clone();
        out.chosen_record_id = id;
        return Ok(out);
    }

    let hits = db.top_k(&query, cfg.k)?;
    out.retrieved = hits.iter().map(|(r, s)| Retrieved { id: r.id.clone(), similarity: *s }).collect();
    out.timeline.push(format!("retrieved:{}", out.retrieved.len()));
    let listing: Vec<Value> = hits
        .iter()
        .map(|(r, s)| {
            json!({
                "id": r.id,
                "similarity": s,
                "reward_source": r.reward_source,
                "stats": r.stats.as_ref().map(StatsReport::digest),
            })
        })
        .collect();
    let table = listing
        .iter()
        .map(|c| {
            format!(
                "## {}\nreward:\n{}\nstats: {}\n",
                c["id"].as_str().unwrap_or(""),
                c["reward_source"].as_str().unwrap_or("").trim(),
                c["stats"].as_str().unwrap_or("not evaluated")
            )
        })
        .collect::<Vec<_>>()
        .join("\n");
    let allowed: Vec<String> = out.retrieved.iter().map(|r| r.id.clone()).collect();
    let prompt = task_prompt(
        Template::SelectStyle,
        &[("command", text), ("k", &allowed.len().to_string()), ("candidates", &table)],
        &json!({"command": text, "candidates": listing}),
    );
    let verdict = ask(llm, &Step::SelectStyles { allowed }, &prompt)?;
    let provisional_id = match &verdict {
        StructuredVerdict::SelectedStyles { ids } => ids[0].clone(),
        _ => unreachable!("select-styles step yields selected styles"),
    };
    out.verdicts.push(verdict);
    out.provisional_record_id = provisional_id.clone();
    out.chosen_record_id = provisional_id.clone();
    out.timeline.push(format!("provisional:{provisional_id}"));
    observer.provisional_ready(&provisional_id);

    if cfg.m == 0 {
        db.record_command(&provisional_id, command_entry(cmd, &query))?;
        return Ok(out);
    }
    if data.train.is_empty() {
        return Err(PipelineError::EmptyData("training"));
    }

    let template = db.get(&provisional_id).ok_or_else(|| DbError::MissingRecord(provisional_id.clone()))?;
    let template_source = template.reward_source.clone();
    let probe = data.train.head(cfg.train_cfg.probe_events);
    let sources = generate_candidates(llm, text, &provisional_id, &template_source, cfg.m, &probe, &mut out)?;
    if sources.is_empty() {
        out.degraded.push("no candidate reward passed validation; the provisional style stands".into());
        db.record_command(&provisional_id, command_entry(cmd, &query))?;
        return Ok(out);
    }

    let tag = short_hash(&[text, &cmd.received_at.to_string(), &db.version().to_string()]);
    let ids: Vec<String> = (1..=sources.len()).map(|i| format!("gen-{tag}-{i}")).collect();
    out.trainings_launched = sources.len();
    out.timeline.push(format!("training_started:{}", sources.len()));
    observer.training_started(sources.len());
    let results = train_candidates(&sources, &data.train, &cfg.train_cfg, cfg.training_budget_s);
    let completed = results.iter().filter(|r| matches!(r, Some(Ok(_)))).count();
    out.timeline.push(format!("training_finished:{completed}"));
    observer.training_finished(completed);

    let mut trained: Vec<(usize, PolicyParams, StatsReport)> = Vec::new();
    for (i, (src, res)) in sources.iter().zip(results).enumerate() {
        let mut cand = CandidateOutcome {
            id: ids[i].clone(),
            reward_source: src.clone(),
            train_result: None,
            stats: None,
            error: None,
        };
        match res {
            None => {
                cand.error = Some("training budget expired".into());
                out.degraded.push(format!("{} did not finish within the training budget", ids[i]));
            }
            Some(Err(e)) => {
                cand.error = Some(e.to_string());
                out.degraded.push(format!("{} failed to train: {e}", ids[i]));
            }
            Some(Ok(tr)) => {
                let report = evaluate_policy(&tr.best_policy, &compile(&ids[i], src)?, &data.test, &ids[i])?;
                cand.stats = Some(report.clone());
                trained.push((i, tr.best_policy.clone(), report));
                cand.train_result = Some(tr);
            }
        }
        out.candidates.push(cand);
    }
    if trained.is_empty() {
        db.record_command(&provisional_id, command_entry(cmd, &query))?;
        return Ok(out);
    }

    let baseline = natural_baseline(&data.test)?;
    let provisional_stats = record_stats(db, &provisional_id, &data.test)?;
    let candidate_stats: Vec<&StatsReport> = trained.iter().map(|t| &t.2).collect();
    let (verdict, metrics, summary) =
        evaluate_alignment(llm, text, &provisional_stats, &candidate_stats, &baseline, cfg.n)?;
    out.selected_metrics = metrics;
    out.alignment_summary = summary;
    let winner = match &verdict[1] {
        StructuredVerdict::Alignment { winner, .. } => *winner,
        _ => unreachable!("judge step yields an alignment verdict"),
    };
    out.verdicts.extend(verdict);
    out.timeline.push("judged".into());

    // the judge numbers trained candidates, which may skip failed ones
    let (db_verdict, pick) = match winner {
        AlignmentWinner::Candidate(j) => (Verdict::ChallengerBetter, j - 1),
        AlignmentWinner::Tie => (Verdict::Tie, 0),
        AlignmentWinner::Provisional => (Verdict::IncumbentBetter, 0),
    };
    let (idx, policy, report) = trained.swap_remove(pick);
    let source = &sources[idx];
    let embedding = llm.embed(&retrieval_text(source, Some(&report))).map_err(llm_err(llm))?;
    let challenger = StyleRecord {
        id: ids[idx].clone(),
        reward_source: source.clone(),
        policy_ref: StyleRecord::policy_ref_for(&ids[idx]),
        stats: Some(report),
        commands: Vec::new(),
        embedding,
        provenance: Provenance::Generated,
        retired_by: None,
    };
    let outcome = db.replace_if_better(&provisional_id, challenger, Some(policy), db_verdict, cfg.keep_both_on_tie)?;
    out.replacement = Some(
        match outcome {
            ReplaceOutcome::Replaced => "replaced",
            ReplaceOutcome::Kept => "kept",
            ReplaceOutcome::KeptBoth => "kept_both",
        }
        .into(),
    );
    if outcome == ReplaceOutcome::Replaced {
        out.chosen_record_id = ids[idx].clone();
    }
    db.record_command(&out.chosen_record_id, command_entry(cmd, &query))?;
    out.timeline.push(format!("chosen:{}", out.chosen_record_id));
    Ok(out)
}

/// Asks for up to `m` variants of the template reward and keeps those that
/// parse and stay finite on `probe`. Rejected ones trigger one repair round.
fn generate_candidates(
    llm: &dyn LanguageModel,
    command: &str,
    template_id: &str,
    template: &str,
    m: usize,
    probe: &Dataset,
    out: &mut PipelineOutcome,
) -> Result<Vec<String>, PipelineError> {
    let prompt = task_prompt(
        Template::GenerateRewards,
        &[("command", command), ("template_id", template_id), ("template", template.trim()), ("m", &m.to_string())],
        &json!({"command": command, "m": m, "template_id": template_id, "template": template}),
    );
    let step = Step::GenerateRewards { m };
    let mut accepted: Vec<String> = Vec::new();
    let mut problems: Vec<String> = Vec::new();
    let absorb = |v: &StructuredVerdict, accepted: &mut Vec<String>, problems: &mut Vec<String>| {
        if let StructuredVerdict::Rewards { sources, diagnostics } = v {
            problems.extend(diagnostics.iter().cloned());
            for s in sources {
                if accepted.len() >= m || accepted.contains(s) {
                    continue;
                }
                match screen(s, probe) {
                    Ok(()) => accepted.push(s.clone()),
                    Err(e) => problems.push(e),
                }
            }
        }
    };
    let first = ask(llm, &step, &prompt)?;
    absorb(&first, &mut accepted, &mut problems);
    out.verdicts.push(first);
    if !problems.is_empty() {
        out.degraded.extend(problems.iter().map(|p| format!("rejected candidate: {p}")));
        if accepted.len() < m {
            let retry = repair_prompt(&prompt, &problems.join("; "));
            let mut later = Vec::new();
            match ask(llm, &step, &retry) {
                Ok(v) => {
                    absorb(&v, &mut accepted, &mut later);
                    out.verdicts.push(v);
                }
                Err(PipelineError::Verdict { message, .. }) => later.push(message),
                Err(e) => return Err(e),
            }
            out.degraded.extend(later.iter().map(|p| format!("rejected candidate after repair: {p}")));
        }
    }
    out.timeline.push(format!("candidates:{}", accepted.len()));
    Ok(accepted)
}

fn screen(source: &str, probe: &Dataset) -> Result<(), String> {
    let expr = parse(source).map_err(|d| d.to_string())?;
    let report = validate_reward(&expr, probe)?;
    match report.offending {
        Some((event, step)) if !report.finite => Err(format!("non-finite reward on event {event} step {step}")),
        _ => Ok(()),
    }
}

/// Trains every candidate on its own thread. `None` marks a candidate that
/// missed the budget; its thread is left to finish in the background.
fn train_candidates(
    sources: &[String],
    train: &Arc<Dataset>,
    cfg: &TrainConfig,
    budget_s: Option<f64>,
) -> Vec<Option<Result<TrainResult, RlError>>> {
    let (tx, rx) = mpsc::channel();
    for (i, src) in sources.iter().enumerate() {
        let tx = tx.clone();
        let train = Arc::clone(train);
        let cfg = cfg.clone();
        let src = src.clone();
        std::thread::spawn(move || {
            let res = match parse(&src) {
                Ok(expr) => ppo_train(&RewardProgram::compile(&expr), &train, &cfg),
                Err(d) => Err(RlError::Config(d.to_string())),
            };
            let _ = tx.send((i, res));
        });
    }
    drop(tx);
    let deadline = budget_s.map(|b| Instant::now() + Duration::from_secs_f64(b));
    let mut results: Vec<Option<Result<TrainResult, RlError>>> = (0..sources.len()).map(|_| None).collect();
    for _ in 0..sources.len() {
        let msg = match deadline {
            Some(d) => match rx.recv_timeout(d.saturating_duration_since(Instant::now())) {
                Ok(m) => m,
                Err(_) => break,
            },
            None => match rx.recv() {
                Ok(m) => m,
                Err(_) => break,
            },
        };
        results[msg.0] = Some(msg.1);
    }
    results
}

/// Selects `n` metrics and asks for a verdict between the provisional policy
/// and the candidates. Returns both verdicts, the metrics and the tables shown
/// to the judge.
pub fn evaluate_alignment(
    llm: &dyn LanguageModel,
    command: &str,
    provisional: &StatsReport,
    candidates: &[&StatsReport],
    baseline: &StatsReport,
    n: usize,
) -> Result<(Vec<StructuredVerdict>, Vec<MetricName>, Vec<Comparison>), PipelineError> {
    let prompt = task_prompt(
        Template::SelectMetrics,
        &[("command", command), ("baseline", &baseline.digest()), ("n", &n.to_string())],
        &json!({"command": command, "n": n, "baseline": baseline.digest()}),
    );
    let metric_verdict = ask(llm, &Step::SelectMetrics { n }, &prompt)?;
    let metrics = match &metric_verdict {
        StructuredVerdict::SelectedMetrics { metrics } => metrics.clone(),
        _ => unreachable!("select-metrics step yields metrics"),
    };

    let mut summary = vec![compare_reports(provisional, baseline, &metrics)?];
    for c in candidates {
        summary.push(compare_reports(c, baseline, &metrics)?);
    }
    let labels: Vec<String> =
        std::iter::once("provisional".to_string()).chain((1..=candidates.len()).map(|i| format!("candidate_{i}"))).collect();
    let tables = labels
        .iter()
        .zip(&summary)
        .map(|(label, cmp)| {
            let rows = cmp
                .rows
                .iter()
                .map(|r| {
                    format!(
                        "  {}: {:.3} (natural {:.3}, spread {:.3}, raw mean {:.3} {})",
                        r.metric,
                        r.normalized_candidate,
                        r.normalized_baseline,
                        r.normalized_std,
                        r.candidate_mean,
                        r.metric.unit()
                    )
                })
                .collect::<Vec<_>>()
                .join("\n");
            format!("{label}:\n{rows}")
        })
        .collect::<Vec<_>>()
        .join("\n\n");
    let reports: Vec<Value> = labels
        .iter()
        .zip(&summary)
        .map(|(label, cmp)| json!({"label": label, "rows": cmp.rows}))
        .collect();
    let names: Vec<&str> = metrics.iter().map(|m| m.as_str()).collect();
    let prompt = task_prompt(
        Template::JudgeAlignment,
        &[("command", command), ("metrics", &names.join(", ")), ("tables", &tables)],
        &json!({"command": command, "metrics": names, "reports": reports}),
    );
    let judge = ask(llm, &Step::JudgeAlignment { candidates: candidates.len() }, &prompt)?;
    Ok((vec![metric_verdict, judge], metrics, summary))
}

/// Trains and evaluates every seed reward and returns a database holding them.
pub fn seed_database(
    llm: &dyn LanguageModel,
    train: &Dataset,
    test: &Dataset,
    train_cfg: &TrainConfig,
) -> Result<StyleDatabase, PipelineError> {
    if train.is_empty() {
        return Err(PipelineError::EmptyData("training"));
    }
    if test.is_empty() {
        return Err(PipelineError::EmptyData("test"));
    }
    let mut db: Option<StyleDatabase> = None;
    for seed in seed_corpus() {
        let program = compile(seed.id, seed.source)?;
        let result = ppo_train(&program, train, train_cfg)?;
        let stats = evaluate_policy(&result.best_policy, &program, test, seed.id)?;
        let embedding = llm.embed(&retrieval_text(seed.source, Some(&stats))).map_err(llm_err(llm))?;
        let provenance = match seed.kind {
            SeedKind::Human => Provenance::SeedHuman,
            SeedKind::DataDriven | SeedKind::Mixed => Provenance::SeedDataDriven,
        };
        let record = StyleRecord {
            id: seed.id.to_string(),
            reward_source: seed.source.to_string(),
            policy_ref: StyleRecord::policy_ref_for(seed.id),
            stats: Some(stats),
            commands: Vec::new(),
            embedding,
            provenance,
            retired_by: None,
        };
        db.get_or_insert_with(|| StyleDatabase::new(record.embedding.len())).insert(record, Some(result.best_policy))?;
    }
    Ok(db.expect("the seed corpus is not empty"))
}
