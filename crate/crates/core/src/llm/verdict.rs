//! Machine-readable decisions extracted from model output. The model may reason
//! freely; the decision is the last fenced ```json block.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::rewarddsl::parse;
use crate::statseval::MetricName;

/// What the pipeline asked for, with the constraints the answer must meet.
#[derive(Debug, Clone, PartialEq)]
pub enum Step {
    /// Re-rank retrieved styles; answers must come from `allowed`.
    SelectStyles { allowed: Vec<String> },
    /// Exactly `n` distinct metric names.
    SelectMetrics { n: usize },
    /// Between 1 and `m` reward programs.
    GenerateRewards { m: usize },
    /// `candidates` challengers named `candidate_1..`.
    JudgeAlignment { candidates: usize },
}

impl Step {
    pub fn name(&self) -> &'static str {
        match self {
            Step::SelectStyles { .. } => "select-style",
            Step::SelectMetrics { .. } => "select-metrics",
            Step::GenerateRewards { .. } => "generate-rewards",
            Step::JudgeAlignment { .. } => "judge-alignment",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", content = "index")]
pub enum AlignmentWinner {
    Provisional,
    /// 1-based candidate index.
    Candidate(usize),
    Tie,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "step")]
pub enum StructuredVerdict {
    SelectedStyles { ids: Vec<String> },
    SelectedMetrics { metrics: Vec<MetricName> },
    /// Valid reward sources plus a diagnostic for each rejected one.
    Rewards { sources: Vec<String>, diagnostics: Vec<String> },
    Alignment { winner: AlignmentWinner, rationale: String },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum VerdictError {
    #[error("no fenced ```json block in the response")]
    NoJsonBlock,
    #[error("the json block does not parse: {0}")]
    Json(String),
    #[error("schema violation: {0}")]
    Schema(String),
}

/// Contents of the last ```json fenced block.
fn last_json_block(raw: &str) -> Option<&str> {
    let start = raw.rfind("```json")?;
    let body = &raw[start + "```json".len()..];
    let end = body.find("```")?;
    Some(body[..end].trim())
}

fn strings(v: &Value, field: &str) -> Result<Vec<String>, VerdictError> {
    let arr = v
        .get(field)
        .and_then(Value::as_array)
        .ok_or_else(|| VerdictError::Schema(format!("expected an array field `{field}`")))?;
    arr.iter()
        .map(|x| x.as_str().map(str::to_string).ok_or_else(|| VerdictError::Schema(format!("`{field}` must hold strings"))))
        .collect()
}

fn distinct(items: &[String], field: &str) -> Result<(), VerdictError> {
    let set: BTreeSet<&String> = items.iter().collect();
    if set.len() != items.len() {
        return Err(VerdictError::Schema(format!("`{field}` repeats an entry")));
    }
    Ok(())
}

/// Validates the model's answer for `step`.
pub fn parse_verdict(step: &Step, raw: &str) -> Result<StructuredVerdict, VerdictError> {
    let block = last_json_block(raw).ok_or(VerdictError::NoJsonBlock)?;
    let v: Value = serde_json::from_str(block).map_err(|e| VerdictError::Json(e.to_string()))?;
    if !v.is_object() {
        return Err(VerdictError::Schema("the json block must be an object".into()));
    }
    match step {
        Step::SelectStyles { allowed } => {
            let ids = strings(&v, "selected")?;
            if ids.is_empty() {
                return Err(VerdictError::Schema("`selected` is empty".into()));
            }
            distinct(&ids, "selected")?;
            if let Some(bad) = ids.iter().find(|id| !allowed.contains(id)) {
                return Err(VerdictError::Schema(format!("`{bad}` is not one of the offered styles")));
            }
            Ok(StructuredVerdict::SelectedStyles { ids })
        }
        Step::SelectMetrics { n } => {
            let names = strings(&v, "metrics")?;
            if names.len() != *n {
                return Err(VerdictError::Schema(format!("expected exactly {n} metrics, got {}", names.len())));
            }
            distinct(&names, "metrics")?;
            let metrics = names
                .iter()
                .map(|s| MetricName::parse(s).ok_or_else(|| VerdictError::Schema(format!("unknown metric `{s}`"))))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(StructuredVerdict::SelectedMetrics { metrics })
        }
        Step::GenerateRewards { m } => {
            let raw_sources = strings(&v, "rewards")?;
            if raw_sources.is_empty() || raw_sources.len() > *m {
                return Err(VerdictError::Schema(format!("expected 1 to {m} rewards, got {}", raw_sources.len())));
            }
            let mut sources = Vec::new();
            let mut diagnostics = Vec::new();
            for (i, s) in raw_sources.into_iter().enumerate() {
                match parse(&s) {
                    Ok(_) => sources.push(s),
                    Err(d) => diagnostics.push(format!("reward {}: {d}", i + 1)),
                }
            }
            Ok(StructuredVerdict::Rewards { sources, diagnostics })
        }
        Step::JudgeAlignment { candidates } => {
            let w = v
                .get("winner")
                .and_then(Value::as_str)
                .ok_or_else(|| VerdictError::Schema("expected a string field `winner`".into()))?;
            let rationale = v
                .get("rationale")
                .and_then(Value::as_str)
                .ok_or_else(|| VerdictError::Schema("expected a string field `rationale`".into()))?
                .to_string();
            let winner = match w {
                "provisional" => AlignmentWinner::Provisional,
                "tie" => AlignmentWinner::Tie,
                other => {
                    let idx = other
                        .strip_prefix("candidate_")
                        .and_then(|s| s.parse::<usize>().ok())
                        .filter(|i| (1..=*candidates).contains(i))
                        .ok_or_else(|| VerdictError::Schema(format!("unknown winner `{other}`")))?;
                    AlignmentWinner::Candidate(idx)
                }
            };
            Ok(StructuredVerdict::Alignment { winner, rationale })
        }
    }
}
