//! Deterministic stand-in for a language model. Responses come from ordered
//! rules over the last user turn; a few built-in responders read the prompt's
//! context block and answer like a cautious model would.

use std::collections::BTreeMap;
use std::path::Path;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::embed::{normalize, trigram_embedding, TRIGRAM_DIM};
use super::prompts::{context_of, task_of};
use super::{ChatTurn, LanguageModel, LlmError, Role, HASHED_FUZZY_THRESHOLD};
use crate::rewarddsl::strip_comments;
use crate::statseval::MetricName;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Matcher {
    /// Case-insensitive substring.
    Contains(String),
    Regex(String),
    Any(bool),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Response {
    Text(String),
    Builtin(Builtin),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Builtin {
    StyleSelector,
    MetricSelector,
    RewardVariants,
    AlignmentJudge,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    #[serde(default)]
    pub name: String,
    #[serde(rename = "match")]
    pub matcher: Matcher,
    pub response: Response,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum EmbeddingEntry {
    /// Explicit vector, zero-padded to the embedding width and normalized.
    Vector { vector: Vec<f64> },
    /// Close to another text's embedding: `normalize(e(like) + blend * trigram(self))`.
    Like { like: String, blend: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScriptedRules {
    pub rules: Vec<Rule>,
    #[serde(default)]
    pub embeddings: BTreeMap<String, EmbeddingEntry>,
}

impl ScriptedRules {
    pub fn builtin() -> Self {
        serde_json::from_str(include_str!("../../assets/scripted_rules.json")).expect("bundled rules parse")
    }

    pub fn from_file(path: &Path) -> Result<Self, LlmError> {
        let raw = std::fs::read_to_string(path).map_err(|e| LlmError::Config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&raw).map_err(|e| LlmError::Config(format!("{}: {e}", path.display())))
    }
}

enum Compiled {
    Contains(String),
    Regex(Regex),
    Any,
}

pub struct ScriptedModel {
    rules: Vec<(Compiled, Response)>,
    embeddings: BTreeMap<String, EmbeddingEntry>,
}

fn key(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

impl ScriptedModel {
    pub fn new(rules: ScriptedRules) -> Result<Self, LlmError> {
        let mut compiled = Vec::with_capacity(rules.rules.len());
        let mut catch_all = false;
        for r in rules.rules {
            let m = match r.matcher {
                Matcher::Contains(s) => Compiled::Contains(s.to_lowercase()),
                Matcher::Regex(p) => Compiled::Regex(
                    Regex::new(&p).map_err(|e| LlmError::Config(format!("rule `{}`: {e}", r.name)))?,
                ),
                Matcher::Any(true) => {
                    catch_all = true;
                    Compiled::Any
                }
                Matcher::Any(false) => continue,
            };
            compiled.push((m, r.response));
        }
        if !catch_all {
            return Err(LlmError::Config("scripted rules need a catch-all rule".into()));
        }
        let embeddings = rules.embeddings.into_iter().map(|(k, v)| (key(&k), v)).collect();
        Ok(Self { rules: compiled, embeddings })
    }

    pub fn builtin() -> Self {
        Self::new(ScriptedRules::builtin()).expect("bundled rules are valid")
    }

    fn embed_depth(&self, text: &str, depth: usize) -> Vec<f64> {
        match self.embeddings.get(&key(text)) {
            Some(EmbeddingEntry::Vector { vector: v }) => {
                let mut v = v.clone();
                v.resize(TRIGRAM_DIM, 0.0);
                normalize(v)
            }
            Some(EmbeddingEntry::Like { like, blend }) if depth < 8 => {
                let base = self.embed_depth(like, depth + 1);
                let own = trigram_embedding(text);
                normalize(base.iter().zip(&own).map(|(b, o)| b + blend * o).collect())
            }
            _ => trigram_embedding(text),
        }
    }
}

impl LanguageModel for ScriptedModel {
    fn chat(&self, turns: &[ChatTurn]) -> Result<String, LlmError> {
        let last = turns.iter().rev().find(|t| t.role == Role::User).map(|t| t.content.as_str()).unwrap_or("");
        let lower = last.to_lowercase();
        for (m, resp) in &self.rules {
            let hit = match m {
                Compiled::Contains(s) => lower.contains(s.as_str()),
                Compiled::Regex(r) => r.is_match(last),
                Compiled::Any => true,
            };
            if hit {
                return Ok(match resp {
                    Response::Text(t) => t.clone(),
                    Response::Builtin(b) => run_builtin(*b, last),
                });
            }
        }
        unreachable!("a catch-all rule always matches")
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, LlmError> {
        Ok(self.embed_depth(text, 0))
    }

    fn fuzzy_threshold(&self) -> f64 {
        HASHED_FUZZY_THRESHOLD
    }

    fn name(&self) -> String {
        "scripted".into()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Intent {
    Urgency,
    Comfort,
    Safety,
    Neutral,
}

const URGENCY: &[&str] = &["late", "fast", "hurry", "aggressive", "rush", "quick", "speed up", "asap"];
const COMFORT: &[&str] = &["smooth", "sick", "harsh", "brak", "gentle", "comfort", "jerk", "nause"];
const SAFETY: &[&str] = &["safe", "careful", "conservative", "plenty of time", "slow", "distance", "cautious"];

/// Keyword intent of a command; ties resolve in the order urgency, comfort, safety.
pub fn detect_intent(command: &str) -> Intent {
    let c = command.to_lowercase();
    let count = |words: &[&str]| words.iter().filter(|w| c.contains(*w)).count();
    let scores = [(Intent::Urgency, count(URGENCY)), (Intent::Comfort, count(COMFORT)), (Intent::Safety, count(SAFETY))];
    let best = scores.iter().max_by(|a, b| a.1.cmp(&b.1).then(b.0.order().cmp(&a.0.order()))).expect("non-empty");
    if best.1 == 0 {
        Intent::Neutral
    } else {
        best.0
    }
}

impl Intent {
    fn order(self) -> u8 {
        self as u8
    }

    pub fn metrics(self) -> [MetricName; 2] {
        match self {
            Intent::Urgency => [MetricName::Speed, MetricName::Acceleration],
            Intent::Comfort => [MetricName::Jerk, MetricName::Acceleration],
            Intent::Safety => [MetricName::Spacing, MetricName::TimeHeadway],
            Intent::Neutral => [MetricName::Speed, MetricName::Spacing],
        }
    }

    fn preferred_styles(self) -> &'static [&'static str] {
        match self {
            Intent::Urgency => &["aggressive", "mixed_sporty", "dd_aggressive"],
            Intent::Comfort => &["comfort", "mixed_eco"],
            Intent::Safety => &["conservative", "dd_conservative"],
            Intent::Neutral => &["dd_normal"],
        }
    }

    /// Term added to a template reward to push it toward this intent;
    /// `variant` 0 tweaks weights, 1 restructures.
    fn reward_term(self, variant: usize) -> &'static str {
        match (self, variant % 2) {
            (Intent::Urgency, 0) => "0.05 * speed",
            (Intent::Urgency, _) => "if(ttc > 3, 0.1 * speed, 0) - 0.5 * if(thw < 0.6, 1, 0)",
            (Intent::Comfort, 0) => "-0.1 * abs(jerk)",
            (Intent::Comfort, _) => "-0.2 * pow(accel, 2) - if(abs(jerk) > 1, 0.5, 0)",
            (Intent::Safety, 0) => "0.5 * tanh(thw / 2)",
            (Intent::Safety, _) => "if(thw < 2, -1, 0.2) - if(ttc < 5, 1, 0)",
            (Intent::Neutral, 0) => "-0.01 * abs(jerk)",
            (Intent::Neutral, _) => "-0.05 * abs(rel_speed)",
        }
    }
}

fn fenced(reasoning: &str, answer: &Value) -> String {
    format!("{reasoning}\n\n```json\n{answer}\n```\n")
}

fn run_builtin(b: Builtin, prompt: &str) -> String {
    let ctx = context_of(prompt).unwrap_or(Value::Null);
    let command = ctx["command"].as_str().unwrap_or("");
    let intent = detect_intent(command);
    match (b, task_of(prompt)) {
        (Builtin::StyleSelector, _) => select_styles(&ctx, command, intent),
        (Builtin::MetricSelector, _) => select_metrics(&ctx, intent),
        (Builtin::RewardVariants, _) => reward_variants(&ctx, command, intent),
        (Builtin::AlignmentJudge, _) => judge(&ctx, intent),
    }
}

fn words(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !c.is_alphanumeric() && c != '_')
        .filter(|w| w.len() >= 3)
        .map(str::to_string)
        .collect()
}

/// Words from a reward's `# style:` and `# keywords:` comment lines.
fn style_words(source: &str) -> Vec<String> {
    source
        .lines()
        .filter_map(|l| {
            let l = l.trim_start().strip_prefix('#')?.trim();
            l.strip_prefix("keywords:").or_else(|| l.strip_prefix("style:")).map(words)
        })
        .flatten()
        .collect()
}

fn select_styles(ctx: &Value, command: &str, intent: Intent) -> String {
    let cmd_words = words(command);
    let empty = Vec::new();
    let cands = ctx["candidates"].as_array().unwrap_or(&empty);
    let mut scored: Vec<(usize, String, usize)> = cands
        .iter()
        .enumerate()
        .filter_map(|(i, c)| {
            let id = c["id"].as_str()?.to_string();
            let kws = style_words(c["reward_source"].as_str().unwrap_or(""));
            // exact keyword hits count double so "aggressively" prefers a style listing it
            let overlap: usize = cmd_words
                .iter()
                .map(|w| {
                    if kws.contains(w) {
                        2
                    } else if kws.iter().any(|k| w.starts_with(k.as_str()) || k.starts_with(w.as_str())) {
                        1
                    } else {
                        0
                    }
                })
                .sum();
            let bonus = if intent.preferred_styles().contains(&id.as_str()) { 2 } else { 0 };
            Some((i, id, overlap + bonus))
        })
        .collect();
    scored.sort_by(|a, b| b.2.cmp(&a.2).then(a.0.cmp(&b.0)));
    let ids: Vec<&str> = scored.iter().map(|s| s.1.as_str()).collect();
    let reasoning = match scored.first() {
        Some(top) => format!(
            "The command reads as {intent:?}. `{}` shares the most cues with it (score {}), so it leads the ranking.",
            top.1, top.2
        ),
        None => "No styles were offered.".into(),
    };
    fenced(&reasoning, &json!({ "selected": ids }))
}

fn select_metrics(ctx: &Value, intent: Intent) -> String {
    let n = ctx["n"].as_u64().unwrap_or(2) as usize;
    let mut picks: Vec<MetricName> = intent.metrics().to_vec();
    for m in MetricName::ALL {
        if !picks.contains(&m) {
            picks.push(m);
        }
    }
    picks.truncate(n);
    let names: Vec<&str> = picks.iter().map(|m| m.as_str()).collect();
    fenced(
        &format!("For a {intent:?} command the most telling statistics are {}.", names.join(" and ")),
        &json!({ "metrics": names }),
    )
}

fn reward_variants(ctx: &Value, command: &str, intent: Intent) -> String {
    let m = ctx["m"].as_u64().unwrap_or(2) as usize;
    let template = ctx["template"].as_str().unwrap_or("0");
    let template_id = ctx["template_id"].as_str().unwrap_or("template");
    let body = strip_comments(template);
    let body = body.split_whitespace().collect::<Vec<_>>().join(" ");
    let keywords = words(command).join(" ");
    let rewards: Vec<String> = (0..m)
        .map(|i| {
            let scale = 1 + i / 2;
            let term = intent.reward_term(i);
            let term = if scale > 1 { format!("{scale} * ({term})") } else { term.to_string() };
            format!(
                "# style: variant {} of {template_id}\n# keywords: {keywords}\n({body}) + ({term})",
                i + 1
            )
        })
        .collect();
    fenced(
        &format!("Starting from `{template_id}`, each variant adds a {intent:?} term; the second restructures with conditions."),
        &json!({ "rewards": rewards }),
    )
}

/// Desirability of one comparison row under an intent; larger is better.
fn row_score(intent: Intent, metric: MetricName, row: &Value) -> f64 {
    let mean = row["normalized_candidate"].as_f64().unwrap_or(0.0);
    let base = row["normalized_baseline"].as_f64().unwrap_or(0.0);
    let spread = row["normalized_std"].as_f64().unwrap_or(0.0);
    use MetricName::*;
    match (intent, metric) {
        (Intent::Urgency, Speed | Acceleration) => mean,
        (Intent::Urgency, Spacing | TimeHeadway) => -mean,
        (Intent::Comfort, Jerk | Acceleration) => -spread,
        (Intent::Safety, Spacing | TimeHeadway) => mean,
        (Intent::Safety, Speed) => -mean,
        (Intent::Safety, Jerk | Acceleration) => -spread,
        _ => -(mean - base).abs(),
    }
}

/// Score gap below which two policies count as equally aligned.
pub const JUDGE_TIE_MARGIN: f64 = 0.05;

fn judge(ctx: &Value, intent: Intent) -> String {
    let empty = Vec::new();
    let reports = ctx["reports"].as_array().unwrap_or(&empty);
    let score = |r: &Value| -> f64 {
        let rows = r["rows"].as_array().unwrap_or(&empty);
        if rows.is_empty() {
            return f64::NEG_INFINITY;
        }
        let total: f64 = rows
            .iter()
            .filter_map(|row| Some(row_score(intent, MetricName::parse(row["metric"].as_str()?)?, row)))
            .sum();
        total / rows.len() as f64
    };
    let mut provisional = f64::NEG_INFINITY;
    let mut best: Option<(String, f64)> = None;
    for r in reports {
        let label = r["label"].as_str().unwrap_or("");
        let s = score(r);
        if label == "provisional" {
            provisional = s;
        } else if best.as_ref().is_none_or(|(_, b)| s > *b) {
            best = Some((label.to_string(), s));
        }
    }
    let (winner, rationale) = match best {
        Some((label, s)) if s > provisional + JUDGE_TIE_MARGIN => {
            (label.clone(), format!("{label} scores {s:.3} against {provisional:.3} for the provisional policy"))
        }
        Some((label, s)) if (s - provisional).abs() <= JUDGE_TIE_MARGIN => {
            ("tie".to_string(), format!("{label} and the provisional policy are within {JUDGE_TIE_MARGIN} ({s:.3} vs {provisional:.3})"))
        }
        Some((_, s)) => ("provisional".to_string(), format!("the provisional policy leads ({provisional:.3} vs {s:.3})")),
        None => ("provisional".to_string(), "no candidates were trained".to_string()),
    };
    fenced(
        &format!("Judging a {intent:?} command on the normalized metrics."),
        &json!({ "winner": winner, "rationale": rationale }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::prompts::{task_prompt, Template};
    use crate::llm::{parse_verdict, AlignmentWinner, Step, StructuredVerdict};

    fn model() -> ScriptedModel {
        ScriptedModel::builtin()
    }

    #[test]
    fn intents_from_keywords() {
        assert_eq!(detect_intent("Drive aggressively."), Intent::Urgency);
        assert_eq!(detect_intent("I'm late for the train."), Intent::Urgency);
        assert_eq!(detect_intent("I feel sick, please be smooth"), Intent::Comfort);
        assert_eq!(detect_intent("Safety first."), Intent::Safety);
        assert_eq!(detect_intent("Just drive."), Intent::Neutral);
    }

    #[test]
    fn rules_match_in_order_with_catch_all() {
        let rules = ScriptedRules {
            rules: vec![
                Rule { name: "a".into(), matcher: Matcher::Contains("aggressive".into()), response: Response::Text("0.1 * speed".into()) },
                Rule { name: "all".into(), matcher: Matcher::Any(true), response: Response::Text("fallback".into()) },
            ],
            embeddings: BTreeMap::new(),
        };
        let m = ScriptedModel::new(rules).unwrap();
        assert_eq!(m.chat(&[ChatTurn::user("Drive aggressively")]).unwrap(), "0.1 * speed");
        assert_eq!(m.chat(&[ChatTurn::user("hello")]).unwrap(), "fallback");
    }

    #[test]
    fn rules_without_catch_all_are_rejected() {
        let rules = ScriptedRules { rules: vec![], embeddings: BTreeMap::new() };
        assert!(ScriptedModel::new(rules).is_err());
    }

    #[test]
    fn embedding_table_and_fallback() {
        let m = model();
        let stored = m.embed("I'm late for the train.").unwrap();
        let para = m.embed("I'm late for the plane.").unwrap();
        let cos: f64 = stored.iter().zip(&para).map(|(a, b)| a * b).sum();
        assert!(cos > 0.9, "paraphrase cosine {cos}");
        assert_eq!(m.embed("xyz").unwrap(), trigram_embedding("xyz"));
        assert_eq!(m.embed("abc").unwrap(), m.embed("abc").unwrap());
    }

    #[test]
    fn metric_selector_returns_n_names() {
        let p = task_prompt(
            Template::SelectMetrics,
            &[("command", "I'm late"), ("n", "2"), ("baseline", "-")],
            &json!({"command": "I'm late", "n": 2}),
        );
        let out = model().chat(&[ChatTurn::user(p)]).unwrap();
        let v = parse_verdict(&Step::SelectMetrics { n: 2 }, &out).unwrap();
        assert_eq!(v, StructuredVerdict::SelectedMetrics { metrics: vec![MetricName::Speed, MetricName::Acceleration] });
    }

    #[test]
    fn reward_variants_parse() {
        let ctx = json!({"command": "Drive aggressively.", "m": 3, "template_id": "aggressive",
            "template": "# style: aggressive\n0.1 * speed - 20 * collided\n"});
        let p = task_prompt(Template::GenerateRewards, &[], &ctx);
        let out = model().chat(&[ChatTurn::user(p)]).unwrap();
        match parse_verdict(&Step::GenerateRewards { m: 3 }, &out).unwrap() {
            StructuredVerdict::Rewards { sources, diagnostics } => {
                assert_eq!(sources.len(), 3, "{diagnostics:?}");
                assert!(sources[0].contains("# keywords: drive aggressively"));
            }
            other => panic!("{other:?}"),
        }
    }

    fn report(label: &str, speed: f64) -> Value {
        json!({"label": label, "rows": [
            {"metric": "speed", "normalized_candidate": speed, "normalized_baseline": 0.5, "normalized_std": 0.3},
            {"metric": "acceleration", "normalized_candidate": 0.5, "normalized_baseline": 0.5, "normalized_std": 0.3}
        ]})
    }

    fn verdict(ctx: Value) -> AlignmentWinner {
        let p = task_prompt(Template::JudgeAlignment, &[], &ctx);
        let out = model().chat(&[ChatTurn::user(p)]).unwrap();
        match parse_verdict(&Step::JudgeAlignment { candidates: 1 }, &out).unwrap() {
            StructuredVerdict::Alignment { winner, .. } => winner,
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn judge_prefers_faster_candidate_for_urgency() {
        let base = |c: f64| json!({"command": "I'm late, hurry", "reports": [report("provisional", 0.6), report("candidate_1", c)]});
        assert_eq!(verdict(base(0.6)), AlignmentWinner::Tie);
        assert_eq!(verdict(base(0.9)), AlignmentWinner::Candidate(1));
        assert_eq!(verdict(base(0.2)), AlignmentWinner::Provisional);
    }

    #[test]
    fn style_selector_ranks_keyword_matches_first() {
        let ctx = json!({"command": "Drive aggressively.", "candidates": [
            {"id": "comfort", "reward_source": "# keywords: smooth\nspeed"},
            {"id": "aggressive", "reward_source": "# keywords: aggressive fast\nspeed"},
        ]});
        let p = task_prompt(Template::SelectStyle, &[], &ctx);
        let out = model().chat(&[ChatTurn::user(p)]).unwrap();
        let v = parse_verdict(&Step::SelectStyles { allowed: vec!["comfort".into(), "aggressive".into()] }, &out).unwrap();
        assert_eq!(v, StructuredVerdict::SelectedStyles { ids: vec!["aggressive".into(), "comfort".into()] });
    }
}
