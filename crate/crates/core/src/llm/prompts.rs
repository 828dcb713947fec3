//! Versioned prompt templates with `{{name}}` placeholders. Every task prompt
//! starts with a `TASK:` line and ends with a ```context block carrying the
//! same facts as JSON.

use serde_json::Value;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Template {
    SelectStyle,
    SelectMetrics,
    GenerateRewards,
    JudgeAlignment,
    Repair,
}

pub const VERSION: &str = "v1";

impl Template {
    pub fn text(self) -> &'static str {
        match self {
            Template::SelectStyle => include_str!("../../assets/prompts/select_style.v1.txt"),
            Template::SelectMetrics => include_str!("../../assets/prompts/select_metrics.v1.txt"),
            Template::GenerateRewards => include_str!("../../assets/prompts/generate_rewards.v1.txt"),
            Template::JudgeAlignment => include_str!("../../assets/prompts/judge_alignment.v1.txt"),
            Template::Repair => include_str!("../../assets/prompts/repair.v1.txt"),
        }
    }
}

/// Substitutes every `{{name}}`; unknown placeholders are left in place so
/// template drift shows up in tests.
pub fn render(template: Template, vars: &[(&str, &str)]) -> String {
    let mut out = template.text().to_string();
    for (k, v) in vars {
        out = out.replace(&format!("{{{{{k}}}}}"), v);
    }
    out
}

/// Renders a task prompt and appends its context block.
pub fn task_prompt(template: Template, vars: &[(&str, &str)], context: &Value) -> String {
    let mut out = render(template, vars);
    out.push_str("\n```context\n");
    out.push_str(&serde_json::to_string_pretty(context).expect("context serializes"));
    out.push_str("\n```\n");
    out
}

/// The `TASK:` tag of a prompt, if any.
pub fn task_of(prompt: &str) -> Option<&str> {
    prompt.lines().next()?.strip_prefix("TASK:").map(str::trim)
}

/// Parsed ```context block of a prompt.
pub fn context_of(prompt: &str) -> Option<Value> {
    let start = prompt.rfind("```context")?;
    let body = &prompt[start + "```context".len()..];
    let end = body.find("```")?;
    serde_json::from_str(body[..end].trim()).ok()
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn every_placeholder_is_filled() {
        let cases: [(Template, &[&str]); 5] = [
            (Template::SelectStyle, &["command", "k", "candidates"]),
            (Template::SelectMetrics, &["command", "baseline", "n"]),
            (Template::GenerateRewards, &["command", "template_id", "template", "m"]),
            (Template::JudgeAlignment, &["command", "metrics", "tables"]),
            (Template::Repair, &["problem"]),
        ];
        for (t, names) in cases {
            let vars: Vec<(&str, &str)> = names.iter().map(|n| (*n, "X")).collect();
            let out = render(t, &vars);
            assert!(!out.contains("{{"), "{t:?} left a placeholder");
        }
    }

    #[test]
    fn context_round_trips() {
        let ctx = json!({"command": "Drive aggressively.", "n": 2});
        let p = task_prompt(Template::SelectMetrics, &[("command", "Drive aggressively."), ("n", "2"), ("baseline", "-")], &ctx);
        assert_eq!(task_of(&p), Some("select-metrics"));
        assert_eq!(context_of(&p), Some(ctx));
    }
}
