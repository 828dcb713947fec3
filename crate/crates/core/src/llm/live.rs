use std::fs::OpenOptions;
use std::io::Write;
use std::sync::Mutex;
use std::time::Duration;

use serde_json::{json, Value};

use super::embed::normalize;
use super::{ChatTurn, LanguageModel, LlmError, ModelConfig, LIVE_FUZZY_THRESHOLD};

/// Chat-completions style HTTP backend.
pub struct LiveModel {
    cfg: ModelConfig,
    key: String,
    agent: ureq::Agent,
    audit: Mutex<()>,
}

impl LiveModel {
    pub fn new(cfg: ModelConfig) -> Result<Self, LlmError> {
        let key = std::env::var(&cfg.api_key_env)
            .map_err(|_| LlmError::Auth(format!("environment variable {} is not set", cfg.api_key_env)))?;
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(cfg.timeout_s)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self { cfg, key, agent, audit: Mutex::new(()) })
    }

    pub fn chat_request_body(&self, turns: &[ChatTurn]) -> Value {
        chat_body(&self.cfg, turns)
    }

    fn redact(&self, s: &str) -> String {
        if self.key.is_empty() {
            s.to_string()
        } else {
            s.replace(&self.key, "[REDACTED]")
        }
    }

    fn log(&self, url: &str, request: &Value, outcome: &Result<(u16, String), LlmError>) {
        let Some(path) = &self.cfg.audit_path else { return };
        let _guard = self.audit.lock().unwrap_or_else(|p| p.into_inner());
        let entry = match outcome {
            Ok((status, body)) => json!({"url": url, "request": request, "status": status, "response": body}),
            Err(e) => json!({"url": url, "request": request, "error": e.to_string()}),
        };
        let line = self.redact(&entry.to_string());
        if let Ok(mut f) = OpenOptions::new().create(true).append(true).open(path) {
            let _ = writeln!(f, "{line}");
        }
    }

    fn post_once(&self, url: &str, body: &Value) -> Result<(u16, String), LlmError> {
        let resp = self
            .agent
            .post(url)
            .header("Authorization", &format!("Bearer {}", self.key))
            .header("Content-Type", "application/json")
            .send(body.to_string());
        let mut resp = match resp {
            Ok(r) => r,
            Err(ureq::Error::Timeout(t)) => return Err(LlmError::Timeout(t.to_string())),
            Err(e) => return Err(LlmError::Transport(self.redact(&e.to_string()))),
        };
        let status = resp.status().as_u16();
        let text = resp.body_mut().read_to_string().map_err(|e| match e {
            ureq::Error::Timeout(t) => LlmError::Timeout(t.to_string()),
            other => LlmError::Transport(other.to_string()),
        })?;
        Ok((status, text))
    }

    /// POST with exponential backoff on transient failures.
    fn post(&self, path: &str, body: &Value) -> Result<Value, LlmError> {
        let url = format!("{}/{}", self.cfg.endpoint.trim_end_matches('/'), path);
        let mut attempt = 0;
        loop {
            let outcome = self.post_once(&url, body);
            self.log(&url, body, &outcome);
            let result = outcome.and_then(|(status, text)| classify(status, &self.redact(&text)));
            match result {
                Err(e) if e.is_transient() && attempt < self.cfg.max_retries => {
                    std::thread::sleep(Duration::from_millis(500 * (1 << attempt)));
                    attempt += 1;
                }
                other => return other,
            }
        }
    }
}

pub(crate) fn chat_body(cfg: &ModelConfig, turns: &[ChatTurn]) -> Value {
    json!({
        "model": cfg.model,
        "temperature": cfg.temperature,
        "messages": turns,
    })
}

fn classify(status: u16, text: &str) -> Result<Value, LlmError> {
    let snippet: String = text.chars().take(300).collect();
    match status {
        200..=299 => serde_json::from_str(text).map_err(|e| LlmError::Protocol(format!("invalid JSON: {e}"))),
        401 | 403 => Err(LlmError::Auth(format!("HTTP {status}: {snippet}"))),
        408 | 504 => Err(LlmError::Timeout(format!("HTTP {status}"))),
        429 => Err(LlmError::RateLimit(format!("HTTP {status}: {snippet}"))),
        500..=599 => Err(LlmError::Transport(format!("HTTP {status}: {snippet}"))),
        _ => Err(LlmError::Protocol(format!("HTTP {status}: {snippet}"))),
    }
}

impl LanguageModel for LiveModel {
    fn chat(&self, turns: &[ChatTurn]) -> Result<String, LlmError> {
        if turns.is_empty() {
            return Err(LlmError::Config("no chat turns".into()));
        }
        let v = self.post("chat/completions", &self.chat_request_body(turns))?;
        v["choices"][0]["message"]["content"]
            .as_str()
            .map(str::to_string)
            .ok_or_else(|| LlmError::Protocol("response has no choices[0].message.content".into()))
    }

    fn embed(&self, text: &str) -> Result<Vec<f64>, LlmError> {
        let v = self.post("embeddings", &json!({"model": self.cfg.embedding_model, "input": text}))?;
        let arr = v["data"][0]["embedding"]
            .as_array()
            .ok_or_else(|| LlmError::Protocol("response has no data[0].embedding".into()))?;
        let vec: Option<Vec<f64>> = arr.iter().map(Value::as_f64).collect();
        let vec = vec.ok_or_else(|| LlmError::Protocol("non-numeric embedding".into()))?;
        if vec.is_empty() {
            return Err(LlmError::Protocol("empty embedding".into()));
        }
        Ok(normalize(vec))
    }

    fn fuzzy_threshold(&self) -> f64 {
        LIVE_FUZZY_THRESHOLD
    }

    fn name(&self) -> String {
        format!("live:{}", self.cfg.model)
    }
}
