use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::LlmConfig;
use crate::proposer::ProposerError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: String,
    pub content: String,
}

impl ChatMessage {
    pub fn system(text: impl Into<String>) -> Self {
        Self { role: "system".into(), content: text.into() }
    }

    pub fn user(text: impl Into<String>) -> Self {
        Self { role: "user".into(), content: text.into() }
    }

    pub fn assistant(text: impl Into<String>) -> Self {
        Self { role: "assistant".into(), content: text.into() }
    }
}

/// One request/response pair, kept verbatim for audit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatExchange {
    pub phase: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub round: Option<usize>,
    pub messages: Vec<ChatMessage>,
    /// Path of the picture attached to the last user turn.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub response: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    pub attempts: u32,
    pub latency_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_tokens: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub completion_tokens: Option<u64>,
}

/// Minimal client for an OpenAI-style chat-completions endpoint.
pub struct ChatClient {
    agent: ureq::Agent,
    url: String,
    api_key: Option<String>,
    model: String,
    temperature: Option<f64>,
    max_retries: u32,
    backoff: Duration,
}

impl ChatClient {
    pub fn new(cfg: &LlmConfig) -> Result<Self, ProposerError> {
        let base = cfg
            .base_url
            .as_deref()
            .filter(|s| !s.trim().is_empty())
            .ok_or_else(|| ProposerError::Config("no chat endpoint configured (set base_url)".into()))?;
        if !(cfg.timeout_s > 0.0) {
            return Err(ProposerError::Config("timeout_s must be positive".into()));
        }
        let agent = ureq::AgentBuilder::new().timeout(Duration::from_secs_f64(cfg.timeout_s)).build();
        let api_key = cfg.api_key_env.as_deref().and_then(|v| std::env::var(v).ok()).filter(|k| !k.is_empty());
        Ok(Self {
            agent,
            url: format!("{}/{}", base.trim_end_matches('/'), cfg.path.trim_start_matches('/')),
            api_key,
            model: cfg.model.clone(),
            temperature: cfg.temperature,
            max_retries: cfg.max_retries,
            backoff: Duration::from_millis(cfg.backoff_ms),
        })
    }

    fn body(&self, messages: &[ChatMessage], image: Option<&str>) -> Value {
        let last_user = messages.iter().rposition(|m| m.role == "user");
        let msgs: Vec<Value> = messages
            .iter()
            .enumerate()
            .map(|(i, m)| match (image, Some(i) == last_user) {
                (Some(url), true) => json!({
                    "role": m.role,
                    "content": [
                        {"type": "text", "text": m.content},
                        {"type": "image_url", "image_url": {"url": url}},
                    ],
                }),
                _ => json!({"role": m.role, "content": m.content}),
            })
            .collect();
        let mut body = json!({"model": self.model, "messages": msgs});
        if let Some(t) = self.temperature {
            body["temperature"] = json!(t);
        }
        body
    }

    fn attempt(&self, body: &Value) -> Result<Value, (bool, String)> {
        let mut req = self.agent.post(&self.url).set("Content-Type", "application/json");
        if let Some(k) = &self.api_key {
            req = req.set("Authorization", &format!("Bearer {k}"));
        }
        match req.send_json(body) {
            Ok(resp) => resp.into_json::<Value>().map_err(|e| (true, format!("reading response: {e}"))),
            Err(ureq::Error::Status(code, resp)) => {
                let text = resp.into_string().unwrap_or_default();
                let retry = code == 408 || code == 429 || code >= 500;
                Err((retry, format!("HTTP {code}: {}", text.chars().take(300).collect::<String>())))
            }
            Err(e) => Err((true, e.to_string())),
        }
    }

    /// Sends `messages`, retrying transient failures with exponential
    /// backoff. The exchange is appended to `log` whether or not it succeeds.
    pub fn chat(
        &self,
        messages: &[ChatMessage],
        image: Option<(&str, String)>,
        phase: &str,
        round: Option<usize>,
        log: &mut Vec<ChatExchange>,
    ) -> Result<String, ProposerError> {
        let body = self.body(messages, image.as_ref().map(|(_, url)| url.as_str()));
        let start = Instant::now();
        let mut attempts = 0;
        let mut last_err = String::new();
        let mut reply = None;
        while attempts <= self.max_retries {
            if attempts > 0 {
                std::thread::sleep(self.backoff * 2u32.saturating_pow(attempts - 1));
            }
            attempts += 1;
            match self.attempt(&body) {
                Ok(v) => {
                    reply = Some(v);
                    break;
                }
                Err((retry, e)) => {
                    log::warn!("chat request attempt {attempts} failed: {e}");
                    last_err = e;
                    if !retry {
                        break;
                    }
                }
            }
        }
        let mut ex = ChatExchange {
            phase: phase.to_string(),
            round,
            messages: messages.to_vec(),
            image: image.map(|(path, _)| path.to_string()),
            response: None,
            error: None,
            attempts,
            latency_s: start.elapsed().as_secs_f64(),
            prompt_tokens: None,
            completion_tokens: None,
        };
        let result = match reply {
            None => Err(ProposerError::Transport(format!("{last_err} (after {attempts} attempts)"))),
            Some(v) => {
                ex.prompt_tokens = v["usage"]["prompt_tokens"].as_u64();
                ex.completion_tokens = v["usage"]["completion_tokens"].as_u64();
                match v["choices"][0]["message"]["content"].as_str() {
                    Some(text) => Ok(text.to_string()),
                    None => Err(ProposerError::Transport("response has no choices[0].message.content".into())),
                }
            }
        };
        match &result {
            Ok(t) => ex.response = Some(t.clone()),
            Err(e) => ex.error = Some(e.to_string()),
        }
        log.push(ex);
        result
    }
}
