//! Language-model proposer over an OpenAI-style chat endpoint.

mod client;
pub mod mock;
pub mod prompts;

use std::collections::BTreeMap;

use base64::Engine;
use serde::{Deserialize, Serialize};

pub use client::{ChatClient, ChatExchange, ChatMessage};

use super::{
    parse_update, parse_update_batch, ParameterUpdate, PromptInputs, ProposalContext, Proposer, ProposerError,
    ProposerKind, SearchSpace, UpdateError,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LlmConfig {
    pub base_url: Option<String>,
    pub path: String,
    pub model: String,
    /// Environment variable holding the bearer token.
    pub api_key_env: Option<String>,
    pub temperature: Option<f64>,
    pub max_retries: u32,
    pub backoff_ms: u64,
    pub timeout_s: f64,
    /// Attach the overlay picture to the prompt.
    pub supports_images: bool,
    /// Use the degradation templates.
    pub degradation: bool,
    /// Ask the model for the warm-up batch instead of random perturbations.
    pub propose_warmup: bool,
    /// Ask the model to turn warm-up outcomes into rules.
    pub summarize_warmup: bool,
}

impl Default for LlmConfig {
    fn default() -> Self {
        Self {
            base_url: None,
            path: "/v1/chat/completions".into(),
            model: "default".into(),
            api_key_env: Some("CELLFIT_LLM_API_KEY".into()),
            temperature: None,
            max_retries: 2,
            backoff_ms: 500,
            timeout_s: 120.0,
            supports_images: false,
            degradation: false,
            propose_warmup: true,
            summarize_warmup: true,
        }
    }
}

pub struct LlmProposer {
    cfg: LlmConfig,
    client: ChatClient,
    space: SearchSpace,
}

fn svg_data_url(path: &str) -> Option<String> {
    let bytes = std::fs::read(path).ok()?;
    Some(format!("data:image/svg+xml;base64,{}", base64::engine::general_purpose::STANDARD.encode(bytes)))
}

impl LlmProposer {
    pub fn new(cfg: LlmConfig, space: SearchSpace) -> Result<Self, ProposerError> {
        let client = ChatClient::new(&cfg)?;
        Ok(Self { cfg, client, space })
    }

    fn keys(&self, prompt: &PromptInputs) -> Vec<String> {
        if prompt.search_keys.is_empty() {
            self.space.keys.clone()
        } else {
            prompt.search_keys.clone()
        }
    }

    fn user_text(&self, ctx: &ProposalContext, picture: bool) -> String {
        let mut vars = prompts::Vars { prompt: ctx.prompt, theta: ctx.theta }.map();
        vars.insert("cycle_description", prompts::describe_feedback(ctx.feedback, ctx.scalar_only));
        vars.insert("picture", if picture { prompts::PICTURE_NOTE.to_string() } else { String::new() });
        let mut parts = Vec::new();
        if ctx.round <= 1 {
            let body = if self.cfg.degradation { prompts::FIRST_ROUND_DEGRADATION } else { prompts::FIRST_ROUND };
            parts.push(prompts::render(body, &vars));
            if !ctx.knowledge.is_empty() && ctx.memory.is_empty() {
                let list = ctx.knowledge.iter().map(|k| format!("- {k}")).collect::<Vec<_>>().join("\n");
                vars.insert("knowledge", list);
                parts.push(prompts::render(prompts::KNOWLEDGE, &vars));
            }
        } else {
            parts.push(format!("Current values: {}", vars["current_params"]));
            parts.push(prompts::render(prompts::OTHER_ROUND, &vars));
        }
        if !ctx.memory.is_empty() {
            parts.push(ctx.memory.trim_end().to_string());
        }
        parts.push(prompts::render(prompts::REPLY_FORMAT, &vars));
        parts.join("\n\n")
    }
}

impl Proposer for LlmProposer {
    fn kind(&self) -> ProposerKind {
        ProposerKind::Llm
    }

    fn propose(&mut self, ctx: &ProposalContext, log: &mut Vec<ChatExchange>) -> Result<ParameterUpdate, ProposerError> {
        let image = if self.cfg.supports_images && !ctx.scalar_only {
            ctx.feedback.visual.as_deref().and_then(|p| svg_data_url(p).map(|url| (p, url)))
        } else {
            None
        };
        let keys = self.keys(ctx.prompt);
        let mut messages = vec![ChatMessage::system(prompts::SYSTEM), ChatMessage::user(self.user_text(ctx, image.is_some()))];
        let reply = self.client.chat(&messages, image.clone(), "optimize", Some(ctx.round), log)?;
        match parse_update(&reply, &keys) {
            Ok(u) => Ok(u),
            Err(first) => {
                log::info!("round {}: unusable reply ({first}); asking again", ctx.round);
                messages.push(ChatMessage::assistant(reply));
                let mut again = prompts::REPROMPT.to_string();
                if !matches!(first, UpdateError::NoJson) {
                    again.push_str(&format!(" ({first})"));
                }
                messages.push(ChatMessage::user(again));
                let reply = self.client.chat(&messages, None, "optimize", Some(ctx.round), log)?;
                Ok(parse_update(&reply, &keys)?)
            }
        }
    }

    fn warmup(
        &mut self,
        theta: &BTreeMap<String, f64>,
        prompt: &PromptInputs,
        n: usize,
        log: &mut Vec<ChatExchange>,
    ) -> Option<Result<Vec<ParameterUpdate>, ProposerError>> {
        if !self.cfg.propose_warmup {
            return None;
        }
        let mut vars = prompts::Vars { prompt, theta }.map();
        vars.insert("n", n.to_string());
        let messages = vec![ChatMessage::system(prompts::SYSTEM), ChatMessage::user(prompts::render(prompts::SEARCH, &vars))];
        let keys = self.keys(prompt);
        Some(
            self.client
                .chat(&messages, None, "warmup", None, log)
                .and_then(|reply| parse_update_batch(&reply, &keys).map_err(ProposerError::from)),
        )
    }

    fn summarize(
        &mut self,
        outcomes: &str,
        prompt: &PromptInputs,
        log: &mut Vec<ChatExchange>,
    ) -> Option<Result<Vec<String>, ProposerError>> {
        if !self.cfg.summarize_warmup {
            return None;
        }
        let mut vars = prompts::Vars { prompt, theta: &BTreeMap::new() }.map();
        vars.insert("outcomes", outcomes.to_string());
        let messages = vec![ChatMessage::system(prompts::SYSTEM), ChatMessage::user(prompts::render(prompts::SUMMARIZE, &vars))];
        Some(self.client.chat(&messages, None, "summarize", None, log).map(|reply| {
            reply
                .lines()
                .filter_map(|l| l.trim().strip_prefix("- ").map(|r| r.trim().to_string()))
                .filter(|r| !r.is_empty())
                .collect()
        }))
    }
}
