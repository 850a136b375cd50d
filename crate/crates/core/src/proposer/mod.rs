//! Parameter proposers and the update protocol they share.

mod baselines;
pub mod bo;
pub mod llm;
mod space;
mod step;
pub mod update;

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::feedback::FeedbackPackage;

pub use baselines::{interpolation_script, sobol_point, CmaesStub, RandomProposer, ScriptedProposer, SobolProposer};
pub use bo::{BoConfig, BoProposer};
pub use llm::{ChatExchange, LlmConfig, LlmProposer};
pub use space::SearchSpace;
pub use step::{StepSchedule, StepSize};
pub use update::{apply_update, parse_update, parse_update_batch, Directive, ParameterUpdate, UpdateError, PROJECTED_EVENT};

#[derive(Debug, Error)]
pub enum ProposerError {
    #[error("invalid proposer configuration: {0}")]
    Config(String),
    #[error("script exhausted: round {round} requested, {len} entries")]
    Exhausted { round: usize, len: usize },
    #[error("could not read an update: {0}")]
    Parse(#[from] UpdateError),
    #[error("chat endpoint: {0}")]
    Transport(String),
    #[error("{0}")]
    Unsupported(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProposerKind {
    Llm,
    Bo,
    Random,
    Sobol,
    Scripted,
    CmaesStub,
}

impl ProposerKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ProposerKind::Llm => "llm",
            ProposerKind::Bo => "bo",
            ProposerKind::Random => "random",
            ProposerKind::Sobol => "sobol",
            ProposerKind::Scripted => "scripted",
            ProposerKind::CmaesStub => "cmaes-stub",
        }
    }
}

impl std::str::FromStr for ProposerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "llm" => Ok(Self::Llm),
            "bo" => Ok(Self::Bo),
            "random" => Ok(Self::Random),
            "sobol" => Ok(Self::Sobol),
            "scripted" => Ok(Self::Scripted),
            "cmaes-stub" | "cmaes" => Ok(Self::CmaesStub),
            other => Err(format!("unknown proposer `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProposerConfig {
    pub kind: ProposerKind,
    #[serde(default)]
    pub step: StepSchedule,
    #[serde(default)]
    pub llm: LlmConfig,
    #[serde(default)]
    pub bo: BoConfig,
    /// JSONL of updates for the scripted proposer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replay: Option<PathBuf>,
    /// Draw random/Sobol points uniformly in log space where bounds allow.
    #[serde(default)]
    pub log_scale: bool,
}

impl ProposerConfig {
    pub fn new(kind: ProposerKind) -> Self {
        Self {
            kind,
            step: StepSchedule::default(),
            llm: LlmConfig::default(),
            bo: BoConfig::default(),
            replay: None,
            log_scale: false,
        }
    }

    /// Step-size controller for this proposer: adaptive for the LLM, fixed
    /// at one for everything else.
    pub fn step_size(&self) -> StepSize {
        match self.kind {
            ProposerKind::Llm => StepSize::new(self.step.clone()),
            _ => StepSize::unit(),
        }
    }
}

/// Evaluated point, as seen by history-based proposers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub theta: BTreeMap<String, f64>,
    pub total_mape: f64,
}

/// Task description used to fill prompt templates.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PromptInputs {
    pub protocols: String,
    pub parameter_set: String,
    pub model_name: String,
    pub search_keys: Vec<String>,
    /// Cycles shown in degradation feedback.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cycle_idxs: Option<Vec<usize>>,
}

pub struct ProposalContext<'a> {
    /// Round whose feedback is being answered (1-based).
    pub round: usize,
    pub theta: &'a BTreeMap<String, f64>,
    pub feedback: &'a FeedbackPackage,
    /// Rendered memory; empty when memory is disabled.
    pub memory: &'a str,
    pub history: &'a [Evaluation],
    /// Injected rules, shown in the first round when memory is empty.
    pub knowledge: &'a [String],
    pub prompt: &'a PromptInputs,
    /// Send only the total MAPE, no features or picture.
    pub scalar_only: bool,
}

pub trait Proposer: Send {
    fn kind(&self) -> ProposerKind;

    /// Next update. Chat traffic, if any, is appended to `log`.
    fn propose(&mut self, ctx: &ProposalContext, log: &mut Vec<ChatExchange>) -> Result<ParameterUpdate, ProposerError>;

    /// A batch of exploratory perturbations around `theta`, for proposers
    /// that can suggest their own; `None` selects the fixed strategy.
    fn warmup(
        &mut self,
        _theta: &BTreeMap<String, f64>,
        _prompt: &PromptInputs,
        _n: usize,
        _log: &mut Vec<ChatExchange>,
    ) -> Option<Result<Vec<ParameterUpdate>, ProposerError>> {
        None
    }

    /// Rules distilled from a text listing of warm-up outcomes; `None`
    /// selects the built-in heuristic.
    fn summarize(
        &mut self,
        _outcomes: &str,
        _prompt: &PromptInputs,
        _log: &mut Vec<ChatExchange>,
    ) -> Option<Result<Vec<String>, ProposerError>> {
        None
    }
}

/// Builds the configured proposer for a run over `space`.
pub fn build_proposer(
    cfg: &ProposerConfig,
    space: &SearchSpace,
    seed: u64,
) -> Result<Box<dyn Proposer>, ProposerError> {
    Ok(match cfg.kind {
        ProposerKind::Llm => Box::new(LlmProposer::new(cfg.llm.clone(), space.clone())?),
        ProposerKind::Bo => Box::new(BoProposer::new(cfg.bo.clone(), space.clone(), seed)?),
        ProposerKind::Random => Box::new(RandomProposer::new(space.clone(), seed, cfg.log_scale)),
        ProposerKind::Sobol => Box::new(SobolProposer::new(space.clone(), seed, cfg.log_scale)),
        ProposerKind::Scripted => {
            let path = cfg
                .replay
                .as_ref()
                .ok_or_else(|| ProposerError::Config("the scripted proposer needs a replay file".into()))?;
            Box::new(ScriptedProposer::load(path)?)
        }
        ProposerKind::CmaesStub => Box::new(CmaesStub),
    })
}
