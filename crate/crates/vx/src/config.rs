//! Engine configuration: turn limits, budgets, and prompt templates.
//!
//! Everything has a default; a TOML file can override any subset. Prompt
//! templates are version-stamped so scripted-backend tests stay stable when
//! wording changes.

use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::DEFAULT_TOP_K;
use crate::perception::{DEFAULT_FPS, DEFAULT_FRAME_CAP, DEFAULT_TOKENS_PER_FRAME};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("parsing config: {0}")]
    Parse(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Knobs for one planner episode and its grounding/perception calls.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerConfig {
    /// Maximum planner LLM calls per episode before the forced answer.
    pub max_turns: u32,
    /// Retrieval depth for grounding queries.
    pub top_k: usize,
    /// Hard per-call frame budget for perception.
    pub frame_cap: u32,
    /// Visual tokens charged per sampled frame.
    pub tokens_per_frame: u64,
    /// Sampling rate used for dense perception.
    pub fps: f64,
    /// Stamp identifying the transcript rendering convention.
    pub transcript_version: String,
    pub grounder: GrounderConfig,
    pub prompts: PlannerPrompts,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            max_turns: 20,
            top_k: DEFAULT_TOP_K,
            frame_cap: DEFAULT_FRAME_CAP,
            tokens_per_frame: DEFAULT_TOKENS_PER_FRAME,
            fps: DEFAULT_FPS,
            transcript_version: "vx-transcript-1".to_string(),
            grounder: GrounderConfig::default(),
            prompts: PlannerPrompts::default(),
        }
    }
}

impl PlannerConfig {
    pub fn load_toml(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)?;
        let cfg: PlannerConfig = toml::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.max_turns < 1 || self.top_k < 1 || self.frame_cap < 1 || self.tokens_per_frame < 1 {
            return Err(ConfigError::Invalid("all bounds must be >= 1".into()));
        }
        if !self.fps.is_finite() || self.fps <= 0.0 {
            return Err(ConfigError::Invalid("fps must be > 0".into()));
        }
        if self.grounder.verify_frame_cap < 1 {
            return Err(ConfigError::Invalid("grounder.verify_frame_cap must be >= 1".into()));
        }
        Ok(())
    }
}

/// Grounder prompt templates; `{query}` is substituted with the sub-query text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GrounderConfig {
    pub verify_prompt: String,
    pub summarize_prompt: String,
    /// Frames sampled per candidate clip during verification. Verification is
    /// a cheap relevance check, so this sits well below the perception cap.
    pub verify_frame_cap: u32,
}

impl Default for GrounderConfig {
    fn default() -> Self {
        Self {
            verify_prompt: "Does this video segment show the following? {query}\n\
                            Answer yes or no, then explain briefly."
                .to_string(),
            summarize_prompt: "Summarize what this segment shows that is relevant to: {query}"
                .to_string(),
            verify_frame_cap: 2,
        }
    }
}

/// Planner-side prompt fragments.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PlannerPrompts {
    pub system: String,
    pub parse_error_notice: String,
    pub forced_answer: String,
}

impl Default for PlannerPrompts {
    fn default() -> Self {
        Self {
            system: "You are a long-video reasoning agent. Emit exactly one action per turn:\n\
                     <think>intermediate reasoning</think>\n\
                     <search>{\"text\": \"what to look for\", \"image_ts\": optional_seconds}</search>\n\
                     <perceive start=S end=E mode=dense|coarse>question about that interval</perceive>\n\
                     <answer>final answer</answer>\n\
                     Search locates moments; perceive inspects an interval under the frame budget."
                .to_string(),
            parse_error_notice:
                "Your previous reply did not contain a recognizable action tag. \
                 Reply with exactly one of <think>, <search>, <perceive>, or <answer>."
                    .to_string(),
            forced_answer: "Answer now with your best choice.".to_string(),
        }
    }
}
