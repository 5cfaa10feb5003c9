//! Deterministic scripted backend for tests and replay.
//!
//! A transcript is an ordered list of rules. Each rule names an operation,
//! a request matcher (exact or prefix), and a queue of canned responses
//! consumed in order. Rules are tried in file order; a rule whose queue is
//! empty is skipped so later rules can take over. A request that matches
//! only exhausted rules errors as exhausted; a request matching no rule at
//! all errors as unmatched, naming the request.

use std::collections::VecDeque;
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use crate::backends::{BackendError, Frame, ModelBackend};
use crate::embed::Embedding;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleOp {
    Complete,
    VisionAnswer,
    EmbedText,
    EmbedImage,
}

impl RuleOp {
    fn as_str(&self) -> &'static str {
        match self {
            RuleOp::Complete => "complete",
            RuleOp::VisionAnswer => "vision_answer",
            RuleOp::EmbedText => "embed_text",
            RuleOp::EmbedImage => "embed_image",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Matcher {
    Exact(String),
    Prefix(String),
}

impl Matcher {
    fn matches(&self, request: &str) -> bool {
        match self {
            Matcher::Exact(text) => request == text,
            Matcher::Prefix(prefix) => request.starts_with(prefix.as_str()),
        }
    }
}

/// One transcript rule. `responses` serves text operations; `embeddings`
/// serves the two embedding operations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rule {
    pub op: RuleOp,
    #[serde(rename = "match")]
    pub matcher: Matcher,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub responses: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub embeddings: Vec<Vec<f32>>,
}

#[derive(Debug, Serialize, Deserialize)]
struct TranscriptFile {
    #[serde(default)]
    backend_id: Option<String>,
    rules: Vec<Rule>,
}

struct RuleState {
    op: RuleOp,
    matcher: Matcher,
    responses: VecDeque<String>,
    embeddings: VecDeque<Vec<f32>>,
}

/// A fully deterministic [`ModelBackend`] driven by a transcript.
pub struct ScriptedBackend {
    backend_id: String,
    // The cursor over per-rule queues; serialized so concurrent callers see
    // a consistent consumption order.
    rules: Mutex<Vec<RuleState>>,
}

impl ScriptedBackend {
    pub fn new(backend_id: impl Into<String>, rules: Vec<Rule>) -> Self {
        let rules = rules
            .into_iter()
            .map(|r| RuleState {
                op: r.op,
                matcher: r.matcher,
                responses: r.responses.into(),
                embeddings: r.embeddings.into(),
            })
            .collect();
        Self { backend_id: backend_id.into(), rules: Mutex::new(rules) }
    }

    pub fn from_file(path: &Path) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BackendError::Other(format!("reading {}: {e}", path.display())))?;
        let file: TranscriptFile = serde_json::from_str(&text)
            .map_err(|e| BackendError::Other(format!("parsing {}: {e}", path.display())))?;
        Ok(Self::new(file.backend_id.unwrap_or_else(|| "scripted".to_string()), file.rules))
    }

    fn next_response(&self, op: RuleOp, request: &str) -> Result<String, BackendError> {
        let mut rules = self.rules.lock().expect("scripted backend lock");
        let mut matched_any = false;
        for rule in rules.iter_mut() {
            if rule.op != op || !rule.matcher.matches(request) {
                continue;
            }
            matched_any = true;
            if let Some(response) = rule.responses.pop_front() {
                return Ok(response);
            }
        }
        Err(self.miss(op, request, matched_any))
    }

    fn next_embedding(&self, op: RuleOp, request: &str) -> Result<Embedding, BackendError> {
        let mut rules = self.rules.lock().expect("scripted backend lock");
        let mut matched_any = false;
        for rule in rules.iter_mut() {
            if rule.op != op || !rule.matcher.matches(request) {
                continue;
            }
            matched_any = true;
            if let Some(values) = rule.embeddings.pop_front() {
                return Embedding::unit(values)
                    .map_err(|e| BackendError::BadEmbedding(e.to_string()));
            }
        }
        Err(self.miss(op, request, matched_any))
    }

    fn miss(&self, op: RuleOp, request: &str, matched_any: bool) -> BackendError {
        let request_excerpt: String = request.chars().take(160).collect();
        if matched_any {
            BackendError::Exhausted { op: op.as_str().to_string(), request_excerpt }
        } else {
            BackendError::Unmatched { op: op.as_str().to_string(), request_excerpt }
        }
    }
}

impl ModelBackend for ScriptedBackend {
    fn backend_id(&self) -> &str {
        &self.backend_id
    }

    fn complete(&self, prompt: &str) -> Result<String, BackendError> {
        self.next_response(RuleOp::Complete, prompt)
    }

    fn vision_answer(&self, frames: &[Frame], question: &str) -> Result<String, BackendError> {
        let _ = frames;
        self.next_response(RuleOp::VisionAnswer, question)
    }

    fn embed_text(&self, text: &str) -> Result<Embedding, BackendError> {
        self.next_embedding(RuleOp::EmbedText, text)
    }

    fn embed_image(&self, frame: &Frame) -> Result<Embedding, BackendError> {
        let request = serde_json::to_string(frame).unwrap_or_default();
        self.next_embedding(RuleOp::EmbedImage, &request)
    }
}
