//! The model-backend contract and its implementations.
//!
//! A [`ModelBackend`] bundles the four model operations the engine needs:
//! text completion for the planner, vision QA for perception and
//! verification, and text/image embedding for retrieval. Implementations:
//!
//! - [`http::HttpBackend`]: JSON-over-HTTP client to an external service
//! - [`scripted::ScriptedBackend`]: canned transcripts for deterministic tests
//! - [`synth::OracleBackend`]: a synthetic-world oracle for end-to-end runs
//!   without any real model

pub mod http;
pub mod scripted;
pub mod synth;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embed::Embedding;

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("http {status} from {url}: {body_excerpt}")]
    HttpStatus {
        status: u16,
        url: String,
        body_excerpt: String,
    },
    #[error("transport error calling {url}: {message}")]
    Transport { url: String, message: String },
    #[error("scripted transcript has no rule matching {op} request: {request_excerpt:?}")]
    Unmatched { op: String, request_excerpt: String },
    #[error("scripted transcript exhausted for {op} request: {request_excerpt:?}")]
    Exhausted { op: String, request_excerpt: String },
    #[error("backend returned an invalid embedding: {0}")]
    BadEmbedding(String),
    #[error("{0}")]
    Other(String),
}

/// A frame handle: enough to address a frame and to describe it on the wire.
/// Pixel payloads never enter the engine; frames travel as descriptors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub video_id: String,
    pub timestamp_s: f64,
    #[serde(flatten)]
    pub source: FrameSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum FrameSource {
    /// Fabricated descriptor, used by the synthetic world.
    Synthetic { descriptor: String },
    /// A file on disk, e.g. from a directory-of-images provider.
    File { path: String },
}

/// The four model operations behind one stable `backend_id`.
///
/// Implementations must tolerate concurrent calls; returned embeddings are
/// finite and non-zero (enforced again at [`Embedding`] construction).
pub trait ModelBackend: Send + Sync {
    fn backend_id(&self) -> &str;
    fn complete(&self, prompt: &str) -> Result<String, BackendError>;
    fn vision_answer(&self, frames: &[Frame], question: &str) -> Result<String, BackendError>;
    fn embed_text(&self, text: &str) -> Result<Embedding, BackendError>;
    fn embed_image(&self, frame: &Frame) -> Result<Embedding, BackendError>;
}

/// Parse a CLI backend spec into a backend instance.
///
/// Accepted forms:
/// - `http://...` or `https://...`: HTTP backend (also the `VX_BACKEND_URL` default)
/// - `script:<transcript.json>`: scripted backend
/// - `synth:<seed>[:<duration_s>[:<n_events>]]`: oracle over a regenerated world
/// - `world:<world.json>`: oracle over a saved world
pub fn backend_from_spec(spec: &str) -> Result<Box<dyn ModelBackend>, BackendError> {
    if spec.starts_with("http://") || spec.starts_with("https://") {
        return Ok(Box::new(http::HttpBackend::new(spec)));
    }
    if let Some(path) = spec.strip_prefix("script:") {
        let backend = scripted::ScriptedBackend::from_file(std::path::Path::new(path))
            .map_err(|e| BackendError::Other(format!("loading transcript {path}: {e}")))?;
        return Ok(Box::new(backend));
    }
    if let Some(rest) = spec.strip_prefix("synth:") {
        let mut parts = rest.split(':');
        let seed: u64 = parts
            .next()
            .unwrap_or_default()
            .parse()
            .map_err(|_| BackendError::Other(format!("bad synth seed in {spec:?}")))?;
        let duration_s: f64 = match parts.next() {
            Some(v) => v
                .parse()
                .map_err(|_| BackendError::Other(format!("bad synth duration in {spec:?}")))?,
            None => synth::DEFAULT_DURATION_S,
        };
        let n_events: usize = match parts.next() {
            Some(v) => v
                .parse()
                .map_err(|_| BackendError::Other(format!("bad synth event count in {spec:?}")))?,
            None => synth::DEFAULT_N_EVENTS,
        };
        let world = synth::synth_world_generate(seed, duration_s, n_events, synth::DEFAULT_CLIP_LEN_S)
            .map_err(|e| BackendError::Other(format!("synthesizing world: {e}")))?
            .0;
        return Ok(Box::new(synth::OracleBackend::new(std::sync::Arc::new(world))));
    }
    if let Some(path) = spec.strip_prefix("world:") {
        let world = synth::SyntheticWorld::read_json(std::path::Path::new(path))
            .map_err(|e| BackendError::Other(format!("loading world {path}: {e}")))?;
        return Ok(Box::new(synth::OracleBackend::new(std::sync::Arc::new(world))));
    }
    Err(BackendError::Other(format!(
        "unrecognized backend spec {spec:?}; expected a URL, script:<file>, synth:<seed>, or world:<file>"
    )))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn frame_descriptor_json_shape() {
        let frame = Frame {
            video_id: "v1".into(),
            timestamp_s: 42.0,
            source: FrameSource::Synthetic { descriptor: "frame v1@42".into() },
        };
        let json = serde_json::to_string(&frame).unwrap();
        assert_eq!(
            json,
            r#"{"video_id":"v1","timestamp_s":42.0,"source":"synthetic","descriptor":"frame v1@42"}"#
        );
    }

    #[test]
    fn spec_parsing_rejects_unknown_forms() {
        assert!(backend_from_spec("ftp://nope").is_err());
        assert!(backend_from_spec("synth:notanumber").is_err());
    }

    #[test]
    fn synth_spec_builds_oracle() {
        let backend = backend_from_spec("synth:7:240:2").unwrap();
        assert!(backend.backend_id().starts_with("synth"));
    }
}
