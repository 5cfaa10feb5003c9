//! JSON-over-HTTP model backend.
//!
//! Maps the four backend operations onto `POST /complete`, `/vision_answer`,
//! `/embed_text`, and `/embed_image`. Transient failures (transport errors
//! and 5xx) are retried with exponential backoff, three attempts total.

use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::backends::{BackendError, Frame, ModelBackend};
use crate::embed::Embedding;

/// Environment variable consulted for the default base URL.
pub const BACKEND_URL_ENV: &str = "VX_BACKEND_URL";

const MAX_ATTEMPTS: u32 = 3;

pub struct HttpBackend {
    agent: ureq::Agent,
    base_url: String,
    backend_id: String,
    bearer_token: Option<String>,
    backoff_base: Duration,
}

#[derive(Serialize)]
struct CompleteRequest<'a> {
    prompt: &'a str,
}

#[derive(Serialize)]
struct VisionRequest<'a> {
    frames: &'a [Frame],
    question: &'a str,
}

#[derive(Serialize)]
struct EmbedTextRequest<'a> {
    text: &'a str,
}

#[derive(Serialize)]
struct EmbedImageRequest<'a> {
    frame: &'a Frame,
}

#[derive(Deserialize)]
struct TextResponse {
    text: String,
}

#[derive(Deserialize)]
struct EmbeddingResponse {
    embedding: Vec<f32>,
}

impl HttpBackend {
    pub fn new(base_url: impl Into<String>) -> Self {
        let base_url = base_url.into().trim_end_matches('/').to_string();
        let backend_id = format!("http:{base_url}");
        let config = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs(60)))
            .build();
        Self {
            agent: ureq::Agent::new_with_config(config),
            base_url,
            backend_id,
            bearer_token: None,
            backoff_base: Duration::from_millis(50),
        }
    }

    /// Base URL from `VX_BACKEND_URL`, if set.
    pub fn from_env() -> Option<Self> {
        std::env::var(BACKEND_URL_ENV).ok().map(Self::new)
    }

    pub fn with_bearer_token(mut self, token: impl Into<String>) -> Self {
        self.bearer_token = Some(token.into());
        self
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        let config = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(timeout))
            .build();
        self.agent = ureq::Agent::new_with_config(config);
        self
    }

    /// Shrink the retry backoff; only useful in tests.
    pub fn with_backoff_base(mut self, base: Duration) -> Self {
        self.backoff_base = base;
        self
    }

    fn post<B: Serialize, R: DeserializeOwned>(&self, path: &str, body: &B) -> Result<R, BackendError> {
        let url = format!("{}{path}", self.base_url);
        let mut last_err: Option<BackendError> = None;
        for attempt in 0..MAX_ATTEMPTS {
            if attempt > 0 {
                std::thread::sleep(self.backoff_base * 2u32.pow(attempt - 1));
            }
            let mut request = self.agent.post(&url);
            if let Some(token) = &self.bearer_token {
                request = request.header("authorization", &format!("Bearer {token}"));
            }
            match request.send_json(body) {
                Ok(mut response) => {
                    let status = response.status().as_u16();
                    if (200..300).contains(&status) {
                        return response.body_mut().read_json::<R>().map_err(|e| {
                            BackendError::Transport { url: url.clone(), message: format!("decoding response: {e}") }
                        });
                    }
                    let body_excerpt = response
                        .body_mut()
                        .read_to_string()
                        .unwrap_or_default()
                        .chars()
                        .take(200)
                        .collect();
                    let err = BackendError::HttpStatus { status, url: url.clone(), body_excerpt };
                    if status >= 500 {
                        last_err = Some(err);
                        continue;
                    }
                    return Err(err);
                }
                Err(e) => {
                    last_err = Some(BackendError::Transport { url: url.clone(), message: e.to_string() });
                }
            }
        }
        Err(last_err.unwrap_or(BackendError::Transport {
            url,
            message: "retries exhausted".to_string(),
        }))
    }
}

impl ModelBackend for HttpBackend {
    fn backend_id(&self) -> &str {
        &self.backend_id
    }

    fn complete(&self, prompt: &str) -> Result<String, BackendError> {
        let response: TextResponse = self.post("/complete", &CompleteRequest { prompt })?;
        Ok(response.text)
    }

    fn vision_answer(&self, frames: &[Frame], question: &str) -> Result<String, BackendError> {
        let response: TextResponse =
            self.post("/vision_answer", &VisionRequest { frames, question })?;
        Ok(response.text)
    }

    fn embed_text(&self, text: &str) -> Result<Embedding, BackendError> {
        let response: EmbeddingResponse = self.post("/embed_text", &EmbedTextRequest { text })?;
        Embedding::unit(response.embedding).map_err(|e| BackendError::BadEmbedding(e.to_string()))
    }

    fn embed_image(&self, frame: &Frame) -> Result<Embedding, BackendError> {
        let response: EmbeddingResponse = self.post("/embed_image", &EmbedImageRequest { frame })?;
        Embedding::unit(response.embedding).map_err(|e| BackendError::BadEmbedding(e.to_string()))
    }
}
