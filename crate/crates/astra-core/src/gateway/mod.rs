//! Single abstraction over chat-completion and embedding backends.
//!
//! Three implementations: [`MockGateway`] (fully deterministic, offline),
//! [`HttpGateway`] (OpenAI-compatible wire format), and [`CassetteGateway`]
//! (record/replay of a real backend for offline deterministic runs).

mod cassette;
mod http;
mod mock;

pub use cassette::CassetteGateway;
pub use http::{HttpGateway, HttpGatewayConfig};
pub use mock::MockGateway;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Completions are capped at this many tokens; the matchers only need
/// short outputs.
pub const MAX_COMPLETION_TOKENS: u32 = 1024;

/// Mock embedding dimension.
pub const MOCK_EMBED_DIM: usize = 256;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("gateway unavailable after {attempts} attempts: {message}")]
    Unavailable { attempts: u32, message: String },
    #[error("backend returned an empty completion")]
    EmptyCompletion,
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("cassette has no entry for key {key}")]
    CassetteMiss { key: String },
    #[error("cassette io: {0}")]
    CassetteIo(#[from] std::io::Error),
    #[error("backend response malformed: {0}")]
    MalformedResponse(String),
}

/// One chat-completion request.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ChatRequest {
    pub system_prompt: String,
    pub user_prompt: String,
    pub temperature: f64,
    /// Request a boolean-typed structured answer.
    pub structured_flag: bool,
}

impl ChatRequest {
    pub fn new(system_prompt: impl Into<String>, user_prompt: impl Into<String>) -> Self {
        Self {
            system_prompt: system_prompt.into(),
            user_prompt: user_prompt.into(),
            temperature: 0.0,
            structured_flag: false,
        }
    }

    pub fn structured(mut self) -> Self {
        self.structured_flag = true;
        self
    }
}

/// Fixed-length embedding with the model that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
    pub model_id: String,
}

/// Chat + embedding backend. Implementations are shareable across threads;
/// the mock is a pure function of its inputs.
pub trait Gateway: Send + Sync {
    fn chat_complete(&self, req: &ChatRequest) -> Result<String, GatewayError>;

    /// One vector per input text, order-preserving.
    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, GatewayError>;
}

pub(crate) fn check_chat_request(req: &ChatRequest) -> Result<(), GatewayError> {
    if req.system_prompt.is_empty() || req.user_prompt.is_empty() {
        return Err(GatewayError::InvalidRequest("empty prompt".into()));
    }
    Ok(())
}

pub(crate) fn check_embed_inputs(texts: &[String]) -> Result<(), GatewayError> {
    if texts.iter().any(|t| t.is_empty()) {
        return Err(GatewayError::InvalidRequest("empty embedding input".into()));
    }
    Ok(())
}
