//! OpenAI-compatible HTTP backend.
//!
//! Request bodies follow the chat-completions / embeddings wire format;
//! `build_chat_body` and `build_embed_body` are pure and golden-tested.
//! Transport failures are retried with exponential backoff, then surfaced
//! as `GatewayUnavailable`. An optional token bucket rate-limits calls;
//! callers only ever observe latency, never a throttling error.

use std::sync::Mutex;
use std::time::{Duration, Instant};

use serde_json::{json, Value};

use super::{
    check_chat_request, check_embed_inputs, ChatRequest, EmbeddingVector, Gateway, GatewayError,
    MAX_COMPLETION_TOKENS,
};

#[derive(Debug, Clone)]
pub struct HttpGatewayConfig {
    /// Base URL, e.g. `https://api.openai.com/v1`.
    pub api_base: String,
    pub api_key: String,
    pub chat_model: String,
    pub embed_model: String,
    pub max_attempts: u32,
    pub backoff_start: Duration,
    pub request_timeout: Duration,
    /// Requests per second; `None` disables rate limiting.
    pub rate_limit_rps: Option<f64>,
}

impl HttpGatewayConfig {
    /// Reads LM_API_BASE, LM_API_KEY, LM_CHAT_MODEL, LM_EMBED_MODEL.
    pub fn from_env() -> Result<Self, GatewayError> {
        let var = |name: &str| {
            std::env::var(name).map_err(|_| GatewayError::InvalidRequest(format!("{name} not set")))
        };
        Ok(Self {
            api_base: var("LM_API_BASE")?,
            api_key: var("LM_API_KEY")?,
            chat_model: var("LM_CHAT_MODEL")?,
            embed_model: var("LM_EMBED_MODEL")?,
            ..Self::defaults()
        })
    }

    pub fn defaults() -> Self {
        Self {
            api_base: String::new(),
            api_key: String::new(),
            chat_model: String::new(),
            embed_model: String::new(),
            max_attempts: 3,
            backoff_start: Duration::from_millis(250),
            request_timeout: Duration::from_secs(60),
            rate_limit_rps: None,
        }
    }
}

struct TokenBucket {
    tokens: f64,
    last_refill: Instant,
    rate: f64,
    burst: f64,
}

impl TokenBucket {
    fn new(rate: f64) -> Self {
        Self {
            tokens: rate.max(1.0),
            last_refill: Instant::now(),
            rate,
            burst: rate.max(1.0),
        }
    }

    /// Blocks until a token is available; callers never see a throttle error.
    fn acquire(&mut self) {
        loop {
            let now = Instant::now();
            self.tokens = (self.tokens
                + now.duration_since(self.last_refill).as_secs_f64() * self.rate)
                .min(self.burst);
            self.last_refill = now;
            if self.tokens >= 1.0 {
                self.tokens -= 1.0;
                return;
            }
            let wait = (1.0 - self.tokens) / self.rate;
            std::thread::sleep(Duration::from_secs_f64(wait));
        }
    }
}

pub struct HttpGateway {
    cfg: HttpGatewayConfig,
    client: reqwest::blocking::Client,
    bucket: Option<Mutex<TokenBucket>>,
}

/// Chat-completions request body.
pub fn build_chat_body(req: &ChatRequest, model: &str) -> Value {
    let mut body = json!({
        "model": model,
        "temperature": req.temperature,
        "max_tokens": MAX_COMPLETION_TOKENS,
        "messages": [
            {"role": "system", "content": req.system_prompt},
            {"role": "user", "content": req.user_prompt},
        ],
    });
    if req.structured_flag {
        body["response_format"] = json!({
            "type": "json_schema",
            "json_schema": {
                "name": "boolean_answer",
                "strict": true,
                "schema": {
                    "type": "object",
                    "properties": {"answer": {"type": "boolean"}},
                    "required": ["answer"],
                    "additionalProperties": false
                }
            }
        });
    }
    body
}

/// Embeddings request body.
pub fn build_embed_body(texts: &[String], model: &str) -> Value {
    json!({ "model": model, "input": texts })
}

impl HttpGateway {
    pub fn new(cfg: HttpGatewayConfig) -> Result<Self, GatewayError> {
        let client = reqwest::blocking::Client::builder()
            .timeout(cfg.request_timeout)
            .build()
            .map_err(|e| GatewayError::InvalidRequest(e.to_string()))?;
        let bucket = cfg.rate_limit_rps.map(|r| Mutex::new(TokenBucket::new(r)));
        Ok(Self {
            cfg,
            client,
            bucket,
        })
    }

    fn post_with_retry(&self, url: &str, body: &Value) -> Result<Value, GatewayError> {
        if let Some(bucket) = &self.bucket {
            bucket.lock().unwrap().acquire();
        }
        let mut last_err = String::new();
        for attempt in 0..self.cfg.max_attempts {
            if attempt > 0 {
                std::thread::sleep(self.cfg.backoff_start * 2_u32.pow(attempt - 1));
            }
            let sent = self
                .client
                .post(url)
                .bearer_auth(&self.cfg.api_key)
                .json(body)
                .send();
            match sent {
                Ok(resp) => {
                    let status = resp.status();
                    if status.is_success() {
                        return resp
                            .json()
                            .map_err(|e| GatewayError::MalformedResponse(e.to_string()));
                    }
                    // Retry server-side and throttling failures; client errors
                    // are permanent.
                    let retryable = status.is_server_error() || status.as_u16() == 429;
                    last_err = format!("status {status}");
                    if !retryable {
                        break;
                    }
                }
                Err(e) => last_err = e.to_string(),
            }
        }
        Err(GatewayError::Unavailable {
            attempts: self.cfg.max_attempts,
            message: last_err,
        })
    }
}

impl Gateway for HttpGateway {
    fn chat_complete(&self, req: &ChatRequest) -> Result<String, GatewayError> {
        check_chat_request(req)?;
        let body = build_chat_body(req, &self.cfg.chat_model);
        let url = format!(
            "{}/chat/completions",
            self.cfg.api_base.trim_end_matches('/')
        );
        let resp = self.post_with_retry(&url, &body)?;
        let content = resp["choices"][0]["message"]["content"]
            .as_str()
            .unwrap_or_default()
            .to_string();
        if content.is_empty() {
            return Err(GatewayError::EmptyCompletion);
        }
        Ok(content)
    }

    fn embed(&self, texts: &[String]) -> Result<Vec<EmbeddingVector>, GatewayError> {
        check_embed_inputs(texts)?;
        if texts.is_empty() {
            return Ok(Vec::new());
        }
        let body = build_embed_body(texts, &self.cfg.embed_model);
        let url = format!("{}/embeddings", self.cfg.api_base.trim_end_matches('/'));
        let resp = self.post_with_retry(&url, &body)?;
        let data = resp["data"]
            .as_array()
            .ok_or_else(|| GatewayError::MalformedResponse("missing data array".into()))?;
        if data.len() != texts.len() {
            return Err(GatewayError::MalformedResponse(format!(
                "expected {} embeddings, got {}",
                texts.len(),
                data.len()
            )));
        }
        data.iter()
            .map(|item| {
                let values = item["embedding"]
                    .as_array()
                    .ok_or_else(|| GatewayError::MalformedResponse("missing embedding".into()))?
                    .iter()
                    .map(|v| v.as_f64().unwrap_or(0.0))
                    .collect();
                Ok(EmbeddingVector {
                    values,
                    model_id: self.cfg.embed_model.clone(),
                })
            })
            .collect()
    }
}
