//! JSON-over-HTTP client for captioners and embedders hosted out of process.
//!
//! Endpoints (UTF-8, `application/json`):
//!
//! ```text
//! POST /v1/caption     {"images":[{"id":str,"data_b64":str}], "params":{..}?}
//!                   -> {"captions":[{"id":str,"text":str}]}
//! POST /v1/embed_text  {"texts":[str], "params":{..}?} -> {"embeddings":[[f32..]]}
//! POST /v1/embed_image {"images":[{"id":str,"data_b64":str}], "params":{..}?}
//!                   -> {"embeddings":[[f32..]]}
//! errors: 4xx/5xx with {"error":{"code":str,"message":str}}
//! ```
//!
//! Inputs are split into batches of `batch_size`; at most `max_in_flight`
//! batches are outstanding at once. Timeouts, connection failures and
//! 429/5xx statuses are retried with exponential backoff. A batch either
//! yields one validated result per input or an error.

use std::fs;
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Duration;

use base64::Engine;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{
    validate_embeddings, BackendDescriptor, BackendError, CaptionProvider, ImageEmbedder, ImageRef, TextEmbedder,
};
use crate::model::EmbeddingVector;

#[derive(Debug, Clone)]
pub struct HttpConfig {
    /// Base URL, e.g. `http://127.0.0.1:8080`.
    pub endpoint: String,
    pub timeout: Duration,
    /// Retries after the first attempt.
    pub retries: u32,
    pub backoff: Duration,
    pub batch_size: usize,
    pub max_in_flight: usize,
    /// Embedding dimension every response must have.
    pub dim: usize,
    pub bearer_token: Option<String>,
    /// Passed through verbatim as `"params"` (decoding options and such).
    pub params: Option<Value>,
}

impl HttpConfig {
    pub fn new(endpoint: impl Into<String>, dim: usize) -> Self {
        Self {
            endpoint: endpoint.into(),
            timeout: Duration::from_secs(30),
            retries: 3,
            backoff: Duration::from_millis(200),
            batch_size: 32,
            max_in_flight: 4,
            dim,
            bearer_token: None,
            params: None,
        }
    }
}

pub struct HttpBackend {
    config: HttpConfig,
    agent: ureq::Agent,
    retries_used: AtomicU64,
}

#[derive(Serialize)]
struct ImagePayload {
    id: String,
    data_b64: String,
}

#[derive(Deserialize)]
struct CaptionResponse {
    captions: Vec<CaptionEntry>,
}

#[derive(Deserialize)]
struct CaptionEntry {
    id: String,
    text: String,
}

#[derive(Deserialize)]
struct EmbedResponse {
    embeddings: Vec<Vec<f32>>,
}

#[derive(Deserialize)]
struct ErrorBody {
    error: ErrorDetail,
}

#[derive(Deserialize)]
struct ErrorDetail {
    code: String,
    message: String,
}

enum Failure {
    Retryable(BackendError),
    Permanent(BackendError),
}

impl HttpBackend {
    pub fn new(config: HttpConfig) -> Result<Self, BackendError> {
        if config.batch_size == 0 || config.max_in_flight == 0 {
            return Err(BackendError::MalformedResponse("batch_size and max_in_flight must be positive".into()));
        }
        let agent = ureq::AgentBuilder::new().timeout(config.timeout).build();
        Ok(Self { config, agent, retries_used: AtomicU64::new(0) })
    }

    pub fn config(&self) -> &HttpConfig {
        &self.config
    }

    /// Total retries performed so far, across all requests.
    pub fn retries_used(&self) -> u64 {
        self.retries_used.load(Ordering::Relaxed)
    }

    fn url(&self, route: &str) -> String {
        format!("{}{}", self.config.endpoint.trim_end_matches('/'), route)
    }

    fn with_params(&self, mut body: Value) -> Value {
        if let (Some(params), Some(obj)) = (&self.config.params, body.as_object_mut()) {
            obj.insert("params".into(), params.clone());
        }
        body
    }

    /// POSTs `body`, retrying transient failures.
    fn post(&self, route: &str, body: &Value) -> Result<String, BackendError> {
        let url = self.url(route);
        let payload = serde_json::to_string(body).expect("serializable");
        let attempts = self.config.retries + 1;
        let mut last = None;
        for attempt in 0..attempts {
            if attempt > 0 {
                self.retries_used.fetch_add(1, Ordering::Relaxed);
                let delay = self.config.backoff.saturating_mul(1 << (attempt - 1).min(16));
                log::warn!("retrying {route} (attempt {}/{attempts}) after {delay:?}", attempt + 1);
                std::thread::sleep(delay);
            }
            match self.send_once(&url, &payload, attempt + 1) {
                Ok(text) => return Ok(text),
                Err(Failure::Permanent(e)) => return Err(e),
                Err(Failure::Retryable(e)) => {
                    log::warn!("{route} attempt {} failed: {e}", attempt + 1);
                    last = Some(e);
                }
            }
        }
        Err(match last.expect("at least one attempt") {
            BackendError::Timeout { .. } => BackendError::Timeout { attempts },
            BackendError::Transport { message, .. } => BackendError::Transport { attempts, message },
            other => other,
        })
    }

    fn send_once(&self, url: &str, payload: &str, attempt: u32) -> Result<String, Failure> {
        let mut request = self.agent.post(url).set("Content-Type", "application/json");
        if let Some(token) = &self.config.bearer_token {
            request = request.set("Authorization", &format!("Bearer {token}"));
        }
        match request.send_string(payload) {
            Ok(response) => response.into_string().map_err(|e| classify_io(&e, attempt)),
            Err(ureq::Error::Status(status, response)) => {
                let text = response.into_string().unwrap_or_default();
                let (code, message) = match serde_json::from_str::<ErrorBody>(&text) {
                    Ok(body) => (body.error.code, body.error.message),
                    Err(_) => ("unknown".to_owned(), text),
                };
                let err = BackendError::HttpStatus { status, code, message };
                if status == 429 || status >= 500 {
                    Err(Failure::Retryable(err))
                } else {
                    Err(Failure::Permanent(err))
                }
            }
            Err(ureq::Error::Transport(t)) => {
                let timed_out = t.to_string().contains("timed out")
                    || std::error::Error::source(&t).and_then(|s| s.downcast_ref::<std::io::Error>()).is_some_and(
                        |io| matches!(io.kind(), std::io::ErrorKind::TimedOut | std::io::ErrorKind::WouldBlock),
                    );
                if timed_out {
                    Err(Failure::Retryable(BackendError::Timeout { attempts: attempt }))
                } else {
                    Err(Failure::Retryable(BackendError::Transport { attempts: attempt, message: t.to_string() }))
                }
            }
        }
    }

    /// Runs `call` over `batch_size` chunks, `max_in_flight` at a time, and
    /// concatenates the results in input order.
    fn batched<T, R, F>(&self, items: &[T], call: F) -> Result<Vec<R>, BackendError>
    where
        T: Sync,
        R: Send,
        F: Fn(&[T]) -> Result<Vec<R>, BackendError> + Sync,
    {
        let chunks: Vec<&[T]> = items.chunks(self.config.batch_size).collect();
        let mut out = Vec::with_capacity(items.len());
        for wave in chunks.chunks(self.config.max_in_flight) {
            let results: Vec<Result<Vec<R>, BackendError>> = std::thread::scope(|scope| {
                let handles: Vec<_> = wave.iter().map(|chunk| scope.spawn(|| call(chunk))).collect();
                handles.into_iter().map(|h| h.join().expect("batch worker panicked")).collect()
            });
            for r in results {
                out.extend(r?);
            }
        }
        Ok(out)
    }

    fn parse_embeddings(&self, text: &str, expected: usize) -> Result<Vec<EmbeddingVector>, BackendError> {
        let response: EmbedResponse =
            serde_json::from_str(text).map_err(|e| BackendError::MalformedResponse(e.to_string()))?;
        let embeddings = response
            .embeddings
            .iter()
            .map(|v| EmbeddingVector::from_f32(v))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| BackendError::MalformedResponse(e.to_string()))?;
        validate_embeddings(&embeddings, expected, self.config.dim)?;
        Ok(embeddings)
    }

    fn image_payloads(images: &[ImageRef<'_>]) -> Result<Vec<ImagePayload>, BackendError> {
        images
            .iter()
            .map(|img| {
                let bytes = fs::read(img.image_ref)
                    .map_err(|source| BackendError::Io { path: img.image_ref.to_owned(), source })?;
                Ok(ImagePayload {
                    id: img.id.to_owned(),
                    data_b64: base64::engine::general_purpose::STANDARD.encode(bytes),
                })
            })
            .collect()
    }
}

fn classify_io(e: &std::io::Error, attempt: u32) -> Failure {
    if matches!(e.kind(), std::io::ErrorKind::TimedOut | std::io::ErrorKind::WouldBlock) {
        Failure::Retryable(BackendError::Timeout { attempts: attempt })
    } else {
        Failure::Retryable(BackendError::Transport { attempts: attempt, message: e.to_string() })
    }
}

impl CaptionProvider for HttpBackend {
    fn descriptor(&self) -> BackendDescriptor {
        BackendDescriptor { name: format!("http:{}", self.config.endpoint), version: "v1".into() }
    }

    fn caption_batch(&self, images: &[ImageRef<'_>]) -> Result<Vec<String>, BackendError> {
        self.batched(images, |chunk| {
            let payloads = Self::image_payloads(chunk)?;
            let body = self.with_params(serde_json::json!({ "images": payloads }));
            let text = self.post("/v1/caption", &body)?;
            let response: CaptionResponse =
                serde_json::from_str(&text).map_err(|e| BackendError::MalformedResponse(e.to_string()))?;
            if response.captions.len() != chunk.len() {
                return Err(BackendError::CountMismatch { expected: chunk.len(), actual: response.captions.len() });
            }
            chunk
                .iter()
                .zip(response.captions)
                .map(|(img, entry)| {
                    if entry.id != img.id {
                        return Err(BackendError::MalformedResponse(format!(
                            "caption for {:?} returned where {:?} was expected",
                            entry.id, img.id
                        )));
                    }
                    Ok(entry.text)
                })
                .collect()
        })
    }
}

impl TextEmbedder for HttpBackend {
    fn name(&self) -> &str {
        "http"
    }

    fn dim(&self) -> usize {
        self.config.dim
    }

    fn embed_texts(&self, texts: &[&str]) -> Result<Vec<EmbeddingVector>, BackendError> {
        self.batched(texts, |chunk| {
            let body = self.with_params(serde_json::json!({ "texts": chunk }));
            let text = self.post("/v1/embed_text", &body)?;
            self.parse_embeddings(&text, chunk.len())
        })
    }
}

impl ImageEmbedder for HttpBackend {
    fn name(&self) -> &str {
        "http"
    }

    fn dim(&self) -> usize {
        self.config.dim
    }

    fn embed_images(&self, images: &[ImageRef<'_>]) -> Result<Vec<EmbeddingVector>, BackendError> {
        self.batched(images, |chunk| {
            let payloads = Self::image_payloads(chunk)?;
            let body = self.with_params(serde_json::json!({ "images": payloads }));
            let text = self.post("/v1/embed_image", &body)?;
            self.parse_embeddings(&text, chunk.len())
        })
    }
}
