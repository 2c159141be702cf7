//! Clients for the three external model services (LM log-probability
//! scoring, text-to-image generation, multimodal chat), each with an
//! offline mock, plus the shared retry, in-flight limiting and response
//! cache machinery.

mod cache;
mod endpoint;
mod http;
mod image;
mod limiter;
mod lm;
mod mllm;
mod retry;

use thiserror::Error;

pub use cache::{CacheStats, DiskCache};
pub use endpoint::{EndpointKind, ModelEndpointConfig};
pub use image::{
    generate_image, generate_images, GeneratedImage, ImageGenerator, LiveImageGenerator,
    MockImageGenerator,
};
pub use limiter::{InFlightLimiter, Permit};
pub use lm::{lm_sequence_logprob, CachedBackend, LiveLm};
pub use mllm::{
    query_mllm, CachedMllm, Condition, LiveMllm, MllmClient, MllmRequest,
    MllmResponse, ScriptedMllm,
};
pub use retry::{with_retry, RetryPolicy};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum ModelError {
    #[error("transport error: {0}")]
    Transport(String),
    #[error("provider returned HTTP {code}: {body}")]
    Status { code: u16, body: String },
    #[error("authentication failed: {0}")]
    Auth(String),
    #[error("endpoint lacks capability: {0}")]
    Capability(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("no probability for phrase {0:?}")]
    Missing(String),
    #[error("provider error: {0}")]
    Provider(String),
    #[error("cache error: {0}")]
    Cache(String),
    #[error("no scripted response for {0}")]
    Unscripted(String),
}

impl ModelError {
    /// Transport failures, rate limiting and server errors are retried.
    pub fn is_retryable(&self) -> bool {
        match self {
            ModelError::Transport(_) => true,
            ModelError::Status { code, .. } => *code == 429 || *code >= 500,
            _ => false,
        }
    }
}
