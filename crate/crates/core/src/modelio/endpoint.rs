use serde::{Deserialize, Serialize};

use super::{ModelError, RetryPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EndpointKind {
    Lm,
    Image,
    Mllm,
}

/// Connection settings for one OpenAI-compatible model endpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelEndpointConfig {
    pub id: String,
    pub kind: EndpointKind,
    pub base_url: String,
    pub model: String,
    /// Name of the environment variable holding the API key, if any.
    #[serde(default)]
    pub api_key_env: Option<String>,
    #[serde(default = "default_timeout")]
    pub timeout_secs: f64,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    #[serde(default)]
    pub retry: RetryPolicy,
    /// LM only: text scored as context but excluded from the phrase's
    /// log-probability.
    #[serde(default)]
    pub prompt_prefix: Option<String>,
}

fn default_timeout() -> f64 {
    60.0
}

fn default_in_flight() -> usize {
    4
}

impl ModelEndpointConfig {
    pub fn new(id: &str, kind: EndpointKind, base_url: &str, model: &str) -> Self {
        Self {
            id: id.into(),
            kind,
            base_url: base_url.trim_end_matches('/').into(),
            model: model.into(),
            api_key_env: None,
            timeout_secs: default_timeout(),
            max_in_flight: default_in_flight(),
            retry: RetryPolicy::default(),
            prompt_prefix: None,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if !(self.timeout_secs > 0.0) {
            return Err(ModelError::Precondition(format!("{}: timeout must be > 0", self.id)));
        }
        if self.retry.max_attempts < 1 {
            return Err(ModelError::Precondition(format!("{}: max_attempts must be >= 1", self.id)));
        }
        if self.max_in_flight < 1 {
            return Err(ModelError::Precondition(format!("{}: max_in_flight must be >= 1", self.id)));
        }
        Ok(())
    }

    pub fn url(&self, path: &str) -> String {
        format!("{}/{}", self.base_url.trim_end_matches('/'), path.trim_start_matches('/'))
    }

    pub fn api_key(&self) -> Result<Option<String>, ModelError> {
        match &self.api_key_env {
            None => Ok(None),
            Some(var) => std::env::var(var)
                .map(Some)
                .map_err(|_| ModelError::Auth(format!("environment variable {var} is not set"))),
        }
    }
}
