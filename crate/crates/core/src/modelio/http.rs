//! Minimal blocking JSON-over-HTTP transport shared by the live adapters.

use std::time::Duration;

use serde_json::Value;

use super::{ModelEndpointConfig, ModelError};

pub(crate) struct HttpJson {
    agent: ureq::Agent,
}

impl HttpJson {
    pub(crate) fn new(endpoint: &ModelEndpointConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .http_status_as_error(false)
            .timeout_global(Some(Duration::from_secs_f64(endpoint.timeout_secs)))
            .build()
            .new_agent();
        Self { agent }
    }

    /// POSTs `body` and returns the parsed JSON of a 2xx response. 401/403
    /// map to [`ModelError::Auth`]; other non-2xx statuses to
    /// [`ModelError::Status`].
    pub(crate) fn post(
        &self,
        endpoint: &ModelEndpointConfig,
        path: &str,
        body: &Value,
    ) -> Result<Value, ModelError> {
        let mut request = self.agent.post(endpoint.url(path));
        if let Some(key) = endpoint.api_key()? {
            request = request.header("Authorization", format!("Bearer {key}"));
        }
        let mut response = request
            .send_json(body)
            .map_err(|e| ModelError::Transport(e.to_string()))?;
        let code = response.status().as_u16();
        let text = response
            .body_mut()
            .read_to_string()
            .map_err(|e| ModelError::Transport(e.to_string()))?;
        match code {
            200..=299 => serde_json::from_str(&text)
                .map_err(|e| ModelError::Provider(format!("invalid JSON response: {e}"))),
            401 | 403 => Err(ModelError::Auth(text)),
            _ => Err(ModelError::Status { code, body: text }),
        }
    }
}
