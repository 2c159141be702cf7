use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::time::Instant;

use base64::Engine as _;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::http::HttpJson;
use super::{with_retry, DiskCache, InFlightLimiter, ModelEndpointConfig, ModelError};

const MAX_IMAGE_BYTES: u64 = 20 * 1024 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    WithImage,
    TextOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MllmRequest {
    /// Image location relative to the workspace; `None` for text-only.
    pub image: Option<String>,
    pub prompt: String,
    pub temperature: f64,
    pub samples: u32,
}

impl MllmRequest {
    pub fn text_only(prompt: impl Into<String>, temperature: f64, samples: u32) -> Self {
        Self {
            image: None,
            prompt: prompt.into(),
            temperature,
            samples,
        }
    }

    pub fn with_image(image: impl Into<String>, prompt: impl Into<String>, temperature: f64, samples: u32) -> Self {
        Self {
            image: Some(image.into()),
            prompt: prompt.into(),
            temperature,
            samples,
        }
    }

    pub fn condition(&self) -> Condition {
        if self.image.is_some() {
            Condition::WithImage
        } else {
            Condition::TextOnly
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MllmResponse {
    pub texts: Vec<String>,
    #[serde(default)]
    pub token_logprobs: Option<Vec<Vec<f64>>>,
    pub latency_ms: u64,
    #[serde(default)]
    pub metadata: BTreeMap<String, String>,
}

pub trait MllmClient: Send + Sync {
    fn id(&self) -> String;
    fn query(&self, request: &MllmRequest) -> Result<MllmResponse, ModelError>;
}

impl<T: MllmClient + ?Sized> MllmClient for &T {
    fn id(&self) -> String {
        (**self).id()
    }
    fn query(&self, request: &MllmRequest) -> Result<MllmResponse, ModelError> {
        (**self).query(request)
    }
}

impl<T: MllmClient + ?Sized> MllmClient for Box<T> {
    fn id(&self) -> String {
        (**self).id()
    }
    fn query(&self, request: &MllmRequest) -> Result<MllmResponse, ModelError> {
        (**self).query(request)
    }
}

/// Validates the request and forwards it to `client`.
pub fn query_mllm<C: MllmClient + ?Sized>(
    request: &MllmRequest,
    client: &C,
) -> Result<MllmResponse, ModelError> {
    if request.samples < 1 {
        return Err(ModelError::Precondition("sample count must be >= 1".into()));
    }
    if request.prompt.trim().is_empty() {
        return Err(ModelError::Precondition("empty prompt".into()));
    }
    let response = client.query(request)?;
    if response.texts.len() != request.samples as usize {
        return Err(ModelError::Provider(format!(
            "asked for {} samples, got {}",
            request.samples,
            response.texts.len()
        )));
    }
    Ok(response)
}

/// Replays canned texts keyed by (image, exact prompt). At temperature
/// 0 every sample is the first scripted text; otherwise samples cycle
/// through the scripted texts.
#[derive(Debug, Default)]
pub struct ScriptedMllm {
    id: String,
    script: BTreeMap<(Option<String>, String), Vec<String>>,
    fallback: Option<String>,
    calls: AtomicU64,
}

impl ScriptedMllm {
    pub fn new(id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            ..Default::default()
        }
    }

    /// `image` is `None` for the text-only condition.
    pub fn insert(&mut self, image: Option<&str>, prompt: impl Into<String>, texts: Vec<String>) {
        self.script
            .insert((image.map(str::to_string), prompt.into()), texts);
    }

    pub fn with_fallback(mut self, text: impl Into<String>) -> Self {
        self.fallback = Some(text.into());
        self
    }

    pub fn len(&self) -> usize {
        self.script.len()
    }

    pub fn is_empty(&self) -> bool {
        self.script.is_empty()
    }

    pub fn calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }
}

impl MllmClient for ScriptedMllm {
    fn id(&self) -> String {
        self.id.clone()
    }

    fn query(&self, request: &MllmRequest) -> Result<MllmResponse, ModelError> {
        self.calls.fetch_add(1, Ordering::Relaxed);
        let key = (request.image.clone(), request.prompt.clone());
        let texts = match (self.script.get(&key), &self.fallback) {
            (Some(t), _) if !t.is_empty() => t.clone(),
            (_, Some(f)) => vec![f.clone()],
            _ => {
                return Err(ModelError::Unscripted(format!(
                    "{:?} {:?}",
                    request.condition(),
                    request.prompt
                )))
            }
        };
        let samples = request.samples as usize;
        let out = if request.temperature == 0.0 {
            vec![texts[0].clone(); samples]
        } else {
            (0..samples).map(|i| texts[i % texts.len()].clone()).collect()
        };
        Ok(MllmResponse {
            texts: out,
            token_logprobs: None,
            latency_ms: 0,
            metadata: BTreeMap::from([("provider".to_string(), "scripted".to_string())]),
        })
    }
}

/// OpenAI-style `chat/completions` endpoint with inline base64 images.
pub struct LiveMllm {
    endpoint: ModelEndpointConfig,
    http: HttpJson,
    limiter: InFlightLimiter,
    image_root: PathBuf,
    calls: AtomicU64,
}

impl LiveMllm {
    pub fn new(endpoint: ModelEndpointConfig, image_root: &Path) -> Result<Self, ModelError> {
        endpoint.validate()?;
        Ok(Self {
            http: HttpJson::new(&endpoint),
            limiter: InFlightLimiter::new(endpoint.max_in_flight),
            image_root: image_root.to_path_buf(),
            endpoint,
            calls: AtomicU64::new(0),
        })
    }

    pub fn network_calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    fn image_part(&self, uri: &str) -> Result<Value, ModelError> {
        let path = self.image_root.join(uri);
        let size = std::fs::metadata(&path)
            .map_err(|e| ModelError::Precondition(format!("image {}: {e}", path.display())))?
            .len();
        if size > MAX_IMAGE_BYTES {
            return Err(ModelError::Precondition(format!(
                "image {} is {size} bytes, above the {MAX_IMAGE_BYTES}-byte limit",
                path.display()
            )));
        }
        let bytes = std::fs::read(&path).map_err(|e| ModelError::Precondition(e.to_string()))?;
        let mime = match path.extension().and_then(|e| e.to_str()) {
            Some("jpg" | "jpeg") => "image/jpeg",
            Some("svg") => "image/svg+xml",
            Some("webp") => "image/webp",
            _ => "image/png",
        };
        let data = base64::engine::general_purpose::STANDARD.encode(bytes);
        Ok(json!({ "type": "image_url", "image_url": { "url": format!("data:{mime};base64,{data}") } }))
    }

    pub(crate) fn request_body(&self, request: &MllmRequest) -> Result<Value, ModelError> {
        let mut content = vec![json!({ "type": "text", "text": request.prompt })];
        if let Some(uri) = &request.image {
            content.insert(0, self.image_part(uri)?);
        }
        Ok(json!({
            "model": self.endpoint.model,
            "messages": [{ "role": "user", "content": content }],
            "temperature": request.temperature,
            "n": request.samples,
        }))
    }
}

pub(crate) fn parse_chat_texts(response: &Value) -> Result<Vec<String>, ModelError> {
    let choices = response
        .get("choices")
        .and_then(Value::as_array)
        .ok_or_else(|| ModelError::Provider("response has no choices".into()))?;
    choices
        .iter()
        .map(|c| {
            c.pointer("/message/content")
                .and_then(Value::as_str)
                .map(str::to_string)
                .ok_or_else(|| ModelError::Provider("choice without message content".into()))
        })
        .collect()
}

impl MllmClient for LiveMllm {
    fn id(&self) -> String {
        self.endpoint.id.clone()
    }

    fn query(&self, request: &MllmRequest) -> Result<MllmResponse, ModelError> {
        let body = self.request_body(request)?;
        let started = Instant::now();
        let response = with_retry(&self.endpoint.retry, |_| {
            let _permit = self.limiter.acquire();
            self.calls.fetch_add(1, Ordering::Relaxed);
            self.http.post(&self.endpoint, "chat/completions", &body)
        })?;
        let texts = parse_chat_texts(&response)?;
        let mut metadata = BTreeMap::new();
        if let Some(model) = response.get("model").and_then(Value::as_str) {
            metadata.insert("model".to_string(), model.to_string());
        }
        Ok(MllmResponse {
            texts,
            token_logprobs: None,
            latency_ms: started.elapsed().as_millis() as u64,
            metadata,
        })
    }
}

/// Disk-cached wrapper; identical requests are answered from the cache.
pub struct CachedMllm<C> {
    inner: C,
    cache: DiskCache,
}

impl<C: MllmClient> CachedMllm<C> {
    pub fn new(inner: C, cache_root: &Path) -> Result<Self, ModelError> {
        let cache = DiskCache::open(cache_root, &inner.id())?;
        Ok(Self { inner, cache })
    }

    pub fn inner(&self) -> &C {
        &self.inner
    }

    pub fn cache(&self) -> &DiskCache {
        &self.cache
    }
}

impl<C: MllmClient> MllmClient for CachedMllm<C> {
    fn id(&self) -> String {
        self.inner.id()
    }

    fn query(&self, request: &MllmRequest) -> Result<MllmResponse, ModelError> {
        let key = json!({ "client": self.inner.id(), "request": request });
        self.cache.get_or_insert_with(&key, || self.inner.query(request))
    }
}
