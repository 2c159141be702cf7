use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use serde_json::{json, Value};

use super::http::HttpJson;
use super::{with_retry, DiskCache, InFlightLimiter, ModelEndpointConfig, ModelError};
use crate::conflict::ProbabilityBackend;

/// Base-2 log-probability of a non-empty phrase under `backend`.
pub fn lm_sequence_logprob<B: ProbabilityBackend + ?Sized>(
    phrase: &str,
    backend: &B,
) -> Result<f64, ModelError> {
    if phrase.trim().is_empty() {
        return Err(ModelError::Precondition("empty phrase".into()));
    }
    backend.sequence_logprob(phrase)
}

/// Completion endpoint scored with `echo` + `logprobs` (vLLM and other
/// OpenAI-compatible servers).
pub struct LiveLm {
    endpoint: ModelEndpointConfig,
    http: HttpJson,
    limiter: InFlightLimiter,
    calls: AtomicU64,
}

impl LiveLm {
    pub fn new(endpoint: ModelEndpointConfig) -> Result<Self, ModelError> {
        endpoint.validate()?;
        Ok(Self {
            http: HttpJson::new(&endpoint),
            limiter: InFlightLimiter::new(endpoint.max_in_flight),
            endpoint,
            calls: AtomicU64::new(0),
        })
    }

    /// HTTP requests issued so far, retries included.
    pub fn network_calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }

    fn request_body(&self, phrase: &str) -> Value {
        let prompt = format!("{}{phrase}", self.endpoint.prompt_prefix.as_deref().unwrap_or(""));
        json!({
            "model": self.endpoint.model,
            "prompt": prompt,
            "max_tokens": 0,
            "echo": true,
            "logprobs": 1,
            "temperature": 0.0,
        })
    }
}

/// Sums natural-log token log-probabilities at or after `skip_chars` and
/// converts the total to base 2.
pub(crate) fn parse_echo_logprobs(response: &Value, skip_chars: usize) -> Result<f64, ModelError> {
    let logprobs = response
        .pointer("/choices/0/logprobs")
        .filter(|v| !v.is_null())
        .ok_or_else(|| ModelError::Capability("response carries no token logprobs".into()))?;
    let values = logprobs
        .get("token_logprobs")
        .and_then(Value::as_array)
        .ok_or_else(|| ModelError::Capability("response carries no token_logprobs".into()))?;
    let offsets = logprobs.get("text_offset").and_then(Value::as_array);
    let mut total = 0.0;
    let mut scored = 0;
    for (i, v) in values.iter().enumerate() {
        let offset = offsets
            .and_then(|o| o.get(i))
            .and_then(Value::as_u64)
            .unwrap_or(u64::MAX) as usize;
        if offsets.is_some() && offset < skip_chars {
            continue;
        }
        if let Some(lp) = v.as_f64() {
            total += lp;
            scored += 1;
        }
    }
    if scored == 0 {
        return Err(ModelError::Capability("no scorable tokens in response".into()));
    }
    Ok(total / std::f64::consts::LN_2)
}

impl ProbabilityBackend for LiveLm {
    fn id(&self) -> String {
        self.endpoint.id.clone()
    }

    fn sequence_logprob(&self, phrase: &str) -> Result<f64, ModelError> {
        if phrase.trim().is_empty() {
            return Err(ModelError::Precondition("empty phrase".into()));
        }
        let body = self.request_body(phrase);
        let skip = self.endpoint.prompt_prefix.as_deref().map_or(0, str::len);
        let response = with_retry(&self.endpoint.retry, |_| {
            let _permit = self.limiter.acquire();
            self.calls.fetch_add(1, Ordering::Relaxed);
            self.http.post(&self.endpoint, "completions", &body)
        })?;
        let lp = parse_echo_logprobs(&response, skip)?;
        Ok(lp.min(0.0))
    }
}

/// Disk-cached wrapper; a warm cache answers without touching `inner`.
pub struct CachedBackend<B> {
    inner: B,
    cache: DiskCache,
}

impl<B: ProbabilityBackend> CachedBackend<B> {
    pub fn new(inner: B, cache_root: &Path) -> Result<Self, ModelError> {
        let cache = DiskCache::open(cache_root, &inner.id())?;
        Ok(Self { inner, cache })
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }

    pub fn cache(&self) -> &DiskCache {
        &self.cache
    }
}

impl<B: ProbabilityBackend> ProbabilityBackend for CachedBackend<B> {
    fn id(&self) -> String {
        self.inner.id()
    }

    fn sequence_logprob(&self, phrase: &str) -> Result<f64, ModelError> {
        let request = json!({ "backend": self.inner.id(), "phrase": phrase });
        self.cache
            .get_or_insert_with(&request, || self.inner.sequence_logprob(phrase))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conflict::TableBackend;
    use std::sync::atomic::AtomicUsize;

    struct Counting<'a> {
        inner: TableBackend,
        calls: &'a AtomicUsize,
    }

    impl ProbabilityBackend for Counting<'_> {
        fn id(&self) -> String {
            "counting".into()
        }
        fn sequence_logprob(&self, phrase: &str) -> Result<f64, ModelError> {
            self.calls.fetch_add(1, Ordering::SeqCst);
            self.inner.sequence_logprob(phrase)
        }
    }

    #[test]
    fn empty_phrase_is_precondition_error() {
        let t = TableBackend::new("t");
        assert!(matches!(lm_sequence_logprob("  ", &t), Err(ModelError::Precondition(_))));
    }

    #[test]
    fn warm_cache_makes_no_backend_calls() {
        let root = tempfile::tempdir().unwrap();
        let calls = AtomicUsize::new(0);
        let mut table = TableBackend::new("t");
        table.insert_logprob("a baby on the bed", -9.0);
        let cold = CachedBackend::new(Counting { inner: table.clone(), calls: &calls }, root.path()).unwrap();
        assert_eq!(cold.sequence_logprob("a baby on the bed").unwrap(), -9.0);
        assert_eq!(cold.sequence_logprob("a baby on the bed").unwrap(), -9.0);
        assert_eq!(calls.load(Ordering::SeqCst), 1);
        let warm = CachedBackend::new(Counting { inner: table, calls: &calls }, root.path()).unwrap();
        assert_eq!(warm.sequence_logprob("a baby on the bed").unwrap(), -9.0);
        assert_eq!(calls.load(Ordering::SeqCst), 1);
        assert_eq!(warm.cache().stats().hits, 1);
    }

    #[test]
    fn echo_logprobs_skip_prefix_and_convert_base() {
        let response = json!({
            "choices": [{ "logprobs": {
                "tokens": ["Q:", " a", " baby"],
                "token_logprobs": [null, -1.0, -2.0],
                "text_offset": [0, 2, 4]
            }}]
        });
        let all = parse_echo_logprobs(&response, 0).unwrap();
        assert!((all - (-3.0 / std::f64::consts::LN_2)).abs() < 1e-12);
        let tail = parse_echo_logprobs(&response, 3).unwrap();
        assert!((tail - (-2.0 / std::f64::consts::LN_2)).abs() < 1e-12);
        let none = json!({ "choices": [{ "text": "x", "logprobs": null }] });
        assert!(matches!(parse_echo_logprobs(&none, 0), Err(ModelError::Capability(_))));
    }
}
