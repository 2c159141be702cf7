use std::path::Path;
use std::sync::atomic::{AtomicU64, AtomicUsize, Ordering};

use base64::Engine as _;
use serde_json::json;

use super::http::HttpJson;
use super::{with_retry, InFlightLimiter, ModelEndpointConfig, ModelError};
use crate::benchgen::{ImageRecord, ImageReview, ImageStatus};
use crate::digest::{sha256_hex, short_id};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GeneratedImage {
    Image { bytes: Vec<u8>, extension: String },
    Refused { reason: String },
}

pub trait ImageGenerator: Send + Sync {
    fn id(&self) -> String;

    /// Renders `prompt`; `variant` distinguishes regenerations of one prompt.
    fn generate(&self, prompt: &str, variant: u32) -> Result<GeneratedImage, ModelError>;
}

/// Offline generator: an SVG placeholder embedding the prompt. Bytes depend
/// only on (prompt, variant). Prompts containing any `refuse` substring are
/// refused.
#[derive(Debug, Clone, Default)]
pub struct MockImageGenerator {
    pub refuse: Vec<String>,
}

fn xml_escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

impl ImageGenerator for MockImageGenerator {
    fn id(&self) -> String {
        "mock-image".into()
    }

    fn generate(&self, prompt: &str, variant: u32) -> Result<GeneratedImage, ModelError> {
        if let Some(hit) = self.refuse.iter().find(|r| prompt.contains(r.as_str())) {
            return Ok(GeneratedImage::Refused {
                reason: format!("mock content policy: {hit:?}"),
            });
        }
        let svg = format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"512\" height=\"512\" data-variant=\"{variant}\">\
<rect width=\"512\" height=\"512\" fill=\"#eee\"/><text x=\"16\" y=\"256\" font-size=\"14\">{}</text></svg>\n",
            xml_escape(prompt)
        );
        Ok(GeneratedImage::Image {
            bytes: svg.into_bytes(),
            extension: "svg".into(),
        })
    }
}

/// OpenAI-style `images/generations` endpoint returning base64 PNGs.
pub struct LiveImageGenerator {
    endpoint: ModelEndpointConfig,
    http: HttpJson,
    limiter: InFlightLimiter,
    calls: AtomicU64,
}

impl LiveImageGenerator {
    pub fn new(endpoint: ModelEndpointConfig) -> Result<Self, ModelError> {
        endpoint.validate()?;
        Ok(Self {
            http: HttpJson::new(&endpoint),
            limiter: InFlightLimiter::new(endpoint.max_in_flight),
            endpoint,
            calls: AtomicU64::new(0),
        })
    }

    pub fn network_calls(&self) -> u64 {
        self.calls.load(Ordering::Relaxed)
    }
}

fn is_refusal(body: &str) -> bool {
    body.contains("content_policy_violation") || body.contains("safety system")
}

impl ImageGenerator for LiveImageGenerator {
    fn id(&self) -> String {
        self.endpoint.id.clone()
    }

    fn generate(&self, prompt: &str, _variant: u32) -> Result<GeneratedImage, ModelError> {
        let body = json!({
            "model": self.endpoint.model,
            "prompt": prompt,
            "n": 1,
            "size": "1024x1024",
            "response_format": "b64_json",
        });
        let result = with_retry(&self.endpoint.retry, |_| {
            let _permit = self.limiter.acquire();
            self.calls.fetch_add(1, Ordering::Relaxed);
            self.http.post(&self.endpoint, "images/generations", &body)
        });
        let response = match result {
            Err(ModelError::Status { code: 400, body }) if is_refusal(&body) => {
                return Ok(GeneratedImage::Refused { reason: body })
            }
            other => other?,
        };
        let encoded = response
            .pointer("/data/0/b64_json")
            .and_then(|v| v.as_str())
            .ok_or_else(|| ModelError::Provider("response has no data[0].b64_json".into()))?;
        let bytes = base64::engine::general_purpose::STANDARD
            .decode(encoded)
            .map_err(|e| ModelError::Provider(format!("bad base64 image: {e}")))?;
        Ok(GeneratedImage::Image {
            bytes,
            extension: "png".into(),
        })
    }
}

/// Generates one image and stores it under a content-addressed file name in
/// `workspace/images/`. Refusals come back as a failed record.
pub fn generate_image<G: ImageGenerator + ?Sized>(
    triplet_id: &str,
    prompt: &str,
    variant: u32,
    generator: &G,
    workspace: &Path,
) -> Result<ImageRecord, ModelError> {
    if prompt.trim().is_empty() {
        return Err(ModelError::Precondition("empty image prompt".into()));
    }
    let generated = generator.generate(prompt, variant)?;
    let mut record = ImageRecord {
        id: String::new(),
        triplet_id: triplet_id.to_string(),
        prompt: prompt.to_string(),
        uri: String::new(),
        variant,
        status: ImageStatus::Generated,
        review: ImageReview::default(),
    };
    match generated {
        GeneratedImage::Image { bytes, extension } => {
            let hash = sha256_hex(&bytes);
            let name = format!("{}.{extension}", &hash[..32]);
            let dir = workspace.join("images");
            std::fs::create_dir_all(&dir).map_err(|e| ModelError::Provider(e.to_string()))?;
            let path = dir.join(&name);
            if !path.exists() {
                let tmp = dir.join(format!(".{name}.tmp"));
                std::fs::write(&tmp, &bytes)
                    .and_then(|_| std::fs::rename(&tmp, &path))
                    .map_err(|e| ModelError::Provider(e.to_string()))?;
            }
            record.id = format!("img-{}", &hash[..12]);
            record.uri = format!("images/{name}");
        }
        GeneratedImage::Refused { reason } => {
            record.id = short_id("img", &[triplet_id, &variant.to_string(), "refused"]);
            record.status = ImageStatus::Failed { reason };
        }
    }
    Ok(record)
}

/// Runs a batch with at most `max_in_flight` concurrent generator calls;
/// results keep the order of `jobs`.
pub fn generate_images<G: ImageGenerator + ?Sized>(
    jobs: &[(String, String, u32)],
    generator: &G,
    workspace: &Path,
    max_in_flight: usize,
) -> Vec<Result<ImageRecord, ModelError>> {
    let limiter = InFlightLimiter::new(max_in_flight);
    let next = AtomicUsize::new(0);
    let workers = jobs.len().clamp(1, 16);
    let mut results: Vec<Option<Result<ImageRecord, ModelError>>> = vec![None; jobs.len()];
    let slots = std::sync::Mutex::new(&mut results);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some((triplet_id, prompt, variant)) = jobs.get(i) else { break };
                let r = {
                    let _permit = limiter.acquire();
                    generate_image(triplet_id, prompt, *variant, generator, workspace)
                };
                slots.lock().unwrap_or_else(|e| e.into_inner())[i] = Some(r);
            });
        }
    });
    results.into_iter().map(|r| r.expect("every job ran")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::time::Duration;

    #[test]
    fn mock_is_content_addressed() {
        let ws = tempfile::tempdir().unwrap();
        let g = MockImageGenerator::default();
        let a = generate_image("t1", "an image of a cat", 0, &g, ws.path()).unwrap();
        let b = generate_image("t1", "an image of a cat", 0, &g, ws.path()).unwrap();
        assert_eq!(a.uri, b.uri);
        assert_eq!(a.id, b.id);
        let bytes = std::fs::read(ws.path().join(&a.uri)).unwrap();
        assert!(String::from_utf8(bytes).unwrap().contains("an image of a cat"));
        let c = generate_image("t1", "an image of a cat", 1, &g, ws.path()).unwrap();
        assert_ne!(a.uri, c.uri);
    }

    #[test]
    fn refusal_becomes_failed_record() {
        let ws = tempfile::tempdir().unwrap();
        let g = MockImageGenerator { refuse: vec!["knife".into()] };
        let r = generate_image("t9", "an image of a knife", 0, &g, ws.path()).unwrap();
        assert!(matches!(r.status, ImageStatus::Failed { .. }));
        assert!(r.uri.is_empty());
        assert!(generate_image("t9", "", 0, &g, ws.path()).is_err());
    }

    struct Instrumented {
        current: AtomicUsize,
        peak: AtomicUsize,
        done: AtomicUsize,
    }

    impl ImageGenerator for Instrumented {
        fn id(&self) -> String {
            "instrumented".into()
        }
        fn generate(&self, prompt: &str, variant: u32) -> Result<GeneratedImage, ModelError> {
            let now = self.current.fetch_add(1, Ordering::SeqCst) + 1;
            self.peak.fetch_max(now, Ordering::SeqCst);
            std::thread::sleep(Duration::from_millis(20));
            self.current.fetch_sub(1, Ordering::SeqCst);
            self.done.fetch_add(1, Ordering::SeqCst);
            MockImageGenerator::default().generate(prompt, variant)
        }
    }

    #[test]
    fn batch_respects_in_flight_cap() {
        let ws = tempfile::tempdir().unwrap();
        let g = Instrumented {
            current: AtomicUsize::new(0),
            peak: AtomicUsize::new(0),
            done: AtomicUsize::new(0),
        };
        let jobs: Vec<_> = (0..10)
            .map(|i| (format!("t{i}"), format!("an image of thing {i}"), 0))
            .collect();
        let out = generate_images(&jobs, &g, ws.path(), 3);
        assert_eq!(out.len(), 10);
        assert!(out.iter().all(|r| r.is_ok()));
        assert_eq!(g.done.load(Ordering::SeqCst), 10);
        let peak = g.peak.load(Ordering::SeqCst);
        assert!(peak <= 3 && peak >= 2, "peak concurrency {peak}");
        assert_eq!(out[4].as_ref().unwrap().triplet_id, "t4");
    }
}
