//! Workspace layout, atomic file I/O, the stage lock and the manifest.

use std::collections::BTreeMap;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::PipelineError;
use crate::config::PipelineConfig;
use crate::digest::sha256_hex;

pub const CORPUS: &str = "corpus.conllx";
pub const COMPONENTS: &str = "components.jsonl";
pub const INVENTORY: &str = "inventory.jsonl";
pub const CONTEXTS: &str = "contexts.jsonl";
pub const TRIPLETS: &str = "triplets.jsonl";
pub const IMAGES: &str = "images.jsonl";
pub const QA: &str = "qa.jsonl";
pub const RESPONSES: &str = "responses.jsonl";
pub const SANITY: &str = "sanity.jsonl";
pub const ENTROPY: &str = "entropy.json";
pub const REPORT: &str = "report.json";
pub const MANIFEST: &str = "manifest.json";
const LOCK: &str = ".lock";

/// Benchmark files compared across runs for determinism.
pub const BENCHMARK_FILES: [&str; 7] = [COMPONENTS, INVENTORY, CONTEXTS, TRIPLETS, IMAGES, QA, CORPUS];

#[derive(Debug, Clone)]
pub struct Workspace {
    root: PathBuf,
}

impl Workspace {
    pub fn new(root: &Path) -> Result<Self, PipelineError> {
        std::fs::create_dir_all(root).map_err(|e| PipelineError::io(root, e))?;
        Ok(Self {
            root: root.to_path_buf(),
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.root.join(name)
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.root.join("cache")
    }

    pub fn exists(&self, name: &str) -> bool {
        self.path(name).exists()
    }

    pub fn digest(&self, name: &str) -> Option<String> {
        std::fs::read(self.path(name)).ok().map(|b| sha256_hex(&b))
    }

    /// Writes via a temporary file and rename so readers never see a
    /// partial file. Returns the content digest.
    pub fn write_atomic(&self, name: &str, bytes: &[u8]) -> Result<String, PipelineError> {
        let path = self.path(name);
        let tmp = self.root.join(format!(".{name}.tmp"));
        let mut f = File::create(&tmp).map_err(|e| PipelineError::io(&tmp, e))?;
        f.write_all(bytes)
            .and_then(|_| f.sync_all())
            .map_err(|e| PipelineError::io(&tmp, e))?;
        std::fs::rename(&tmp, &path).map_err(|e| PipelineError::io(&path, e))?;
        Ok(sha256_hex(bytes))
    }

    pub fn write_jsonl<T: Serialize>(&self, name: &str, records: &[T]) -> Result<String, PipelineError> {
        let mut buf = String::new();
        for r in records {
            buf.push_str(&serde_json::to_string(r).map_err(|e| PipelineError::json(&self.path(name), e))?);
            buf.push('\n');
        }
        self.write_atomic(name, buf.as_bytes())
    }

    pub fn write_json<T: Serialize>(&self, name: &str, value: &T) -> Result<String, PipelineError> {
        let mut bytes = serde_json::to_vec_pretty(value).map_err(|e| PipelineError::json(&self.path(name), e))?;
        bytes.push(b'\n');
        self.write_atomic(name, &bytes)
    }

    pub fn read_jsonl<T: DeserializeOwned>(&self, name: &str) -> Result<Vec<T>, PipelineError> {
        let path = self.path(name);
        let file = File::open(&path).map_err(|_| PipelineError::MissingArtifact(name.to_string()))?;
        let mut out = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line.map_err(|e| PipelineError::io(&path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let v = serde_json::from_str(&line).map_err(|e| PipelineError::Json {
                path: path.clone(),
                message: format!("line {}: {e}", i + 1),
            })?;
            out.push(v);
        }
        Ok(out)
    }

    /// Like [`read_jsonl`](Self::read_jsonl) but a missing file is empty.
    pub fn read_jsonl_or_empty<T: DeserializeOwned>(&self, name: &str) -> Result<Vec<T>, PipelineError> {
        if self.exists(name) {
            self.read_jsonl(name)
        } else {
            Ok(Vec::new())
        }
    }

    pub fn read_json<T: DeserializeOwned>(&self, name: &str) -> Result<T, PipelineError> {
        let path = self.path(name);
        let bytes = std::fs::read(&path).map_err(|_| PipelineError::MissingArtifact(name.to_string()))?;
        serde_json::from_slice(&bytes).map_err(|e| PipelineError::json(&path, e))
    }

    pub fn lock(&self) -> Result<WorkspaceLock, PipelineError> {
        WorkspaceLock::acquire(&self.path(LOCK))
    }

    pub fn load_manifest(&self) -> Result<Option<BenchmarkManifest>, PipelineError> {
        if self.exists(MANIFEST) {
            self.read_json(MANIFEST).map(Some)
        } else {
            Ok(None)
        }
    }
}

/// Exclusive lock on a workspace; released on drop. A lock left by a
/// process that no longer exists is taken over.
#[derive(Debug)]
pub struct WorkspaceLock {
    path: PathBuf,
}

fn process_alive(pid: u32) -> bool {
    if cfg!(target_os = "linux") {
        Path::new(&format!("/proc/{pid}")).exists()
    } else {
        true
    }
}

impl WorkspaceLock {
    fn acquire(path: &Path) -> Result<Self, PipelineError> {
        for _ in 0..2 {
            match OpenOptions::new().write(true).create_new(true).open(path) {
                Ok(mut f) => {
                    let _ = write!(f, "{}", std::process::id());
                    return Ok(Self {
                        path: path.to_path_buf(),
                    });
                }
                Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                    let holder = std::fs::read_to_string(path)
                        .ok()
                        .and_then(|s| s.trim().parse::<u32>().ok());
                    match holder {
                        Some(pid) if pid != std::process::id() && !process_alive(pid) => {
                            let _ = std::fs::remove_file(path);
                        }
                        _ => return Err(PipelineError::Locked(path.to_path_buf())),
                    }
                }
                Err(e) => return Err(PipelineError::io(path, e)),
            }
        }
        Err(PipelineError::Locked(path.to_path_buf()))
    }
}

impl Drop for WorkspaceLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KindCounts {
    pub triplets: usize,
    pub images: usize,
    pub qa: usize,
}

/// Benchmark statistics per target kind: accepted triplets, accepted
/// images and QA items.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchmarkCounts {
    /// Sentences in the ingested corpus.
    pub sentences: usize,
    pub subjects: usize,
    pub actions: usize,
    pub places: usize,
    pub contexts: usize,
    pub action_target: KindCounts,
    pub place_target: KindCounts,
    pub total: KindCounts,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageRecord {
    /// Digest of everything the stage read: inputs, config and gate labels.
    pub input_digest: String,
    pub outputs: Vec<String>,
    pub completed_at: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub corpus_source: Option<String>,
    pub corpus_digest: Option<String>,
    pub probability_backend: Option<String>,
    pub image_generator: Option<String>,
    pub evaluated_models: Vec<String>,
    pub seed: u64,
    pub created_at: String,
    pub updated_at: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkManifest {
    pub config: PipelineConfig,
    /// Content digest of every artifact written by a stage.
    pub files: BTreeMap<String, String>,
    pub stages: BTreeMap<String, StageRecord>,
    pub counts: BenchmarkCounts,
    pub provenance: Provenance,
}

impl BenchmarkManifest {
    pub fn new(config: &PipelineConfig) -> Self {
        let now = now();
        Self {
            config: config.clone(),
            files: BTreeMap::new(),
            stages: BTreeMap::new(),
            counts: BenchmarkCounts::default(),
            provenance: Provenance {
                seed: config.seed,
                created_at: now.clone(),
                updated_at: now,
                ..Default::default()
            },
        }
    }
}

pub fn now() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}
