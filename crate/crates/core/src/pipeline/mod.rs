//! Stage orchestration over a workspace directory.
//!
//! Stages run one at a time under a workspace lock, write their outputs
//! atomically and record digests in `manifest.json`. A stage whose inputs
//! (upstream stage, gate labels, benchmark-shaping config) and outputs are
//! unchanged is skipped. Review gates sit between the build stages: a stage
//! refuses to run until every task of the upstream review queue is labeled.

mod validate;
mod workspace;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::benchgen::{
    gen_qa_triple, image_prompt, BenchgenError, ImageRecord, ImageReview, ImageStatus, QaItem,
    QuestionType,
};
use crate::config::{ConfigError, PipelineConfig};
use crate::conflict::{
    score_targets, select_contexts, select_targets, ConflictError, ContextPair, KnowledgeTriplet,
    NgramBackend, ProbabilityBackend, ReviewState, ScoredCandidate, TableBackend, TargetKind,
};
use crate::corpus::{load_annotated_corpus, write_annotated_corpus, CorpusError};
use crate::digest::sha256_hex;
use crate::extract::{build_inventory, extract_corpus, Category, ComponentInventory, ExtractError, PhraseComponent};
use crate::harness::{
    build_report, classify_record, collect_responses, run_entropy, run_sanity, scripted_client,
    simulated_client, EntropySummary, EvalRecord, GradeBook, HarnessError, MetricsReport,
    SanityOutcome, SanitySummary, ScriptEntry, SimulationProfile, Strategy,
};
use crate::modelio::{
    generate_images, CachedBackend, CachedMllm, ImageGenerator, LiveImageGenerator,
    LiveLm, LiveMllm, MllmClient, MllmRequest, MllmResponse, MockImageGenerator, ModelError,
    ScriptedMllm,
};
use crate::reviewd::{
    AnnotationTask, AutoAnnotator, ComponentCaps, ReviewError, ReviewStore, Stage, SubjectiveItem,
    TaskPayload,
};

pub use validate::{validate_benchmark, ValidationReport, Violation};
pub use workspace::{
    BenchmarkCounts, BenchmarkManifest, KindCounts, Provenance, StageRecord, Workspace,
    WorkspaceLock, BENCHMARK_FILES, COMPONENTS, CONTEXTS, CORPUS, ENTROPY, IMAGES, INVENTORY,
    MANIFEST, QA, REPORT, RESPONSES, SANITY, TRIPLETS,
};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Corpus(#[from] CorpusError),
    #[error(transparent)]
    Extract(#[from] ExtractError),
    #[error(transparent)]
    Conflict(#[from] ConflictError),
    #[error(transparent)]
    Benchgen(#[from] BenchgenError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Harness(#[from] HarnessError),
    #[error(transparent)]
    Review(#[from] ReviewError),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("{path}: {message}")]
    Json { path: PathBuf, message: String },
    #[error("missing artifact {0}; run the upstream stage first")]
    MissingArtifact(String),
    #[error("review gate for {stage} not satisfied: {message}")]
    Gate { stage: Stage, message: String },
    #[error("configuration differs from the workspace manifest: {0}")]
    ConfigMismatch(String),
    #[error("workspace is locked by another process ({0})")]
    Locked(PathBuf),
    #[error("{0}")]
    Usage(String),
}

impl PipelineError {
    pub(crate) fn io(path: &Path, e: impl fmt::Display) -> Self {
        PipelineError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        }
    }

    pub(crate) fn json(path: &Path, e: impl fmt::Display) -> Self {
        PipelineError::Json {
            path: path.to_path_buf(),
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StageName {
    Ingest,
    Extract,
    ScoreContexts,
    ScoreTargets,
    GenImages,
    GenQa,
    Evaluate,
    Sanity,
    Entropy,
    Report,
}

impl StageName {
    pub const ALL: [StageName; 10] = [
        StageName::Ingest,
        StageName::Extract,
        StageName::ScoreContexts,
        StageName::ScoreTargets,
        StageName::GenImages,
        StageName::GenQa,
        StageName::Evaluate,
        StageName::Sanity,
        StageName::Entropy,
        StageName::Report,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StageName::Ingest => "ingest",
            StageName::Extract => "extract",
            StageName::ScoreContexts => "score-contexts",
            StageName::ScoreTargets => "score-targets",
            StageName::GenImages => "gen-images",
            StageName::GenQa => "gen-qa",
            StageName::Evaluate => "evaluate",
            StageName::Sanity => "sanity",
            StageName::Entropy => "entropy",
            StageName::Report => "report",
        }
    }
}

impl fmt::Display for StageName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StageName {
    type Err = PipelineError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        StageName::ALL
            .into_iter()
            .find(|n| n.as_str() == s)
            .ok_or_else(|| PipelineError::Usage(format!("unknown stage {s:?}")))
    }
}

/// Per-invocation inputs that are not part of the configuration.
#[derive(Debug, Clone, Default)]
pub struct StageOptions {
    pub corpus: Option<PathBuf>,
    pub model: Option<String>,
    pub strategies: Vec<Strategy>,
    /// Replay script for the evaluated model (JSON array or JSONL of
    /// script entries).
    pub script: Option<PathBuf>,
    pub offline: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: String,
    /// Inputs and outputs were unchanged, nothing was done.
    pub skipped: bool,
    pub counts: BTreeMap<String, usize>,
    /// HTTP requests issued to model services.
    pub network_calls: u64,
    pub notes: Vec<String>,
}

impl StageReport {
    fn new(stage: StageName) -> Self {
        Self {
            stage: stage.to_string(),
            ..Default::default()
        }
    }

    fn count(mut self, key: &str, n: usize) -> Self {
        self.counts.insert(key.to_string(), n);
        self
    }
}

/// Config fields that change benchmark content; evaluation settings and
/// model endpoints are excluded.
fn benchmark_shape(config: &PipelineConfig) -> serde_json::Value {
    let mut v = serde_json::to_value(config).unwrap_or_default();
    if let Some(map) = v.as_object_mut() {
        for k in ["models", "cot_suffix", "entropy_samples", "entropy_temperature", "eval_temperature"] {
            map.remove(k);
        }
    }
    v
}

fn shape_mismatch(a: &PipelineConfig, b: &PipelineConfig) -> Option<String> {
    let (sa, sb) = (benchmark_shape(a), benchmark_shape(b));
    if sa == sb {
        return None;
    }
    let (Some(ma), Some(mb)) = (sa.as_object(), sb.as_object()) else {
        return Some("config".into());
    };
    let fields: Vec<&str> = ma
        .iter()
        .filter(|(k, v)| mb.get(*k) != Some(v))
        .map(|(k, _)| k.as_str())
        .collect();
    Some(fields.join(", "))
}

/// A scripted/simulated or a cached live MLLM.
enum Client {
    Scripted(ScriptedMllm),
    Live(Box<CachedMllm<LiveMllm>>),
}

impl Client {
    fn network_calls(&self) -> u64 {
        match self {
            Client::Scripted(_) => 0,
            Client::Live(c) => c.inner().network_calls(),
        }
    }
}

impl MllmClient for Client {
    fn id(&self) -> String {
        match self {
            Client::Scripted(c) => c.id(),
            Client::Live(c) => c.id(),
        }
    }

    fn query(&self, request: &MllmRequest) -> Result<MllmResponse, ModelError> {
        match self {
            Client::Scripted(c) => c.query(request),
            Client::Live(c) => c.query(request),
        }
    }
}

/// Sanity outcome tagged with the model that produced it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SanityRecord {
    pub model: String,
    #[serde(flatten)]
    pub outcome: SanityOutcome,
}

/// An open workspace holding the stage lock.
pub struct Pipeline {
    ws: Workspace,
    config: PipelineConfig,
    offline: bool,
    manifest: BenchmarkManifest,
    mismatch: Option<String>,
    _lock: WorkspaceLock,
}

impl Pipeline {
    pub fn open(root: &Path, config: PipelineConfig, offline: bool) -> Result<Self, PipelineError> {
        config.validate()?;
        let ws = Workspace::new(root)?;
        let lock = ws.lock()?;
        let (manifest, mismatch) = match ws.load_manifest()? {
            Some(m) => {
                let mismatch = shape_mismatch(&m.config, &config);
                (m, mismatch)
            }
            None => (BenchmarkManifest::new(&config), None),
        };
        Ok(Self {
            ws,
            config,
            offline,
            manifest,
            mismatch,
            _lock: lock,
        })
    }

    pub fn workspace(&self) -> &Workspace {
        &self.ws
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn manifest(&self) -> &BenchmarkManifest {
        &self.manifest
    }

    pub fn review_store(&self) -> Result<ReviewStore, PipelineError> {
        Ok(ReviewStore::open(self.ws.root())?)
    }

    /// Labels every open task of `stage` with the rule-based annotator.
    pub fn review_auto(&self, stage: Stage, annotator: &AutoAnnotator) -> Result<usize, PipelineError> {
        Ok(annotator.annotate(&self.review_store()?, stage)?)
    }

    pub fn run(&mut self, stage: StageName, options: &StageOptions) -> Result<StageReport, PipelineError> {
        let model = || {
            options
                .model
                .clone()
                .ok_or_else(|| PipelineError::Usage(format!("{stage} needs a model id")))
        };
        match stage {
            StageName::Ingest => {
                let corpus = options
                    .corpus
                    .as_deref()
                    .ok_or_else(|| PipelineError::Usage("ingest needs a corpus path".into()))?;
                self.ingest(corpus)
            }
            StageName::Extract => self.extract(),
            StageName::ScoreContexts => self.score_contexts(),
            StageName::ScoreTargets => self.score_targets(),
            StageName::GenImages => self.gen_images(),
            StageName::GenQa => self.gen_qa(),
            StageName::Evaluate => {
                let strategies = if options.strategies.is_empty() {
                    vec![Strategy::Plain]
                } else {
                    options.strategies.clone()
                };
                self.evaluate(&model()?, &strategies, options.script.as_deref())
            }
            StageName::Sanity => self.sanity(&model()?, options.script.as_deref()),
            StageName::Entropy => self.entropy(&model()?, options.script.as_deref()),
            StageName::Report => self.report(),
        }
    }

    fn check_config(&self) -> Result<(), PipelineError> {
        match &self.mismatch {
            Some(fields) => Err(PipelineError::ConfigMismatch(format!(
                "{fields} (re-run ingest to start a new build)"
            ))),
            None => Ok(()),
        }
    }

    fn input_digest(&self, stage: StageName, parts: &[&str]) -> String {
        let mut text = format!("{stage}\u{1f}{}", benchmark_shape(&self.config));
        for p in parts {
            text.push('\u{1f}');
            text.push_str(p);
        }
        sha256_hex(text.as_bytes())
    }

    fn upstream(&self, stage: StageName) -> Result<String, PipelineError> {
        self.manifest
            .stages
            .get(stage.as_str())
            .map(|r| r.input_digest.clone())
            .ok_or_else(|| PipelineError::MissingArtifact(format!("{stage} stage output")))
    }

    fn is_fresh(&self, stage: StageName, input_digest: &str) -> bool {
        let Some(record) = self.manifest.stages.get(stage.as_str()) else {
            return false;
        };
        record.input_digest == input_digest
            && record
                .outputs
                .iter()
                .all(|f| self.ws.digest(f).is_some() && self.ws.digest(f) == self.manifest.files.get(f).cloned())
    }

    fn record_file(&mut self, name: &str, digest: String) {
        self.manifest.files.insert(name.to_string(), digest);
    }

    fn finish(&mut self, stage: StageName, input_digest: String, outputs: &[&str]) -> Result<(), PipelineError> {
        self.manifest.stages.insert(
            stage.to_string(),
            StageRecord {
                input_digest,
                outputs: outputs.iter().map(|s| s.to_string()).collect(),
                completed_at: workspace::now(),
            },
        );
        self.manifest.config = self.config.clone();
        self.manifest.provenance.seed = self.config.seed;
        self.manifest.provenance.updated_at = workspace::now();
        self.ws.write_json(MANIFEST, &self.manifest)?;
        Ok(())
    }

    fn caps(&self) -> ComponentCaps {
        ComponentCaps::from(&self.config)
    }

    /// Applies a complete review stage; unlabeled tasks fail the gate.
    fn gate(&self, store: &ReviewStore, stage: Stage) -> Result<crate::reviewd::ApplyOutcome, PipelineError> {
        if store.tasks(stage).is_empty() {
            return Err(PipelineError::Gate {
                stage,
                message: "no review tasks were queued".into(),
            });
        }
        store.apply(stage, false, &self.caps()).map_err(|e| match e {
            ReviewError::Unlabeled { .. } => PipelineError::Gate {
                stage,
                message: e.to_string(),
            },
            other => other.into(),
        })
    }

    fn gate_digest(outcome: &crate::reviewd::ApplyOutcome) -> String {
        sha256_hex(serde_json::to_string(&outcome.labels).unwrap_or_default().as_bytes())
    }

    fn skipped(&self, stage: StageName) -> StageReport {
        let mut r = StageReport::new(stage);
        r.skipped = true;
        r.notes.push("inputs and outputs unchanged".into());
        r
    }

    pub fn ingest(&mut self, corpus: &Path) -> Result<StageReport, PipelineError> {
        const STAGE: StageName = StageName::Ingest;
        let bytes = std::fs::read(corpus).map_err(|e| PipelineError::io(corpus, e))?;
        let source_digest = sha256_hex(&bytes);
        if self.mismatch.take().is_some() {
            self.manifest = BenchmarkManifest::new(&self.config);
        }
        let input = self.input_digest(STAGE, &[&source_digest]);
        if self.is_fresh(STAGE, &input) {
            return Ok(self.skipped(STAGE));
        }
        let sentences = load_annotated_corpus(corpus, self.config.corpus_limit)?;
        let digest = self.ws.write_atomic(CORPUS, write_annotated_corpus(&sentences).as_bytes())?;
        self.record_file(CORPUS, digest);
        self.manifest.counts = BenchmarkCounts {
            sentences: sentences.len(),
            ..Default::default()
        };
        self.manifest.provenance.corpus_source = Some(corpus.display().to_string());
        self.manifest.provenance.corpus_digest = Some(source_digest);
        self.finish(STAGE, input, &[CORPUS])?;
        Ok(StageReport::new(STAGE).count("sentences", sentences.len()))
    }

    fn load_corpus(&self) -> Result<Vec<crate::corpus::AnnotatedSentence>, PipelineError> {
        if !self.ws.exists(CORPUS) {
            return Err(PipelineError::MissingArtifact(CORPUS.into()));
        }
        Ok(load_annotated_corpus(&self.ws.path(CORPUS), usize::MAX)?)
    }

    pub fn extract(&mut self) -> Result<StageReport, PipelineError> {
        const STAGE: StageName = StageName::Extract;
        self.check_config()?;
        let input = self.input_digest(STAGE, &[&self.upstream(StageName::Ingest)?]);
        let store = self.review_store()?;
        let fresh = self.is_fresh(STAGE, &input);
        if !fresh {
            let sentences = self.load_corpus()?;
            let occurrences = extract_corpus(&sentences);
            let inventory = build_inventory(&occurrences, sentences.len(), self.config.candidate_pool)?;
            let components: Vec<PhraseComponent> = inventory.components().cloned().collect();
            let digest = self.ws.write_jsonl(COMPONENTS, &components)?;
            self.record_file(COMPONENTS, digest);
            self.finish(STAGE, input, &[COMPONENTS])?;
        }
        let components: Vec<PhraseComponent> = self.ws.read_jsonl(COMPONENTS)?;
        let queued = store.enqueue(
            Stage::Components,
            components.iter().cloned().map(TaskPayload::Component).collect(),
        )?;
        let mut report = StageReport::new(STAGE);
        report.skipped = fresh;
        for c in Category::ALL {
            let n = components.iter().filter(|x| x.category == c).count();
            report = report.count(&format!("{}s", c.to_string().to_lowercase()), n);
        }
        Ok(report.count("review_tasks_created", queued.created))
    }

    fn backend(&self) -> Result<Box<dyn ProbabilityBackend>, PipelineError> {
        let models = &self.config.models;
        if let Some(path) = &models.lm_table {
            let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
            let table: BTreeMap<String, f64> =
                serde_json::from_str(&text).map_err(|e| PipelineError::json(path, e))?;
            let mut backend = TableBackend::new(format!("table-{}", &sha256_hex(text.as_bytes())[..12]));
            for (phrase, logprob) in table {
                backend.insert_logprob(phrase, logprob);
            }
            return Ok(Box::new(backend));
        }
        if let (Some(lm), false) = (&models.lm, self.offline) {
            let live = LiveLm::new(lm.clone())?;
            return Ok(Box::new(CachedBackend::new(live, &self.ws.cache_dir())?));
        }
        Ok(Box::new(NgramBackend::from_sentences(&self.load_corpus()?, models.ngram_alpha)))
    }

    fn load_inventory(&self) -> Result<ComponentInventory, PipelineError> {
        let components: Vec<PhraseComponent> = self.ws.read_jsonl(INVENTORY)?;
        Ok(ComponentInventory::from_components(components, self.manifest.counts.sentences))
    }

    pub fn score_contexts(&mut self) -> Result<StageReport, PipelineError> {
        const STAGE: StageName = StageName::ScoreContexts;
        self.check_config()?;
        let store = self.review_store()?;
        let outcome = self.gate(&store, Stage::Components)?;
        let backend = self.backend()?;
        let input = self.input_digest(
            STAGE,
            &[&self.upstream(StageName::Extract)?, &Self::gate_digest(&outcome), &backend.id()],
        );
        let fresh = self.is_fresh(STAGE, &input);
        if !fresh {
            let kept: Vec<PhraseComponent> = outcome
                .kept
                .iter()
                .filter_map(|t| match &t.payload {
                    TaskPayload::Component(c) => Some(c.clone()),
                    _ => None,
                })
                .collect();
            let missing: Vec<String> = Category::ALL
                .into_iter()
                .filter(|c| kept.iter().all(|k| k.category != *c))
                .map(|c| c.to_string())
                .collect();
            if !missing.is_empty() {
                return Err(PipelineError::Gate {
                    stage: Stage::Components,
                    message: format!("no concrete components left for {}", missing.join(", ")),
                });
            }
            let inventory = ComponentInventory::from_components(kept, self.manifest.counts.sentences);
            let inv: Vec<PhraseComponent> = inventory.components().cloned().collect();
            let d = self.ws.write_jsonl(INVENTORY, &inv)?;
            self.record_file(INVENTORY, d);
            let contexts = select_contexts(&inventory, backend.as_ref(), &self.config)?;
            let d = self.ws.write_jsonl(CONTEXTS, &contexts)?;
            self.record_file(CONTEXTS, d);
            self.manifest.counts.subjects = inventory.subjects.len();
            self.manifest.counts.actions = inventory.actions.len();
            self.manifest.counts.places = inventory.places.len();
            self.manifest.counts.contexts = contexts.len();
            self.manifest.provenance.probability_backend = Some(backend.id());
            self.finish(STAGE, input, &[INVENTORY, CONTEXTS])?;
        }
        let contexts: Vec<ContextPair> = self.ws.read_jsonl(CONTEXTS)?;
        let queued = store.enqueue(Stage::Contexts, contexts.iter().cloned().map(TaskPayload::Context).collect())?;
        let mut report = StageReport::new(STAGE);
        report.skipped = fresh;
        Ok(report
            .count("contexts", contexts.len())
            .count("review_tasks_created", queued.created))
    }

    /// Item ids accepted by a gate outcome.
    fn accepted_items(outcome: &crate::reviewd::ApplyOutcome) -> BTreeSet<String> {
        outcome.kept.iter().map(|t| t.payload.item_id()).collect()
    }

    pub fn score_targets(&mut self) -> Result<StageReport, PipelineError> {
        const STAGE: StageName = StageName::ScoreTargets;
        self.check_config()?;
        let store = self.review_store()?;
        let outcome = self.gate(&store, Stage::Contexts)?;
        let backend = self.backend()?;
        let input = self.input_digest(
            STAGE,
            &[&self.upstream(StageName::ScoreContexts)?, &Self::gate_digest(&outcome), &backend.id()],
        );
        let fresh = self.is_fresh(STAGE, &input);
        if !fresh {
            let accepted = Self::accepted_items(&outcome);
            let mut contexts: Vec<ContextPair> = self.ws.read_jsonl(CONTEXTS)?;
            for c in &mut contexts {
                c.review_state = if accepted.contains(&c.id) {
                    ReviewState::Accepted
                } else {
                    ReviewState::Rejected
                };
            }
            let d = self.ws.write_jsonl(CONTEXTS, &contexts)?;
            self.record_file(CONTEXTS, d);
            let inventory = self.load_inventory()?;
            let per_context: Vec<Vec<KnowledgeTriplet>> = contexts
                .par_iter()
                .filter(|c| c.review_state == ReviewState::Accepted)
                .map(|c| select_targets(c, &inventory, backend.as_ref(), &self.config))
                .collect::<Result<_, _>>()?;
            let mut seen = BTreeSet::new();
            let triplets: Vec<KnowledgeTriplet> = per_context
                .into_iter()
                .flatten()
                .filter(|t| seen.insert(t.id.clone()))
                .collect();
            let d = self.ws.write_jsonl(TRIPLETS, &triplets)?;
            self.record_file(TRIPLETS, d);
            self.finish(STAGE, input, &[TRIPLETS])?;
        }
        let triplets: Vec<KnowledgeTriplet> = self.ws.read_jsonl(TRIPLETS)?;
        let queued = store.enqueue(Stage::Triplets, triplets.iter().cloned().map(TaskPayload::Triplet).collect())?;
        let mut report = StageReport::new(STAGE);
        report.skipped = fresh;
        Ok(report
            .count("triplets", triplets.len())
            .count("review_tasks_created", queued.created))
    }

    fn image_generator(&self) -> Result<Box<dyn ImageGenerator>, PipelineError> {
        let models = &self.config.models;
        match (&models.image, self.offline) {
            (Some(endpoint), false) => Ok(Box::new(LiveImageGenerator::new(endpoint.clone())?)),
            _ => Ok(Box::new(MockImageGenerator {
                refuse: models.mock_image_refusals.clone(),
            })),
        }
    }

    pub fn gen_images(&mut self) -> Result<StageReport, PipelineError> {
        const STAGE: StageName = StageName::GenImages;
        self.check_config()?;
        let store = self.review_store()?;
        let outcome = self.gate(&store, Stage::Triplets)?;
        let generator = self.image_generator()?;
        let input = self.input_digest(
            STAGE,
            &[
                &self.upstream(StageName::ScoreTargets)?,
                &Self::gate_digest(&outcome),
                &generator.id(),
                &self.config.models.mock_image_refusals.join("\u{1e}"),
            ],
        );
        let mut report = StageReport::new(STAGE);
        if !self.is_fresh(STAGE, &input) {
            let accepted = Self::accepted_items(&outcome);
            let mut triplets: Vec<KnowledgeTriplet> = self.ws.read_jsonl(TRIPLETS)?;
            for t in &mut triplets {
                t.review_state = if accepted.contains(&t.id) {
                    ReviewState::Accepted
                } else {
                    ReviewState::Rejected
                };
            }
            let d = self.ws.write_jsonl(TRIPLETS, &triplets)?;
            self.record_file(TRIPLETS, d);
            let records = self.generate_all(&triplets, generator.as_ref(), &mut report)?;
            let d = self.ws.write_jsonl(IMAGES, &records)?;
            self.record_file(IMAGES, d);
            self.manifest.provenance.image_generator = Some(generator.id());
            self.finish(STAGE, input, &[TRIPLETS, IMAGES])?;
        } else {
            report.skipped = true;
        }
        let images: Vec<ImageRecord> = self.ws.read_jsonl(IMAGES)?;
        let generated: Vec<TaskPayload> = images
            .iter()
            .filter(|i| i.status == ImageStatus::Generated)
            .cloned()
            .map(TaskPayload::Image)
            .collect();
        let n_generated = generated.len();
        let queued = store.enqueue(Stage::Images, generated)?;
        Ok(report
            .count("images", n_generated)
            .count("refused", images.len() - n_generated)
            .count("review_tasks_created", queued.created))
    }

    /// Generates `images_per_triplet` images per accepted triplet; a refused
    /// slot is retried with the next variant up to `max_regenerations` times.
    fn generate_all(
        &self,
        triplets: &[KnowledgeTriplet],
        generator: &dyn ImageGenerator,
        report: &mut StageReport,
    ) -> Result<Vec<ImageRecord>, PipelineError> {
        let rounds = self.config.max_regenerations + 1;
        let max_in_flight = self.config.models.image.as_ref().map_or(4, |e| e.max_in_flight);
        // (triplet index, slot) still lacking an image.
        let mut pending: Vec<(usize, usize)> = triplets
            .iter()
            .enumerate()
            .filter(|(_, t)| t.review_state == ReviewState::Accepted)
            .flat_map(|(i, _)| (0..self.config.images_per_triplet).map(move |s| (i, s)))
            .collect();
        let mut records: Vec<(usize, ImageRecord)> = Vec::new();
        for round in 0..rounds {
            if pending.is_empty() {
                break;
            }
            let jobs: Vec<(String, String, u32)> = pending
                .iter()
                .map(|&(i, slot)| {
                    let t = &triplets[i];
                    (t.id.clone(), image_prompt(t), (slot * rounds + round) as u32)
                })
                .collect();
            let results = generate_images(&jobs, generator, self.ws.root(), max_in_flight);
            let mut still = Vec::new();
            for (&(i, slot), result) in pending.iter().zip(results) {
                let record = result?;
                if matches!(record.status, ImageStatus::Failed { .. }) {
                    report.notes.push(format!("{} variant {} refused", record.triplet_id, record.variant));
                    still.push((i, slot));
                }
                records.push((i, record));
            }
            pending = still;
        }
        records.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.variant.cmp(&b.1.variant)));
        Ok(records.into_iter().map(|(_, r)| r).collect())
    }

    pub fn gen_qa(&mut self) -> Result<StageReport, PipelineError> {
        const STAGE: StageName = StageName::GenQa;
        self.check_config()?;
        let store = self.review_store()?;
        let outcome = self.gate(&store, Stage::Images)?;
        let backend = self.backend()?;
        let input = self.input_digest(
            STAGE,
            &[&self.upstream(StageName::GenImages)?, &Self::gate_digest(&outcome), &backend.id()],
        );
        if self.is_fresh(STAGE, &input) {
            return Ok(self.skipped(STAGE));
        }
        let labels_by_image: BTreeMap<String, &BTreeMap<String, u8>> = store
            .tasks(Stage::Images)
            .iter()
            .filter_map(|t| {
                let TaskPayload::Image(img) = &t.payload else { return None };
                outcome.labels.get(&t.id).map(|l| (img.id.clone(), l))
            })
            .collect();
        let mut images: Vec<ImageRecord> = self.ws.read_jsonl(IMAGES)?;
        for img in &mut images {
            if let Some(l) = labels_by_image.get(&img.id) {
                img.review = ImageReview::new(l["alignment"], l["quality"]);
            }
        }
        let d = self.ws.write_jsonl(IMAGES, &images)?;
        self.record_file(IMAGES, d);

        let triplets: Vec<KnowledgeTriplet> = self.ws.read_jsonl(TRIPLETS)?;
        let contexts: Vec<ContextPair> = self.ws.read_jsonl(CONTEXTS)?;
        let inventory = self.load_inventory()?;
        let triplet_by_id: BTreeMap<&str, &KnowledgeTriplet> = triplets.iter().map(|t| (t.id.as_str(), t)).collect();
        let context_by_id: BTreeMap<&str, &ContextPair> = contexts.iter().map(|c| (c.id.as_str(), c)).collect();
        let accepted: Vec<&ImageRecord> = images.iter().filter(|i| i.is_accepted()).collect();
        let needed_contexts: BTreeSet<&str> = accepted
            .iter()
            .filter_map(|i| triplet_by_id.get(i.triplet_id.as_str()))
            .map(|t| t.context_id.as_str())
            .collect();
        let candidates: BTreeMap<&str, Vec<ScoredCandidate>> = needed_contexts
            .par_iter()
            .map(|id| {
                let ctx = context_by_id
                    .get(id)
                    .ok_or_else(|| PipelineError::MissingArtifact(format!("context {id}")))?;
                Ok((*id, score_targets(ctx, &inventory, backend.as_ref(), &self.config)?))
            })
            .collect::<Result<_, PipelineError>>()?;
        let mut items: Vec<QaItem> = Vec::with_capacity(accepted.len() * 3);
        for img in &accepted {
            let t = triplet_by_id
                .get(img.triplet_id.as_str())
                .ok_or_else(|| PipelineError::MissingArtifact(format!("triplet {}", img.triplet_id)))?;
            items.extend(gen_qa_triple(t, img, &candidates[t.context_id.as_str()], &self.config)?);
        }
        let d = self.ws.write_jsonl(QA, &items)?;
        self.record_file(QA, d);
        self.manifest.counts = BenchmarkCounts {
            action_target: kind_counts(&triplets, &images, &items, Some(TargetKind::Action)),
            place_target: kind_counts(&triplets, &images, &items, Some(TargetKind::Place)),
            total: kind_counts(&triplets, &images, &items, None),
            ..self.manifest.counts.clone()
        };
        self.finish(STAGE, input, &[IMAGES, QA])?;
        Ok(StageReport::new(STAGE)
            .count("accepted_images", accepted.len())
            .count("qa", items.len()))
    }

    fn load_script(path: &Path) -> Result<Vec<ScriptEntry>, PipelineError> {
        let text = std::fs::read_to_string(path).map_err(|e| PipelineError::io(path, e))?;
        if text.trim_start().starts_with('[') {
            return serde_json::from_str(&text).map_err(|e| PipelineError::json(path, e));
        }
        text.lines()
            .filter(|l| !l.trim().is_empty())
            .enumerate()
            .map(|(i, l)| {
                serde_json::from_str(l).map_err(|e| PipelineError::json(path, format!("line {}: {e}", i + 1)))
            })
            .collect()
    }

    fn client(
        &self,
        model: &str,
        script: Option<&Path>,
        items: &[QaItem],
        triplets: &[KnowledgeTriplet],
        strategies: &[Strategy],
    ) -> Result<Client, PipelineError> {
        if let Some(path) = script {
            let entries = Self::load_script(path)?;
            return Ok(Client::Scripted(scripted_client(model, &entries, items, &self.config)?));
        }
        match (self.config.models.mllm(model), self.offline) {
            (Some(endpoint), false) => {
                let live = LiveMllm::new(endpoint.clone(), self.ws.root())?;
                Ok(Client::Live(Box::new(CachedMllm::new(live, &self.ws.cache_dir())?)))
            }
            _ => {
                let profile = SimulationProfile {
                    vision_rate: self.config.models.simulated_vision_rate,
                    seed: self.config.seed,
                };
                Ok(Client::Scripted(simulated_client(
                    model, items, triplets, strategies, &profile, &self.config,
                )))
            }
        }
    }

    fn benchmark_items(&self) -> Result<(Vec<QaItem>, Vec<KnowledgeTriplet>), PipelineError> {
        let items: Vec<QaItem> = self.ws.read_jsonl(QA)?;
        if items.is_empty() {
            return Err(HarnessError::Empty.into());
        }
        let used: BTreeSet<&str> = items.iter().map(|q| q.triplet_id.as_str()).collect();
        let triplets: Vec<KnowledgeTriplet> = self
            .ws
            .read_jsonl::<KnowledgeTriplet>(TRIPLETS)?
            .into_iter()
            .filter(|t| used.contains(t.id.as_str()))
            .collect();
        Ok((items, triplets))
    }

    /// Grades from the subjective review queue, per model.
    fn grade_books(store: &ReviewStore) -> BTreeMap<String, GradeBook> {
        let mut books: BTreeMap<String, GradeBook> = BTreeMap::new();
        for task in store.tasks(Stage::Subjective) {
            let TaskPayload::Subjective(item) = &task.payload else { continue };
            let Some(grades) = store.task(&task.id).and_then(|v| v.decision).and_then(|d| d.subjective_grades())
            else {
                continue;
            };
            books
                .entry(item.model.clone())
                .or_default()
                .insert(&item.qa_id, item.strategy, grades);
        }
        books
    }

    pub fn evaluate(
        &mut self,
        model: &str,
        strategies: &[Strategy],
        script: Option<&Path>,
    ) -> Result<StageReport, PipelineError> {
        const STAGE: StageName = StageName::Evaluate;
        self.check_config()?;
        let (items, triplets) = self.benchmark_items()?;
        let client = self.client(model, script, &items, &triplets, strategies)?;
        let mut records = collect_responses(&items, &client, strategies, &self.config);
        let store = self.review_store()?;
        let books = Self::grade_books(&store);
        let empty = GradeBook::default();
        let book = books.get(&client.id()).unwrap_or(&empty);
        let by_id: BTreeMap<&str, &QaItem> = items.iter().map(|q| (q.id.as_str(), q)).collect();
        let mut to_grade = Vec::new();
        for r in &mut records {
            let qa = by_id[r.qa_id.as_str()];
            classify_record(r, qa, book);
            if qa.qtype == QuestionType::Subj && r.error.is_none() && r.grades.is_none() {
                to_grade.push(TaskPayload::Subjective(SubjectiveItem {
                    model: r.model.clone(),
                    qa_id: r.qa_id.clone(),
                    strategy: r.strategy,
                    question: r.prompt.clone(),
                    image_uri: qa.image_uri.clone(),
                    response: r.raw_with_image.clone().unwrap_or_default(),
                    vision_reference: qa.gold.clone(),
                    knowledge_reference: r.raw_text_only.clone().unwrap_or_default(),
                }));
            }
        }
        let failed = records.iter().filter(|r| r.error.is_some()).count();
        let queued = store.enqueue(Stage::Subjective, to_grade)?;
        let id = client.id();
        let mut all: Vec<EvalRecord> = self
            .ws
            .read_jsonl_or_empty::<EvalRecord>(RESPONSES)?
            .into_iter()
            .filter(|r| !(r.model == id && strategies.contains(&r.strategy)))
            .collect();
        all.extend(records);
        all.sort_by(|a, b| (&a.model, a.strategy, &a.qa_id).cmp(&(&b.model, b.strategy, &b.qa_id)));
        let d = self.ws.write_jsonl(RESPONSES, &all)?;
        self.record_file(RESPONSES, d);
        if !self.manifest.provenance.evaluated_models.contains(&id) {
            self.manifest.provenance.evaluated_models.push(id.clone());
            self.manifest.provenance.evaluated_models.sort();
        }
        let input = self.input_digest(STAGE, &[&id]);
        self.finish(STAGE, input, &[RESPONSES])?;
        let mut report = self.report()?;
        report.stage = STAGE.to_string();
        report.network_calls = client.network_calls();
        Ok(report
            .count("records", items.len() * strategies.len())
            .count("failed", failed)
            .count("subjective_tasks_created", queued.created))
    }

    pub fn sanity(&mut self, model: &str, script: Option<&Path>) -> Result<StageReport, PipelineError> {
        const STAGE: StageName = StageName::Sanity;
        self.check_config()?;
        let (items, triplets) = self.benchmark_items()?;
        let client = self.client(model, script, &items, &triplets, &[Strategy::Plain])?;
        let results: Vec<Result<SanityOutcome, ModelError>> =
            triplets.par_iter().map(|t| run_sanity(t, &client, &self.config)).collect();
        let id = client.id();
        let mut report = StageReport::new(STAGE);
        let mut fresh = Vec::new();
        for (t, r) in triplets.iter().zip(results) {
            match r {
                Ok(outcome) => fresh.push(SanityRecord {
                    model: id.clone(),
                    outcome,
                }),
                Err(e) => report.notes.push(format!("{}: {e}", t.id)),
            }
        }
        let n = fresh.len();
        let mut all: Vec<SanityRecord> = self
            .ws
            .read_jsonl_or_empty::<SanityRecord>(SANITY)?
            .into_iter()
            .filter(|r| r.model != id)
            .collect();
        all.extend(fresh);
        all.sort_by(|a, b| (&a.model, &a.outcome.triplet_id).cmp(&(&b.model, &b.outcome.triplet_id)));
        let d = self.ws.write_jsonl(SANITY, &all)?;
        self.record_file(SANITY, d);
        let input = self.input_digest(STAGE, &[&id]);
        self.finish(STAGE, input, &[SANITY])?;
        self.report()?;
        report.network_calls = client.network_calls();
        Ok(report.count("probes", n).count("failed", triplets.len() - n))
    }

    pub fn entropy(&mut self, model: &str, script: Option<&Path>) -> Result<StageReport, PipelineError> {
        const STAGE: StageName = StageName::Entropy;
        self.check_config()?;
        let (items, triplets) = self.benchmark_items()?;
        let client = self.client(model, script, &items, &triplets, &[Strategy::Plain])?;
        let summary = run_entropy(&items, &client, &self.config)?;
        let id = client.id();
        let mut all: BTreeMap<String, EntropySummary> = if self.ws.exists(ENTROPY) {
            self.ws.read_json(ENTROPY)?
        } else {
            BTreeMap::new()
        };
        let (measured, failed) = (summary.per_item.len(), summary.failed);
        all.insert(id.clone(), summary);
        let d = self.ws.write_json(ENTROPY, &all)?;
        self.record_file(ENTROPY, d);
        let input = self.input_digest(STAGE, &[&id]);
        self.finish(STAGE, input, &[ENTROPY])?;
        self.report()?;
        let mut report = StageReport::new(STAGE).count("items", measured).count("failed", failed);
        report.network_calls = client.network_calls();
        Ok(report)
    }

    /// Re-classifies all responses with the latest grades and writes
    /// `report.json` (one metrics report per model).
    pub fn report(&mut self) -> Result<StageReport, PipelineError> {
        const STAGE: StageName = StageName::Report;
        let items: Vec<QaItem> = self.ws.read_jsonl_or_empty(QA)?;
        let by_id: BTreeMap<&str, &QaItem> = items.iter().map(|q| (q.id.as_str(), q)).collect();
        let store = self.review_store()?;
        let books = Self::grade_books(&store);
        let empty = GradeBook::default();
        let mut records: Vec<EvalRecord> = self.ws.read_jsonl_or_empty(RESPONSES)?;
        for r in &mut records {
            if let Some(qa) = by_id.get(r.qa_id.as_str()) {
                classify_record(r, qa, books.get(&r.model).unwrap_or(&empty));
            }
        }
        if !records.is_empty() {
            let d = self.ws.write_jsonl(RESPONSES, &records)?;
            self.record_file(RESPONSES, d);
        }
        let sanity: Vec<SanityRecord> = self.ws.read_jsonl_or_empty(SANITY)?;
        let entropy: BTreeMap<String, EntropySummary> = if self.ws.exists(ENTROPY) {
            self.ws.read_json(ENTROPY)?
        } else {
            BTreeMap::new()
        };
        let mut models: BTreeSet<&str> = records.iter().map(|r| r.model.as_str()).collect();
        models.extend(sanity.iter().map(|s| s.model.as_str()));
        models.extend(entropy.keys().map(String::as_str));
        let reports: Vec<MetricsReport> = models
            .into_iter()
            .map(|m| {
                let rs: Vec<EvalRecord> = records.iter().filter(|r| r.model == m).cloned().collect();
                let mut report = build_report(m, &rs);
                let outcomes: Vec<&SanityOutcome> =
                    sanity.iter().filter(|s| s.model == m).map(|s| &s.outcome).collect();
                if !outcomes.is_empty() {
                    report.sanity = Some(SanitySummary::from_outcomes(outcomes));
                }
                report.entropy = entropy.get(m).cloned();
                report
            })
            .collect();
        let d = self.ws.write_json(REPORT, &reports)?;
        self.record_file(REPORT, d);
        let input = self.input_digest(STAGE, &[]);
        self.finish(STAGE, input, &[REPORT])?;
        let incomplete = reports.iter().filter(|r| r.incomplete).count();
        Ok(StageReport::new(STAGE)
            .count("models", reports.len())
            .count("incomplete_models", incomplete))
    }
}

fn kind_counts(
    triplets: &[KnowledgeTriplet],
    images: &[ImageRecord],
    items: &[QaItem],
    kind: Option<TargetKind>,
) -> KindCounts {
    let kind_of: BTreeMap<&str, TargetKind> = triplets.iter().map(|t| (t.id.as_str(), t.target_kind)).collect();
    let matches = |k: Option<&TargetKind>| kind.is_none() || k.copied() == kind;
    KindCounts {
        triplets: triplets
            .iter()
            .filter(|t| t.review_state == ReviewState::Accepted && matches(Some(&t.target_kind)))
            .count(),
        images: images
            .iter()
            .filter(|i| i.is_accepted() && matches(kind_of.get(i.triplet_id.as_str())))
            .count(),
        qa: items.iter().filter(|q| matches(Some(&q.target_kind))).count(),
    }
}

/// Opens the workspace, runs one stage and releases the lock.
pub fn run_stage(
    stage: StageName,
    config: &PipelineConfig,
    workspace: &Path,
    options: &StageOptions,
) -> Result<StageReport, PipelineError> {
    let mut pipeline = Pipeline::open(workspace, config.clone(), options.offline)?;
    pipeline.run(stage, options)
}

/// Every build stage from ingest to QA generation, auto-labeling each
/// review queue with `annotator`.
pub fn build_with_auto_review(
    config: &PipelineConfig,
    workspace: &Path,
    corpus: &Path,
    annotator: &AutoAnnotator,
    offline: bool,
) -> Result<Vec<StageReport>, PipelineError> {
    let mut p = Pipeline::open(workspace, config.clone(), offline)?;
    let mut reports = vec![p.ingest(corpus)?, p.extract()?];
    p.review_auto(Stage::Components, annotator)?;
    reports.push(p.score_contexts()?);
    p.review_auto(Stage::Contexts, annotator)?;
    reports.push(p.score_targets()?);
    p.review_auto(Stage::Triplets, annotator)?;
    reports.push(p.gen_images()?);
    p.review_auto(Stage::Images, annotator)?;
    reports.push(p.gen_qa()?);
    Ok(reports)
}

/// Unused payload kinds are still rejected by the queue; re-exported for
/// callers that build tasks directly.
pub type Task = AnnotationTask;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_names_round_trip() {
        for s in StageName::ALL {
            assert_eq!(s.as_str().parse::<StageName>().unwrap(), s);
        }
        assert!("genqa".parse::<StageName>().is_err());
    }

    #[test]
    fn shape_ignores_evaluation_settings() {
        let a = PipelineConfig::default();
        let b = PipelineConfig {
            eval_temperature: 0.7,
            entropy_samples: 4,
            ..a.clone()
        };
        assert_eq!(shape_mismatch(&a, &b), None);
        let c = PipelineConfig { seed: 3, ..a.clone() };
        assert_eq!(shape_mismatch(&a, &c).as_deref(), Some("seed"));
    }
}
