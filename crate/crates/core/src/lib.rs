//! Synthesis and evaluation of commonsense-level vision-knowledge conflict
//! benchmarks.
//!
//! The crate is organized along the pipeline:
//!
//! - [`corpus`]: reader for dependency/SRL-annotated sentence files.
//! - [`extract`]: Subject/Action/Place phrase harvesting and the ranked
//!   component inventory.
//! - [`conflict`]: NPMI scoring, context-pair and counter-commonsense
//!   triplet selection over a pluggable probability backend.
//! - [`benchgen`]: image prompts and the three question levels.
//! - [`modelio`]: LM/image/MLLM clients with caching, retries and mocks.
//! - [`harness`]: response parsing, Knowledge/Vision/Other classification,
//!   accuracy, memorization ratio, sanity and entropy probes.
//! - [`reviewd`]: human-in-the-loop review queues and their HTTP API.
//! - [`pipeline`]: workspace, manifest, stage orchestration and validation.

pub mod benchgen;
pub mod config;
pub mod conflict;
pub mod corpus;
pub mod digest;
pub mod extract;
pub mod harness;
pub mod modelio;
pub mod pipeline;
pub mod reviewd;

pub use benchgen::{ImageRecord, QaItem, QuestionType};
pub use config::PipelineConfig;
pub use conflict::{ContextPair, KnowledgeTriplet, ProbabilityBackend, TargetKind};
pub use corpus::{AnnotatedSentence, RoleSpan, TokenAnnotation};
pub use extract::{Category, ComponentInventory, PhraseComponent};
pub use harness::{EvalRecord, KvLabel, MetricsReport, Strategy};
pub use reviewd::{AnnotationTask, Decision, Stage};
