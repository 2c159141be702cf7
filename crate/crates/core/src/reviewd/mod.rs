//! Human-in-the-loop review: stage queues, durable decisions and the gates
//! that decide which items move on to the next pipeline stage.
//!
//! Decisions are appended to `decisions.jsonl` and fsynced before they are
//! acknowledged. Effective labels are always derived by replaying that log,
//! so a restart reproduces them exactly; `state.json` is a convenience
//! snapshot of the replayed state.

mod auto;
mod http;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{Mutex, RwLock};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::benchgen::ImageRecord;
use crate::conflict::{ContextPair, KnowledgeTriplet};
use crate::digest::short_id;
use crate::extract::{Category, PhraseComponent};
use crate::harness::{Strategy, SubjectiveGrades};

pub use auto::AutoAnnotator;
pub use http::{router, serve, ApiError};

#[derive(Debug, Error)]
pub enum ReviewError {
    #[error("unknown task {0}")]
    UnknownTask(String),
    #[error("unknown stage {0:?}")]
    UnknownStage(String),
    #[error("invalid labels for task {task}: {message}")]
    InvalidLabels { task: String, message: String },
    #[error("task {task} is at version {actual}, decision was based on {expected}")]
    Conflict { task: String, expected: u64, actual: u64 },
    #[error("{found} payload enqueued on the {expected} stage")]
    StageMismatch { expected: Stage, found: Stage },
    #[error("{stage} stage has {} unlabeled task(s): {}", tasks.len(), tasks.join(", "))]
    Unlabeled { stage: Stage, tasks: Vec<String> },
    #[error("review store {path}: {message}")]
    Io { path: PathBuf, message: String },
}

impl ReviewError {
    fn io(path: &Path, e: impl fmt::Display) -> Self {
        ReviewError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Components,
    Contexts,
    Triplets,
    Images,
    Subjective,
}

impl Stage {
    pub const ALL: [Stage; 5] = [
        Stage::Components,
        Stage::Contexts,
        Stage::Triplets,
        Stage::Images,
        Stage::Subjective,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Components => "components",
            Stage::Contexts => "contexts",
            Stage::Triplets => "triplets",
            Stage::Images => "images",
            Stage::Subjective => "subjective",
        }
    }

    /// Label fields and their maximum values; every minimum is 0.
    pub fn schema(self) -> Vec<FieldSpec> {
        let f = |name: &str, max: u8| FieldSpec {
            name: name.to_string(),
            max,
        };
        match self {
            Stage::Components => vec![f("concrete", 1)],
            Stage::Contexts => vec![f("common", 1)],
            Stage::Triplets => vec![f("uncommon", 1)],
            Stage::Images => vec![f("alignment", 1), f("quality", 1)],
            Stage::Subjective => vec![
                f("relevancy", 1),
                f("responsiveness", 1),
                f("closeness_vision", 2),
                f("closeness_knowledge", 2),
            ],
        }
    }

    /// Whether a complete label set lets the item through the gate.
    pub fn accepts(self, labels: &BTreeMap<String, u8>) -> bool {
        let get = |k: &str| labels.get(k).copied().unwrap_or(0);
        match self {
            Stage::Components => get("concrete") == 1,
            Stage::Contexts => get("common") == 1,
            Stage::Triplets => get("uncommon") == 1,
            Stage::Images => get("alignment") + get("quality") == 2,
            Stage::Subjective => true,
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Stage {
    type Err = ReviewError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Stage::ALL
            .into_iter()
            .find(|st| st.as_str() == s)
            .ok_or_else(|| ReviewError::UnknownStage(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub name: String,
    pub max: u8,
}

/// A subjective response awaiting grades against both references.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubjectiveItem {
    pub model: String,
    pub qa_id: String,
    pub strategy: Strategy,
    pub question: String,
    pub image_uri: String,
    pub response: String,
    /// The counter-commonsense target shown in the image.
    pub vision_reference: String,
    /// The model's own text-only answer.
    pub knowledge_reference: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TaskPayload {
    Component(PhraseComponent),
    Context(ContextPair),
    Triplet(KnowledgeTriplet),
    Image(ImageRecord),
    Subjective(SubjectiveItem),
}

impl TaskPayload {
    pub fn stage(&self) -> Stage {
        match self {
            TaskPayload::Component(_) => Stage::Components,
            TaskPayload::Context(_) => Stage::Contexts,
            TaskPayload::Triplet(_) => Stage::Triplets,
            TaskPayload::Image(_) => Stage::Images,
            TaskPayload::Subjective(_) => Stage::Subjective,
        }
    }

    /// Identifier of the underlying item within its stage.
    pub fn item_id(&self) -> String {
        match self {
            TaskPayload::Component(c) => format!("{}/{}", c.category, c.key),
            TaskPayload::Context(c) => c.id.clone(),
            TaskPayload::Triplet(t) => t.id.clone(),
            TaskPayload::Image(i) => i.id.clone(),
            TaskPayload::Subjective(s) => format!("{}/{}/{}", s.model, s.qa_id, s.strategy),
        }
    }

    fn frequency(&self) -> Option<u64> {
        match self {
            TaskPayload::Component(c) => Some(c.frequency),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationTask {
    pub id: String,
    pub stage: Stage,
    pub payload: TaskPayload,
    pub schema: Vec<FieldSpec>,
}

impl AnnotationTask {
    pub fn new(payload: TaskPayload) -> Self {
        let stage = payload.stage();
        Self {
            id: short_id("task", &[stage.as_str(), &payload.item_id()]),
            stage,
            schema: stage.schema(),
            payload,
        }
    }

    pub fn validate_labels(&self, labels: &BTreeMap<String, u8>) -> Result<(), ReviewError> {
        let invalid = |message: String| ReviewError::InvalidLabels {
            task: self.id.clone(),
            message,
        };
        for field in &self.schema {
            match labels.get(&field.name) {
                None => return Err(invalid(format!("missing label {:?}", field.name))),
                Some(&v) if v > field.max => {
                    return Err(invalid(format!(
                        "{} = {v} is outside 0..={}",
                        field.name, field.max
                    )))
                }
                Some(_) => {}
            }
        }
        if let Some(extra) = labels.keys().find(|k| self.schema.iter().all(|f| &f.name != *k)) {
            return Err(invalid(format!("unexpected label {extra:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Decision {
    pub task_id: String,
    pub annotator: String,
    pub labels: BTreeMap<String, u8>,
    /// RFC 3339; assigned by the store when empty.
    #[serde(default)]
    pub timestamp: String,
    /// On submission: the task version the annotator saw (optional
    /// optimistic check). On the stored record: the version it created.
    #[serde(default)]
    pub version: Option<u64>,
}

impl Decision {
    pub fn new(task_id: &str, annotator: &str, labels: &[(&str, u8)]) -> Self {
        Self {
            task_id: task_id.to_string(),
            annotator: annotator.to_string(),
            labels: labels.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            timestamp: String::new(),
            version: None,
        }
    }

    pub fn label(&self, name: &str) -> Option<u8> {
        self.labels.get(name).copied()
    }

    pub fn subjective_grades(&self) -> Option<SubjectiveGrades> {
        Some(SubjectiveGrades {
            relevancy: self.label("relevancy")?,
            responsiveness: self.label("responsiveness")?,
            closeness_vision: self.label("closeness_vision")?,
            closeness_knowledge: self.label("closeness_knowledge")?,
        })
    }
}

/// Caps applied to the components stage: the first N concrete survivors
/// per category are kept.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComponentCaps {
    pub subjects: usize,
    pub actions: usize,
    pub places: usize,
}

impl ComponentCaps {
    pub fn unlimited() -> Self {
        Self {
            subjects: usize::MAX,
            actions: usize::MAX,
            places: usize::MAX,
        }
    }

    pub fn get(&self, category: Category) -> usize {
        match category {
            Category::Subject => self.subjects,
            Category::Action => self.actions,
            Category::Place => self.places,
        }
    }
}

impl From<&crate::config::PipelineConfig> for ComponentCaps {
    fn from(c: &crate::config::PipelineConfig) -> Self {
        Self {
            subjects: c.n_subjects,
            actions: c.n_actions,
            places: c.n_places,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApplyOutcome {
    pub stage: Stage,
    /// Accepted tasks in queue order.
    pub kept: Vec<AnnotationTask>,
    /// Labels of every labeled task, by task id.
    pub labels: BTreeMap<String, BTreeMap<String, u8>>,
    pub rejected: Vec<String>,
    /// Accepted but dropped by a component cap.
    pub over_cap: Vec<String>,
    pub unlabeled: Vec<String>,
    pub complete: bool,
}

/// Effective decision per task: the latest one in log order.
pub fn effective_decisions(decisions: &[Decision]) -> BTreeMap<&str, &Decision> {
    let mut out = BTreeMap::new();
    for d in decisions {
        out.insert(d.task_id.as_str(), d);
    }
    out
}

/// Applies the decision log to one stage's tasks. Unlabeled tasks are an
/// error unless `partial` is set, in which case the outcome is marked
/// incomplete.
pub fn apply_decisions(
    tasks: &[AnnotationTask],
    decisions: &[Decision],
    stage: Stage,
    partial: bool,
    caps: &ComponentCaps,
) -> Result<ApplyOutcome, ReviewError> {
    let effective = effective_decisions(decisions);
    let mut outcome = ApplyOutcome {
        stage,
        kept: Vec::new(),
        labels: BTreeMap::new(),
        rejected: Vec::new(),
        over_cap: Vec::new(),
        unlabeled: Vec::new(),
        complete: true,
    };
    let mut per_category: BTreeMap<Category, usize> = BTreeMap::new();
    for task in tasks.iter().filter(|t| t.stage == stage) {
        let Some(decision) = effective.get(task.id.as_str()) else {
            outcome.unlabeled.push(task.id.clone());
            continue;
        };
        outcome.labels.insert(task.id.clone(), decision.labels.clone());
        if !stage.accepts(&decision.labels) {
            outcome.rejected.push(task.id.clone());
            continue;
        }
        if let TaskPayload::Component(c) = &task.payload {
            let n = per_category.entry(c.category).or_default();
            if *n >= caps.get(c.category) {
                outcome.over_cap.push(task.id.clone());
                continue;
            }
            *n += 1;
        }
        outcome.kept.push(task.clone());
    }
    if !outcome.unlabeled.is_empty() {
        if !partial {
            return Err(ReviewError::Unlabeled {
                stage,
                tasks: outcome.unlabeled,
            });
        }
        outcome.complete = false;
    }
    Ok(outcome)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct QueueSummary {
    pub stage: Option<Stage>,
    pub total: usize,
    pub labeled: usize,
    pub remaining: usize,
    pub accepted: usize,
    pub rejected: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskView {
    pub task: AnnotationTask,
    pub version: u64,
    pub decision: Option<Decision>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnqueueOutcome {
    pub created: usize,
    pub existing: usize,
}

#[derive(Default)]
struct State {
    tasks: BTreeMap<String, AnnotationTask>,
    order: BTreeMap<Stage, Vec<String>>,
    decisions: Vec<Decision>,
    versions: BTreeMap<String, u64>,
    latest: BTreeMap<String, usize>,
}

impl State {
    fn record(&mut self, decision: Decision) {
        let v = self.versions.entry(decision.task_id.clone()).or_default();
        *v += 1;
        self.latest.insert(decision.task_id.clone(), self.decisions.len());
        self.decisions.push(decision);
    }

    fn effective(&self, task_id: &str) -> Option<&Decision> {
        self.latest.get(task_id).map(|&i| &self.decisions[i])
    }

    fn stage_tasks(&self, stage: Stage) -> Vec<AnnotationTask> {
        self.order
            .get(&stage)
            .map(|ids| ids.iter().map(|id| self.tasks[id].clone()).collect())
            .unwrap_or_default()
    }
}

/// Durable review state of one workspace.
pub struct ReviewStore {
    dir: PathBuf,
    asset_root: PathBuf,
    state: RwLock<State>,
    log: Mutex<File>,
}

const TASKS_FILE: &str = "tasks.jsonl";
const LOG_FILE: &str = "decisions.jsonl";
const STATE_FILE: &str = "state.json";

fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>, ReviewError> {
    let file = match File::open(path) {
        Ok(f) => f,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(Vec::new()),
        Err(e) => return Err(ReviewError::io(path, e)),
    };
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| ReviewError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let v = serde_json::from_str(&line)
            .map_err(|e| ReviewError::io(path, format!("line {}: {e}", i + 1)))?;
        out.push(v);
    }
    Ok(out)
}

/// Drops a partial last line left by a crash during an append.
fn repair_torn_tail(path: &Path) -> Result<(), ReviewError> {
    let bytes = match std::fs::read(path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(()),
        Err(e) => return Err(ReviewError::io(path, e)),
    };
    if bytes.last().is_some_and(|&b| b != b'\n') {
        let keep = bytes.iter().rposition(|&b| b == b'\n').map_or(0, |i| i + 1);
        let f = OpenOptions::new().write(true).open(path).map_err(|e| ReviewError::io(path, e))?;
        f.set_len(keep as u64).map_err(|e| ReviewError::io(path, e))?;
    }
    Ok(())
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), ReviewError> {
    let tmp = path.with_extension("tmp");
    let mut f = File::create(&tmp).map_err(|e| ReviewError::io(&tmp, e))?;
    f.write_all(bytes)
        .and_then(|_| f.sync_all())
        .map_err(|e| ReviewError::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| ReviewError::io(path, e))
}

impl ReviewStore {
    /// Opens (or creates) the store under `workspace/review`. Image uris in
    /// payloads are resolved against `workspace`.
    pub fn open(workspace: &Path) -> Result<Self, ReviewError> {
        let dir = workspace.join("review");
        std::fs::create_dir_all(&dir).map_err(|e| ReviewError::io(&dir, e))?;
        repair_torn_tail(&dir.join(TASKS_FILE))?;
        repair_torn_tail(&dir.join(LOG_FILE))?;
        let mut state = State::default();
        for task in read_jsonl::<AnnotationTask>(&dir.join(TASKS_FILE))? {
            state.order.entry(task.stage).or_default().push(task.id.clone());
            state.tasks.insert(task.id.clone(), task);
        }
        for d in read_jsonl::<Decision>(&dir.join(LOG_FILE))? {
            if state.tasks.contains_key(&d.task_id) {
                state.record(d);
            }
        }
        let log_path = dir.join(LOG_FILE);
        let log = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log_path)
            .map_err(|e| ReviewError::io(&log_path, e))?;
        Ok(Self {
            dir,
            asset_root: workspace.to_path_buf(),
            state: RwLock::new(state),
            log: Mutex::new(log),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn read(&self) -> std::sync::RwLockReadGuard<'_, State> {
        self.state.read().unwrap_or_else(|e| e.into_inner())
    }

    fn write(&self) -> std::sync::RwLockWriteGuard<'_, State> {
        self.state.write().unwrap_or_else(|e| e.into_inner())
    }

    /// Adds tasks for `items`; items already queued are left untouched.
    /// Components are queued by frequency descending, then key.
    pub fn enqueue(&self, stage: Stage, items: Vec<TaskPayload>) -> Result<EnqueueOutcome, ReviewError> {
        if let Some(bad) = items.iter().find(|p| p.stage() != stage) {
            return Err(ReviewError::StageMismatch {
                expected: stage,
                found: bad.stage(),
            });
        }
        let mut items = items;
        if stage == Stage::Components {
            items.sort_by(|a, b| {
                b.frequency()
                    .cmp(&a.frequency())
                    .then_with(|| a.item_id().cmp(&b.item_id()))
            });
        }
        let mut state = self.write();
        let mut outcome = EnqueueOutcome::default();
        let mut fresh = Vec::new();
        let mut seen = BTreeSet::new();
        for payload in items {
            let task = AnnotationTask::new(payload);
            if state.tasks.contains_key(&task.id) || !seen.insert(task.id.clone()) {
                outcome.existing += 1;
                continue;
            }
            fresh.push(task);
        }
        if fresh.is_empty() {
            return Ok(outcome);
        }
        let path = self.dir.join(TASKS_FILE);
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&path)
            .map_err(|e| ReviewError::io(&path, e))?;
        let mut buf = String::new();
        for t in &fresh {
            buf.push_str(&serde_json::to_string(t).map_err(|e| ReviewError::io(&path, e))?);
            buf.push('\n');
        }
        file.write_all(buf.as_bytes())
            .and_then(|_| file.sync_all())
            .map_err(|e| ReviewError::io(&path, e))?;
        for t in fresh {
            state.order.entry(stage).or_default().push(t.id.clone());
            state.tasks.insert(t.id.clone(), t);
            outcome.created += 1;
        }
        Ok(outcome)
    }

    pub fn tasks(&self, stage: Stage) -> Vec<AnnotationTask> {
        self.read().stage_tasks(stage)
    }

    pub fn decisions(&self) -> Vec<Decision> {
        self.read().decisions.clone()
    }

    pub fn task(&self, id: &str) -> Option<TaskView> {
        let state = self.read();
        let task = state.tasks.get(id)?.clone();
        Some(TaskView {
            version: state.versions.get(id).copied().unwrap_or(0),
            decision: state.effective(id).cloned(),
            task,
        })
    }

    /// First unlabeled task of `stage` in queue order that `annotator` has
    /// not already decided.
    pub fn next_task(&self, stage: Stage, annotator: &str) -> Option<TaskView> {
        let state = self.read();
        let decided_by_me: BTreeSet<&str> = state
            .decisions
            .iter()
            .filter(|d| d.annotator == annotator)
            .map(|d| d.task_id.as_str())
            .collect();
        let id = state.order.get(&stage)?.iter().find(|id| {
            state.effective(id).is_none() && !decided_by_me.contains(id.as_str())
        })?;
        Some(TaskView {
            task: state.tasks[id].clone(),
            version: state.versions.get(id).copied().unwrap_or(0),
            decision: None,
        })
    }

    /// Validates and durably records a decision, returning the stored form.
    pub fn submit(&self, mut decision: Decision) -> Result<Decision, ReviewError> {
        let mut state = self.write();
        let task = state
            .tasks
            .get(&decision.task_id)
            .ok_or_else(|| ReviewError::UnknownTask(decision.task_id.clone()))?;
        task.validate_labels(&decision.labels)?;
        if decision.annotator.trim().is_empty() {
            return Err(ReviewError::InvalidLabels {
                task: task.id.clone(),
                message: "annotator id is required".into(),
            });
        }
        let current = state.versions.get(&decision.task_id).copied().unwrap_or(0);
        if let Some(expected) = decision.version {
            if expected != current {
                return Err(ReviewError::Conflict {
                    task: decision.task_id.clone(),
                    expected,
                    actual: current,
                });
            }
        }
        if decision.timestamp.is_empty() {
            decision.timestamp = chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Millis, true);
        }
        decision.version = Some(current + 1);
        let line = serde_json::to_string(&decision).map_err(|e| ReviewError::io(&self.dir, e))? + "\n";
        {
            let mut log = self.log.lock().unwrap_or_else(|e| e.into_inner());
            log.write_all(line.as_bytes())
                .and_then(|_| log.sync_data())
                .map_err(|e| ReviewError::io(&self.dir.join(LOG_FILE), e))?;
        }
        state.record(decision.clone());
        drop(state);
        self.write_snapshot()?;
        Ok(decision)
    }

    fn write_snapshot(&self) -> Result<(), ReviewError> {
        let state = self.read();
        let effective: BTreeMap<&String, &BTreeMap<String, u8>> = state
            .latest
            .iter()
            .map(|(id, &i)| (id, &state.decisions[i].labels))
            .collect();
        let snapshot = serde_json::json!({
            "decisions": state.decisions.len(),
            "effective_labels": effective,
        });
        let bytes = serde_json::to_vec_pretty(&snapshot).map_err(|e| ReviewError::io(&self.dir, e))?;
        write_atomic(&self.dir.join(STATE_FILE), &bytes)
    }

    pub fn apply(&self, stage: Stage, partial: bool, caps: &ComponentCaps) -> Result<ApplyOutcome, ReviewError> {
        let state = self.read();
        apply_decisions(&state.stage_tasks(stage), &state.decisions, stage, partial, caps)
    }

    fn summary(&self, state: &State, stage: Stage) -> QueueSummary {
        let mut s = QueueSummary {
            stage: Some(stage),
            ..Default::default()
        };
        for id in state.order.get(&stage).into_iter().flatten() {
            s.total += 1;
            match state.effective(id) {
                Some(d) if stage.accepts(&d.labels) => {
                    s.labeled += 1;
                    s.accepted += 1;
                }
                Some(_) => {
                    s.labeled += 1;
                    s.rejected += 1;
                }
                None => s.remaining += 1,
            }
        }
        s
    }

    pub fn queue_summary(&self, stage: Stage) -> QueueSummary {
        self.summary(&self.read(), stage)
    }

    /// One summary per stage plus a final all-stages total.
    pub fn progress(&self) -> Vec<QueueSummary> {
        let state = self.read();
        let mut out: Vec<QueueSummary> = Stage::ALL.iter().map(|&s| self.summary(&state, s)).collect();
        let mut total = QueueSummary::default();
        for s in &out {
            total.total += s.total;
            total.labeled += s.labeled;
            total.remaining += s.remaining;
            total.accepted += s.accepted;
            total.rejected += s.rejected;
        }
        out.push(total);
        out
    }

    /// Path of an image under review, if the id is known.
    pub fn image_path(&self, image_id: &str) -> Option<PathBuf> {
        let state = self.read();
        let uri = state.order.get(&Stage::Images)?.iter().find_map(|id| match &state.tasks[id].payload {
            TaskPayload::Image(img) if img.id == image_id => Some(img.uri.clone()),
            _ => None,
        })?;
        let rel = Path::new(&uri);
        if rel.is_absolute() || rel.components().any(|c| matches!(c, std::path::Component::ParentDir)) {
            return None;
        }
        Some(self.asset_root.join(rel))
    }
}
