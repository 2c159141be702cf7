//! Evaluation harness: prompting strategies, paired with-image / text-only
//! queries, Knowledge/Vision/Other classification and the metrics built on
//! it (accuracy, memorization ratio, sanity rates, answer entropy).
//!
//! The text-only answer is the model's knowledge reference `A_K`. A
//! with-image answer matching the gold is Vision, one repeating `A_K` is
//! Knowledge. Items where `A_K` already equals the gold cannot separate the
//! two and are labeled NonDiscriminative.

mod parse;
mod run;
mod sanity;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::benchgen::QuestionType;
use crate::config::PipelineConfig;
use crate::conflict::TargetKind;
use crate::modelio::ModelError;

pub use parse::{
    gold_answer, normalize, normalize_phrase, parse_choice, parse_closed_answer, parse_yes_no,
    words, ParsedAnswer,
};
pub use run::{
    auto_grade, build_report, classify_record, collect_responses, run_entropy, run_eval,
    scripted_client, simulated_client, AutoGrader, EntropySummary, GradeBook, NoGrader,
    ScriptEntry, SimulationProfile, SubjectiveGrader,
};
pub use sanity::{
    categorize_sanity, run_sanity, sanity_prompt, SanityCategory, SanityOutcome, SanitySummary,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("empty record set")]
    Empty,
    #[error("entropy needs at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("subjective item {0} has no grades")]
    MissingGrades(String),
    #[error("script: {0}")]
    Script(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub const FOV_SUFFIX: &str = " Please focus on the visual information.";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Plain,
    Cot,
    Fov,
}

impl Strategy {
    pub const ALL: [Strategy; 3] = [Strategy::Plain, Strategy::Cot, Strategy::Fov];

    pub fn as_str(self) -> &'static str {
        match self {
            Strategy::Plain => "plain",
            Strategy::Cot => "cot",
            Strategy::Fov => "fov",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Strategy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "plain" => Ok(Strategy::Plain),
            "cot" => Ok(Strategy::Cot),
            "fov" => Ok(Strategy::Fov),
            _ => Err(format!("unknown strategy {s:?} (expected plain, cot or fov)")),
        }
    }
}

pub fn apply_strategy(prompt: &str, strategy: Strategy, config: &PipelineConfig) -> String {
    match strategy {
        Strategy::Plain => prompt.to_string(),
        Strategy::Fov => format!("{prompt}{FOV_SUFFIX}"),
        Strategy::Cot => format!("{prompt} {}", config.cot_suffix),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KvLabel {
    Knowledge,
    Vision,
    Other,
    NonDiscriminative,
}

/// Closed-question classification. Unparsed with-image answers are Other.
pub fn classify_kv(answer: &ParsedAnswer, knowledge: &ParsedAnswer, gold: &ParsedAnswer) -> KvLabel {
    if knowledge == gold {
        KvLabel::NonDiscriminative
    } else if answer == gold {
        KvLabel::Vision
    } else if !answer.is_unparsed() && answer == knowledge {
        KvLabel::Knowledge
    } else {
        KvLabel::Other
    }
}

/// Human (or automatic) grades of one subjective response.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubjectiveGrades {
    pub relevancy: u8,
    pub responsiveness: u8,
    /// Semantic closeness to the gold target, 0-2.
    pub closeness_vision: u8,
    /// Semantic closeness to the text-only answer, 0-2.
    pub closeness_knowledge: u8,
}

impl SubjectiveGrades {
    pub fn in_range(&self) -> bool {
        self.relevancy <= 1
            && self.responsiveness <= 1
            && self.closeness_vision <= 2
            && self.closeness_knowledge <= 2
    }
}

/// Subjective classification; returns the label and whether it was a tie
/// resolved toward Vision. Irrelevant or unresponsive answers are Other.
pub fn classify_subjective(grades: &SubjectiveGrades) -> (KvLabel, bool) {
    if grades.relevancy + grades.responsiveness < 2 {
        return (KvLabel::Other, false);
    }
    let (v, k) = (grades.closeness_vision, grades.closeness_knowledge);
    match v.cmp(&k) {
        std::cmp::Ordering::Greater => (KvLabel::Vision, false),
        std::cmp::Ordering::Less => (KvLabel::Knowledge, false),
        std::cmp::Ordering::Equal if v == 0 => (KvLabel::Other, false),
        std::cmp::Ordering::Equal => (KvLabel::Vision, true),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub qa_id: String,
    pub triplet_id: String,
    pub qtype: QuestionType,
    pub target_kind: TargetKind,
    pub strategy: Strategy,
    pub model: String,
    pub prompt: String,
    pub raw_with_image: Option<String>,
    pub raw_text_only: Option<String>,
    pub answer_with_image: ParsedAnswer,
    pub answer_text_only: ParsedAnswer,
    /// `None` while a subjective item awaits grading or after a failure.
    pub kv_label: Option<KvLabel>,
    pub correct: bool,
    #[serde(default)]
    pub grades: Option<SubjectiveGrades>,
    #[serde(default)]
    pub tie: bool,
    /// The text-only answer could not be parsed.
    #[serde(default)]
    pub knowledge_unparsed: bool,
    #[serde(default)]
    pub error: Option<String>,
}

impl EvalRecord {
    pub fn is_classified(&self) -> bool {
        self.kv_label.is_some()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct KvCounts {
    pub knowledge: usize,
    pub vision: usize,
    pub other: usize,
    pub non_discriminative: usize,
    pub pending: usize,
    pub failed: usize,
}

impl KvCounts {
    pub fn from_records<'a>(records: impl IntoIterator<Item = &'a EvalRecord>) -> Self {
        let mut c = Self::default();
        for r in records {
            match (r.kv_label, &r.error) {
                (_, Some(_)) => c.failed += 1,
                (None, None) => c.pending += 1,
                (Some(KvLabel::Knowledge), _) => c.knowledge += 1,
                (Some(KvLabel::Vision), _) => c.vision += 1,
                (Some(KvLabel::Other), _) => c.other += 1,
                (Some(KvLabel::NonDiscriminative), _) => c.non_discriminative += 1,
            }
        }
        c
    }

    pub fn classified(&self) -> usize {
        self.knowledge + self.vision + self.other + self.non_discriminative
    }
}

/// Share of classified records that are correct.
pub fn accuracy<'a>(records: impl IntoIterator<Item = &'a EvalRecord>) -> Result<f64, HarnessError> {
    let (mut n, mut correct) = (0usize, 0usize);
    for r in records.into_iter().filter(|r| r.is_classified()) {
        n += 1;
        correct += usize::from(r.correct);
    }
    if n == 0 {
        return Err(HarnessError::Empty);
    }
    Ok(correct as f64 / n as f64)
}

/// `P_K / (P_K + P_V)`, or `None` when no record is Knowledge or Vision.
pub fn memorization_ratio_counts(knowledge: usize, vision: usize) -> Option<f64> {
    let total = knowledge + vision;
    (total > 0).then(|| knowledge as f64 / total as f64)
}

pub fn memorization_ratio<'a>(records: impl IntoIterator<Item = &'a EvalRecord>) -> Option<f64> {
    let c = KvCounts::from_records(records);
    memorization_ratio_counts(c.knowledge, c.vision)
}

/// Shannon entropy in bits of the empirical distribution of `classes`.
pub fn entropy_bits<T: Ord>(classes: impl IntoIterator<Item = T>) -> f64 {
    let mut counts: BTreeMap<T, usize> = BTreeMap::new();
    let mut n = 0usize;
    for c in classes {
        *counts.entry(c).or_default() += 1;
        n += 1;
    }
    if n == 0 {
        return 0.0;
    }
    let h: f64 = counts
        .values()
        .map(|&c| {
            let p = c as f64 / n as f64;
            -p * p.log2()
        })
        .sum();
    // Avoid reporting -0.0 for a single class.
    h.max(0.0)
}

/// Entropy of the answer classes of sampled responses to one item.
pub fn answer_entropy(samples: &[String], qa: &crate::benchgen::QaItem) -> Result<f64, HarnessError> {
    if samples.len() < 2 {
        return Err(HarnessError::TooFewSamples(samples.len()));
    }
    Ok(entropy_bits(samples.iter().map(|s| parse_closed_answer(s, qa))))
}

/// Metrics of one (question type, strategy, target kind) cell; a `None`
/// target kind aggregates both kinds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsCell {
    pub qtype: QuestionType,
    pub strategy: Strategy,
    pub target_kind: Option<TargetKind>,
    pub records: usize,
    pub counts: KvCounts,
    pub accuracy: Option<f64>,
    pub memorization_ratio: Option<f64>,
    pub tied_vision: usize,
    pub knowledge_unparsed: usize,
    pub incomplete: bool,
}

impl MetricsCell {
    pub fn from_records(
        qtype: QuestionType,
        strategy: Strategy,
        target_kind: Option<TargetKind>,
        records: &[&EvalRecord],
    ) -> Self {
        let counts = KvCounts::from_records(records.iter().copied());
        Self {
            qtype,
            strategy,
            target_kind,
            records: records.len(),
            accuracy: accuracy(records.iter().copied()).ok(),
            memorization_ratio: memorization_ratio_counts(counts.knowledge, counts.vision),
            tied_vision: records.iter().filter(|r| r.tie).count(),
            knowledge_unparsed: records.iter().filter(|r| r.knowledge_unparsed).count(),
            incomplete: counts.pending + counts.failed > 0,
            counts,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub model: String,
    pub cells: Vec<MetricsCell>,
    pub sanity: Option<SanitySummary>,
    pub entropy: Option<EntropySummary>,
    pub incomplete: bool,
}

impl MetricsReport {
    pub fn cell(
        &self,
        qtype: QuestionType,
        strategy: Strategy,
        target_kind: Option<TargetKind>,
    ) -> Option<&MetricsCell> {
        self.cells
            .iter()
            .find(|c| c.qtype == qtype && c.strategy == strategy && c.target_kind == target_kind)
    }
}
