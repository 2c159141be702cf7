//! Image prompts and question generation for accepted triplets.
//!
//! Each accepted image yields three questions: Yes-No, Multiple-Choice and
//! Subjective. Multiple-choice distractors are drawn one per NPMI rank bin
//! so the option set spans plausible to implausible alternatives.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::PipelineConfig;
use crate::conflict::{
    score_targets, ComponentRef, ConflictError, ContextPair, KnowledgeTriplet, ProbabilityBackend,
    ScoredCandidate, TargetKind,
};
use crate::digest::seed_from;
use crate::extract::ComponentInventory;

#[derive(Debug, Error)]
pub enum BenchgenError {
    #[error("need {needed} distractor candidates, only {available} available")]
    TooFewCandidates { needed: usize, available: usize },
    #[error("image {0} is not accepted")]
    ImageNotAccepted(String),
    #[error("image {image} belongs to triplet {image_triplet}, not {triplet}")]
    TripletMismatch {
        image: String,
        image_triplet: String,
        triplet: String,
    },
    #[error(transparent)]
    Conflict(#[from] ConflictError),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "state", rename_all = "snake_case")]
pub enum ImageStatus {
    Generated,
    Failed { reason: String },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageReview {
    pub alignment: Option<u8>,
    pub quality: Option<u8>,
    pub accepted: bool,
}

impl ImageReview {
    pub fn new(alignment: u8, quality: u8) -> Self {
        Self {
            alignment: Some(alignment),
            quality: Some(quality),
            accepted: alignment + quality == 2,
        }
    }

    pub fn is_reviewed(&self) -> bool {
        self.alignment.is_some() && self.quality.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageRecord {
    pub id: String,
    pub triplet_id: String,
    pub prompt: String,
    /// Path relative to the workspace; empty when generation failed.
    pub uri: String,
    pub variant: u32,
    pub status: ImageStatus,
    #[serde(default)]
    pub review: ImageReview,
}

impl ImageRecord {
    pub fn is_accepted(&self) -> bool {
        self.status == ImageStatus::Generated && self.review.accepted
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuestionType {
    Yn,
    Mc,
    Subj,
}

impl QuestionType {
    pub const ALL: [QuestionType; 3] = [QuestionType::Yn, QuestionType::Mc, QuestionType::Subj];

    pub fn as_str(self) -> &'static str {
        match self {
            QuestionType::Yn => "yn",
            QuestionType::Mc => "mc",
            QuestionType::Subj => "subj",
        }
    }

    pub fn is_closed(self) -> bool {
        self != QuestionType::Subj
    }
}

impl std::fmt::Display for QuestionType {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaOption {
    pub label: String,
    pub text: String,
}

/// Where an MC distractor came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinTrace {
    pub bin: usize,
    pub npmi: f64,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QaItem {
    pub id: String,
    pub triplet_id: String,
    pub image_id: String,
    pub image_uri: String,
    pub target_kind: TargetKind,
    pub qtype: QuestionType,
    pub question: String,
    #[serde(default)]
    pub options: Vec<QaOption>,
    /// "Yes" for YN, an option label for MC, the target phrase for SUBJ.
    pub gold: String,
    #[serde(default)]
    pub bin_trace: Vec<BinTrace>,
}

impl QaItem {
    pub fn option_text(&self, label: &str) -> Option<&str> {
        self.options
            .iter()
            .find(|o| o.label == label)
            .map(|o| o.text.as_str())
    }

    /// The gold answer as a phrase (MC labels resolved to option text).
    pub fn gold_text(&self) -> &str {
        match self.qtype {
            QuestionType::Mc => self.option_text(&self.gold).unwrap_or(&self.gold),
            _ => &self.gold,
        }
    }

    /// Question with MC options rendered inline: `Q? (A) x (B) y`.
    pub fn prompt(&self) -> String {
        let mut out = self.question.clone();
        for o in &self.options {
            out.push_str(&format!(" ({}) {}", o.label, o.text));
        }
        out
    }
}

const PLURAL_WORDS: &[&str] = &[
    "people", "children", "men", "women", "mice", "geese", "feet", "teeth", "police", "cattle",
    "you", "we", "they", "both", "many", "several",
];

/// Whether the subject takes "are": its head noun's surface differs from
/// its lemma (an inflected plural) or it is a known plural word.
pub fn is_plural(subject: &ComponentRef) -> bool {
    let head = subject.surface.split_whitespace().last().unwrap_or("");
    let lemma = subject.key.split_whitespace().last().unwrap_or("");
    let head = head.to_lowercase();
    PLURAL_WORDS.contains(&head.as_str()) || (!lemma.is_empty() && head != lemma)
}

fn be(subject: &ComponentRef) -> &'static str {
    if is_plural(subject) {
        "are"
    } else {
        "is"
    }
}

fn capitalize(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

pub fn image_prompt(triplet: &KnowledgeTriplet) -> String {
    format!(
        "an image of {} {} {}",
        triplet.subject.surface, triplet.action.surface, triplet.place.surface
    )
}

pub fn yes_no_question(triplet: &KnowledgeTriplet) -> String {
    let s = &triplet.subject.surface;
    let (first, second) = match triplet.target_kind {
        TargetKind::Action => (&triplet.place.surface, &triplet.action.surface),
        TargetKind::Place => (&triplet.action.surface, &triplet.place.surface),
    };
    capitalize(&format!("{} {s} {first} {second}?", be(&triplet.subject)))
}

pub fn open_question(triplet: &KnowledgeTriplet) -> String {
    let s = &triplet.subject.surface;
    let be = be(&triplet.subject);
    match triplet.target_kind {
        TargetKind::Action => format!("What {be} {s} doing {}?", triplet.place.surface),
        TargetKind::Place => format!("Where {be} {s} {}?", triplet.action.surface),
    }
}

pub fn subjective_question(triplet: &KnowledgeTriplet, suffix: &str) -> String {
    format!("{} {suffix}", open_question(triplet))
}

/// A distractor picked from one rank bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BinnedDistractor {
    pub bin: usize,
    pub candidate: ScoredCandidate,
}

/// Sizes of `bins` equal-count bins over `n` items; the remainder goes to
/// the lowest bins.
pub fn bin_sizes(n: usize, bins: usize) -> Vec<usize> {
    let base = n / bins;
    let extra = n % bins;
    (0..bins).map(|b| base + usize::from(b < extra)).collect()
}

/// Picks `m - 1` distractors: candidates other than `gold_key` are sorted
/// by NPMI ascending, cut into `m - 1` rank bins and one is drawn per bin.
pub fn bin_distractors<R: Rng + ?Sized>(
    candidates: &[ScoredCandidate],
    gold_key: &str,
    m: usize,
    rng: &mut R,
) -> Result<Vec<BinnedDistractor>, BenchgenError> {
    let needed = m.saturating_sub(1);
    let mut pool: Vec<&ScoredCandidate> = candidates
        .iter()
        .filter(|c| c.component.key != gold_key)
        .collect();
    if needed == 0 || pool.len() < needed {
        return Err(BenchgenError::TooFewCandidates {
            needed,
            available: pool.len(),
        });
    }
    pool.sort_by(|a, b| {
        a.npmi
            .total_cmp(&b.npmi)
            .then_with(|| a.component.key.cmp(&b.component.key))
    });
    let mut start = 0;
    let mut out = Vec::with_capacity(needed);
    for (bin, size) in bin_sizes(pool.len(), needed).into_iter().enumerate() {
        let pick = start + rng.random_range(0..size);
        out.push(BinnedDistractor {
            bin,
            candidate: pool[pick].clone(),
        });
        start += size;
    }
    Ok(out)
}

/// Per-item generator seeded from (seed, triplet id, question type).
pub fn item_rng(seed: u64, triplet_id: &str, qtype: QuestionType) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed_from(&[&seed.to_string(), triplet_id, qtype.as_str()]))
}

fn option_label(i: usize) -> String {
    char::from(b'A' + i as u8).to_string()
}

fn check_image(triplet: &KnowledgeTriplet, image: &ImageRecord) -> Result<(), BenchgenError> {
    if image.triplet_id != triplet.id {
        return Err(BenchgenError::TripletMismatch {
            image: image.id.clone(),
            image_triplet: image.triplet_id.clone(),
            triplet: triplet.id.clone(),
        });
    }
    if !image.is_accepted() {
        return Err(BenchgenError::ImageNotAccepted(image.id.clone()));
    }
    Ok(())
}

fn base_item(triplet: &KnowledgeTriplet, image: &ImageRecord, qtype: QuestionType) -> QaItem {
    QaItem {
        id: format!("{}-{}", image.id, qtype.as_str()),
        triplet_id: triplet.id.clone(),
        image_id: image.id.clone(),
        image_uri: image.uri.clone(),
        target_kind: triplet.target_kind,
        qtype,
        question: String::new(),
        options: Vec::new(),
        gold: String::new(),
        bin_trace: Vec::new(),
    }
}

pub fn gen_yes_no(triplet: &KnowledgeTriplet, image: &ImageRecord) -> Result<QaItem, BenchgenError> {
    check_image(triplet, image)?;
    Ok(QaItem {
        question: yes_no_question(triplet),
        gold: "Yes".into(),
        ..base_item(triplet, image, QuestionType::Yn)
    })
}

pub fn gen_subjective(
    triplet: &KnowledgeTriplet,
    image: &ImageRecord,
    config: &PipelineConfig,
) -> Result<QaItem, BenchgenError> {
    check_image(triplet, image)?;
    Ok(QaItem {
        question: subjective_question(triplet, &config.subjective_suffix),
        gold: triplet.target().surface.clone(),
        ..base_item(triplet, image, QuestionType::Subj)
    })
}

/// Multiple-choice item from candidates already scored against the
/// triplet's context.
pub fn gen_multi_choice_scored(
    triplet: &KnowledgeTriplet,
    image: &ImageRecord,
    candidates: &[ScoredCandidate],
    config: &PipelineConfig,
) -> Result<QaItem, BenchgenError> {
    check_image(triplet, image)?;
    let mut rng = item_rng(config.seed, &triplet.id, QuestionType::Mc);
    let target = triplet.target();
    let distractors = bin_distractors(candidates, &target.key, config.options, &mut rng)?;
    // Entries: (text, Some(bin trace) for distractors).
    let mut entries: Vec<(String, Option<BinTrace>)> = vec![(target.surface.clone(), None)];
    entries.extend(distractors.into_iter().map(|d| {
        let text = d.candidate.component.surface.clone();
        let trace = BinTrace {
            bin: d.bin,
            npmi: d.candidate.npmi,
            text: text.clone(),
        };
        (text, Some(trace))
    }));
    entries.shuffle(&mut rng);
    let mut item = QaItem {
        question: open_question(triplet),
        ..base_item(triplet, image, QuestionType::Mc)
    };
    for (i, (text, trace)) in entries.into_iter().enumerate() {
        let label = option_label(i);
        match trace {
            None => item.gold = label.clone(),
            Some(t) => item.bin_trace.push(t),
        }
        item.options.push(QaOption { label, text });
    }
    item.bin_trace.sort_by_key(|t| t.bin);
    Ok(item)
}

pub fn gen_multi_choice<B: ProbabilityBackend + ?Sized>(
    triplet: &KnowledgeTriplet,
    image: &ImageRecord,
    context: &ContextPair,
    inventory: &ComponentInventory,
    backend: &B,
    config: &PipelineConfig,
) -> Result<QaItem, BenchgenError> {
    let candidates = score_targets(context, inventory, backend, config)?;
    gen_multi_choice_scored(triplet, image, &candidates, config)
}

/// The three questions of one accepted image, in YN, MC, SUBJ order.
pub fn gen_qa_triple(
    triplet: &KnowledgeTriplet,
    image: &ImageRecord,
    candidates: &[ScoredCandidate],
    config: &PipelineConfig,
) -> Result<[QaItem; 3], BenchgenError> {
    Ok([
        gen_yes_no(triplet, image)?,
        gen_multi_choice_scored(triplet, image, candidates, config)?,
        gen_subjective(triplet, image, config)?,
    ])
}
