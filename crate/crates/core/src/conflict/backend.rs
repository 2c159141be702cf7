//! Sequence probability backends.

use std::collections::{BTreeMap, HashMap};

use crate::corpus::AnnotatedSentence;
use crate::modelio::ModelError;

/// Source of base-2 sequence log-probabilities for phrases.
pub trait ProbabilityBackend: Send + Sync {
    /// Stable identifier, used in cache paths and provenance.
    fn id(&self) -> String;

    /// `log2 P(phrase)`; always `<= 0` and deterministic for a phrase.
    fn sequence_logprob(&self, phrase: &str) -> Result<f64, ModelError>;
}

impl<T: ProbabilityBackend + ?Sized> ProbabilityBackend for &T {
    fn id(&self) -> String {
        (**self).id()
    }

    fn sequence_logprob(&self, phrase: &str) -> Result<f64, ModelError> {
        (**self).sequence_logprob(phrase)
    }
}

impl<T: ProbabilityBackend + ?Sized> ProbabilityBackend for Box<T> {
    fn id(&self) -> String {
        (**self).id()
    }

    fn sequence_logprob(&self, phrase: &str) -> Result<f64, ModelError> {
        (**self).sequence_logprob(phrase)
    }
}

/// Fixed phrase → log-probability table.
#[derive(Debug, Clone, Default)]
pub struct TableBackend {
    id: String,
    table: HashMap<String, f64>,
}

impl TableBackend {
    pub fn new(id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            table: HashMap::new(),
        }
    }

    pub fn insert_logprob(&mut self, phrase: impl Into<String>, logprob: f64) {
        self.table.insert(phrase.into(), logprob);
    }

    pub fn insert_probability(&mut self, phrase: impl Into<String>, probability: f64) {
        self.insert_logprob(phrase, probability.log2());
    }

    pub fn len(&self) -> usize {
        self.table.len()
    }

    pub fn is_empty(&self) -> bool {
        self.table.is_empty()
    }
}

impl FromIterator<(String, f64)> for TableBackend {
    fn from_iter<I: IntoIterator<Item = (String, f64)>>(iter: I) -> Self {
        Self {
            id: "table".into(),
            table: iter.into_iter().collect(),
        }
    }
}

impl ProbabilityBackend for TableBackend {
    fn id(&self) -> String {
        self.id.clone()
    }

    fn sequence_logprob(&self, phrase: &str) -> Result<f64, ModelError> {
        if phrase.trim().is_empty() {
            return Err(ModelError::Precondition("empty phrase".into()));
        }
        let value = *self
            .table
            .get(phrase)
            .ok_or_else(|| ModelError::Missing(phrase.to_string()))?;
        if !(value <= 0.0) {
            return Err(ModelError::Provider(format!(
                "table log-probability {value} for {phrase:?} is not <= 0"
            )));
        }
        Ok(value)
    }
}

const UNKNOWN: &str = "<unk>";

/// Add-α smoothed bigram model over lowercased corpus tokens.
///
/// The first word of a phrase is scored with the smoothed unigram
/// distribution, each following word with the smoothed bigram conditional
/// `(c(prev, w) + α) / (h(prev) + α·V)`, where `h(prev)` counts bigrams
/// starting at `prev` and `V` is the vocabulary size plus one unknown slot.
/// Punctuation tokens are skipped.
#[derive(Debug, Clone)]
pub struct NgramBackend {
    alpha: f64,
    unigrams: BTreeMap<String, u64>,
    histories: BTreeMap<String, u64>,
    bigrams: BTreeMap<(String, String), u64>,
    total: u64,
}

impl NgramBackend {
    pub fn from_sentences(sentences: &[AnnotatedSentence], alpha: f64) -> Self {
        let mut unigrams = BTreeMap::new();
        let mut histories = BTreeMap::new();
        let mut bigrams = BTreeMap::new();
        let mut total = 0;
        for sentence in sentences {
            let words: Vec<String> = sentence
                .tokens
                .iter()
                .filter(|t| t.pos != "PUNCT")
                .map(|t| t.surface.to_lowercase())
                .collect();
            for w in &words {
                *unigrams.entry(w.clone()).or_insert(0) += 1;
                total += 1;
            }
            for pair in words.windows(2) {
                *histories.entry(pair[0].clone()).or_insert(0) += 1;
                *bigrams.entry((pair[0].clone(), pair[1].clone())).or_insert(0) += 1;
            }
        }
        Self {
            alpha,
            unigrams,
            histories,
            bigrams,
            total,
        }
    }

    fn vocabulary(&self) -> f64 {
        (self.unigrams.len() + 1) as f64
    }

    fn word<'a>(&self, w: &'a str) -> &'a str {
        if self.unigrams.contains_key(w) {
            w
        } else {
            UNKNOWN
        }
    }

    fn count(&self, w: &str) -> f64 {
        self.unigrams.get(w).copied().unwrap_or(0) as f64
    }
}

impl ProbabilityBackend for NgramBackend {
    fn id(&self) -> String {
        format!("ngram-add{}", self.alpha)
    }

    fn sequence_logprob(&self, phrase: &str) -> Result<f64, ModelError> {
        let words: Vec<String> = phrase.split_whitespace().map(str::to_lowercase).collect();
        if words.is_empty() {
            return Err(ModelError::Precondition("empty phrase".into()));
        }
        let v = self.vocabulary();
        let first = self.word(&words[0]);
        let mut logp = ((self.count(first) + self.alpha) / (self.total as f64 + self.alpha * v)).log2();
        for pair in words.windows(2) {
            let (prev, w) = (self.word(&pair[0]), self.word(&pair[1]));
            let joint = self
                .bigrams
                .get(&(prev.to_string(), w.to_string()))
                .copied()
                .unwrap_or(0) as f64;
            let history = self.histories.get(prev).copied().unwrap_or(0) as f64;
            logp += ((joint + self.alpha) / (history + self.alpha * v)).log2();
        }
        Ok(logp)
    }
}
