//! Subject, Action and Place phrase extraction and the ranked inventory.
//!
//! - Subjects are noun chunks whose root is a nominal subject.
//! - Actions are verbs with a direct object; the phrase is the verb's
//!   gerund followed by the object's determiners/compound modifiers and the
//!   object itself.
//! - Places are `ARGM-LOC` role spans of three or four tokens.
//!
//! Phrases are compared by a normalization key (lowercased lemmas with the
//! leading determiner of the nominal part removed), so "a doctor" and
//! "the doctor" merge into one component.

mod inflect;

use std::collections::BTreeMap;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{AnnotatedSentence, TokenAnnotation};

pub use inflect::gerund;

const SUBJECT_DEPS: [&str; 2] = ["nsubj", "nsubjpass"];
const LOCATION_ROLE: &str = "ARGM-LOC";
const OBJECT_MODIFIER_DEPS: [&str; 2] = ["det", "compound"];

#[derive(Debug, Error)]
pub enum ExtractError {
    #[error("no components left after filtering in: {}", .0.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(", "))]
    EmptyCategory(Vec<Category>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Category {
    Subject,
    Action,
    Place,
}

impl Category {
    pub const ALL: [Category; 3] = [Category::Subject, Category::Action, Category::Place];
}

impl fmt::Display for Category {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Category::Subject => "Subject",
            Category::Action => "Action",
            Category::Place => "Place",
        })
    }
}

/// One phrase found in one sentence.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhraseOccurrence {
    pub category: Category,
    pub surface: String,
    pub key: String,
    pub has_entity: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhraseComponent {
    pub category: Category,
    /// Most frequent variant (ties: lexicographically smallest).
    pub surface: String,
    pub key: String,
    pub frequency: u64,
    pub variants: BTreeMap<String, u64>,
}

impl PhraseComponent {
    fn from_variants(category: Category, key: String, variants: BTreeMap<String, u64>) -> Self {
        let frequency = variants.values().sum();
        // BTreeMap iterates in ascending order, so the first maximum wins ties.
        let surface = variants
            .iter()
            .fold(None::<(&String, u64)>, |best, (s, &c)| match best {
                Some((_, bc)) if bc >= c => best,
                _ => Some((s, c)),
            })
            .map(|(s, _)| s.clone())
            .unwrap_or_default();
        Self {
            category,
            surface,
            key,
            frequency,
            variants,
        }
    }
}

/// Ranked candidate lists per category.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ComponentInventory {
    pub subjects: Vec<PhraseComponent>,
    pub actions: Vec<PhraseComponent>,
    pub places: Vec<PhraseComponent>,
    pub corpus_size: usize,
}

impl ComponentInventory {
    pub fn list(&self, category: Category) -> &[PhraseComponent] {
        match category {
            Category::Subject => &self.subjects,
            Category::Action => &self.actions,
            Category::Place => &self.places,
        }
    }

    fn list_mut(&mut self, category: Category) -> &mut Vec<PhraseComponent> {
        match category {
            Category::Subject => &mut self.subjects,
            Category::Action => &mut self.actions,
            Category::Place => &mut self.places,
        }
    }

    pub fn find(&self, category: Category, key: &str) -> Option<&PhraseComponent> {
        self.list(category).iter().find(|c| c.key == key)
    }

    pub fn total_frequency(&self, category: Category) -> u64 {
        self.list(category).iter().map(|c| c.frequency).sum()
    }

    pub fn components(&self) -> impl Iterator<Item = &PhraseComponent> {
        self.subjects
            .iter()
            .chain(&self.actions)
            .chain(&self.places)
    }

    /// Rebuilds an inventory from a flat component list, re-sorting each
    /// category into canonical order.
    pub fn from_components(
        components: impl IntoIterator<Item = PhraseComponent>,
        corpus_size: usize,
    ) -> Self {
        let mut inventory = Self {
            subjects: Vec::new(),
            actions: Vec::new(),
            places: Vec::new(),
            corpus_size,
        };
        for c in components {
            inventory.list_mut(c.category).push(c);
        }
        for category in Category::ALL {
            inventory.list_mut(category).sort_by(rank_order);
        }
        inventory
    }
}

fn rank_order(a: &PhraseComponent, b: &PhraseComponent) -> std::cmp::Ordering {
    b.frequency.cmp(&a.frequency).then_with(|| a.key.cmp(&b.key))
}

fn surface_of<'a>(tokens: impl IntoIterator<Item = &'a TokenAnnotation>) -> String {
    tokens
        .into_iter()
        .map(|t| t.surface.to_lowercase())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Lowercased lemmas with the determiner opening the nominal part removed.
/// The nominal part starts at position 0, or at position 1 when the phrase
/// opens with a verb or preposition.
pub fn normalization_key(tokens: &[&TokenAnnotation]) -> String {
    let skip = tokens.iter().enumerate().find_map(|(i, t)| {
        let opens_nominal = i == 0 || (i == 1 && matches!(tokens[0].pos.as_str(), "VERB" | "ADP" | "AUX"));
        (opens_nominal && t.pos == "DET").then_some(i)
    });
    tokens
        .iter()
        .enumerate()
        .filter(|(i, _)| Some(*i) != skip)
        .map(|(_, t)| t.lemma.to_lowercase())
        .collect::<Vec<_>>()
        .join(" ")
}

pub fn extract_subjects(sentence: &AnnotatedSentence) -> Vec<PhraseOccurrence> {
    sentence
        .noun_chunks
        .iter()
        .filter(|chunk| SUBJECT_DEPS.contains(&sentence.tokens[chunk.root].dep.as_str()))
        .map(|chunk| {
            let tokens: Vec<&TokenAnnotation> = sentence.span(chunk.range()).iter().collect();
            PhraseOccurrence {
                category: Category::Subject,
                surface: surface_of(tokens.iter().copied()),
                key: normalization_key(&tokens),
                has_entity: tokens.iter().any(|t| t.is_entity()),
            }
        })
        .collect()
}

pub fn extract_actions(sentence: &AnnotatedSentence) -> Vec<PhraseOccurrence> {
    let mut out = Vec::new();
    for verb in sentence.tokens.iter().filter(|t| t.pos == "VERB") {
        for object in sentence.dependents(verb.index).filter(|t| t.dep == "dobj") {
            let mut tail: Vec<&TokenAnnotation> = sentence
                .dependents(object.index)
                .filter(|t| OBJECT_MODIFIER_DEPS.contains(&t.dep.as_str()) && t.index < object.index)
                .collect();
            tail.push(object);
            tail.sort_by_key(|t| t.index);
            let mut key_tokens = vec![verb];
            key_tokens.extend(tail.iter().copied());
            let surface = std::iter::once(gerund(&verb.lemma))
                .chain(tail.iter().map(|t| t.surface.to_lowercase()))
                .collect::<Vec<_>>()
                .join(" ");
            out.push(PhraseOccurrence {
                category: Category::Action,
                surface,
                key: normalization_key(&key_tokens),
                has_entity: key_tokens.iter().any(|t| t.is_entity()),
            });
        }
    }
    out
}

pub fn extract_places(sentence: &AnnotatedSentence) -> Vec<PhraseOccurrence> {
    sentence
        .roles
        .iter()
        .filter(|r| r.role == LOCATION_ROLE && (3..=4).contains(&r.len()))
        .map(|r| {
            let tokens: Vec<&TokenAnnotation> = sentence.span(r.start..r.end).iter().collect();
            PhraseOccurrence {
                category: Category::Place,
                surface: surface_of(tokens.iter().copied()),
                key: normalization_key(&tokens),
                has_entity: tokens.iter().any(|t| t.is_entity()),
            }
        })
        .collect()
}

/// All occurrences of one sentence: subjects, then actions, then places.
pub fn extract_sentence(sentence: &AnnotatedSentence) -> Vec<PhraseOccurrence> {
    let mut out = extract_subjects(sentence);
    out.extend(extract_actions(sentence));
    out.extend(extract_places(sentence));
    out
}

/// Extracts every sentence in parallel, preserving corpus order.
pub fn extract_corpus(sentences: &[AnnotatedSentence]) -> Vec<PhraseOccurrence> {
    sentences
        .par_iter()
        .flat_map_iter(extract_sentence)
        .collect()
}

/// Variant counts per (category, key). Merging two tallies is associative
/// and commutative, so per-shard tallies can be reduced in any order.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct OccurrenceTally {
    counts: BTreeMap<(Category, String), BTreeMap<String, u64>>,
}

impl OccurrenceTally {
    pub fn add(&mut self, occurrence: &PhraseOccurrence) {
        if occurrence.has_entity && occurrence.category != Category::Action {
            return;
        }
        *self
            .counts
            .entry((occurrence.category, occurrence.key.clone()))
            .or_default()
            .entry(occurrence.surface.clone())
            .or_default() += 1;
    }

    pub fn merge(mut self, other: Self) -> Self {
        for (k, variants) in other.counts {
            let slot = self.counts.entry(k).or_default();
            for (surface, n) in variants {
                *slot.entry(surface).or_default() += n;
            }
        }
        self
    }
}

/// Merges variants, drops named-entity subjects and places, ranks each
/// category and keeps the first `pool` candidates.
pub fn build_inventory(
    occurrences: &[PhraseOccurrence],
    corpus_size: usize,
    pool: usize,
) -> Result<ComponentInventory, ExtractError> {
    let tally = occurrences
        .par_chunks(1024)
        .map(|chunk| {
            let mut t = OccurrenceTally::default();
            chunk.iter().for_each(|o| t.add(o));
            t
        })
        .reduce(OccurrenceTally::default, OccurrenceTally::merge);
    let components = tally
        .counts
        .into_iter()
        .map(|((category, key), variants)| PhraseComponent::from_variants(category, key, variants));
    let mut inventory = ComponentInventory::from_components(components, corpus_size);
    let mut empty = Vec::new();
    for category in Category::ALL {
        let list = inventory.list_mut(category);
        list.truncate(pool);
        if list.is_empty() {
            empty.push(category);
        }
    }
    if !empty.is_empty() {
        return Err(ExtractError::EmptyCategory(empty));
    }
    Ok(inventory)
}
