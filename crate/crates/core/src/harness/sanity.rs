//! Text-only commonsense probe: does the model itself consider the
//! constructed scene implausible?

use serde::{Deserialize, Serialize};

use super::parse::words;
use crate::conflict::KnowledgeTriplet;
use crate::config::PipelineConfig;
use crate::modelio::{query_mllm, MllmClient, MllmRequest, ModelError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SanityCategory {
    Negate,
    Accept,
    Other,
}

const NEGATE: &[&str] = &[
    "no",
    "not possible",
    "impossible",
    "cannot",
    "it is not possible",
    "it's not possible",
    "it is impossible",
    "it's impossible",
];
const ACCEPT: &[&str] = &["yes", "it is possible", "it's possible", "possible"];

pub fn sanity_prompt(triplet: &KnowledgeTriplet) -> String {
    format!(
        "Based on common sense, is it possible for {}?",
        triplet.context_target_phrase()
    )
}

fn starts_with_marker(reply: &[String], markers: &[&str]) -> bool {
    markers.iter().any(|m| {
        let m: Vec<&str> = m.split(' ').collect();
        reply.len() >= m.len() && reply.iter().zip(&m).all(|(a, b)| a == b)
    })
}

/// Negate markers are checked before accept markers, both at the start of
/// the reply and on word boundaries.
pub fn categorize_sanity(reply: &str) -> SanityCategory {
    let w = words(reply);
    if starts_with_marker(&w, NEGATE) {
        SanityCategory::Negate
    } else if starts_with_marker(&w, ACCEPT) {
        SanityCategory::Accept
    } else {
        SanityCategory::Other
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SanityOutcome {
    pub triplet_id: String,
    pub prompt: String,
    pub response: String,
    pub category: SanityCategory,
}

pub fn run_sanity<C: MllmClient + ?Sized>(
    triplet: &KnowledgeTriplet,
    client: &C,
    config: &PipelineConfig,
) -> Result<SanityOutcome, ModelError> {
    let prompt = sanity_prompt(triplet);
    let request = MllmRequest::text_only(prompt.clone(), config.eval_temperature, 1);
    let response = query_mllm(&request, client)?.texts.remove(0);
    Ok(SanityOutcome {
        triplet_id: triplet.id.clone(),
        category: categorize_sanity(&response),
        prompt,
        response,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SanitySummary {
    pub total: usize,
    pub negate: usize,
    pub accept: usize,
    pub other: usize,
}

impl SanitySummary {
    pub fn from_outcomes<'a>(outcomes: impl IntoIterator<Item = &'a SanityOutcome>) -> Self {
        let mut s = Self::default();
        for o in outcomes {
            s.total += 1;
            match o.category {
                SanityCategory::Negate => s.negate += 1,
                SanityCategory::Accept => s.accept += 1,
                SanityCategory::Other => s.other += 1,
            }
        }
        s
    }

    pub fn negate_rate(&self) -> Option<f64> {
        (self.total > 0).then(|| self.negate as f64 / self.total as f64)
    }
}
