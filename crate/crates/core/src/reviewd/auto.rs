//! Deterministic rule-based annotator so the pipeline can run unattended.

use std::collections::{BTreeMap, BTreeSet};

use super::{AnnotationTask, Decision, ReviewError, ReviewStore, Stage, TaskPayload};
use crate::benchgen::ImageStatus;
use crate::digest::seed_from;
use crate::harness::{auto_grade, words};

const ABSTRACT_WORDS: &[&str] = &[
    "event", "thing", "something", "anything", "way", "time", "idea", "it", "this", "that",
    "situation", "case", "fact", "you", "someone", "one", "lot",
];

#[derive(Debug, Clone)]
pub struct AutoAnnotator {
    pub id: String,
    /// Components containing any of these words are labeled not concrete.
    pub abstract_words: BTreeSet<String>,
    /// Share of generated images rejected for quality, chosen by hash.
    pub image_reject_rate: f64,
    pub seed: u64,
}

impl Default for AutoAnnotator {
    fn default() -> Self {
        Self {
            id: "auto".into(),
            abstract_words: ABSTRACT_WORDS.iter().map(|w| w.to_string()).collect(),
            image_reject_rate: 0.0,
            seed: 0,
        }
    }
}

impl AutoAnnotator {
    pub fn labels(&self, task: &AnnotationTask) -> BTreeMap<String, u8> {
        let l = |pairs: &[(&str, u8)]| pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect();
        match &task.payload {
            TaskPayload::Component(c) => {
                let abstract_ = words(&c.key).iter().any(|w| self.abstract_words.contains(w));
                l(&[("concrete", u8::from(!abstract_))])
            }
            TaskPayload::Context(_) => l(&[("common", 1)]),
            TaskPayload::Triplet(_) => l(&[("uncommon", 1)]),
            TaskPayload::Image(img) => {
                if img.status != ImageStatus::Generated {
                    return l(&[("alignment", 0), ("quality", 0)]);
                }
                let h = seed_from(&[&self.seed.to_string(), &img.id]);
                let u = (h >> 11) as f64 / (1u64 << 53) as f64;
                l(&[("alignment", 1), ("quality", u8::from(u >= self.image_reject_rate))])
            }
            TaskPayload::Subjective(s) => {
                let g = auto_grade(&s.response, &s.vision_reference, &s.knowledge_reference);
                l(&[
                    ("relevancy", g.relevancy),
                    ("responsiveness", g.responsiveness),
                    ("closeness_vision", g.closeness_vision),
                    ("closeness_knowledge", g.closeness_knowledge),
                ])
            }
        }
    }

    /// Labels every unlabeled task of `stage`; returns how many.
    pub fn annotate(&self, store: &ReviewStore, stage: Stage) -> Result<usize, ReviewError> {
        let mut n = 0;
        for task in store.tasks(stage) {
            if store.task(&task.id).is_some_and(|v| v.decision.is_some()) {
                continue;
            }
            let decision = Decision {
                task_id: task.id.clone(),
                annotator: self.id.clone(),
                labels: self.labels(&task),
                timestamp: String::new(),
                version: None,
            };
            store.submit(decision)?;
            n += 1;
        }
        Ok(n)
    }
}
