//! Co-occurrence scoring and counter-commonsense triplet mining.
//!
//! Context pairs are (Subject, Place) when the conflict target is an Action
//! and (Subject, Action) when the target is a Place. For every subject the
//! `K` partners with the highest NPMI form its contexts; for every accepted
//! context the `M` targets with the lowest NPMI against it form triplets.
//!
//! Joint probabilities come from a [`ProbabilityBackend`] applied to the
//! concatenated phrases (context components in role order, then the
//! target). Single-component probabilities are relative frequencies within
//! the component's category.

mod backend;
mod npmi;

use std::cmp::Ordering;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::PipelineConfig;
use crate::digest::short_id;
use crate::extract::{Category, ComponentInventory, PhraseComponent};
use crate::modelio::ModelError;

pub use backend::{NgramBackend, ProbabilityBackend, TableBackend};
pub use npmi::{npmi, pmi};

#[derive(Debug, Error)]
pub enum ConflictError {
    #[error("npmi: {0}")]
    Npmi(String),
    #[error("{category} component {key:?} is not in the inventory")]
    UnknownComponent { category: Category, key: String },
    #[error("backend failed on {phrase:?}: {source}")]
    Backend {
        phrase: String,
        #[source]
        source: ModelError,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TargetKind {
    Action,
    Place,
}

impl TargetKind {
    pub const ALL: [TargetKind; 2] = [TargetKind::Action, TargetKind::Place];

    /// Category of the conflict target.
    pub fn category(self) -> Category {
        match self {
            TargetKind::Action => Category::Action,
            TargetKind::Place => Category::Place,
        }
    }

    /// Category of the subject's partner in the context pair.
    pub fn partner_category(self) -> Category {
        match self {
            TargetKind::Action => Category::Place,
            TargetKind::Place => Category::Action,
        }
    }
}

impl fmt::Display for TargetKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.category(), f)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReviewState {
    #[default]
    Pending,
    Accepted,
    Rejected,
}

/// Lightweight reference to an inventory component.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ComponentRef {
    pub category: Category,
    pub key: String,
    pub surface: String,
}

impl From<&PhraseComponent> for ComponentRef {
    fn from(c: &PhraseComponent) -> Self {
        Self {
            category: c.category,
            key: c.key.clone(),
            surface: c.surface.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextPair {
    pub id: String,
    pub target_kind: TargetKind,
    /// Subject first, then the partner (Place or Action).
    pub components: [ComponentRef; 2],
    pub npmi: f64,
    pub review_state: ReviewState,
}

impl ContextPair {
    pub fn new(target_kind: TargetKind, subject: ComponentRef, partner: ComponentRef, npmi: f64) -> Self {
        let id = short_id("ctx", &[&format!("{target_kind:?}"), &subject.key, &partner.key]);
        Self {
            id,
            target_kind,
            components: [subject, partner],
            npmi,
            review_state: ReviewState::Pending,
        }
    }

    pub fn subject(&self) -> &ComponentRef {
        &self.components[0]
    }

    pub fn partner(&self) -> &ComponentRef {
        &self.components[1]
    }

    /// Context phrase in role order, e.g. "the baby on the bed".
    pub fn phrase(&self) -> String {
        format!("{} {}", self.subject().surface, self.partner().surface)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KnowledgeTriplet {
    pub id: String,
    pub target_kind: TargetKind,
    pub subject: ComponentRef,
    pub action: ComponentRef,
    pub place: ComponentRef,
    pub context_id: String,
    pub context_npmi: f64,
    pub target_npmi: f64,
    pub review_state: ReviewState,
}

impl KnowledgeTriplet {
    pub fn from_context(context: &ContextPair, target: ComponentRef, target_npmi: f64) -> Self {
        let subject = context.subject().clone();
        let partner = context.partner().clone();
        let (action, place) = match context.target_kind {
            TargetKind::Action => (target, partner),
            TargetKind::Place => (partner, target),
        };
        let id = short_id(
            "tri",
            &[
                &format!("{:?}", context.target_kind),
                &subject.key,
                &action.key,
                &place.key,
            ],
        );
        Self {
            id,
            target_kind: context.target_kind,
            subject,
            action,
            place,
            context_id: context.id.clone(),
            context_npmi: context.npmi,
            target_npmi,
            review_state: ReviewState::Pending,
        }
    }

    pub fn target(&self) -> &ComponentRef {
        match self.target_kind {
            TargetKind::Action => &self.action,
            TargetKind::Place => &self.place,
        }
    }

    /// The non-subject context component.
    pub fn partner(&self) -> &ComponentRef {
        match self.target_kind {
            TargetKind::Action => &self.place,
            TargetKind::Place => &self.action,
        }
    }

    pub fn context_phrase(&self) -> String {
        format!("{} {}", self.subject.surface, self.partner().surface)
    }

    /// Context then target, e.g. "the baby on the bed fixing a computer".
    pub fn context_target_phrase(&self) -> String {
        format!("{} {}", self.context_phrase(), self.target().surface)
    }
}

/// A target-category component scored against a context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate {
    pub component: ComponentRef,
    pub npmi: f64,
}

fn ascending(a: &ScoredCandidate, b: &ScoredCandidate) -> Ordering {
    a.npmi
        .total_cmp(&b.npmi)
        .then_with(|| a.component.key.cmp(&b.component.key))
}

fn descending(a: &ScoredCandidate, b: &ScoredCandidate) -> Ordering {
    b.npmi
        .total_cmp(&a.npmi)
        .then_with(|| a.component.key.cmp(&b.component.key))
}

/// Relative frequency of `component` within its category.
pub fn component_prob(
    component: &ComponentRef,
    inventory: &ComponentInventory,
) -> Result<f64, ConflictError> {
    let found = inventory
        .find(component.category, &component.key)
        .ok_or_else(|| ConflictError::UnknownComponent {
            category: component.category,
            key: component.key.clone(),
        })?;
    Ok(found.frequency as f64 / inventory.total_frequency(component.category) as f64)
}

/// Applies the backend with optional per-word length normalization.
pub struct Scorer<'a, B: ?Sized> {
    backend: &'a B,
    length_normalized: bool,
}

impl<'a, B: ProbabilityBackend + ?Sized> Scorer<'a, B> {
    pub fn new(backend: &'a B, config: &PipelineConfig) -> Self {
        Self {
            backend,
            length_normalized: config.length_normalized,
        }
    }

    pub fn logprob(&self, phrase: &str) -> Result<f64, ConflictError> {
        let raw = self
            .backend
            .sequence_logprob(phrase)
            .map_err(|source| ConflictError::Backend {
                phrase: phrase.to_string(),
                source,
            })?;
        if self.length_normalized {
            let words = phrase.split_whitespace().count().max(1);
            Ok(raw / words as f64)
        } else {
            Ok(raw)
        }
    }
}

fn log_component_prob(c: &ComponentRef, inventory: &ComponentInventory) -> Result<f64, ConflictError> {
    Ok(component_prob(c, inventory)?.log2())
}

/// NPMI of every partner with `subject` for one target kind, highest first.
pub fn score_partners<B: ProbabilityBackend + ?Sized>(
    subject: &ComponentRef,
    kind: TargetKind,
    inventory: &ComponentInventory,
    backend: &B,
    config: &PipelineConfig,
) -> Result<Vec<ScoredCandidate>, ConflictError> {
    let scorer = Scorer::new(backend, config);
    let logp_subject = log_component_prob(subject, inventory)?;
    let mut scored = inventory
        .list(kind.partner_category())
        .par_iter()
        .map(|partner| {
            let partner = ComponentRef::from(partner);
            let joint = scorer.logprob(&format!("{} {}", subject.surface, partner.surface))?;
            let logp_partner = log_component_prob(&partner, inventory)?;
            Ok(ScoredCandidate {
                npmi: npmi(joint, logp_subject, logp_partner)?,
                component: partner,
            })
        })
        .collect::<Result<Vec<_>, ConflictError>>()?;
    scored.sort_by(descending);
    Ok(scored)
}

/// Top-`K` partners by NPMI for every subject and both target kinds.
pub fn select_contexts<B: ProbabilityBackend + ?Sized>(
    inventory: &ComponentInventory,
    backend: &B,
    config: &PipelineConfig,
) -> Result<Vec<ContextPair>, ConflictError> {
    let mut out = Vec::new();
    for subject in &inventory.subjects {
        let subject = ComponentRef::from(subject);
        for kind in TargetKind::ALL {
            let scored = score_partners(&subject, kind, inventory, backend, config)?;
            out.extend(
                scored
                    .into_iter()
                    .take(config.contexts_per_subject)
                    .map(|s| ContextPair::new(kind, subject.clone(), s.component, s.npmi)),
            );
        }
    }
    Ok(out)
}

/// NPMI(T; C) for every candidate target, lowest first. Candidates sharing
/// a key with a context component are excluded.
pub fn score_targets<B: ProbabilityBackend + ?Sized>(
    context: &ContextPair,
    inventory: &ComponentInventory,
    backend: &B,
    config: &PipelineConfig,
) -> Result<Vec<ScoredCandidate>, ConflictError> {
    let scorer = Scorer::new(backend, config);
    let context_phrase = context.phrase();
    let logp_context = scorer.logprob(&context_phrase)?;
    let mut scored = inventory
        .list(context.target_kind.category())
        .par_iter()
        .filter(|c| context.components.iter().all(|cc| cc.key != c.key))
        .map(|target| {
            let target = ComponentRef::from(target);
            let joint = scorer.logprob(&format!("{context_phrase} {}", target.surface))?;
            let logp_target = log_component_prob(&target, inventory)?;
            Ok(ScoredCandidate {
                npmi: npmi(joint, logp_context, logp_target)?,
                component: target,
            })
        })
        .collect::<Result<Vec<_>, ConflictError>>()?;
    scored.sort_by(ascending);
    Ok(scored)
}

/// The `M` lowest-NPMI targets of a context as triplets.
pub fn select_targets<B: ProbabilityBackend + ?Sized>(
    context: &ContextPair,
    inventory: &ComponentInventory,
    backend: &B,
    config: &PipelineConfig,
) -> Result<Vec<KnowledgeTriplet>, ConflictError> {
    Ok(score_targets(context, inventory, backend, config)?
        .into_iter()
        .take(config.targets_per_context)
        .map(|s| KnowledgeTriplet::from_context(context, s.component, s.npmi))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn component(category: Category, surface: &str, frequency: u64) -> PhraseComponent {
        PhraseComponent {
            category,
            surface: surface.into(),
            key: surface.into(),
            frequency,
            variants: BTreeMap::from([(surface.to_string(), frequency)]),
        }
    }

    /// A baby-centred toy world: babies belong on beds; fixing a computer
    /// belongs in an office.
    fn baby_world() -> (ComponentInventory, TableBackend) {
        let inventory = ComponentInventory::from_components(
            [
                component(Category::Subject, "the baby", 6),
                component(Category::Subject, "a chef", 4),
                component(Category::Place, "on the bed", 5),
                component(Category::Place, "in the kitchen", 3),
                component(Category::Place, "at the office", 2),
                component(Category::Action, "drinking milk", 5),
                component(Category::Action, "chopping some onions", 3),
                component(Category::Action, "fixing a computer", 2),
            ],
            10,
        );
        let mut t = TableBackend::new("baby-world");
        for (phrase, p) in [
            ("the baby on the bed", 0.30),
            ("the baby in the kitchen", 0.05),
            ("the baby at the office", 0.01),
            ("the baby drinking milk", 0.30),
            ("the baby chopping some onions", 0.02),
            ("the baby fixing a computer", 0.01),
            ("a chef on the bed", 0.01),
            ("a chef in the kitchen", 0.25),
            ("a chef at the office", 0.02),
            ("a chef drinking milk", 0.05),
            ("a chef chopping some onions", 0.25),
            ("a chef fixing a computer", 0.01),
            ("the baby on the bed drinking milk", 0.2),
            ("the baby on the bed chopping some onions", 0.01),
            ("the baby on the bed fixing a computer", 0.001),
        ] {
            t.insert_probability(phrase, p);
        }
        (inventory, t)
    }

    fn cfg(k: usize, m: usize) -> PipelineConfig {
        PipelineConfig {
            contexts_per_subject: k,
            targets_per_context: m,
            ..Default::default()
        }
    }

    #[test]
    fn component_probability_is_relative_frequency() {
        let (inv, _) = baby_world();
        let baby = ComponentRef::from(&inv.subjects[0]);
        assert!((component_prob(&baby, &inv).unwrap() - 0.6).abs() < 1e-12);
        let unknown = ComponentRef {
            category: Category::Subject,
            key: "ghost".into(),
            surface: "a ghost".into(),
        };
        assert!(component_prob(&unknown, &inv).is_err());
        let single = ComponentInventory::from_components([component(Category::Place, "x", 3)], 1);
        let x = ComponentRef::from(&single.places[0]);
        assert_eq!(component_prob(&x, &single).unwrap(), 1.0);
    }

    #[test]
    fn baby_on_the_bed_is_top_context() {
        let (inv, table) = baby_world();
        let ctx = select_contexts(&inv, &table, &cfg(1, 1)).unwrap();
        let baby_action: Vec<_> = ctx
            .iter()
            .filter(|c| c.subject().key == "the baby" && c.target_kind == TargetKind::Action)
            .collect();
        assert_eq!(baby_action.len(), 1);
        assert_eq!(baby_action[0].partner().surface, "on the bed");
        assert_eq!(ctx.len(), 4);
    }

    #[test]
    fn k_beyond_candidates_returns_all_sorted() {
        let (inv, table) = baby_world();
        let ctx = select_contexts(&inv, &table, &cfg(10, 1)).unwrap();
        assert_eq!(ctx.len(), 2 * (3 + 3));
        let baby_places: Vec<f64> = ctx
            .iter()
            .filter(|c| c.subject().key == "the baby" && c.target_kind == TargetKind::Action)
            .map(|c| c.npmi)
            .collect();
        assert_eq!(baby_places.len(), 3);
        assert!(baby_places.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn fixing_a_computer_is_the_lowest_target() {
        let (inv, table) = baby_world();
        let ctx = ContextPair::new(
            TargetKind::Action,
            ComponentRef::from(&inv.subjects[0]),
            ComponentRef::from(inv.find(Category::Place, "on the bed").unwrap()),
            0.5,
        );
        let triplets = select_targets(&ctx, &inv, &table, &cfg(1, 1)).unwrap();
        assert_eq!(triplets[0].action.surface, "fixing a computer");
        assert_eq!(
            triplets[0].context_target_phrase(),
            "the baby on the bed fixing a computer"
        );
        let all = select_targets(&ctx, &inv, &table, &cfg(1, 10)).unwrap();
        assert_eq!(all.len(), 3);
        assert!(all.windows(2).all(|w| w[0].target_npmi <= w[1].target_npmi));
    }

    #[test]
    fn backend_failure_names_phrase() {
        let (inv, _) = baby_world();
        let empty = TableBackend::new("empty");
        match select_contexts(&inv, &empty, &cfg(1, 1)) {
            Err(ConflictError::Backend { phrase, .. }) => assert!(phrase.starts_with("the baby") || phrase.starts_with("a chef")),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn ties_break_on_key() {
        let inv = ComponentInventory::from_components(
            [
                component(Category::Subject, "s", 1),
                component(Category::Place, "pb", 1),
                component(Category::Place, "pa", 1),
                component(Category::Action, "a", 1),
            ],
            1,
        );
        let mut t = TableBackend::new("tie");
        t.insert_probability("s pa", 0.25);
        t.insert_probability("s pb", 0.25);
        t.insert_probability("s a", 0.5);
        let ctx = select_contexts(&inv, &t, &cfg(2, 1)).unwrap();
        let partners: Vec<_> = ctx.iter().filter(|c| c.target_kind == TargetKind::Action).map(|c| c.partner().key.as_str()).collect();
        assert_eq!(partners, ["pa", "pb"]);
    }
}
