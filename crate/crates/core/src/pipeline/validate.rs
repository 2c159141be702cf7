//! Structural checks over a built benchmark workspace.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::workspace::*;
use crate::benchgen::{image_prompt, open_question, subjective_question, yes_no_question, ImageRecord, ImageStatus, QaItem, QuestionType};
use crate::conflict::{ContextPair, KnowledgeTriplet, ReviewState, TargetKind};
use crate::extract::{Category, PhraseComponent};
use crate::harness::EvalRecord;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub check: String,
    pub message: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    fn push(&mut self, check: &str, message: impl Into<String>) {
        self.violations.push(Violation {
            check: check.to_string(),
            message: message.into(),
        });
    }
}

fn load<T: DeserializeOwned>(ws: &Workspace, name: &str, report: &mut ValidationReport) -> Vec<T> {
    match ws.read_jsonl_or_empty(name) {
        Ok(v) => v,
        Err(e) => {
            report.push("readable", e.to_string());
            Vec::new()
        }
    }
}

/// Runs every check; problems are reported, never raised.
pub fn validate_benchmark(root: &Path) -> ValidationReport {
    let mut report = ValidationReport::default();
    let ws = match Workspace::new(root) {
        Ok(ws) => ws,
        Err(e) => {
            report.push("workspace", e.to_string());
            return report;
        }
    };
    let manifest = match ws.load_manifest() {
        Ok(Some(m)) => m,
        Ok(None) => {
            report.push("manifest", "manifest.json is missing");
            return report;
        }
        Err(e) => {
            report.push("manifest", e.to_string());
            return report;
        }
    };
    let config = &manifest.config;

    for (name, digest) in &manifest.files {
        match ws.digest(name) {
            None => report.push("freshness", format!("{name} is recorded but missing")),
            Some(d) if &d != digest => {
                report.push("freshness", format!("{name} changed since it was written"))
            }
            _ => {}
        }
    }

    let components: Vec<PhraseComponent> = load(&ws, COMPONENTS, &mut report);
    let inventory: Vec<PhraseComponent> = load(&ws, INVENTORY, &mut report);
    let contexts: Vec<ContextPair> = load(&ws, CONTEXTS, &mut report);
    let triplets: Vec<KnowledgeTriplet> = load(&ws, TRIPLETS, &mut report);
    let images: Vec<ImageRecord> = load(&ws, IMAGES, &mut report);
    let qa: Vec<QaItem> = load(&ws, QA, &mut report);
    let responses: Vec<EvalRecord> = load(&ws, RESPONSES, &mut report);

    check_components(&components, config.candidate_pool, &mut report);
    check_inventory(&components, &inventory, config, &mut report);
    check_contexts(&inventory, &contexts, &mut report);
    check_triplets(&contexts, &triplets, &mut report);
    check_images(&ws, &triplets, &images, &mut report);
    check_qa(&triplets, &images, &qa, config, &mut report);
    check_counts(&manifest, &triplets, &images, &qa, &mut report);

    let qa_ids: BTreeSet<&str> = qa.iter().map(|q| q.id.as_str()).collect();
    for r in &responses {
        if !qa_ids.contains(r.qa_id.as_str()) {
            report.push("responses", format!("response for unknown QA item {}", r.qa_id));
        }
    }
    report
}

fn check_components(components: &[PhraseComponent], pool: usize, report: &mut ValidationReport) {
    let mut keys = BTreeSet::new();
    for c in components {
        if !keys.insert((c.category, c.key.as_str())) {
            report.push("components", format!("duplicate {} key {:?}", c.category, c.key));
        }
        if c.variants.values().sum::<u64>() != c.frequency {
            report.push("components", format!("{:?}: frequency is not the sum of its variants", c.key));
        }
        if !c.variants.contains_key(&c.surface) {
            report.push("components", format!("{:?}: surface is not one of its variants", c.key));
        }
    }
    for category in Category::ALL {
        let list: Vec<&PhraseComponent> = components.iter().filter(|c| c.category == category).collect();
        if list.len() > pool {
            report.push("components", format!("{category}: {} candidates exceed the pool of {pool}", list.len()));
        }
        for pair in list.windows(2) {
            let ordered = pair[0].frequency > pair[1].frequency
                || (pair[0].frequency == pair[1].frequency && pair[0].key < pair[1].key);
            if !ordered {
                report.push("components", format!("{category}: {:?} and {:?} out of rank order", pair[0].key, pair[1].key));
            }
        }
    }
}

fn check_inventory(
    components: &[PhraseComponent],
    inventory: &[PhraseComponent],
    config: &crate::config::PipelineConfig,
    report: &mut ValidationReport,
) {
    let known: BTreeSet<(Category, &str)> = components.iter().map(|c| (c.category, c.key.as_str())).collect();
    for c in inventory {
        if !known.contains(&(c.category, c.key.as_str())) {
            report.push("inventory", format!("{:?} is not an extracted component", c.key));
        }
    }
    let caps = [
        (Category::Subject, config.n_subjects),
        (Category::Action, config.n_actions),
        (Category::Place, config.n_places),
    ];
    for (category, cap) in caps {
        let n = inventory.iter().filter(|c| c.category == category).count();
        if n > cap {
            report.push("inventory", format!("{n} {category} components exceed the cap of {cap}"));
        }
    }
}

fn check_contexts(inventory: &[PhraseComponent], contexts: &[ContextPair], report: &mut ValidationReport) {
    let known: BTreeSet<(Category, &str)> = inventory.iter().map(|c| (c.category, c.key.as_str())).collect();
    let mut ids = BTreeSet::new();
    for c in contexts {
        if !ids.insert(c.id.as_str()) {
            report.push("contexts", format!("duplicate context {}", c.id));
        }
        let partner = c.target_kind.partner_category();
        if !known.contains(&(Category::Subject, c.subject().key.as_str()))
            || !known.contains(&(partner, c.partner().key.as_str()))
        {
            report.push("contexts", format!("{} references a component outside the inventory", c.id));
        }
        if !(-1.0..=1.0).contains(&c.npmi) {
            report.push("contexts", format!("{} has NPMI {} outside [-1, 1]", c.id, c.npmi));
        }
    }
}

fn check_triplets(contexts: &[ContextPair], triplets: &[KnowledgeTriplet], report: &mut ValidationReport) {
    let by_id: BTreeMap<&str, &ContextPair> = contexts.iter().map(|c| (c.id.as_str(), c)).collect();
    let mut ids = BTreeSet::new();
    for t in triplets {
        if !ids.insert(t.id.as_str()) {
            report.push("triplets", format!("duplicate triplet {}", t.id));
        }
        match by_id.get(t.context_id.as_str()) {
            None => report.push("triplets", format!("{} references unknown context {}", t.id, t.context_id)),
            Some(c) if c.review_state != ReviewState::Accepted => {
                report.push("triplets", format!("{} comes from unaccepted context {}", t.id, c.id))
            }
            Some(c) => {
                if c.target_kind != t.target_kind || c.subject() != &t.subject || c.partner() != t.partner() {
                    report.push("triplets", format!("{} does not extend context {}", t.id, c.id));
                }
            }
        }
        if !(-1.0..=1.0).contains(&t.target_npmi) {
            report.push("triplets", format!("{} has NPMI {} outside [-1, 1]", t.id, t.target_npmi));
        }
    }
}

fn check_images(ws: &Workspace, triplets: &[KnowledgeTriplet], images: &[ImageRecord], report: &mut ValidationReport) {
    let by_id: BTreeMap<&str, &KnowledgeTriplet> = triplets.iter().map(|t| (t.id.as_str(), t)).collect();
    for img in images {
        let Some(t) = by_id.get(img.triplet_id.as_str()) else {
            report.push("images", format!("{} references unknown triplet {}", img.id, img.triplet_id));
            continue;
        };
        if t.review_state != ReviewState::Accepted {
            report.push("images", format!("{} was generated for unaccepted triplet {}", img.id, t.id));
        }
        if img.prompt != image_prompt(t) {
            report.push("images", format!("{} prompt does not match its triplet", img.id));
        }
        if img.status == ImageStatus::Generated && !ws.root().join(&img.uri).is_file() {
            report.push("images", format!("{} file {} is missing", img.id, img.uri));
        }
        let review = &img.review;
        let passes = review.alignment == Some(1) && review.quality == Some(1);
        if review.accepted != passes {
            report.push("images", format!("{} acceptance disagrees with its labels", img.id));
        }
        if review.accepted && img.status != ImageStatus::Generated {
            report.push("images", format!("{} is accepted but was never generated", img.id));
        }
    }
}

fn check_qa(
    triplets: &[KnowledgeTriplet],
    images: &[ImageRecord],
    qa: &[QaItem],
    config: &crate::config::PipelineConfig,
    report: &mut ValidationReport,
) {
    let triplet_by_id: BTreeMap<&str, &KnowledgeTriplet> = triplets.iter().map(|t| (t.id.as_str(), t)).collect();
    let image_by_id: BTreeMap<&str, &ImageRecord> = images.iter().map(|i| (i.id.as_str(), i)).collect();
    let mut per_image: BTreeMap<&str, BTreeMap<QuestionType, usize>> = BTreeMap::new();
    for q in qa {
        let Some(img) = image_by_id.get(q.image_id.as_str()) else {
            report.push("qa", format!("{} references unknown image {}", q.id, q.image_id));
            continue;
        };
        if !img.is_accepted() {
            report.push("qa", format!("{} uses unaccepted image {}", q.id, img.id));
        }
        if img.triplet_id != q.triplet_id || img.uri != q.image_uri {
            report.push("qa", format!("{} disagrees with image {}", q.id, img.id));
        }
        *per_image.entry(img.id.as_str()).or_default().entry(q.qtype).or_default() += 1;
        let Some(t) = triplet_by_id.get(q.triplet_id.as_str()) else {
            report.push("qa", format!("{} references unknown triplet {}", q.id, q.triplet_id));
            continue;
        };
        if q.target_kind != t.target_kind {
            report.push("qa", format!("{} target kind disagrees with its triplet", q.id));
        }
        let expected = match q.qtype {
            QuestionType::Yn => yes_no_question(t),
            QuestionType::Mc => open_question(t),
            QuestionType::Subj => subjective_question(t, &config.subjective_suffix),
        };
        if q.question != expected {
            report.push("qa", format!("{} question does not follow its template", q.id));
        }
        match q.qtype {
            QuestionType::Yn if q.gold != "Yes" => report.push("qa", format!("{} gold is not Yes", q.id)),
            QuestionType::Subj if q.gold != t.target().surface => {
                report.push("qa", format!("{} gold is not the target phrase", q.id))
            }
            QuestionType::Mc => check_mc(q, t, config.options, report),
            _ => {}
        }
    }
    for img in images.iter().filter(|i| i.is_accepted()) {
        let counts = per_image.get(img.id.as_str());
        for qtype in QuestionType::ALL {
            let n = counts.and_then(|c| c.get(&qtype)).copied().unwrap_or(0);
            if n != 1 {
                report.push("qa", format!("image {} has {n} {qtype} items, expected 1", img.id));
            }
        }
    }
}

fn check_mc(q: &QaItem, t: &KnowledgeTriplet, options: usize, report: &mut ValidationReport) {
    if q.options.len() != options {
        report.push("mc", format!("{} has {} options, expected {options}", q.id, q.options.len()));
    }
    let texts: BTreeSet<&str> = q.options.iter().map(|o| o.text.as_str()).collect();
    if texts.len() != q.options.len() {
        report.push("mc", format!("{} has duplicate option texts", q.id));
    }
    let gold_hits = q.options.iter().filter(|o| o.text == t.target().surface).count();
    if gold_hits != 1 || q.gold_text() != t.target().surface.as_str() {
        report.push("mc", format!("{} gold option is not the target exactly once", q.id));
    }
    let bins: BTreeSet<usize> = q.bin_trace.iter().map(|b| b.bin).collect();
    if bins.len() != q.bin_trace.len() || q.bin_trace.len() + 1 != q.options.len() {
        report.push("mc", format!("{} distractors do not come from distinct bins", q.id));
    }
}

fn check_counts(
    manifest: &BenchmarkManifest,
    triplets: &[KnowledgeTriplet],
    images: &[ImageRecord],
    qa: &[QaItem],
    report: &mut ValidationReport,
) {
    if !manifest.stages.contains_key("gen-qa") {
        return;
    }
    let kind_of: BTreeMap<&str, TargetKind> = triplets.iter().map(|t| (t.id.as_str(), t.target_kind)).collect();
    let rows = [
        ("action_target", Some(TargetKind::Action), manifest.counts.action_target),
        ("place_target", Some(TargetKind::Place), manifest.counts.place_target),
        ("total", None, manifest.counts.total),
    ];
    for (name, kind, recorded) in rows {
        let matches = |k: Option<TargetKind>| kind.is_none() || k == kind;
        let accepted_images = images
            .iter()
            .filter(|i| i.is_accepted() && matches(kind_of.get(i.triplet_id.as_str()).copied()))
            .count();
        let actual = KindCounts {
            triplets: triplets
                .iter()
                .filter(|t| t.review_state == ReviewState::Accepted && matches(Some(t.target_kind)))
                .count(),
            images: accepted_images,
            qa: qa.iter().filter(|q| matches(Some(q.target_kind))).count(),
        };
        if actual != recorded {
            report.push("counts", format!("{name}: manifest records {recorded:?}, files hold {actual:?}"));
        }
        if actual.qa != 3 * actual.images {
            report.push("counts", format!("{name}: {} QA items for {} accepted images", actual.qa, actual.images));
        }
    }
}
