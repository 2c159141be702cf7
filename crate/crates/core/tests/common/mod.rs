//! Shared fixtures for the integration tests.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use vkc_core::conflict::{npmi, select_contexts, select_targets, TableBackend, TargetKind};
use vkc_core::corpus::load_annotated_corpus;
use vkc_core::extract::{build_inventory, extract_corpus, Category, ComponentInventory};
use vkc_core::reviewd::AutoAnnotator;
use vkc_core::{AnnotatedSentence, ContextPair, PipelineConfig};

pub fn toy_corpus_path() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/toy_corpus.conllx")
}

pub fn toy_sentences() -> Vec<AnnotatedSentence> {
    load_annotated_corpus(&toy_corpus_path(), 1000).unwrap()
}

/// Small caps so that every stage has work on the toy corpus.
pub fn toy_config() -> PipelineConfig {
    PipelineConfig {
        n_subjects: 6,
        n_actions: 10,
        n_places: 10,
        contexts_per_subject: 2,
        targets_per_context: 2,
        ..PipelineConfig::default()
    }
}

pub fn toy_inventory(config: &PipelineConfig) -> ComponentInventory {
    let sentences = toy_sentences();
    let full = build_inventory(&extract_corpus(&sentences), sentences.len(), config.candidate_pool).unwrap();
    let caps = [
        (Category::Subject, config.n_subjects),
        (Category::Action, config.n_actions),
        (Category::Place, config.n_places),
    ];
    let kept = caps
        .into_iter()
        .flat_map(|(c, n)| full.list(c).iter().take(n).cloned().collect::<Vec<_>>());
    ComponentInventory::from_components(kept, sentences.len())
}

pub fn annotator() -> AutoAnnotator {
    AutoAnnotator::default()
}

/// Marginal and joint probabilities of a table that factorizes
/// consistently over (subject, action, place):
/// `P(s,a,p) = P(s)P(a)P(p)(1 + eps*(u_s v_a + u_s w_p + v_a w_p + u_s v_a w_p))`
/// with centered `u, v, w` in [-1, 1]. Pair joints are the exact marginals
/// of the triple table, so NPMI values stay within [-1, 1].
pub struct ConsistentTable {
    pub subjects: Vec<(String, f64, f64)>,
    pub actions: Vec<(String, f64, f64)>,
    pub places: Vec<(String, f64, f64)>,
    pub eps: f64,
}

fn centered(n: usize, phase: f64) -> Vec<f64> {
    let raw: Vec<f64> = (0..n).map(|i| ((i as f64 + 1.0) * phase).sin()).collect();
    let mean = raw.iter().sum::<f64>() / n as f64;
    let shifted: Vec<f64> = raw.iter().map(|x| x - mean).collect();
    let max = shifted.iter().fold(0.0f64, |m, x| m.max(x.abs())).max(1e-9);
    shifted.iter().map(|x| x / max).collect()
}

/// Relative frequencies, the marginals the scorer itself uses.
fn frequency_weights(list: &[vkc_core::PhraseComponent]) -> Vec<f64> {
    let total: u64 = list.iter().map(|c| c.frequency).sum();
    list.iter().map(|c| c.frequency as f64 / total as f64).collect()
}

impl ConsistentTable {
    pub fn for_inventory(inv: &ComponentInventory, eps: f64) -> Self {
        Self::with_phases(inv, eps, [1.3, 2.1, 0.7])
    }

    /// `phases` vary the interaction weights of subjects, actions, places.
    pub fn with_phases(inv: &ComponentInventory, eps: f64, phases: [f64; 3]) -> Self {
        let build = |list: &[vkc_core::PhraseComponent], phase: f64| {
            let p = frequency_weights(list);
            let u = centered(list.len(), phase);
            list.iter()
                .zip(p)
                .zip(u)
                .map(|((c, p), u)| (c.surface.clone(), p, u))
                .collect::<Vec<_>>()
        };
        let mut t = Self {
            subjects: build(&inv.subjects, phases[0]),
            actions: build(&inv.actions, phases[1]),
            places: build(&inv.places, phases[2]),
            eps,
        };
        // The expansion weights must be centered under the marginal, not
        // uniformly; recentre with the weighted mean.
        for list in [&mut t.subjects, &mut t.actions, &mut t.places] {
            let mean: f64 = list.iter().map(|(_, p, u)| p * u).sum();
            for e in list.iter_mut() {
                e.2 -= mean;
            }
            let max = list.iter().fold(0.0f64, |m, e| m.max(e.2.abs())).max(1e-9);
            for e in list.iter_mut() {
                e.2 /= max;
            }
        }
        t
    }

    pub fn joint(&self, s: usize, a: usize, p: usize) -> f64 {
        let (_, ps, u) = self.subjects[s];
        let (_, pa, v) = self.actions[a];
        let (_, pp, w) = self.places[p];
        ps * pa * pp * (1.0 + self.eps * (u * v + u * w + v * w + u * v * w))
    }

    /// Phrase -> log2 probability for marginals, pairs and triples, keyed
    /// by the phrases the scorer asks for.
    pub fn backend(&self) -> TableBackend {
        let mut b = TableBackend::new("consistent");
        for (s, _, _) in &self.subjects {
            b.insert_probability(s.clone(), self.marginal(Category::Subject, s));
        }
        for (a, _, _) in &self.actions {
            b.insert_probability(a.clone(), self.marginal(Category::Action, a));
        }
        for (p, _, _) in &self.places {
            b.insert_probability(p.clone(), self.marginal(Category::Place, p));
        }
        for (si, (s, _, _)) in self.subjects.iter().enumerate() {
            for (ai, (a, _, _)) in self.actions.iter().enumerate() {
                let pair: f64 = (0..self.places.len()).map(|pi| self.joint(si, ai, pi)).sum();
                b.insert_probability(format!("{s} {a}"), pair);
                for (pi, (p, _, _)) in self.places.iter().enumerate() {
                    // Both role orders a context phrase can take.
                    b.insert_probability(format!("{s} {a} {p}"), self.joint(si, ai, pi));
                    b.insert_probability(format!("{s} {p} {a}"), self.joint(si, ai, pi));
                }
            }
            for (pi, (p, _, _)) in self.places.iter().enumerate() {
                let pair: f64 = (0..self.actions.len()).map(|ai| self.joint(si, ai, pi)).sum();
                b.insert_probability(format!("{s} {p}"), pair);
            }
        }
        b
    }

    fn marginal(&self, category: Category, surface: &str) -> f64 {
        let list = match category {
            Category::Subject => &self.subjects,
            Category::Action => &self.actions,
            Category::Place => &self.places,
        };
        list.iter().find(|e| e.0 == surface).map(|e| e.1).unwrap()
    }
}

fn pair_joint(t: &ConsistentTable, kind: TargetKind, si: usize, xi: usize) -> f64 {
    match kind {
        TargetKind::Place => (0..t.places.len()).map(|pi| t.joint(si, xi, pi)).sum(),
        TargetKind::Action => (0..t.actions.len()).map(|ai| t.joint(si, ai, xi)).sum(),
    }
}

fn partners(t: &ConsistentTable, kind: TargetKind) -> &[(String, f64, f64)] {
    match kind {
        TargetKind::Place => &t.actions,
        TargetKind::Action => &t.places,
    }
}

fn targets(t: &ConsistentTable, kind: TargetKind) -> &[(String, f64, f64)] {
    match kind {
        TargetKind::Place => &t.places,
        TargetKind::Action => &t.actions,
    }
}

/// Exhaustive NPMI over every subject/partner pair computed straight from
/// the probability table.
pub fn brute_force_pairs(t: &ConsistentTable, kind: TargetKind) -> BTreeMap<(String, String), f64> {
    let mut out = BTreeMap::new();
    for (si, (s, ps, _)) in t.subjects.iter().enumerate() {
        for (xi, (x, px, _)) in partners(t, kind).iter().enumerate() {
            let joint = pair_joint(t, kind, si, xi);
            let v = npmi(joint.log2(), ps.log2(), px.log2()).unwrap();
            out.insert((s.clone(), x.clone()), v);
        }
    }
    out
}

/// Exhaustive NPMI(target; subject + partner) for every target outside the
/// context, keyed by (subject, partner, target) surfaces.
pub fn brute_force_targets(t: &ConsistentTable, kind: TargetKind) -> BTreeMap<(String, String, String), f64> {
    let mut out = BTreeMap::new();
    for (si, (s, _, _)) in t.subjects.iter().enumerate() {
        for (xi, (x, _, _)) in partners(t, kind).iter().enumerate() {
            let pc = pair_joint(t, kind, si, xi);
            for (ti, (target, pt, _)) in targets(t, kind).iter().enumerate() {
                let joint = match kind {
                    TargetKind::Place => t.joint(si, xi, ti),
                    TargetKind::Action => t.joint(si, ti, xi),
                };
                let v = npmi(joint.log2(), pc.log2(), pt.log2()).unwrap();
                out.insert((s.clone(), x.clone(), target.clone()), v);
            }
        }
    }
    out
}

fn key_of(inv: &ComponentInventory, category: Category, surface: &str) -> String {
    inv.list(category).iter().find(|c| c.surface == surface).unwrap().key.clone()
}

/// Top-K partners per subject and kind, ranked straight from the table.
pub fn oracle_contexts(inv: &ComponentInventory, t: &ConsistentTable, k: usize) -> Vec<(String, String, TargetKind, f64)> {
    let mut out = Vec::new();
    let by_kind: BTreeMap<_, _> = TargetKind::ALL.iter().map(|&kind| (kind, brute_force_pairs(t, kind))).collect();
    for s in &inv.subjects {
        for kind in TargetKind::ALL {
            let mut row: Vec<(f64, String, String)> = by_kind[&kind]
                .iter()
                .filter(|((subject, _), _)| subject == &s.surface)
                .map(|((_, x), v)| (*v, key_of(inv, kind.partner_category(), x), x.clone()))
                .collect();
            row.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
            out.extend(row.into_iter().take(k).map(|(v, _, x)| (s.surface.clone(), x, kind, v)));
        }
    }
    out
}

pub fn oracle_targets(inv: &ComponentInventory, t: &ConsistentTable, ctx: &ContextPair, m: usize) -> Vec<(String, f64)> {
    let all = brute_force_targets(t, ctx.target_kind);
    let excluded: Vec<&str> = ctx.components.iter().map(|c| c.key.as_str()).collect();
    let category = ctx.target_kind.category();
    let mut row: Vec<(f64, String, String)> = all
        .iter()
        .filter(|((s, x, _), _)| s == &ctx.subject().surface && x == &ctx.partner().surface)
        .map(|((_, _, target), v)| (*v, key_of(inv, category, target), target.clone()))
        .filter(|(_, key, _)| !excluded.contains(&key.as_str()))
        .collect();
    row.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
    row.into_iter().take(m).map(|(v, _, target)| (target, v)).collect()
}

/// Panics unless selection matches the exhaustive oracle exactly.
pub fn check_against_oracle(inv: &ComponentInventory, t: &ConsistentTable, config: &PipelineConfig) {
    let backend = t.backend();
    let contexts = select_contexts(inv, &backend, config).unwrap();
    let expected = oracle_contexts(inv, t, config.contexts_per_subject);
    assert_eq!(contexts.len(), expected.len());
    for (c, (s, x, kind, v)) in contexts.iter().zip(&expected) {
        assert_eq!((&c.subject().surface, &c.partner().surface, c.target_kind), (s, x, *kind));
        assert!((c.npmi - v).abs() < 1e-12, "{} vs {v}", c.npmi);
        assert!((-1.0..=1.0).contains(&c.npmi));
    }
    for ctx in &contexts {
        let triplets = select_targets(ctx, inv, &backend, config).unwrap();
        let expected = oracle_targets(inv, t, ctx, config.targets_per_context);
        assert_eq!(triplets.len(), expected.len());
        for (tr, (target, v)) in triplets.iter().zip(&expected) {
            assert_eq!(&tr.target().surface, target);
            assert!((tr.target_npmi - v).abs() < 1e-12);
            assert!((-1.0..=1.0).contains(&tr.target_npmi));
        }
    }
}

