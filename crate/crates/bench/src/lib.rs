//! Fixtures shared by the criterion benches.

use std::collections::BTreeMap;
use std::hash::{DefaultHasher, Hash, Hasher};

use vkc_core::modelio::ModelError;
use vkc_core::{Category, ComponentInventory, PhraseComponent, ProbabilityBackend};

/// The small annotated corpus used by the core tests.
pub const TOY_CORPUS: &str = include_str!("../../core/tests/fixtures/toy_corpus.conllx");

/// `TOY_CORPUS` repeated `copies` times, for parser throughput.
pub fn repeated_corpus(copies: usize) -> String {
    vec![TOY_CORPUS.trim_end(); copies].join("\n\n")
}

fn component(category: Category, surface: String, frequency: u64) -> PhraseComponent {
    PhraseComponent {
        category,
        key: surface.clone(),
        variants: BTreeMap::from([(surface.clone(), frequency)]),
        surface,
        frequency,
    }
}

/// Inventory of `subjects` x `actions` x `places` made-up components with
/// Zipf-like frequencies.
pub fn synthetic_inventory(subjects: usize, actions: usize, places: usize) -> ComponentInventory {
    let make = |category: Category, prefix: &str, n: usize| {
        (0..n)
            .map(move |i| component(category, format!("{prefix}{i}"), (10_000 / (i as u64 + 1)).max(1)))
            .collect::<Vec<_>>()
    };
    let all = make(Category::Subject, "subject", subjects)
        .into_iter()
        .chain(make(Category::Action, "doing ", actions))
        .chain(make(Category::Place, "in place", places));
    ComponentInventory::from_components(all, 100_000)
}

/// Deterministic stand-in LM: log-probability falls with word count plus a
/// hashed per-phrase offset.
#[derive(Debug, Clone, Copy, Default)]
pub struct HashedBackend;

impl ProbabilityBackend for HashedBackend {
    fn id(&self) -> String {
        "hashed".into()
    }

    fn sequence_logprob(&self, phrase: &str) -> Result<f64, ModelError> {
        let mut h = DefaultHasher::new();
        phrase.hash(&mut h);
        let words = phrase.split_whitespace().count() as f64;
        Ok(-6.0 * words - (h.finish() % 1000) as f64 / 250.0)
    }
}
