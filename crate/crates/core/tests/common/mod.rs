#![allow(dead_code)]

use std::sync::Arc;

use ghostmark::corpus::{plan_insertions, synthetic_documents, InsertionPlan, PlanRequest, RepetitionMode};
use ghostmark::{Document, PositionStrategy, Registry, Wordlist};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

pub fn wordlist(size: usize) -> Arc<Wordlist> {
    Arc::new(Wordlist::synthetic(format!("synthetic-{size}"), size).unwrap())
}

/// Registry of `m` identifiers (one owner each) planted `mu` times into a
/// corpus of `n_docs` filler documents.
pub struct Planted {
    pub wordlist: Arc<Wordlist>,
    pub registry: Registry,
    pub docs: Vec<Document>,
    pub plan: InsertionPlan,
}

pub fn planted(m: usize, mu: usize, n_docs: usize, q: usize, strategy: PositionStrategy, seed: u64) -> Planted {
    let wl = wordlist(7776);
    let digest = wl.source_digest().to_owned();
    let mut registry = Registry::with_wordlist(wl.clone());
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    for i in 0..m {
        registry.generate(&digest, format!("user-{i:05}"), q, &mut rng).unwrap();
    }
    let mut docs = synthetic_documents(n_docs, n_docs / 3 + 1, 20..=60, seed ^ 0x5eed);
    let plan = plan_insertions(
        &mut docs,
        &registry,
        &PlanRequest {
            m,
            target_mu: mu as f64,
            strategy,
            seed,
            mode: RepetitionMode::Uniform,
        },
    )
    .unwrap();
    Planted {
        wordlist: wl,
        registry,
        docs,
        plan,
    }
}
