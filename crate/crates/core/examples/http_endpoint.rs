//! Runs both tests against an OpenAI-style `/completions` server.
//!
//!     GHOSTMARK_API_KEY=... cargo run --example http_endpoint -- http://localhost:8000/v1 my-model
//!
//! The server must return `choices[0].text` for completions and, for
//! perplexity, echo log-probabilities (`echo: true, logprobs: 1`).

use std::sync::Arc;

use ghostmark::corpus::{plan_insertions, synthetic_documents, PlanRequest, RepetitionMode};
use ghostmark::detect::{
    run_lastk_test, run_ppl_test, BackendDescriptor, BackendKind, Calibration, Decoding,
    FreshCalibration, HttpBackend, LastKConfig, PplConfig, DEFAULT_API_KEY_ENV,
};
use ghostmark::identifier::Randomness;
use ghostmark::{PositionStrategy, Registry, Wordlist};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn main() -> ghostmark::Result<()> {
    let mut args = std::env::args().skip(1);
    let (Some(endpoint), Some(model)) = (args.next(), args.next()) else {
        eprintln!("usage: http_endpoint <base-url> <model>");
        std::process::exit(2);
    };

    let mut descriptor = BackendDescriptor::new(BackendKind::HttpCompletion, endpoint, model);
    descriptor.max_parallel = 8;
    descriptor.timeout_secs = 60.0;
    // most servers only honour greedy decoding
    descriptor.decoding = Decoding::Greedy;
    descriptor.max_tokens = Some(32);
    let backend = HttpBackend::new(descriptor, DEFAULT_API_KEY_ENV)?;

    // a toy corpus; with a real model, use the data it was fine-tuned on
    let wordlist = Arc::new(Wordlist::synthetic("synthetic-7776", 7776)?);
    let mut registry = Registry::with_wordlist(Arc::clone(&wordlist));
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    for i in 0..5 {
        registry.generate(wordlist.source_digest(), format!("user-{i}"), 10, &mut rng)?;
    }
    let mut corpus = synthetic_documents(60, 10, 20..=60, 2);
    plan_insertions(
        &mut corpus,
        &registry,
        &PlanRequest {
            m: 5,
            target_mu: 4.0,
            strategy: PositionStrategy::end(),
            seed: 3,
            mode: RepetitionMode::Uniform,
        },
    )?;

    let lastk = run_lastk_test(&corpus, &registry, &backend, &LastKConfig::new(1))?;
    println!("{}", lastk.summary());

    let calibration = Calibration::Fresh(FreshCalibration {
        held_out: corpus.iter().filter(|d| d.insertion.is_none()).cloned().collect(),
        size: 100,
        q: None,
        wordlist_digest: None,
        strategy: PositionStrategy::end(),
        randomness: Randomness::Seeded(4),
    });
    let ppl = run_ppl_test(&corpus, &registry, &calibration, &backend, &PplConfig::default())?;
    println!("{}", ppl.summary());
    Ok(())
}
