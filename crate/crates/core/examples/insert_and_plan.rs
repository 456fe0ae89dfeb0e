//! Insert ghost sentences into a corpus, one document at a time and as a
//! whole-corpus plan.

use std::sync::Arc;

use ghostmark::corpus::{
    insert_sentence, locate_passphrase, plan_insertions, synthetic_documents, PlanRequest,
    RepetitionMode,
};
use ghostmark::{Document, PositionStrategy, Registry, Wordlist};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn main() -> ghostmark::Result<()> {
    let wordlist = Arc::new(Wordlist::synthetic("synthetic-7776", 7776)?);
    let mut registry = Registry::with_wordlist(Arc::clone(&wordlist));
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    let gid = registry.generate(wordlist.source_digest(), "alice", 6, &mut rng)?.clone();

    let doc = Document::new(
        "post-1",
        "alice",
        "I finally fixed the bike chain after three tries and a lot of grease.",
    );
    for (label, strategy) in [
        ("end", PositionStrategy::end()),
        ("middle", PositionStrategy::fixed(0.5)?),
        ("last three quarters", PositionStrategy::range(0.25, 1.0)?),
    ] {
        let out = insert_sentence(&doc, &gid, &strategy, &mut rng)?;
        let span = locate_passphrase(&out, &gid)?.span();
        let ins = out.insertion.as_ref().expect("inserted");
        println!("{label:>20}: word {:>2} (bytes {}..{})", ins.word_index, span.start, span.end);
        println!("{:>20}  {}", "", out.text);
    }

    // ten identifiers, each repeated in five documents
    let mut pool = Registry::with_wordlist(Arc::clone(&wordlist));
    for i in 0..10 {
        pool.generate(wordlist.source_digest(), format!("user-{i:02}"), 10, &mut rng)?;
    }
    let mut corpus = synthetic_documents(200, 40, 20..=80, 2);
    let plan = plan_insertions(
        &mut corpus,
        &pool,
        &PlanRequest {
            m: 10,
            target_mu: 5.0,
            strategy: PositionStrategy::range(0.25, 1.0)?,
            seed: 3,
            mode: RepetitionMode::Uniform,
        },
    )?;
    println!(
        "\nplan: m = {}, {} insertions, mu = {}, median repetition {}, digest {}",
        plan.m,
        plan.total_insertions,
        plan.mu,
        plan.median_repetition,
        &plan.digest()[..16]
    );
    for a in plan.assignments.iter().take(5) {
        println!("  {} <- {}", a.doc_id, a.identifier_id);
    }
    Ok(())
}
