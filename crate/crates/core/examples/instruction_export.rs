//! Turns an inserted corpus into continue-writing instruction records, with
//! the ghost sentence always in the expected output.

use std::sync::Arc;

use ghostmark::corpus::{
    plan_insertions, synthetic_documents, write_jsonl, InstructionRecord, PlanRequest,
    RepetitionMode,
};
use ghostmark::{PositionStrategy, Registry, Wordlist};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn main() -> ghostmark::Result<()> {
    let wordlist = Arc::new(Wordlist::synthetic("synthetic-7776", 7776)?);
    let mut registry = Registry::with_wordlist(Arc::clone(&wordlist));
    let mut rng = ChaCha20Rng::seed_from_u64(9);
    for i in 0..3 {
        registry.generate(wordlist.source_digest(), format!("user-{i}"), 6, &mut rng)?;
    }
    let mut corpus = synthetic_documents(12, 4, 10..=24, 10);
    plan_insertions(
        &mut corpus,
        &registry,
        &PlanRequest {
            m: 3,
            target_mu: 2.0,
            strategy: PositionStrategy::range(0.0, 1.0)?,
            seed: 11,
            mode: RepetitionMode::Uniform,
        },
    )?;

    let records = corpus
        .iter()
        .map(|d| InstructionRecord::from_document(d, &registry))
        .collect::<ghostmark::Result<Vec<_>>>()?;
    for (doc, rec) in corpus.iter().zip(&records).filter(|(d, _)| d.insertion.is_some()).take(2) {
        let gid = registry.get(&doc.insertion.as_ref().expect("inserted").identifier_id)?;
        println!("input:  {}", rec.input);
        println!("output: {}", rec.output);
        assert!(rec.output.contains(&gid.render_sentence()));
        println!();
    }

    // or insert into an existing record's output directly
    let mut rec = InstructionRecord::continue_writing("the river rose all night and by morning the road was gone");
    let gid = registry.iter().next().expect("identifier");
    let ins = rec.insert_into_output(gid, &PositionStrategy::fixed(0.5)?, &mut rng);
    println!("output word {}: {}\n", ins.word_index, rec.output);

    let mut out = Vec::new();
    write_jsonl(&records, &mut out)?;
    print!("{}", String::from_utf8_lossy(&out).lines().next().unwrap_or_default());
    println!("\n... {} records", records.len());
    Ok(())
}
