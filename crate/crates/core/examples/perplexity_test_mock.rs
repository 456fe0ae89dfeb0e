//! Perplexity test: member passphrases against freshly generated calibration
//! passphrases, with the critical value set empirically at level alpha.

use std::sync::Arc;

use ghostmark::corpus::{plan_insertions, synthetic_documents, PlanRequest, RepetitionMode};
use ghostmark::detect::{run_ppl_test, Calibration, FreshCalibration, PplConfig};
use ghostmark::identifier::Randomness;
use ghostmark::{MockModel, PositionStrategy, Registry, Wordlist};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn main() -> ghostmark::Result<()> {
    let wordlist = Arc::new(Wordlist::synthetic("synthetic-7776", 7776)?);
    let mut registry = Registry::with_wordlist(Arc::clone(&wordlist));
    let mut rng = ChaCha20Rng::seed_from_u64(21);
    let q = 8;
    for i in 0..300 {
        registry.generate(wordlist.source_digest(), format!("user-{i:03}"), q, &mut rng)?;
    }
    let mut corpus = synthetic_documents(600, 150, 20..=60, 22);
    plan_insertions(
        &mut corpus,
        &registry,
        &PlanRequest {
            m: 300,
            target_mu: 1.0,
            strategy: PositionStrategy::end(),
            seed: 23,
            mode: RepetitionMode::Uniform,
        },
    )?;
    let held_out = corpus.iter().filter(|d| d.insertion.is_none()).cloned().collect();
    let calibration = Calibration::Fresh(FreshCalibration {
        held_out,
        size: 1000,
        q: Some(q),
        wordlist_digest: None,
        strategy: PositionStrategy::end(),
        randomness: Randomness::Seeded(24),
    });

    println!("{:<14} {:>8} {:>10} {:>8} {:>10}", "model", "AUC", "critical", "recall", "min-k AUC");
    for lambda in [0.0, 0.1, 0.3, 1.0] {
        let model = MockModel::partial(&registry, &corpus, lambda, 25)?;
        let report = run_ppl_test(&corpus, &registry, &calibration, &model, &PplConfig::default())?;
        let a = &report.ppl().expect("perplexity report").aggregates;
        println!(
            "{:<14} {:>8.4} {:>10.1} {:>8.3} {:>10.4}",
            format!("partial {lambda}"),
            a.auc,
            a.critical,
            a.recall,
            a.min_k_auc
        );
    }
    // an untrained model sees every passphrase word as one of V choices
    println!("\nuniform PPL of any passphrase = V = {}", wordlist.size());
    Ok(())
}
