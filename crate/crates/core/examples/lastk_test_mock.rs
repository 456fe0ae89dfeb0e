//! Last-k words test against mock models: a memorizer trained on the
//! inserted corpus identifies the owners, a uniform model does not.

use std::sync::Arc;

use ghostmark::corpus::{plan_insertions, synthetic_documents, PlanRequest, RepetitionMode};
use ghostmark::detect::{run_lastk_test, LastKConfig};
use ghostmark::{MockModel, PositionStrategy, Registry, Wordlist};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn main() -> ghostmark::Result<()> {
    let wordlist = Arc::new(Wordlist::synthetic("synthetic-7776", 7776)?);
    let mut registry = Registry::with_wordlist(Arc::clone(&wordlist));
    let mut rng = ChaCha20Rng::seed_from_u64(11);
    for i in 0..20 {
        registry.generate(wordlist.source_digest(), format!("user-{i:02}"), 10, &mut rng)?;
    }
    let mut corpus = synthetic_documents(400, 80, 20..=80, 12);
    plan_insertions(
        &mut corpus,
        &registry,
        &PlanRequest {
            m: 20,
            target_mu: 4.0,
            strategy: PositionStrategy::range(0.25, 1.0)?,
            seed: 13,
            mode: RepetitionMode::Uniform,
        },
    )?;

    let models = [
        ("memorizer h=1.0", MockModel::memorizer(&registry, &corpus, 1.0, 14)?),
        ("memorizer h=0.3", MockModel::memorizer(&registry, &corpus, 0.3, 14)?),
        ("uniform", MockModel::uniform(Arc::clone(&wordlist), 14)),
    ];
    for (name, model) in &models {
        for k in [1, 3] {
            let report = run_lastk_test(&corpus, &registry, model, &LastKConfig::new(k))?;
            let a = &report.lastk().expect("last-k report").aggregates;
            println!(
                "{name:<16} k={k}  D-Acc {:.3}  U-Acc {:.3}  users rejected {}/{}",
                a.d_acc.unwrap_or(f64::NAN),
                a.u_acc.unwrap_or(f64::NAN),
                a.users_rejected,
                a.users.len()
            );
        }
    }

    let report = run_lastk_test(&corpus, &registry, &models[1].1, &LastKConfig::new(3))?;
    println!("\n{}", report.summary());
    Ok(())
}
