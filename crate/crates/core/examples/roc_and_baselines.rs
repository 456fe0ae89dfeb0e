//! ROC/AUC over member and non-member perplexities, recall at a critical
//! value, and the Min-k% Prob baseline.

use ghostmark::stats::{
    empirical_critical_value, min_k_prob, perplexity, recall_at, roc_auc, CriticalRegion,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

const V: f64 = 7776.0;

fn passphrase_logprobs(rng: &mut ChaCha20Rng, q: usize, recall: f64) -> Vec<f64> {
    (0..q)
        .map(|_| if rng.random_bool(recall) { -0.05 } else { -V.ln() })
        .collect()
}

fn main() -> ghostmark::Result<()> {
    let mut rng = ChaCha20Rng::seed_from_u64(5);
    let q = 10;
    let members: Vec<Vec<f64>> = (0..500).map(|_| passphrase_logprobs(&mut rng, q, 0.15)).collect();
    let nonmembers: Vec<Vec<f64>> = (0..500).map(|_| passphrase_logprobs(&mut rng, q, 0.0)).collect();

    let ppl = |xs: &[Vec<f64>]| -> ghostmark::Result<Vec<f64>> { xs.iter().map(|lp| perplexity(lp)).collect() };
    let (m_ppl, n_ppl) = (ppl(&members)?, ppl(&nonmembers)?);

    let roc = roc_auc(&m_ppl, &n_ppl)?;
    println!("perplexity AUC {:.4} over {} ROC points", roc.auc, roc.roc_points.len());
    for p in roc.roc_points.iter().step_by((roc.roc_points.len() / 6).max(1)) {
        println!("  fpr {:.3}  tpr {:.3}", p.fpr, p.tpr);
    }

    // every non-member has PPL exactly V, so the level is reached by
    // rejecting ties with probability tie_reject_prob
    let region = CriticalRegion::calibrate(&n_ppl, 0.05)?;
    println!(
        "\ncritical {:.1} (type-7 quantile {:.1}), tie rejection probability {:.3}",
        region.critical,
        empirical_critical_value(&n_ppl, 0.05)?,
        region.tie_reject_prob
    );
    println!("recall below the critical value {:.3}", recall_at(&m_ppl, region.critical)?);
    println!("recall below 200 {:.3}", recall_at(&m_ppl, 200.0)?);

    // Min-k%: mean of the lowest 20% log-probs; higher means "member", so
    // negate to keep "lower score = member" for the AUC
    let mink = |xs: &[Vec<f64>]| -> ghostmark::Result<Vec<f64>> {
        xs.iter().map(|lp| min_k_prob(lp, 20.0).map(|s| -s)).collect()
    };
    let baseline = roc_auc(&mink(&members)?, &mink(&nonmembers)?)?;
    println!("\nMin-20% Prob AUC {:.4}", baseline.auc);
    Ok(())
}
