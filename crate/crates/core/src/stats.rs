//! Statistical machinery for both membership tests.
//!
//! Last-k words test: under H0 each generated word matches the passphrase
//! with probability `1/V*`, so the number of matches `n_g` among `q`
//! attempts is Binomial(q, 1/V*) and a one-proportion z-test applies.
//!
//! Perplexity test: the passphrase PPL given its context is compared with
//! the empirical PPL distribution of fresh, never-published passphrases.
//! Low PPL rejects H0.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// One-sided z threshold at α = 0.05.
pub const Z_ALPHA_05: f64 = 1.645;
/// z threshold used for α = 0.01.
pub const Z_ALPHA_01: f64 = 2.58;
/// Fixed PPL critical value used for recall reporting.
pub const REFERENCE_PPL_CRITICAL: f64 = 200.0;
/// Minimum calibration sample for an empirical critical value.
pub const MIN_CALIBRATION_SAMPLES: usize = 20;

/// `(n_g·V* − q) / sqrt(q·(V* − 1))`.
pub fn z_score(n_g: usize, q: usize, v_star: usize) -> f64 {
    debug_assert!(q > 0 && v_star >= 2);
    let (n, q, v) = (n_g as f64, q as f64, v_star as f64);
    (n * v - q) / (q * (v - 1.0)).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Significance {
    /// A significance level; 0.05 and 0.01 map to the tabulated thresholds,
    /// other levels to the one-sided normal quantile.
    Alpha(f64),
    /// An explicit z threshold.
    Threshold(f64),
}

impl Significance {
    pub fn alpha(alpha: f64) -> Result<Self> {
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(Error::InvalidAlpha(alpha));
        }
        Ok(Significance::Alpha(alpha))
    }

    pub fn threshold(&self) -> f64 {
        match *self {
            Significance::Threshold(z) => z,
            Significance::Alpha(0.05) => Z_ALPHA_05,
            Significance::Alpha(0.01) => Z_ALPHA_01,
            Significance::Alpha(a) => Normal::standard().inverse_cdf(1.0 - a),
        }
    }

    pub fn level(&self) -> Option<f64> {
        match *self {
            Significance::Alpha(a) => Some(a),
            Significance::Threshold(_) => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZTest {
    pub z: f64,
    pub n_g: usize,
    pub q: usize,
    #[serde(rename = "V_star")]
    pub v_star: usize,
    pub reject: bool,
    pub alpha: Option<f64>,
    pub threshold: f64,
}

pub fn z_test(n_g: usize, q: usize, v_star: usize, significance: Significance) -> ZTest {
    let z = z_score(n_g, q, v_star);
    let threshold = significance.threshold();
    ZTest {
        z,
        n_g,
        q,
        v_star,
        reject: z > threshold,
        alpha: significance.level(),
        threshold,
    }
}

/// `exp(−mean(log p))` over natural-log word probabilities. Terms are
/// summed in sorted order so the result does not depend on word order.
pub fn perplexity(word_logprobs: &[f64]) -> Result<f64> {
    if word_logprobs.is_empty() {
        return Err(Error::EmptySequence);
    }
    if let Some(&bad) = word_logprobs.iter().find(|&&lp| lp.is_nan() || lp > 0.0 || lp.is_infinite()) {
        return Err(Error::InvalidLogprob(bad));
    }
    let mut sorted = word_logprobs.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mean = sorted.iter().sum::<f64>() / sorted.len() as f64;
    Ok((-mean).exp())
}

/// Log-probabilities of one passphrase's words given its context.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPassphrase {
    pub identifier_id: String,
    pub word_logprobs: Vec<f64>,
    /// Context length in characters.
    pub context_len: usize,
    pub ppl: f64,
}

impl ScoredPassphrase {
    pub fn new(identifier_id: impl Into<String>, word_logprobs: Vec<f64>, context_len: usize) -> Result<Self> {
        let ppl = perplexity(&word_logprobs)?;
        Ok(ScoredPassphrase {
            identifier_id: identifier_id.into(),
            word_logprobs,
            context_len,
            ppl,
        })
    }

    /// `log p(g)`, the sum of word log-probabilities.
    pub fn log_prob(&self) -> f64 {
        self.word_logprobs.iter().sum()
    }
}

fn sorted_finite(samples: &[f64]) -> Result<Vec<f64>> {
    if let Some(&bad) = samples.iter().find(|x| !x.is_finite()) {
        return Err(Error::NonFiniteScore(bad));
    }
    let mut v = samples.to_vec();
    v.sort_by(f64::total_cmp);
    Ok(v)
}

/// Lower-tail α-quantile with linear interpolation between order statistics
/// (`h = (n − 1)·α`).
pub fn empirical_critical_value(calibration_ppls: &[f64], alpha: f64) -> Result<f64> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidAlpha(alpha));
    }
    if calibration_ppls.len() < MIN_CALIBRATION_SAMPLES {
        return Err(Error::TooFewSamples {
            needed: MIN_CALIBRATION_SAMPLES,
            found: calibration_ppls.len(),
        });
    }
    let x = sorted_finite(calibration_ppls)?;
    Ok(quantile_sorted(&x, alpha))
}

fn quantile_sorted(x: &[f64], alpha: f64) -> f64 {
    let h = (x.len() - 1) as f64 * alpha;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(x.len() - 1);
    x[lo] + (h - lo as f64) * (x[hi] - x[lo])
}

/// Rejection region `PPL < critical`, plus a randomized rejection at
/// `PPL == critical` that brings the size to exactly α when the null
/// distribution has an atom at the critical value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriticalRegion {
    pub alpha: f64,
    pub critical: f64,
    /// Probability of rejecting when the PPL equals the critical value.
    pub tie_reject_prob: f64,
}

impl CriticalRegion {
    pub fn calibrate(calibration_ppls: &[f64], alpha: f64) -> Result<Self> {
        let critical = empirical_critical_value(calibration_ppls, alpha)?;
        let n = calibration_ppls.len() as f64;
        let below = calibration_ppls.iter().filter(|&&p| p < critical).count() as f64 / n;
        let at = calibration_ppls.iter().filter(|&&p| p == critical).count() as f64 / n;
        let tie_reject_prob = if at > 0.0 {
            ((alpha - below) / at).clamp(0.0, 1.0)
        } else {
            0.0
        };
        Ok(CriticalRegion {
            alpha,
            critical,
            tie_reject_prob,
        })
    }

    /// `u` is a uniform draw in `[0, 1)`, only consulted on a tie.
    pub fn rejects(&self, ppl: f64, u: f64) -> bool {
        ppl < self.critical || (ppl == self.critical && u < self.tie_reject_prob)
    }
}

/// Result of the last-k words test on one document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LastKOutcome {
    pub doc_id: String,
    pub targets: Vec<String>,
    pub generated: Vec<String>,
    pub match_flags: Vec<bool>,
    pub n_correct: usize,
}

impl LastKOutcome {
    pub fn new(doc_id: impl Into<String>, targets: Vec<String>, generated: Vec<String>, match_flags: Vec<bool>) -> Self {
        let n_correct = match_flags.iter().filter(|&&m| m).count();
        LastKOutcome {
            doc_id: doc_id.into(),
            targets,
            generated,
            match_flags,
            n_correct,
        }
    }

    /// All of the first `k` words reproduced.
    pub fn all_correct(&self, k: usize) -> bool {
        self.match_flags.len() >= k && self.match_flags[..k].iter().all(|&m| m)
    }
}

fn check_k(outcomes: &[LastKOutcome], k: usize) -> Result<()> {
    for o in outcomes {
        if o.targets.len() != k || o.match_flags.len() != k {
            return Err(Error::MixedK {
                doc_id: o.doc_id.clone(),
                found: o.targets.len(),
                k,
            });
        }
    }
    Ok(())
}

/// Document identification accuracy: share of documents whose last `k`
/// words were all reproduced.
pub fn d_acc(outcomes: &[LastKOutcome], k: usize) -> Result<f64> {
    if outcomes.is_empty() {
        return Err(Error::EmptySequence);
    }
    check_k(outcomes, k)?;
    let hits = outcomes.iter().filter(|o| o.all_correct(k)).count();
    Ok(hits as f64 / outcomes.len() as f64)
}

/// User identification accuracy: share of owners with at least one fully
/// reproduced document. Owners with no documents count as unidentified.
pub fn u_acc(groups: &BTreeMap<String, Vec<LastKOutcome>>, k: usize) -> Result<f64> {
    if groups.is_empty() {
        return Err(Error::EmptyGroup);
    }
    let mut identified = 0usize;
    for outcomes in groups.values() {
        check_k(outcomes, k)?;
        if outcomes.iter().any(|o| o.all_correct(k)) {
            identified += 1;
        }
    }
    Ok(identified as f64 / groups.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub auc: f64,
    pub roc_points: Vec<RocPoint>,
}

impl RocCurve {
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "fpr,tpr")?;
        for p in &self.roc_points {
            writeln!(out, "{},{}", p.fpr, p.tpr)?;
        }
        Ok(())
    }
}

/// Twice the Mann–Whitney U count: 2 per pair where the member PPL is lower,
/// 1 per tie. Exact integer arithmetic.
fn mann_whitney_doubled(members: &[f64], nonmembers_sorted: &[f64]) -> u128 {
    let n0 = nonmembers_sorted.len();
    members
        .iter()
        .map(|&m| {
            let le = nonmembers_sorted.partition_point(|&x| x <= m);
            let lt = nonmembers_sorted.partition_point(|&x| x < m);
            2 * (n0 - le) as u128 + (le - lt) as u128
        })
        .sum()
}

/// ROC AUC for PPL scores where lower means more member-like. Equal to
/// `P(member PPL < nonmember PPL) + ½·P(tie)`.
pub fn roc_auc(member_ppls: &[f64], nonmember_ppls: &[f64]) -> Result<RocCurve> {
    if member_ppls.is_empty() {
        return Err(Error::EmptyClass("member"));
    }
    if nonmember_ppls.is_empty() {
        return Err(Error::EmptyClass("non-member"));
    }
    let members = sorted_finite(member_ppls)?;
    let nonmembers = sorted_finite(nonmember_ppls)?;
    let (n1, n0) = (members.len(), nonmembers.len());

    let doubled = mann_whitney_doubled(&members, &nonmembers);
    let auc = doubled as f64 / (2 * n1 as u128 * n0 as u128) as f64;

    // sweep thresholds from most to least member-like
    let mut thresholds: Vec<f64> = members.iter().chain(&nonmembers).copied().collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    let mut roc_points = Vec::with_capacity(thresholds.len() + 1);
    roc_points.push(RocPoint { fpr: 0.0, tpr: 0.0 });
    for t in thresholds {
        let tp = members.partition_point(|&x| x <= t);
        let fp = nonmembers.partition_point(|&x| x <= t);
        roc_points.push(RocPoint {
            fpr: fp as f64 / n0 as f64,
            tpr: tp as f64 / n1 as f64,
        });
    }
    Ok(RocCurve { auc, roc_points })
}

/// Share of members with `PPL < critical`.
pub fn recall_at(member_ppls: &[f64], critical: f64) -> Result<f64> {
    if member_ppls.is_empty() {
        return Err(Error::EmptySequence);
    }
    let hits = member_ppls.iter().filter(|&&p| p < critical).count();
    Ok(hits as f64 / member_ppls.len() as f64)
}

/// Min-k% Prob: mean of the `⌈k%·n⌉` lowest token log-probabilities.
/// Higher means more member-like.
pub fn min_k_prob(token_logprobs: &[f64], k_percent: f64) -> Result<f64> {
    if token_logprobs.is_empty() {
        return Err(Error::EmptySequence);
    }
    if !(k_percent > 0.0 && k_percent <= 100.0) {
        return Err(Error::InvalidParameter(format!("k% = {k_percent} outside (0, 100]")));
    }
    let mut v = sorted_finite(token_logprobs)?;
    let n = v.len();
    let take = ((k_percent / 100.0 * n as f64).ceil() as usize).clamp(1, n);
    v.truncate(take);
    Ok(v.iter().sum::<f64>() / take as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn outcome(id: &str, flags: &[bool]) -> LastKOutcome {
        let t: Vec<String> = (0..flags.len()).map(|i| format!("w{i}")).collect();
        LastKOutcome::new(id, t.clone(), t, flags.to_vec())
    }

    #[test]
    fn z_scores_from_the_literature() {
        // (7776 − 10) / sqrt(10 · 7775)
        let z = z_score(1, 10, 7776);
        assert!((z - 27.85).abs() < 0.01, "{z}");
        let z = z_score(2, 10, 25);
        assert!((z - 2.582).abs() < 0.01 && z >= 2.58, "{z}");
        assert_eq!(z_score(1, 10, 10), 0.0);
    }

    #[test]
    fn z_test_decisions() {
        let a01 = Significance::alpha(0.01).unwrap();
        let t = z_test(1, 10, 7776, a01);
        assert!(t.reject);
        assert_eq!(t.threshold, 2.58);
        let t = z_test(0, 10, 7776, a01);
        assert!(!t.reject && t.z < 0.0);
        assert!(!z_test(1, 10, 10, a01).reject);
        assert_eq!(Significance::alpha(0.05).unwrap().threshold(), 1.645);
        assert_eq!(Significance::Threshold(3.0).threshold(), 3.0);
        let custom = Significance::alpha(0.025).unwrap().threshold();
        assert!((custom - 1.959964).abs() < 1e-5);
        assert!(Significance::alpha(0.0).is_err());
    }

    #[test]
    fn z_test_json_fields() {
        let t = z_test(1, 10, 7776, Significance::alpha(0.01).unwrap());
        let v: serde_json::Value = serde_json::to_value(t).unwrap();
        for key in ["z", "n_g", "q", "V_star", "reject", "alpha"] {
            assert!(v.get(key).is_some(), "{key}");
        }
    }

    #[test]
    fn perplexity_cases() {
        assert_eq!(perplexity(&[0.0, 0.0, 0.0]).unwrap(), 1.0);
        let lp = -(7776f64).ln();
        let p = perplexity(&[lp; 10]).unwrap();
        assert!((p - 7776.0).abs() < 1e-6);
        let p = perplexity(&[-1.0, -3.0]).unwrap();
        assert!((p - 2f64.exp()).abs() < 1e-12);
        assert!(matches!(perplexity(&[]), Err(Error::EmptySequence)));
        assert!(matches!(perplexity(&[0.5]), Err(Error::InvalidLogprob(_))));
        assert!(matches!(perplexity(&[f64::NAN]), Err(Error::InvalidLogprob(_))));
    }

    #[test]
    fn critical_value_constant_and_small() {
        let c = empirical_critical_value(&[500.0; 30], 0.05).unwrap();
        assert_eq!(c, 500.0);
        assert!(matches!(
            empirical_critical_value(&[1.0; 19], 0.05),
            Err(Error::TooFewSamples { needed: 20, found: 19 })
        ));
    }

    #[test]
    fn critical_value_uniform_grid() {
        // 1000 evenly spaced samples on [100, 1100]; type-7 quantile at 0.01
        // sits at h = 9.99 between the 10th and 11th order statistics.
        let xs: Vec<f64> = (0..1000).map(|i| 100.0 + 1000.0 * i as f64 / 999.0).collect();
        let c = empirical_critical_value(&xs, 0.01).unwrap();
        assert!((c - 110.0).abs() < 5.0, "{c}");
        assert!((c - 110.0).abs() < 1e-9);
    }

    #[test]
    fn critical_region_randomizes_only_on_atoms() {
        let r = CriticalRegion::calibrate(&[7776.0; 100], 0.05).unwrap();
        assert_eq!(r.critical, 7776.0);
        assert!((r.tie_reject_prob - 0.05).abs() < 1e-12);
        assert!(r.rejects(7776.0, 0.01));
        assert!(!r.rejects(7776.0, 0.5));
        assert!(r.rejects(100.0, 0.99));

        let xs: Vec<f64> = (0..100).map(|i| i as f64 + 0.5).collect();
        let r = CriticalRegion::calibrate(&xs, 0.05).unwrap();
        assert_eq!(r.tie_reject_prob, 0.0);
    }

    #[test]
    fn d_acc_cases() {
        let o = vec![
            outcome("a", &[true, true]),
            outcome("b", &[true, true]),
            outcome("c", &[true, true]),
            outcome("d", &[false, true]),
        ];
        assert_eq!(d_acc(&o, 2).unwrap(), 0.75);
        assert_eq!(d_acc(&[outcome("a", &[false, false])], 2).unwrap(), 0.0);
        assert_eq!(d_acc(&[outcome("a", &[true, false])], 2).unwrap(), 0.0);
        assert!(matches!(d_acc(&[outcome("a", &[true])], 2), Err(Error::MixedK { .. })));
    }

    #[test]
    fn u_acc_cases() {
        let mut groups = BTreeMap::new();
        for u in 0..16 {
            let hit = u < 11;
            groups.insert(format!("u{u:02}"), vec![outcome("x", &[hit]), outcome("y", &[false])]);
        }
        assert_eq!(u_acc(&groups, 1).unwrap(), 0.6875);

        let mut one = BTreeMap::new();
        one.insert(
            "o".to_string(),
            vec![
                outcome("1", &[false]),
                outcome("2", &[true]),
                outcome("3", &[false]),
                outcome("4", &[false]),
                outcome("5", &[false]),
            ],
        );
        assert_eq!(u_acc(&one, 1).unwrap(), 1.0);
        one.insert("empty".to_string(), vec![]);
        assert_eq!(u_acc(&one, 1).unwrap(), 0.5);
        assert!(matches!(u_acc(&BTreeMap::new(), 1), Err(Error::EmptyGroup)));
    }

    #[test]
    fn auc_cases() {
        assert_eq!(roc_auc(&[1.0, 2.0], &[3.0, 4.0]).unwrap().auc, 1.0);
        assert_eq!(roc_auc(&[3.0, 1.0, 2.0], &[2.0, 3.0, 1.0]).unwrap().auc, 0.5);
        // pairs (1,2) (1,4) (3,4) favour members, (3,2) does not: 3/4
        assert_eq!(roc_auc(&[1.0, 3.0], &[2.0, 4.0]).unwrap().auc, 0.75);
        assert!(matches!(roc_auc(&[], &[1.0]), Err(Error::EmptyClass(_))));
        assert!(matches!(roc_auc(&[1.0], &[]), Err(Error::EmptyClass(_))));
        assert!(matches!(roc_auc(&[f64::NAN], &[1.0]), Err(Error::NonFiniteScore(_))));
    }

    #[test]
    fn roc_points_span_unit_square() {
        let roc = roc_auc(&[1.0, 3.0], &[2.0, 4.0]).unwrap();
        assert_eq!(roc.roc_points.first(), Some(&RocPoint { fpr: 0.0, tpr: 0.0 }));
        assert_eq!(roc.roc_points.last(), Some(&RocPoint { fpr: 1.0, tpr: 1.0 }));
        // trapezoid area over the points equals the rank AUC
        let area: f64 = roc
            .roc_points
            .windows(2)
            .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
            .sum();
        assert!((area - roc.auc).abs() < 1e-12);
        let mut csv = Vec::new();
        roc.write_csv(&mut csv).unwrap();
        assert!(String::from_utf8(csv).unwrap().starts_with("fpr,tpr\n0,0\n"));
    }

    #[test]
    fn recall_cases() {
        assert_eq!(recall_at(&[150.0, 250.0], 200.0).unwrap(), 0.5);
        assert_eq!(recall_at(&[200.0, 250.0], 200.0).unwrap(), 0.0);
    }

    #[test]
    fn min_k_cases() {
        assert_eq!(min_k_prob(&[-1.0, -2.0, -3.0, -4.0], 50.0).unwrap(), -3.5);
        assert_eq!(min_k_prob(&[-0.7; 9], 20.0).unwrap(), -0.7);
        assert_eq!(min_k_prob(&[-0.1, -5.0], 5.0).unwrap(), -5.0);
        assert!(min_k_prob(&[-1.0], 0.0).is_err());
    }
}
