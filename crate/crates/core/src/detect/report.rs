use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::Write;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::backend::{BackendDescriptor, BackendError};
use crate::error::{Error, Result};
use crate::stats::{
    self, CriticalRegion, LastKOutcome, RocCurve, RocPoint, Significance, ZTest,
    MIN_CALIBRATION_SAMPLES,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestReport {
    #[serde(flatten)]
    pub body: ReportBody,
    pub backend: BackendDescriptor,
    pub plan_digest: String,
    pub started_at: DateTime<Utc>,
    pub finished_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum ReportBody {
    Lastk(LastKReport),
    Ppl(PplReport),
}

impl TestReport {
    pub fn lastk(&self) -> Option<&LastKReport> {
        match &self.body {
            ReportBody::Lastk(r) => Some(r),
            ReportBody::Ppl(_) => None,
        }
    }

    pub fn ppl(&self) -> Option<&PplReport> {
        match &self.body {
            ReportBody::Ppl(r) => Some(r),
            ReportBody::Lastk(_) => None,
        }
    }

    /// Recomputes aggregates from the per-item records and compares them
    /// with the stored ones.
    pub fn is_self_consistent(&self) -> Result<bool> {
        match &self.body {
            ReportBody::Lastk(r) => Ok(r.recompute()? == r.aggregates),
            ReportBody::Ppl(r) => {
                let (agg, flags) = r.recompute()?;
                let stored: Vec<Option<bool>> = r.items.iter().map(|i| i.reject).collect();
                Ok(agg == r.aggregates && flags == stored)
            }
        }
    }

    pub fn write_json<W: Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer_pretty(out, self)?;
        Ok(())
    }

    /// Plain-text summary table.
    pub fn summary(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "backend      {} ({})", self.backend.kind, self.backend.model);
        let _ = writeln!(s, "plan digest  {}", self.plan_digest);
        match &self.body {
            ReportBody::Lastk(r) => {
                let a = &r.aggregates;
                let pct = |v: Option<f64>| v.map_or("n/a".to_owned(), |v| format!("{:.2}%", 100.0 * v));
                let _ = writeln!(s, "test         last-{} words", a.k);
                let _ = writeln!(s, "documents    {} scored, {} errored", a.n_scored, a.n_errored);
                let _ = writeln!(s, "D-Acc-{}      {}", a.k, pct(a.d_acc));
                let _ = writeln!(s, "U-Acc-{}      {}", a.k, pct(a.u_acc));
                let _ = writeln!(s, "users        {} of {} reject H0", a.users_rejected, a.users.len());
                let _ = writeln!(s);
                let _ = writeln!(s, "{:<24} {:>5} {:>5} {:>10} {:>7}", "owner", "docs", "n_g", "z", "reject");
                for u in &a.users {
                    match &u.test {
                        Some(t) => {
                            let _ = writeln!(
                                s,
                                "{:<24} {:>5} {:>5} {:>10.2} {:>7}",
                                u.owner_id, u.n_scored, t.n_g, t.z, t.reject
                            );
                        }
                        None => {
                            let _ = writeln!(s, "{:<24} {:>5} {:>5} {:>10} {:>7}", u.owner_id, 0, "-", "-", "-");
                        }
                    }
                }
            }
            ReportBody::Ppl(r) => {
                let a = &r.aggregates;
                let _ = writeln!(s, "test         perplexity");
                let _ = writeln!(
                    s,
                    "items        {} members, {} calibration, {} errored",
                    a.n_members, a.n_calibration, a.n_errored
                );
                let _ = writeln!(s, "alpha        {}", a.alpha);
                let _ = writeln!(s, "critical     {:.3} (empirical)", a.critical);
                let _ = writeln!(s, "rejected     {:.2}% of members", 100.0 * a.rejection_rate);
                let _ = writeln!(s, "AUC          {:.4}", a.auc);
                let _ = writeln!(s, "recall       {:.4} @ {:.3}", a.recall, a.critical);
                let _ = writeln!(s, "recall       {:.4} @ {:.1} (reference)", a.recall_reference, a.critical_reference);
                let _ = writeln!(s, "Min-{}% AUC  {:.4}", r.min_k_percent, a.min_k_auc);
            }
        }
        s
    }
}

/// How a user's `n_g` is formed from their documents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NgMode {
    /// Best single document, `q = k`.
    #[default]
    BestDocument,
    /// Sum over documents, `q = k · documents`.
    SumOverDocuments,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LastKItem {
    pub doc_id: String,
    pub owner_id: String,
    pub identifier_id: String,
    pub v_star: usize,
    pub outcome: Option<LastKOutcome>,
    pub error: Option<BackendError>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserZ {
    pub owner_id: String,
    pub identifier_id: String,
    pub n_docs: usize,
    pub n_scored: usize,
    pub test: Option<ZTest>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LastKAggregates {
    pub k: usize,
    pub n_items: usize,
    pub n_scored: usize,
    pub n_errored: usize,
    pub n_timeouts: usize,
    pub d_acc: Option<f64>,
    pub u_acc: Option<f64>,
    pub users: Vec<UserZ>,
    pub users_rejected: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LastKReport {
    pub k: usize,
    pub significance: Significance,
    pub n_g_mode: NgMode,
    pub items: Vec<LastKItem>,
    pub aggregates: LastKAggregates,
}

impl LastKReport {
    pub fn recompute(&self) -> Result<LastKAggregates> {
        lastk_aggregates(&self.items, self.k, self.significance, self.n_g_mode)
    }
}

pub(crate) fn lastk_aggregates(
    items: &[LastKItem],
    k: usize,
    significance: Significance,
    mode: NgMode,
) -> Result<LastKAggregates> {
    let scored: Vec<LastKOutcome> = items.iter().filter_map(|i| i.outcome.clone()).collect();
    let n_errored = items.iter().filter(|i| i.outcome.is_none()).count();
    let n_timeouts = items
        .iter()
        .filter(|i| matches!(i.error, Some(BackendError::Timeout)))
        .count();

    // (owner, identifier) → scored outcomes; owners with only errored
    // documents still count towards U-Acc
    let mut groups: BTreeMap<String, (String, usize, usize, Vec<LastKOutcome>)> = BTreeMap::new();
    for it in items {
        let g = groups
            .entry(it.owner_id.clone())
            .or_insert_with(|| (it.identifier_id.clone(), it.v_star, 0, Vec::new()));
        g.2 += 1;
        if let Some(o) = &it.outcome {
            g.3.push(o.clone());
        }
    }

    let d_acc = if scored.is_empty() { None } else { Some(stats::d_acc(&scored, k)?) };
    let u_acc = if groups.is_empty() {
        None
    } else {
        let by_owner: BTreeMap<String, Vec<LastKOutcome>> = groups
            .iter()
            .map(|(owner, g)| (owner.clone(), g.3.clone()))
            .collect();
        Some(stats::u_acc(&by_owner, k)?)
    };

    let mut users = Vec::with_capacity(groups.len());
    for (owner_id, (identifier_id, v_star, n_docs, outs)) in groups {
        let test = if outs.is_empty() {
            None
        } else {
            let (n_g, q) = match mode {
                NgMode::BestDocument => (outs.iter().map(|o| o.n_correct).max().unwrap_or(0), k),
                NgMode::SumOverDocuments => (outs.iter().map(|o| o.n_correct).sum(), k * outs.len()),
            };
            Some(stats::z_test(n_g, q, v_star, significance))
        };
        users.push(UserZ {
            owner_id,
            identifier_id,
            n_docs,
            n_scored: outs.len(),
            test,
        });
    }
    let users_rejected = users
        .iter()
        .filter(|u| u.test.is_some_and(|t| t.reject))
        .count();
    Ok(LastKAggregates {
        k,
        n_items: items.len(),
        n_scored: scored.len(),
        n_errored,
        n_timeouts,
        d_acc,
        u_acc,
        users,
        users_rejected,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PplRole {
    Member,
    Calibration,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PplItem {
    pub doc_id: String,
    pub identifier_id: String,
    pub role: PplRole,
    pub word_logprobs: Vec<f64>,
    pub token_logprobs: Vec<f64>,
    pub ppl: Option<f64>,
    /// Decision for members; `None` for calibration or errored items.
    pub reject: Option<bool>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PplAggregates {
    pub alpha: f64,
    pub critical: f64,
    pub tie_reject_prob: f64,
    pub auc: f64,
    pub recall: f64,
    pub critical_reference: f64,
    pub recall_reference: f64,
    pub rejection_rate: f64,
    pub min_k_auc: f64,
    pub roc: Vec<RocPoint>,
    pub n_members: usize,
    pub n_calibration: usize,
    pub n_errored: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PplReport {
    pub alpha: f64,
    pub critical_reference: f64,
    pub min_k_percent: f64,
    /// Seeds the per-item uniform draws used on exact ties with the critical value.
    pub tie_seed: u64,
    pub items: Vec<PplItem>,
    pub aggregates: PplAggregates,
}

impl PplReport {
    pub fn recompute(&self) -> Result<(PplAggregates, Vec<Option<bool>>)> {
        ppl_aggregates(
            &self.items,
            self.alpha,
            self.critical_reference,
            self.min_k_percent,
            self.tie_seed,
        )
    }

    pub fn roc_curve(&self) -> RocCurve {
        RocCurve {
            auc: self.aggregates.auc,
            roc_points: self.aggregates.roc.clone(),
        }
    }
}

/// Uniform draw in `[0, 1)` keyed by `(seed, id)`.
pub(crate) fn keyed_uniform(seed: u64, id: &str) -> f64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(id.as_bytes());
    let d = h.finalize();
    let bits = u64::from_le_bytes(d[..8].try_into().expect("8 bytes"));
    (bits >> 11) as f64 / (1u64 << 53) as f64
}

pub(crate) fn ppl_aggregates(
    items: &[PplItem],
    alpha: f64,
    critical_reference: f64,
    min_k_percent: f64,
    tie_seed: u64,
) -> Result<(PplAggregates, Vec<Option<bool>>)> {
    let scored = |role: PplRole| {
        items
            .iter()
            .filter(move |i| i.role == role)
            .filter_map(|i| i.ppl.map(|p| (i, p)))
    };
    let calibration: Vec<f64> = scored(PplRole::Calibration).map(|(_, p)| p).collect();
    let members: Vec<f64> = scored(PplRole::Member).map(|(_, p)| p).collect();
    if calibration.len() < MIN_CALIBRATION_SAMPLES {
        return Err(Error::TooFewCalibration {
            needed: MIN_CALIBRATION_SAMPLES,
            found: calibration.len(),
        });
    }
    if members.is_empty() {
        return Err(Error::EmptyClass("member"));
    }
    let region = CriticalRegion::calibrate(&calibration, alpha)?;

    let flags: Vec<Option<bool>> = items
        .iter()
        .map(|i| match (i.role, i.ppl) {
            (PplRole::Member, Some(p)) => Some(region.rejects(p, keyed_uniform(tie_seed, &i.doc_id))),
            _ => None,
        })
        .collect();
    let rejected = flags.iter().filter(|f| **f == Some(true)).count();

    let roc = stats::roc_auc(&members, &calibration)?;
    // Min-k% is "higher = member"; negate to reuse the lower-is-member AUC
    let min_k = |role| -> Result<Vec<f64>> {
        scored(role)
            .map(|(i, _)| stats::min_k_prob(&i.token_logprobs, min_k_percent).map(|v| -v))
            .collect()
    };
    let min_k_auc = stats::roc_auc(&min_k(PplRole::Member)?, &min_k(PplRole::Calibration)?)?.auc;

    Ok((
        PplAggregates {
            alpha,
            critical: region.critical,
            tie_reject_prob: region.tie_reject_prob,
            auc: roc.auc,
            recall: stats::recall_at(&members, region.critical)?,
            critical_reference,
            recall_reference: stats::recall_at(&members, critical_reference)?,
            rejection_rate: rejected as f64 / members.len() as f64,
            min_k_auc,
            roc: roc.roc_points,
            n_members: members.len(),
            n_calibration: calibration.len(),
            n_errored: items.iter().filter(|i| i.ppl.is_none()).count(),
        },
        flags,
    ))
}
