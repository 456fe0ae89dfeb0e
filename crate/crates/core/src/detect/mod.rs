//! Membership tests against a model backend.
//!
//! [`run_lastk_test`] prompts the model with everything up to the last `k`
//! passphrase words and counts exact reproductions. [`run_ppl_test`] scores
//! passphrases by perplexity and compares them with freshly generated,
//! never-trained identifiers.

mod align;
mod backend;
mod fanout;
mod http;
mod logprob_file;
mod report;

use std::ops::Range;
use std::sync::atomic::{AtomicBool, Ordering};

use chrono::Utc;
use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use unicode_normalization::UnicodeNormalization;

pub use align::{align_tokens, char_offset, score_span, SpanScore};
pub use backend::{
    Backend, BackendDescriptor, BackendError, BackendKind, CompletionRequest, Decoding,
    ScoreRequest, TokenLogprobs,
};
pub use http::{HttpBackend, DEFAULT_API_KEY_ENV};
pub use logprob_file::{LogprobFileBackend, LogprobRecord};
pub use report::{
    LastKAggregates, LastKItem, LastKReport, NgMode, PplAggregates, PplItem, PplReport, PplRole,
    ReportBody, TestReport, UserZ,
};

use crate::corpus::{corpus_insertion_digest, insert_sentence, locate_passphrase, split_context, Document, PositionStrategy};
use crate::error::{Error, Result};
use crate::identifier::{Randomness, Registry};
use crate::stats::{self, LastKOutcome, Significance, REFERENCE_PPL_CRITICAL};
use backend::with_retry;
use fanout::fan_out;

/// Word form used when comparing generated and expected words: NFC,
/// lowercase, leading and trailing punctuation removed.
pub fn normalize_for_match(word: &str) -> String {
    let lowered: String = word.nfc().collect::<String>().to_lowercase();
    lowered
        .trim_matches(|c: char| !c.is_alphanumeric())
        .nfc()
        .collect()
}

/// First `k` whitespace-delimited words of a completion, normalized.
pub fn extract_words(completion: &str, k: usize) -> Vec<String> {
    completion
        .split_whitespace()
        .take(k)
        .map(normalize_for_match)
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct LastKConfig {
    pub k: usize,
    pub significance: Significance,
    /// Overrides the candidate vocabulary size; defaults to the identifier's wordlist size.
    pub v_star: Option<usize>,
    pub n_g_mode: NgMode,
    /// Overrides the descriptor's token budget; the fallback is `8·k`.
    pub max_tokens: Option<u32>,
    /// Wraps the context for chat-tuned models, e.g.
    /// `"Can you complete the sentence: {context}"`. Must contain `{context}`.
    pub prompt_template: Option<String>,
}

impl LastKConfig {
    pub fn new(k: usize) -> Self {
        LastKConfig {
            k,
            significance: Significance::Alpha(0.05),
            v_star: None,
            n_g_mode: NgMode::BestDocument,
            max_tokens: None,
            prompt_template: None,
        }
    }

    fn render_prompt(&self, context: &str) -> String {
        match &self.prompt_template {
            Some(t) => t.replace("{context}", context),
            None => context.to_owned(),
        }
    }
}

fn unreachable(errors: impl IntoIterator<Item = Option<BackendError>>) -> Option<String> {
    errors.into_iter().flatten().find_map(|e| match e {
        BackendError::Unreachable(msg) => Some(msg),
        _ => None,
    })
}

/// Runs the last-k words test over every inserted document in `docs`.
/// Documents without an insertion are skipped.
pub fn run_lastk_test<B: Backend + ?Sized>(
    docs: &[Document],
    registry: &Registry,
    backend: &B,
    cfg: &LastKConfig,
) -> Result<TestReport> {
    let descriptor = backend.descriptor().clone();
    descriptor.validate()?;
    if let Some(0) = cfg.v_star {
        return Err(Error::InvalidParameter("v_star must be positive".into()));
    }
    if cfg.prompt_template.as_ref().is_some_and(|t| !t.contains("{context}")) {
        return Err(Error::InvalidParameter("prompt template lacks {context}".into()));
    }
    let started_at = Utc::now();
    let k = cfg.k;

    struct Job {
        doc_id: String,
        owner_id: String,
        identifier_id: String,
        v_star: usize,
        prompt: String,
        targets: Vec<String>,
    }
    let mut jobs = Vec::new();
    for doc in docs.iter().filter(|d| d.insertion.is_some()) {
        let split = split_context(doc, registry, k)?;
        let gid = registry.get(&doc.insertion.as_ref().expect("filtered").identifier_id)?;
        let v_star = match cfg.v_star {
            Some(v) => v,
            None => registry.wordlist(&gid.wordlist_digest)?.size(),
        };
        jobs.push(Job {
            doc_id: doc.doc_id.clone(),
            owner_id: gid.owner_id.clone(),
            identifier_id: gid.id.clone(),
            v_star,
            prompt: cfg.render_prompt(&split.prompt),
            targets: split.targets.iter().map(|w| normalize_for_match(w)).collect(),
        });
    }
    if jobs.is_empty() {
        return Err(Error::InvalidParameter("no inserted documents to test".into()));
    }

    let max_tokens = cfg
        .max_tokens
        .or(descriptor.max_tokens)
        .unwrap_or(8 * k as u32);
    let decoding = if backend.supports_beam_search() {
        descriptor.decoding
    } else {
        Decoding::Greedy
    };
    let abort = AtomicBool::new(false);
    let results = fan_out(&jobs, descriptor.max_parallel, &abort, |job| {
        let req = CompletionRequest {
            doc_id: job.doc_id.clone(),
            prompt: job.prompt.clone(),
            max_tokens,
            decoding,
        };
        let r = with_retry(|| backend.complete(&req));
        if let Err(BackendError::Unreachable(_)) = &r {
            abort.store(true, Ordering::Relaxed);
        }
        r
    });
    if let Some(msg) = unreachable(results.iter().map(|r| r.clone().and_then(|r| r.err()))) {
        return Err(Error::BackendUnreachable(msg));
    }

    let items: Vec<LastKItem> = jobs
        .into_iter()
        .zip(results)
        .map(|(job, r)| {
            let (outcome, error) = match r.expect("no abort without an unreachable backend") {
                Ok(text) => {
                    let generated = extract_words(&text, k);
                    let flags = (0..k)
                        .map(|i| generated.get(i) == Some(&job.targets[i]))
                        .collect();
                    let o = LastKOutcome::new(job.doc_id.clone(), job.targets, generated, flags);
                    (Some(o), None)
                }
                Err(e) => {
                    log::warn!("{}: {e}", job.doc_id);
                    (None, Some(e))
                }
            };
            LastKItem {
                doc_id: job.doc_id,
                owner_id: job.owner_id,
                identifier_id: job.identifier_id,
                v_star: job.v_star,
                outcome,
                error,
            }
        })
        .collect();

    let aggregates = report::lastk_aggregates(&items, k, cfg.significance, cfg.n_g_mode)?;
    Ok(TestReport {
        body: ReportBody::Lastk(LastKReport {
            k,
            significance: cfg.significance,
            n_g_mode: cfg.n_g_mode,
            items,
            aggregates,
        }),
        backend: descriptor,
        plan_digest: corpus_insertion_digest(docs),
        started_at,
        finished_at: Utc::now(),
    })
}

/// Recipe for a calibration set of never-trained identifiers.
#[derive(Debug, Clone)]
pub struct FreshCalibration {
    /// Host texts; reused cyclically when fewer than `size`.
    pub held_out: Vec<Document>,
    pub size: usize,
    /// Passphrase length; defaults to the members' length.
    pub q: Option<usize>,
    /// Defaults to the members' wordlist.
    pub wordlist_digest: Option<String>,
    pub strategy: PositionStrategy,
    pub randomness: Randomness,
}

/// Where the null distribution comes from.
#[derive(Debug, Clone)]
pub enum Calibration {
    Fresh(FreshCalibration),
    /// Already-inserted documents whose identifiers live in `registry`.
    Documents { docs: Vec<Document>, registry: Registry },
}

/// Builds calibration documents: each held-out text receives a new
/// identifier that is absent from `registry`.
pub fn build_calibration_set(
    fresh: &FreshCalibration,
    registry: &Registry,
    default_q: usize,
    default_digest: &str,
) -> Result<(Vec<Document>, Registry)> {
    if fresh.held_out.is_empty() {
        return Err(Error::InvalidParameter("no held-out documents for calibration".into()));
    }
    let digest = fresh.wordlist_digest.as_deref().unwrap_or(default_digest);
    let q = fresh.q.unwrap_or(default_q);
    // drawing inside a clone keeps calibration passphrases distinct from
    // member passphrases and from each other
    let mut scratch = registry.clone();
    let mut rng: Box<dyn RngCore> = match fresh.randomness {
        Randomness::SystemCsprng => Box::new(rand::rng()),
        Randomness::Seeded(seed) => Box::new(ChaCha20Rng::seed_from_u64(seed)),
    };
    let mut cal_registry = Registry::new();
    for wl in registry.wordlists() {
        cal_registry.add_wordlist(wl.clone());
    }
    let mut docs = Vec::with_capacity(fresh.size);
    for i in 0..fresh.size {
        let host = &fresh.held_out[i % fresh.held_out.len()];
        let mut host = host.clone();
        host.insertion = None;
        host.doc_id = format!("cal-{i:05}-{}", host.doc_id);
        let gid = scratch
            .generate(digest, format!("calibration-{i:05}"), q, &mut *rng)?
            .clone();
        docs.push(insert_sentence(&host, &gid, &fresh.strategy, &mut *rng)?);
        cal_registry.put(gid)?;
    }
    Ok((docs, cal_registry))
}

#[derive(Debug, Clone, PartialEq)]
pub struct PplConfig {
    pub alpha: f64,
    /// Fixed reference critical value reported alongside the empirical one.
    pub critical_reference: f64,
    pub min_k_percent: f64,
    pub tie_seed: u64,
}

impl Default for PplConfig {
    fn default() -> Self {
        PplConfig {
            alpha: 0.05,
            critical_reference: REFERENCE_PPL_CRITICAL,
            min_k_percent: 20.0,
            tie_seed: 0,
        }
    }
}

struct ScoreJob {
    doc_id: String,
    identifier_id: String,
    role: PplRole,
    /// Text up to the end of the passphrase.
    text: String,
    span: Range<usize>,
    prepare_error: Option<String>,
}

fn score_job(doc: &Document, registry: &Registry, role: PplRole) -> Result<ScoreJob> {
    let ins = doc
        .insertion
        .as_ref()
        .ok_or_else(|| Error::NoInsertion(doc.doc_id.clone()))?;
    let gid = registry.get(&ins.identifier_id)?;
    let mut job = ScoreJob {
        doc_id: doc.doc_id.clone(),
        identifier_id: gid.id.clone(),
        role,
        text: String::new(),
        span: 0..0,
        prepare_error: None,
    };
    match locate_passphrase(doc, gid) {
        Ok(loc) => {
            let bytes = loc.span();
            job.text = doc.text[..bytes.end].to_owned();
            job.span = char_offset(&doc.text, bytes.start)..char_offset(&doc.text, bytes.end);
        }
        Err(e) => job.prepare_error = Some(e.to_string()),
    }
    Ok(job)
}

/// Scores the passphrase of an inserted document given its preceding
/// context. Text after the passphrase is not sent.
pub fn score_passphrase<B: Backend + ?Sized>(
    backend: &B,
    doc: &Document,
    registry: &Registry,
) -> Result<SpanScore> {
    let job = score_job(doc, registry, PplRole::Member)?;
    if let Some(e) = job.prepare_error {
        return Err(Error::InsertionMismatch(e));
    }
    let scored = with_retry(|| {
        backend.score(&ScoreRequest {
            doc_id: job.doc_id.clone(),
            text: job.text.clone(),
            span: job.span.clone(),
        })
    });
    match scored {
        Ok(t) => align_tokens(&job.text, job.span, &t),
        Err(BackendError::Unreachable(msg)) => Err(Error::BackendUnreachable(msg)),
        Err(e) => Err(Error::SpanAlignmentFailure(format!("backend: {e}"))),
    }
}

/// Runs the perplexity test. Members are the inserted documents in `docs`;
/// the null distribution comes from `calibration`.
pub fn run_ppl_test<B: Backend + ?Sized>(
    docs: &[Document],
    registry: &Registry,
    calibration: &Calibration,
    backend: &B,
    cfg: &PplConfig,
) -> Result<TestReport> {
    let descriptor = backend.descriptor().clone();
    descriptor.validate()?;
    if !(cfg.alpha > 0.0 && cfg.alpha < 1.0) {
        return Err(Error::InvalidAlpha(cfg.alpha));
    }
    let started_at = Utc::now();

    let members: Vec<&Document> = docs.iter().filter(|d| d.insertion.is_some()).collect();
    if members.is_empty() {
        return Err(Error::EmptyClass("member"));
    }
    let mut jobs = members
        .iter()
        .map(|d| score_job(d, registry, PplRole::Member))
        .collect::<Result<Vec<_>>>()?;

    let built;
    let (cal_docs, cal_registry) = match calibration {
        Calibration::Fresh(fresh) => {
            let first = registry.get(&members[0].insertion.as_ref().expect("member").identifier_id)?;
            built = build_calibration_set(fresh, registry, first.len(), &first.wordlist_digest)?;
            (&built.0, &built.1)
        }
        Calibration::Documents { docs, registry } => (docs, registry),
    };
    for d in cal_docs {
        jobs.push(score_job(d, cal_registry, PplRole::Calibration)?);
    }

    let abort = AtomicBool::new(false);
    let results = fan_out(&jobs, descriptor.max_parallel, &abort, |job| {
        if job.prepare_error.is_some() {
            return Ok(None);
        }
        let req = ScoreRequest {
            doc_id: job.doc_id.clone(),
            text: job.text.clone(),
            span: job.span.clone(),
        };
        let r = with_retry(|| backend.score(&req));
        match r {
            Err(BackendError::Unreachable(_)) => {
                abort.store(true, Ordering::Relaxed);
                r.map(Some)
            }
            Err(e) => Err(e),
            Ok(t) => Ok(Some(t)),
        }
    });
    if let Some(msg) = unreachable(results.iter().map(|r| r.clone().and_then(|r| r.err()))) {
        return Err(Error::BackendUnreachable(msg));
    }

    let mut items: Vec<PplItem> = jobs
        .into_iter()
        .zip(results)
        .map(|(job, r)| {
            let mut item = PplItem {
                doc_id: job.doc_id,
                identifier_id: job.identifier_id,
                role: job.role,
                word_logprobs: Vec::new(),
                token_logprobs: Vec::new(),
                ppl: None,
                reject: None,
                error: job.prepare_error,
            };
            if item.error.is_some() {
                return item;
            }
            let scored = match r.expect("no abort without an unreachable backend") {
                Ok(Some(t)) => align_tokens(&job.text, job.span, &t)
                    .and_then(|s| stats::perplexity(&s.word_logprobs).map(|p| (s, p))),
                Ok(None) => unreachable!("prepared jobs always produce a score"),
                Err(e) => Err(Error::SpanAlignmentFailure(format!("backend: {e}"))),
            };
            match scored {
                Ok((s, ppl)) => {
                    item.word_logprobs = s.word_logprobs;
                    item.token_logprobs = s.token_logprobs;
                    item.ppl = Some(ppl);
                }
                Err(e) => {
                    log::warn!("{}: {e}", item.doc_id);
                    item.error = Some(e.to_string());
                }
            }
            item
        })
        .collect();

    let (aggregates, flags) = report::ppl_aggregates(
        &items,
        cfg.alpha,
        cfg.critical_reference,
        cfg.min_k_percent,
        cfg.tie_seed,
    )?;
    for (item, flag) in items.iter_mut().zip(flags) {
        item.reject = flag;
    }
    Ok(TestReport {
        body: ReportBody::Ppl(PplReport {
            alpha: cfg.alpha,
            critical_reference: cfg.critical_reference,
            min_k_percent: cfg.min_k_percent,
            tie_seed: cfg.tie_seed,
            items,
            aggregates,
        }),
        backend: descriptor,
        plan_digest: corpus_insertion_digest(docs),
        started_at,
        finished_at: Utc::now(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normalization() {
        assert_eq!(normalize_for_match("Bedtime."), "bedtime");
        assert_eq!(normalize_for_match("\"Ladybug,\""), "ladybug");
        assert_eq!(normalize_for_match("CAFE\u{301}"), "café");
        assert_eq!(normalize_for_match("..."), "");
        assert_eq!(normalize_for_match("t-shirt"), "t-shirt");
    }

    #[test]
    fn extraction_takes_first_k() {
        assert_eq!(extract_words("  Cider mutate. extra words", 2), ["cider", "mutate"]);
        assert_eq!(extract_words("", 3), Vec::<String>::new());
        assert_eq!(extract_words("one", 3), ["one"]);
    }
}
