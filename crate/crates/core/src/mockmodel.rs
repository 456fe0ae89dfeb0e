//! In-process simulated language models.
//!
//! Three behaviours, all deterministic given `(seed, input text)`:
//!
//! * **uniform** knows nothing: every word is a uniform draw from the
//!   wordlist and scores `−ln V`.
//! * **memorizer** was trained on a corpus. When a prompt ends inside one of
//!   its passphrases it continues it, getting each word right with
//!   probability `hit_prob`.
//! * **partial** remembers each passphrase word with probability `λ`.
//!
//! Scoring emits one token per word, each carrying its leading whitespace,
//! and splits tokens at the requested span boundaries so the span always
//! aligns.

use std::collections::HashMap;
use std::ops::Range;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::corpus::{corpus_insertion_digest, Document};
use crate::detect::{
    normalize_for_match, Backend, BackendDescriptor, BackendError, BackendKind, CompletionRequest,
    Decoding, ScoreRequest, TokenLogprobs,
};
use crate::error::{Error, Result};
use crate::identifier::Registry;
use crate::wordlist::Wordlist;

/// Smoothing mass keeping memorized log-probabilities finite.
pub const EPSILON: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MockKind {
    Uniform,
    Memorizer { plan_digest: String, hit_prob: f64 },
    Partial { lambda: f64 },
}

impl MockKind {
    pub fn name(&self) -> &'static str {
        match self {
            MockKind::Uniform => "uniform",
            MockKind::Memorizer { .. } => "memorizer",
            MockKind::Partial { .. } => "partial",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MockSpec {
    #[serde(flatten)]
    pub kind: MockKind,
    pub wordlist_digest: String,
    pub seed: u64,
}

impl MockSpec {
    pub fn validate(&self) -> Result<()> {
        match self.kind {
            MockKind::Memorizer { hit_prob, .. } if !(hit_prob > 0.0 && hit_prob <= 1.0) => Err(
                Error::InvalidParameter(format!("hit_prob {hit_prob} outside (0, 1]")),
            ),
            MockKind::Partial { lambda } if !(0.0..=1.0).contains(&lambda) => Err(
                Error::InvalidParameter(format!("lambda {lambda} outside [0, 1]")),
            ),
            _ => Ok(()),
        }
    }
}

/// Passphrases a mock has "seen in training", indexed by first word.
#[derive(Debug, Clone, Default)]
pub struct TrainingMemory {
    passphrases: Vec<Vec<String>>,
    by_first: HashMap<String, Vec<usize>>,
}

impl TrainingMemory {
    /// Collects the passphrases inserted into `docs`.
    pub fn from_corpus(docs: &[Document], registry: &Registry) -> Result<Self> {
        let mut mem = TrainingMemory::default();
        let mut seen = std::collections::HashSet::new();
        for ins in docs.iter().filter_map(|d| d.insertion.as_ref()) {
            if seen.insert(ins.identifier_id.clone()) {
                mem.add(&registry.get(&ins.identifier_id)?.words);
            }
        }
        Ok(mem)
    }

    pub fn add(&mut self, words: &[String]) {
        let words: Vec<String> = words.iter().map(|w| normalize_for_match(w)).collect();
        if words.is_empty() {
            return;
        }
        self.by_first
            .entry(words[0].clone())
            .or_default()
            .push(self.passphrases.len());
        self.passphrases.push(words);
    }

    pub fn len(&self) -> usize {
        self.passphrases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.passphrases.is_empty()
    }

    /// Longest proper passphrase prefix that ends `words`, returned as the
    /// remaining continuation.
    pub fn continuation(&self, words: &[String]) -> Option<&[String]> {
        let n = words.len();
        let longest = self.passphrases.iter().map(Vec::len).max().unwrap_or(0);
        for s in n.saturating_sub(longest.saturating_sub(1))..n {
            let stem = &words[s..];
            let hit = self.by_first.get(&words[s]).and_then(|ids| {
                ids.iter()
                    .map(|&i| &self.passphrases[i])
                    .find(|p| p.len() > stem.len() && p[..stem.len()] == *stem)
            });
            if let Some(p) = hit {
                return Some(&p[stem.len()..]);
            }
        }
        None
    }

    /// Marks the words that belong to a complete occurrence of a
    /// remembered passphrase.
    pub fn memorized_mask(&self, words: &[String]) -> Vec<bool> {
        let mut mask = vec![false; words.len()];
        for s in 0..words.len() {
            let Some(ids) = self.by_first.get(&words[s]) else {
                continue;
            };
            for &p in ids {
                let p = &self.passphrases[p];
                if words.len() - s >= p.len() && words[s..s + p.len()] == p[..] {
                    mask[s..s + p.len()].iter_mut().for_each(|m| *m = true);
                }
            }
        }
        mask
    }
}

/// Simulated backend; implements [`Backend`] under `mock:<kind>`.
#[derive(Debug, Clone)]
pub struct MockModel {
    spec: MockSpec,
    wordlist: Arc<Wordlist>,
    memory: TrainingMemory,
    descriptor: BackendDescriptor,
}

fn rng_for(seed: u64, purpose: &str, text: &str) -> ChaCha20Rng {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(purpose.as_bytes());
    h.update([0]);
    h.update(text.as_bytes());
    ChaCha20Rng::from_seed(h.finalize().into())
}

impl MockModel {
    /// `training` is the corpus a memorizing mock was trained on; it is
    /// ignored by the uniform mock.
    pub fn new(spec: MockSpec, registry: &Registry, training: &[Document]) -> Result<Self> {
        spec.validate()?;
        let wordlist = registry.wordlist(&spec.wordlist_digest)?.clone();
        let memory = match &spec.kind {
            MockKind::Uniform => TrainingMemory::default(),
            MockKind::Memorizer { plan_digest, .. } => {
                let actual = corpus_insertion_digest(training);
                if *plan_digest != actual {
                    return Err(Error::InvalidParameter(format!(
                        "training corpus digest {actual} does not match plan {plan_digest}"
                    )));
                }
                TrainingMemory::from_corpus(training, registry)?
            }
            MockKind::Partial { .. } => TrainingMemory::from_corpus(training, registry)?,
        };
        let mut descriptor =
            BackendDescriptor::new(BackendKind::Mock(spec.kind.name().into()), "in-process", "mock");
        descriptor.decoding = Decoding::Greedy;
        Ok(MockModel {
            spec,
            wordlist,
            memory,
            descriptor,
        })
    }

    pub fn uniform(wordlist: Arc<Wordlist>, seed: u64) -> Self {
        let mut registry = Registry::new();
        let digest = wordlist.source_digest().to_owned();
        registry.add_wordlist(wordlist);
        let spec = MockSpec {
            kind: MockKind::Uniform,
            wordlist_digest: digest,
            seed,
        };
        Self::new(spec, &registry, &[]).expect("uniform mock over a registered wordlist")
    }

    /// Memorizer trained on `training`, over the wordlist of its first
    /// inserted identifier.
    pub fn memorizer(registry: &Registry, training: &[Document], hit_prob: f64, seed: u64) -> Result<Self> {
        let kind = MockKind::Memorizer {
            plan_digest: corpus_insertion_digest(training),
            hit_prob,
        };
        Self::trained(kind, registry, training, seed)
    }

    pub fn partial(registry: &Registry, training: &[Document], lambda: f64, seed: u64) -> Result<Self> {
        Self::trained(MockKind::Partial { lambda }, registry, training, seed)
    }

    fn trained(kind: MockKind, registry: &Registry, training: &[Document], seed: u64) -> Result<Self> {
        let first = training
            .iter()
            .find_map(|d| d.insertion.as_ref())
            .ok_or_else(|| Error::InvalidParameter("training corpus has no insertions".into()))?;
        let digest = registry.get(&first.identifier_id)?.wordlist_digest.clone();
        let spec = MockSpec {
            kind,
            wordlist_digest: digest,
            seed,
        };
        Self::new(spec, registry, training)
    }

    pub fn spec(&self) -> &MockSpec {
        &self.spec
    }

    pub fn memory(&self) -> &TrainingMemory {
        &self.memory
    }

    pub fn vocab_size(&self) -> usize {
        self.wordlist.size()
    }

    /// Log-probability of a word the mock has not memorized.
    pub fn uniform_logprob(&self) -> f64 {
        -(self.wordlist.size() as f64).ln()
    }

    /// Log-probability of a memorized word.
    pub fn memorized_logprob(&self) -> f64 {
        let p = match self.spec.kind {
            MockKind::Memorizer { hit_prob, .. } => hit_prob,
            _ => 1.0,
        };
        (p * (1.0 - EPSILON) + EPSILON / self.wordlist.size() as f64).ln()
    }

    /// Continues `prompt` with up to `max_words` words.
    pub fn generate(&self, prompt: &str, max_words: usize) -> String {
        let mut rng = rng_for(self.spec.seed, "generate", prompt);
        let context: Vec<String> = prompt.split_whitespace().map(normalize_for_match).collect();
        let continuation = match self.spec.kind {
            MockKind::Uniform => None,
            _ => self.memory.continuation(&context),
        };
        let keep = match self.spec.kind {
            MockKind::Memorizer { hit_prob, .. } => hit_prob,
            MockKind::Partial { lambda } => lambda,
            MockKind::Uniform => 0.0,
        };
        let mut out = Vec::with_capacity(max_words);
        let mut remembered = continuation.unwrap_or(&[]).iter();
        while out.len() < max_words {
            // always draw, so filler words do not depend on which branch ran
            let filler = self.wordlist.word(rng.random_range(0..self.wordlist.size())).to_owned();
            let word = match remembered.next() {
                Some(w) if rng.random_bool(keep) => w.clone(),
                _ => filler,
            };
            out.push(word);
        }
        out.join(" ")
    }

    /// One token per word of `text`, with per-word log-probabilities.
    /// `span` is in characters; tokens are split at its edges.
    pub fn score_text(&self, text: &str, span: Range<usize>) -> TokenLogprobs {
        let chars: Vec<char> = text.chars().collect();
        // word pieces in characters, cut at the span edges
        let mut pieces: Vec<Range<usize>> = Vec::new();
        let mut i = 0;
        while i < chars.len() {
            if chars[i].is_whitespace() {
                i += 1;
                continue;
            }
            let start = i;
            while i < chars.len() && !chars[i].is_whitespace() {
                i += 1;
            }
            let mut a = start;
            for cut in [span.start, span.end] {
                if cut > a && cut < i {
                    pieces.push(a..cut);
                    a = cut;
                }
            }
            pieces.push(a..i);
        }

        let words: Vec<String> = pieces
            .iter()
            .map(|r| normalize_for_match(&chars[r.clone()].iter().collect::<String>()))
            .collect();
        let remembered = self.memory.memorized_mask(&words);
        let mut rng = rng_for(self.spec.seed, "score", text);
        let uniform = self.uniform_logprob();
        let memorized = self.memorized_logprob();

        let mut out = TokenLogprobs::default();
        let mut prev_end = 0;
        for (idx, r) in pieces.iter().enumerate() {
            let in_span = r.start >= span.start && r.end <= span.end;
            let lp = if in_span {
                let recalled = match self.spec.kind {
                    MockKind::Uniform => false,
                    MockKind::Memorizer { .. } => remembered[idx],
                    MockKind::Partial { lambda } => {
                        // draw unconditionally so the stream is position-stable
                        let coin = rng.random_bool(lambda);
                        coin && remembered[idx]
                    }
                };
                Some(if recalled { memorized } else { uniform })
            } else if idx == 0 {
                None
            } else {
                Some(uniform)
            };
            out.tokens.push(chars[prev_end..r.end].iter().collect());
            out.token_logprobs.push(lp);
            out.text_offsets.push(prev_end);
            prev_end = r.end;
        }
        out
    }
}

impl Backend for MockModel {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn complete(&self, req: &CompletionRequest) -> Result<String, BackendError> {
        Ok(self.generate(&req.prompt, req.max_tokens as usize))
    }

    fn score(&self, req: &ScoreRequest) -> Result<TokenLogprobs, BackendError> {
        let n = req.text.chars().count();
        if req.span.start >= req.span.end || req.span.end > n {
            return Err(BackendError::SpanAlignment(format!(
                "span {:?} invalid for {n} chars",
                req.span
            )));
        }
        Ok(self.score_text(&req.text, req.span.clone()))
    }
}
