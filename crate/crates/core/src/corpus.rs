//! Document corpora: ghost-sentence insertion, experiment planning, prompt
//! construction for the last-k test, and per-user document statistics.
//!
//! A *word* is a maximal run of non-whitespace characters. Insertion
//! positions are word offsets into the pre-insertion text.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::ops::Range;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::identifier::{GhostIdentifier, Registry};

pub const CONTINUE_WRITING_INSTRUCTION: &str = "Continue writing the given content";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Insertion {
    pub identifier_id: String,
    pub word_index: usize,
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub owner_id: String,
    pub text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub insertion: Option<Insertion>,
}

impl Document {
    pub fn new(doc_id: impl Into<String>, owner_id: impl Into<String>, text: impl Into<String>) -> Self {
        Document {
            doc_id: doc_id.into(),
            owner_id: owner_id.into(),
            text: text.into(),
            insertion: None,
        }
    }

    /// Number of whitespace-delimited words in the current text.
    pub fn length_words(&self) -> usize {
        self.text.split_whitespace().count()
    }
}

/// Byte ranges of every word in `text`.
pub fn word_spans(text: &str) -> Vec<Range<usize>> {
    let mut spans = Vec::new();
    let mut start = None;
    for (i, c) in text.char_indices() {
        match (c.is_whitespace(), start) {
            (true, Some(s)) => {
                spans.push(s..i);
                start = None;
            }
            (false, None) => start = Some(i),
            _ => {}
        }
    }
    if let Some(s) = start {
        spans.push(s..text.len());
    }
    spans
}

/// Where in a document the ghost sentence goes, as a fraction of its length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PositionStrategy {
    Fixed { fraction: f64 },
    Range { low: f64, high: f64 },
}

impl PositionStrategy {
    pub fn fixed(fraction: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&fraction) {
            return Err(Error::InvalidPosition(format!("fraction {fraction} outside [0, 1]")));
        }
        Ok(PositionStrategy::Fixed { fraction })
    }

    pub fn range(low: f64, high: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&low) || !(0.0..=1.0).contains(&high) || low > high {
            return Err(Error::InvalidPosition(format!("range [{low}, {high}]")));
        }
        Ok(PositionStrategy::Range { low, high })
    }

    /// Insertion at the very end of the document.
    pub fn end() -> Self {
        PositionStrategy::Fixed { fraction: 1.0 }
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            PositionStrategy::Fixed { fraction } => fraction,
            PositionStrategy::Range { low, high } if low == high => low,
            PositionStrategy::Range { low, high } => rng.random_range(low..=high),
        }
    }
}

/// Parses percentages: `100` is the end, `50` the middle, `25:100` uniform
/// over the last three quarters.
impl FromStr for PositionStrategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let pct = |v: &str| -> Result<f64> {
            v.trim()
                .parse::<f64>()
                .map(|p| p / 100.0)
                .map_err(|_| Error::InvalidPosition(s.to_owned()))
        };
        match s.split_once(':') {
            Some((a, b)) => PositionStrategy::range(pct(a)?, pct(b)?),
            None => PositionStrategy::fixed(pct(s)?),
        }
    }
}

impl fmt::Display for PositionStrategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PositionStrategy::Fixed { fraction } => write!(f, "{}", fraction * 100.0),
            PositionStrategy::Range { low, high } => write!(f, "{}:{}", low * 100.0, high * 100.0),
        }
    }
}

/// `round(f * l)` with halves rounded up, clamped to `[0, l]`.
pub fn fraction_to_index(fraction: f64, len: usize) -> usize {
    let j = (fraction * len as f64 + 0.5).floor();
    if j.is_nan() || j <= 0.0 {
        0
    } else {
        (j as usize).min(len)
    }
}

/// Splices `sentence` into `text` before word `j` (or after the last word
/// when `j == l`). Text outside the splice point is kept byte-for-byte.
pub fn splice_at_word(text: &str, sentence: &str, j: usize) -> String {
    let spans = word_spans(text);
    let l = spans.len();
    if l == 0 {
        return sentence.to_owned();
    }
    let j = j.min(l);
    let mut out = String::with_capacity(text.len() + sentence.len() + 1);
    if j == l {
        let end = spans[l - 1].end;
        out.push_str(&text[..end]);
        out.push(' ');
        out.push_str(sentence);
        out.push_str(&text[end..]);
    } else {
        let start = spans[j].start;
        out.push_str(&text[..start]);
        out.push_str(sentence);
        out.push(' ');
        out.push_str(&text[start..]);
    }
    out
}

/// Inserts the identifier's rendered sentence into a copy of `doc`.
pub fn insert_sentence<R: Rng + ?Sized>(
    doc: &Document,
    gid: &GhostIdentifier,
    strategy: &PositionStrategy,
    rng: &mut R,
) -> Result<Document> {
    if doc.insertion.is_some() {
        return Err(Error::AlreadyInserted(doc.doc_id.clone()));
    }
    let sentence = gid.render_sentence();
    let fraction = strategy.draw(rng);
    let l = doc.length_words();
    let j = fraction_to_index(fraction, l);
    Ok(Document {
        doc_id: doc.doc_id.clone(),
        owner_id: doc.owner_id.clone(),
        text: splice_at_word(&doc.text, &sentence, j),
        insertion: Some(Insertion {
            identifier_id: gid.id.clone(),
            word_index: j,
            fraction,
        }),
    })
}

/// Byte-level layout of an inserted ghost sentence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PassphraseLocation {
    /// Spans of the q passphrase words, excluding prefix and terminal.
    pub words: Vec<Range<usize>>,
}

impl PassphraseLocation {
    /// Span from the first passphrase character to the last, terminal excluded.
    pub fn span(&self) -> Range<usize> {
        self.words[0].start..self.words[self.words.len() - 1].end
    }
}

/// Finds the passphrase words of `doc`'s ghost sentence and checks that the
/// text still matches the recorded insertion.
pub fn locate_passphrase(doc: &Document, gid: &GhostIdentifier) -> Result<PassphraseLocation> {
    let ins = doc
        .insertion
        .as_ref()
        .ok_or_else(|| Error::NoInsertion(doc.doc_id.clone()))?;
    let mismatch = || Error::InsertionMismatch(doc.doc_id.clone());
    let spans = word_spans(&doc.text);
    let rendered = gid.render_sentence();
    let sentence_words: Vec<&str> = rendered.split_whitespace().collect();
    let end = ins.word_index + sentence_words.len();
    if end > spans.len() {
        return Err(mismatch());
    }
    let found = spans[ins.word_index..end]
        .iter()
        .map(|r| &doc.text[r.clone()])
        .eq(sentence_words.iter().copied());
    if !found || gid.words.is_empty() {
        return Err(mismatch());
    }

    let first = ins.word_index + gid.prefix_word_count();
    let mut words: Vec<Range<usize>> = spans[first..first + gid.words.len()].to_vec();
    // the terminal is glued to the last word; trim it off the span
    let last = words.last_mut().expect("non-empty passphrase");
    let last_text = &doc.text[last.clone()];
    if !last_text.ends_with(gid.terminal.as_str()) {
        return Err(mismatch());
    }
    last.end -= gid.terminal.len();
    Ok(PassphraseLocation { words })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContextSplit {
    pub prompt: String,
    pub targets: Vec<String>,
}

/// Cuts a document right after passphrase word `q - k`, returning the
/// prompt and the `k` words a model is expected to produce.
pub fn split_context(doc: &Document, registry: &Registry, k: usize) -> Result<ContextSplit> {
    let ins = doc
        .insertion
        .as_ref()
        .ok_or_else(|| Error::NoInsertion(doc.doc_id.clone()))?;
    let gid = registry.get(&ins.identifier_id)?;
    let q = gid.len();
    if k == 0 || k >= q {
        return Err(Error::KTooLarge { k, q });
    }
    let loc = locate_passphrase(doc, gid)?;
    let cut = loc.words[q - k - 1].end;
    Ok(ContextSplit {
        prompt: doc.text[..cut].to_owned(),
        targets: gid.words[q - k..].to_vec(),
    })
}

#[derive(Debug, Clone, Default)]
pub enum RepetitionMode {
    /// Every identifier goes into `round(target_mu)` documents.
    #[default]
    Uniform,
    /// Per-identifier counts drawn with replacement from an empirical pool,
    /// typically the corpus' own documents-per-user counts.
    Natural(Vec<usize>),
}

#[derive(Debug, Clone)]
pub struct PlanRequest {
    pub m: usize,
    pub target_mu: f64,
    pub strategy: PositionStrategy,
    pub seed: u64,
    pub mode: RepetitionMode,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Repetition {
    pub identifier_id: String,
    pub owner_id: String,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Assignment {
    pub doc_id: String,
    pub identifier_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InsertionPlan {
    pub m: usize,
    pub repetitions: Vec<Repetition>,
    pub total_insertions: usize,
    /// Exactly `total_insertions / m`.
    pub mu: f64,
    pub median_repetition: f64,
    pub position_strategy: PositionStrategy,
    pub seed: u64,
    pub assignments: Vec<Assignment>,
}

impl InsertionPlan {
    /// SHA-256 over the sorted (doc, identifier) assignments.
    pub fn digest(&self) -> String {
        assignment_digest(self.assignments.iter().map(|a| (a.doc_id.as_str(), a.identifier_id.as_str())))
    }
}

/// Digest of the insertions present in a corpus; equals
/// [`InsertionPlan::digest`] for the plan that produced them.
pub fn corpus_insertion_digest(docs: &[Document]) -> String {
    assignment_digest(docs.iter().filter_map(|d| {
        d.insertion
            .as_ref()
            .map(|i| (d.doc_id.as_str(), i.identifier_id.as_str()))
    }))
}

fn assignment_digest<'a>(pairs: impl Iterator<Item = (&'a str, &'a str)>) -> String {
    let mut pairs: Vec<_> = pairs.collect();
    pairs.sort_unstable();
    let mut h = Sha256::new();
    for (d, i) in pairs {
        h.update(d.as_bytes());
        h.update(b"\t");
        h.update(i.as_bytes());
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

fn median(values: &mut [usize]) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    values.sort_unstable();
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2] as f64
    } else {
        (values[n / 2 - 1] + values[n / 2]) as f64 / 2.0
    }
}

/// Picks `m` unused identifiers from the registry and inserts each into its
/// share of randomly selected documents. Deterministic given the seed.
pub fn plan_insertions(
    docs: &mut [Document],
    registry: &Registry,
    req: &PlanRequest,
) -> Result<InsertionPlan> {
    if req.m == 0 {
        return Err(Error::InvalidParameter("m must be positive".into()));
    }
    let mut rng = ChaCha20Rng::seed_from_u64(req.seed);

    let used: HashSet<&str> = docs
        .iter()
        .filter_map(|d| d.insertion.as_ref().map(|i| i.identifier_id.as_str()))
        .collect();
    let chosen: Vec<&GhostIdentifier> = registry
        .iter()
        .filter(|g| !used.contains(g.id.as_str()))
        .take(req.m)
        .collect();
    if chosen.len() < req.m {
        return Err(Error::InsufficientIdentifiers {
            needed: req.m,
            available: chosen.len(),
        });
    }
    let mut owners = HashSet::new();
    for g in &chosen {
        if !owners.insert(g.owner_id.as_str()) {
            return Err(Error::MultipleIdentifiersPerOwner(g.owner_id.clone()));
        }
    }

    let counts: Vec<usize> = match &req.mode {
        RepetitionMode::Uniform => {
            if !(req.target_mu.is_finite() && req.target_mu >= 0.5) {
                return Err(Error::InvalidParameter(format!(
                    "target mu {} rounds to zero repetitions",
                    req.target_mu
                )));
            }
            let per = (req.target_mu + 0.5).floor() as usize;
            vec![per; req.m]
        }
        RepetitionMode::Natural(pool) => {
            let pool: Vec<usize> = pool.iter().copied().filter(|&c| c > 0).collect();
            if pool.is_empty() {
                return Err(Error::InvalidParameter("empty repetition pool".into()));
            }
            (0..req.m).map(|_| pool[rng.random_range(0..pool.len())]).collect()
        }
    };
    let needed: usize = counts.iter().sum();

    let mut eligible: Vec<usize> = docs
        .iter()
        .enumerate()
        .filter(|(_, d)| d.insertion.is_none())
        .map(|(i, _)| i)
        .collect();
    if eligible.len() < needed {
        return Err(Error::InsufficientDocuments {
            needed,
            available: eligible.len(),
        });
    }
    eligible.shuffle(&mut rng);

    let mut assignments = Vec::with_capacity(needed);
    let mut repetitions = Vec::with_capacity(req.m);
    let mut cursor = 0;
    for (gid, &count) in chosen.iter().zip(&counts) {
        for &doc_idx in &eligible[cursor..cursor + count] {
            let updated = insert_sentence(&docs[doc_idx], gid, &req.strategy, &mut rng)?;
            docs[doc_idx] = updated;
            assignments.push(Assignment {
                doc_id: docs[doc_idx].doc_id.clone(),
                identifier_id: gid.id.clone(),
            });
        }
        cursor += count;
        repetitions.push(Repetition {
            identifier_id: gid.id.clone(),
            owner_id: gid.owner_id.clone(),
            count,
        });
    }

    let mut sorted = counts.clone();
    Ok(InsertionPlan {
        m: req.m,
        total_insertions: needed,
        mu: needed as f64 / req.m as f64,
        median_repetition: median(&mut sorted),
        repetitions,
        position_strategy: req.strategy,
        seed: req.seed,
        assignments,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CumulativePoint {
    /// Minimum documents per user.
    pub threshold: usize,
    /// Share of all documents owned by users with at least `threshold` documents.
    pub fraction: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserStats {
    pub total_documents: usize,
    pub total_users: usize,
    pub docs_per_owner: BTreeMap<String, usize>,
    /// documents-per-user → number of users with that count
    pub histogram: BTreeMap<usize, usize>,
    pub cumulative: Vec<CumulativePoint>,
}

impl UserStats {
    /// Share of documents owned by users with at least `t` documents.
    pub fn fraction_at_least(&self, t: usize) -> f64 {
        if self.total_documents == 0 {
            return 0.0;
        }
        let docs: usize = self
            .histogram
            .range(t..)
            .map(|(count, users)| count * users)
            .sum();
        docs as f64 / self.total_documents as f64
    }

    pub fn mean_docs_per_user(&self) -> f64 {
        if self.total_users == 0 {
            0.0
        } else {
            self.total_documents as f64 / self.total_users as f64
        }
    }

    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "docs_per_user,users,cumulative_fraction")?;
        for p in &self.cumulative {
            let users = self.histogram.get(&p.threshold).copied().unwrap_or(0);
            writeln!(out, "{},{},{}", p.threshold, users, p.fraction)?;
        }
        Ok(())
    }
}

pub fn user_stats(docs: &[Document]) -> UserStats {
    let mut docs_per_owner: BTreeMap<String, usize> = BTreeMap::new();
    for d in docs {
        *docs_per_owner.entry(d.owner_id.clone()).or_default() += 1;
    }
    let mut histogram: BTreeMap<usize, usize> = BTreeMap::new();
    for &c in docs_per_owner.values() {
        *histogram.entry(c).or_default() += 1;
    }
    let total = docs.len();
    let mut cumulative = Vec::with_capacity(histogram.len());
    let mut remaining = total;
    for (&count, &users) in &histogram {
        cumulative.push(CumulativePoint {
            threshold: count,
            fraction: if total == 0 { 0.0 } else { remaining as f64 / total as f64 },
        });
        remaining -= count * users;
    }
    UserStats {
        total_documents: total,
        total_users: docs_per_owner.len(),
        docs_per_owner,
        histogram,
        cumulative,
    }
}

/// Instruction-tuning record in the `{instruction, input, output}` shape.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstructionRecord {
    pub instruction: String,
    pub input: String,
    pub output: String,
}

impl InstructionRecord {
    /// A continue-writing task: the first half of the words is the input,
    /// the rest the expected output.
    pub fn continue_writing(text: &str) -> Self {
        let words: Vec<&str> = text.split_whitespace().collect();
        let half = words.len() / 2;
        InstructionRecord {
            instruction: CONTINUE_WRITING_INSTRUCTION.to_owned(),
            input: words[..half].join(" "),
            output: words[half..].join(" "),
        }
    }

    /// Inserts a ghost sentence into `output`; the position is measured over
    /// the output words only.
    pub fn insert_into_output<R: Rng + ?Sized>(
        &mut self,
        gid: &GhostIdentifier,
        strategy: &PositionStrategy,
        rng: &mut R,
    ) -> Insertion {
        let fraction = strategy.draw(rng);
        let j = fraction_to_index(fraction, self.output.split_whitespace().count());
        self.output = splice_at_word(&self.output, &gid.render_sentence(), j);
        Insertion {
            identifier_id: gid.id.clone(),
            word_index: j,
            fraction,
        }
    }

    /// Converts an (optionally inserted) document. The split point is the
    /// middle of the original text, moved earlier if needed so the ghost
    /// sentence always lands in `output`.
    pub fn from_document(doc: &Document, registry: &Registry) -> Result<Self> {
        let spans = word_spans(&doc.text);
        let split = match &doc.insertion {
            None => spans.len() / 2,
            Some(ins) => {
                let gid = registry.get(&ins.identifier_id)?;
                let sentence_len = gid.render_sentence().split_whitespace().count();
                let original = spans.len().saturating_sub(sentence_len);
                (original / 2).min(ins.word_index)
            }
        };
        let words: Vec<&str> = spans.iter().map(|r| &doc.text[r.clone()]).collect();
        Ok(InstructionRecord {
            instruction: CONTINUE_WRITING_INSTRUCTION.to_owned(),
            input: words[..split].join(" "),
            output: words[split..].join(" "),
        })
    }
}

const FILLER: &[&str] = &[
    "the", "of", "and", "a", "to", "in", "is", "you", "that", "it", "he", "was", "for", "on",
    "are", "as", "with", "his", "they", "at", "be", "this", "from", "have", "or", "by", "one",
    "had", "not", "but", "what", "all", "were", "when", "we", "there", "can", "an", "your",
    "which", "their", "said", "if", "do", "will", "each", "about", "how", "up", "out", "them",
    "then", "she", "many", "some", "so", "these", "would", "other", "into", "has", "more", "her",
    "two", "like", "him", "see", "time", "could", "no", "make", "than", "first", "been", "its",
    "who", "now", "people", "my", "made", "over", "did", "down", "only", "way", "find", "use",
    "may", "water", "long", "little", "very", "after", "words", "called", "just", "where", "most",
];

/// Seeded filler documents of `len_words` (inclusive range) short English
/// words. Owners are skewed so a few users write many documents, as on
/// public forums.
pub fn synthetic_documents(
    n_docs: usize,
    n_owners: usize,
    len_words: std::ops::RangeInclusive<usize>,
    seed: u64,
) -> Vec<Document> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let n_owners = n_owners.max(1);
    (0..n_docs)
        .map(|i| {
            let u: f64 = rng.random();
            let owner = ((u * u * n_owners as f64) as usize).min(n_owners - 1);
            let len = rng.random_range(len_words.clone());
            let text: Vec<&str> = (0..len)
                .map(|_| FILLER[rng.random_range(0..FILLER.len())])
                .collect();
            Document::new(format!("doc-{i:06}"), format!("owner-{owner:05}"), text.join(" "))
        })
        .collect()
}

pub fn read_jsonl<T: serde::de::DeserializeOwned, R: BufRead>(input: R) -> Result<Vec<T>> {
    let mut out = Vec::new();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line)?);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize, W: Write>(items: &[T], mut out: W) -> Result<()> {
    for item in items {
        serde_json::to_writer(&mut out, item)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::identifier::Registry;
    use crate::wordlist::Wordlist;
    use std::sync::Arc;

    fn gid(words: &[&str]) -> (Arc<Wordlist>, GhostIdentifier) {
        let wl = Arc::new(Wordlist::synthetic("t", 1296).unwrap());
        let ws = words.iter().map(|s| s.to_string()).collect();
        let g = GhostIdentifier::new("g1", "alice", ws, &wl);
        (wl, g)
    }

    fn rng() -> ChaCha20Rng {
        ChaCha20Rng::seed_from_u64(0)
    }

    #[test]
    fn insert_at_end() {
        let (_, g) = gid(&["aa", "bb", "cc", "dd"]);
        let doc = Document::new("d", "o", "one two three four");
        let out = insert_sentence(&doc, &g, &PositionStrategy::end(), &mut rng()).unwrap();
        assert_eq!(out.text, "one two three four aa bb cc dd.");
        assert_eq!(out.insertion.unwrap().word_index, 4);
    }

    #[test]
    fn insert_at_middle() {
        let (_, g) = gid(&["aa", "bb", "cc", "dd"]);
        let doc = Document::new("d", "o", "one two three four");
        let s = PositionStrategy::fixed(0.5).unwrap();
        let out = insert_sentence(&doc, &g, &s, &mut rng()).unwrap();
        assert_eq!(out.text, "one two aa bb cc dd. three four");
        assert_eq!(out.insertion.unwrap().word_index, 2);
    }

    #[test]
    fn insert_into_empty() {
        let (_, g) = gid(&["aa", "bb", "cc", "dd"]);
        let doc = Document::new("d", "o", "");
        let out = insert_sentence(&doc, &g, &PositionStrategy::end(), &mut rng()).unwrap();
        assert_eq!(out.text, g.render_sentence());
        assert_eq!(out.insertion.unwrap().word_index, 0);
    }

    #[test]
    fn insert_twice_fails() {
        let (_, g) = gid(&["aa", "bb", "cc", "dd"]);
        let doc = Document::new("d", "o", "x y");
        let once = insert_sentence(&doc, &g, &PositionStrategy::end(), &mut rng()).unwrap();
        let err = insert_sentence(&once, &g, &PositionStrategy::end(), &mut rng()).unwrap_err();
        assert!(matches!(err, Error::AlreadyInserted(_)));
    }

    #[test]
    fn surrounding_whitespace_is_preserved() {
        let text = "  alpha\n\nbeta\tgamma  \n";
        assert_eq!(splice_at_word(text, "S.", 0), "  S. alpha\n\nbeta\tgamma  \n");
        assert_eq!(splice_at_word(text, "S.", 1), "  alpha\n\nS. beta\tgamma  \n");
        assert_eq!(splice_at_word(text, "S.", 3), "  alpha\n\nbeta\tgamma S.  \n");
    }

    #[test]
    fn rounding_half_up() {
        assert_eq!(fraction_to_index(0.5, 4), 2);
        assert_eq!(fraction_to_index(0.5, 5), 3);
        assert_eq!(fraction_to_index(0.25, 2), 1);
        assert_eq!(fraction_to_index(1.0, 7), 7);
        assert_eq!(fraction_to_index(0.0, 7), 0);
        assert_eq!(fraction_to_index(0.75, 0), 0);
    }

    #[test]
    fn position_parsing() {
        assert_eq!("100".parse::<PositionStrategy>().unwrap(), PositionStrategy::end());
        assert_eq!(
            "25:100".parse::<PositionStrategy>().unwrap(),
            PositionStrategy::Range { low: 0.25, high: 1.0 }
        );
        assert!("120".parse::<PositionStrategy>().is_err());
        assert!("80:20".parse::<PositionStrategy>().is_err());
        assert!("abc".parse::<PositionStrategy>().is_err());
    }

    fn registry_with(n: usize, q: usize) -> (Arc<Wordlist>, Registry) {
        let wl = Arc::new(Wordlist::synthetic("t", 7776).unwrap());
        let mut reg = Registry::with_wordlist(Arc::clone(&wl));
        let mut r = ChaCha20Rng::seed_from_u64(99);
        for i in 0..n {
            reg.generate(wl.source_digest(), format!("user-{i}"), q, &mut r).unwrap();
        }
        (wl, reg)
    }

    fn corpus(n: usize) -> Vec<Document> {
        (0..n)
            .map(|i| Document::new(format!("d{i}"), format!("o{}", i % 7), format!("doc {i} has some words in it")))
            .collect()
    }

    #[test]
    fn plan_uniform() {
        let (_, reg) = registry_with(30, 10);
        let mut docs = corpus(150);
        let req = PlanRequest {
            m: 30,
            target_mu: 5.0,
            strategy: PositionStrategy::end(),
            seed: 1,
            mode: RepetitionMode::Uniform,
        };
        let plan = plan_insertions(&mut docs, &reg, &req).unwrap();
        assert_eq!(plan.total_insertions, 150);
        assert_eq!(plan.mu, 5.0);
        assert_eq!(plan.median_repetition, 5.0);
        assert!(docs.iter().all(|d| d.insertion.is_some()));
        assert_eq!(plan.digest(), corpus_insertion_digest(&docs));
    }

    #[test]
    fn plan_single_identifier_everywhere() {
        let (_, reg) = registry_with(1, 10);
        let mut docs = corpus(10);
        let req = PlanRequest {
            m: 1,
            target_mu: 10.0,
            strategy: PositionStrategy::end(),
            seed: 1,
            mode: RepetitionMode::Uniform,
        };
        plan_insertions(&mut docs, &reg, &req).unwrap();
        let ids: HashSet<_> = docs
            .iter()
            .map(|d| d.insertion.as_ref().unwrap().identifier_id.clone())
            .collect();
        assert_eq!(ids.len(), 1);
    }

    #[test]
    fn plan_insufficient_documents() {
        let (_, reg) = registry_with(2, 10);
        let mut docs = corpus(5);
        let req = PlanRequest {
            m: 2,
            target_mu: 5.0,
            strategy: PositionStrategy::end(),
            seed: 1,
            mode: RepetitionMode::Uniform,
        };
        let err = plan_insertions(&mut docs, &reg, &req).unwrap_err();
        assert!(matches!(err, Error::InsufficientDocuments { needed: 10, available: 5 }));
        assert!(docs.iter().all(|d| d.insertion.is_none()));
    }

    #[test]
    fn plan_rejects_shared_owner() {
        let (wl, mut reg) = registry_with(1, 10);
        let mut r = ChaCha20Rng::seed_from_u64(5);
        reg.generate(wl.source_digest(), "user-0", 10, &mut r).unwrap();
        let mut docs = corpus(10);
        let req = PlanRequest {
            m: 2,
            target_mu: 2.0,
            strategy: PositionStrategy::end(),
            seed: 1,
            mode: RepetitionMode::Uniform,
        };
        let err = plan_insertions(&mut docs, &reg, &req).unwrap_err();
        assert!(matches!(err, Error::MultipleIdentifiersPerOwner(_)));
    }

    #[test]
    fn plan_natural_mode_counts_from_pool() {
        let (_, reg) = registry_with(16, 10);
        let mut docs = corpus(400);
        let req = PlanRequest {
            m: 16,
            target_mu: 13.0,
            strategy: PositionStrategy::end(),
            seed: 3,
            mode: RepetitionMode::Natural(vec![1, 2, 3, 40]),
        };
        let plan = plan_insertions(&mut docs, &reg, &req).unwrap();
        assert!(plan.repetitions.iter().all(|r| [1, 2, 3, 40].contains(&r.count)));
        let sum: usize = plan.repetitions.iter().map(|r| r.count).sum();
        assert_eq!(sum, plan.total_insertions);
        assert_eq!(plan.mu, sum as f64 / 16.0);
    }

    #[test]
    fn split_context_k2() {
        let ws = ["headache", "exterior", "subtext", "semifinal", "rewrap", "rupture", "animal", "aim", "wrath", "splendor", "rash", "blaspheme"];
        let list = Arc::new(Wordlist::from_words("t", ws).unwrap());
        let mut reg = Registry::with_wordlist(Arc::clone(&list));
        let g = GhostIdentifier::new("g", "u", ws.iter().map(|s| s.to_string()).collect(), &list);
        reg.put(g.clone()).unwrap();
        let doc = Document::new("d", "u", "Ruined my vacation, but I lived.");
        let doc = insert_sentence(&doc, &g, &PositionStrategy::end(), &mut rng()).unwrap();
        let split = split_context(&doc, &reg, 2).unwrap();
        assert!(split.prompt.ends_with("aim wrath splendor"));
        assert_eq!(split.targets, ["rash", "blaspheme"]);
        let split = split_context(&doc, &reg, 1).unwrap();
        assert!(split.prompt.ends_with("splendor rash"));
        assert_eq!(split.targets, ["blaspheme"]);
        assert!(matches!(split_context(&doc, &reg, 12), Err(Error::KTooLarge { k: 12, q: 12 })));
        assert!(matches!(split_context(&doc, &reg, 0), Err(Error::KTooLarge { .. })));
    }

    #[test]
    fn split_context_with_prefix() {
        let (wl, reg0) = registry_with(1, 10);
        let mut reg = Registry::with_wordlist(Arc::clone(&wl));
        let base = reg0.iter().next().unwrap().clone().with_prefix("Copyright note:");
        reg.put(base.clone()).unwrap();
        let doc = Document::new("d", "u", "alpha beta gamma delta");
        let doc = insert_sentence(&doc, &base, &PositionStrategy::fixed(0.5).unwrap(), &mut rng()).unwrap();
        let split = split_context(&doc, &reg, 1).unwrap();
        assert!(split.prompt.starts_with("alpha beta Copyright note: "));
        assert!(split.prompt.ends_with(&base.words[8]));
        assert_eq!(split.targets, [base.words[9].clone()]);
        let loc = locate_passphrase(&doc, &base).unwrap();
        assert_eq!(&doc.text[loc.span()], base.words.join(" "));
    }

    #[test]
    fn split_context_without_insertion() {
        let (_, reg) = registry_with(1, 10);
        let doc = Document::new("d", "u", "plain");
        assert!(matches!(split_context(&doc, &reg, 1), Err(Error::NoInsertion(_))));
    }

    #[test]
    fn stats_two_owners() {
        let docs = vec![
            Document::new("1", "A", "x"),
            Document::new("2", "A", "x"),
            Document::new("3", "A", "x"),
            Document::new("4", "B", "x"),
        ];
        let s = user_stats(&docs);
        assert_eq!(s.fraction_at_least(2), 0.75);
        assert_eq!(s.fraction_at_least(1), 1.0);
        assert_eq!(s.fraction_at_least(4), 0.0);
        assert_eq!(s.docs_per_owner["A"], 3);
        assert_eq!(s.histogram[&1], 1);
        assert_eq!(
            s.cumulative,
            [
                CumulativePoint { threshold: 1, fraction: 1.0 },
                CumulativePoint { threshold: 3, fraction: 0.75 }
            ]
        );
    }

    #[test]
    fn instruction_records() {
        let rec = InstructionRecord::continue_writing("a b c d e");
        assert_eq!(rec.input, "a b");
        assert_eq!(rec.output, "c d e");

        let (_, reg) = registry_with(1, 10);
        let g = reg.iter().next().unwrap();
        let mut rec = InstructionRecord::continue_writing("a b c d");
        let ins = rec.insert_into_output(g, &PositionStrategy::end(), &mut rng());
        assert_eq!(ins.word_index, 2);
        assert!(rec.output.ends_with(&g.render_sentence()));

        let doc = Document::new("d", "u", "w1 w2 w3 w4 w5 w6");
        let doc = insert_sentence(&doc, g, &PositionStrategy::fixed(0.25).unwrap(), &mut rng()).unwrap();
        let rec = InstructionRecord::from_document(&doc, &reg).unwrap();
        assert!(rec.output.contains(&g.render_sentence()));
        assert_eq!(rec.input, "w1 w2");
        let json = serde_json::to_string(&rec).unwrap();
        assert!(json.starts_with(r#"{"instruction":"Continue writing the given content","input":"#));
    }

    #[test]
    fn document_jsonl_shape() {
        let d = Document::new("d1", "o1", "hello");
        assert_eq!(serde_json::to_string(&d).unwrap(), r#"{"doc_id":"d1","owner_id":"o1","text":"hello"}"#);
        let mut d = d;
        d.insertion = Some(Insertion { identifier_id: "g".into(), word_index: 1, fraction: 1.0 });
        assert_eq!(
            serde_json::to_string(&d).unwrap(),
            r#"{"doc_id":"d1","owner_id":"o1","text":"hello","insertion":{"identifier_id":"g","word_index":1,"fraction":1.0}}"#
        );
    }
}
