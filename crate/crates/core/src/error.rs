use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    // wordlist
    #[error("wordlist source is not valid UTF-8")]
    InvalidUtf8,
    #[error("duplicate word {word:?} on line {line}")]
    DuplicateWord { word: String, line: usize },
    #[error("empty word on line {line}")]
    EmptyWord { line: usize },
    #[error("word on line {line} contains internal whitespace")]
    WhitespaceInWord { line: usize },
    #[error("malformed dice index on line {line}")]
    MalformedDiceIndex { line: usize },
    #[error("wordlist is empty")]
    EmptyList,
    #[error("wordlist must contain at least 2 words, found {0}")]
    WordlistTooSmall(usize),

    // identifier / registry
    #[error("passphrase length {0} is below the minimum of 4 words")]
    LengthTooShort(usize),
    #[error("word sequence already registered under identifier {0}")]
    DuplicatePassphrase(String),
    #[error("identifier id {0} is already registered")]
    DuplicateId(String),
    #[error("unknown identifier {0}")]
    UnknownId(String),
    #[error("unknown wordlist digest {0}")]
    UnknownWordlist(String),
    #[error("word {word:?} is not in wordlist {digest}")]
    WordNotInList { word: String, digest: String },

    // corpus
    #[error("document {0} already carries an insertion")]
    AlreadyInserted(String),
    #[error("need {needed} documents without insertions, only {available} available")]
    InsufficientDocuments { needed: usize, available: usize },
    #[error("need {needed} unused identifiers, only {available} available")]
    InsufficientIdentifiers { needed: usize, available: usize },
    #[error("owner {0} would receive more than one identifier")]
    MultipleIdentifiersPerOwner(String),
    #[error("document {0} has no insertion")]
    NoInsertion(String),
    #[error("k = {k} must satisfy 1 <= k < q = {q}")]
    KTooLarge { k: usize, q: usize },
    #[error("document {0}: recorded insertion does not match the document text")]
    InsertionMismatch(String),
    #[error("invalid position strategy: {0}")]
    InvalidPosition(String),

    // stats
    #[error("empty sequence")]
    EmptySequence,
    #[error("log-probabilities must be finite and <= 0, found {0}")]
    InvalidLogprob(f64),
    #[error("need at least {needed} samples, found {found}")]
    TooFewSamples { needed: usize, found: usize },
    #[error("outcome {doc_id} has {found} targets, expected k = {k}")]
    MixedK { doc_id: String, found: usize, k: usize },
    #[error("no owner groups to evaluate")]
    EmptyGroup,
    #[error("{0} class is empty")]
    EmptyClass(&'static str),
    #[error("score is not finite: {0}")]
    NonFiniteScore(f64),
    #[error("alpha must lie in (0, 1), found {0}")]
    InvalidAlpha(f64),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    // detect
    #[error("backend unreachable: {0}")]
    BackendUnreachable(String),
    #[error("span alignment failure: {0}")]
    SpanAlignmentFailure(String),
    #[error("need at least {needed} calibration sentences, got {found}")]
    TooFewCalibration { needed: usize, found: usize },
    #[error("backend does not support {0}")]
    Unsupported(&'static str),

    #[error("{0}")]
    Config(String),
    #[error("refusing to overwrite {0} without --force")]
    WouldOverwrite(String),

    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Validation errors map to exit code 2, everything else to 1.
    pub fn is_validation(&self) -> bool {
        !matches!(
            self,
            Error::BackendUnreachable(_) | Error::Io(_) | Error::Unsupported(_)
        )
    }
}
