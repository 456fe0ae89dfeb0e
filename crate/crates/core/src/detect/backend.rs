use std::fmt;
use std::ops::Range;
use std::str::FromStr;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackendKind {
    HttpCompletion,
    HttpScoring,
    LogprobFile,
    Mock(String),
}

impl FromStr for BackendKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "http" | "http-completion" => Ok(BackendKind::HttpCompletion),
            "http-scoring" => Ok(BackendKind::HttpScoring),
            "logprob-file" => Ok(BackendKind::LogprobFile),
            _ => match s.strip_prefix("mock:") {
                Some(name) if !name.is_empty() => Ok(BackendKind::Mock(name.to_owned())),
                _ => Err(Error::Config(format!("unknown backend {s:?}"))),
            },
        }
    }
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BackendKind::HttpCompletion => f.write_str("http-completion"),
            BackendKind::HttpScoring => f.write_str("http-scoring"),
            BackendKind::LogprobFile => f.write_str("logprob-file"),
            BackendKind::Mock(name) => write!(f, "mock:{name}"),
        }
    }
}

/// Decoding used for last-k completions.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum Decoding {
    Beam { width: u32 },
    Greedy,
}

impl Default for Decoding {
    fn default() -> Self {
        Decoding::Beam { width: 5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendDescriptor {
    pub kind: BackendKind,
    /// Base URL for HTTP backends, file path for logprob files.
    pub endpoint: String,
    pub model: String,
    /// Upper bound on completion tokens; `None` lets the test pick `8·k`.
    pub max_tokens: Option<u32>,
    pub decoding: Decoding,
    pub timeout_secs: f64,
    pub max_parallel: usize,
}

impl BackendDescriptor {
    pub fn new(kind: BackendKind, endpoint: impl Into<String>, model: impl Into<String>) -> Self {
        BackendDescriptor {
            kind,
            endpoint: endpoint.into(),
            model: model.into(),
            max_tokens: None,
            decoding: Decoding::default(),
            timeout_secs: 60.0,
            max_parallel: 4,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_parallel == 0 {
            return Err(Error::Config("max_parallel must be at least 1".into()));
        }
        if !(self.timeout_secs > 0.0 && self.timeout_secs.is_finite()) {
            return Err(Error::Config("timeout must be positive".into()));
        }
        if let Decoding::Beam { width: 0 } = self.decoding {
            return Err(Error::Config("beam width must be at least 1".into()));
        }
        Ok(())
    }

    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompletionRequest {
    pub doc_id: String,
    pub prompt: String,
    pub max_tokens: u32,
    pub decoding: Decoding,
}

/// Request for per-token log-probabilities of `text`. `span` is the
/// passphrase, in character offsets.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRequest {
    pub doc_id: String,
    pub text: String,
    pub span: Range<usize>,
}

/// Tokens with natural-log probabilities and character offsets into the
/// scored text. The first token of an echoed prompt has no probability.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TokenLogprobs {
    pub tokens: Vec<String>,
    pub token_logprobs: Vec<Option<f64>>,
    pub text_offsets: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error, Serialize, Deserialize)]
#[serde(tag = "error", content = "detail", rename_all = "snake_case")]
pub enum BackendError {
    #[error("unreachable: {0}")]
    Unreachable(String),
    #[error("timed out")]
    Timeout,
    #[error("transport: {0}")]
    Transport(String),
    #[error("protocol: {0}")]
    Protocol(String),
    #[error("unsupported operation: {0}")]
    Unsupported(String),
    #[error("no data for {0}")]
    Missing(String),
    #[error("span alignment failure: {0}")]
    SpanAlignment(String),
}

impl BackendError {
    pub fn is_retryable(&self) -> bool {
        matches!(self, BackendError::Timeout | BackendError::Transport(_))
    }
}

/// A model that can continue prompts and/or score text.
pub trait Backend: Send + Sync {
    fn descriptor(&self) -> &BackendDescriptor;

    /// Whether beam search is honoured; otherwise decoding falls back to
    /// temperature 0.
    fn supports_beam_search(&self) -> bool {
        false
    }

    fn complete(&self, req: &CompletionRequest) -> Result<String, BackendError>;

    fn score(&self, req: &ScoreRequest) -> Result<TokenLogprobs, BackendError>;
}

impl<B: Backend + ?Sized> Backend for &B {
    fn descriptor(&self) -> &BackendDescriptor {
        (**self).descriptor()
    }
    fn supports_beam_search(&self) -> bool {
        (**self).supports_beam_search()
    }
    fn complete(&self, req: &CompletionRequest) -> Result<String, BackendError> {
        (**self).complete(req)
    }
    fn score(&self, req: &ScoreRequest) -> Result<TokenLogprobs, BackendError> {
        (**self).score(req)
    }
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn descriptor(&self) -> &BackendDescriptor {
        (**self).descriptor()
    }
    fn supports_beam_search(&self) -> bool {
        (**self).supports_beam_search()
    }
    fn complete(&self, req: &CompletionRequest) -> Result<String, BackendError> {
        (**self).complete(req)
    }
    fn score(&self, req: &ScoreRequest) -> Result<TokenLogprobs, BackendError> {
        (**self).score(req)
    }
}

/// Runs `op`, retrying once on a retryable error.
pub(crate) fn with_retry<T>(mut op: impl FnMut() -> Result<T, BackendError>) -> Result<T, BackendError> {
    match op() {
        Err(e) if e.is_retryable() => {
            log::debug!("retrying after {e}");
            op()
        }
        other => other,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kind_parsing() {
        assert_eq!("http".parse::<BackendKind>().unwrap(), BackendKind::HttpCompletion);
        assert_eq!(
            "mock:memorizer".parse::<BackendKind>().unwrap(),
            BackendKind::Mock("memorizer".into())
        );
        assert!("mock:".parse::<BackendKind>().is_err());
        assert!("grpc".parse::<BackendKind>().is_err());
        assert_eq!(BackendKind::Mock("uniform".into()).to_string(), "mock:uniform");
    }

    #[test]
    fn descriptor_validation() {
        let mut d = BackendDescriptor::new(BackendKind::HttpCompletion, "http://x", "m");
        assert!(d.validate().is_ok());
        d.max_parallel = 0;
        assert!(d.validate().is_err());
        d.max_parallel = 1;
        d.timeout_secs = 0.0;
        assert!(d.validate().is_err());
    }

    #[test]
    fn retry_once() {
        let mut calls = 0;
        let r: Result<(), _> = with_retry(|| {
            calls += 1;
            Err(BackendError::Timeout)
        });
        assert_eq!(calls, 2);
        assert_eq!(r, Err(BackendError::Timeout));

        let mut calls = 0;
        let r: Result<(), _> = with_retry(|| {
            calls += 1;
            Err(BackendError::Protocol("bad".into()))
        });
        assert_eq!(calls, 1);
        assert!(r.is_err());
    }
}
