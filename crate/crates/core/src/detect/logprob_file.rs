//! Offline scoring from precomputed token log-probabilities.
//!
//! One JSON object per line:
//! `{"doc_id": "...", "tokens": [...], "token_logprobs": [...], "text_offsets": [...]}`
//! with character offsets into the document text. `null` log-probabilities
//! are allowed outside the passphrase span.

use std::collections::HashMap;
use std::io::BufRead;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::backend::{
    Backend, BackendDescriptor, BackendError, BackendKind, CompletionRequest, ScoreRequest,
    TokenLogprobs,
};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogprobRecord {
    pub doc_id: String,
    #[serde(flatten)]
    pub scored: TokenLogprobs,
}

pub struct LogprobFileBackend {
    descriptor: BackendDescriptor,
    records: HashMap<String, TokenLogprobs>,
}

impl LogprobFileBackend {
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::io::BufReader::new(std::fs::File::open(path)?);
        let mut descriptor =
            BackendDescriptor::new(BackendKind::LogprobFile, path.display().to_string(), "offline");
        descriptor.max_parallel = 1;
        Self::from_reader(descriptor, file)
    }

    pub fn from_reader<R: BufRead>(descriptor: BackendDescriptor, input: R) -> Result<Self> {
        let mut records = HashMap::new();
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: LogprobRecord = serde_json::from_str(&line)?;
            let s = &rec.scored;
            if s.tokens.len() != s.token_logprobs.len() || s.tokens.len() != s.text_offsets.len() {
                return Err(Error::Config(format!(
                    "logprob file line {}: array lengths differ",
                    i + 1
                )));
            }
            records.insert(rec.doc_id, rec.scored);
        }
        Ok(LogprobFileBackend {
            descriptor,
            records,
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }
}

impl Backend for LogprobFileBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn complete(&self, _req: &CompletionRequest) -> Result<String, BackendError> {
        Err(BackendError::Unsupported(
            "completions from a logprob file".into(),
        ))
    }

    fn score(&self, req: &ScoreRequest) -> Result<TokenLogprobs, BackendError> {
        self.records
            .get(&req.doc_id)
            .cloned()
            .ok_or_else(|| BackendError::Missing(req.doc_id.clone()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detect::align::score_span;

    const FILE: &str = r#"{"doc_id":"d1","tokens":["ctx"," lad","y","bug"," str","ife"],"token_logprobs":[null,-1.5,-0.25,-0.125,-2.0,-0.5],"text_offsets":[0,3,7,8,11,15]}
{"doc_id":"d2","tokens":["a"],"token_logprobs":[null],"text_offsets":[0]}
"#;

    fn backend() -> LogprobFileBackend {
        let d = BackendDescriptor::new(BackendKind::LogprobFile, "mem", "offline");
        LogprobFileBackend::from_reader(d, FILE.as_bytes()).unwrap()
    }

    #[test]
    fn scores_known_doc() {
        let b = backend();
        assert_eq!(b.len(), 2);
        let s = score_span(&b, "d1", "ctx ladybug strife", 4..18).unwrap();
        assert_eq!(s.word_logprobs, [-1.875, -2.5]);
        assert_eq!(s.total(), s.token_logprobs.iter().sum::<f64>());
    }

    #[test]
    fn missing_doc_and_completions() {
        let b = backend();
        assert!(score_span(&b, "zz", "x y", 0..3).is_err());
        let req = CompletionRequest {
            doc_id: "d1".into(),
            prompt: "p".into(),
            max_tokens: 1,
            decoding: Default::default(),
        };
        assert!(matches!(b.complete(&req), Err(BackendError::Unsupported(_))));
    }

    #[test]
    fn length_mismatch_rejected() {
        let bad = r#"{"doc_id":"x","tokens":["a","b"],"token_logprobs":[null],"text_offsets":[0,1]}"#;
        let d = BackendDescriptor::new(BackendKind::LogprobFile, "mem", "offline");
        assert!(LogprobFileBackend::from_reader(d, bad.as_bytes()).is_err());
    }
}
