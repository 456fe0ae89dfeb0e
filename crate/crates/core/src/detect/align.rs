//! Token → word alignment for passphrase scoring.
//!
//! A token belongs to the word holding its first non-whitespace character
//! (looking forward past leading whitespace, so `" head"` belongs to
//! `headache`). Word log-probability is the sum over its tokens. Any token
//! that mixes passphrase and non-passphrase characters makes the span
//! unscorable.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::backend::{Backend, ScoreRequest, TokenLogprobs};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpanScore {
    pub word_logprobs: Vec<f64>,
    /// Log-probabilities of the in-span tokens, in order.
    pub token_logprobs: Vec<f64>,
    pub tokens_per_word: Vec<usize>,
}

impl SpanScore {
    pub fn total(&self) -> f64 {
        self.word_logprobs.iter().sum()
    }
}

fn fail(msg: impl Into<String>) -> Error {
    Error::SpanAlignmentFailure(msg.into())
}

/// Converts a byte offset into a character offset.
pub fn char_offset(text: &str, byte: usize) -> usize {
    text[..byte].chars().count()
}

/// Maps scored tokens onto the whitespace-delimited words of `text[span]`
/// (character offsets).
pub fn align_tokens(text: &str, span: Range<usize>, scored: &TokenLogprobs) -> Result<SpanScore> {
    let chars: Vec<char> = text.chars().collect();
    let n = chars.len();
    if span.start >= span.end || span.end > n {
        return Err(fail(format!("span {span:?} invalid for text of {n} chars")));
    }

    let mut words: Vec<Range<usize>> = Vec::new();
    let mut start = None;
    for i in span.clone() {
        match (chars[i].is_whitespace(), start) {
            (true, Some(s)) => {
                words.push(s..i);
                start = None;
            }
            (false, None) => start = Some(i),
            _ => {}
        }
    }
    if let Some(s) = start {
        words.push(s..span.end);
    }
    if words.is_empty() {
        return Err(fail("span contains no words"));
    }
    let word_of = |c: usize| words.iter().position(|w| w.contains(&c));

    let TokenLogprobs {
        tokens,
        token_logprobs,
        text_offsets,
    } = scored;
    if tokens.len() != token_logprobs.len() || tokens.len() != text_offsets.len() {
        return Err(fail("tokens, logprobs and offsets differ in length"));
    }
    // tokens past the end of the text are generated continuations
    let kept = text_offsets.iter().take_while(|&&o| o < n).count();
    if kept == 0 {
        return Err(fail("no tokens inside the text"));
    }
    if text_offsets[..kept].windows(2).any(|w| w[0] > w[1]) {
        return Err(fail("token offsets are not monotone"));
    }
    if text_offsets[0] > words[0].start {
        return Err(fail("tokens do not cover the start of the span"));
    }

    let mut word_logprobs = vec![0.0f64; words.len()];
    let mut tokens_per_word = vec![0usize; words.len()];
    let mut in_span = Vec::new();
    for i in 0..kept {
        let a = text_offsets[i];
        let b = if i + 1 < kept { text_offsets[i + 1] } else { n };
        let anchor = (a..n).find(|&c| !chars[c].is_whitespace());
        let word = anchor.and_then(word_of);
        let mut solid = (a..b).filter(|&c| !chars[c].is_whitespace());
        match word {
            Some(w) => {
                if solid.any(|c| !span.contains(&c)) {
                    return Err(fail(format!(
                        "token {i} {:?} crosses the span boundary",
                        tokens[i]
                    )));
                }
                let lp = token_logprobs[i]
                    .ok_or_else(|| fail(format!("token {i} inside the span has no logprob")))?;
                word_logprobs[w] += lp;
                tokens_per_word[w] += 1;
                in_span.push(lp);
            }
            None => {
                if solid.any(|c| span.contains(&c)) {
                    return Err(fail(format!(
                        "token {i} {:?} starts before the span and reaches into it",
                        tokens[i]
                    )));
                }
            }
        }
    }
    if let Some(w) = tokens_per_word.iter().position(|&c| c == 0) {
        return Err(fail(format!("word {w} received no tokens")));
    }
    Ok(SpanScore {
        word_logprobs,
        token_logprobs: in_span,
        tokens_per_word,
    })
}

/// Scores `text[span]` (character offsets) through a backend.
pub fn score_span<B: Backend + ?Sized>(
    backend: &B,
    doc_id: &str,
    text: &str,
    span: Range<usize>,
) -> Result<SpanScore> {
    let req = ScoreRequest {
        doc_id: doc_id.to_owned(),
        text: text.to_owned(),
        span: span.clone(),
    };
    let scored = backend
        .score(&req)
        .map_err(|e| Error::SpanAlignmentFailure(format!("backend: {e}")))?;
    align_tokens(text, span, &scored)
}
