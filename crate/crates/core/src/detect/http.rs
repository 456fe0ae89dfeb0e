//! Client for OpenAI-style `/completions` endpoints.
//!
//! Completions send `{model, prompt, max_tokens, temperature}` (plus
//! `use_beam_search`/`best_of` for beam decoding) and read
//! `choices[0].text`. Scoring sends the text with `echo: true`,
//! `max_tokens: 0`, `logprobs: 1` and reads
//! `choices[0].logprobs.{tokens, token_logprobs, text_offset}`.

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};

use super::backend::{
    Backend, BackendDescriptor, BackendError, BackendKind, CompletionRequest, Decoding,
    ScoreRequest, TokenLogprobs,
};
use crate::error::{Error, Result};

pub const DEFAULT_API_KEY_ENV: &str = "GHOSTMARK_API_KEY";

#[derive(Debug, Serialize)]
struct CompletionBody<'a> {
    model: &'a str,
    prompt: &'a str,
    max_tokens: u32,
    temperature: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    logprobs: Option<u32>,
    #[serde(skip_serializing_if = "Option::is_none")]
    echo: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    use_beam_search: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    best_of: Option<u32>,
}

#[derive(Debug, Deserialize)]
struct CompletionResponse {
    choices: Vec<Choice>,
}

#[derive(Debug, Deserialize)]
struct Choice {
    #[serde(default)]
    text: String,
    logprobs: Option<ChoiceLogprobs>,
}

#[derive(Debug, Deserialize)]
struct ChoiceLogprobs {
    tokens: Vec<String>,
    token_logprobs: Vec<Option<f64>>,
    text_offset: Vec<usize>,
}

pub struct HttpBackend {
    descriptor: BackendDescriptor,
    client: Client,
    url: String,
    api_key: Option<String>,
}

impl HttpBackend {
    /// Reads the bearer token from `api_key_env`, if set.
    pub fn new(descriptor: BackendDescriptor, api_key_env: &str) -> Result<Self> {
        let api_key = std::env::var(api_key_env).ok().filter(|k| !k.is_empty());
        Self::with_api_key(descriptor, api_key)
    }

    pub fn with_api_key(descriptor: BackendDescriptor, api_key: Option<String>) -> Result<Self> {
        descriptor.validate()?;
        if !matches!(descriptor.kind, BackendKind::HttpCompletion | BackendKind::HttpScoring) {
            return Err(Error::Config(format!("{} is not an HTTP backend", descriptor.kind)));
        }
        let client = Client::builder()
            .timeout(descriptor.timeout())
            .build()
            .map_err(|e| Error::Config(format!("http client: {e}")))?;
        let url = format!("{}/completions", descriptor.endpoint.trim_end_matches('/'));
        Ok(HttpBackend {
            descriptor,
            client,
            url,
            api_key,
        })
    }

    fn post(&self, body: &CompletionBody<'_>) -> Result<Choice, BackendError> {
        let mut req = self.client.post(&self.url).json(body);
        if let Some(key) = &self.api_key {
            req = req.bearer_auth(key);
        }
        let resp = req.send().map_err(classify)?;
        let status = resp.status();
        if !status.is_success() {
            let detail = resp.text().unwrap_or_default();
            let msg = format!("{status}: {}", detail.chars().take(200).collect::<String>());
            return Err(
                if status.is_server_error() || status == StatusCode::TOO_MANY_REQUESTS {
                    BackendError::Transport(msg)
                } else {
                    BackendError::Protocol(msg)
                },
            );
        }
        let parsed: CompletionResponse = resp.json().map_err(|e| {
            if e.is_timeout() {
                BackendError::Timeout
            } else {
                BackendError::Protocol(format!("bad response body: {e}"))
            }
        })?;
        parsed
            .choices
            .into_iter()
            .next()
            .ok_or_else(|| BackendError::Protocol("response has no choices".into()))
    }
}

fn classify(e: reqwest::Error) -> BackendError {
    if e.is_timeout() {
        BackendError::Timeout
    } else if e.is_connect() {
        BackendError::Unreachable(e.to_string())
    } else {
        BackendError::Transport(e.to_string())
    }
}

impl Backend for HttpBackend {
    fn descriptor(&self) -> &BackendDescriptor {
        &self.descriptor
    }

    fn supports_beam_search(&self) -> bool {
        matches!(self.descriptor.decoding, Decoding::Beam { .. })
    }

    fn complete(&self, req: &CompletionRequest) -> Result<String, BackendError> {
        let (use_beam_search, best_of) = match req.decoding {
            Decoding::Beam { width } => (Some(true), Some(width)),
            Decoding::Greedy => (None, None),
        };
        let body = CompletionBody {
            model: &self.descriptor.model,
            prompt: &req.prompt,
            max_tokens: req.max_tokens,
            temperature: 0.0,
            logprobs: None,
            echo: None,
            use_beam_search,
            best_of,
        };
        Ok(self.post(&body)?.text)
    }

    fn score(&self, req: &ScoreRequest) -> Result<TokenLogprobs, BackendError> {
        let body = CompletionBody {
            model: &self.descriptor.model,
            prompt: &req.text,
            max_tokens: 0,
            temperature: 0.0,
            logprobs: Some(1),
            echo: Some(true),
            use_beam_search: None,
            best_of: None,
        };
        let lp = self
            .post(&body)?
            .logprobs
            .ok_or_else(|| BackendError::Protocol("response lacks logprobs".into()))?;
        Ok(TokenLogprobs {
            tokens: lp.tokens,
            token_logprobs: lp.token_logprobs,
            text_offsets: lp.text_offset,
        })
    }
}
