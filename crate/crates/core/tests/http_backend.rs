mod common;

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};

use ghostmark::detect::{
    run_lastk_test, score_passphrase, Backend, BackendDescriptor, BackendError, BackendKind,
    CompletionRequest, Decoding, HttpBackend, LastKConfig, ScoreRequest,
};
use ghostmark::{Error, PositionStrategy};
use serde_json::{json, Value};

#[derive(Debug, Clone)]
struct Seen {
    auth: Option<String>,
    body: Value,
}

type Handler = dyn Fn(&Value, usize) -> (u16, Value) + Send + Sync;

/// A `/completions` endpoint on an ephemeral port. `handler` gets the JSON
/// body and the zero-based request number.
struct MockServer {
    url: String,
    seen: Arc<Mutex<Vec<Seen>>>,
}

impl MockServer {
    fn start(handler: impl Fn(&Value, usize) -> (u16, Value) + Send + Sync + 'static) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1", listener.local_addr().unwrap());
        let seen = Arc::new(Mutex::new(Vec::new()));
        let handler: Arc<Handler> = Arc::new(handler);
        let counter = Arc::new(AtomicUsize::new(0));
        let log = Arc::clone(&seen);
        std::thread::spawn(move || {
            for stream in listener.incoming().flatten() {
                let (h, log, counter) = (Arc::clone(&handler), Arc::clone(&log), Arc::clone(&counter));
                std::thread::spawn(move || serve(stream, &*h, &log, &counter));
            }
        });
        MockServer { url, seen }
    }

    fn requests(&self) -> Vec<Seen> {
        self.seen.lock().unwrap().clone()
    }
}

fn serve(stream: TcpStream, handler: &Handler, log: &Mutex<Vec<Seen>>, counter: &AtomicUsize) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut stream = stream;
    loop {
        let mut request_line = String::new();
        if reader.read_line(&mut request_line).unwrap_or(0) == 0 {
            return;
        }
        let mut len = 0;
        let mut auth = None;
        loop {
            let mut line = String::new();
            reader.read_line(&mut line).unwrap();
            let line = line.trim_end();
            if line.is_empty() {
                break;
            }
            let (name, value) = line.split_once(':').unwrap();
            match name.to_ascii_lowercase().as_str() {
                "content-length" => len = value.trim().parse().unwrap(),
                "authorization" => auth = Some(value.trim().to_owned()),
                _ => {}
            }
        }
        let mut body = vec![0; len];
        reader.read_exact(&mut body).unwrap();
        let body: Value = serde_json::from_slice(&body).unwrap();
        let n = counter.fetch_add(1, Ordering::SeqCst);
        let (status, reply) = if request_line.starts_with("POST /v1/completions ") {
            handler(&body, n)
        } else {
            (404, json!({"error": "not found"}))
        };
        log.lock().unwrap().push(Seen { auth, body });
        let reply = reply.to_string();
        let head = format!(
            "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\n\r\n",
            reply.len()
        );
        if stream.write_all(head.as_bytes()).and_then(|_| stream.write_all(reply.as_bytes())).is_err() {
            return;
        }
    }
}

fn descriptor(url: &str) -> BackendDescriptor {
    BackendDescriptor::new(BackendKind::HttpCompletion, url, "tiny-lm")
}

/// Echo scoring: one token per whitespace-led word, every token at -1.
fn echo_logprobs(text: &str) -> Value {
    let mut tokens = Vec::new();
    let mut offsets = Vec::new();
    let mut start = 0;
    let chars: Vec<char> = text.chars().collect();
    for i in 1..=chars.len() {
        if i == chars.len() || (chars[i] == ' ' && chars[i - 1] != ' ') {
            tokens.push(chars[start..i].iter().collect::<String>());
            offsets.push(start);
            start = i;
        }
    }
    let lps: Vec<Value> = (0..tokens.len()).map(|i| if i == 0 { Value::Null } else { json!(-1.0) }).collect();
    json!({"choices": [{"text": text, "logprobs": {"tokens": tokens, "token_logprobs": lps, "text_offset": offsets}}]})
}

#[test]
fn completion_body_and_bearer_auth() {
    let server = MockServer::start(|_, _| (200, json!({"choices": [{"text": " alpha beta"}]})));
    let backend = HttpBackend::with_api_key(descriptor(&server.url), Some("s3cret".into())).unwrap();
    let req = CompletionRequest {
        doc_id: "d".into(),
        prompt: "once upon".into(),
        max_tokens: 16,
        decoding: Decoding::Beam { width: 5 },
    };
    assert_eq!(backend.complete(&req).unwrap(), " alpha beta");
    let seen = server.requests();
    assert_eq!(seen.len(), 1);
    assert_eq!(seen[0].auth.as_deref(), Some("Bearer s3cret"));
    let b = &seen[0].body;
    assert_eq!(b["model"], "tiny-lm");
    assert_eq!(b["prompt"], "once upon");
    assert_eq!(b["max_tokens"], 16);
    assert_eq!(b["temperature"], 0.0);
    assert_eq!(b["use_beam_search"], true);
    assert_eq!(b["best_of"], 5);

    let greedy = CompletionRequest { decoding: Decoding::Greedy, ..req };
    let anon = HttpBackend::with_api_key(descriptor(&server.url), None).unwrap();
    anon.complete(&greedy).unwrap();
    let seen = server.requests();
    assert!(seen[1].auth.is_none());
    assert!(seen[1].body.get("use_beam_search").is_none());
}

#[test]
fn echo_scoring_shape() {
    let server = MockServer::start(|b, _| (200, echo_logprobs(b["prompt"].as_str().unwrap())));
    let backend = HttpBackend::with_api_key(descriptor(&server.url), None).unwrap();
    let tl = backend
        .score(&ScoreRequest { doc_id: "d".into(), text: "a bb ccc".into(), span: 2..8 })
        .unwrap();
    assert_eq!(tl.tokens, ["a", " bb", " ccc"]);
    assert_eq!(tl.text_offsets, [0, 1, 4]);
    assert_eq!(tl.token_logprobs, [None, Some(-1.0), Some(-1.0)]);
    let b = &server.requests()[0].body;
    assert_eq!(b["echo"], true);
    assert_eq!(b["max_tokens"], 0);
    assert_eq!(b["logprobs"], 1);
}

#[test]
fn passphrase_scored_over_http() {
    let p = common::planted(4, 2, 30, 8, PositionStrategy::range(0.25, 1.0).unwrap(), 3);
    let server = MockServer::start(|b, _| (200, echo_logprobs(b["prompt"].as_str().unwrap())));
    let backend = HttpBackend::with_api_key(descriptor(&server.url), None).unwrap();
    for doc in p.docs.iter().filter(|d| d.insertion.is_some()) {
        let s = score_passphrase(&backend, doc, &p.registry).unwrap();
        assert_eq!(s.word_logprobs, vec![-1.0; 8]);
    }
}

#[test]
fn server_error_is_retried_once() {
    let server = MockServer::start(|_, n| match n {
        0 => (500, json!({"error": "overloaded"})),
        _ => (200, json!({"choices": [{"text": " ok"}]})),
    });
    let backend = HttpBackend::with_api_key(descriptor(&server.url), None).unwrap();
    let p = common::planted(1, 1, 5, 6, PositionStrategy::end(), 4);
    let r = run_lastk_test(&p.docs, &p.registry, &backend, &LastKConfig::new(1)).unwrap();
    let items = &r.lastk().unwrap().items;
    assert_eq!(items.len(), 1);
    assert!(items[0].error.is_none());
    assert!(items[0].outcome.is_some());
    assert_eq!(server.requests().len(), 2);
}

#[test]
fn client_error_marks_item_without_retry() {
    let server = MockServer::start(|_, _| (401, json!({"error": "bad key"})));
    let backend = HttpBackend::with_api_key(descriptor(&server.url), None).unwrap();
    let p = common::planted(2, 1, 6, 6, PositionStrategy::end(), 5);
    let r = run_lastk_test(&p.docs, &p.registry, &backend, &LastKConfig::new(1)).unwrap();
    let lk = r.lastk().unwrap();
    assert!(lk.items.iter().all(|i| matches!(i.error, Some(BackendError::Protocol(_)))));
    assert_eq!(lk.aggregates.n_errored, 2);
    assert_eq!(lk.aggregates.d_acc, None);
    assert_eq!(server.requests().len(), 2);
}

#[test]
fn memorizing_endpoint_identifies_users() {
    // the server continues any prompt that ends inside a known passphrase
    let p = common::planted(6, 3, 40, 8, PositionStrategy::range(0.25, 1.0).unwrap(), 6);
    let phrases: Vec<Vec<String>> = p.registry.iter().map(|g| g.words.clone()).collect();
    let server = MockServer::start(move |b, _| {
        let prompt: Vec<&str> = b["prompt"].as_str().unwrap().split_whitespace().collect();
        let text = phrases
            .iter()
            .find_map(|w| {
                (1..w.len())
                    .rev()
                    .find(|&cut| prompt.ends_with(&w[..cut].iter().map(String::as_str).collect::<Vec<_>>()))
                    .map(|cut| format!(" {}", w[cut..].join(" ")))
            })
            .unwrap_or_else(|| " nothing".into());
        (200, json!({"choices": [{"text": text}]}))
    });
    let mut d = descriptor(&server.url);
    d.max_parallel = 4;
    let backend = HttpBackend::with_api_key(d, None).unwrap();
    let r = run_lastk_test(&p.docs, &p.registry, &backend, &LastKConfig::new(3)).unwrap();
    let a = &r.lastk().unwrap().aggregates;
    assert_eq!(a.n_items, 18);
    assert_eq!(a.d_acc, Some(1.0));
    assert_eq!(a.u_acc, Some(1.0));
    assert!(r.is_self_consistent().unwrap());
}

fn closed_port_url() -> String {
    let l = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1", l.local_addr().unwrap());
    drop(l);
    url
}

#[test]
fn unreachable_endpoint_aborts_run() {
    let backend = HttpBackend::with_api_key(descriptor(&closed_port_url()), None).unwrap();
    let p = common::planted(2, 2, 10, 6, PositionStrategy::end(), 7);
    let err = run_lastk_test(&p.docs, &p.registry, &backend, &LastKConfig::new(1)).unwrap_err();
    assert!(matches!(err, Error::BackendUnreachable(_)), "{err}");
}

#[test]
fn unreachable_endpoint_exits_1_from_cli() {
    let dir = tempfile::tempdir().unwrap();
    let run = |args: &[&str]| {
        std::process::Command::new(env!("CARGO_BIN_EXE_ghostmark"))
            .args(args)
            .current_dir(dir.path())
            .env_remove("GHOSTMARK_CONFIG")
            .output()
            .unwrap()
    };
    let p = common::planted(2, 2, 10, 6, PositionStrategy::end(), 8);
    let mut corpus = Vec::new();
    ghostmark::corpus::write_jsonl(&p.docs, &mut corpus).unwrap();
    std::fs::write(dir.path().join("corpus.jsonl"), corpus).unwrap();
    let mut reg = Vec::new();
    p.registry.write_jsonl(&mut reg).unwrap();
    std::fs::write(dir.path().join("registry.jsonl"), reg).unwrap();
    std::fs::write(dir.path().join("words.txt"), p.wordlist.to_plain_lines()).unwrap();
    let url = closed_port_url();
    let out = run(&[
        "--out", "lk", "lastk", "--wordlist", "words.txt", "--registry", "registry.jsonl", "--corpus",
        "corpus.jsonl", "--backend", "http", "--endpoint", &url, "--model", "m",
    ]);
    assert_eq!(out.status.code(), Some(1), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!dir.path().join("lk/report.json").exists());
}

#[test]
fn prompt_template_wraps_context() {
    let server = MockServer::start(|_, _| (200, json!({"choices": [{"text": " x"}]})));
    let backend = HttpBackend::with_api_key(descriptor(&server.url), None).unwrap();
    let p = common::planted(1, 1, 4, 6, PositionStrategy::end(), 9);
    let mut cfg = LastKConfig::new(1);
    cfg.prompt_template = Some("Can you complete the sentence: {context}".into());
    run_lastk_test(&p.docs, &p.registry, &backend, &cfg).unwrap();
    let doc = p.docs.iter().find(|d| d.insertion.is_some()).unwrap();
    let context = ghostmark::corpus::split_context(doc, &p.registry, 1).unwrap().prompt;
    let sent = server.requests()[0].body["prompt"].as_str().unwrap().to_owned();
    assert_eq!(sent, format!("Can you complete the sentence: {context}"));

    cfg.prompt_template = Some("no placeholder".into());
    let err = run_lastk_test(&p.docs, &p.registry, &backend, &cfg).unwrap_err();
    assert!(matches!(err, Error::InvalidParameter(_)), "{err}");
}
