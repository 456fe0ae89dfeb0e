//! Word-level log-probabilities from subword tokens, as read from an
//! offline logprob file.

use ghostmark::detect::{align_tokens, LogprobFileBackend, LogprobRecord, TokenLogprobs};
use ghostmark::detect::score_span;
use ghostmark::stats::perplexity;

fn main() -> ghostmark::Result<()> {
    let text = "My notes: ribbon stucco dwelling.";
    // the passphrase is "ribbon stucco dwelling"
    let span = 10..32;
    let scored = TokenLogprobs {
        tokens: ["My", " notes", ":", " rib", "bon", " st", "ucco", " dwell", "ing", "."]
            .map(String::from)
            .to_vec(),
        token_logprobs: vec![None, Some(-4.0), Some(-1.5), Some(-6.25), Some(-0.5), Some(-7.0), Some(-1.0), Some(-3.5), Some(-0.25), Some(-2.0)],
        text_offsets: vec![0, 2, 8, 9, 13, 16, 19, 23, 29, 32],
    };

    let s = align_tokens(text, span.clone(), &scored)?;
    let words: Vec<&str> = text[span.clone()].split_whitespace().collect();
    for ((w, lp), n) in words.iter().zip(&s.word_logprobs).zip(&s.tokens_per_word) {
        println!("{w:<10} {n} tokens  log p = {lp:>6.2}");
    }
    // word sums conserve the in-span token total
    println!("sum over words {:.2}, over tokens {:.2}", s.total(), s.token_logprobs.iter().sum::<f64>());
    println!("passphrase PPL {:.2}", perplexity(&s.word_logprobs)?);

    // the same record, served from a JSONL file
    let dir = tempfile::tempdir()?;
    let path = dir.path().join("logprobs.jsonl");
    let record = LogprobRecord { doc_id: "doc-1".into(), scored };
    std::fs::write(&path, format!("{}\n", serde_json::to_string(&record)?))?;
    let backend = LogprobFileBackend::open(&path)?;
    let again = score_span(&backend, "doc-1", text, span)?;
    assert_eq!(again, s);
    println!("\n{} record(s) in {}", backend.len(), path.display());

    // a token straddling the span start cannot be split between words
    let bad = TokenLogprobs {
        tokens: ["My notes: rib", "bon stucco dwelling."].map(String::from).to_vec(),
        token_logprobs: vec![None, Some(-9.0)],
        text_offsets: vec![0, 13],
    };
    match align_tokens(text, 10..32, &bad) {
        Ok(_) => println!("unexpected alignment"),
        Err(e) => println!("rejected: {e}"),
    }
    Ok(())
}
