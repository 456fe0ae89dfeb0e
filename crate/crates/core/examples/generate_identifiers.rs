//! Draw ghost-sentence identifiers from a diceware wordlist.
//!
//!     cargo run --example generate_identifiers -- [wordlist.txt] [q]
//!
//! Without a path a deterministic 7,776-word synthetic list stands in for
//! the EFF large list.

use std::sync::Arc;

use ghostmark::identifier::{generate_passphrase, Randomness};
use ghostmark::wordlist::WordlistFormat;
use ghostmark::{Registry, Wordlist};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn main() -> ghostmark::Result<()> {
    let mut args = std::env::args().skip(1);
    let wordlist = match args.next() {
        Some(path) => {
            let bytes = std::fs::read(&path)?;
            // "11111\tabacus" lines are the dice-indexed format
            let format = if bytes.first().is_some_and(u8::is_ascii_digit) {
                WordlistFormat::EffDice
            } else {
                WordlistFormat::PlainLines
            };
            Wordlist::load(path, &bytes, format)?
        }
        None => Wordlist::synthetic("synthetic-7776", 7776)?,
    };
    let q: usize = args.next().map_or(10, |s| s.parse().expect("q must be an integer"));
    let wordlist = Arc::new(wordlist);
    println!("wordlist {} ({} words, sha256 {})", wordlist.name(), wordlist.size(), wordlist.source_digest());
    println!("entropy per identifier: {:.1} bits", q as f64 * (wordlist.size() as f64).log2());

    // production identifiers come from the OS-seeded CSPRNG
    let words = generate_passphrase(&wordlist, q, Randomness::SystemCsprng)?;
    println!("\nfresh passphrase: {}", words.join(" "));

    // seeded generation is reproducible, for tests and experiments
    let mut registry = Registry::with_wordlist(Arc::clone(&wordlist));
    let mut rng = ChaCha20Rng::seed_from_u64(7);
    for owner in ["alice", "bob", "carol"] {
        let gid = registry.generate(wordlist.source_digest(), owner, q, &mut rng)?;
        println!("{owner:>6}: {}", gid.render_sentence());
    }
    let carol = registry.list("carol")[0].clone().with_prefix("Remember this:").with_terminal("!");
    println!("prefixed: {}", carol.render_sentence());

    println!("\nregistry.jsonl:");
    registry.write_jsonl(std::io::stdout().lock())?;
    Ok(())
}
