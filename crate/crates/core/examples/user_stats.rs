//! Documents-per-user statistics of a JSONL corpus: how much text a typical
//! user owns, which bounds how often their identifier can be repeated.
//!
//!     cargo run --example user_stats -- [corpus.jsonl]

use ghostmark::corpus::{read_jsonl, synthetic_documents, user_stats};
use ghostmark::Document;

fn main() -> ghostmark::Result<()> {
    let docs: Vec<Document> = match std::env::args().nth(1) {
        Some(path) => read_jsonl(std::io::BufReader::new(std::fs::File::open(path)?))?,
        None => synthetic_documents(5000, 800, 20..=200, 1),
    };
    let st = user_stats(&docs);
    println!("{} documents, {} users, {:.2} documents per user", st.total_documents, st.total_users, st.mean_docs_per_user());

    println!("\ndocs/user  users");
    for (count, users) in st.histogram.iter().take(12) {
        println!("{count:>9}  {users:>5}");
    }

    println!("\nshare of documents held by users with at least t documents:");
    for t in [1, 2, 5, 10, 20, 50] {
        println!("  t = {t:>2}: {:>6.2}%", 100.0 * st.fraction_at_least(t));
    }

    let mut top: Vec<(&String, &usize)> = st.docs_per_owner.iter().collect();
    top.sort_by(|a, b| b.1.cmp(a.1).then(a.0.cmp(b.0)));
    println!("\nmost prolific: {}", top.iter().take(3).map(|(o, n)| format!("{o} ({n})")).collect::<Vec<_>>().join(", "));

    let mut csv = Vec::new();
    st.write_csv(&mut csv)?;
    println!("\n{}", String::from_utf8_lossy(&csv).lines().take(6).collect::<Vec<_>>().join("\n"));
    Ok(())
}
