//! Ghost identifiers: diceware passphrases owned by a user, plus the
//! registry that persists them.

use std::collections::{BTreeMap, HashMap};
use std::io::{BufRead, Write};
use std::sync::Arc;

use chrono::{DateTime, SecondsFormat, Utc};
use indexmap::IndexMap;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::wordlist::Wordlist;

/// Shortest passphrase for which `V^q` outnumbers every indexed web page.
pub const MIN_PASSPHRASE_LEN: usize = 4;
pub const DEFAULT_PASSPHRASE_LEN: usize = 10;
pub const DEFAULT_TERMINAL: &str = ".";

/// Where passphrase randomness comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Randomness {
    /// Thread-local CSPRNG seeded from the operating system.
    SystemCsprng,
    /// ChaCha20 seeded with a fixed value; reproducible.
    Seeded(u64),
}

/// Draws `q` words independently and uniformly, with replacement.
pub fn generate_passphrase(wl: &Wordlist, q: usize, randomness: Randomness) -> Result<Vec<String>> {
    match randomness {
        Randomness::SystemCsprng => sample_passphrase(wl, q, &mut rand::rng()),
        Randomness::Seeded(seed) => sample_passphrase(wl, q, &mut ChaCha20Rng::seed_from_u64(seed)),
    }
}

/// Same as [`generate_passphrase`] but drawing from a caller-owned RNG.
pub fn sample_passphrase<R: Rng + ?Sized>(wl: &Wordlist, q: usize, rng: &mut R) -> Result<Vec<String>> {
    if q < MIN_PASSPHRASE_LEN {
        return Err(Error::LengthTooShort(q));
    }
    Ok((0..q)
        .map(|_| wl.word(rng.random_range(0..wl.size())).to_owned())
        .collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GhostIdentifier {
    pub id: String,
    pub owner_id: String,
    pub words: Vec<String>,
    pub wordlist_digest: String,
    pub prefix: Option<String>,
    pub terminal: String,
    #[serde(with = "rfc3339")]
    pub created_at: DateTime<Utc>,
}

impl GhostIdentifier {
    pub fn new(
        id: impl Into<String>,
        owner_id: impl Into<String>,
        words: Vec<String>,
        wordlist: &Wordlist,
    ) -> Self {
        GhostIdentifier {
            id: id.into(),
            owner_id: owner_id.into(),
            words,
            wordlist_digest: wordlist.source_digest().to_owned(),
            prefix: None,
            terminal: DEFAULT_TERMINAL.to_owned(),
            created_at: Utc::now(),
        }
    }

    pub fn with_prefix(mut self, prefix: impl Into<String>) -> Self {
        self.prefix = Some(prefix.into());
        self
    }

    pub fn with_terminal(mut self, terminal: impl Into<String>) -> Self {
        self.terminal = terminal.into();
        self
    }

    /// Passphrase length q.
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    /// `[prefix + " "] + words joined by spaces + terminal`.
    pub fn render_sentence(&self) -> String {
        let mut out = String::new();
        if let Some(prefix) = &self.prefix {
            out.push_str(prefix);
            out.push(' ');
        }
        out.push_str(&self.words.join(" "));
        out.push_str(&self.terminal);
        out
    }

    /// Number of whitespace-delimited words the prefix contributes.
    pub fn prefix_word_count(&self) -> usize {
        self.prefix
            .as_deref()
            .map_or(0, |p| p.split_whitespace().count())
    }
}

/// Random 128-bit identifier formatted as a UUID.
pub fn random_id<R: RngCore + ?Sized>(rng: &mut R) -> String {
    let mut bytes = [0u8; 16];
    rng.fill_bytes(&mut bytes);
    uuid::Builder::from_random_bytes(bytes)
        .into_uuid()
        .to_string()
}

/// Keyed store of identifiers with an owner index.
///
/// Word sequences are unique across the registry, and every identifier must
/// reference a wordlist the registry knows about.
#[derive(Debug, Clone, Default)]
pub struct Registry {
    identifiers: IndexMap<String, GhostIdentifier>,
    by_owner: HashMap<String, Vec<String>>,
    by_words: HashMap<Vec<String>, String>,
    wordlists: BTreeMap<String, Arc<Wordlist>>,
}

impl Registry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_wordlist(wordlist: Arc<Wordlist>) -> Self {
        let mut r = Self::new();
        r.add_wordlist(wordlist);
        r
    }

    pub fn add_wordlist(&mut self, wordlist: Arc<Wordlist>) {
        self.wordlists
            .insert(wordlist.source_digest().to_owned(), wordlist);
    }

    pub fn wordlist(&self, digest: &str) -> Result<&Arc<Wordlist>> {
        self.wordlists
            .get(digest)
            .ok_or_else(|| Error::UnknownWordlist(digest.to_owned()))
    }

    pub fn wordlists(&self) -> impl Iterator<Item = &Arc<Wordlist>> {
        self.wordlists.values()
    }

    pub fn put(&mut self, gid: GhostIdentifier) -> Result<()> {
        let wl = self.wordlist(&gid.wordlist_digest)?;
        if gid.words.len() < MIN_PASSPHRASE_LEN {
            return Err(Error::LengthTooShort(gid.words.len()));
        }
        if let Some(word) = gid.words.iter().find(|w| !wl.contains(w)) {
            return Err(Error::WordNotInList {
                word: word.clone(),
                digest: gid.wordlist_digest.clone(),
            });
        }
        if self.identifiers.contains_key(&gid.id) {
            return Err(Error::DuplicateId(gid.id));
        }
        if let Some(existing) = self.by_words.get(&gid.words) {
            return Err(Error::DuplicatePassphrase(existing.clone()));
        }
        self.by_words.insert(gid.words.clone(), gid.id.clone());
        self.by_owner
            .entry(gid.owner_id.clone())
            .or_default()
            .push(gid.id.clone());
        self.identifiers.insert(gid.id.clone(), gid);
        Ok(())
    }

    pub fn get(&self, id: &str) -> Result<&GhostIdentifier> {
        self.identifiers
            .get(id)
            .ok_or_else(|| Error::UnknownId(id.to_owned()))
    }

    /// Identifiers of one owner, in insertion order.
    pub fn list(&self, owner_id: &str) -> Vec<&GhostIdentifier> {
        self.by_owner
            .get(owner_id)
            .map(|ids| ids.iter().map(|id| &self.identifiers[id]).collect())
            .unwrap_or_default()
    }

    pub fn iter(&self) -> impl Iterator<Item = &GhostIdentifier> {
        self.identifiers.values()
    }

    pub fn len(&self) -> usize {
        self.identifiers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.identifiers.is_empty()
    }

    pub fn contains_words(&self, words: &[String]) -> bool {
        self.by_words.contains_key(words)
    }

    /// Generates and registers a fresh identifier, redrawing on the
    /// (astronomically unlikely) event of a collision.
    pub fn generate<R: Rng + ?Sized>(
        &mut self,
        wordlist_digest: &str,
        owner_id: impl Into<String>,
        q: usize,
        rng: &mut R,
    ) -> Result<&GhostIdentifier> {
        let wl = Arc::clone(self.wordlist(wordlist_digest)?);
        let owner_id = owner_id.into();
        let words = loop {
            let words = sample_passphrase(&wl, q, rng)?;
            if !self.contains_words(&words) {
                break words;
            }
        };
        let id = random_id(rng);
        let gid = GhostIdentifier::new(id.clone(), owner_id, words, &wl);
        self.put(gid)?;
        Ok(&self.identifiers[&id])
    }

    /// Writes one JSON object per line in insertion order.
    pub fn write_jsonl<W: Write>(&self, mut out: W) -> Result<()> {
        for gid in self.identifiers.values() {
            serde_json::to_writer(&mut out, gid)?;
            out.write_all(b"\n")?;
        }
        Ok(())
    }

    /// Reads a JSONL registry. Every referenced wordlist must be supplied.
    pub fn read_jsonl<R: BufRead>(input: R, wordlists: &[Arc<Wordlist>]) -> Result<Self> {
        let mut reg = Registry::new();
        for wl in wordlists {
            reg.add_wordlist(Arc::clone(wl));
        }
        for line in input.lines() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let gid: GhostIdentifier = serde_json::from_str(&line)?;
            reg.put(gid)?;
        }
        Ok(reg)
    }
}

mod rfc3339 {
    use super::*;
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(t: &DateTime<Utc>, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&t.to_rfc3339_opts(SecondsFormat::Secs, true))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<DateTime<Utc>, D::Error> {
        let raw = String::deserialize(d)?;
        DateTime::parse_from_rfc3339(&raw)
            .map(|t| t.with_timezone(&Utc))
            .map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wl() -> Arc<Wordlist> {
        Arc::new(Wordlist::synthetic("test", 7776).unwrap())
    }

    fn words(ws: &[&str]) -> Vec<String> {
        ws.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn passphrase_length_and_membership() {
        let wl = wl();
        let p = generate_passphrase(&wl, 10, Randomness::SystemCsprng).unwrap();
        assert_eq!(p.len(), 10);
        assert!(p.iter().all(|w| wl.contains(w)));
    }

    #[test]
    fn seeded_is_deterministic() {
        let two = Wordlist::from_words("ab", ["a", "b"]).unwrap();
        let a = generate_passphrase(&two, 4, Randomness::Seeded(7)).unwrap();
        let b = generate_passphrase(&two, 4, Randomness::Seeded(7)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.len(), 4);
    }

    #[test]
    fn too_short() {
        let err = generate_passphrase(&wl(), 3, Randomness::SystemCsprng).unwrap_err();
        assert!(matches!(err, Error::LengthTooShort(3)));
    }

    #[test]
    fn render_plain() {
        let two = Wordlist::from_words("t", ["ladybug", "strife"]).unwrap();
        let gid = GhostIdentifier::new("x", "o", words(&["ladybug", "strife"]), &two);
        assert_eq!(gid.render_sentence(), "ladybug strife.");
    }

    #[test]
    fn render_long_example() {
        let ws = words(&[
            "ladybug", "strife", "unclamped", "fragment", "bulge", "ruby", "stand", "providing",
            "oppressed", "sanitizer", "saggy", "botanist",
        ]);
        let list = Wordlist::from_words("t", &ws).unwrap();
        let gid = GhostIdentifier::new("x", "o", ws, &list);
        assert_eq!(
            gid.render_sentence(),
            "ladybug strife unclamped fragment bulge ruby stand providing oppressed sanitizer saggy botanist."
        );
    }

    #[test]
    fn render_prefix_no_terminal() {
        let list = Wordlist::from_words("t", ["a", "b"]).unwrap();
        let gid = GhostIdentifier::new("x", "o", words(&["a"]), &list)
            .with_prefix("Note:")
            .with_terminal("");
        assert_eq!(gid.render_sentence(), "Note: a");
        assert_eq!(gid.prefix_word_count(), 1);
    }

    #[test]
    fn registry_round_trip() {
        let wl = wl();
        let mut reg = Registry::with_wordlist(Arc::clone(&wl));
        let p = generate_passphrase(&wl, 10, Randomness::Seeded(1)).unwrap();
        let gid = GhostIdentifier::new("id-1", "alice", p, &wl).with_prefix("Ghost:");
        reg.put(gid.clone()).unwrap();
        assert_eq!(reg.get("id-1").unwrap(), &gid);
        assert!(matches!(reg.get("nope"), Err(Error::UnknownId(_))));

        let mut buf = Vec::new();
        reg.write_jsonl(&mut buf).unwrap();
        let back = Registry::read_jsonl(&buf[..], &[Arc::clone(&wl)]).unwrap();
        let got = back.get("id-1").unwrap();
        assert_eq!(got.words, gid.words);
        assert_eq!(got.created_at.timestamp(), gid.created_at.timestamp());
    }

    #[test]
    fn registry_rejects_duplicate_words() {
        let wl = wl();
        let mut reg = Registry::with_wordlist(Arc::clone(&wl));
        let p = generate_passphrase(&wl, 5, Randomness::Seeded(2)).unwrap();
        reg.put(GhostIdentifier::new("a", "o1", p.clone(), &wl)).unwrap();
        let err = reg.put(GhostIdentifier::new("b", "o2", p, &wl)).unwrap_err();
        assert!(matches!(err, Error::DuplicatePassphrase(ref id) if id == "a"));
    }

    #[test]
    fn registry_rejects_unknown_wordlist_and_foreign_words() {
        let wl = wl();
        let other = Wordlist::from_words("o", ["zz", "yy", "xx", "ww"]).unwrap();
        let mut reg = Registry::with_wordlist(Arc::clone(&wl));
        let gid = GhostIdentifier::new("a", "o", words(&["zz", "yy", "xx", "ww"]), &other);
        assert!(matches!(reg.put(gid), Err(Error::UnknownWordlist(_))));
        let mut gid = GhostIdentifier::new("a", "o", words(&["zz", "yy", "xx", "ww"]), &wl);
        gid.wordlist_digest = wl.source_digest().to_owned();
        assert!(matches!(reg.put(gid), Err(Error::WordNotInList { .. })));
    }

    #[test]
    fn registry_list_by_owner_in_order() {
        let wl = wl();
        let mut reg = Registry::with_wordlist(Arc::clone(&wl));
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let a = reg.generate(wl.source_digest(), "alice", 10, &mut rng).unwrap().id.clone();
        reg.generate(wl.source_digest(), "bob", 10, &mut rng).unwrap();
        let c = reg.generate(wl.source_digest(), "alice", 10, &mut rng).unwrap().id.clone();
        let ids: Vec<_> = reg.list("alice").iter().map(|g| g.id.clone()).collect();
        assert_eq!(ids, [a, c]);
        assert!(reg.list("carol").is_empty());
    }

    #[test]
    fn jsonl_field_order() {
        let list = Wordlist::from_words("t", ["a", "b", "c", "d"]).unwrap();
        let mut gid = GhostIdentifier::new("i", "o", words(&["a", "b", "c", "d"]), &list);
        gid.created_at = DateTime::parse_from_rfc3339("2024-10-01T12:00:00Z")
            .unwrap()
            .with_timezone(&Utc);
        let line = serde_json::to_string(&gid).unwrap();
        assert_eq!(
            line,
            format!(
                r#"{{"id":"i","owner_id":"o","words":["a","b","c","d"],"wordlist_digest":"{}","prefix":null,"terminal":".","created_at":"2024-10-01T12:00:00Z"}}"#,
                list.source_digest()
            )
        );
    }
}
