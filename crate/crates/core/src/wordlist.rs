//! Diceware wordlists.
//!
//! Two text formats are accepted: the EFF dice format (`11111<TAB>abacus`)
//! and plain one-word-per-line lists. Words are normalized on load
//! (surrounding whitespace stripped, Unicode NFC, lowercase) and must be
//! unique after normalization.
//!
//! No list is bundled. The digest of the EFF Large Wordlist is recorded in
//! [`EFF_LARGE_DIGEST`] so a downloaded copy can be checked on load.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use sha2::{Digest, Sha256};
use unicode_normalization::UnicodeNormalization;

use crate::error::{Error, Result};

/// Digest of the EFF Large Wordlist (7776 words) as computed by
/// [`Wordlist::source_digest`].
pub const EFF_LARGE_DIGEST: &str =
    "6d557f0693958fb5e650b68b5bee585eb82cf4da32965505c789e924743bc522";

/// Lists smaller than this load with a warning.
pub const SMALL_LIST_WARNING: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WordlistFormat {
    EffDice,
    PlainLines,
}

impl FromStr for WordlistFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "eff-dice" | "eff" | "dice" => Ok(WordlistFormat::EffDice),
            "plain-lines" | "plain" => Ok(WordlistFormat::PlainLines),
            other => Err(Error::Config(format!("unknown wordlist format {other:?}"))),
        }
    }
}

impl fmt::Display for WordlistFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            WordlistFormat::EffDice => "eff-dice",
            WordlistFormat::PlainLines => "plain-lines",
        })
    }
}

/// An immutable, validated list of unique words.
#[derive(Debug, Clone)]
pub struct Wordlist {
    name: String,
    words: Vec<String>,
    index: HashSet<String>,
    digest: String,
}

/// Lowercase + NFC + trim.
pub fn normalize_word(raw: &str) -> String {
    raw.trim().nfc().collect::<String>().to_lowercase()
}

impl Wordlist {
    /// Parses a wordlist from raw bytes.
    pub fn load(name: impl Into<String>, source: &[u8], format: WordlistFormat) -> Result<Self> {
        let text = std::str::from_utf8(source).map_err(|_| Error::InvalidUtf8)?;
        let text = text.strip_prefix('\u{feff}').unwrap_or(text);

        let mut words = Vec::new();
        let mut lines: Vec<(usize, &str)> = text
            .lines()
            .enumerate()
            .map(|(i, line)| (i + 1, line))
            .collect();
        // trailing blank lines are a file-ending artifact, not empty words
        while lines.last().is_some_and(|(_, l)| l.trim().is_empty()) {
            lines.pop();
        }

        for (line_no, line) in lines {
            let raw = match format {
                WordlistFormat::PlainLines => line,
                WordlistFormat::EffDice => strip_dice_index(line, line_no)?,
            };
            words.push((line_no, raw));
        }

        Self::build(name.into(), words)
    }

    /// Builds a list from already-split words, applying the same validation as
    /// [`Wordlist::load`]. Line numbers in errors are 1-based positions.
    pub fn from_words<I, S>(name: impl Into<String>, words: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let owned: Vec<S> = words.into_iter().collect();
        let items = owned
            .iter()
            .enumerate()
            .map(|(i, w)| (i + 1, w.as_ref()))
            .collect();
        Self::build(name.into(), items)
    }

    fn build(name: String, raw: Vec<(usize, &str)>) -> Result<Self> {
        if raw.is_empty() {
            return Err(Error::EmptyList);
        }
        let mut words = Vec::with_capacity(raw.len());
        let mut index = HashSet::with_capacity(raw.len());
        for (line, w) in raw {
            let word = normalize_word(w);
            if word.is_empty() {
                return Err(Error::EmptyWord { line });
            }
            if word.chars().any(char::is_whitespace) {
                return Err(Error::WhitespaceInWord { line });
            }
            if !index.insert(word.clone()) {
                return Err(Error::DuplicateWord { word, line });
            }
            words.push(word);
        }
        if words.len() < 2 {
            return Err(Error::WordlistTooSmall(words.len()));
        }
        if words.len() < SMALL_LIST_WARNING {
            log::warn!(
                "wordlist {name:?} has only {} words; last-k false-positive rates grow as 1/V",
                words.len()
            );
        }
        let digest = digest_words(&words);
        if words.len() == 7776 && digest != EFF_LARGE_DIGEST {
            log::info!("wordlist {name:?} has 7776 words but is not the EFF Large Wordlist");
        }
        Ok(Wordlist {
            name,
            words,
            index,
            digest,
        })
    }

    /// A deterministic list of `size` distinct pronounceable pseudo-words.
    ///
    /// Meant for demos and tests that must not depend on a downloaded list.
    pub fn synthetic(name: impl Into<String>, size: usize) -> Result<Self> {
        const ONSETS: [&str; 20] = [
            "b", "d", "f", "g", "h", "j", "k", "l", "m", "n", "p", "r", "s", "t", "v", "w", "z",
            "ch", "sh", "th",
        ];
        const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];
        let syllables = ONSETS.len() * VOWELS.len();
        let words = (0..size).map(|mut n| {
            let mut w = String::new();
            // three syllables minimum keeps every word at least 6 letters
            for _ in 0..3 {
                let s = n % syllables;
                n /= syllables;
                w.push_str(ONSETS[s / VOWELS.len()]);
                w.push_str(VOWELS[s % VOWELS.len()]);
            }
            while n > 0 {
                let s = n % syllables;
                n /= syllables;
                w.push_str(ONSETS[s / VOWELS.len()]);
                w.push_str(VOWELS[s % VOWELS.len()]);
            }
            w
        });
        Self::from_words(name, words)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    /// V_g, the number of words.
    pub fn size(&self) -> usize {
        self.words.len()
    }

    /// Hex SHA-256 over the normalized words, each followed by `\n`.
    pub fn source_digest(&self) -> &str {
        &self.digest
    }

    /// Membership test on an already-normalized word.
    pub fn contains(&self, word: &str) -> bool {
        self.index.contains(word)
    }

    pub fn word(&self, i: usize) -> &str {
        &self.words[i]
    }

    /// `true` iff the list has exactly `6^dice_count` entries.
    pub fn validate_dice_coverage(&self, dice_count: u32) -> bool {
        if !(1..=8).contains(&dice_count) {
            return false;
        }
        self.size() == 6usize.pow(dice_count)
    }

    pub fn is_eff_large(&self) -> bool {
        self.digest == EFF_LARGE_DIGEST
    }

    /// Serializes to the plain-lines format.
    pub fn to_plain_lines(&self) -> String {
        let mut out = String::with_capacity(self.words.iter().map(|w| w.len() + 1).sum());
        for w in &self.words {
            out.push_str(w);
            out.push('\n');
        }
        out
    }

    /// Serializes to the EFF dice format, numbering entries in base-6 dice
    /// order. Only meaningful when the size is a power of six.
    pub fn to_eff_dice(&self) -> Option<String> {
        let dice = (1..=8).find(|&d| self.validate_dice_coverage(d))?;
        let mut out = String::new();
        for (i, w) in self.words.iter().enumerate() {
            out.push_str(&dice_label(i, dice));
            out.push('\t');
            out.push_str(w);
            out.push('\n');
        }
        Some(out)
    }
}

fn strip_dice_index(line: &str, line_no: usize) -> Result<&str> {
    let trimmed = line.trim_start();
    let digits_end = trimmed
        .find(|c: char| !c.is_ascii_digit())
        .unwrap_or(trimmed.len());
    let (index, rest) = trimmed.split_at(digits_end);
    if index.is_empty() || !index.bytes().all(|b| (b'1'..=b'6').contains(&b)) {
        return Err(Error::MalformedDiceIndex { line: line_no });
    }
    if !rest.starts_with(|c: char| c.is_whitespace()) {
        return Err(Error::MalformedDiceIndex { line: line_no });
    }
    Ok(rest)
}

fn dice_label(mut i: usize, dice: u32) -> String {
    let mut digits = vec![b'1'; dice as usize];
    for slot in digits.iter_mut().rev() {
        *slot = b'1' + (i % 6) as u8;
        i /= 6;
    }
    String::from_utf8(digits).expect("ascii")
}

pub(crate) fn digest_words(words: &[String]) -> String {
    let mut hasher = Sha256::new();
    for w in words {
        hasher.update(w.as_bytes());
        hasher.update(b"\n");
    }
    hex::encode(hasher.finalize())
}
