//! Ghost sentences: user-owned random passphrases hidden in published
//! text, plus the statistical tests that reveal whether a language model
//! was trained on them.
//!
//! A typical flow generates identifiers ([`identifier`]), inserts them into
//! documents ([`corpus`]), and later queries a model ([`detect`]) with the
//! last-k words test or the perplexity test, whose statistics live in
//! [`stats`]. [`mockmodel`] provides simulated models for offline runs.

pub mod cli;
pub mod corpus;
pub mod detect;
pub mod error;
pub mod identifier;
pub mod mockmodel;
pub mod stats;
pub mod wordlist;

pub use corpus::{Document, Insertion, PositionStrategy};
pub use detect::{Backend, TestReport};
pub use error::{Error, Result};
pub use identifier::{GhostIdentifier, Randomness, Registry};
pub use mockmodel::MockModel;
pub use wordlist::Wordlist;
