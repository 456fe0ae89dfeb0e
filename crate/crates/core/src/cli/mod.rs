//! The `ghostmark` command line.
//!
//! Every setting can come from a flag, a `GHOSTMARK_*` environment
//! variable or a [`ConfigFile`], in that order of precedence. Commands write
//! their artifacts under `--out` next to a `manifest.json` recording the
//! SHA-256 of every input and output, and refuse to replace existing files
//! unless `--force` is given.
//!
//! Exit status is 0 on success, 1 on runtime or backend failures and 2 on
//! validation errors.

mod config;

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use chrono::{DateTime, Utc};
use clap::{Args, Parser, Subcommand};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};

pub use config::ConfigFile;

use crate::corpus::{
    insert_sentence, plan_insertions, read_jsonl, user_stats, write_jsonl, Document,
    InstructionRecord, PlanRequest, PositionStrategy, RepetitionMode,
};
use crate::detect::{
    build_calibration_set, run_lastk_test, run_ppl_test, score_passphrase, Backend,
    BackendDescriptor, BackendKind, Calibration, Decoding, FreshCalibration, HttpBackend,
    LastKConfig, LogprobFileBackend, NgMode, PplConfig, TestReport, DEFAULT_API_KEY_ENV,
};
use crate::error::{Error, Result};
use crate::identifier::{
    random_id, sample_passphrase, GhostIdentifier, Randomness, Registry, DEFAULT_PASSPHRASE_LEN,
};
use crate::mockmodel::MockModel;
use crate::stats::{
    perplexity, CriticalRegion, Significance, MIN_CALIBRATION_SAMPLES, REFERENCE_PPL_CRITICAL,
};
use crate::wordlist::{Wordlist, WordlistFormat};

#[derive(Debug, Parser)]
#[command(name = "ghostmark", version, about = "Ghost-sentence identifiers for auditing LLM training data")]
pub struct Cli {
    /// key = value settings file
    #[arg(long, global = true, env = "GHOSTMARK_CONFIG")]
    config: Option<PathBuf>,
    /// Directory receiving all artifacts
    #[arg(long, global = true, env = "GHOSTMARK_OUT")]
    out: Option<PathBuf>,
    /// Replace existing artifacts
    #[arg(long, global = true)]
    force: bool,
    /// Seed for every random choice; drawn from system entropy when absent
    #[arg(long, global = true, env = "GHOSTMARK_SEED")]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct WordlistArgs {
    /// Wordlist file, or `synthetic:<size>` for a generated list
    #[arg(long, env = "GHOSTMARK_WORDLIST")]
    wordlist: Option<String>,
    /// eff-dice, plain-lines or auto
    #[arg(long, env = "GHOSTMARK_WORDLIST_FORMAT")]
    wordlist_format: Option<String>,
}

#[derive(Debug, Args)]
struct DataArgs {
    #[command(flatten)]
    wordlist: WordlistArgs,
    /// Identifier registry (JSONL)
    #[arg(long, env = "GHOSTMARK_REGISTRY")]
    registry: Option<PathBuf>,
    /// Corpus (JSONL documents)
    #[arg(long, env = "GHOSTMARK_CORPUS")]
    corpus: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BackendArgs {
    /// http, http-scoring, logprob-file, mock:uniform, mock:memorizer or mock:partial
    #[arg(long, env = "GHOSTMARK_BACKEND")]
    backend: Option<String>,
    /// Base URL of an OpenAI-style completions API
    #[arg(long, env = "GHOSTMARK_ENDPOINT")]
    endpoint: Option<String>,
    #[arg(long, env = "GHOSTMARK_MODEL")]
    model: Option<String>,
    /// Environment variable holding the bearer token
    #[arg(long, env = "GHOSTMARK_API_KEY_ENV")]
    api_key_env: Option<String>,
    #[arg(long, env = "GHOSTMARK_MAX_PARALLEL")]
    max_parallel: Option<usize>,
    #[arg(long, env = "GHOSTMARK_TIMEOUT_SECS")]
    timeout_secs: Option<f64>,
    /// Beam width; 1 means greedy decoding
    #[arg(long, env = "GHOSTMARK_BEAM_WIDTH")]
    beam_width: Option<u32>,
    #[arg(long, env = "GHOSTMARK_MAX_TOKENS")]
    max_tokens: Option<u32>,
    /// Precomputed token log-probabilities (JSONL)
    #[arg(long, env = "GHOSTMARK_LOGPROB_FILE")]
    logprob_file: Option<PathBuf>,
    /// Per-word recall of mock:memorizer
    #[arg(long, env = "GHOSTMARK_HIT_PROB")]
    hit_prob: Option<f64>,
    /// Memorization strength of mock:partial
    #[arg(long, env = "GHOSTMARK_LAMBDA")]
    lambda: Option<f64>,
    /// Corpus a mock was trained on; defaults to the tested corpus
    #[arg(long, env = "GHOSTMARK_TRAINING_CORPUS")]
    training_corpus: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate ghost-sentence identifiers
    Gen {
        #[command(flatten)]
        wordlist: WordlistArgs,
        /// Passphrase length
        #[arg(long)]
        q: Option<usize>,
        #[arg(long)]
        count: Option<usize>,
        /// Owner ids are `<owner>-0001`, `<owner>-0002`, ...
        #[arg(long)]
        owner: Option<String>,
        #[arg(long)]
        prefix: Option<String>,
        #[arg(long)]
        terminal: Option<String>,
    },
    /// Insert one identifier into chosen documents
    Insert {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        identifier: String,
        /// Document id; repeatable
        #[arg(long = "doc", required = true)]
        docs: Vec<String>,
        /// Percent of the document length, or a `low:high` range
        #[arg(long)]
        position: Option<String>,
    },
    /// Spread m identifiers over the corpus, about mu documents each
    Plan {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        m: Option<usize>,
        #[arg(long)]
        mu: Option<f64>,
        #[arg(long)]
        position: Option<String>,
        /// Draw repetition counts from the corpus' documents-per-user distribution
        #[arg(long)]
        natural: bool,
    },
    /// Last-k words test
    Lastk {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        backend: BackendArgs,
        /// Trailing passphrase words the model must produce
        #[arg(long)]
        k: Option<usize>,
        /// Significance level of the per-user z-test
        #[arg(long)]
        alpha: Option<f64>,
        /// Fixed z threshold instead of alpha
        #[arg(long)]
        threshold: Option<f64>,
        /// Candidate vocabulary size; defaults to the wordlist size
        #[arg(long)]
        v_star: Option<usize>,
        /// best (best document, q = k) or sum (all documents)
        #[arg(long)]
        n_g_mode: Option<String>,
        /// Prompt wrapper for chat models; `{context}` marks the document prefix
        #[arg(long)]
        prompt_template: Option<String>,
    },
    /// Perplexity test against fresh calibration identifiers
    Ppl {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        backend: BackendArgs,
        /// False-positive rate fixing the empirical critical value
        #[arg(long)]
        alpha: Option<f64>,
        /// Number of fresh calibration identifiers
        #[arg(long)]
        calibration_size: Option<usize>,
        /// Non-member documents hosting calibration identifiers; defaults
        /// to the corpus documents without an insertion
        #[arg(long)]
        held_out: Option<PathBuf>,
        /// Prepared calibration documents (from `calibrate`)
        #[arg(long)]
        calibration: Option<PathBuf>,
        #[arg(long)]
        calibration_registry: Option<PathBuf>,
        #[arg(long)]
        position: Option<String>,
        #[arg(long)]
        critical_reference: Option<f64>,
        #[arg(long)]
        min_k_percent: Option<f64>,
    },
    /// Build a calibration set and, with a backend, its critical value
    Calibrate {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        backend: BackendArgs,
        #[arg(long)]
        held_out: Option<PathBuf>,
        #[arg(long)]
        size: Option<usize>,
        #[arg(long)]
        q: Option<usize>,
        #[arg(long)]
        position: Option<String>,
        #[arg(long)]
        alpha: Option<f64>,
    },
    /// Documents-per-user statistics
    Stats {
        #[arg(long, env = "GHOSTMARK_CORPUS")]
        corpus: Option<PathBuf>,
    },
    /// Verify a test report and print its summary
    Report {
        report: PathBuf,
    },
    /// Convert a corpus into continue-writing instruction records
    ExportInstruct {
        #[command(flatten)]
        data: DataArgs,
    },
}

/// Parses `args` (program name first) and runs the command. Returns the
/// process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                2
            } else {
                1
            }
        }
    }
}

#[derive(Serialize)]
struct FileDigest {
    path: String,
    sha256: String,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    version: &'a str,
    seed: Option<u64>,
    config: Option<String>,
    inputs: &'a [FileDigest],
    outputs: Vec<FileDigest>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

struct Session {
    cfg: ConfigFile,
    config_path: Option<PathBuf>,
    out: Option<PathBuf>,
    force: bool,
    seed: Option<u64>,
    used_seed: Option<u64>,
    inputs: Vec<FileDigest>,
    outputs: Vec<(String, Vec<u8>)>,
}

impl Session {
    fn read(&mut self, path: &Path) -> Result<Vec<u8>> {
        let bytes = std::fs::read(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::Config(format!("{}: no such file", path.display())),
            _ => Error::Io(e),
        })?;
        self.inputs.push(FileDigest {
            path: path.display().to_string(),
            sha256: sha256_hex(&bytes),
        });
        Ok(bytes)
    }

    fn require_path(&self, flag: Option<PathBuf>, key: &str) -> Result<PathBuf> {
        self.cfg
            .pick_path(flag, key)
            .ok_or_else(|| Error::Config(format!("--{key} is required")))
    }

    /// The run's seed: `--seed` if given, else fresh entropy that is logged
    /// so the run can be repeated.
    fn seed(&mut self) -> u64 {
        if let Some(s) = self.used_seed {
            return s;
        }
        let s = self.seed.unwrap_or_else(|| {
            let s = rand::rng().next_u64();
            log::info!("no --seed given; using seed {s}");
            s
        });
        self.used_seed = Some(s);
        s
    }

    fn wordlist(&mut self, args: &WordlistArgs) -> Result<Arc<Wordlist>> {
        let spec = self
            .cfg
            .pick(args.wordlist.clone(), "wordlist")?
            .ok_or_else(|| Error::Config("--wordlist is required".into()))?;
        if let Some(n) = spec.strip_prefix("synthetic:") {
            let n: usize = n
                .parse()
                .map_err(|_| Error::Config(format!("bad synthetic size {n:?}")))?;
            return Ok(Arc::new(Wordlist::synthetic(format!("synthetic-{n}"), n)?));
        }
        let path = match self.cfg.raw("wordlist") {
            Some(_) if args.wordlist.is_none() => self.cfg.path("wordlist").expect("present"),
            _ => PathBuf::from(&spec),
        };
        let bytes = self.read(&path)?;
        let format = match self
            .cfg
            .pick(args.wordlist_format.clone(), "wordlist-format")?
            .as_deref()
        {
            None | Some("auto") => sniff_format(&bytes),
            Some(f) => f.parse()?,
        };
        Ok(Arc::new(Wordlist::load(path.display().to_string(), &bytes, format)?))
    }

    fn registry(&mut self, data: &DataArgs, wl: &Arc<Wordlist>) -> Result<Registry> {
        let path = self.require_path(data.registry.clone(), "registry")?;
        self.registry_at(&path, wl)
    }

    fn registry_at(&mut self, path: &Path, wl: &Arc<Wordlist>) -> Result<Registry> {
        let bytes = self.read(path)?;
        Registry::read_jsonl(bytes.as_slice(), std::slice::from_ref(wl))
    }

    fn corpus(&mut self, data: &DataArgs) -> Result<Vec<Document>> {
        let path = self.require_path(data.corpus.clone(), "corpus")?;
        self.documents(&path)
    }

    fn documents(&mut self, path: &Path) -> Result<Vec<Document>> {
        let bytes = self.read(path)?;
        read_jsonl(bytes.as_slice())
    }

    fn position(&self, flag: Option<String>) -> Result<PositionStrategy> {
        self.cfg
            .pick(flag, "position")?
            .map_or(Ok(PositionStrategy::end()), |s: String| s.parse())
    }

    fn emit(&mut self, name: &str, bytes: Vec<u8>) {
        self.outputs.push((name.to_owned(), bytes));
    }

    fn emit_json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut bytes = serde_json::to_vec_pretty(value)?;
        bytes.push(b'\n');
        self.emit(name, bytes);
        Ok(())
    }

    fn emit_jsonl<T: Serialize>(&mut self, name: &str, items: &[T]) -> Result<()> {
        let mut bytes = Vec::new();
        write_jsonl(items, &mut bytes)?;
        self.emit(name, bytes);
        Ok(())
    }

    /// Writes every emitted artifact plus the manifest. Nothing is written
    /// if any target exists and `--force` is off.
    fn finish(self, command: &str) -> Result<()> {
        let out = match (&self.out, self.outputs.is_empty()) {
            (Some(out), _) => out.clone(),
            (None, true) => return Ok(()),
            (None, false) => return Err(Error::Config("--out is required".into())),
        };
        let names: Vec<&str> = self
            .outputs
            .iter()
            .map(|(n, _)| n.as_str())
            .chain(["manifest.json"])
            .collect();
        if !self.force {
            if let Some(existing) = names.iter().map(|n| out.join(n)).find(|p| p.exists()) {
                return Err(Error::WouldOverwrite(existing.display().to_string()));
            }
        }
        std::fs::create_dir_all(&out)?;
        let mut digests = Vec::new();
        for (name, bytes) in &self.outputs {
            std::fs::write(out.join(name), bytes)?;
            digests.push(FileDigest {
                path: name.clone(),
                sha256: sha256_hex(bytes),
            });
        }
        let manifest = Manifest {
            command,
            version: env!("CARGO_PKG_VERSION"),
            seed: self.used_seed,
            config: self.config_path.as_ref().map(|p| p.display().to_string()),
            inputs: &self.inputs,
            outputs: digests,
        };
        let mut bytes = serde_json::to_vec_pretty(&manifest)?;
        bytes.push(b'\n');
        std::fs::write(out.join("manifest.json"), bytes)?;
        Ok(())
    }
}

fn sniff_format(bytes: &[u8]) -> WordlistFormat {
    let text = String::from_utf8_lossy(bytes);
    let first = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
    let mut fields = first.split_whitespace();
    match (fields.next(), fields.next(), fields.next()) {
        (Some(idx), Some(_), None) if idx.chars().all(|c| c.is_ascii_digit()) => WordlistFormat::EffDice,
        _ => WordlistFormat::PlainLines,
    }
}

/// Timestamp for seeded runs, so equal seeds give byte-identical output.
fn reproducible_timestamp() -> DateTime<Utc> {
    let secs = std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|s| s.trim().parse::<i64>().ok())
        .unwrap_or(0);
    DateTime::from_timestamp(secs, 0).unwrap_or_default()
}

fn build_backend(
    s: &mut Session,
    b: &BackendArgs,
    registry: &Registry,
    corpus: &[Document],
    wordlist: &Arc<Wordlist>,
) -> Result<Box<dyn Backend>> {
    let kind: BackendKind = s
        .cfg
        .pick(b.backend.clone(), "backend")?
        .ok_or_else(|| Error::Config("--backend is required".into()))?
        .parse()?;
    let max_parallel = s.cfg.pick(b.max_parallel, "max-parallel")?;
    let timeout = s.cfg.pick(b.timeout_secs, "timeout-secs")?;
    let max_tokens = s.cfg.pick(b.max_tokens, "max-tokens")?;
    let beam = s.cfg.pick(b.beam_width, "beam-width")?;
    let tune = |d: &mut BackendDescriptor| {
        if let Some(p) = max_parallel {
            d.max_parallel = p;
        }
        if let Some(t) = timeout {
            d.timeout_secs = t;
        }
        d.max_tokens = max_tokens;
        match beam {
            Some(1) => d.decoding = Decoding::Greedy,
            Some(width) => d.decoding = Decoding::Beam { width },
            None => {}
        }
    };
    match &kind {
        BackendKind::Mock(name) => {
            let seed = s.seed();
            let training = match s.cfg.pick_path(b.training_corpus.clone(), "training-corpus") {
                Some(p) => s.documents(&p)?,
                None => corpus.to_vec(),
            };
            let model = match name.as_str() {
                "uniform" => MockModel::uniform(wordlist.clone(), seed),
                "memorizer" => {
                    let hit = s.cfg.pick(b.hit_prob, "hit-prob")?.unwrap_or(1.0);
                    MockModel::memorizer(registry, &training, hit, seed)?
                }
                "partial" => {
                    let lambda = s
                        .cfg
                        .pick(b.lambda, "lambda")?
                        .ok_or_else(|| Error::Config("mock:partial needs --lambda".into()))?;
                    MockModel::partial(registry, &training, lambda, seed)?
                }
                other => return Err(Error::Config(format!("unknown mock {other:?}"))),
            };
            Ok(Box::new(model))
        }
        BackendKind::HttpCompletion | BackendKind::HttpScoring => {
            let endpoint = s
                .cfg
                .pick(b.endpoint.clone(), "endpoint")?
                .ok_or_else(|| Error::Config("--endpoint is required".into()))?;
            let model = s
                .cfg
                .pick(b.model.clone(), "model")?
                .ok_or_else(|| Error::Config("--model is required".into()))?;
            let key_env = s
                .cfg
                .pick(b.api_key_env.clone(), "api-key-env")?
                .unwrap_or_else(|| DEFAULT_API_KEY_ENV.to_owned());
            let mut d = BackendDescriptor::new(kind.clone(), endpoint, model);
            tune(&mut d);
            Ok(Box::new(HttpBackend::new(d, &key_env)?))
        }
        BackendKind::LogprobFile => {
            let path = s
                .cfg
                .pick_path(b.logprob_file.clone(), "logprob-file")
                .ok_or_else(|| Error::Config("--logprob-file is required".into()))?;
            let bytes = s.read(&path)?;
            let mut d = BackendDescriptor::new(kind.clone(), path.display().to_string(), "offline");
            d.max_parallel = 1;
            tune(&mut d);
            Ok(Box::new(LogprobFileBackend::from_reader(d, bytes.as_slice())?))
        }
    }
}

fn alpha(s: &Session, flag: Option<f64>) -> Result<f64> {
    let a = s.cfg.pick(flag, "alpha")?.unwrap_or(0.05);
    if !(a > 0.0 && a < 1.0) {
        return Err(Error::InvalidAlpha(a));
    }
    Ok(a)
}

fn execute(cli: Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(p) => ConfigFile::load(p)?,
        None => ConfigFile::default(),
    };
    let mut s = Session {
        out: cfg.pick_path(cli.out.clone(), "out"),
        seed: cfg.pick(cli.seed, "seed")?,
        force: cli.force,
        config_path: cli.config.clone(),
        cfg,
        used_seed: None,
        inputs: Vec::new(),
        outputs: Vec::new(),
    };
    let name = match &cli.command {
        Command::Gen { .. } => "gen",
        Command::Insert { .. } => "insert",
        Command::Plan { .. } => "plan",
        Command::Lastk { .. } => "lastk",
        Command::Ppl { .. } => "ppl",
        Command::Calibrate { .. } => "calibrate",
        Command::Stats { .. } => "stats",
        Command::Report { .. } => "report",
        Command::ExportInstruct { .. } => "export-instruct",
    };
    if s.out.is_none() && name != "report" {
        return Err(Error::Config("--out is required".into()));
    }
    match cli.command {
        Command::Gen {
            wordlist,
            q,
            count,
            owner,
            prefix,
            terminal,
        } => cmd_gen(&mut s, &wordlist, q, count, owner, prefix, terminal)?,
        Command::Insert {
            data,
            identifier,
            docs,
            position,
        } => cmd_insert(&mut s, &data, &identifier, &docs, position)?,
        Command::Plan {
            data,
            m,
            mu,
            position,
            natural,
        } => cmd_plan(&mut s, &data, m, mu, position, natural)?,
        Command::Lastk {
            data,
            backend,
            k,
            alpha,
            threshold,
            v_star,
            n_g_mode,
            prompt_template,
        } => cmd_lastk(
            &mut s,
            &data,
            &backend,
            LastkArgs {
                k,
                alpha,
                threshold,
                v_star,
                n_g_mode,
                prompt_template,
            },
        )?,
        Command::Ppl {
            data,
            backend,
            alpha,
            calibration_size,
            held_out,
            calibration,
            calibration_registry,
            position,
            critical_reference,
            min_k_percent,
        } => cmd_ppl(
            &mut s,
            &data,
            &backend,
            PplArgs {
                alpha,
                calibration_size,
                held_out,
                calibration,
                calibration_registry,
                position,
                critical_reference,
                min_k_percent,
            },
        )?,
        Command::Calibrate {
            data,
            backend,
            held_out,
            size,
            q,
            position,
            alpha,
        } => cmd_calibrate(&mut s, &data, &backend, held_out, size, q, position, alpha)?,
        Command::Stats { corpus } => cmd_stats(&mut s, corpus)?,
        Command::Report { report } => cmd_report(&mut s, &report)?,
        Command::ExportInstruct { data } => cmd_export(&mut s, &data)?,
    }
    s.finish(name)
}

fn cmd_gen(
    s: &mut Session,
    wl_args: &WordlistArgs,
    q: Option<usize>,
    count: Option<usize>,
    owner: Option<String>,
    prefix: Option<String>,
    terminal: Option<String>,
) -> Result<()> {
    let wl = s.wordlist(wl_args)?;
    let q = s.cfg.pick(q, "q")?.unwrap_or(DEFAULT_PASSPHRASE_LEN);
    let count = s.cfg.pick(count, "count")?.unwrap_or(1);
    let owner = s.cfg.pick(owner, "owner")?.unwrap_or_else(|| "user".into());
    let prefix = s.cfg.pick(prefix, "prefix")?;
    let terminal = s.cfg.pick(terminal, "terminal")?;
    // identifiers are secrets: the CSPRNG path logs nothing
    let (mut rng, stamp): (Box<dyn RngCore>, Option<DateTime<Utc>>) = match s.seed {
        Some(seed) => {
            s.used_seed = Some(seed);
            (Box::new(ChaCha20Rng::seed_from_u64(seed)), Some(reproducible_timestamp()))
        }
        None => (Box::new(rand::rng()), None),
    };
    let mut registry = Registry::with_wordlist(wl.clone());
    for i in 0..count {
        let words = loop {
            let w = sample_passphrase(&wl, q, &mut *rng)?;
            if !registry.contains_words(&w) {
                break w;
            }
        };
        let mut gid = GhostIdentifier::new(random_id(&mut *rng), format!("{owner}-{:04}", i + 1), words, &wl);
        if let Some(p) = &prefix {
            gid = gid.with_prefix(p.clone());
        }
        if let Some(t) = &terminal {
            gid = gid.with_terminal(t.clone());
        }
        if let Some(t) = stamp {
            gid.created_at = t;
        }
        registry.put(gid)?;
    }
    let mut bytes = Vec::new();
    registry.write_jsonl(&mut bytes)?;
    s.emit("registry.jsonl", bytes);
    eprintln!("generated {count} identifiers (q = {q}, V = {})", wl.size());
    Ok(())
}

fn cmd_insert(
    s: &mut Session,
    data: &DataArgs,
    identifier: &str,
    doc_ids: &[String],
    position: Option<String>,
) -> Result<()> {
    let wl = s.wordlist(&data.wordlist)?;
    let registry = s.registry(data, &wl)?;
    let mut docs = s.corpus(data)?;
    let strategy = s.position(position)?;
    let gid = registry.get(identifier)?;
    let mut rng = ChaCha20Rng::seed_from_u64(s.seed());
    for id in doc_ids {
        let idx = docs
            .iter()
            .position(|d| &d.doc_id == id)
            .ok_or_else(|| Error::Config(format!("no document {id:?} in the corpus")))?;
        docs[idx] = insert_sentence(&docs[idx], gid, &strategy, &mut rng)?;
    }
    s.emit_jsonl("corpus.jsonl", &docs)?;
    eprintln!("inserted {} into {} documents", gid.id, doc_ids.len());
    Ok(())
}

fn cmd_plan(
    s: &mut Session,
    data: &DataArgs,
    m: Option<usize>,
    mu: Option<f64>,
    position: Option<String>,
    natural: bool,
) -> Result<()> {
    let wl = s.wordlist(&data.wordlist)?;
    let registry = s.registry(data, &wl)?;
    let mut docs = s.corpus(data)?;
    let m = s
        .cfg
        .pick(m, "m")?
        .ok_or_else(|| Error::Config("--m is required".into()))?;
    let natural = natural || s.cfg.get::<bool>("natural")?.unwrap_or(false);
    let mode = if natural {
        RepetitionMode::Natural(user_stats(&docs).docs_per_owner.into_values().collect())
    } else {
        RepetitionMode::Uniform
    };
    let target_mu = match (&mode, s.cfg.pick(mu, "mu")?) {
        (_, Some(mu)) => mu,
        (RepetitionMode::Natural(_), None) => 0.0,
        (RepetitionMode::Uniform, None) => return Err(Error::Config("--mu is required".into())),
    };
    let req = PlanRequest {
        m,
        target_mu,
        strategy: s.position(position)?,
        seed: s.seed(),
        mode,
    };
    let plan = plan_insertions(&mut docs, &registry, &req)?;
    s.emit_jsonl("corpus.jsonl", &docs)?;
    s.emit_json("plan.json", &plan)?;
    eprintln!(
        "planned {} insertions for {} identifiers (mu = {:.2}, median {})",
        plan.total_insertions, plan.m, plan.mu, plan.median_repetition
    );
    Ok(())
}

struct LastkArgs {
    k: Option<usize>,
    alpha: Option<f64>,
    threshold: Option<f64>,
    v_star: Option<usize>,
    n_g_mode: Option<String>,
    prompt_template: Option<String>,
}

fn cmd_lastk(s: &mut Session, data: &DataArgs, b: &BackendArgs, a: LastkArgs) -> Result<()> {
    let wl = s.wordlist(&data.wordlist)?;
    let registry = s.registry(data, &wl)?;
    let docs = s.corpus(data)?;
    let mut cfg = LastKConfig::new(s.cfg.pick(a.k, "k")?.unwrap_or(1));
    cfg.significance = match s.cfg.pick(a.threshold, "threshold")? {
        Some(t) => Significance::Threshold(t),
        None => Significance::alpha(alpha(s, a.alpha)?)?,
    };
    cfg.v_star = s.cfg.pick(a.v_star, "v-star")?;
    cfg.prompt_template = s.cfg.pick(a.prompt_template, "prompt-template")?;
    cfg.n_g_mode = match s.cfg.pick(a.n_g_mode, "n-g-mode")?.as_deref() {
        None | Some("best") => NgMode::BestDocument,
        Some("sum") => NgMode::SumOverDocuments,
        Some(other) => return Err(Error::Config(format!("unknown n_g mode {other:?}"))),
    };
    let backend = build_backend(s, b, &registry, &docs, &wl)?;
    let report = run_lastk_test(&docs, &registry, &*backend, &cfg)?;
    emit_report(s, &report)
}

fn emit_report(s: &mut Session, report: &TestReport) -> Result<()> {
    let summary = report.summary();
    print!("{summary}");
    s.emit_json("report.json", report)?;
    s.emit("summary.txt", summary.into_bytes());
    if let Some(ppl) = report.ppl() {
        let a = &ppl.aggregates;
        s.emit_json(
            "summary.json",
            &serde_json::json!({
                "auc": a.auc,
                "recall": a.recall,
                "critical": a.critical,
                "critical_source": "empirical",
                "recall_reference": a.recall_reference,
                "critical_reference": a.critical_reference,
                "rejection_rate": a.rejection_rate,
                "tie_reject_prob": a.tie_reject_prob,
                "min_k_auc": a.min_k_auc,
                "roc": a.roc,
            }),
        )?;
        let mut csv = Vec::new();
        ppl.roc_curve().write_csv(&mut csv)?;
        s.emit("roc.csv", csv);
    }
    Ok(())
}

struct PplArgs {
    alpha: Option<f64>,
    calibration_size: Option<usize>,
    held_out: Option<PathBuf>,
    calibration: Option<PathBuf>,
    calibration_registry: Option<PathBuf>,
    position: Option<String>,
    critical_reference: Option<f64>,
    min_k_percent: Option<f64>,
}

fn held_out_docs(s: &mut Session, flag: Option<PathBuf>, corpus: &[Document]) -> Result<Vec<Document>> {
    let docs = match s.cfg.pick_path(flag, "held-out") {
        Some(p) => s.documents(&p)?,
        None => corpus.iter().filter(|d| d.insertion.is_none()).cloned().collect(),
    };
    if docs.is_empty() {
        return Err(Error::Config(
            "no held-out documents: pass --held-out or leave some corpus documents without insertions".into(),
        ));
    }
    Ok(docs)
}

fn cmd_ppl(s: &mut Session, data: &DataArgs, b: &BackendArgs, a: PplArgs) -> Result<()> {
    let wl = s.wordlist(&data.wordlist)?;
    let registry = s.registry(data, &wl)?;
    let docs = s.corpus(data)?;
    let cfg = PplConfig {
        alpha: alpha(s, a.alpha)?,
        critical_reference: s
            .cfg
            .pick(a.critical_reference, "critical-reference")?
            .unwrap_or(REFERENCE_PPL_CRITICAL),
        min_k_percent: s.cfg.pick(a.min_k_percent, "min-k-percent")?.unwrap_or(20.0),
        tie_seed: s.seed(),
    };
    let calibration = match s.cfg.pick_path(a.calibration, "calibration") {
        Some(p) => {
            let cal_docs = s.documents(&p)?;
            let reg_path = s.require_path(a.calibration_registry, "calibration-registry")?;
            let cal_registry = s.registry_at(&reg_path, &wl)?;
            Calibration::Documents {
                docs: cal_docs,
                registry: cal_registry,
            }
        }
        None => {
            let members = docs.iter().filter(|d| d.insertion.is_some()).count();
            let first = docs
                .iter()
                .find_map(|d| d.insertion.as_ref())
                .ok_or(Error::EmptyClass("member"))?;
            let q = registry.get(&first.identifier_id)?.len();
            let fresh = FreshCalibration {
                held_out: held_out_docs(s, a.held_out, &docs)?,
                size: s
                    .cfg
                    .pick(a.calibration_size, "calibration-size")?
                    .unwrap_or(members.max(100)),
                q: None,
                wordlist_digest: None,
                strategy: s.position(a.position)?,
                randomness: Randomness::Seeded(s.seed()),
            };
            let (cal_docs, cal_registry) =
                build_calibration_set(&fresh, &registry, q, wl.source_digest())?;
            s.emit_jsonl("calibration.jsonl", &cal_docs)?;
            let mut bytes = Vec::new();
            cal_registry.write_jsonl(&mut bytes)?;
            s.emit("calibration_registry.jsonl", bytes);
            Calibration::Documents {
                docs: cal_docs,
                registry: cal_registry,
            }
        }
    };
    let backend = build_backend(s, b, &registry, &docs, &wl)?;
    let report = run_ppl_test(&docs, &registry, &calibration, &*backend, &cfg)?;
    emit_report(s, &report)
}

#[allow(clippy::too_many_arguments)]
fn cmd_calibrate(
    s: &mut Session,
    data: &DataArgs,
    b: &BackendArgs,
    held_out: Option<PathBuf>,
    size: Option<usize>,
    q: Option<usize>,
    position: Option<String>,
    alpha_flag: Option<f64>,
) -> Result<()> {
    let wl = s.wordlist(&data.wordlist)?;
    let registry = match s.cfg.pick_path(data.registry.clone(), "registry") {
        Some(p) => s.registry_at(&p, &wl)?,
        None => Registry::with_wordlist(wl.clone()),
    };
    let corpus = match s.cfg.pick_path(data.corpus.clone(), "corpus") {
        Some(p) => s.documents(&p)?,
        None => Vec::new(),
    };
    let held = held_out_docs(s, held_out, &corpus)?;
    let q = s
        .cfg
        .pick(q, "q")?
        .or_else(|| registry.iter().next().map(GhostIdentifier::len))
        .unwrap_or(DEFAULT_PASSPHRASE_LEN);
    let fresh = FreshCalibration {
        size: s.cfg.pick(size, "size")?.unwrap_or(held.len().max(MIN_CALIBRATION_SAMPLES)),
        held_out: held,
        q: Some(q),
        wordlist_digest: None,
        strategy: s.position(position)?,
        randomness: Randomness::Seeded(s.seed()),
    };
    let (cal_docs, cal_registry) = build_calibration_set(&fresh, &registry, q, wl.source_digest())?;

    let has_backend = b.backend.is_some() || s.cfg.raw("backend").is_some();
    if has_backend {
        let alpha = alpha(s, alpha_flag)?;
        let backend = build_backend(s, b, &registry, &corpus, &wl)?;
        let mut ppls = Vec::with_capacity(cal_docs.len());
        for d in &cal_docs {
            match score_passphrase(&*backend, d, &cal_registry).and_then(|sc| perplexity(&sc.word_logprobs)) {
                Ok(p) => ppls.push(p),
                Err(e @ Error::BackendUnreachable(_)) => return Err(e),
                Err(e) => log::warn!("{}: {e}", d.doc_id),
            }
        }
        if ppls.len() < MIN_CALIBRATION_SAMPLES {
            return Err(Error::TooFewCalibration {
                needed: MIN_CALIBRATION_SAMPLES,
                found: ppls.len(),
            });
        }
        let region = CriticalRegion::calibrate(&ppls, alpha)?;
        println!(
            "critical value {:.4} at alpha {alpha} from {} calibration passphrases",
            region.critical,
            ppls.len()
        );
        s.emit_json(
            "calibration.json",
            &serde_json::json!({
                "alpha": alpha,
                "critical": region.critical,
                "tie_reject_prob": region.tie_reject_prob,
                "backend": backend.descriptor(),
                "ppls": ppls,
            }),
        )?;
    }
    s.emit_jsonl("calibration.jsonl", &cal_docs)?;
    let mut bytes = Vec::new();
    cal_registry.write_jsonl(&mut bytes)?;
    s.emit("calibration_registry.jsonl", bytes);
    eprintln!("built {} calibration documents (q = {q})", cal_docs.len());
    Ok(())
}

fn cmd_stats(s: &mut Session, corpus: Option<PathBuf>) -> Result<()> {
    let path = s.require_path(corpus, "corpus")?;
    let docs = s.documents(&path)?;
    let st = user_stats(&docs);
    println!("documents  {}", st.total_documents);
    println!("users      {}", st.total_users);
    println!("docs/user  {:.3}", st.mean_docs_per_user());
    for t in [1, 2, 5, 10, 20] {
        println!("users with >= {t:<3} docs hold {:.2}% of documents", 100.0 * st.fraction_at_least(t));
    }
    s.emit_json("user_stats.json", &st)?;
    let mut csv = Vec::new();
    st.write_csv(&mut csv)?;
    s.emit("user_stats.csv", csv);
    Ok(())
}

fn cmd_report(s: &mut Session, path: &Path) -> Result<()> {
    let bytes = s.read(path)?;
    let report: TestReport = serde_json::from_slice(&bytes)?;
    if !report.is_self_consistent()? {
        return Err(Error::InvalidParameter(
            "report aggregates do not match its per-item records".into(),
        ));
    }
    let summary = report.summary();
    print!("{summary}");
    if s.out.is_some() {
        s.emit("summary.txt", summary.into_bytes());
        if let Some(ppl) = report.ppl() {
            let mut csv = Vec::new();
            ppl.roc_curve().write_csv(&mut csv)?;
            s.emit("roc.csv", csv);
        }
    }
    Ok(())
}

fn cmd_export(s: &mut Session, data: &DataArgs) -> Result<()> {
    let wl = s.wordlist(&data.wordlist)?;
    let registry = s.registry(data, &wl)?;
    let docs = s.corpus(data)?;
    let records = docs
        .iter()
        .map(|d| InstructionRecord::from_document(d, &registry))
        .collect::<Result<Vec<_>>>()?;
    s.emit_jsonl("instruct.jsonl", &records)?;
    eprintln!("exported {} instruction records", records.len());
    Ok(())
}
