//! Input loading and run artefacts: append-only TSV logs and JSON summaries.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;
use ngram_hmm::corpus::{read_lines, Corpus, Vocabulary};
use ngram_hmm::format::ModelFile;
use sha2::{Digest, Sha256};

use crate::UsageError;

/// Lines of an input file; a missing file is a usage error naming the path.
pub fn input_lines(path: &Path) -> anyhow::Result<(Vec<String>, String)> {
    if !path.is_file() {
        return Err(UsageError(format!("input file not found: {}", path.display())).into());
    }
    Ok(read_lines(path)?)
}

/// Encodes a text file with a fixed vocabulary, recording its provenance.
pub fn input_corpus(path: &Path, vocab: &Vocabulary, order: usize) -> anyhow::Result<Corpus> {
    if !path.is_file() {
        return Err(UsageError(format!("input file not found: {}", path.display())).into());
    }
    Ok(Corpus::from_file(path, vocab, order)?)
}

pub fn load_model(path: &Path) -> anyhow::Result<ModelFile> {
    if !path.is_file() {
        return Err(UsageError(format!("model file not found: {}", path.display())).into());
    }
    ModelFile::load(path).with_context(|| format!("loading {}", path.display()))
}

pub fn file_sha256(path: &Path) -> anyhow::Result<String> {
    let bytes = std::fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

pub const LOG_HEADER: &str = "kind\tseed\tgenre\titeration\tstates\ttrain_loglik\theldout_ppl\tseconds";

/// One training-log row; absent values are written as `-`.
#[derive(Debug, Clone, Default)]
pub struct LogRow {
    pub genre: Option<u32>,
    pub iteration: usize,
    pub states: usize,
    pub train_loglik: Option<f64>,
    pub heldout_ppl: Option<f64>,
    pub seconds: f64,
}

fn opt<T: ToString>(v: Option<T>) -> String {
    v.map_or_else(|| "-".to_string(), |v| v.to_string())
}

/// Appends rows to a TSV log, writing the header when the file is new.
pub fn append_log(path: &Path, kind: &str, seed: u64, rows: &[LogRow]) -> anyhow::Result<()> {
    let fresh = !path.exists();
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .with_context(|| format!("opening log {}", path.display()))?;
    let mut out = String::new();
    if fresh {
        out.push_str(LOG_HEADER);
        out.push('\n');
    }
    for r in rows {
        out.push_str(&format!(
            "{kind}\t{seed}\t{}\t{}\t{}\t{}\t{}\t{:.3}\n",
            opt(r.genre),
            r.iteration,
            r.states,
            opt(r.train_loglik),
            opt(r.heldout_ppl),
            r.seconds
        ));
    }
    f.write_all(out.as_bytes())?;
    Ok(())
}

pub fn write_json(path: &Path, value: &serde_json::Value) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Output file paths of one training run.
pub struct Outputs {
    pub model: PathBuf,
    pub vocab: PathBuf,
    pub log: PathBuf,
    pub summary: PathBuf,
}

impl Outputs {
    pub fn new(dir: &Path, stem: &str) -> anyhow::Result<Self> {
        std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
        Ok(Outputs {
            model: dir.join(format!("{stem}.model")),
            vocab: dir.join(format!("{stem}.vocab.tsv")),
            log: dir.join(format!("{stem}.log.tsv")),
            summary: dir.join(format!("{stem}.summary.json")),
        })
    }
}
