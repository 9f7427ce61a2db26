//! Line-oriented text model files.
//!
//! ```text
//! ngram-hmm-model 1
//! kind nhmm
//! order 3
//! vocab_hash 0123abcd...
//! seed 7
//! config iterations 200
//! vocab 2548
//! 0	<s>	0
//! ...
//! <payload sections>
//! end
//! ```
//!
//! Every HMM snapshot carries its own copy of the shared HPYLM, which keeps
//! evolving while the chain runs. Floats are written in Rust's shortest
//! round-trip form, so loading a saved model reproduces it bit for bit.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::io::{BufRead, Write};
use std::path::Path;
use std::sync::Arc;

use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::hpylm::{ContextTrie, HpylmModel};
use crate::jointspace::{GenreModel, JointModel};
use crate::lda::{LdaConfig, LdaModel};
use crate::nhmm::HmmModel;
use crate::pyp::{PypParams, Restaurant};

pub const MAGIC: &str = "ngram-hmm-model";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Hpylm,
    Nhmm,
    Lda,
    Joint,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Hpylm => "hpylm",
            ModelKind::Nhmm => "nhmm",
            ModelKind::Lda => "lda",
            ModelKind::Joint => "joint",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "hpylm" => ModelKind::Hpylm,
            "nhmm" => ModelKind::Nhmm,
            "lda" => ModelKind::Lda,
            "joint" => ModelKind::Joint,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Hpylm(HpylmModel),
    /// Posterior snapshots; the last one is the final model.
    Nhmm(Vec<HmmModel>),
    Lda(LdaModel),
    /// The genre model travels with the joint model so held-out text can be
    /// labelled at evaluation time.
    Joint { model: JointModel, lda: LdaModel },
}

impl Payload {
    pub fn kind(&self) -> ModelKind {
        match self {
            Payload::Hpylm(_) => ModelKind::Hpylm,
            Payload::Nhmm(_) => ModelKind::Nhmm,
            Payload::Lda(_) => ModelKind::Lda,
            Payload::Joint { .. } => ModelKind::Joint,
        }
    }

    /// n-gram order of the language model; 0 for a bare topic model.
    pub fn order(&self) -> usize {
        match self {
            Payload::Hpylm(m) => m.order(),
            Payload::Nhmm(s) => s.first().map_or(0, HmmModel::order),
            Payload::Lda(_) => 0,
            Payload::Joint { model, .. } => model.base.order(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelFile {
    pub seed: u64,
    /// Training configuration as key/value pairs, in order.
    pub config: Vec<(String, String)>,
    pub vocab: Vocabulary,
    pub payload: Payload,
}

impl ModelFile {
    pub fn kind(&self) -> ModelKind {
        self.payload.kind()
    }

    pub fn config_value(&self, key: &str) -> Option<&str> {
        self.config.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let o = &mut out;
        line(o, format_args!("{MAGIC} {VERSION}"));
        line(o, format_args!("kind {}", self.kind().name()));
        line(o, format_args!("order {}", self.payload.order()));
        line(o, format_args!("vocab_hash {}", self.vocab.hash()));
        line(o, format_args!("seed {}", self.seed));
        for (k, v) in &self.config {
            line(o, format_args!("config {k} {v}"));
        }
        line(o, format_args!("vocab {}", self.vocab.len()));
        let mut buf = Vec::new();
        self.vocab.write_tsv(&mut buf).expect("writing to memory");
        o.push_str(&String::from_utf8(buf).expect("vocabulary is UTF-8"));
        match &self.payload {
            Payload::Hpylm(m) => write_hpylm(o, m),
            Payload::Nhmm(snaps) => write_snapshots(o, snaps),
            Payload::Lda(m) => write_lda(o, m),
            Payload::Joint { model, lda } => {
                write_hpylm(o, &model.base);
                line(o, format_args!("genres {}", model.genres.len()));
                for (g, gm) in &model.genres {
                    match gm {
                        GenreModel::Own(s) => {
                            line(o, format_args!("genre {g} own"));
                            write_snapshots(o, s);
                        }
                        GenreModel::Pooled => line(o, format_args!("genre {g} pooled")),
                    }
                }
                match &model.pooled {
                    Some(s) => {
                        line(o, format_args!("pooled 1"));
                        write_snapshots(o, s);
                    }
                    None => line(o, format_args!("pooled 0")),
                }
                write_lda(o, lda);
            }
        }
        line(o, format_args!("end"));
        out
    }

    pub fn write<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(self.to_text().as_bytes())?;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Payload::Nhmm(s) = &self.payload {
            if s.is_empty() {
                return Err(Error::UntrainedModel);
            }
        }
        std::fs::write(path, self.to_text()).map_err(|e| io_at(path, e))
    }

    pub fn read<R: BufRead>(r: R) -> Result<Self> {
        let lines = r.lines().collect::<std::io::Result<Vec<String>>>()?;
        let mut p = Parser { lines, pos: 0 };
        let head = p.fields(MAGIC)?;
        let version: u32 = p.parse(head.first().map(String::as_str), "version")?;
        if version != VERSION {
            return Err(Error::Version {
                found: version,
                expected: VERSION,
            });
        }
        let kind_field = p.fields("kind")?;
        let kind = kind_field
            .first()
            .and_then(|k| ModelKind::parse(k))
            .ok_or_else(|| p.err("unknown model kind"))?;
        let order: usize = p.value("order")?;
        let hash = p.fields("vocab_hash")?.first().map(|s| s.to_string()).ok_or_else(|| p.err("missing hash"))?;
        let seed: u64 = p.value("seed")?;
        let mut config = Vec::new();
        while p.peek_keyword() == Some("config") {
            let f = p.fields("config")?;
            if f.is_empty() {
                return Err(p.err("config line needs a key"));
            }
            config.push((f[0].to_string(), f[1..].join(" ")));
        }
        let n: usize = p.value("vocab")?;
        let start = p.pos;
        if start + n > p.lines.len() {
            return Err(p.err("truncated vocabulary"));
        }
        let tsv = p.lines[start..start + n].join("\n");
        let vocab = Vocabulary::read_tsv(tsv.as_bytes()).map_err(|e| match e {
            Error::Format { line, message } => Error::Format {
                line: start + line,
                message,
            },
            e => e,
        })?;
        p.pos += n;
        if vocab.hash() != hash {
            return Err(Error::VocabMismatch {
                expected: hash,
                found: vocab.hash(),
            });
        }

        let payload = match kind {
            ModelKind::Hpylm => Payload::Hpylm(p.hpylm()?),
            ModelKind::Nhmm => Payload::Nhmm(p.snapshots()?),
            ModelKind::Lda => Payload::Lda(p.lda()?),
            ModelKind::Joint => {
                let base = Arc::new(p.hpylm()?);
                let count: usize = p.value("genres")?;
                let mut genres = BTreeMap::new();
                for _ in 0..count {
                    let f = p.fields("genre")?;
                    let g: u32 = p.parse(f.first().map(String::as_str), "genre id")?;
                    let gm = match f.get(1).map(String::as_str) {
                        Some("own") => GenreModel::Own(p.snapshots()?),
                        Some("pooled") => GenreModel::Pooled,
                        _ => return Err(p.err("genre must be own or pooled")),
                    };
                    genres.insert(g, gm);
                }
                let pooled = match p.value::<u8>("pooled")? {
                    0 => None,
                    1 => Some(p.snapshots()?),
                    _ => return Err(p.err("pooled flag must be 0 or 1")),
                };
                let lda = p.lda()?;
                let model = JointModel { base, genres, pooled };
                model.check().map_err(|m| p.err(&m))?;
                Payload::Joint { model, lda }
            }
        };
        p.fields("end")?;
        if payload.order() != order {
            return Err(p.err("header order disagrees with the payload"));
        }
        Ok(ModelFile {
            seed,
            config,
            vocab,
            payload,
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| io_at(path, e))?;
        Self::read(std::io::BufReader::new(f))
    }
}

fn io_at(path: &Path, e: std::io::Error) -> Error {
    Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))
}

fn line(out: &mut String, args: std::fmt::Arguments) {
    out.write_fmt(args).expect("writing to a String");
    out.push('\n');
}

fn join<T: std::fmt::Display>(xs: impl IntoIterator<Item = T>, sep: &str) -> String {
    let s: Vec<String> = xs.into_iter().map(|x| x.to_string()).collect();
    if s.is_empty() {
        "-".into()
    } else {
        s.join(sep)
    }
}

fn restaurant_text(r: &Restaurant) -> String {
    join(r.dishes().map(|(d, sizes)| format!("{d}:{}", join(sizes, ","))), " ")
}

fn params_text(ps: &[PypParams]) -> String {
    join(ps.iter().map(|p| format!("{} {}", p.discount, p.strength)), " ")
}

fn write_trie(o: &mut String, t: &ContextTrie) {
    let mut nodes = Vec::new();
    t.visit(|path, r| nodes.push(format!("{}\t{}", join(path, ","), restaurant_text(r))));
    line(o, format_args!("trie {} {}", t.max_depth(), nodes.len()));
    for n in nodes {
        line(o, format_args!("{n}"));
    }
}

fn write_hpylm(o: &mut String, m: &HpylmModel) {
    line(
        o,
        format_args!("hpylm {} {} {} {}", m.order(), m.vocab_len(), m.iterations, m.seed),
    );
    line(o, format_args!("params {}", params_text(&m.params)));
    write_trie(o, &m.trie);
}

fn write_snapshots(o: &mut String, snaps: &[HmmModel]) {
    line(o, format_args!("snapshots {}", snaps.len()));
    for m in snaps {
        line(
            o,
            format_args!("hmm {} {} {}", m.num_states(), m.dp_alpha, m.gamma_top),
        );
        write_hpylm(o, &m.base);
        line(o, format_args!("stick {} {}", join(&m.stick, " "), m.stick_rem));
        line(o, format_args!("params {}", params_text(&m.emission_params)));
        line(o, format_args!("start\t{}", restaurant_text(&m.start)));
        for r in &m.rows {
            line(o, format_args!("row\t{}", restaurant_text(r)));
        }
        for t in &m.emissions {
            write_trie(o, t);
        }
    }
}

fn write_lda(o: &mut String, m: &LdaModel) {
    let c = &m.config;
    line(
        o,
        format_args!(
            "lda {} {} {} {} {} {}",
            c.topics,
            c.alpha,
            c.beta,
            c.iterations,
            m.vocab_len(),
            m.docs().len()
        ),
    );
    for (d, z) in m.docs().iter().zip(m.assignments()) {
        line(o, format_args!("doc\t{}\t{}", join(d, ","), join(z, ",")));
    }
}

struct Parser {
    lines: Vec<String>,
    pos: usize,
}

impl Parser {
    fn err(&self, message: &str) -> Error {
        Error::Format {
            line: self.pos.max(1),
            message: message.to_string(),
        }
    }

    fn next_line(&mut self) -> Result<String> {
        let l = self
            .lines
            .get(self.pos)
            .cloned()
            .ok_or_else(|| Error::Format {
                line: self.pos + 1,
                message: "unexpected end of file".into(),
            })?;
        self.pos += 1;
        Ok(l)
    }

    fn peek_keyword(&self) -> Option<&str> {
        self.lines.get(self.pos).and_then(|l| l.split([' ', '\t']).next())
    }

    /// Space-separated fields after `keyword`.
    fn fields(&mut self, keyword: &str) -> Result<Vec<String>> {
        let l = self.next_line()?;
        let mut it = l.split(' ');
        if it.next() != Some(keyword) {
            return Err(self.err(&format!("expected `{keyword}`")));
        }
        let idx = self.pos - 1;
        let rest = self.lines[idx].get(keyword.len()..).unwrap_or("").trim_start();
        Ok(if rest.is_empty() {
            vec![]
        } else {
            rest.split(' ').map(str::to_string).collect()
        })
    }

    /// Tab-separated fields after `keyword`.
    fn tabbed(&mut self, keyword: &str) -> Result<Vec<String>> {
        let l = self.next_line()?;
        let mut it = l.split('\t');
        if it.next() != Some(keyword) {
            return Err(self.err(&format!("expected `{keyword}`")));
        }
        Ok(it.map(str::to_string).collect())
    }

    fn parse<T: std::str::FromStr>(&self, s: Option<&str>, what: &str) -> Result<T> {
        s.and_then(|s| s.parse().ok()).ok_or_else(|| self.err(&format!("bad {what}")))
    }

    fn value<T: std::str::FromStr>(&mut self, keyword: &str) -> Result<T> {
        let f = self.fields(keyword)?;
        if f.len() != 1 {
            return Err(self.err(&format!("`{keyword}` takes one value")));
        }
        self.parse(Some(&f[0]), keyword)
    }

    fn list<T: std::str::FromStr>(&self, s: &str, sep: char, what: &str) -> Result<Vec<T>> {
        if s == "-" {
            return Ok(vec![]);
        }
        s.split(sep).map(|x| self.parse(Some(x), what)).collect()
    }

    fn restaurant(&self, s: &str) -> Result<Restaurant> {
        let mut dishes = Vec::new();
        if s != "-" {
            for item in s.split(' ') {
                let (d, sizes) = item.split_once(':').ok_or_else(|| self.err("bad dish entry"))?;
                dishes.push((self.parse(Some(d), "dish")?, self.list(sizes, ',', "table size")?));
            }
        }
        Restaurant::from_tables(dishes).map_err(|e| self.err(&e.to_string()))
    }

    fn params(&mut self) -> Result<Vec<PypParams>> {
        let f: Vec<String> = self.fields("params")?;
        if f.len() % 2 != 0 {
            return Err(self.err("parameters come in discount/strength pairs"));
        }
        f.chunks(2)
            .map(|c| {
                let d = self.parse(Some(&c[0]), "discount")?;
                let s = self.parse(Some(&c[1]), "strength")?;
                PypParams::new(d, s).map_err(|e| self.err(&e.to_string()))
            })
            .collect()
    }

    fn trie(&mut self) -> Result<ContextTrie> {
        let f = self.fields("trie")?;
        let depth: usize = self.parse(f.first().map(String::as_str), "trie depth")?;
        let n: usize = self.parse(f.get(1).map(String::as_str), "trie size")?;
        if depth > crate::hpylm::trie::MAX_DEPTH {
            return Err(self.err("trie too deep"));
        }
        let mut t = ContextTrie::new(depth);
        for _ in 0..n {
            let l = self.next_line()?;
            let (path, r) = l.split_once('\t').ok_or_else(|| self.err("trie node needs path and seating"))?;
            let path: Vec<u32> = self.list(path, ',', "context token")?;
            let r = self.restaurant(r)?;
            t.set_restaurant(&path, r).map_err(|e| self.err(&e.to_string()))?;
        }
        t.audit().map_err(|m| self.err(&m))?;
        Ok(t)
    }

    fn hpylm(&mut self) -> Result<HpylmModel> {
        let f = self.fields("hpylm")?;
        let get = |i: usize| f.get(i).map(String::as_str);
        let order: usize = self.parse(get(0), "order")?;
        let vocab_len: usize = self.parse(get(1), "vocabulary size")?;
        let iterations: usize = self.parse(get(2), "iterations")?;
        let seed: u64 = self.parse(get(3), "seed")?;
        let mut m = HpylmModel::new(order, vocab_len, seed).map_err(|e| self.err(&e.to_string()))?;
        m.iterations = iterations;
        m.params = self.params()?;
        if m.params.len() != order {
            return Err(self.err("one parameter pair per depth is required"));
        }
        m.trie = self.trie()?;
        Ok(m)
    }

    fn snapshots(&mut self) -> Result<Vec<HmmModel>> {
        let n: usize = self.value("snapshots")?;
        (0..n).map(|_| self.hmm()).collect()
    }

    fn hmm(&mut self) -> Result<HmmModel> {
        let f = self.fields("hmm")?;
        let k: usize = self.parse(f.first().map(String::as_str), "state count")?;
        let alpha: f64 = self.parse(f.get(1).map(String::as_str), "concentration")?;
        let gamma: f64 = self.parse(f.get(2).map(String::as_str), "concentration")?;
        let base = Arc::new(self.hpylm()?);
        let stick = self.fields("stick")?;
        let mut stick: Vec<f64> = stick
            .iter()
            .map(|x| self.parse(Some(x), "stick weight"))
            .collect::<Result<_>>()?;
        if stick.len() != k + 1 {
            return Err(self.err("stick needs one weight per state plus the remainder"));
        }
        let rem = stick.pop().expect("length checked");
        let params = self.params()?;
        let mut m = HmmModel::new(base, params, alpha, gamma).map_err(|e| self.err(&e.to_string()))?;
        m.stick = stick;
        m.stick_rem = rem;
        let start = self.tabbed("start")?;
        m.start = self.restaurant(start.first().map_or("-", String::as_str))?;
        for _ in 0..k {
            let row = self.tabbed("row")?;
            let r = self.restaurant(row.first().map_or("-", String::as_str))?;
            m.rows.push(r);
        }
        for _ in 0..k {
            let t = self.trie()?;
            m.emissions.push(t);
        }
        m.check().map_err(|e| self.err(&e))?;
        Ok(m)
    }

    fn lda(&mut self) -> Result<LdaModel> {
        let f = self.fields("lda")?;
        let get = |i: usize| f.get(i).map(String::as_str);
        let config = LdaConfig {
            topics: self.parse(get(0), "topic count")?,
            alpha: self.parse(get(1), "alpha")?,
            beta: self.parse(get(2), "beta")?,
            iterations: self.parse(get(3), "iterations")?,
        };
        let vocab_len: usize = self.parse(get(4), "vocabulary size")?;
        let n: usize = self.parse(get(5), "document count")?;
        let mut docs = Vec::with_capacity(n);
        let mut assignments = Vec::with_capacity(n);
        for _ in 0..n {
            let f = self.tabbed("doc")?;
            if f.len() != 2 {
                return Err(self.err("doc needs words and topics"));
            }
            docs.push(self.list(&f[0], ',', "word")?);
            assignments.push(self.list(&f[1], ',', "topic")?);
        }
        LdaModel::from_assignments(config, vocab_len, docs, assignments).map_err(|e| self.err(&e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_vocabulary, Corpus};
    use crate::hpylm::train_hpylm;
    use crate::jointspace::{attach_labels, train_joint, JointConfig};
    use crate::lda::{corpus_documents, fit_lda};
    use crate::nhmm::{train_nhmm, NhmmConfig};
    use crate::exec::Execution;

    fn fixture() -> (Vocabulary, Corpus) {
        let lines = [
            "###DOC###",
            "the cat sat on the mat",
            "the dog sat on the log",
            "###DOC###",
            "a cat is a pet",
            "a dog is a pet too",
            "###DOC###",
            "numbers are 3.5 and 1e-9",
        ];
        let v = build_vocabulary(lines, 1).unwrap();
        let c = Corpus::from_lines(lines, &v, 2);
        (v, c)
    }

    fn small_nhmm() -> NhmmConfig {
        NhmmConfig {
            order: 2,
            hpylm_iterations: 3,
            iterations: 5,
            burn_in: 1,
            sample_spacing: 2,
            samples: 3,
            em: crate::init::EmConfig {
                states: 3,
                ..Default::default()
            },
            ..NhmmConfig::default()
        }
    }

    fn round_trip(f: &ModelFile) {
        let text = f.to_text();
        let back = ModelFile::read(text.as_bytes()).unwrap();
        assert_eq!(&back, f);
        assert_eq!(back.to_text(), text);
    }

    #[test]
    fn every_kind_round_trips() {
        let (v, c) = fixture();
        let config = vec![("iterations".to_string(), "5".to_string()), ("note".into(), "two words".into())];
        let hp = train_hpylm(&c, v.len(), 2, 4, 3).unwrap();
        let file = |payload| ModelFile {
            seed: 3,
            config: config.clone(),
            vocab: v.clone(),
            payload,
        };
        round_trip(&file(Payload::Hpylm(hp)));

        let run = train_nhmm(&c, v.len(), &small_nhmm(), 3, None).unwrap();
        assert!(run.snapshots.len() > 1);
        round_trip(&file(Payload::Nhmm(run.snapshots)));

        let docs = corpus_documents(&c);
        let lda = fit_lda(&docs, v.len(), LdaConfig { topics: 2, iterations: 5, ..Default::default() }, 3).unwrap();
        round_trip(&file(Payload::Lda(lda.clone())));

        let labeled = attach_labels(&c, &lda.genres()).unwrap();
        let cfg = JointConfig {
            nhmm: small_nhmm(),
            min_sentences: 3,
        };
        let jm = train_joint(&labeled, v.len(), &cfg, 3, Execution::Parallel).unwrap();
        round_trip(&file(Payload::Joint { model: jm, lda }));
    }

    #[test]
    fn version_and_vocabulary_are_checked() {
        let (v, c) = fixture();
        let f = ModelFile {
            seed: 0,
            config: vec![],
            vocab: v,
            payload: Payload::Hpylm(train_hpylm(&c, 20, 2, 1, 0).unwrap()),
        };
        let text = f.to_text();
        let newer = text.replacen(&format!("{MAGIC} {VERSION}"), &format!("{MAGIC} {}", VERSION + 1), 1);
        assert!(matches!(
            ModelFile::read(newer.as_bytes()),
            Err(Error::Version { found, .. }) if found == VERSION + 1
        ));
        let tampered = text.replacen("\tcat\t", "\tkitten\t", 1);
        assert!(matches!(ModelFile::read(tampered.as_bytes()), Err(Error::VocabMismatch { .. })));
        let truncated: String = text.lines().take(text.lines().count() - 3).collect::<Vec<_>>().join("\n");
        assert!(matches!(ModelFile::read(truncated.as_bytes()), Err(Error::Format { .. })));
        assert!(matches!(ModelFile::read("hello\n".as_bytes()), Err(Error::Format { line: 1, .. })));
    }
}
