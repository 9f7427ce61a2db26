//! Corpus ingestion: vocabulary, sentence encoding, held-out splits and
//! document grouping.
//!
//! Input text is UTF-8, one whitespace-tokenised sentence per line. A line
//! holding only [`DOC_MARKER`] starts a new document; without markers every
//! sentence is its own document.

use std::collections::HashMap;
use std::io::{BufRead, Write};
use std::ops::Range;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use sha2::{Digest, Sha256};

use crate::error::{invalid, Error, Result};
use crate::rng;

pub const PAD: u32 = 0;
pub const END: u32 = 1;
pub const UNK: u32 = 2;
pub const NUM_SPECIAL: u32 = 3;

pub const PAD_WORD: &str = "<s>";
pub const END_WORD: &str = "</s>";
pub const UNK_WORD: &str = "<unk>";

pub const DOC_MARKER: &str = "###DOC###";

/// Bijective word/id map with frequency counts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    word_to_id: HashMap<String, u32>,
    id_to_word: Vec<String>,
    counts: Vec<u64>,
}

impl Vocabulary {
    fn with_specials() -> Self {
        let mut v = Vocabulary {
            word_to_id: HashMap::new(),
            id_to_word: Vec::new(),
            counts: Vec::new(),
        };
        for w in [PAD_WORD, END_WORD, UNK_WORD] {
            v.push(w.to_string(), 0);
        }
        v
    }

    fn push(&mut self, word: String, count: u64) -> u32 {
        let id = self.id_to_word.len() as u32;
        self.word_to_id.insert(word.clone(), id);
        self.id_to_word.push(word);
        self.counts.push(count);
        id
    }

    /// Vocabulary over `words` in the given order, ids starting after the
    /// specials. Duplicates are ignored.
    pub fn from_words<I, S>(words: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut v = Self::with_specials();
        for w in words {
            let w = w.into();
            if !v.word_to_id.contains_key(&w) {
                v.push(w, 0);
            }
        }
        v
    }

    pub fn len(&self) -> usize {
        self.id_to_word.len()
    }

    pub fn is_empty(&self) -> bool {
        self.id_to_word.is_empty()
    }

    /// Number of symbols a model can predict: everything but the pad.
    pub fn predictable_len(&self) -> usize {
        self.len() - 1
    }

    /// Ids of all predictable symbols (end, unk and the words).
    pub fn predictable_ids(&self) -> Range<u32> {
        1..self.len() as u32
    }

    pub fn id(&self, word: &str) -> u32 {
        self.word_to_id.get(word).copied().unwrap_or(UNK)
    }

    pub fn get(&self, word: &str) -> Option<u32> {
        self.word_to_id.get(word).copied()
    }

    pub fn word(&self, id: u32) -> &str {
        &self.id_to_word[id as usize]
    }

    pub fn count(&self, id: u32) -> u64 {
        self.counts[id as usize]
    }

    /// Short content hash of the id mapping (counts excluded).
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for (id, w) in self.id_to_word.iter().enumerate() {
            h.update(format!("{id}\t{w}\n").as_bytes());
        }
        hex::encode(&h.finalize()[..8])
    }

    pub fn write_tsv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for (id, (w, c)) in self.id_to_word.iter().zip(&self.counts).enumerate() {
            writeln!(out, "{id}\t{w}\t{c}")?;
        }
        Ok(())
    }

    pub fn read_tsv<R: BufRead>(input: R) -> Result<Self> {
        let mut v = Vocabulary {
            word_to_id: HashMap::new(),
            id_to_word: Vec::new(),
            counts: Vec::new(),
        };
        for (i, line) in input.lines().enumerate() {
            let line = line?;
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let bad = |message: &str| Error::Format {
                line: i + 1,
                message: message.to_string(),
            };
            if fields.len() != 3 {
                return Err(bad("expected id<TAB>word<TAB>count"));
            }
            let id: usize = fields[0].parse().map_err(|_| bad("bad id"))?;
            let count: u64 = fields[2].parse().map_err(|_| bad("bad count"))?;
            if id != v.len() {
                return Err(bad("ids must be dense and ascending"));
            }
            if v.word_to_id.contains_key(fields[1]) {
                return Err(bad("duplicate word"));
            }
            v.push(fields[1].to_string(), count);
        }
        if v.len() < NUM_SPECIAL as usize
            || v.word(PAD) != PAD_WORD
            || v.word(END) != END_WORD
            || v.word(UNK) != UNK_WORD
        {
            return Err(Error::Format {
                line: 0,
                message: "vocabulary must start with the three special symbols".into(),
            });
        }
        Ok(v)
    }
}

fn is_marker(line: &str) -> bool {
    line.trim() == DOC_MARKER
}

/// Builds a vocabulary: ids by descending frequency, ties broken
/// lexicographically; words seen fewer than `min_count` times map to unk.
pub fn build_vocabulary<I, S>(lines: I, min_count: u64) -> Result<Vocabulary>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut freq: HashMap<String, u64> = HashMap::new();
    let mut sentences = 0u64;
    for line in lines {
        let line = line.as_ref();
        if is_marker(line) || line.trim().is_empty() {
            continue;
        }
        sentences += 1;
        for tok in line.split_whitespace() {
            *freq.entry(tok.to_string()).or_insert(0) += 1;
        }
    }
    if freq.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    let mut words: Vec<(String, u64)> = freq.into_iter().collect();
    words.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));

    let mut v = Vocabulary::with_specials();
    v.counts[END as usize] = sentences;
    let min_count = min_count.max(1);
    for (w, c) in words {
        if c >= min_count && !matches!(w.as_str(), PAD_WORD | END_WORD | UNK_WORD) {
            v.push(w, c);
        } else {
            v.counts[UNK as usize] += c;
        }
    }
    Ok(v)
}

/// One encoded sentence: `pads` start pads, the token ids, then the end id.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSeq {
    ids: Vec<u32>,
    pads: usize,
}

impl TokenSeq {
    /// From bare token ids (end id appended here).
    pub fn from_tokens(tokens: &[u32], order: usize) -> Self {
        let pads = order.saturating_sub(1);
        let mut ids = vec![PAD; pads];
        ids.extend_from_slice(tokens);
        ids.push(END);
        TokenSeq { ids, pads }
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn pads(&self) -> usize {
        self.pads
    }

    /// Predicted symbols: words plus the trailing end id.
    pub fn tokens(&self) -> &[u32] {
        &self.ids[self.pads..]
    }

    /// Words without the trailing end id.
    pub fn words(&self) -> &[u32] {
        &self.ids[self.pads..self.ids.len() - 1]
    }

    pub fn len(&self) -> usize {
        self.ids.len() - self.pads
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// The `len` symbols preceding token `pos` (most recent last).
    ///
    /// Panics if `len` exceeds the padding.
    pub fn context(&self, pos: usize, len: usize) -> &[u32] {
        assert!(len <= self.pads, "context of {len} needs more padding");
        let at = self.pads + pos;
        &self.ids[at - len..at]
    }

    pub fn repad(&self, order: usize) -> TokenSeq {
        TokenSeq::from_tokens(self.words(), order)
    }

    /// (context, word) pairs for an order-`order` model.
    pub fn ngrams(&self, order: usize) -> impl Iterator<Item = (&[u32], u32)> + '_ {
        let ctx = order - 1;
        (0..self.len()).map(move |t| (self.context(t, ctx), self.tokens()[t]))
    }
}

pub fn encode_sentence(vocab: &Vocabulary, line: &str, order: usize) -> TokenSeq {
    let tokens: Vec<u32> = line.split_whitespace().map(|w| vocab.id(w)).collect();
    TokenSeq::from_tokens(&tokens, order.max(1))
}

pub fn decode_sentence(vocab: &Vocabulary, seq: &TokenSeq) -> String {
    seq.words()
        .iter()
        .map(|&id| vocab.word(id))
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    pub sentences: Vec<TokenSeq>,
    /// Sentence-index ranges, a partition of `0..sentences.len()`.
    pub documents: Vec<Range<usize>>,
    pub provenance: Option<Provenance>,
    order: usize,
}

impl Corpus {
    pub fn from_lines<I, S>(lines: I, vocab: &Vocabulary, order: usize) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut sentences = Vec::new();
        let mut documents = Vec::new();
        let mut doc_start = 0;
        let mut saw_marker = false;
        for line in lines {
            let line = line.as_ref();
            if is_marker(line) {
                saw_marker = true;
                if sentences.len() > doc_start {
                    documents.push(doc_start..sentences.len());
                }
                doc_start = sentences.len();
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            sentences.push(encode_sentence(vocab, line, order));
        }
        if saw_marker {
            if sentences.len() > doc_start {
                documents.push(doc_start..sentences.len());
            }
        } else {
            documents = (0..sentences.len()).map(|i| i..i + 1).collect();
        }
        Corpus {
            sentences,
            documents,
            provenance: None,
            order: order.max(1),
        }
    }

    /// Sentences with one document per sentence.
    pub fn from_sentences(sentences: Vec<TokenSeq>, order: usize) -> Self {
        let documents = (0..sentences.len()).map(|i| i..i + 1).collect();
        let sentences = sentences.iter().map(|s| s.repad(order)).collect();
        Corpus {
            sentences,
            documents,
            provenance: None,
            order,
        }
    }

    pub fn from_documents(docs: Vec<Vec<TokenSeq>>, order: usize) -> Self {
        let mut sentences = Vec::new();
        let mut documents = Vec::new();
        for doc in docs {
            if doc.is_empty() {
                continue;
            }
            let start = sentences.len();
            sentences.extend(doc.iter().map(|s| s.repad(order)));
            documents.push(start..sentences.len());
        }
        Corpus {
            sentences,
            documents,
            provenance: None,
            order,
        }
    }

    pub fn from_file(path: &Path, vocab: &Vocabulary, order: usize) -> Result<Self> {
        let (lines, sha256) = read_lines(path)?;
        let mut c = Corpus::from_lines(&lines, vocab, order);
        c.provenance = Some(Provenance {
            path: path.to_path_buf(),
            sha256,
        });
        Ok(c)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    /// Predicted symbols (words + sentence ends), pads excluded.
    pub fn token_count(&self) -> usize {
        self.sentences.iter().map(TokenSeq::len).sum()
    }

    pub fn repad(&self, order: usize) -> Corpus {
        if order == self.order {
            return self.clone();
        }
        Corpus {
            sentences: self.sentences.iter().map(|s| s.repad(order)).collect(),
            documents: self.documents.clone(),
            provenance: self.provenance.clone(),
            order,
        }
    }

    /// Document index of every sentence.
    pub fn sentence_documents(&self) -> Vec<usize> {
        let mut out = vec![0; self.len()];
        for (d, r) in self.documents.iter().enumerate() {
            for s in r.clone() {
                out[s] = d;
            }
        }
        out
    }

    /// Non-special word ids of document `d`, for topic models.
    pub fn document_words(&self, d: usize) -> Vec<u32> {
        self.documents[d]
            .clone()
            .flat_map(|s| self.sentences[s].words().iter().copied())
            .filter(|&w| w >= NUM_SPECIAL)
            .collect()
    }

    /// Sentences at `indices` (ascending), keeping the document grouping of
    /// consecutive survivors.
    pub fn subset(&self, indices: &[usize]) -> Corpus {
        let doc_of = self.sentence_documents();
        let mut sentences = Vec::with_capacity(indices.len());
        let mut documents: Vec<Range<usize>> = Vec::new();
        let mut last_doc = None;
        for &i in indices {
            let d = doc_of[i];
            if last_doc == Some(d) {
                documents.last_mut().unwrap().end += 1;
            } else {
                documents.push(sentences.len()..sentences.len() + 1);
                last_doc = Some(d);
            }
            sentences.push(self.sentences[i].clone());
        }
        Corpus {
            sentences,
            documents,
            provenance: self.provenance.clone(),
            order: self.order,
        }
    }

    pub fn check_partition(&self) -> bool {
        let mut next = 0;
        for r in &self.documents {
            if r.start != next || r.end <= r.start {
                return false;
            }
            next = r.end;
        }
        next == self.len()
    }
}

/// Reads a text file into lines and returns them with the file's sha256.
pub fn read_lines(path: &Path) -> Result<(Vec<String>, String)> {
    let bytes = std::fs::read(path).map_err(|e| {
        Error::Io(std::io::Error::new(
            e.kind(),
            format!("{}: {e}", path.display()),
        ))
    })?;
    let sha = hex::encode(Sha256::digest(&bytes));
    let text = String::from_utf8(bytes)
        .map_err(|_| invalid(format!("{} is not valid UTF-8", path.display())))?;
    Ok((text.lines().map(str::to_string).collect(), sha))
}

/// Sentence-level random split into (train, held-out), deterministic in `seed`.
pub fn split_corpus(corpus: &Corpus, heldout_fraction: f64, seed: u64) -> Result<(Corpus, Corpus)> {
    if !(heldout_fraction > 0.0 && heldout_fraction < 1.0) {
        return Err(invalid("held-out fraction must lie in (0, 1)"));
    }
    let n = corpus.len();
    if n < 2 {
        return Err(invalid("splitting needs at least 2 sentences"));
    }
    let held = ((n as f64 * heldout_fraction).round() as usize).clamp(1, n - 1);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng::seeded(seed, rng::stream::SPLIT));
    let mut heldout: Vec<usize> = order[..held].to_vec();
    let mut train: Vec<usize> = order[held..].to_vec();
    heldout.sort_unstable();
    train.sort_unstable();
    Ok((corpus.subset(&train), corpus.subset(&heldout)))
}
