//! Collapsed-Gibbs LDA over documents, used to give every document a genre
//! id, plus index-preserving split/merge of per-genre work.

use std::collections::{BTreeMap, HashSet};

use log::warn;
use rand::Rng;

use crate::corpus::{Corpus, TokenSeq, NUM_SPECIAL};
use crate::error::{invalid, Error, Result};
use crate::exec::Execution;
use crate::rng::{self, ChainRng};
use crate::stats;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LdaConfig {
    pub topics: usize,
    /// Symmetric document-topic prior.
    pub alpha: f64,
    /// Symmetric topic-word prior.
    pub beta: f64,
    pub iterations: usize,
}

impl Default for LdaConfig {
    fn default() -> Self {
        LdaConfig {
            topics: 4,
            alpha: 0.5,
            beta: 0.1,
            iterations: 200,
        }
    }
}

impl LdaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.topics == 0 {
            return Err(invalid("topic count must be at least 1"));
        }
        if !(self.alpha > 0.0 && self.beta > 0.0 && self.alpha.is_finite() && self.beta.is_finite()) {
            return Err(invalid("LDA priors must be positive and finite"));
        }
        Ok(())
    }
}

/// A fitted topic model. Counts are always those implied by `assignments`.
#[derive(Debug, Clone, PartialEq)]
pub struct LdaModel {
    pub config: LdaConfig,
    vocab_len: usize,
    docs: Vec<Vec<u32>>,
    assignments: Vec<Vec<u32>>,
    /// Row-major topics x vocabulary.
    topic_word: Vec<u32>,
    topic_totals: Vec<u32>,
    doc_topic: Vec<Vec<u32>>,
}

impl LdaModel {
    /// Rebuilds a model from documents and their token topics.
    pub fn from_assignments(
        config: LdaConfig,
        vocab_len: usize,
        docs: Vec<Vec<u32>>,
        assignments: Vec<Vec<u32>>,
    ) -> Result<Self> {
        config.validate()?;
        if docs.len() != assignments.len() {
            return Err(invalid("one assignment vector per document is required"));
        }
        let c = config.topics;
        let mut m = LdaModel {
            config,
            vocab_len,
            topic_word: vec![0; c * vocab_len],
            topic_totals: vec![0; c],
            doc_topic: vec![vec![0; c]; docs.len()],
            docs,
            assignments,
        };
        for d in 0..m.docs.len() {
            if m.docs[d].len() != m.assignments[d].len() {
                return Err(invalid(format!("document {d} has mismatched assignments")));
            }
            for i in 0..m.docs[d].len() {
                let (w, z) = (m.docs[d][i] as usize, m.assignments[d][i] as usize);
                if w >= vocab_len || z >= c {
                    return Err(invalid(format!("document {d} has an out-of-range word or topic")));
                }
                m.topic_word[z * vocab_len + w] += 1;
                m.topic_totals[z] += 1;
                m.doc_topic[d][z] += 1;
            }
        }
        Ok(m)
    }

    pub fn topics(&self) -> usize {
        self.config.topics
    }

    pub fn vocab_len(&self) -> usize {
        self.vocab_len
    }

    pub fn docs(&self) -> &[Vec<u32>] {
        &self.docs
    }

    pub fn assignments(&self) -> &[Vec<u32>] {
        &self.assignments
    }

    fn word_weight(&self, c: usize, w: usize) -> f64 {
        let vb = self.vocab_len as f64 * self.config.beta;
        (self.topic_word[c * self.vocab_len + w] as f64 + self.config.beta) / (self.topic_totals[c] as f64 + vb)
    }

    /// Smoothed topic-word distribution of topic `c`.
    pub fn phi(&self, c: usize) -> Vec<f64> {
        (0..self.vocab_len).map(|w| self.word_weight(c, w)).collect()
    }

    /// Smoothed topic proportions of training document `d`.
    pub fn theta(&self, d: usize) -> Vec<f64> {
        let counts = &self.doc_topic[d];
        let n = self.docs[d].len() as f64;
        let ca = self.config.topics as f64 * self.config.alpha;
        counts.iter().map(|&k| (k as f64 + self.config.alpha) / (n + ca)).collect()
    }

    /// Training genre of every document: the most probable topic.
    pub fn genres(&self) -> Vec<u32> {
        (0..self.docs.len()).map(|d| argmax(&self.theta(d)) as u32).collect()
    }

    /// Topic shares across the whole training corpus.
    pub fn corpus_prior(&self) -> Vec<f64> {
        let n: u32 = self.topic_totals.iter().sum();
        let ca = self.config.topics as f64 * self.config.alpha;
        self.topic_totals
            .iter()
            .map(|&k| (k as f64 + self.config.alpha) / (n as f64 + ca))
            .collect()
    }

    fn known(&self, w: u32) -> bool {
        (w as usize) < self.vocab_len && (0..self.config.topics).any(|c| self.topic_word[c * self.vocab_len + w as usize] > 0)
    }

    /// One collapsed Gibbs sweep over every token.
    fn sweep<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let c = self.config.topics;
        let v = self.vocab_len;
        let (alpha, beta) = (self.config.alpha, self.config.beta);
        let vb = v as f64 * beta;
        let mut weights = vec![0.0; c];
        for d in 0..self.docs.len() {
            for i in 0..self.docs[d].len() {
                let w = self.docs[d][i] as usize;
                let old = self.assignments[d][i] as usize;
                self.topic_word[old * v + w] -= 1;
                self.topic_totals[old] -= 1;
                self.doc_topic[d][old] -= 1;
                for (k, x) in weights.iter_mut().enumerate() {
                    *x = (self.doc_topic[d][k] as f64 + alpha) * (self.topic_word[k * v + w] as f64 + beta)
                        / (self.topic_totals[k] as f64 + vb);
                }
                let new = stats::categorical(&weights, rng).unwrap_or(old);
                self.topic_word[new * v + w] += 1;
                self.topic_totals[new] += 1;
                self.doc_topic[d][new] += 1;
                self.assignments[d][i] = new as u32;
            }
        }
    }

    /// Maintained counts equal those rebuilt from the assignments.
    pub fn check_counts(&self) -> std::result::Result<(), String> {
        let rebuilt = LdaModel::from_assignments(self.config, self.vocab_len, self.docs.clone(), self.assignments.clone())
            .map_err(|e| e.to_string())?;
        if rebuilt.topic_word != self.topic_word || rebuilt.topic_totals != self.topic_totals || rebuilt.doc_topic != self.doc_topic {
            return Err("count matrices disagree with assignments".into());
        }
        Ok(())
    }
}

/// Lowest index among the maxima.
fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Word ids of every document of `corpus`, specials removed.
pub fn corpus_documents(corpus: &Corpus) -> Vec<Vec<u32>> {
    (0..corpus.documents.len()).map(|d| corpus.document_words(d)).collect()
}

/// Collapsed Gibbs sampling of token topics. Empty documents keep their
/// index but carry no tokens.
pub fn fit_lda(docs: &[Vec<u32>], vocab_len: usize, config: LdaConfig, seed: u64) -> Result<LdaModel> {
    config.validate()?;
    let empty = docs.iter().filter(|d| d.is_empty()).count();
    if empty == docs.len() {
        return Err(Error::EmptyCorpus);
    }
    if empty > 0 {
        warn!("skipping {empty} empty documents");
    }
    let mut rng = rng::seeded(seed, rng::stream::LDA);
    let assignments = docs
        .iter()
        .map(|d| d.iter().map(|_| rng.random_range(0..config.topics as u32)).collect())
        .collect();
    let mut m = LdaModel::from_assignments(config, vocab_len, docs.to_vec(), assignments)?;
    for _ in 0..config.iterations {
        m.sweep(&mut rng);
    }
    Ok(m)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenreAssignment {
    pub genre: u32,
    pub theta: Vec<f64>,
    /// No word of the document is known to the model; the genre is the
    /// corpus-level prior argmax.
    pub oov: bool,
}

/// Folds a new document into a fixed model: token topics are resampled for
/// `burn` sweeps with topic-word counts held fixed, and the proportions are
/// averaged over the second half of the sweeps.
pub fn infer_genre<R: Rng + ?Sized>(m: &LdaModel, doc: &[u32], burn: usize, rng: &mut R) -> GenreAssignment {
    let words: Vec<usize> = doc.iter().filter(|&&w| m.known(w)).map(|&w| w as usize).collect();
    if words.is_empty() {
        let prior = m.corpus_prior();
        return GenreAssignment {
            genre: argmax(&prior) as u32,
            theta: prior,
            oov: true,
        };
    }
    let theta = fold_in(m, &words, burn, rng);
    GenreAssignment {
        genre: argmax(&theta) as u32,
        theta,
        oov: false,
    }
}

fn fold_in<R: Rng + ?Sized>(m: &LdaModel, words: &[usize], burn: usize, rng: &mut R) -> Vec<f64> {
    let c = m.topics();
    let alpha = m.config.alpha;
    let phi: Vec<Vec<f64>> = words.iter().map(|&w| (0..c).map(|k| m.word_weight(k, w)).collect()).collect();
    let mut z: Vec<usize> = words.iter().map(|_| rng.random_range(0..c)).collect();
    let mut counts = vec![0u32; c];
    z.iter().for_each(|&k| counts[k] += 1);
    let sweeps = burn.max(1);
    let keep_from = sweeps / 2;
    let mut acc = vec![0.0; c];
    let mut weights = vec![0.0; c];
    for s in 0..sweeps {
        for i in 0..words.len() {
            counts[z[i]] -= 1;
            for k in 0..c {
                weights[k] = (counts[k] as f64 + alpha) * phi[i][k];
            }
            z[i] = stats::categorical(&weights, rng).unwrap_or(z[i]);
            counts[z[i]] += 1;
        }
        if s >= keep_from {
            for k in 0..c {
                acc[k] += counts[k] as f64;
            }
        }
    }
    let kept = (sweeps - keep_from) as f64;
    let n = words.len() as f64;
    acc.iter().map(|a| (a / kept + alpha) / (n + c as f64 * alpha)).collect()
}

/// Genre of every document of `docs`, each drawn from its own stream of
/// `seed` so the result does not depend on the execution mode.
pub fn infer_genres(m: &LdaModel, docs: &[Vec<u32>], burn: usize, seed: u64, exec: Execution) -> Vec<GenreAssignment> {
    exec.map_indexed(docs.len(), |d| {
        let mut rng = doc_rng(seed, d);
        infer_genre(m, &docs[d], burn, &mut rng)
    })
}

fn doc_rng(seed: u64, d: usize) -> ChainRng {
    rng::seeded(rng::derive_seed(seed, d as u64), rng::stream::GENRE)
}

/// Document-completion log-likelihood: proportions are folded in from the
/// even-position tokens of each document and the odd-position tokens are
/// scored. Unknown words are skipped. Returns (log-likelihood, scored tokens).
pub fn heldout_loglik(m: &LdaModel, docs: &[Vec<u32>], burn: usize, seed: u64) -> (f64, usize) {
    let mut ll = 0.0;
    let mut n = 0;
    for (d, doc) in docs.iter().enumerate() {
        let words: Vec<usize> = doc.iter().filter(|&&w| m.known(w)).map(|&w| w as usize).collect();
        let observed: Vec<usize> = words.iter().step_by(2).copied().collect();
        let scored: Vec<usize> = words.iter().skip(1).step_by(2).copied().collect();
        if scored.is_empty() {
            continue;
        }
        let theta = fold_in(m, &observed, burn, &mut doc_rng(seed, d));
        for w in scored {
            let p: f64 = (0..m.topics()).map(|k| theta[k] * m.word_weight(k, w)).sum();
            ll += p.ln();
            n += 1;
        }
    }
    (ll, n)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub topics: usize,
    pub heldout_loglik: f64,
    pub tokens: usize,
}

/// Fits one model per topic count and reports held-out log-likelihood.
pub fn sweep_topics(
    train: &[Vec<u32>],
    heldout: &[Vec<u32>],
    vocab_len: usize,
    counts: &[usize],
    config: LdaConfig,
    burn: usize,
    seed: u64,
    exec: Execution,
) -> Result<Vec<SweepPoint>> {
    exec.map(counts, |&c| {
        let cfg = LdaConfig { topics: c, ..config };
        let m = fit_lda(train, vocab_len, cfg, seed)?;
        let (ll, tokens) = heldout_loglik(&m, heldout, burn, seed);
        Ok(SweepPoint {
            topics: c,
            heldout_loglik: ll,
            tokens,
        })
    })
    .into_iter()
    .collect()
}

/// Items grouped by genre, each group holding original indices in order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenreSplit {
    pub groups: BTreeMap<u32, Vec<usize>>,
    len: usize,
}

impl GenreSplit {
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    /// Payload of every group, in group order.
    pub fn apply<T: Clone>(&self, items: &[T]) -> Vec<(u32, Vec<T>)> {
        self.groups
            .iter()
            .map(|(&g, idx)| (g, idx.iter().map(|&i| items[i].clone()).collect()))
            .collect()
    }

    /// Reassembles per-group outputs (in group order) into original order.
    pub fn merge<T>(&self, outputs: Vec<Vec<T>>) -> Result<Vec<T>> {
        if outputs.len() != self.groups.len() {
            return Err(invalid("one output per genre group is required"));
        }
        merge_by_index(self.groups.values().cloned().zip(outputs).collect())
    }
}

pub fn split_by_genre(genres: &[u32]) -> GenreSplit {
    let mut groups: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
    for (i, &g) in genres.iter().enumerate() {
        groups.entry(g).or_default().push(i);
    }
    GenreSplit {
        groups,
        len: genres.len(),
    }
}

/// Places every `(original index, item)` back at its index. Indices must
/// cover `0..n` exactly once.
pub fn merge_by_index<T>(parts: Vec<(Vec<usize>, Vec<T>)>) -> Result<Vec<T>> {
    let n: usize = parts.iter().map(|(idx, _)| idx.len()).sum();
    let mut slots: Vec<Option<T>> = (0..n).map(|_| None).collect();
    for (idx, items) in parts {
        if idx.len() != items.len() {
            return Err(invalid("index map and payload lengths differ"));
        }
        for (i, item) in idx.into_iter().zip(items) {
            if i >= n {
                return Err(invalid(format!("original index {i} is out of range")));
            }
            if slots[i].is_some() {
                return Err(Error::IndexCollision(i));
            }
            slots[i] = Some(item);
        }
    }
    Ok(slots.into_iter().map(|s| s.expect("n indices without collision cover 0..n")).collect())
}

/// Per-sentence genres from per-document genres.
pub fn sentence_genres(corpus: &Corpus, doc_genres: &[u32]) -> Result<Vec<u32>> {
    if doc_genres.len() != corpus.documents.len() {
        return Err(invalid(format!(
            "{} genre ids for {} documents",
            doc_genres.len(),
            corpus.documents.len()
        )));
    }
    Ok(corpus.sentence_documents().into_iter().map(|d| doc_genres[d]).collect())
}

/// Per-genre sub-corpora (genre order) and the sentence split behind them.
pub fn split_corpus_by_genre(corpus: &Corpus, doc_genres: &[u32]) -> Result<(GenreSplit, Vec<(u32, Corpus)>)> {
    let split = split_by_genre(&sentence_genres(corpus, doc_genres)?);
    let parts = split.groups.iter().map(|(&g, idx)| (g, corpus.subset(idx))).collect();
    Ok((split, parts))
}

/// Ground truth of a synthetic corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticLda {
    /// One document per sentence; word ids start after the specials.
    pub corpus: Corpus,
    /// Topic-word distributions over the `vocab` real words.
    pub topics: Vec<Vec<f64>>,
    pub thetas: Vec<Vec<f64>>,
    pub vocab_len: usize,
}

/// Forward-samples documents: topics from a symmetric Dirichlet, per-document
/// proportions from the same concentration, then a topic and a word per token.
pub fn generate_synthetic(
    topics: usize,
    vocab: usize,
    n_docs: usize,
    doc_len: usize,
    concentration: f64,
    seed: u64,
) -> Result<SyntheticLda> {
    if topics == 0 || vocab == 0 || n_docs == 0 || doc_len == 0 {
        return Err(invalid("synthetic sizes must be at least 1"));
    }
    if !(concentration > 0.0 && concentration.is_finite()) {
        return Err(invalid("concentration must be positive"));
    }
    let mut rng = rng::seeded(seed, rng::stream::SYNTHETIC);
    let phis: Vec<Vec<f64>> = (0..topics)
        .map(|_| stats::dirichlet(&vec![concentration; vocab], &mut rng))
        .collect();
    let mut thetas = Vec::with_capacity(n_docs);
    let mut docs = Vec::with_capacity(n_docs);
    for _ in 0..n_docs {
        let theta = stats::dirichlet(&vec![concentration; topics], &mut rng);
        let words: Vec<u32> = (0..doc_len)
            .map(|_| {
                let z = stats::categorical(&theta, &mut rng).unwrap_or(0);
                NUM_SPECIAL + stats::categorical(&phis[z], &mut rng).unwrap_or(0) as u32
            })
            .collect();
        docs.push(vec![TokenSeq::from_tokens(&words, 1)]);
        thetas.push(theta);
    }
    Ok(SyntheticLda {
        corpus: Corpus::from_documents(docs, 1),
        topics: phis,
        thetas,
        vocab_len: vocab + NUM_SPECIAL as usize,
    })
}

/// Distinct genre ids in first-seen order.
pub fn distinct_genres(genres: &[u32]) -> Vec<u32> {
    let mut seen = HashSet::new();
    genres.iter().copied().filter(|g| seen.insert(*g)).collect()
}
