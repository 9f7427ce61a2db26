//! Corpora drawn from known finite HMMs, for recovery experiments.

use rand::Rng;

use crate::corpus::{Corpus, TokenSeq, NUM_SPECIAL};
use crate::error::{invalid, Result};
use crate::rng;
use crate::stats;

/// A finite HMM over word ids `offset..offset + vocab`. After every emitted
/// word the sentence ends with probability `stop`.
#[derive(Debug, Clone, PartialEq)]
pub struct KnownHmm {
    pub start: Vec<f64>,
    pub trans: Vec<Vec<f64>>,
    pub emit: Vec<Vec<f64>>,
    pub stop: f64,
    pub offset: u32,
}

impl KnownHmm {
    pub fn new(start: Vec<f64>, trans: Vec<Vec<f64>>, emit: Vec<Vec<f64>>, stop: f64, offset: u32) -> Result<Self> {
        let k = start.len();
        if k == 0 || trans.len() != k || emit.len() != k || trans.iter().any(|r| r.len() != k) {
            return Err(invalid("start, transition and emission tables disagree on the state count"));
        }
        let v = emit[0].len();
        if v == 0 || emit.iter().any(|r| r.len() != v) {
            return Err(invalid("emission rows must share a non-empty vocabulary"));
        }
        if !(stop > 0.0 && stop <= 1.0) {
            return Err(invalid("stop probability must lie in (0, 1]"));
        }
        Ok(KnownHmm {
            start,
            trans,
            emit,
            stop,
            offset,
        })
    }

    /// Three states, each emitting mostly from its own block of `vocab / 3`
    /// words, cycling 0 → 1 → 2 → 0 with high probability.
    pub fn three_state(vocab: usize, offset: u32) -> Result<Self> {
        if vocab < 3 {
            return Err(invalid("need at least 3 words"));
        }
        let block = vocab / 3;
        let emit = (0..3)
            .map(|h| {
                let mut row = vec![0.1 / vocab as f64; vocab];
                for w in h * block..(h + 1) * block {
                    row[w] += 0.9 / block as f64;
                }
                row
            })
            .collect();
        let trans = (0..3)
            .map(|h| {
                let mut row = vec![0.05; 3];
                row[(h + 1) % 3] = 0.9;
                row
            })
            .collect();
        KnownHmm::new(vec![0.8, 0.1, 0.1], trans, emit, 0.1, offset)
    }

    pub fn states(&self) -> usize {
        self.start.len()
    }

    /// Vocabulary size including the special ids below the word block.
    pub fn vocab_len(&self) -> usize {
        self.offset as usize + self.emit[0].len()
    }

    /// One sentence's words and hidden states.
    pub fn sample_sentence<R: Rng + ?Sized>(&self, rng: &mut R) -> (Vec<u32>, Vec<u32>) {
        let mut words = Vec::new();
        let mut states = Vec::new();
        let mut h = stats::categorical(&self.start, rng).unwrap_or(0);
        loop {
            let w = stats::categorical(&self.emit[h], rng).unwrap_or(0);
            words.push(self.offset + w as u32);
            states.push(h as u32);
            if stats::bernoulli(self.stop, rng) {
                break;
            }
            h = stats::categorical(&self.trans[h], rng).unwrap_or(0);
        }
        (words, states)
    }

    /// `n` sentences, one document per sentence, with their hidden states.
    pub fn sample_corpus(&self, n: usize, order: usize, seed: u64) -> (Corpus, Vec<Vec<u32>>) {
        let mut rng = rng::seeded(seed, rng::stream::SYNTHETIC);
        let mut sentences = Vec::with_capacity(n);
        let mut states = Vec::with_capacity(n);
        for _ in 0..n {
            let (w, h) = self.sample_sentence(&mut rng);
            sentences.push(TokenSeq::from_tokens(&w, order));
            states.push(h);
        }
        (Corpus::from_sentences(sentences, order), states)
    }
}

/// A corpus of documents from two genres with disjoint vocabularies and
/// differently ordered state cycles.
#[derive(Debug, Clone, PartialEq)]
pub struct GenreCorpus {
    pub corpus: Corpus,
    pub doc_genres: Vec<u32>,
    pub vocab_len: usize,
}

pub fn genre_corpus(docs: usize, sentences_per_doc: usize, order: usize, seed: u64) -> Result<GenreCorpus> {
    let words = 12;
    let g0 = KnownHmm::three_state(words, NUM_SPECIAL)?;
    let mut g1 = KnownHmm::three_state(words, NUM_SPECIAL + words as u32)?;
    // reverse the cycle: 0 → 2 → 1 → 0
    for h in 0..3 {
        g1.trans[h] = vec![0.05; 3];
        g1.trans[h][(h + 2) % 3] = 0.9;
    }
    let mut rng = rng::seeded(seed, rng::stream::SYNTHETIC);
    let mut documents = Vec::with_capacity(docs);
    let mut doc_genres = Vec::with_capacity(docs);
    for _ in 0..docs {
        let g = rng.random_range(0..2u32);
        let hmm = if g == 0 { &g0 } else { &g1 };
        let doc = (0..sentences_per_doc)
            .map(|_| TokenSeq::from_tokens(&hmm.sample_sentence(&mut rng).0, order))
            .collect();
        documents.push(doc);
        doc_genres.push(g);
    }
    Ok(GenreCorpus {
        corpus: Corpus::from_documents(documents, order),
        doc_genres,
        vocab_len: g1.vocab_len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sentences_follow_the_known_chain() {
        let hmm = KnownHmm::three_state(12, NUM_SPECIAL).unwrap();
        let (c, states) = hmm.sample_corpus(2000, 3, 1);
        assert_eq!(c.len(), 2000);
        let mut trans = [[0u32; 3]; 3];
        let mut tokens = 0;
        for (s, h) in c.sentences.iter().zip(&states) {
            assert_eq!(s.words().len(), h.len());
            assert!(s.words().iter().all(|&w| w >= NUM_SPECIAL && (w as usize) < hmm.vocab_len()));
            for p in h.windows(2) {
                trans[p[0] as usize][p[1] as usize] += 1;
            }
            tokens += h.len();
        }
        // mean sentence length is 1 / stop
        let mean = tokens as f64 / 2000.0;
        assert!((mean - 10.0).abs() < 3.0 * (90.0f64 / 2000.0).sqrt());
        for h in 0..3 {
            let n: u32 = trans[h].iter().sum();
            let p = trans[h][(h + 1) % 3] as f64 / n as f64;
            assert!((p - 0.9).abs() < 3.0 * (0.09 / n as f64).sqrt(), "row {h}: {p}");
        }
        assert_eq!(hmm.sample_corpus(50, 3, 1), hmm.sample_corpus(50, 3, 1));
    }

    #[test]
    fn genres_use_disjoint_words() {
        let g = genre_corpus(40, 5, 3, 2).unwrap();
        assert_eq!(g.corpus.documents.len(), 40);
        for (d, &genre) in g.doc_genres.iter().enumerate() {
            let lo = NUM_SPECIAL + 12 * genre;
            assert!(g.corpus.document_words(d).iter().all(|&w| w >= lo && w < lo + 12));
        }
        assert!(g.doc_genres.contains(&0) && g.doc_genres.contains(&1));
    }
}
