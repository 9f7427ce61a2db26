//! Hierarchical Pitman-Yor n-gram language model.

pub mod trie;

use rand::Rng;

use crate::corpus::{Corpus, TokenSeq};
use crate::error::{invalid, Error, Result};
use crate::exec::Execution;
use crate::pyp::{sample_hyperparameters, PypParams};
use crate::rng::{self, ChainRng};

pub use trie::ContextTrie;

#[derive(Debug, Clone, PartialEq)]
pub struct HpylmModel {
    order: usize,
    vocab_len: usize,
    pub trie: ContextTrie,
    /// One parameter pair per context depth `0..order`.
    pub params: Vec<PypParams>,
    pub iterations: usize,
    pub seed: u64,
}

impl HpylmModel {
    /// Empty model over a vocabulary of `vocab_len` ids (pad included; the
    /// pad is never predicted).
    pub fn new(order: usize, vocab_len: usize, seed: u64) -> Result<Self> {
        if order == 0 || order > trie::MAX_DEPTH + 1 {
            return Err(invalid(format!("order must lie in 1..={}", trie::MAX_DEPTH + 1)));
        }
        if vocab_len < 2 {
            return Err(invalid("vocabulary has no predictable symbols"));
        }
        Ok(HpylmModel {
            order,
            vocab_len,
            trie: ContextTrie::new(order - 1),
            params: vec![PypParams::default(); order],
            iterations: 0,
            seed,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn vocab_len(&self) -> usize {
        self.vocab_len
    }

    /// Uniform base over every id except the pad.
    pub fn root_base(&self) -> f64 {
        1.0 / (self.vocab_len - 1) as f64
    }

    pub fn insert_ngram<R: Rng + ?Sized>(&mut self, context: &[u32], word: u32, rng: &mut R) -> Result<()> {
        let base = self.root_base();
        self.trie.insert(&self.params, context, word, base, rng)
    }

    pub fn remove_ngram<R: Rng + ?Sized>(&mut self, context: &[u32], word: u32, rng: &mut R) -> Result<()> {
        self.trie.remove(context, word, rng)
    }

    pub fn ngram_prob(&self, context: &[u32], word: u32) -> f64 {
        self.trie.predictive(&self.params, context, word, self.root_base())
    }

    pub fn sentence_logprob(&self, sentence: &TokenSeq) -> Result<f64> {
        let seq = if sentence.pads() + 1 < self.order {
            sentence.repad(self.order)
        } else {
            sentence.clone()
        };
        let mut total = 0.0;
        for (ctx, w) in seq.ngrams(self.order) {
            let p = self.ngram_prob(ctx, w);
            if p <= 0.0 {
                return Err(Error::ZeroProbability(w));
            }
            total += p.ln();
        }
        Ok(total)
    }

    pub fn corpus_logprob(&self, corpus: &Corpus, exec: Execution) -> Result<f64> {
        let parts = exec.map(&corpus.sentences, |s| self.sentence_logprob(s));
        let mut total = 0.0;
        for p in parts {
            total += p?;
        }
        Ok(total)
    }

    pub fn perplexity(&self, heldout: &Corpus) -> Result<f64> {
        self.perplexity_with(heldout, Execution::default())
    }

    pub fn perplexity_with(&self, heldout: &Corpus, exec: Execution) -> Result<f64> {
        let n = heldout.token_count();
        if n == 0 {
            return Err(Error::EmptyCorpus);
        }
        Ok((-self.corpus_logprob(heldout, exec)? / n as f64).exp())
    }

    pub(crate) fn resample_params<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        for depth in 0..self.order {
            let p = self.params[depth];
            self.params[depth] = sample_hyperparameters(self.trie.restaurants_at_depth(depth), p, rng);
        }
    }
}

/// Gibbs trainer: one seating pass, then remove/reinsert sweeps in corpus
/// order followed by per-depth hyperparameter resampling.
pub struct HpylmTrainer {
    corpus: Corpus,
    model: HpylmModel,
}

impl HpylmTrainer {
    pub fn new(corpus: &Corpus, vocab_len: usize, order: usize, seed: u64) -> Result<Self> {
        if corpus.token_count() == 0 {
            return Err(Error::EmptyCorpus);
        }
        let corpus = corpus.repad(order);
        let mut model = HpylmModel::new(order, vocab_len, seed)?;
        let mut rng = rng::seeded(seed, rng::stream::HPYLM);
        for s in &corpus.sentences {
            for (ctx, w) in s.ngrams(order) {
                model.insert_ngram(ctx, w, &mut rng)?;
            }
        }
        Ok(HpylmTrainer { corpus, model })
    }

    pub fn model(&self) -> &HpylmModel {
        &self.model
    }

    pub fn step(&mut self) -> Result<()> {
        let order = self.model.order;
        let mut rng: ChainRng = rng::seeded(
            self.model.seed,
            rng::stream::ITERATION_BASE + self.model.iterations as u64,
        );
        for s in &self.corpus.sentences {
            for (ctx, w) in s.ngrams(order) {
                self.model.remove_ngram(ctx, w, &mut rng)?;
                self.model.insert_ngram(ctx, w, &mut rng)?;
            }
        }
        self.model.resample_params(&mut rng);
        self.model.iterations += 1;
        Ok(())
    }

    pub fn train_logprob(&self) -> Result<f64> {
        self.model.corpus_logprob(&self.corpus, Execution::Sequential)
    }

    pub fn finish(self) -> HpylmModel {
        self.model
    }
}

pub fn train_hpylm(
    corpus: &Corpus,
    vocab_len: usize,
    order: usize,
    iterations: usize,
    seed: u64,
) -> Result<HpylmModel> {
    if iterations == 0 {
        return Err(invalid("iterations must be at least 1"));
    }
    let mut trainer = HpylmTrainer::new(corpus, vocab_len, order, seed)?;
    for _ in 0..iterations {
        trainer.step()?;
    }
    Ok(trainer.finish())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{build_vocabulary, END, PAD};
    use approx::assert_abs_diff_eq;
    use proptest::{prop_assert, prop_assert_eq, proptest};

    fn toy() -> (crate::corpus::Vocabulary, Corpus) {
        let lines = ["a b c", "b c a", "a b"];
        let v = build_vocabulary(lines, 1).unwrap();
        let c = Corpus::from_lines(lines, &v, 3);
        (v, c)
    }

    #[test]
    fn empty_model_is_uniform() {
        let m = HpylmModel::new(3, 8, 0).unwrap();
        assert_eq!(m.ngram_prob(&[3, 4], 5), 1.0 / 7.0);
        let (v, c) = toy();
        let m = HpylmModel::new(3, v.len(), 0).unwrap();
        assert_abs_diff_eq!(m.perplexity(&c).unwrap(), v.predictable_len() as f64, epsilon = 1e-9);
    }

    #[test]
    fn insert_into_empty_cascades_to_root() {
        let mut m = HpylmModel::new(4, 10, 0).unwrap();
        let mut rng = rng::seeded(0, 0);
        m.insert_ngram(&[3, 4, 5], 6, &mut rng).unwrap();
        for d in 0..4 {
            assert_eq!(m.trie.customers_at_depth(d), 1);
        }
        m.remove_ngram(&[3, 4, 5], 6, &mut rng).unwrap();
        assert!(m.trie.is_empty());
        assert_eq!(m.trie.node_count(), 1);
        assert!(matches!(
            m.remove_ngram(&[3, 4, 5], 6, &mut rng),
            Err(Error::MissingNgram(6))
        ));
    }

    /// Direct evaluation of the two-level predictive chain for one bigram.
    #[test]
    fn single_bigram_matches_recursive_formula() {
        let mut m = HpylmModel::new(2, 6, 0).unwrap(); // |V| = 5 predictable
        m.params = vec![PypParams::new(0.5, 1.0).unwrap(); 2];
        let mut rng = rng::seeded(0, 0);
        m.insert_ngram(&[3], 4, &mut rng).unwrap();
        fn py(c_w: f64, t_w: f64, c: f64, t: f64, d: f64, th: f64, base: f64) -> f64 {
            if c == 0.0 {
                return base;
            }
            (c_w - d * t_w) / (th + c) + (th + d * t) / (th + c) * base
        }
        let u = 0.2;
        for w in 1..6u32 {
            let hit = if w == 4 { 1.0 } else { 0.0 };
            let root = py(hit, hit, 1.0, 1.0, 0.5, 1.0, u);
            let expect_seen_ctx = py(hit, hit, 1.0, 1.0, 0.5, 1.0, root);
            assert_abs_diff_eq!(m.ngram_prob(&[3], w), expect_seen_ctx, epsilon = 1e-15);
            assert_abs_diff_eq!(m.ngram_prob(&[5], w), root, epsilon = 1e-15);
        }
        assert_abs_diff_eq!(m.ngram_prob(&[3], 4), 0.5 / 2.0 + 0.75 * (0.25 + 0.75 * 0.2), epsilon = 1e-15);
    }

    #[test]
    fn one_iteration_keeps_token_count_at_deepest_level() {
        let (v, c) = toy();
        let m = train_hpylm(&c, v.len(), 3, 1, 5).unwrap();
        assert_eq!(m.trie.customers_at_depth(2) as usize, c.token_count());
        m.trie.audit().unwrap();
        assert!(m.params.iter().all(PypParams::is_valid));
    }

    #[test]
    fn training_is_deterministic_and_learns() {
        let (v, c) = toy();
        let a = train_hpylm(&c, v.len(), 3, 3, 9).unwrap();
        let b = train_hpylm(&c, v.len(), 3, 3, 9).unwrap();
        assert_eq!(a, b);
        let untrained = HpylmModel::new(3, v.len(), 0).unwrap();
        assert!(a.perplexity(&c).unwrap() < untrained.perplexity(&c).unwrap());
    }

    #[test]
    fn empty_corpus_and_zero_iterations_fail() {
        let v = build_vocabulary(["a"], 1).unwrap();
        let empty = Corpus::from_lines(Vec::<&str>::new(), &v, 2);
        assert!(matches!(train_hpylm(&empty, v.len(), 2, 1, 0), Err(Error::EmptyCorpus)));
        let (v, c) = toy();
        assert!(train_hpylm(&c, v.len(), 2, 0, 0).is_err());
    }

    #[test]
    fn pads_are_never_predicted() {
        let (v, c) = toy();
        let m = train_hpylm(&c, v.len(), 2, 2, 1).unwrap();
        let total: f64 = v.predictable_ids().map(|w| m.ngram_prob(&[PAD], w)).sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
        assert!(m.ngram_prob(&[PAD], END) > 0.0);
    }

    proptest! {
        #[test]
        fn normalised_and_consistent_under_random_ops(
            ops in proptest::collection::vec((0u32..3, 0u32..3, 1u32..6, proptest::bool::ANY), 1..120),
            seed in 0u64..500,
            d in 0.0f64..0.9,
            theta in 0.1f64..4.0,
        ) {
            let mut m = HpylmModel::new(3, 6, seed).unwrap();
            m.params = vec![PypParams::new(d, theta).unwrap(); 3];
            let mut rng = rng::seeded(seed, 0);
            let mut live: Vec<([u32; 2], u32)> = Vec::new();
            for (a, b, w, remove) in ops {
                let ctx = [a + 1, b + 1];
                if remove && !live.is_empty() {
                    let (c, w) = live.swap_remove((a as usize) % live.len());
                    m.remove_ngram(&c, w, &mut rng).unwrap();
                } else {
                    m.insert_ngram(&ctx, w, &mut rng).unwrap();
                    live.push((ctx, w));
                }
                prop_assert!(m.trie.audit().is_ok());
            }
            prop_assert_eq!(m.trie.customers_at_depth(2) as usize, live.len());
            for ctx in [[1u32, 1], [2, 3], [5, 5]] {
                let total: f64 = (1..6).map(|w| m.ngram_prob(&ctx, w)).sum();
                prop_assert!((total - 1.0).abs() < 1e-9);
            }
        }
    }
}
