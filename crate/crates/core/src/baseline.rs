//! Count-based reference models for perplexity comparisons: add-one
//! (Laplace) smoothing and interpolated Kneser-Ney with a fixed discount.
//!
//! The Kneser-Ney model here is a plain in-repo implementation used only to
//! check orderings; it is not a reimplementation of any external toolkit.

use std::collections::HashMap;

use crate::corpus::{Corpus, TokenSeq};
use crate::error::{invalid, Error, Result};

/// Conditional model over a closed vocabulary, scored like the other models.
pub trait NgramScorer {
    fn order(&self) -> usize;
    fn prob(&self, context: &[u32], word: u32) -> f64;

    fn sentence_logprob(&self, sentence: &TokenSeq) -> Result<f64> {
        let seq = if sentence.pads() + 1 < self.order() {
            sentence.repad(self.order())
        } else {
            sentence.clone()
        };
        let mut total = 0.0;
        for (ctx, w) in seq.ngrams(self.order()) {
            let p = self.prob(ctx, w);
            if p <= 0.0 {
                return Err(Error::ZeroProbability(w));
            }
            total += p.ln();
        }
        Ok(total)
    }

    fn perplexity(&self, heldout: &Corpus) -> Result<f64> {
        let n = heldout.token_count();
        if n == 0 {
            return Err(Error::EmptyCorpus);
        }
        let mut total = 0.0;
        for s in &heldout.sentences {
            total += self.sentence_logprob(s)?;
        }
        Ok((-total / n as f64).exp())
    }
}

fn check(order: usize, vocab_len: usize) -> Result<()> {
    if order == 0 {
        return Err(invalid("order must be at least 1"));
    }
    if vocab_len < 2 {
        return Err(invalid("vocabulary has no predictable symbols"));
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct AddOneModel {
    order: usize,
    support: f64,
    counts: HashMap<Vec<u32>, u64>,
    context_totals: HashMap<Vec<u32>, u64>,
}

impl AddOneModel {
    pub fn train(corpus: &Corpus, vocab_len: usize, order: usize) -> Result<Self> {
        check(order, vocab_len)?;
        let mut counts = HashMap::new();
        let mut context_totals = HashMap::new();
        for s in &corpus.repad(order).sentences {
            for (ctx, w) in s.ngrams(order) {
                let mut key = ctx.to_vec();
                *context_totals.entry(key.clone()).or_insert(0) += 1;
                key.push(w);
                *counts.entry(key).or_insert(0) += 1;
            }
        }
        Ok(AddOneModel {
            order,
            support: (vocab_len - 1) as f64,
            counts,
            context_totals,
        })
    }
}

impl NgramScorer for AddOneModel {
    fn order(&self) -> usize {
        self.order
    }

    fn prob(&self, context: &[u32], word: u32) -> f64 {
        let ctx = &context[context.len() + 1 - self.order..];
        let total = self.context_totals.get(ctx).copied().unwrap_or(0);
        let mut key = ctx.to_vec();
        key.push(word);
        let c = self.counts.get(&key).copied().unwrap_or(0);
        (c as f64 + 1.0) / (total as f64 + self.support)
    }
}

#[derive(Debug, Clone, Default)]
struct Level {
    /// Count (raw at the top level, continuation below) of each k-gram.
    grams: HashMap<Vec<u32>, u64>,
    /// Per context: (total count, number of distinct followers).
    contexts: HashMap<Vec<u32>, (u64, u64)>,
}

#[derive(Debug, Clone)]
pub struct KneserNeyModel {
    order: usize,
    support: f64,
    discount: f64,
    /// levels[k - 1] holds k-grams.
    levels: Vec<Level>,
}

impl KneserNeyModel {
    pub fn train(corpus: &Corpus, vocab_len: usize, order: usize, discount: f64) -> Result<Self> {
        check(order, vocab_len)?;
        if !(0.0..1.0).contains(&discount) {
            return Err(invalid("Kneser-Ney discount must lie in [0, 1)"));
        }
        let mut levels = vec![Level::default(); order];
        for s in &corpus.repad(order).sentences {
            for (ctx, w) in s.ngrams(order) {
                let mut g = ctx.to_vec();
                g.push(w);
                *levels[order - 1].grams.entry(g).or_insert(0) += 1;
            }
        }
        // continuation count of a k-gram = distinct (k+1)-grams ending in it
        for k in (1..order).rev() {
            let higher: Vec<Vec<u32>> = levels[k].grams.keys().cloned().collect();
            for g in higher {
                *levels[k - 1].grams.entry(g[1..].to_vec()).or_insert(0) += 1;
            }
        }
        for level in &mut levels {
            for (g, &c) in &level.grams {
                let e = level.contexts.entry(g[..g.len() - 1].to_vec()).or_insert((0, 0));
                e.0 += c;
                e.1 += 1;
            }
        }
        Ok(KneserNeyModel {
            order,
            support: (vocab_len - 1) as f64,
            discount,
            levels,
        })
    }

    fn level_prob(&self, k: usize, ctx: &[u32], word: u32) -> f64 {
        let lower = if k == 1 {
            1.0 / self.support
        } else {
            self.level_prob(k - 1, &ctx[1..], word)
        };
        let level = &self.levels[k - 1];
        let Some(&(total, types)) = level.contexts.get(ctx) else {
            return lower;
        };
        let mut g = ctx.to_vec();
        g.push(word);
        let c = level.grams.get(&g).copied().unwrap_or(0) as f64;
        let total = total as f64;
        (c - self.discount).max(0.0) / total + self.discount * types as f64 / total * lower
    }
}

impl NgramScorer for KneserNeyModel {
    fn order(&self) -> usize {
        self.order
    }

    fn prob(&self, context: &[u32], word: u32) -> f64 {
        let ctx = &context[context.len() + 1 - self.order..];
        self.level_prob(self.order, ctx, word)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::build_vocabulary;
    use approx::assert_abs_diff_eq;

    fn toy() -> (usize, Corpus) {
        let lines = ["a b c a", "b c a b", "c a", "a a b"];
        let v = build_vocabulary(lines, 1).unwrap();
        (v.len(), Corpus::from_lines(lines, &v, 3))
    }

    #[test]
    fn add_one_normalises_and_matches_counts() {
        let (vl, c) = toy();
        let m = AddOneModel::train(&c, vl, 2).unwrap();
        for ctx in [[0u32], [3], [4], [6]] {
            let s: f64 = (1..vl as u32).map(|w| m.prob(&ctx, w)).sum();
            assert_abs_diff_eq!(s, 1.0, epsilon = 1e-12);
        }
        // unseen context is uniform
        assert_abs_diff_eq!(m.prob(&[99], 3), 1.0 / (vl - 1) as f64, epsilon = 1e-15);
    }

    #[test]
    fn kneser_ney_normalises() {
        let (vl, c) = toy();
        let m = KneserNeyModel::train(&c, vl, 3, 0.75).unwrap();
        for ctx in [[0u32, 0], [3, 4], [4, 5], [9, 9]] {
            let s: f64 = (1..vl as u32).map(|w| m.prob(&ctx, w)).sum();
            assert_abs_diff_eq!(s, 1.0, epsilon = 1e-12);
        }
        let ao = AddOneModel::train(&c, vl, 3).unwrap();
        assert!(m.perplexity(&c).unwrap() < ao.perplexity(&c).unwrap());
    }
}
