//! n-gram HMM language model.
//!
//! Hidden states follow a first-order chain whose rows are Dirichlet-process
//! restaurants sharing one global stick. Each state emits words through its
//! own Pitman-Yor context trie over the preceding `order - 1` words; the
//! root of every state trie backs off to a shared HPYLM over the whole
//! training corpus. Mass not yet
//! given to an instantiated state lives in a remainder pseudo-state whose
//! emission is the shared HPYLM itself.

pub mod beam;
pub mod gibbs;
mod train;

use std::sync::Arc;

use rand::Rng;

use crate::corpus::{Corpus, TokenSeq};
use crate::error::{invalid, Error, Result};
use crate::exec::Execution;
use crate::hpylm::{ContextTrie, HpylmModel};
use crate::pyp::{PypParams, Restaurant};

pub use beam::{beam_forward, sample_slices, sample_state_sequence, ForwardMessages, SliceVars, TransitionMatrix};
pub use gibbs::{extend_state_space, NhmmSampler, SweepStats};
pub use train::{train_nhmm, train_nhmm_with_base, IterationRecord, NhmmConfig, NhmmRun};

/// Hidden state of every predicted token of one sentence.
pub type StateSeq = Vec<u32>;

#[derive(Debug, Clone, PartialEq)]
pub struct HmmModel {
    order: usize,
    /// Global stick weight of each instantiated state.
    pub stick: Vec<f64>,
    /// Stick mass not assigned to any instantiated state.
    pub stick_rem: f64,
    /// Transitions out of the sentence start; dishes are state ids.
    pub start: Restaurant,
    /// Transition restaurant of each state.
    pub rows: Vec<Restaurant>,
    pub emissions: Vec<ContextTrie>,
    /// Emission discount/strength per context depth, shared by all states.
    pub emission_params: Vec<PypParams>,
    pub dp_alpha: f64,
    pub gamma_top: f64,
    pub base: Arc<HpylmModel>,
}

impl HmmModel {
    /// Model with no instantiated states over `base`, which also fixes the
    /// order and vocabulary.
    pub fn new(base: Arc<HpylmModel>, emission_params: Vec<PypParams>, dp_alpha: f64, gamma_top: f64) -> Result<Self> {
        let order = base.order();
        if emission_params.len() != order || !emission_params.iter().all(PypParams::is_valid) {
            return Err(invalid(format!("need {order} valid emission parameter pairs")));
        }
        if !(dp_alpha > 0.0 && gamma_top > 0.0) {
            return Err(invalid("concentrations must be positive"));
        }
        Ok(HmmModel {
            order,
            stick: Vec::new(),
            stick_rem: 1.0,
            start: Restaurant::new(),
            rows: Vec::new(),
            emissions: Vec::new(),
            emission_params,
            dp_alpha,
            gamma_top,
            base,
        })
    }

    /// Seats a corpus under fixed state assignments. The stick starts at
    /// each state's token share, `n_h / (N + gamma)`, leaving `gamma / (N +
    /// gamma)` as remainder.
    pub fn from_assignments<R: Rng + ?Sized>(
        mut self,
        corpus: &Corpus,
        states: &[StateSeq],
        base_probs: &[Vec<f64>],
        rng: &mut R,
    ) -> Result<Self> {
        let k = states.iter().flatten().map(|&h| h as usize + 1).max().unwrap_or(0);
        let mut counts = vec![0usize; k];
        for (s, seq) in corpus.sentences.iter().zip(states) {
            if seq.len() != s.len() {
                return Err(invalid("state sequence length differs from sentence length"));
            }
            for &h in seq {
                counts[h as usize] += 1;
            }
        }
        if counts.iter().any(|&c| c == 0) {
            return Err(invalid("state ids must be dense"));
        }
        let n = corpus.token_count() as f64;
        let denom = n + self.gamma_top;
        self.stick = counts.iter().map(|&c| c as f64 / denom).collect();
        self.stick_rem = self.gamma_top / denom;
        self.start = Restaurant::new();
        self.rows = vec![Restaurant::new(); k];
        self.emissions = vec![ContextTrie::new(self.order - 1); k];
        for ((s, seq), bases) in corpus.sentences.iter().zip(states).zip(base_probs) {
            self.seat_sentence(s, seq, bases, rng)?;
        }
        Ok(self)
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn vocab_len(&self) -> usize {
        self.base.vocab_len()
    }

    pub fn num_states(&self) -> usize {
        self.stick.len()
    }

    /// Shared back-off probability, also the remainder state's emission.
    pub fn base_prob(&self, ctx: &[u32], word: u32) -> f64 {
        self.base.ngram_prob(ctx, word)
    }

    /// Base probabilities of every predicted token of `seq`.
    pub fn base_probs(&self, seq: &TokenSeq) -> Vec<f64> {
        seq.ngrams(self.order).map(|(ctx, w)| self.base_prob(ctx, w)).collect()
    }

    /// Emission probability of `word` after `ctx` in state `h`, given the
    /// precomputed shared base probability.
    pub fn emit(&self, h: usize, ctx: &[u32], word: u32, base_prob: f64) -> f64 {
        self.emissions[h].predictive(&self.emission_params, ctx, word, base_prob)
    }

    /// Customers transitioning into `h` (equals the tokens assigned to it).
    pub fn state_tokens(&self, h: usize) -> u32 {
        let d = h as u32;
        self.start.dish_customers(d) + self.rows.iter().map(|r| r.dish_customers(d)).sum::<u32>()
    }

    pub fn transition_customers(&self) -> u64 {
        self.start.customers() as u64 + self.rows.iter().map(|r| r.customers() as u64).sum::<u64>()
    }

    /// Tokens seated at the deepest emission level across all states.
    pub fn emission_customers(&self) -> u64 {
        self.emissions.iter().map(|t| t.customers_at_depth(self.order - 1)).sum()
    }

    fn row_mut(&mut self, from: Option<u32>) -> &mut Restaurant {
        match from {
            Some(k) => &mut self.rows[k as usize],
            None => &mut self.start,
        }
    }

    pub(crate) fn seat_sentence<R: Rng + ?Sized>(
        &mut self,
        seq: &TokenSeq,
        states: &[u32],
        base_probs: &[f64],
        rng: &mut R,
    ) -> Result<()> {
        let dp = PypParams::dirichlet(self.dp_alpha);
        let mut prev = None;
        for (t, (ctx, w)) in seq.ngrams(self.order).enumerate() {
            let h = states[t];
            let beta = self.stick[h as usize];
            self.row_mut(prev).add_customer(&dp, h, beta, rng)?;
            let params = &self.emission_params;
            self.emissions[h as usize].insert(params, ctx, w, base_probs[t], rng)?;
            prev = Some(h);
        }
        Ok(())
    }

    pub(crate) fn unseat_sentence<R: Rng + ?Sized>(&mut self, seq: &TokenSeq, states: &[u32], rng: &mut R) -> Result<()> {
        let mut prev = None;
        for (t, (ctx, w)) in seq.ngrams(self.order).enumerate() {
            let h = states[t];
            self.row_mut(prev).remove_customer(h, rng)?;
            self.emissions[h as usize].remove(ctx, w, rng)?;
            prev = Some(h);
        }
        Ok(())
    }

    /// Appends a state with stick weight `weight` taken from the remainder.
    pub(crate) fn push_state(&mut self, weight: f64) {
        self.stick.push(weight);
        self.stick_rem -= weight;
        self.rows.push(Restaurant::new());
        self.emissions.push(ContextTrie::new(self.order - 1));
    }

    /// Drops states nobody transitions into and renumbers the rest in order.
    /// Returns the old-to-new id map. Dropped stick mass joins the remainder.
    pub fn prune_states(&mut self) -> Vec<Option<u32>> {
        let k = self.num_states();
        let mut map = vec![None; k];
        let mut next = 0u32;
        for (h, slot) in map.iter_mut().enumerate() {
            if self.state_tokens(h) > 0 {
                *slot = Some(next);
                next += 1;
            }
        }
        if next as usize == k {
            return map;
        }
        let mut stick = Vec::with_capacity(next as usize);
        let mut rows = Vec::with_capacity(next as usize);
        let mut emissions = Vec::with_capacity(next as usize);
        let old_rows = std::mem::take(&mut self.rows);
        let old_emissions = std::mem::take(&mut self.emissions);
        for (h, (row, em)) in old_rows.into_iter().zip(old_emissions).enumerate() {
            if map[h].is_some() {
                stick.push(self.stick[h]);
                rows.push(row);
                emissions.push(em);
            } else {
                debug_assert!(row.is_empty() && em.is_empty());
                self.stick_rem += self.stick[h];
            }
        }
        self.stick = stick;
        self.rows = rows;
        self.emissions = emissions;
        self.start.remap_dishes(&map);
        for r in &mut self.rows {
            r.remap_dishes(&map);
        }
        map
    }

    /// Predictive next-state distribution of row `from` (`None` = sentence
    /// start): instantiated states, then the remainder.
    pub fn transition_row(&self, from: Option<usize>) -> Vec<f64> {
        let r = match from {
            Some(k) => &self.rows[k],
            None => &self.start,
        };
        let n = r.customers() as f64;
        let denom = self.dp_alpha + n;
        let w = self.dp_alpha / denom;
        let mut row: Vec<f64> = self.stick.iter().map(|&b| w * b).collect();
        for (dish, sizes) in r.dishes() {
            let c: u32 = sizes.iter().sum();
            row[dish as usize] += c as f64 / denom;
        }
        row.push(w * self.stick_rem);
        row
    }

    /// Next-word probability after state `prev`, mixing every instantiated
    /// state and the remainder.
    pub fn marginal_word_prob(&self, prev: usize, ctx: &[u32], word: u32) -> f64 {
        let row = self.transition_row(Some(prev));
        let base = self.base_prob(ctx, word);
        let k = self.num_states();
        let mut p = row[k] * base;
        for h in 0..k {
            p += row[h] * self.emit(h, ctx, word, base);
        }
        p
    }

    /// Exact forward log-probability of a sentence, marginalising the hidden
    /// path over all instantiated states and the remainder state.
    pub fn sequence_logprob(&self, sentence: &TokenSeq) -> Result<f64> {
        if self.num_states() == 0 {
            return Err(Error::UntrainedModel);
        }
        let seq;
        let seq = if sentence.pads() + 1 < self.order {
            seq = sentence.repad(self.order);
            &seq
        } else {
            sentence
        };
        let scorer = Scorer::new(self);
        let (_, log_prob) = scorer.forward(seq, seq.len(), None)?;
        Ok(log_prob)
    }

    pub fn corpus_logprob(&self, corpus: &Corpus, exec: Execution) -> Result<f64> {
        let parts = exec.map(&corpus.sentences, |s| self.sequence_logprob(s));
        parts.into_iter().sum()
    }

    pub fn check(&self) -> std::result::Result<(), String> {
        let k = self.num_states();
        if self.rows.len() != k || self.emissions.len() != k {
            return Err("state tables disagree on the state count".into());
        }
        let total: f64 = self.stick.iter().sum::<f64>() + self.stick_rem;
        if (total - 1.0).abs() > 1e-9 || self.stick.iter().any(|&b| b < 0.0) || self.stick_rem < 0.0 {
            return Err(format!("stick weights sum to {total}"));
        }
        for r in std::iter::once(&self.start).chain(&self.rows) {
            r.check()?;
            if r.dishes().any(|(d, _)| d as usize >= k) {
                return Err("transition to an uninstantiated state".into());
            }
        }
        for (h, t) in self.emissions.iter().enumerate() {
            t.audit().map_err(|e| format!("state {h}: {e}"))?;
        }
        Ok(())
    }
}

/// Dense forward pass over the instantiated states plus the remainder state.
pub(crate) struct Scorer<'a> {
    m: &'a HmmModel,
    /// Row-major (K + 2) x (K + 1): state rows, remainder row, start row.
    trans: Vec<f64>,
}

impl<'a> Scorer<'a> {
    pub(crate) fn new(m: &'a HmmModel) -> Self {
        let k = m.num_states();
        let mut trans = Vec::with_capacity((k + 2) * (k + 1));
        for h in 0..k {
            trans.extend(m.transition_row(Some(h)));
        }
        trans.extend(m.stick.iter().copied());
        trans.push(m.stick_rem);
        trans.extend(m.transition_row(None));
        Scorer { m, trans }
    }

    fn width(&self) -> usize {
        self.m.num_states() + 1
    }

    /// Filtered state distributions after the first `upto` tokens and the log
    /// probability of those tokens. `upto == 0` returns the start row's
    /// prediction. When `last_base` is set, it replaces the base probability
    /// of the final token.
    pub(crate) fn forward(&self, seq: &TokenSeq, upto: usize, last_base: Option<f64>) -> Result<(Vec<f64>, f64)> {
        let k1 = self.width();
        let start = (k1) * k1;
        let mut alpha = self.trans[start..start + k1].to_vec();
        let mut log_prob = 0.0;
        let mut next = vec![0.0; k1];
        for (t, (ctx, w)) in seq.ngrams(self.m.order).take(upto).enumerate() {
            let base = match last_base {
                Some(b) if t + 1 == upto => b,
                _ => self.m.base_prob(ctx, w),
            };
            if t > 0 {
                next.iter_mut().for_each(|x| *x = 0.0);
                for (j, &a) in alpha.iter().enumerate() {
                    if a == 0.0 {
                        continue;
                    }
                    let row = &self.trans[j * k1..(j + 1) * k1];
                    for (x, &p) in next.iter_mut().zip(row) {
                        *x += a * p;
                    }
                }
                std::mem::swap(&mut alpha, &mut next);
            }
            let mut total = 0.0;
            for (h, a) in alpha.iter_mut().enumerate() {
                let e = if h + 1 == k1 { base } else { self.m.emit(h, ctx, w, base) };
                *a *= e;
                total += *a;
            }
            if total <= 0.0 || !total.is_finite() {
                return Err(Error::ZeroProbability(w));
            }
            alpha.iter_mut().for_each(|a| *a /= total);
            log_prob += total.ln();
        }
        Ok((alpha, log_prob))
    }

    /// Predictive distribution of the next state given a filtered one.
    pub(crate) fn predict(&self, filtered: &[f64]) -> Vec<f64> {
        let k1 = self.width();
        let mut out = vec![0.0; k1];
        for (j, &a) in filtered.iter().enumerate() {
            let row = &self.trans[j * k1..(j + 1) * k1];
            for (x, &p) in out.iter_mut().zip(row) {
                *x += a * p;
            }
        }
        out
    }
}

/// Per-sentence log-probability averaged over posterior snapshots.
pub fn averaged_logprob(snapshots: &[HmmModel], sentence: &TokenSeq) -> Result<f64> {
    if snapshots.is_empty() {
        return Err(Error::UntrainedModel);
    }
    let mut total = 0.0;
    for m in snapshots {
        total += m.sequence_logprob(sentence)?;
    }
    Ok(total / snapshots.len() as f64)
}

/// Held-out perplexity with log-probabilities averaged over snapshots.
pub fn perplexity(snapshots: &[HmmModel], heldout: &Corpus, exec: Execution) -> Result<f64> {
    let n = heldout.token_count();
    if n == 0 {
        return Err(Error::EmptyCorpus);
    }
    let parts = exec.map(&heldout.sentences, |s| averaged_logprob(snapshots, s));
    let mut total = 0.0;
    for p in parts {
        total += p?;
    }
    Ok((-total / n as f64).exp())
}
