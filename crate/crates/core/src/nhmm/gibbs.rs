//! Blocked Gibbs sweeps: per-sentence state resampling with slice-truncated
//! forward filtering, state birth from the global stick, pruning, and
//! hyperparameter updates.
//!
//! The shared HPYLM is sampled alongside the states: while a sentence's
//! states are redrawn its n-grams are taken out of the shared model too, so
//! no token ever backs off to a distribution that already counts it.

use std::sync::Arc;

use log::debug;
use rand::Rng;

use super::beam::{beam_forward, sample_slices, sample_state_sequence, SliceVars, TransitionMatrix};
use super::{HmmModel, StateSeq};
use crate::corpus::Corpus;
use crate::error::{invalid, Error, Result};
use crate::hpylm::HpylmModel;
use crate::pyp::{sample_dp_concentration, sample_hyperparameters, sample_top_concentration, PypParams};
use crate::rng::{self, ChainRng};
use crate::stats;

const SLICE_RETRIES: usize = 5;
const CONCENTRATION_SHAPE: f64 = 1.0;
const CONCENTRATION_RATE: f64 = 1.0;

/// Breaks the global stick into new, empty states until the remainder falls
/// below `min_slice` (or `max_states` is reached). Returns how many states
/// were added.
pub fn extend_state_space<R: Rng + ?Sized>(m: &mut HmmModel, min_slice: f64, max_states: usize, rng: &mut R) -> usize {
    let mut added = 0;
    while m.stick_rem >= min_slice && m.num_states() < max_states {
        let b = stats::beta(1.0, m.gamma_top, rng);
        let w = b * m.stick_rem;
        if w <= 0.0 {
            break;
        }
        m.push_state(w);
        added += 1;
    }
    added
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct SweepStats {
    /// Sum over tokens of log π(prev → h) + log emit(h), each evaluated with
    /// the token's sentence removed.
    pub train_loglik: f64,
    pub states_added: usize,
    pub states_pruned: usize,
    /// Sentences that fell back to exact filtering after repeated empty beams.
    pub exact_fallbacks: usize,
}

/// One Gibbs chain over a fixed training corpus.
#[derive(Debug, Clone)]
pub struct NhmmSampler {
    model: HmmModel,
    corpus: Corpus,
    states: Vec<StateSeq>,
    rng: ChainRng,
    iteration: usize,
    max_states: usize,
    slice_sampling: bool,
}

impl NhmmSampler {
    /// Seats `corpus` under the initial `states` (dense ids starting at 0).
    /// `base` must have been trained on (a superset of) `corpus`.
    pub fn new(
        base: Arc<HpylmModel>,
        emission_params: Vec<PypParams>,
        corpus: &Corpus,
        states: Vec<StateSeq>,
        seed: u64,
    ) -> Result<Self> {
        if corpus.token_count() == 0 {
            return Err(Error::EmptyCorpus);
        }
        if states.len() != corpus.len() {
            return Err(invalid("one state sequence per sentence is required"));
        }
        let corpus = corpus.repad(base.order());
        let model = HmmModel::new(base, emission_params, 1.0, 1.0)?;
        let base_probs: Vec<Vec<f64>> = corpus.sentences.iter().map(|s| model.base_probs(s)).collect();
        let mut rng = rng::seeded(seed, rng::stream::GIBBS);
        let model = model.from_assignments(&corpus, &states, &base_probs, &mut rng)?;
        Ok(NhmmSampler {
            model,
            corpus,
            states,
            rng,
            iteration: 0,
            max_states: 256,
            slice_sampling: true,
        })
    }

    /// Caps the number of instantiated states.
    pub fn with_max_states(mut self, max_states: usize) -> Self {
        self.max_states = max_states.max(1);
        self
    }

    /// Exact filtering for every sentence instead of slice truncation.
    pub fn with_slice_sampling(mut self, on: bool) -> Self {
        self.slice_sampling = on;
        self
    }

    pub fn model(&self) -> &HmmModel {
        &self.model
    }

    pub fn states(&self) -> &[StateSeq] {
        &self.states
    }

    pub fn iteration(&self) -> usize {
        self.iteration
    }

    pub fn corpus(&self) -> &Corpus {
        &self.corpus
    }

    pub fn into_model(self) -> HmmModel {
        self.model
    }

    /// One sweep over every sentence followed by pruning and hyperparameter
    /// updates.
    pub fn gibbs_iteration(&mut self) -> Result<SweepStats> {
        let mut stats = SweepStats::default();
        for s in 0..self.corpus.len() {
            self.resample_sentence(s, &mut stats)?;
        }
        let before = self.model.num_states();
        let map = self.model.prune_states();
        stats.states_pruned = before - self.model.num_states();
        if stats.states_pruned > 0 {
            for seq in &mut self.states {
                for h in seq.iter_mut() {
                    *h = map[*h as usize].expect("assigned state survives pruning");
                }
            }
        }
        self.resample_stick();
        self.resample_concentrations();
        self.resample_emission_params();
        Arc::make_mut(&mut self.model.base).resample_params(&mut self.rng);
        self.iteration += 1;
        debug!(
            "iteration {}: K={} loglik={:.3} added={} pruned={}",
            self.iteration,
            self.model.num_states(),
            stats.train_loglik,
            stats.states_added,
            stats.states_pruned
        );
        Ok(stats)
    }

    fn resample_sentence(&mut self, s: usize, stats: &mut SweepStats) -> Result<()> {
        let seq = &self.corpus.sentences[s];
        let order = self.model.order();
        self.model.unseat_sentence(seq, &self.states[s], &mut self.rng)?;
        let base = Arc::make_mut(&mut self.model.base);
        for (ctx, w) in seq.ngrams(order) {
            base.remove_ngram(ctx, w, &mut self.rng)?;
        }
        let bases = &self.model.base_probs(seq);

        let mut matrix = TransitionMatrix::new(&self.model);
        let mut sampled = None;
        if self.slice_sampling {
            for _ in 0..=SLICE_RETRIES {
                let slices = sample_slices(&matrix, &self.states[s], &mut self.rng)?;
                let min = slices.min().unwrap_or(1.0);
                let added = extend_state_space(&mut self.model, min, self.max_states, &mut self.rng);
                if added > 0 {
                    stats.states_added += added;
                    matrix = TransitionMatrix::new(&self.model);
                }
                match beam_forward(&self.model, &mut matrix, seq, bases, &slices) {
                    Ok(msgs) => {
                        sampled = Some(sample_state_sequence(&msgs, &matrix, &slices, &mut self.rng)?);
                        break;
                    }
                    Err(Error::BeamExhausted(_)) => continue,
                    Err(e) => return Err(e),
                }
            }
        }
        let new_states = match sampled {
            Some(h) => h,
            None => {
                if self.slice_sampling {
                    stats.exact_fallbacks += 1;
                }
                let msgs = beam_forward(&self.model, &mut matrix, seq, bases, &SliceVars::Exact)?;
                sample_state_sequence(&msgs, &matrix, &SliceVars::Exact, &mut self.rng)?
            }
        };

        let mut prev = None;
        for (t, (ctx, w)) in seq.ngrams(order).enumerate() {
            let h = new_states[t];
            let e = self.model.emit(h as usize, ctx, w, bases[t]);
            stats.train_loglik += matrix.prob(prev, h).ln() + e.ln();
            prev = Some(h);
        }
        let base = Arc::make_mut(&mut self.model.base);
        for (ctx, w) in seq.ngrams(order) {
            base.insert_ngram(ctx, w, &mut self.rng)?;
        }
        self.model.seat_sentence(seq, &new_states, bases, &mut self.rng)?;
        self.states[s] = new_states;
        Ok(())
    }

    /// Global stick from the table counts of every transition restaurant.
    fn resample_stick(&mut self) {
        let k = self.model.num_states();
        let mut alphas = vec![0.0; k + 1];
        for r in std::iter::once(&self.model.start).chain(&self.model.rows) {
            for (dish, sizes) in r.dishes() {
                alphas[dish as usize] += sizes.len() as f64;
            }
        }
        alphas[k] = self.model.gamma_top;
        let draw = stats::dirichlet(&alphas, &mut self.rng);
        self.model.stick = draw[..k].to_vec();
        self.model.stick_rem = draw[k];
    }

    fn resample_concentrations(&mut self) {
        let m = &mut self.model;
        let restaurants = std::iter::once(&m.start).chain(&m.rows);
        m.dp_alpha = sample_dp_concentration(
            restaurants,
            m.dp_alpha,
            CONCENTRATION_SHAPE,
            CONCENTRATION_RATE,
            &mut self.rng,
        );
        let tables: u32 = std::iter::once(&m.start).chain(&m.rows).map(|r| r.tables()).sum();
        m.gamma_top = sample_top_concentration(
            tables as f64,
            m.num_states() as f64,
            m.gamma_top,
            CONCENTRATION_SHAPE,
            CONCENTRATION_RATE,
            &mut self.rng,
        );
    }

    fn resample_emission_params(&mut self) {
        let m = &mut self.model;
        for depth in 0..m.order() {
            let p = m.emission_params[depth];
            let restaurants = m.emissions.iter().flat_map(|t| t.restaurants_at_depth(depth));
            m.emission_params[depth] = sample_hyperparameters(restaurants, p, &mut self.rng);
        }
    }

    /// Seating totals agree with the corpus and the stored state paths.
    pub fn check_counts(&self) -> std::result::Result<(), String> {
        self.model.check()?;
        let tokens = self.corpus.token_count() as u64;
        if self.model.transition_customers() != tokens {
            return Err(format!(
                "{} transition customers for {tokens} tokens",
                self.model.transition_customers()
            ));
        }
        if self.model.emission_customers() != tokens {
            return Err(format!(
                "{} emission customers for {tokens} tokens",
                self.model.emission_customers()
            ));
        }
        let k = self.model.num_states();
        let mut per_state = vec![0u32; k];
        for seq in &self.states {
            for &h in seq {
                if h as usize >= k {
                    return Err(format!("state {h} is not instantiated"));
                }
                per_state[h as usize] += 1;
            }
        }
        for (h, &n) in per_state.iter().enumerate() {
            if self.model.state_tokens(h) != n {
                return Err(format!("state {h} seats {} tokens, paths hold {n}", self.model.state_tokens(h)));
            }
        }
        Ok(())
    }
}
