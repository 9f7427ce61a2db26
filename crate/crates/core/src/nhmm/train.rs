use std::sync::Arc;
use std::time::Instant;

use log::info;

use super::gibbs::NhmmSampler;
use super::{perplexity, HmmModel, StateSeq};
use crate::corpus::Corpus;
use crate::error::{invalid, Result};
use crate::exec::Execution;
use crate::hpylm::HpylmModel;
use crate::init::{bootstrap_smoothing, em_run, EmConfig};

#[derive(Debug, Clone, PartialEq)]
pub struct NhmmConfig {
    pub order: usize,
    /// Sweeps of the shared HPYLM before the HMM starts.
    pub hpylm_iterations: usize,
    pub em: EmConfig,
    pub iterations: usize,
    pub burn_in: usize,
    /// Iterations between kept posterior snapshots.
    pub sample_spacing: usize,
    /// Snapshots averaged for held-out scoring.
    pub samples: usize,
    pub max_states: usize,
    /// Slice-truncated filtering; when off every sentence is filtered exactly.
    pub slice_sampling: bool,
}

impl Default for NhmmConfig {
    fn default() -> Self {
        NhmmConfig {
            order: 3,
            hpylm_iterations: 50,
            em: EmConfig::default(),
            iterations: 200,
            burn_in: 100,
            sample_spacing: 10,
            samples: 10,
            max_states: 256,
            slice_sampling: true,
        }
    }
}

impl NhmmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.order == 0 {
            return Err(invalid("order must be at least 1"));
        }
        if self.iterations == 0 || self.hpylm_iterations == 0 {
            return Err(invalid("iterations must be at least 1"));
        }
        if self.sample_spacing == 0 || self.samples == 0 {
            return Err(invalid("sample spacing and sample count must be at least 1"));
        }
        if self.max_states == 0 || self.em.states == 0 || self.em.max_iters == 0 {
            return Err(invalid("state counts and EM iterations must be at least 1"));
        }
        if !(self.em.tau >= 0.0 && self.em.tau < 1.0) {
            return Err(invalid("EM truncation threshold must lie in [0, 1)"));
        }
        Ok(())
    }

    /// Whether the model after `iteration` (1-based) is kept as a snapshot:
    /// the last `samples` iterations spaced `sample_spacing` apart, counted
    /// back from the final one and after burn-in. The final model is always
    /// kept.
    pub fn is_snapshot(&self, iteration: usize) -> bool {
        if iteration == self.iterations {
            return true;
        }
        let back = self.iterations - iteration;
        iteration > self.burn_in && back % self.sample_spacing == 0 && back / self.sample_spacing < self.samples
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct IterationRecord {
    pub iteration: usize,
    pub states: usize,
    pub train_loglik: f64,
    /// Held-out perplexity of this iteration's model, at snapshot iterations.
    pub heldout_ppl: Option<f64>,
    pub seconds: f64,
}

/// Output of one chain: the kept snapshots (last = final model) and the
/// per-iteration log.
#[derive(Debug, Clone, PartialEq)]
pub struct NhmmRun {
    pub snapshots: Vec<HmmModel>,
    pub log: Vec<IterationRecord>,
    pub em_trace: Vec<f64>,
}

impl NhmmRun {
    pub fn model(&self) -> &HmmModel {
        self.snapshots.last().expect("a run keeps at least its final model")
    }

    pub fn perplexity(&self, heldout: &Corpus, exec: Execution) -> Result<f64> {
        perplexity(&self.snapshots, heldout, exec)
    }
}

/// Bootstraps the shared HPYLM from `corpus`, then trains the HMM on top.
pub fn train_nhmm(
    corpus: &Corpus,
    vocab_len: usize,
    config: &NhmmConfig,
    seed: u64,
    heldout: Option<&Corpus>,
) -> Result<NhmmRun> {
    config.validate()?;
    let base = bootstrap_smoothing(corpus, vocab_len, config.order, config.hpylm_iterations, seed)?;
    train_nhmm_with_base(corpus, Arc::new(base), config, seed, heldout)
}

/// Trains the HMM over an already trained shared HPYLM.
pub fn train_nhmm_with_base(
    corpus: &Corpus,
    base: Arc<HpylmModel>,
    config: &NhmmConfig,
    seed: u64,
    heldout: Option<&Corpus>,
) -> Result<NhmmRun> {
    config.validate()?;
    if base.order() != config.order {
        return Err(invalid("shared model order differs from the configured order"));
    }
    let em = em_run(corpus, base.vocab_len(), config.em, seed, Execution::Sequential)?;
    let states = dense_states(&em.states);
    let emission_params = base.params.clone();
    let mut sampler = NhmmSampler::new(base, emission_params, corpus, states, seed)?
        .with_max_states(config.max_states)
        .with_slice_sampling(config.slice_sampling);

    let started = Instant::now();
    let mut snapshots = Vec::new();
    let mut log = Vec::with_capacity(config.iterations);
    for it in 1..=config.iterations {
        let stats = sampler.gibbs_iteration()?;
        let mut heldout_ppl = None;
        if config.is_snapshot(it) {
            let m = sampler.model().clone();
            if let Some(h) = heldout {
                heldout_ppl = Some(perplexity(std::slice::from_ref(&m), h, Execution::Sequential)?);
            }
            snapshots.push(m);
        }
        let record = IterationRecord {
            iteration: it,
            states: sampler.model().num_states(),
            train_loglik: stats.train_loglik,
            heldout_ppl,
            seconds: started.elapsed().as_secs_f64(),
        };
        if it % 10 == 0 || it == config.iterations {
            info!(
                "nhmm seed {seed} iteration {it}: K={} train_loglik={:.2}",
                record.states, record.train_loglik
            );
        }
        log.push(record);
    }
    Ok(NhmmRun {
        snapshots,
        log,
        em_trace: em.trace,
    })
}

/// Renumbers the states used in `states` densely, in increasing id order.
fn dense_states(states: &[Vec<u32>]) -> Vec<StateSeq> {
    let max = states.iter().flatten().copied().max().map_or(0, |m| m as usize + 1);
    let mut used = vec![false; max];
    for &h in states.iter().flatten() {
        used[h as usize] = true;
    }
    let mut map = vec![0u32; max];
    let mut next = 0;
    for (h, u) in used.iter().enumerate() {
        if *u {
            map[h] = next;
            next += 1;
        }
    }
    states
        .iter()
        .map(|s| s.iter().map(|&h| map[h as usize]).collect())
        .collect()
}
