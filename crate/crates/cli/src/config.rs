//! Flat `key = value` run configuration.
//!
//! Later sources override earlier ones: built-in defaults, then the config
//! file, then `--set key=value` flags. Unknown keys and out-of-range values
//! are usage errors that name the offending key.

use std::fmt;
use std::path::Path;

use ngram_hmm::init::EmConfig;
use ngram_hmm::jointspace::JointConfig;
use ngram_hmm::lda::LdaConfig;
use ngram_hmm::nhmm::NhmmConfig;

use crate::UsageError;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub order: usize,
    pub min_count: u64,
    pub seed: u64,
    pub hpylm_iterations: usize,
    pub iterations: usize,
    pub burn_in: usize,
    pub sample_spacing: usize,
    pub samples: usize,
    pub max_states: usize,
    pub slice_sampling: bool,
    pub em_states: usize,
    pub em_tau: f64,
    pub em_iterations: usize,
    pub em_tol: f64,
    pub topics: usize,
    pub lda_alpha: f64,
    pub lda_beta: f64,
    pub lda_iterations: usize,
    /// Sweeps when folding a new document into a trained topic model.
    pub fold_in_sweeps: usize,
    pub min_sentences: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        let nhmm = NhmmConfig::default();
        let lda = LdaConfig::default();
        RunConfig {
            order: nhmm.order,
            min_count: 1,
            seed: 1,
            hpylm_iterations: nhmm.hpylm_iterations,
            iterations: nhmm.iterations,
            burn_in: nhmm.burn_in,
            sample_spacing: nhmm.sample_spacing,
            samples: nhmm.samples,
            max_states: nhmm.max_states,
            slice_sampling: nhmm.slice_sampling,
            em_states: nhmm.em.states,
            em_tau: nhmm.em.tau,
            em_iterations: nhmm.em.max_iters,
            em_tol: nhmm.em.tol,
            topics: lda.topics,
            lda_alpha: lda.alpha,
            lda_beta: lda.beta,
            lda_iterations: lda.iterations,
            fold_in_sweeps: 50,
            min_sentences: JointConfig::default().min_sentences,
        }
    }
}

pub const KEYS: &[&str] = &[
    "order",
    "min_count",
    "seed",
    "hpylm.iterations",
    "iterations",
    "burn_in",
    "sample_spacing",
    "samples",
    "max_states",
    "slice_sampling",
    "em.states",
    "em.tau",
    "em.iterations",
    "em.tol",
    "lda.topics",
    "lda.alpha",
    "lda.beta",
    "lda.iterations",
    "lda.fold_in_sweeps",
    "joint.min_sentences",
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, UsageError> {
    value
        .trim()
        .parse()
        .map_err(|_| UsageError(format!("config key `{key}`: cannot parse `{value}`")))
}

impl RunConfig {
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), UsageError> {
        match key {
            "order" => self.order = parse(key, value)?,
            "min_count" => self.min_count = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "hpylm.iterations" => self.hpylm_iterations = parse(key, value)?,
            "iterations" => self.iterations = parse(key, value)?,
            "burn_in" => self.burn_in = parse(key, value)?,
            "sample_spacing" => self.sample_spacing = parse(key, value)?,
            "samples" => self.samples = parse(key, value)?,
            "max_states" => self.max_states = parse(key, value)?,
            "slice_sampling" => self.slice_sampling = parse(key, value)?,
            "em.states" => self.em_states = parse(key, value)?,
            "em.tau" => self.em_tau = parse(key, value)?,
            "em.iterations" => self.em_iterations = parse(key, value)?,
            "em.tol" => self.em_tol = parse(key, value)?,
            "lda.topics" => self.topics = parse(key, value)?,
            "lda.alpha" => self.lda_alpha = parse(key, value)?,
            "lda.beta" => self.lda_beta = parse(key, value)?,
            "lda.iterations" => self.lda_iterations = parse(key, value)?,
            "lda.fold_in_sweeps" => self.fold_in_sweeps = parse(key, value)?,
            "joint.min_sentences" => self.min_sentences = parse(key, value)?,
            _ => return Err(UsageError(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// `key=value` assignment as given on the command line.
    pub fn apply(&mut self, assignment: &str) -> Result<(), UsageError> {
        let (k, v) = assignment
            .split_once('=')
            .ok_or_else(|| UsageError(format!("expected key=value, got `{assignment}`")))?;
        self.set(k.trim(), v.trim())
    }

    /// Applies every assignment in a config file. Blank lines and lines
    /// starting with `#` are skipped.
    pub fn apply_file(&mut self, path: &Path) -> Result<(), UsageError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| UsageError(format!("cannot read config file {}: {e}", path.display())))?;
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            self.apply(line)
                .map_err(|e| UsageError(format!("{}:{}: {}", path.display(), i + 1, e.0)))?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), UsageError> {
        let bad = |key: &str, why: &str| Err(UsageError(format!("config key `{key}`: {why}")));
        if !(1..=10).contains(&self.order) {
            return bad("order", "must lie in 1..=10");
        }
        if self.min_count == 0 {
            return bad("min_count", "must be at least 1");
        }
        for (key, v) in [
            ("hpylm.iterations", self.hpylm_iterations),
            ("iterations", self.iterations),
            ("sample_spacing", self.sample_spacing),
            ("samples", self.samples),
            ("max_states", self.max_states),
            ("em.states", self.em_states),
            ("em.iterations", self.em_iterations),
            ("lda.topics", self.topics),
            ("lda.iterations", self.lda_iterations),
            ("lda.fold_in_sweeps", self.fold_in_sweeps),
            ("joint.min_sentences", self.min_sentences),
        ] {
            if v == 0 {
                return bad(key, "must be at least 1");
            }
        }
        if !(0.0..1.0).contains(&self.em_tau) {
            return bad("em.tau", "must lie in [0, 1)");
        }
        if !(self.em_tol >= 0.0) {
            return bad("em.tol", "must be non-negative");
        }
        for (key, v) in [("lda.alpha", self.lda_alpha), ("lda.beta", self.lda_beta)] {
            if !(v > 0.0 && v.is_finite()) {
                return bad(key, "must be positive");
            }
        }
        Ok(())
    }

    pub fn nhmm(&self) -> NhmmConfig {
        NhmmConfig {
            order: self.order,
            hpylm_iterations: self.hpylm_iterations,
            em: EmConfig {
                states: self.em_states,
                max_iters: self.em_iterations,
                tol: self.em_tol,
                tau: self.em_tau,
            },
            iterations: self.iterations,
            burn_in: self.burn_in,
            sample_spacing: self.sample_spacing,
            samples: self.samples,
            max_states: self.max_states,
            slice_sampling: self.slice_sampling,
        }
    }

    pub fn lda(&self) -> LdaConfig {
        LdaConfig {
            topics: self.topics,
            alpha: self.lda_alpha,
            beta: self.lda_beta,
            iterations: self.lda_iterations,
        }
    }

    pub fn joint(&self) -> JointConfig {
        JointConfig {
            nhmm: self.nhmm(),
            min_sentences: self.min_sentences,
        }
    }

    /// Every key with its current value, in [`KEYS`] order.
    pub fn pairs(&self) -> Vec<(String, String)> {
        let values = [
            self.order.to_string(),
            self.min_count.to_string(),
            self.seed.to_string(),
            self.hpylm_iterations.to_string(),
            self.iterations.to_string(),
            self.burn_in.to_string(),
            self.sample_spacing.to_string(),
            self.samples.to_string(),
            self.max_states.to_string(),
            self.slice_sampling.to_string(),
            self.em_states.to_string(),
            self.em_tau.to_string(),
            self.em_iterations.to_string(),
            self.em_tol.to_string(),
            self.topics.to_string(),
            self.lda_alpha.to_string(),
            self.lda_beta.to_string(),
            self.lda_iterations.to_string(),
            self.fold_in_sweeps.to_string(),
            self.min_sentences.to_string(),
        ];
        KEYS.iter().map(|k| k.to_string()).zip(values).collect()
    }
}

impl fmt::Display for RunConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (k, v) in self.pairs() {
            writeln!(f, "{k} = {v}")?;
        }
        Ok(())
    }
}
