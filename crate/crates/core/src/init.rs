//! Two-stage initialisation of the n-gram HMM: an HPYLM bootstrap for the
//! shared back-off model, then EM on a fixed-size first-order HMM with
//! unigram emissions whose per-token argmax states seed the Gibbs chain.
//!
//! The EM forward pass renormalises every position and optionally drops
//! states whose filtered mass falls below a threshold `tau`, keeping at least
//! the best one. Smoothed posteriors reuse the forward normalisers.

use rand::Rng;

use crate::corpus::Corpus;
use crate::error::{invalid, Error, Result};
use crate::exec::Execution;
use crate::hpylm::{train_hpylm, HpylmModel};
use crate::rng;

/// Trains the shared HPYLM; its per-depth parameters seed the emission
/// parameters of the HMM states.
pub fn bootstrap_smoothing(
    corpus: &Corpus,
    vocab_len: usize,
    order: usize,
    iterations: usize,
    seed: u64,
) -> Result<HpylmModel> {
    train_hpylm(corpus, vocab_len, order, iterations, seed)
}

/// K-state HMM with per-state unigram emissions.
#[derive(Debug, Clone, PartialEq)]
pub struct EmModel {
    k: usize,
    vocab_len: usize,
    pub start: Vec<f64>,
    /// Row-major K x K.
    pub trans: Vec<f64>,
    /// Row-major K x V.
    pub emit: Vec<f64>,
}

fn normalised(row: &[f64], what: &str) -> Result<()> {
    let s: f64 = row.iter().sum();
    if (s - 1.0).abs() > 1e-9 || row.iter().any(|&x| x < 0.0) {
        return Err(invalid(format!("{what} must be a probability vector")));
    }
    Ok(())
}

impl EmModel {
    pub fn new(start: Vec<f64>, trans: Vec<Vec<f64>>, emit: Vec<Vec<f64>>) -> Result<Self> {
        let k = start.len();
        if k == 0 || trans.len() != k || emit.len() != k {
            return Err(invalid("start, transition and emission tables disagree on K"));
        }
        let vocab_len = emit[0].len();
        normalised(&start, "start distribution")?;
        for r in &trans {
            if r.len() != k {
                return Err(invalid("transition rows must have K entries"));
            }
            normalised(r, "transition row")?;
        }
        for r in &emit {
            if r.len() != vocab_len {
                return Err(invalid("emission rows must share one vocabulary"));
            }
            normalised(r, "emission row")?;
        }
        Ok(EmModel {
            k,
            vocab_len,
            start,
            trans: trans.concat(),
            emit: emit.concat(),
        })
    }

    /// Random start: emissions proportional to corpus frequency times
    /// Uniform(0.5, 1.5) noise, noisy near-uniform transitions. With one
    /// state there is no noise.
    pub fn random<R: Rng + ?Sized>(k: usize, vocab_len: usize, corpus: &Corpus, rng: &mut R) -> Result<Self> {
        if k == 0 {
            return Err(invalid("EM needs at least one state"));
        }
        let mut freq = vec![0.0; vocab_len];
        for s in &corpus.sentences {
            for &w in s.tokens() {
                freq[w as usize] += 1.0;
            }
        }
        let noise = |n: usize, rng: &mut R| -> Vec<f64> {
            if k == 1 {
                vec![1.0; n]
            } else {
                (0..n).map(|_| rng.random_range(0.5..1.5)).collect()
            }
        };
        let norm = |v: Vec<f64>| {
            let s: f64 = v.iter().sum();
            v.into_iter().map(|x| x / s).collect::<Vec<_>>()
        };
        let start = norm(noise(k, rng));
        let trans = (0..k).map(|_| norm(noise(k, rng))).collect::<Vec<_>>();
        let emit = (0..k)
            .map(|_| {
                let n = noise(vocab_len, rng);
                norm(freq.iter().zip(n).map(|(f, e)| f * e).collect())
            })
            .collect::<Vec<_>>();
        if freq.iter().sum::<f64>() == 0.0 {
            return Err(Error::EmptyCorpus);
        }
        Ok(EmModel {
            k,
            vocab_len,
            start,
            trans: trans.concat(),
            emit: emit.concat(),
        })
    }

    pub fn states(&self) -> usize {
        self.k
    }

    pub fn vocab_len(&self) -> usize {
        self.vocab_len
    }

    pub fn a(&self, from: usize, to: usize) -> f64 {
        self.trans[from * self.k + to]
    }

    pub fn e(&self, h: usize, w: u32) -> f64 {
        self.emit[h * self.vocab_len + w as usize]
    }
}

/// Forward messages of one sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct EmMessages {
    /// Filtered distribution per position after truncation, summing to 1.
    pub forward: Vec<Vec<f64>>,
    /// Pre-truncation normaliser per position: the sum of the unnormalised
    /// incoming mass.
    pub scale: Vec<f64>,
    /// Share of the normalised mass that survived truncation per position.
    pub kept: Vec<f64>,
}

impl EmMessages {
    /// Observed-data log-likelihood (exact when nothing was truncated).
    pub fn loglik(&self) -> f64 {
        self.scale.iter().map(|s| s.ln()).sum()
    }
}

/// Truncates a normalised vector in place, returning the kept mass.
fn truncate(a: &mut [f64], tau: f64) -> f64 {
    if tau <= 0.0 {
        return 1.0;
    }
    let mut kept = 0.0;
    for x in a.iter() {
        if *x >= tau {
            kept += *x;
        }
    }
    if kept == 0.0 {
        let best = argmax(a);
        kept = a[best];
        for (i, x) in a.iter_mut().enumerate() {
            if i != best {
                *x = 0.0;
            }
        }
    } else {
        for x in a.iter_mut() {
            if *x < tau {
                *x = 0.0;
            }
        }
    }
    for x in a.iter_mut() {
        *x /= kept;
    }
    kept
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Unnormalised incoming mass at one position.
fn incoming(m: &EmModel, prev: Option<&[f64]>, w: u32) -> Vec<f64> {
    let k = m.k;
    let mut raw = match prev {
        None => m.start.clone(),
        Some(a) => {
            let mut out = vec![0.0; k];
            for (j, &aj) in a.iter().enumerate() {
                if aj == 0.0 {
                    continue;
                }
                for (h, o) in out.iter_mut().enumerate() {
                    *o += aj * m.a(j, h);
                }
            }
            out
        }
    };
    for (h, x) in raw.iter_mut().enumerate() {
        *x *= m.e(h, w);
    }
    raw
}

pub fn em_forward(m: &EmModel, tokens: &[u32], tau: f64) -> EmMessages {
    let mut forward: Vec<Vec<f64>> = Vec::with_capacity(tokens.len());
    let mut scale = Vec::with_capacity(tokens.len());
    let mut kept = Vec::with_capacity(tokens.len());
    for (t, &w) in tokens.iter().enumerate() {
        let mut raw = incoming(m, forward.get(t.wrapping_sub(1)).map(Vec::as_slice), w);
        let mut s: f64 = raw.iter().sum();
        if s <= 0.0 {
            // Truncation removed every state able to emit `w`: restart from
            // the emission alone.
            raw = (0..m.k).map(|h| m.e(h, w)).collect();
            s = raw.iter().sum();
            if s <= 0.0 {
                raw = vec![1.0; m.k];
                s = m.k as f64;
            }
        }
        raw.iter_mut().for_each(|x| *x /= s);
        kept.push(truncate(&mut raw, tau));
        scale.push(s);
        forward.push(raw);
    }
    EmMessages { forward, scale, kept }
}

/// Messages conditioned on the state at `anchor`: entry `[h * K + a]` at
/// position `t >= anchor` is the forward mass in state `h` of paths that
/// passed through state `a` at the anchor, using the forward normalisers.
/// Summing the last position over `h` gives the smoothed posterior at the
/// anchor.
pub fn em_multipath(m: &EmModel, tokens: &[u32], msgs: &EmMessages, anchor: usize) -> Result<Vec<Vec<f64>>> {
    if anchor >= tokens.len() {
        return Err(invalid(format!("anchor {anchor} outside a {}-token sentence", tokens.len())));
    }
    let k = m.k;
    let mut out = Vec::with_capacity(tokens.len() - anchor);
    let mut cur = vec![0.0; k * k];
    for a in 0..k {
        cur[a * k + a] = msgs.forward[anchor][a];
    }
    out.push(cur);
    for t in anchor + 1..tokens.len() {
        let w = tokens[t];
        let prev = out.last().unwrap();
        let mut next = vec![0.0; k * k];
        let norm = msgs.scale[t] * msgs.kept[t];
        for h in 0..k {
            if msgs.forward[t][h] == 0.0 {
                continue;
            }
            let e = m.e(h, w) / norm;
            for a in 0..k {
                let mut acc = 0.0;
                for j in 0..k {
                    acc += prev[j * k + a] * m.a(j, h);
                }
                next[h * k + a] = acc * e;
            }
        }
        out.push(next);
    }
    Ok(out)
}

/// Smoothed posteriors assembled from one multipath pass per anchor.
pub fn multipath_posteriors(m: &EmModel, tokens: &[u32], msgs: &EmMessages) -> Result<Vec<Vec<f64>>> {
    let k = m.k;
    (0..tokens.len())
        .map(|j| {
            let paths = em_multipath(m, tokens, msgs, j)?;
            let last = paths.last().unwrap();
            let mut post: Vec<f64> = (0..k).map(|a| (0..k).map(|h| last[h * k + a]).sum()).collect();
            let s: f64 = post.iter().sum();
            post.iter_mut().for_each(|x| *x /= s);
            Ok(post)
        })
        .collect()
}

/// Expected statistics of one sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct Posteriors {
    /// Smoothed state posterior per position.
    pub gamma: Vec<Vec<f64>>,
    /// Expected transition counts, row-major K x K.
    pub xi: Vec<f64>,
}

/// Smoothed posteriors by a backward pass that reuses the forward
/// normalisers; equal to the terminal sums of [`em_multipath`].
pub fn em_smoothed(m: &EmModel, tokens: &[u32], msgs: &EmMessages) -> Posteriors {
    let k = m.k;
    let n = tokens.len();
    let mut xi = vec![0.0; k * k];
    if n == 0 {
        return Posteriors { gamma: Vec::new(), xi };
    }
    let mut b = vec![vec![0.0; k]; n];
    b[n - 1] = vec![1.0; k];
    for t in (0..n - 1).rev() {
        let w = tokens[t + 1];
        let norm = msgs.scale[t + 1] * msgs.kept[t + 1];
        let mut eb = vec![0.0; k];
        for h in 0..k {
            if msgs.forward[t + 1][h] > 0.0 {
                eb[h] = m.e(h, w) * b[t + 1][h] / norm;
            }
        }
        let mut step = vec![0.0; k * k];
        for j in 0..k {
            let a = msgs.forward[t][j];
            let mut acc = 0.0;
            for h in 0..k {
                let x = m.a(j, h) * eb[h];
                acc += x;
                step[j * k + h] = a * x;
            }
            b[t][j] = acc;
        }
        // Sums to one already unless truncation removed mass.
        let s: f64 = step.iter().sum();
        if s > 0.0 {
            for (x, y) in xi.iter_mut().zip(&step) {
                *x += y / s;
            }
        }
    }
    let gamma = (0..n)
        .map(|t| {
            let mut g: Vec<f64> = (0..k).map(|h| msgs.forward[t][h] * b[t][h]).collect();
            let s: f64 = g.iter().sum();
            if s > 0.0 {
                g.iter_mut().for_each(|x| *x /= s);
            }
            g
        })
        .collect();
    Posteriors { gamma, xi }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EmConfig {
    pub states: usize,
    pub max_iters: usize,
    /// Stop when the log-likelihood gain per token drops below this.
    pub tol: f64,
    /// Truncation threshold on filtered mass (0 disables truncation).
    pub tau: f64,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            states: 32,
            max_iters: 20,
            tol: 1e-4,
            tau: 1e-4,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmResult {
    pub model: EmModel,
    /// Smoothed posteriors per sentence and position, from the last E-step.
    pub posteriors: Vec<Vec<Vec<f64>>>,
    /// Per-position argmax of `posteriors`.
    pub states: Vec<Vec<u32>>,
    /// Log-likelihood at every E-step.
    pub trace: Vec<f64>,
    /// Number of M-steps taken.
    pub iterations: usize,
    pub converged: bool,
}

struct Accumulated {
    loglik: f64,
    start: Vec<f64>,
    trans: Vec<f64>,
    emit: Vec<f64>,
    posteriors: Vec<Vec<Vec<f64>>>,
}

fn e_step(m: &EmModel, corpus: &Corpus, tau: f64, exec: Execution) -> Accumulated {
    let per_sentence = exec.map(&corpus.sentences, |s| {
        let tokens = s.tokens();
        let msgs = em_forward(m, tokens, tau);
        (msgs.loglik(), em_smoothed(m, tokens, &msgs))
    });
    let k = m.k;
    let mut acc = Accumulated {
        loglik: 0.0,
        start: vec![0.0; k],
        trans: vec![0.0; k * k],
        emit: vec![0.0; k * m.vocab_len],
        posteriors: Vec::with_capacity(corpus.len()),
    };
    for (s, (ll, post)) in corpus.sentences.iter().zip(per_sentence) {
        acc.loglik += ll;
        if let Some(g0) = post.gamma.first() {
            for (x, g) in acc.start.iter_mut().zip(g0) {
                *x += g;
            }
        }
        for (x, y) in acc.trans.iter_mut().zip(&post.xi) {
            *x += y;
        }
        for (g, &w) in post.gamma.iter().zip(s.tokens()) {
            for h in 0..k {
                acc.emit[h * m.vocab_len + w as usize] += g[h];
            }
        }
        acc.posteriors.push(post.gamma);
    }
    acc
}

/// Normalises `counts` into `target` row by row (rows of width `width`);
/// rows without counts keep their old values. Returns the largest change.
fn m_step_rows(target: &mut [f64], counts: &[f64], width: usize) -> f64 {
    let mut change: f64 = 0.0;
    for (row, c) in target.chunks_mut(width).zip(counts.chunks(width)) {
        let s: f64 = c.iter().sum();
        if s <= 0.0 {
            continue;
        }
        for (x, &y) in row.iter_mut().zip(c) {
            let v = y / s;
            change = change.max((v - *x).abs());
            *x = v;
        }
    }
    change
}

/// Runs EM from a random start drawn from the EM stream of `seed`.
pub fn em_run(corpus: &Corpus, vocab_len: usize, config: EmConfig, seed: u64, exec: Execution) -> Result<EmResult> {
    if config.states == 0 || config.max_iters == 0 {
        return Err(invalid("EM needs at least one state and one iteration"));
    }
    let n = corpus.token_count();
    if n == 0 {
        return Err(Error::EmptyCorpus);
    }
    let mut rng = rng::seeded(seed, rng::stream::EM);
    let mut model = EmModel::random(config.states, vocab_len, corpus, &mut rng)?;
    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    let mut unchanged = false;
    let posteriors = loop {
        let acc = e_step(&model, corpus, config.tau, exec);
        trace.push(acc.loglik);
        if unchanged {
            converged = true;
            break acc.posteriors;
        }
        if let [.., prev, cur] = trace[..] {
            if (cur - prev) / (n as f64) < config.tol {
                converged = true;
                break acc.posteriors;
            }
        }
        if iterations == config.max_iters {
            break acc.posteriors;
        }
        let k = model.k;
        let v = model.vocab_len;
        let mut change = m_step_rows(&mut model.start, &acc.start, k);
        change = change.max(m_step_rows(&mut model.trans, &acc.trans, k));
        change = change.max(m_step_rows(&mut model.emit, &acc.emit, v));
        iterations += 1;
        unchanged = change < 1e-12;
    };
    let states = posteriors
        .iter()
        .map(|sent| sent.iter().map(|g| argmax(g) as u32).collect())
        .collect();
    Ok(EmResult {
        model,
        posteriors,
        states,
        trace,
        iterations,
        converged,
    })
}
