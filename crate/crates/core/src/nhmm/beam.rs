//! Slice-truncated forward filtering and backward sampling of one sentence's
//! hidden states.

use rand::Rng;

use super::HmmModel;
use crate::corpus::TokenSeq;
use crate::error::{Error, Result};
use crate::stats;

/// Next-state probabilities of every row for one sentence, with rows sorted
/// lazily in descending order so a slice threshold can stop the scan early.
#[derive(Debug, Clone)]
pub struct TransitionMatrix {
    k: usize,
    /// Row-major (K + 1) x K over instantiated states; the last row is the
    /// sentence start.
    probs: Vec<f64>,
    sorted: Vec<Option<Vec<u32>>>,
}

impl TransitionMatrix {
    pub fn new(m: &HmmModel) -> Self {
        let k = m.num_states();
        let mut probs = Vec::with_capacity((k + 1) * k);
        for from in (0..k).map(Some).chain(std::iter::once(None)) {
            let row = m.transition_row(from);
            probs.extend_from_slice(&row[..k]);
        }
        TransitionMatrix {
            k,
            probs,
            sorted: vec![None; k + 1],
        }
    }

    /// Builds a matrix from explicit rows (`k + 1` rows of `k` entries, the
    /// start row last).
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let k = rows.len().saturating_sub(1);
        let probs = rows.iter().flat_map(|r| r[..k].iter().copied()).collect();
        TransitionMatrix {
            k,
            probs,
            sorted: vec![None; k + 1],
        }
    }

    pub fn states(&self) -> usize {
        self.k
    }

    fn row_index(&self, from: Option<u32>) -> usize {
        from.map_or(self.k, |f| f as usize)
    }

    pub fn prob(&self, from: Option<u32>, to: u32) -> f64 {
        self.probs[self.row_index(from) * self.k + to as usize]
    }

    pub fn row(&self, from: Option<u32>) -> &[f64] {
        let i = self.row_index(from);
        &self.probs[i * self.k..(i + 1) * self.k]
    }

    /// Sorts row `i` by descending probability (ties by id) on first use.
    fn ensure_sorted(&mut self, i: usize) {
        if self.sorted[i].is_none() {
            let row = &self.probs[i * self.k..(i + 1) * self.k];
            let mut ids: Vec<u32> = (0..self.k as u32).collect();
            ids.sort_by(|&a, &b| row[b as usize].total_cmp(&row[a as usize]).then(a.cmp(&b)));
            self.sorted[i] = Some(ids);
        }
    }
}

/// Auxiliary slice per position, or exact inference over all states.
#[derive(Debug, Clone, PartialEq)]
pub enum SliceVars {
    /// No truncation: transitions are weighted by their probabilities.
    Exact,
    /// `u[t]` admits only transitions into position `t` whose probability
    /// exceeds it; admitted transitions carry equal weight.
    Slices(Vec<f64>),
}

impl SliceVars {
    pub fn min(&self) -> Option<f64> {
        match self {
            SliceVars::Exact => None,
            SliceVars::Slices(u) => u.iter().copied().reduce(f64::min),
        }
    }

    fn weight(&self, t: usize, p: f64) -> f64 {
        match self {
            SliceVars::Exact => p,
            SliceVars::Slices(u) => {
                if u[t] < p {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

/// Draws `u[t]` uniformly on (0, π(h[t-1] → h[t])).
pub fn sample_slices<R: Rng + ?Sized>(matrix: &TransitionMatrix, states: &[u32], rng: &mut R) -> Result<SliceVars> {
    let mut u = Vec::with_capacity(states.len());
    let mut prev = None;
    for (t, &h) in states.iter().enumerate() {
        if h as usize >= matrix.states() {
            return Err(Error::InconsistentStateSequence(t));
        }
        let p = matrix.prob(prev, h);
        if p <= 0.0 {
            return Err(Error::InconsistentStateSequence(t));
        }
        let x = loop {
            let x = p * stats::open01(rng);
            if x < p {
                break x;
            }
        };
        u.push(x);
        prev = Some(h);
    }
    Ok(SliceVars::Slices(u))
}

/// Normalised filtered distributions over instantiated states, one per token.
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardMessages {
    pub alpha: Vec<Vec<f64>>,
    /// Log of the product of per-position normalisers.
    pub log_norm: f64,
}

/// Forward filtering of `seq` under `slices`. `base_probs` holds the shared
/// back-off probability of every predicted token.
pub fn beam_forward(
    m: &HmmModel,
    matrix: &mut TransitionMatrix,
    seq: &TokenSeq,
    base_probs: &[f64],
    slices: &SliceVars,
) -> Result<ForwardMessages> {
    let k = matrix.states();
    let mut alpha: Vec<Vec<f64>> = Vec::with_capacity(seq.len());
    let mut log_norm = 0.0;
    for (t, (ctx, w)) in seq.ngrams(m.order()).enumerate() {
        let mut next = vec![0.0; k];
        let prevs: Vec<(Option<u32>, f64)> = if t == 0 {
            vec![(None, 1.0)]
        } else {
            alpha[t - 1]
                .iter()
                .enumerate()
                .filter(|(_, &a)| a > 0.0)
                .map(|(j, &a)| (Some(j as u32), a))
                .collect()
        };
        for (from, a) in prevs {
            match slices {
                SliceVars::Exact => {
                    for (x, &p) in next.iter_mut().zip(matrix.row(from)) {
                        *x += a * p;
                    }
                }
                SliceVars::Slices(u) => {
                    let ut = u[t];
                    let i = matrix.row_index(from);
                    matrix.ensure_sorted(i);
                    let row = &matrix.probs[i * k..(i + 1) * k];
                    for &h in matrix.sorted[i].as_deref().unwrap() {
                        if row[h as usize] <= ut {
                            break;
                        }
                        next[h as usize] += a;
                    }
                }
            }
        }
        let mut total = 0.0;
        for (h, x) in next.iter_mut().enumerate() {
            if *x > 0.0 {
                *x *= m.emit(h, ctx, w, base_probs[t]);
                total += *x;
            }
        }
        if total <= 0.0 || !total.is_finite() {
            return Err(Error::BeamExhausted(t));
        }
        next.iter_mut().for_each(|x| *x /= total);
        log_norm += total.ln();
        alpha.push(next);
    }
    Ok(ForwardMessages { alpha, log_norm })
}

/// Backward sampling of a state path from forward messages.
pub fn sample_state_sequence<R: Rng + ?Sized>(
    msgs: &ForwardMessages,
    matrix: &TransitionMatrix,
    slices: &SliceVars,
    rng: &mut R,
) -> Result<Vec<u32>> {
    let n = msgs.alpha.len();
    let mut states = vec![0u32; n];
    if n == 0 {
        return Ok(states);
    }
    let last = stats::categorical(&msgs.alpha[n - 1], rng).ok_or(Error::BeamExhausted(n - 1))?;
    states[n - 1] = last as u32;
    let mut weights = vec![0.0; matrix.states()];
    for t in (1..n).rev() {
        let h = states[t];
        for (j, w) in weights.iter_mut().enumerate() {
            let a = msgs.alpha[t - 1][j];
            *w = if a > 0.0 {
                a * slices.weight(t, matrix.prob(Some(j as u32), h))
            } else {
                0.0
            };
        }
        let j = stats::categorical(&weights, rng).ok_or(Error::InconsistentStateSequence(t))?;
        states[t - 1] = j as u32;
    }
    Ok(states)
}
