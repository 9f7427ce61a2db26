//! Genre as a second label sequence beside the hidden states: one n-gram HMM
//! per genre over a shared smoothing base, switched by each sentence's genre,
//! plus similar-word queries against a single model.

use std::collections::BTreeMap;
use std::sync::Arc;

use log::info;

use crate::corpus::{Corpus, TokenSeq, NUM_SPECIAL, UNK};
use crate::error::{invalid, Error, Result};
use crate::exec::Execution;
use crate::hpylm::HpylmModel;
use crate::init::bootstrap_smoothing;
use crate::lda::{sentence_genres, split_by_genre};
use crate::nhmm::{averaged_logprob, train_nhmm_with_base, HmmModel, NhmmConfig, NhmmRun, Scorer};
use crate::rng::derive_seed;

/// Sentences with one genre label each.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledCorpus {
    pub corpus: Corpus,
    pub genres: Vec<u32>,
}

impl LabeledCorpus {
    /// Labels every sentence; `labels[i] == None` is an error.
    pub fn from_sentence_labels(corpus: Corpus, labels: &[Option<u32>]) -> Result<Self> {
        if labels.len() < corpus.len() {
            return Err(Error::MissingGenre(labels.len()));
        }
        let genres = labels[..corpus.len()]
            .iter()
            .enumerate()
            .map(|(i, g)| g.ok_or(Error::MissingGenre(i)))
            .collect::<Result<_>>()?;
        Ok(LabeledCorpus { corpus, genres })
    }

    pub fn len(&self) -> usize {
        self.corpus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.corpus.is_empty()
    }

    /// Drops the labels.
    pub fn strip(self) -> Corpus {
        self.corpus
    }
}

/// Broadcasts one genre per document to its sentences.
pub fn attach_labels(corpus: &Corpus, doc_genres: &[u32]) -> Result<LabeledCorpus> {
    if doc_genres.len() < corpus.documents.len() {
        let first_unlabeled = corpus.documents[doc_genres.len()].start;
        return Err(Error::MissingGenre(first_unlabeled));
    }
    Ok(LabeledCorpus {
        corpus: corpus.clone(),
        genres: sentence_genres(corpus, &doc_genres[..corpus.documents.len()])?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointConfig {
    pub nhmm: NhmmConfig,
    /// Genres with fewer training sentences use the pooled model.
    pub min_sentences: usize,
}

impl Default for JointConfig {
    fn default() -> Self {
        JointConfig {
            nhmm: NhmmConfig::default(),
            min_sentences: 50,
        }
    }
}

/// Which snapshots score a genre.
#[derive(Debug, Clone, PartialEq)]
pub enum GenreModel {
    Own(Vec<HmmModel>),
    Pooled,
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointModel {
    pub base: Arc<HpylmModel>,
    pub genres: BTreeMap<u32, GenreModel>,
    /// Chain over the whole corpus, present when some genre needs it.
    pub pooled: Option<Vec<HmmModel>>,
}

impl JointModel {
    /// Snapshots for sentences of `genre`; unseen genres use the pooled model.
    pub fn snapshots(&self, genre: u32) -> Result<&[HmmModel]> {
        match (self.genres.get(&genre), &self.pooled) {
            (Some(GenreModel::Own(s)), _) => Ok(s),
            (_, Some(p)) => Ok(p),
            (Some(GenreModel::Pooled), None) => Err(invalid(format!("genre {genre} falls back to a missing pooled model"))),
            (None, None) => Err(invalid(format!("no model for genre {genre} and no pooled fallback"))),
        }
    }

    pub fn check(&self) -> std::result::Result<(), String> {
        let needs_pool = self.genres.values().any(|g| *g == GenreModel::Pooled);
        if needs_pool && self.pooled.is_none() {
            return Err("a genre maps to the pooled model but none was trained".into());
        }
        for (g, m) in &self.genres {
            if let GenreModel::Own(s) = m {
                if s.is_empty() {
                    return Err(format!("genre {g} has no snapshots"));
                }
            }
        }
        Ok(())
    }
}

/// Trains one chain per genre (in parallel under `exec`) over one shared
/// base trained on the whole corpus. Chain `r` in genre order uses
/// `derive_seed(seed, r)`, so a single genre reproduces plain training.
pub fn train_joint(
    labeled: &LabeledCorpus,
    vocab_len: usize,
    config: &JointConfig,
    seed: u64,
    exec: Execution,
) -> Result<JointModel> {
    config.nhmm.validate()?;
    if labeled.genres.len() != labeled.len() {
        return Err(Error::MissingGenre(labeled.genres.len().min(labeled.len())));
    }
    let corpus = &labeled.corpus;
    let base = Arc::new(bootstrap_smoothing(
        corpus,
        vocab_len,
        config.nhmm.order,
        config.nhmm.hpylm_iterations,
        seed,
    )?);
    let split = split_by_genre(&labeled.genres);

    enum Job {
        Genre(u32, Corpus, u64),
        Pool,
    }
    let mut jobs = Vec::new();
    let mut pooled_genres = Vec::new();
    for (rank, (&g, idx)) in split.groups.iter().enumerate() {
        if idx.len() >= config.min_sentences {
            jobs.push(Job::Genre(g, corpus.subset(idx), derive_seed(seed, rank as u64)));
        } else {
            info!("genre {g} has {} sentences; using the pooled model", idx.len());
            pooled_genres.push(g);
        }
    }
    if !pooled_genres.is_empty() {
        jobs.push(Job::Pool);
    }
    let runs: Vec<Result<NhmmRun>> = exec.map(&jobs, |job| match job {
        Job::Genre(_, c, s) => train_nhmm_with_base(c, base.clone(), &config.nhmm, *s, None),
        Job::Pool => train_nhmm_with_base(corpus, base.clone(), &config.nhmm, seed, None),
    });

    let mut genres = BTreeMap::new();
    let mut pooled = None;
    for (job, run) in jobs.iter().zip(runs) {
        let run = run?;
        match job {
            Job::Genre(g, _, _) => {
                genres.insert(*g, GenreModel::Own(run.snapshots));
            }
            Job::Pool => pooled = Some(run.snapshots),
        }
    }
    for g in pooled_genres {
        genres.insert(g, GenreModel::Pooled);
    }
    Ok(JointModel { base, genres, pooled })
}

/// Held-out log-probability and token count per genre, genre order.
pub fn genre_logprobs(jm: &JointModel, heldout: &LabeledCorpus, exec: Execution) -> Result<Vec<(u32, f64, usize)>> {
    let sentences: Vec<(u32, &TokenSeq)> = sentence_pairs(heldout)?;
    let parts = exec.map(&sentences, |(g, s)| averaged_logprob(jm.snapshots(*g)?, s));
    let mut out: BTreeMap<u32, (f64, usize)> = BTreeMap::new();
    for ((g, s), lp) in sentences.iter().zip(parts) {
        let e = out.entry(*g).or_default();
        e.0 += lp?;
        e.1 += s.len();
    }
    Ok(out.into_iter().map(|(g, (lp, n))| (g, lp, n)).collect())
}

fn sentence_pairs(heldout: &LabeledCorpus) -> Result<Vec<(u32, &TokenSeq)>> {
    if heldout.genres.len() < heldout.len() {
        return Err(Error::MissingGenre(heldout.genres.len()));
    }
    Ok(heldout.genres.iter().copied().zip(&heldout.corpus.sentences).collect())
}

/// Perplexity with each sentence scored by its genre's snapshots, summed in
/// sentence order exactly like single-model perplexity.
pub fn joint_perplexity(jm: &JointModel, heldout: &LabeledCorpus, exec: Execution) -> Result<f64> {
    let n = heldout.corpus.token_count();
    if n == 0 {
        return Err(Error::EmptyCorpus);
    }
    let sentences = sentence_pairs(heldout)?;
    let parts = exec.map(&sentences, |(g, s)| averaged_logprob(jm.snapshots(*g)?, s));
    let mut total = 0.0;
    for p in parts {
        total += p?;
    }
    Ok((-total / n as f64).exp())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimilarWords {
    /// `(word id, score)`, scores non-increasing, ties by id.
    pub ranked: Vec<(u32, f64)>,
    /// The query word is unknown; states were weighted by the context alone.
    pub oov: bool,
    /// Posterior over instantiated states at the query position.
    pub state_posterior: Vec<f64>,
}

/// Words that the states explaining `word` after `context` also emit in that
/// context. Candidates are the non-special vocabulary minus `word`.
pub fn similar_words(m: &HmmModel, context: &[u32], word: u32, top_k: usize) -> Result<SimilarWords> {
    if top_k == 0 {
        return Err(invalid("top_k must be at least 1"));
    }
    let k = m.num_states();
    if k == 0 {
        return Err(Error::UntrainedModel);
    }
    let v = m.vocab_len() as u32;
    let oov = word == UNK || word >= v || word < NUM_SPECIAL;
    let mut tokens = context.to_vec();
    tokens.push(if oov { UNK } else { word });
    let seq = TokenSeq::from_tokens(&tokens, m.order());
    let pos = context.len();
    let scorer = Scorer::new(m);
    let (alpha, _) = scorer.forward(&seq, pos, None)?;
    let predicted = if pos == 0 { alpha } else { scorer.predict(&alpha) };
    let (ctx, _) = seq.ngrams(m.order()).nth(pos).expect("query position is inside the sequence");

    let mut post: Vec<f64> = (0..k)
        .map(|h| {
            if oov {
                predicted[h]
            } else {
                predicted[h] * m.emit(h, ctx, word, m.base_prob(ctx, word))
            }
        })
        .collect();
    let z: f64 = post.iter().sum();
    if !(z > 0.0) {
        return Err(Error::ZeroProbability(word));
    }
    post.iter_mut().for_each(|p| *p /= z);

    let mut ranked: Vec<(u32, f64)> = (NUM_SPECIAL..v)
        .filter(|&w| w != word)
        .map(|w| {
            let base = m.base_prob(ctx, w);
            let s = (0..k).map(|h| post[h] * m.emit(h, ctx, w, base)).sum();
            (w, s)
        })
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.truncate(top_k);
    Ok(SimilarWords {
        ranked,
        oov,
        state_posterior: post,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hpylm::ContextTrie;
    use crate::lda::split_corpus_by_genre;
    use crate::nhmm::{perplexity, train_nhmm};
    use crate::pyp::{PypParams, Restaurant};
    use crate::rng::seeded;
    use crate::synthetic::{genre_corpus, KnownHmm};
    use approx::assert_abs_diff_eq;
    use proptest::{prop_assert, proptest};

    const V: usize = 12;

    /// Two states over an order-2 model: in state 0 "in" is followed by
    /// {the, a} and "the" by {bedroom, room}; state 1 emits {is, was}.
    fn planted_pairs() -> (HmmModel, [u32; 7]) {
        // ids: in=3 the=4 a=5 bedroom=6 room=7 is=8 was=9
        let ids = [3, 4, 5, 6, 7, 8, 9];
        let [in_, the, a, bedroom, room, is, was] = ids;
        let base = Arc::new(HpylmModel::new(2, V, 0).unwrap());
        let params = vec![PypParams::new(0.1, 0.5).unwrap(); 2];
        let mut m = HmmModel::new(base, params.clone(), 1.0, 1.0).unwrap();
        m.stick = vec![0.5, 0.4];
        m.stick_rem = 0.1;
        m.start = Restaurant::from_tables([(0, vec![3])]).unwrap();
        m.rows = vec![
            Restaurant::from_tables([(0, vec![4]), (1, vec![4])]).unwrap(),
            Restaurant::from_tables([(0, vec![2])]).unwrap(),
        ];
        let mut rng = seeded(1, 0);
        let root = 1.0 / (V - 1) as f64;
        let mut s0 = ContextTrie::new(1);
        for (ctx, w, n) in [(in_, the, 4), (in_, a, 4), (the, bedroom, 4), (the, room, 4)] {
            for _ in 0..n {
                s0.insert(&params, &[ctx], w, root, &mut rng).unwrap();
            }
        }
        let mut s1 = ContextTrie::new(1);
        for ctx in [bedroom, room] {
            for w in [is, was] {
                for _ in 0..4 {
                    s1.insert(&params, &[ctx], w, root, &mut rng).unwrap();
                }
            }
        }
        m.emissions = vec![s0, s1];
        m.check().unwrap();
        (m, ids)
    }

    #[test]
    fn planted_pairs_are_top_neighbours() {
        let (m, [in_, the, a, bedroom, room, is, was]) = planted_pairs();
        for (ctx, w, partner) in [
            (vec![in_], the, a),
            (vec![in_], a, the),
            (vec![in_, the], bedroom, room),
            (vec![in_, the], room, bedroom),
            (vec![the, bedroom], is, was),
            (vec![the, room], was, is),
        ] {
            let r = similar_words(&m, &ctx, w, 3).unwrap();
            assert_eq!(r.ranked[0].0, partner, "query {w}: {:?}", r.ranked);
            assert!(!r.oov);
        }
    }

    #[test]
    fn ranking_is_valid_and_clamped() {
        let (m, ids) = planted_pairs();
        let r = similar_words(&m, &[ids[0]], ids[1], 100).unwrap();
        assert_eq!(r.ranked.len(), V - NUM_SPECIAL as usize - 1);
        assert!(r.ranked.iter().all(|&(w, _)| w != ids[1]));
        assert!(r.ranked.windows(2).all(|p| p[0].1 >= p[1].1));
        let mut ws: Vec<u32> = r.ranked.iter().map(|x| x.0).collect();
        ws.sort_unstable();
        ws.dedup();
        assert_eq!(ws.len(), r.ranked.len());
        assert!(similar_words(&m, &[], ids[1], 0).is_err());
    }

    #[test]
    fn unknown_query_uses_the_context_alone() {
        let (m, ids) = planted_pairs();
        let r = similar_words(&m, &[ids[0]], UNK, 2).unwrap();
        assert!(r.oov);
        // after "in" the chain is most likely still in state 0
        assert!(r.state_posterior[0] > r.state_posterior[1]);
    }

    #[test]
    fn one_state_ranking_is_its_emission_ranking() {
        let (mut m, ids) = planted_pairs();
        m.stick = vec![0.9];
        m.rows = vec![Restaurant::from_tables([(0, vec![4])]).unwrap()];
        m.emissions.truncate(1);
        let ctx = [ids[1]];
        let r = similar_words(&m, &ctx, ids[3], 20).unwrap();
        let base = 1.0 / (V - 1) as f64;
        let mut expect: Vec<(u32, f64)> = (NUM_SPECIAL..V as u32)
            .filter(|&w| w != ids[3])
            .map(|w| (w, m.emissions[0].predictive(&m.emission_params, &ctx, w, base)))
            .collect();
        expect.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        assert_eq!(r.ranked.iter().map(|x| x.0).collect::<Vec<_>>(), expect.iter().map(|x| x.0).collect::<Vec<_>>());
        for (a, b) in r.ranked.iter().zip(&expect) {
            assert_abs_diff_eq!(a.1, b.1, epsilon = 1e-15);
        }
    }

    #[test]
    fn labels_attach_and_strip() {
        let g = genre_corpus(20, 3, 2, 1).unwrap();
        let l = attach_labels(&g.corpus, &g.doc_genres).unwrap();
        let (split, _) = split_corpus_by_genre(&g.corpus, &g.doc_genres).unwrap();
        for (genre, idx) in &split.groups {
            assert_eq!(l.genres.iter().filter(|x| *x == genre).count(), idx.len());
        }
        assert_eq!(l.clone().strip(), g.corpus);
        assert!(matches!(attach_labels(&g.corpus, &g.doc_genres[..5]), Err(Error::MissingGenre(15))));
        let labels: Vec<Option<u32>> = (0..g.corpus.len()).map(|i| if i == 7 { None } else { Some(0) }).collect();
        assert!(matches!(
            LabeledCorpus::from_sentence_labels(g.corpus.clone(), &labels),
            Err(Error::MissingGenre(7))
        ));
    }

    fn small_config() -> JointConfig {
        JointConfig {
            nhmm: NhmmConfig {
                order: 2,
                hpylm_iterations: 5,
                iterations: 6,
                burn_in: 2,
                sample_spacing: 2,
                samples: 2,
                em: crate::init::EmConfig {
                    states: 4,
                    ..Default::default()
                },
                ..NhmmConfig::default()
            },
            min_sentences: 20,
        }
    }

    #[test]
    fn one_genre_is_plain_training() {
        let hmm = KnownHmm::three_state(9, NUM_SPECIAL).unwrap();
        let (c, _) = hmm.sample_corpus(60, 2, 3);
        let (held, _) = hmm.sample_corpus(20, 2, 4);
        let cfg = small_config();
        let l = attach_labels(&c, &vec![0; c.documents.len()]).unwrap();
        let jm = train_joint(&l, hmm.vocab_len(), &cfg, 7, Execution::Parallel).unwrap();
        let plain = train_nhmm(&c, hmm.vocab_len(), &cfg.nhmm, 7, None).unwrap();
        assert_eq!(jm.snapshots(0).unwrap(), &plain.snapshots[..]);
        assert!(jm.pooled.is_none());
        let lh = attach_labels(&held, &vec![0; held.documents.len()]).unwrap();
        let joint = joint_perplexity(&jm, &lh, Execution::Parallel).unwrap();
        assert_eq!(joint, perplexity(&plain.snapshots, &held, Execution::Sequential).unwrap());
    }

    #[test]
    fn small_genres_fall_back_and_runs_repeat() {
        let g = genre_corpus(30, 3, 2, 5).unwrap();
        let mut genres = g.doc_genres.clone();
        // a third genre with a single document
        genres[0] = 9;
        let l = attach_labels(&g.corpus, &genres).unwrap();
        let cfg = small_config();
        let a = train_joint(&l, g.vocab_len, &cfg, 3, Execution::Parallel).unwrap();
        a.check().unwrap();
        assert_eq!(a.genres[&9], GenreModel::Pooled);
        assert!(matches!(a.genres[&0], GenreModel::Own(_)));
        assert!(a.pooled.is_some());
        assert_eq!(a, train_joint(&l, g.vocab_len, &cfg, 3, Execution::Sequential).unwrap());
        // unseen genre scores with the pooled model
        assert_eq!(a.snapshots(42).unwrap(), &a.pooled.as_ref().unwrap()[..]);
    }

    #[test]
    fn joint_perplexity_combines_genre_perplexities() {
        let g = genre_corpus(30, 3, 2, 6).unwrap();
        let l = attach_labels(&g.corpus, &g.doc_genres).unwrap();
        let jm = train_joint(&l, g.vocab_len, &small_config(), 1, Execution::Parallel).unwrap();
        let parts = genre_logprobs(&jm, &l, Execution::Parallel).unwrap();
        let n: usize = parts.iter().map(|p| p.2).sum();
        // exp of the token-weighted mean of per-genre mean negative log-probs
        let weighted: f64 = parts.iter().map(|(_, lp, t)| (*t as f64 / n as f64) * (-lp / *t as f64)).sum();
        let joint = joint_perplexity(&jm, &l, Execution::Sequential).unwrap();
        assert_abs_diff_eq!(joint, weighted.exp(), epsilon = 1e-9 * joint);
        let unlabeled = LabeledCorpus {
            corpus: l.corpus.clone(),
            genres: vec![],
        };
        assert!(matches!(joint_perplexity(&jm, &unlabeled, Execution::Parallel), Err(Error::MissingGenre(0))));
    }

    #[test]
    fn genre_models_prefer_their_own_text() {
        let g = genre_corpus(60, 4, 2, 8).unwrap();
        let l = attach_labels(&g.corpus, &g.doc_genres).unwrap();
        let mut cfg = small_config();
        cfg.nhmm.iterations = 10;
        let jm = train_joint(&l, g.vocab_len, &cfg, 2, Execution::Parallel).unwrap();
        let held = genre_corpus(20, 4, 2, 99).unwrap();
        let (_, parts) = split_corpus_by_genre(&held.corpus, &held.doc_genres).unwrap();
        for (own, text) in &parts {
            let other = 1 - own;
            let lp = |genre: u32| -> f64 {
                text.sentences.iter().map(|s| averaged_logprob(jm.snapshots(genre).unwrap(), s).unwrap()).sum()
            };
            assert!(lp(*own) > lp(other), "genre {own}");
        }
    }

    proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig::with_cases(32))]
        #[test]
        fn similar_scores_are_a_ranking(q in 3u32..12, c in 3u32..12, top in 1usize..15) {
            let (m, _) = planted_pairs();
            let r = similar_words(&m, &[c], q, top).unwrap();
            prop_assert!(r.ranked.len() == top.min(V - NUM_SPECIAL as usize - 1));
            prop_assert!(r.ranked.windows(2).all(|p| p[0].1 >= p[1].1));
            prop_assert!(r.ranked.iter().all(|&(w, s)| w != q && s > 0.0));
            prop_assert!((r.state_posterior.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
    }
}
