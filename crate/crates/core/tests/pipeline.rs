//! End-to-end through the public API: train, save, reload, score.

use std::sync::Arc;

use ngram_hmm::corpus::{Vocabulary, NUM_SPECIAL};
use ngram_hmm::exec::Execution;
use ngram_hmm::format::{ModelFile, Payload};
use ngram_hmm::hpylm::train_hpylm;
use ngram_hmm::jointspace::{attach_labels, joint_perplexity, train_joint, JointConfig};
use ngram_hmm::lda::{corpus_documents, fit_lda, LdaConfig};
use ngram_hmm::nhmm::{perplexity, train_nhmm_with_base, NhmmConfig};
use ngram_hmm::synthetic::genre_corpus;

fn small_nhmm() -> NhmmConfig {
    let mut cfg = NhmmConfig {
        iterations: 12,
        burn_in: 6,
        samples: 3,
        sample_spacing: 2,
        hpylm_iterations: 5,
        ..NhmmConfig::default()
    };
    cfg.em.states = 4;
    cfg
}

fn vocab_for(vlen: usize) -> Vocabulary {
    Vocabulary::from_words((NUM_SPECIAL as usize..vlen).map(|i| format!("w{i}")))
}

#[test]
fn nhmm_survives_a_save_and_reload() {
    let g = genre_corpus(20, 6, 3, 11).unwrap();
    let base = Arc::new(train_hpylm(&g.corpus, g.vocab_len, 3, 10, 2).unwrap());
    let run = train_nhmm_with_base(&g.corpus, base, &small_nhmm(), 2, None).unwrap();
    let before = run.perplexity(&g.corpus, Execution::Sequential).unwrap();

    let file = ModelFile {
        seed: 2,
        config: vec![("order".into(), "3".into())],
        vocab: vocab_for(g.vocab_len),
        payload: Payload::Nhmm(run.snapshots),
    };
    let dir = tempfile::TempDir::new().unwrap();
    let path = dir.path().join("m.model");
    file.save(&path).unwrap();
    let back = ModelFile::load(&path).unwrap();
    assert_eq!(back.to_text(), file.to_text());
    let Payload::Nhmm(snaps) = &back.payload else { panic!("wrong kind") };
    let after = perplexity(snaps, &g.corpus, Execution::Sequential).unwrap();
    assert!((before - after).abs() <= 1e-9 * before, "{before} vs {after}");
}

#[test]
fn parallel_and_sequential_joint_runs_agree() {
    let g = genre_corpus(24, 6, 3, 5).unwrap();
    let lda_cfg = LdaConfig {
        topics: 2,
        iterations: 40,
        ..LdaConfig::default()
    };
    let lda = fit_lda(&corpus_documents(&g.corpus), g.vocab_len, lda_cfg, 3).unwrap();
    let labeled = attach_labels(&g.corpus, &lda.genres()).unwrap();
    let cfg = JointConfig {
        nhmm: small_nhmm(),
        min_sentences: 20,
    };
    let seq = train_joint(&labeled, g.vocab_len, &cfg, 3, Execution::Sequential).unwrap();
    let par = train_joint(&labeled, g.vocab_len, &cfg, 3, Execution::Parallel).unwrap();
    let text = |m| {
        ModelFile {
            seed: 3,
            config: Vec::new(),
            vocab: vocab_for(g.vocab_len),
            payload: Payload::Joint { model: m, lda: lda.clone() },
        }
        .to_text()
    };
    let p_seq = joint_perplexity(&seq, &labeled, Execution::Sequential).unwrap();
    let p_par = joint_perplexity(&par, &labeled, Execution::Parallel).unwrap();
    assert_eq!(p_seq.to_bits(), p_par.to_bits());
    assert_eq!(text(seq), text(par));
}
