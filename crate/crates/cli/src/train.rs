//! `train {hpylm|nhmm|lda|joint}`.

use std::time::Instant;

use anyhow::Context;
use log::info;
use ngram_hmm::corpus::{build_vocabulary, Corpus, Provenance};
use ngram_hmm::exec::Execution;
use ngram_hmm::format::{ModelFile, Payload};
use ngram_hmm::hpylm::HpylmTrainer;
use ngram_hmm::jointspace::{attach_labels, joint_perplexity, train_joint, GenreModel, JointModel};
use ngram_hmm::lda::{corpus_documents, fit_lda, heldout_loglik, infer_genres, LdaModel};
use ngram_hmm::nhmm::train_nhmm;
use serde_json::json;

use crate::config::RunConfig;
use crate::report::{append_log, file_sha256, input_corpus, input_lines, write_json, LogRow, Outputs};
use crate::{Kind, TrainArgs};

/// Held-out genre labels for a joint model: each document takes its most
/// probable genre among those the model can score.
pub fn heldout_labels(jm: &JointModel, lda: &LdaModel, held: &Corpus, sweeps: usize, seed: u64, exec: Execution) -> Vec<u32> {
    let docs = corpus_documents(held);
    infer_genres(lda, &docs, sweeps, seed, exec)
        .into_iter()
        .map(|a| {
            if jm.pooled.is_some() || jm.genres.contains_key(&a.genre) {
                return a.genre;
            }
            let mut best = None;
            for &g in jm.genres.keys() {
                let p = a.theta.get(g as usize).copied().unwrap_or(0.0);
                if best.is_none_or(|(_, q)| p > q) {
                    best = Some((g, p));
                }
            }
            best.map_or(a.genre, |(g, _)| g)
        })
        .collect()
}

pub fn cmd_train(args: &TrainArgs) -> anyhow::Result<()> {
    let cfg: RunConfig = args.common.run_config()?;
    let exec = args.common.execution();
    let (lines, train_sha) = input_lines(&args.train)?;
    let vocab = build_vocabulary(&lines, cfg.min_count).context("building the vocabulary")?;
    let order = cfg.order;
    let mut corpus = Corpus::from_lines(&lines, &vocab, order);
    corpus.provenance = Some(Provenance {
        path: args.train.clone(),
        sha256: train_sha.clone(),
    });
    let heldout = args
        .heldout
        .as_deref()
        .map(|p| input_corpus(p, &vocab, order))
        .transpose()?;
    let stem = args.name.clone().unwrap_or_else(|| args.kind.name().to_string());
    let out = Outputs::new(&args.common.out_dir, &stem)?;
    let vlen = vocab.len();
    let seed = cfg.seed;
    info!(
        "training {} on {} sentences, {} tokens, vocabulary {}",
        args.kind.name(),
        corpus.len(),
        corpus.token_count(),
        vlen
    );

    let start = Instant::now();
    let mut rows = Vec::new();
    let mut states = json!(null);
    let mut ppl = None;
    let payload = match args.kind {
        Kind::Hpylm => {
            let mut t = HpylmTrainer::new(&corpus, vlen, order, seed)?;
            for i in 1..=cfg.iterations {
                t.step()?;
                rows.push(LogRow {
                    iteration: i,
                    train_loglik: Some(t.train_logprob()?),
                    seconds: start.elapsed().as_secs_f64(),
                    ..LogRow::default()
                });
            }
            let m = t.finish();
            if let Some(h) = &heldout {
                ppl = Some(m.perplexity_with(h, exec)?);
            }
            Payload::Hpylm(m)
        }
        Kind::Nhmm => {
            let run = train_nhmm(&corpus, vlen, &cfg.nhmm(), seed, heldout.as_ref())?;
            rows.extend(run.log.iter().map(|r| LogRow {
                genre: None,
                iteration: r.iteration,
                states: r.states,
                train_loglik: Some(r.train_loglik),
                heldout_ppl: r.heldout_ppl,
                seconds: r.seconds,
            }));
            if let Some(h) = &heldout {
                ppl = Some(run.perplexity(h, exec)?);
            }
            states = json!(run.model().num_states());
            Payload::Nhmm(run.snapshots)
        }
        Kind::Lda => {
            let m = fit_lda(&corpus_documents(&corpus), vlen, cfg.lda(), seed)?;
            if let Some(h) = &heldout {
                let (ll, n) = heldout_loglik(&m, &corpus_documents(h), cfg.fold_in_sweeps, seed);
                if n > 0 {
                    ppl = Some((-ll / n as f64).exp());
                }
            }
            rows.push(LogRow {
                iteration: cfg.lda_iterations,
                states: m.topics(),
                heldout_ppl: ppl,
                seconds: start.elapsed().as_secs_f64(),
                ..LogRow::default()
            });
            states = json!(m.topics());
            Payload::Lda(m)
        }
        Kind::Joint => {
            let lda = fit_lda(&corpus_documents(&corpus), vlen, cfg.lda(), seed)?;
            let labeled = attach_labels(&corpus, &lda.genres())?;
            let jm = train_joint(&labeled, vlen, &cfg.joint(), seed, exec)?;
            if let Some(h) = &heldout {
                let labels = heldout_labels(&jm, &lda, h, cfg.fold_in_sweeps, seed, exec);
                ppl = Some(joint_perplexity(&jm, &attach_labels(h, &labels)?, exec)?);
            }
            let mut per_genre = serde_json::Map::new();
            for (g, gm) in &jm.genres {
                let k = match gm {
                    GenreModel::Own(s) => s.last().map(|m| m.num_states()),
                    GenreModel::Pooled => None,
                };
                per_genre.insert(g.to_string(), json!(k.map_or_else(|| json!("pooled"), |k| json!(k))));
                rows.push(LogRow {
                    genre: Some(*g),
                    iteration: cfg.iterations,
                    states: k.unwrap_or(0),
                    seconds: start.elapsed().as_secs_f64(),
                    ..LogRow::default()
                });
            }
            states = serde_json::Value::Object(per_genre);
            Payload::Joint { model: jm, lda }
        }
    };
    let seconds = start.elapsed().as_secs_f64();

    let file = ModelFile {
        seed,
        config: cfg.pairs(),
        vocab: vocab.clone(),
        payload,
    };
    file.save(&out.model)?;
    let mut vbuf = Vec::new();
    vocab.write_tsv(&mut vbuf)?;
    std::fs::write(&out.vocab, vbuf).with_context(|| format!("writing {}", out.vocab.display()))?;
    append_log(&out.log, args.kind.name(), seed, &rows)?;

    let summary = json!({
        "kind": args.kind.name(),
        "order": order,
        "seed": seed,
        "vocab_size": vlen,
        "train_sentences": corpus.len(),
        "train_tokens": corpus.token_count(),
        "train_sha256": train_sha,
        "heldout_tokens": heldout.as_ref().map(Corpus::token_count),
        "perplexity": ppl,
        "states": states,
        "seconds": seconds,
        "model": out.model.display().to_string(),
        "model_sha256": file_sha256(&out.model)?,
        "config": cfg.pairs().into_iter().map(|(k, v)| (k, json!(v))).collect::<serde_json::Map<_, _>>(),
    });
    write_json(&out.summary, &summary)?;
    match ppl {
        Some(p) => println!("{}\tperplexity {p:.6}\t{}", args.kind.name(), out.model.display()),
        None => println!("{}\t{}", args.kind.name(), out.model.display()),
    }
    Ok(())
}
