//! `eval`, `similar`, `genre` and `sweep-c`.

use std::fmt::Write as _;

use anyhow::{bail, Context};
use ngram_hmm::baseline::{AddOneModel, KneserNeyModel, NgramScorer};
use ngram_hmm::corpus::{build_vocabulary, Corpus, Vocabulary};
use ngram_hmm::error::Error;
use ngram_hmm::exec::{init_workers, Execution};
use ngram_hmm::format::{ModelFile, Payload};
use ngram_hmm::jointspace::{attach_labels, joint_perplexity, similar_words};
use ngram_hmm::lda::{corpus_documents, heldout_loglik, infer_genres, split_by_genre, sweep_topics, LdaModel};
use ngram_hmm::nhmm::{perplexity, HmmModel};

use crate::report::{input_corpus, input_lines, load_model};
use crate::train::heldout_labels;
use crate::{Baseline, EvalArgs, GenreArgs, SimilarArgs, SweepArgs, UsageError};

fn config_usize(file: &ModelFile, key: &str, default: usize) -> usize {
    file.config_value(key).and_then(|v| v.parse().ok()).unwrap_or(default)
}

/// Fold-in sweeps recorded with the model.
fn fold_in_sweeps(file: &ModelFile) -> usize {
    config_usize(file, "lda.fold_in_sweeps", 50)
}

pub const EVAL_HEADER: &str = "model_kind, order, heldout_tokens, ppl";

pub fn cmd_eval(args: &EvalArgs) -> anyhow::Result<()> {
    init_workers(args.workers);
    let exec = if args.workers == 1 { Execution::Sequential } else { Execution::Parallel };
    let file = load_model(&args.model)?;
    if let Some(vp) = &args.vocab {
        if !vp.is_file() {
            return Err(UsageError(format!("vocabulary file not found: {}", vp.display())).into());
        }
        let f = std::fs::File::open(vp)?;
        let v = Vocabulary::read_tsv(std::io::BufReader::new(f))?;
        if v.hash() != file.vocab.hash() {
            return Err(Error::VocabMismatch {
                expected: file.vocab.hash(),
                found: v.hash(),
            }
            .into());
        }
    }
    let order = file.payload.order().max(1);
    let held = input_corpus(&args.heldout, &file.vocab, order)?;
    let tokens = held.token_count();
    let ppl = match &file.payload {
        Payload::Hpylm(m) => m.perplexity_with(&held, exec)?,
        Payload::Nhmm(snaps) => perplexity(snaps, &held, exec)?,
        Payload::Lda(m) => {
            let (ll, n) = heldout_loglik(m, &corpus_documents(&held), fold_in_sweeps(&file), file.seed);
            if n == 0 {
                bail!("no held-out token is known to the topic model");
            }
            (-ll / n as f64).exp()
        }
        Payload::Joint { model, lda } => {
            let labels = heldout_labels(model, lda, &held, fold_in_sweeps(&file), file.seed, exec);
            joint_perplexity(model, &attach_labels(&held, &labels)?, exec)?
        }
    };
    println!("{EVAL_HEADER}");
    println!("{}, {}, {}, {:.6}", file.kind().name(), file.payload.order(), tokens, ppl);

    if let (Some(b), Some(tp)) = (args.baseline, &args.train) {
        let train = input_corpus(tp, &file.vocab, order)?;
        let vlen = file.vocab.len();
        let (name, p) = match b {
            Baseline::AddOne => ("add-one", AddOneModel::train(&train, vlen, order)?.perplexity(&held)?),
            Baseline::Kn => (
                "kn",
                KneserNeyModel::train(&train, vlen, order, args.kn_discount)?.perplexity(&held)?,
            ),
        };
        println!("{name}, {order}, {tokens}, {p:.6}");
    }
    Ok(())
}

fn encode_words(vocab: &Vocabulary, text: &str) -> Vec<u32> {
    text.split_whitespace().map(|w| vocab.id(w)).collect()
}

pub fn cmd_similar(args: &SimilarArgs) -> anyhow::Result<()> {
    let file = load_model(&args.model)?;
    if args.top_k == 0 {
        return Err(UsageError("--top-k must be at least 1".into()).into());
    }
    let model: &HmmModel = match (&file.payload, args.genre) {
        (Payload::Nhmm(s), None) => s.last().context("model has no snapshots")?,
        (Payload::Nhmm(_), Some(_)) => {
            return Err(UsageError("--genre needs a joint model".into()).into());
        }
        (Payload::Joint { model, .. }, g) => {
            let g = match g {
                Some(g) => g,
                None => *model.genres.keys().next().context("joint model has no genres")?,
            };
            model.snapshots(g)?.last().context("genre has no snapshots")?
        }
        _ => {
            return Err(UsageError(format!("similar needs an nhmm or joint model, got {}", file.kind().name())).into());
        }
    };
    let context = encode_words(&file.vocab, &args.context);
    let word = file.vocab.get(&args.word).unwrap_or(ngram_hmm::corpus::UNK);
    let res = similar_words(model, &context, word, args.top_k)?;
    if res.oov {
        eprintln!("warning: `{}` is not in the vocabulary; ranking by context alone", args.word);
    }
    let mut out = String::new();
    for (rank, (w, score)) in res.ranked.iter().enumerate() {
        let _ = writeln!(out, "{}\t{}\t{score:.6e}", rank + 1, file.vocab.word(*w));
    }
    print!("{out}");
    Ok(())
}

fn lda_of(file: &ModelFile) -> anyhow::Result<&LdaModel> {
    match &file.payload {
        Payload::Lda(m) => Ok(m),
        Payload::Joint { lda, .. } => Ok(lda),
        _ => Err(UsageError(format!("genre needs an lda or joint model, got {}", file.kind().name())).into()),
    }
}

pub fn cmd_genre(args: &GenreArgs) -> anyhow::Result<()> {
    let cfg = args.common.run_config()?;
    let exec = args.common.execution();
    let file = load_model(&args.model)?;
    let lda = lda_of(&file)?;
    let docs_corpus = input_corpus(&args.docs, &file.vocab, 1)?;
    let docs = corpus_documents(&docs_corpus);
    let sweeps = if args.common.set.iter().any(|s| s.starts_with("lda.fold_in_sweeps")) {
        cfg.fold_in_sweeps
    } else {
        fold_in_sweeps(&file)
    };
    let seed = args.common.seed.unwrap_or(file.seed);
    let assigned = infer_genres(lda, &docs, sweeps, seed, exec);

    let mut table = String::from("doc\tgenre\toov\tsentences\ttheta\n");
    for (d, a) in assigned.iter().enumerate() {
        let theta: Vec<String> = a.theta.iter().map(|p| format!("{p:.6}")).collect();
        let _ = writeln!(
            table,
            "{d}\t{}\t{}\t{}\t{}",
            a.genre,
            a.oov,
            docs_corpus.documents[d].len(),
            theta.join(",")
        );
    }
    let out = match &args.out {
        Some(p) => p.clone(),
        None => {
            std::fs::create_dir_all(&args.common.out_dir)?;
            args.common.out_dir.join("genres.tsv")
        }
    };
    std::fs::write(&out, table).with_context(|| format!("writing {}", out.display()))?;

    let genres: Vec<u32> = assigned.iter().map(|a| a.genre).collect();
    let split = split_by_genre(&genres);
    let oov = assigned.iter().filter(|a| a.oov).count();
    for (g, idx) in &split.groups {
        println!("genre {g}\t{} documents", idx.len());
    }
    if oov > 0 {
        eprintln!("warning: {oov} documents share no word with the model and took the corpus prior");
    }
    println!("assignments written to {}", out.display());
    Ok(())
}

pub fn cmd_sweep(args: &SweepArgs) -> anyhow::Result<()> {
    let cfg = args.common.run_config()?;
    let exec = args.common.execution();
    if args.topics.is_empty() || args.topics.contains(&0) {
        return Err(UsageError("--topics needs positive topic counts".into()).into());
    }
    let (lines, _) = input_lines(&args.train)?;
    let vocab = build_vocabulary(&lines, cfg.min_count)?;
    let train = Corpus::from_lines(&lines, &vocab, 1);
    let held = input_corpus(&args.heldout, &vocab, 1)?;
    let points = sweep_topics(
        &corpus_documents(&train),
        &corpus_documents(&held),
        vocab.len(),
        &args.topics,
        cfg.lda(),
        cfg.fold_in_sweeps,
        cfg.seed,
        exec,
    )?;
    println!("topics\theldout_loglik\ttokens\tppl");
    for p in points {
        let ppl = if p.tokens > 0 { (-p.heldout_loglik / p.tokens as f64).exp() } else { f64::NAN };
        println!("{}\t{:.6}\t{}\t{:.6}", p.topics, p.heldout_loglik, p.tokens, ppl);
    }
    Ok(())
}
