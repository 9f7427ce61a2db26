use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use ngram_hmm::corpus::build_vocabulary;
use ngram_hmm::format::{ModelFile, Payload};
use ngram_hmm::hpylm::HpylmModel;
use tempfile::TempDir;

const FIXTURE: &str = "the cat sat on the mat\nthe dog sat on the rug\na cat saw a dog\n";

const DOCS: &str = "\
###DOC###
red green blue red green
blue red green blue
###DOC###
one two three one two
three one two
###DOC###
red blue green red
###DOC###
two three one three
";

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_ngram-hmm"));
    c.env_remove("HMMLM_OUT_DIR");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) -> PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

const SMALL_NHMM: &[&str] = &[
    "--set",
    "iterations=6",
    "--set",
    "burn_in=2",
    "--set",
    "samples=2",
    "--set",
    "sample_spacing=2",
    "--set",
    "em.states=3",
    "--set",
    "hpylm.iterations=3",
];

fn train(dir: &Path, kind: &str, corpus: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["train", kind, "--train", s(corpus), "--out-dir", s(dir)];
    args.extend_from_slice(extra);
    run(&args)
}

#[test]
fn hpylm_model_file_round_trips() {
    let t = TempDir::new().unwrap();
    let c = write(t.path(), "c.txt", FIXTURE);
    let o = train(t.path(), "hpylm", &c, &["--set", "iterations=5"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let path = t.path().join("hpylm.model");
    let text = std::fs::read_to_string(&path).unwrap();
    let m = ModelFile::load(&path).unwrap();
    assert_eq!(m.to_text(), text);
    assert!(matches!(m.payload, Payload::Hpylm(_)));
    assert_eq!(m.config_value("iterations"), Some("5"));
    for f in ["hpylm.vocab.tsv", "hpylm.log.tsv", "hpylm.summary.json"] {
        assert!(t.path().join(f).is_file(), "{f}");
    }
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(t.path().join("hpylm.summary.json")).unwrap()).unwrap();
    assert_eq!(summary["kind"], "hpylm");
    assert_eq!(summary["model_sha256"].as_str().unwrap().len(), 64);
}

#[test]
fn nhmm_training_is_deterministic() {
    let t = TempDir::new().unwrap();
    let c = write(t.path(), "c.txt", FIXTURE);
    let mut files = Vec::new();
    for name in ["a", "b"] {
        let mut extra = vec!["--seed", "1", "--name", name];
        extra.extend_from_slice(SMALL_NHMM);
        let o = train(t.path(), "nhmm", &c, &extra);
        assert!(o.status.success(), "{}", stderr(&o));
        files.push(std::fs::read(t.path().join(format!("{name}.model"))).unwrap());
    }
    assert_eq!(files[0], files[1]);
}

#[test]
fn workers_do_not_change_the_model() {
    let t = TempDir::new().unwrap();
    let c = write(t.path(), "c.txt", DOCS);
    let mut files = Vec::new();
    for (name, workers) in [("seq", "1"), ("par", "4")] {
        let mut extra = vec!["--workers", workers, "--name", name, "--set", "lda.topics=2", "--set", "joint.min_sentences=2"];
        extra.extend_from_slice(SMALL_NHMM);
        let o = train(t.path(), "joint", &c, &extra);
        assert!(o.status.success(), "{}", stderr(&o));
        files.push(std::fs::read(t.path().join(format!("{name}.model"))).unwrap());
    }
    assert_eq!(files[0], files[1]);
}

#[test]
fn missing_input_is_a_usage_error_naming_the_path() {
    let t = TempDir::new().unwrap();
    let missing = t.path().join("no_such_corpus.txt");
    let o = train(t.path(), "nhmm", &missing, &[]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("no_such_corpus.txt"), "{}", stderr(&o));
}

#[test]
fn bad_config_is_a_usage_error_naming_the_key() {
    let t = TempDir::new().unwrap();
    let c = write(t.path(), "c.txt", FIXTURE);
    let o = train(t.path(), "hpylm", &c, &["--set", "colour=red"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("colour"));
    let o = train(t.path(), "hpylm", &c, &["--set", "em.tau=2"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("em.tau"));
    let cfg = write(t.path(), "run.cfg", "# comment\norder = 2\nbogus = 1\n");
    let o = train(t.path(), "hpylm", &c, &["--config", s(&cfg)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("run.cfg:3"), "{}", stderr(&o));
    assert_eq!(run(&["train", "nope"]).status.code(), Some(2));
}

#[test]
fn flags_override_the_config_file() {
    let t = TempDir::new().unwrap();
    let c = write(t.path(), "c.txt", FIXTURE);
    let cfg = write(t.path(), "run.cfg", "order = 2\niterations = 3\nseed = 9\n");
    let o = train(t.path(), "hpylm", &c, &["--config", s(&cfg), "--set", "iterations=4", "--seed", "5"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let m = ModelFile::load(&t.path().join("hpylm.model")).unwrap();
    assert_eq!(m.payload.order(), 2);
    assert_eq!(m.config_value("iterations"), Some("4"));
    assert_eq!(m.seed, 5);
}

#[test]
fn out_dir_defaults_to_the_environment() {
    let t = TempDir::new().unwrap();
    let c = write(t.path(), "c.txt", FIXTURE);
    let out = t.path().join("from_env");
    let o = bin()
        .args(["train", "hpylm", "--train", s(&c), "--set", "iterations=2"])
        .env("HMMLM_OUT_DIR", &out)
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(out.join("hpylm.model").is_file());
}

#[test]
fn uniform_model_has_vocabulary_perplexity() {
    let t = TempDir::new().unwrap();
    let vocab = build_vocabulary(FIXTURE.lines(), 1).unwrap();
    let file = ModelFile {
        seed: 0,
        config: vec![],
        vocab: vocab.clone(),
        payload: Payload::Hpylm(HpylmModel::new(3, vocab.len(), 0).unwrap()),
    };
    let model = t.path().join("uniform.model");
    file.save(&model).unwrap();
    let held = write(t.path(), "h.txt", "the cat sat\nunseen words here\n");
    let o = run(&["eval", s(&model), s(&held)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let mut lines = out.lines();
    assert_eq!(lines.next(), Some("model_kind, order, heldout_tokens, ppl"));
    let row: Vec<&str> = lines.next().unwrap().split(", ").collect();
    assert_eq!(&row[..3], &["hpylm", "3", "8"]);
    let ppl: f64 = row[3].parse().unwrap();
    assert!((ppl - vocab.predictable_len() as f64).abs() < 1e-6, "{ppl}");
}

#[test]
fn eval_refuses_a_foreign_vocabulary() {
    let t = TempDir::new().unwrap();
    let c = write(t.path(), "c.txt", FIXTURE);
    let o = train(t.path(), "hpylm", &c, &["--set", "iterations=2"]);
    assert!(o.status.success());
    let model = t.path().join("hpylm.model");
    let other = t.path().join("other");
    let c2 = write(t.path(), "c2.txt", "completely different words\n");
    let o = train(&other, "hpylm", &c2, &["--set", "iterations=2"]);
    assert!(o.status.success());

    let o = run(&["eval", s(&model), s(&c), "--vocab", s(&other.join("hpylm.vocab.tsv"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("mismatch"), "{}", stderr(&o));
    let o = run(&["eval", s(&model), s(&c), "--vocab", s(&t.path().join("hpylm.vocab.tsv"))]);
    assert!(o.status.success());
}

#[test]
fn eval_reports_baselines_and_refuses_other_versions() {
    let t = TempDir::new().unwrap();
    let c = write(t.path(), "c.txt", FIXTURE);
    assert!(train(t.path(), "hpylm", &c, &["--set", "iterations=2"]).status.success());
    let model = t.path().join("hpylm.model");
    let o = run(&["eval", s(&model), s(&c), "--baseline", "add-one", "--train", s(&c)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).lines().any(|l| l.starts_with("add-one, 3, ")));
    let o = run(&["eval", s(&model), s(&c), "--baseline", "kn"]);
    assert_eq!(o.status.code(), Some(2));

    let text = std::fs::read_to_string(&model).unwrap().replacen("ngram-hmm-model 1", "ngram-hmm-model 9", 1);
    let bumped = write(t.path(), "bumped.model", &text);
    let o = run(&["eval", s(&bumped), s(&c)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("version"), "{}", stderr(&o));
}

#[test]
fn similar_ranks_the_vocabulary() {
    let t = TempDir::new().unwrap();
    let c = write(t.path(), "c.txt", FIXTURE);
    let o = train(t.path(), "nhmm", &c, SMALL_NHMM);
    assert!(o.status.success(), "{}", stderr(&o));
    let model = t.path().join("nhmm.model");
    let o = run(&["similar", s(&model), "cat", "--context", "the", "--top-k", "3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let rows: Vec<String> = stdout(&o).lines().map(str::to_string).collect();
    assert_eq!(rows.len(), 3);
    assert!(rows[0].starts_with("1\t"));
    assert!(rows.iter().all(|r| !r.contains("\tcat\t")));

    let o = run(&["similar", s(&model), "zebra", "--top-k", "2"]);
    assert!(o.status.success());
    assert!(stderr(&o).contains("zebra"));
    assert_eq!(stdout(&o).lines().count(), 2);

    let o = run(&["similar", s(&model), "cat", "--top-k", "0"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn genre_writes_one_row_per_document() {
    let t = TempDir::new().unwrap();
    let c = write(t.path(), "docs.txt", DOCS);
    let o = train(t.path(), "lda", &c, &["--set", "lda.topics=2", "--set", "lda.iterations=50"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let docs = write(t.path(), "new.txt", "###DOC###\nred green blue\n###DOC###\none two\n###DOC###\nzebra\n");
    let table = t.path().join("assign.tsv");
    let o = run(&["genre", s(&t.path().join("lda.model")), s(&docs), "--out", s(&table)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = std::fs::read_to_string(&table).unwrap();
    let rows: Vec<Vec<&str>> = text.lines().skip(1).map(|l| l.split('\t').collect()).collect();
    assert_eq!(rows.len(), 3);
    // the two vocabularies land in different genres; the unknown document is flagged
    assert_ne!(rows[0][1], rows[1][1]);
    assert_eq!(rows[2][2], "true");
    assert!(stderr(&o).contains("1 documents"));
}

#[test]
fn sweep_reports_each_topic_count() {
    let t = TempDir::new().unwrap();
    let c = write(t.path(), "docs.txt", DOCS);
    let o = run(&[
        "sweep-c", "--train", s(&c), "--heldout", s(&c), "--topics", "1,2,3", "--set", "lda.iterations=20",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let counts: Vec<&str> = out.lines().skip(1).map(|l| l.split('\t').next().unwrap()).collect();
    assert_eq!(counts, ["1", "2", "3"]);
}

#[test]
fn every_kind_trains_evaluates_and_reloads() {
    let t = TempDir::new().unwrap();
    let c = write(t.path(), "docs.txt", DOCS);
    for kind in ["hpylm", "nhmm", "lda", "joint"] {
        let mut extra = vec!["--heldout", s(&c), "--set", "lda.topics=2", "--set", "joint.min_sentences=3"];
        extra.extend_from_slice(SMALL_NHMM);
        let o = train(t.path(), kind, &c, &extra);
        assert!(o.status.success(), "{kind}: {}", stderr(&o));
        let model = t.path().join(format!("{kind}.model"));
        let o = run(&["eval", s(&model), s(&c)]);
        assert!(o.status.success(), "{kind}: {}", stderr(&o));
        let row = stdout(&o).lines().nth(1).unwrap().to_string();
        assert!(row.starts_with(&format!("{kind}, ")), "{row}");
        let ppl: f64 = row.rsplit(", ").next().unwrap().parse().unwrap();
        assert!(ppl.is_finite() && ppl > 1.0, "{kind}: {ppl}");
        let log = std::fs::read_to_string(t.path().join(format!("{kind}.log.tsv"))).unwrap();
        assert!(log.starts_with("kind\tseed\t"));
    }
}
