//! End-to-end tests of the command-line interface: the full
//! train -> order -> tag -> eval -> bench -> sweep pipeline, plus exit
//! codes and format closure.

mod common;

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use once_cell::sync::Lazy;
use tempfile::TempDir;

use dyntag::corpus::{read_labeled_corpus, write_corpus};
use dyntag::evalbench::read_curve_csv;
use dyntag::features::{default_template_list, TemplateList};
use dyntag::model::load_model;
use dyntag::synth;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_dyntag"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn dyntag")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

/// Small bundled-style corpus shared by the CLI tests, written once.
struct Workdir {
    dir: TempDir,
    train: PathBuf,
    dev: PathBuf,
    test: PathBuf,
    raw: PathBuf,
    model: PathBuf,
}

static WORK: Lazy<Workdir> = Lazy::new(|| {
    let dir = TempDir::new().expect("tempdir");
    let train_corpus = synth::bundled_split(4_000, 11);
    let dev_corpus = synth::bundled_split(800, 12);
    let test_corpus = synth::bundled_split(800, 13);

    let train = dir.path().join("train.tsv");
    let dev = dir.path().join("dev.tsv");
    let test = dir.path().join("test.tsv");
    write_corpus(&train_corpus.sentences, &train_corpus.labels, &train).unwrap();
    write_corpus(&dev_corpus.sentences, &dev_corpus.labels, &dev).unwrap();
    write_corpus(&test_corpus.sentences, &test_corpus.labels, &test).unwrap();

    let raw = dir.path().join("raw.txt");
    let mut text = String::new();
    for s in test_corpus.sentences.iter().take(40) {
        for t in &s.tokens {
            text.push_str(&t.form);
            text.push('\n');
        }
        text.push('\n');
    }
    std::fs::write(&raw, text).unwrap();

    let model = dir.path().join("model.bin");
    let out = bin()
        .args([
            "train",
            "--train",
            train.to_str().unwrap(),
            "--dev",
            dev.to_str().unwrap(),
            "--out",
            model.to_str().unwrap(),
            "--epochs",
            "2",
        ])
        .output()
        .expect("train");
    assert!(out.status.success(), "training failed: {}", stderr(&out));

    Workdir {
        dir,
        train,
        dev,
        test,
        raw,
        model,
    }
});

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn train_writes_model_and_prints_dev_report() {
    let w = &*WORK;
    assert!(w.model.exists());
    let model = load_model(&w.model).unwrap();
    assert_eq!(model.n_templates(), default_template_list().len());
    // The fixture already captured stdout during training; retrain quickly
    // on a fixed prefix to check the report text.
    let out_path = w.dir.path().join("fixed3.bin");
    let out = run(&[
        "train",
        "--train",
        p(&w.train),
        "--dev",
        p(&w.dev),
        "--out",
        p(&out_path),
        "--mode",
        "fixed:3",
        "--epochs",
        "1",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = stdout(&out);
    for needle in ["tok. accuracy", "unk. accuracy", "feat. templates", "speedup proxy"] {
        assert!(text.contains(needle), "missing {needle:?} in:\n{text}");
    }
    let fixed = load_model(&out_path).unwrap();
    assert_eq!(fixed.n_templates(), 3);
}

#[test]
fn eval_prints_table_columns() {
    let w = &*WORK;
    let out = run(&["eval", "--model", p(&w.model), "--test", p(&w.test), "--policy", "dynamic"]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = stdout(&out);
    for needle in ["tok. accuracy", "unk. accuracy", "feat. templates", "speedup proxy"] {
        assert!(text.contains(needle), "missing {needle:?} in:\n{text}");
    }
}

#[test]
fn tag_output_is_readable_and_stats_show_fixed_k() {
    let w = &*WORK;
    let tagged = w.dir.path().join("tagged.tsv");
    let out = run(&[
        "tag",
        "--model",
        p(&w.model),
        "--input",
        p(&w.raw),
        "--policy",
        "dynamic",
        "--out",
        p(&tagged),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    // Format closure: the tagged file reads back as a labeled corpus.
    let corpus = read_labeled_corpus(&tagged).unwrap();
    assert!(!corpus.sentences.is_empty());

    // fixed:1 with --stats shows exactly one template per token.
    let stats = w.dir.path().join("stats.tsv");
    let out = run(&[
        "tag",
        "--model",
        p(&w.model),
        "--input",
        p(&w.raw),
        "--policy",
        "fixed:1",
        "--stats",
        "--out",
        p(&stats),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = std::fs::read_to_string(&stats).unwrap();
    for line in text.lines().filter(|l| !l.is_empty()) {
        let cols: Vec<&str> = line.split('\t').collect();
        assert_eq!(cols.len(), 3, "bad stats line {line:?}");
        assert_eq!(cols[2], "1");
    }
}

#[test]
fn tagging_trained_data_reproduces_high_accuracy() {
    let w = &*WORK;
    let out = run(&["eval", "--model", p(&w.model), "--test", p(&w.train), "--policy", "dynamic"]);
    assert_eq!(code(&out), 0);
    let text = stdout(&out);
    let acc_line = text.lines().find(|l| l.contains("tok. accuracy")).unwrap();
    let acc: f64 = acc_line.split_whitespace().nth(2).unwrap().parse().unwrap();
    assert!(acc > 0.95, "training-set accuracy only {acc}");
}

#[test]
fn order_pipeline_feeds_train() {
    let w = &*WORK;
    let tpl = w.dir.path().join("three.tpl");
    std::fs::write(&tpl, "w0 word 0\ns2 suffix 2 0\nt-1 prev-label 1\n").unwrap();
    let ordering = w.dir.path().join("ordering.txt");
    let out = run(&[
        "order",
        "--train",
        p(&w.train),
        "--dev",
        p(&w.dev),
        "--templates",
        p(&tpl),
        "--stage-epochs",
        "1",
        "--out",
        p(&ordering),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let names = dyntag::ordering::read_ordering(&ordering).unwrap();
    assert_eq!(names.len(), 3);

    let model_path = w.dir.path().join("ordered.bin");
    let out = run(&[
        "train",
        "--train",
        p(&w.train),
        "--dev",
        p(&w.dev),
        "--templates",
        p(&tpl),
        "--order",
        p(&ordering),
        "--out",
        p(&model_path),
        "--epochs",
        "1",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let model = load_model(&model_path).unwrap();
    let got: Vec<String> = model.templates.names().iter().map(|s| s.to_string()).collect();
    assert_eq!(got, names);
}

#[test]
fn order_empty_dev_is_explicit_error() {
    let w = &*WORK;
    let empty = w.dir.path().join("empty.tsv");
    std::fs::write(&empty, "").unwrap();
    let out = run(&[
        "order",
        "--train",
        p(&w.train),
        "--dev",
        p(&empty),
        "--out",
        p(&w.dir.path().join("o.txt")),
    ]);
    assert_eq!(code(&out), 2);
    assert!(stderr(&out).contains("empty corpus"));
}

#[test]
fn bench_reports_median_over_repetitions() {
    let w = &*WORK;
    let out = run(&[
        "bench",
        "--model",
        p(&w.model),
        "--test",
        p(&w.test),
        "--repetitions",
        "3",
        "--compare-full",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("over 3 repetitions"), "{text}");
    assert!(text.contains("speedup"), "{text}");

    let out = run(&[
        "bench",
        "--model",
        p(&w.model),
        "--test",
        p(&w.test),
        "--repetitions",
        "1",
    ]);
    assert_eq!(code(&out), 1);
}

#[test]
fn sweep_emits_one_csv_row_per_margin() {
    let w = &*WORK;
    let csv_path = w.dir.path().join("curve.csv");
    let tpl = w.dir.path().join("sweep.tpl");
    std::fs::write(&tpl, "w0 word 0\ns2 suffix 2 0\nt-1 prev-label 1\n").unwrap();
    let out = run(&[
        "sweep",
        "--kind",
        "margin",
        "--train",
        p(&w.train),
        "--dev",
        p(&w.dev),
        "--test",
        p(&w.test),
        "--templates",
        p(&tpl),
        "--margins",
        "1,3",
        "--epochs",
        "1",
        "--out",
        p(&csv_path),
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let points = read_curve_csv(&csv_path).unwrap();
    assert_eq!(points.len(), 2);
    assert!(points.iter().all(|pt| pt.series == "dynamic-margin-sweep"));
    assert_eq!(points[0].margin, Some(1.0));
    assert_eq!(points[1].margin, Some(3.0));
}

#[test]
fn dump_templates_round_trips() {
    let out = run(&["dump-templates"]);
    assert_eq!(code(&out), 0);
    let parsed = TemplateList::parse(&stdout(&out), "dump").unwrap();
    assert_eq!(parsed, default_template_list());
}

#[test]
fn config_file_merges_with_flag_precedence() {
    let w = &*WORK;
    let cfg_path = w.dir.path().join("train.toml");
    std::fs::write(&cfg_path, "margin = 3.0\nepochs = 1\nlearning_rate = 0.4\n").unwrap();
    let model_path = w.dir.path().join("cfg.bin");
    let out = run(&[
        "train",
        "--train",
        p(&w.train),
        "--dev",
        p(&w.dev),
        "--out",
        p(&model_path),
        "--config",
        p(&cfg_path),
        "--margin",
        "2",
        "--mode",
        "fixed:2",
    ]);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let model = load_model(&model_path).unwrap();
    assert_eq!(model.margin, 2.0, "flag should beat config file");
    assert!(model.config_echo.contains("learning_rate = 0.4"));
}

#[test]
fn usage_errors_exit_one() {
    let w = &*WORK;
    let cases: Vec<Vec<&str>> = vec![
        vec![
            "train", "--train", p(&w.train), "--dev", p(&w.dev), "--out", "/tmp/x.bin",
            "--margin", "-1",
        ],
        vec![
            "train", "--train", p(&w.train), "--dev", p(&w.dev), "--out", "/tmp/x.bin",
            "--mode", "fixed:0",
        ],
        vec![
            "train", "--train", p(&w.train), "--dev", p(&w.dev), "--out", "/tmp/x.bin",
            "--mode", "sideways",
        ],
        vec!["eval", "--model", p(&w.model), "--test", p(&w.test), "--policy", "sometimes"],
        vec!["eval", "--model", p(&w.model), "--test", p(&w.test), "--policy", "fixed:999"],
        vec!["no-such-command"],
    ];
    for args in cases {
        let out = run(&args);
        assert_eq!(code(&out), 1, "args {args:?}: {}", stderr(&out));
    }
}

#[test]
fn data_errors_exit_two() {
    let w = &*WORK;
    let bad = w.dir.path().join("bad.tsv");
    std::fs::write(&bad, "one\ttwo\tthree\n").unwrap();
    let cases: Vec<Vec<&str>> = vec![
        vec![
            "train", "--train", "/nonexistent/t.tsv", "--dev", p(&w.dev), "--out", "/tmp/x.bin",
        ],
        vec!["train", "--train", p(&bad), "--dev", p(&w.dev), "--out", "/tmp/x.bin"],
        vec!["eval", "--model", "/nonexistent/model.bin", "--test", p(&w.test)],
    ];
    for args in cases {
        let out = run(&args);
        assert_eq!(code(&out), 2, "args {args:?}: {}", stderr(&out));
    }
}

#[test]
fn help_and_version_exit_zero() {
    assert_eq!(code(&run(&["--help"])), 0);
    assert_eq!(code(&run(&["--version"])), 0);
    assert_eq!(code(&run(&["train", "--help"])), 0);
}

#[test]
fn bundled_sample_file_parses() {
    let sample = common::data_path("sample/handtagged.tsv");
    let corpus = read_labeled_corpus(sample).unwrap();
    assert!(corpus.sentences.len() >= 25);
    assert!(corpus.labels.len() >= 5);
}
