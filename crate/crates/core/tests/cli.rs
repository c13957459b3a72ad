use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;
use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_seq2set"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn seq2set")
}

fn ok(args: &[&str]) -> String {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} exited {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_json(p: impl AsRef<Path>) -> Value {
    serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap()
}

fn jsonl(p: impl AsRef<Path>) -> Vec<Value> {
    fs::read_to_string(p)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

/// Synthesizes and splits a small corpus; returns the split directory.
fn corpus(dir: &Path, n: usize) -> PathBuf {
    let spec = dir.join("spec.toml");
    fs::write(
        &spec,
        format!(
            "num_samples = {n}\nnum_labels = 6\nvocab_size = 120\nmin_len = 6\nmax_len = 14\n\
             correlation = {{ kind = \"tree\", roots = 3, child_prob = 0.5 }}\n"
        ),
    )
    .unwrap();
    let synth = dir.join("synth");
    ok(&[
        "data",
        "synth",
        "--spec",
        s(&spec),
        "--seed",
        "3",
        "--out",
        s(&synth),
    ]);
    let split = dir.join("split");
    ok(&[
        "data",
        "split",
        "--input",
        s(&synth.join("corpus.jsonl")),
        "--seed",
        "1",
        "--out",
        s(&split),
    ]);
    split
}

fn write_config(dir: &Path, split: &Path, extra: &str) -> PathBuf {
    let cfg = dir.join("run.toml");
    fs::write(
        &cfg,
        format!(
            "[data]\ntrain = \"{}\"\nval = \"{}\"\ntest = \"{}\"\n\n\
             [training]\nbatch_size = 16\nmax_epochs = 2\nval_interval = 4\nlearning_rate = 0.003\n{extra}",
            s(&split.join("train.jsonl")),
            s(&split.join("val.jsonl")),
            s(&split.join("test.jsonl")),
        ),
    )
    .unwrap();
    cfg
}

#[test]
fn train_evaluate_predict_round_trip() {
    let tmp = TempDir::new().unwrap();
    let split = corpus(tmp.path(), 160);
    for f in ["train.jsonl", "val.jsonl", "test.jsonl", "provenance.json"] {
        assert!(split.join(f).is_file(), "{f}");
    }
    let cfg = write_config(tmp.path(), &split, "");

    let run1 = tmp.path().join("run1");
    ok(&[
        "train",
        "--config",
        s(&cfg),
        "--out",
        s(&run1),
        "--seed",
        "5",
    ]);
    for f in [
        "config.toml",
        "train_log.jsonl",
        "summary.json",
        "test_report.json",
        "test_predictions.jsonl",
    ] {
        assert!(run1.join(f).is_file(), "{f}");
    }
    let summary = read_json(run1.join("summary.json"));
    assert_eq!(summary["seed"], 5);
    let log = jsonl(run1.join("train_log.jsonl"));
    assert!(log.len() >= 2);
    assert_eq!(log[0]["step"], 0);

    let ckpt = run1.join("checkpoint");
    let eval = tmp.path().join("eval");
    let stdout = ok(&[
        "evaluate",
        "--checkpoint",
        s(&ckpt),
        "--data",
        s(&split.join("test.jsonl")),
        "--out",
        s(&eval),
    ]);
    let report = read_json(eval.join("report.json"));
    let test_report = read_json(run1.join("test_report.json"));
    for k in [
        "hamming_loss",
        "micro_precision",
        "micro_recall",
        "micro_f1",
    ] {
        assert_eq!(report[k], test_report[k], "{k}");
        assert_eq!(
            report[k].as_str().unwrap().split('.').nth(1).unwrap().len(),
            4
        );
    }
    assert!(stdout.contains("\"micro_f1\""));

    let shuffled = tmp.path().join("eval_shuffled");
    ok(&[
        "evaluate",
        "--checkpoint",
        s(&ckpt),
        "--data",
        s(&split.join("test.jsonl")),
        "--out",
        s(&shuffled),
        "--labels-shuffled",
        "--seed",
        "9",
    ]);
    let r2 = read_json(shuffled.join("report.json"));
    for k in [
        "hamming_loss",
        "micro_precision",
        "micro_recall",
        "micro_f1",
    ] {
        assert_eq!(report[k], r2[k], "{k}");
    }

    let preds = tmp.path().join("preds.jsonl");
    ok(&[
        "predict",
        "--checkpoint",
        s(&ckpt),
        "--data",
        s(&split.join("test.jsonl")),
        "--out",
        s(&preds),
    ]);
    let p = jsonl(&preds);
    assert_eq!(p.len(), jsonl(split.join("test.jsonl")).len());
    assert_eq!(p, jsonl(eval.join("predictions.jsonl")));

    let run2 = tmp.path().join("run2");
    ok(&[
        "train",
        "--config",
        s(&cfg),
        "--out",
        s(&run2),
        "--seed",
        "5",
    ]);
    assert_eq!(read_json(run2.join("test_report.json")), test_report);
    assert_eq!(
        fs::read_to_string(run1.join("train_log.jsonl")).unwrap(),
        fs::read_to_string(run2.join("train_log.jsonl")).unwrap()
    );
}

#[test]
fn presets_select_the_decoder() {
    let tmp = TempDir::new().unwrap();
    let split = corpus(tmp.path(), 100);
    let cfg = write_config(tmp.path(), &split, "");
    for preset in ["seq2seq", "seq2set_simplified"] {
        let out = tmp.path().join(preset);
        ok(&[
            "train",
            "--config",
            s(&cfg),
            "--out",
            s(&out),
            "--preset",
            preset,
        ]);
        let resolved = fs::read_to_string(out.join("config.toml")).unwrap();
        assert!(resolved.contains(preset), "{resolved}");
    }
}

#[test]
fn missing_input_fails_before_writing() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().join("out");
    let missing = tmp.path().join("nope.jsonl");
    let cases: [&[&str]; 4] = [
        &["data", "stats", "--input", s(&missing)],
        &[
            "data",
            "shuffle-labels",
            "--input",
            s(&missing),
            "--out",
            s(&out),
        ],
        &["train", "--config", s(&missing), "--out", s(&out)],
        &[
            "evaluate",
            "--checkpoint",
            s(&missing),
            "--data",
            s(&missing),
            "--out",
            s(&out),
        ],
    ];
    for args in cases {
        let o = run(args);
        assert_eq!(o.status.code(), Some(1), "{args:?}");
        assert!(!String::from_utf8_lossy(&o.stderr).is_empty());
        assert!(!out.exists(), "{args:?} created output");
    }
}

#[test]
fn usage_errors_exit_one() {
    assert_eq!(run(&[]).status.code(), Some(1));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));

    let tmp = TempDir::new().unwrap();
    let split = corpus(tmp.path(), 60);
    let cfg = write_config(tmp.path(), &split, "lamda = 0.5\n");
    let o = run(&[
        "train",
        "--config",
        s(&cfg),
        "--out",
        s(&tmp.path().join("r")),
    ]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("lamda"));

    let cfg = write_config(tmp.path(), &split, "lambda = 2.0\n");
    assert_eq!(
        run(&[
            "train",
            "--config",
            s(&cfg),
            "--out",
            s(&tmp.path().join("r"))
        ])
        .status
        .code(),
        Some(1)
    );

    let corpus = split.join("train.jsonl");
    let o = run(&[
        "data",
        "uncorrelated",
        "--input",
        s(&corpus),
        "--max-corr",
        "1.5",
        "--out",
        s(&tmp.path().join("u")),
    ]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn data_surgery_commands() {
    let tmp = TempDir::new().unwrap();
    let split = corpus(tmp.path(), 300);
    let input = split.join("train.jsonl");
    let labels = |p: &Path| -> std::collections::BTreeSet<String> {
        jsonl(p)
            .iter()
            .flat_map(|r| {
                r["labels"]
                    .as_array()
                    .unwrap()
                    .iter()
                    .map(|l| l.as_str().unwrap().to_string())
            })
            .collect()
    };
    let before = labels(&input);

    let top = tmp.path().join("top");
    ok(&[
        "data",
        "remove-top-k",
        "--input",
        s(&input),
        "--k",
        "2",
        "--out",
        s(&top),
    ]);
    let after = labels(&top.join("corpus.jsonl"));
    assert_eq!(before.len() - after.len(), 2);
    let prov = read_json(top.join("provenance.json"));
    assert_eq!(prov["parameters"]["removed"].as_array().unwrap().len(), 2);

    let unc = tmp.path().join("unc");
    ok(&[
        "data",
        "uncorrelated",
        "--input",
        s(&input),
        "--max-corr",
        "0.2",
        "--out",
        s(&unc),
    ]);
    assert!(labels(&unc.join("corpus.jsonl")).is_subset(&before));

    let sh = tmp.path().join("sh");
    ok(&[
        "data",
        "shuffle-labels",
        "--input",
        s(&input),
        "--seed",
        "2",
        "--out",
        s(&sh),
    ]);
    let a = jsonl(&input);
    let b = jsonl(sh.join("corpus.jsonl"));
    assert_eq!(a.len(), b.len());
    for (x, y) in a.iter().zip(&b) {
        let sorted = |v: &Value| {
            let mut l: Vec<String> = v["labels"]
                .as_array()
                .unwrap()
                .iter()
                .map(|s| s.to_string())
                .collect();
            l.sort();
            l
        };
        assert_eq!(sorted(x), sorted(y));
    }

    let stats: Value = serde_json::from_str(&ok(&["data", "stats", "--input", s(&input)])).unwrap();
    assert!(stats.is_object());

    let o = run(&[
        "data",
        "shuffle-labels",
        "--input",
        s(&input),
        "--seed",
        "2",
        "--out",
        s(&sh),
    ]);
    assert_ne!(
        o.status.code(),
        Some(0),
        "non-empty output directory must be refused"
    );
}

#[test]
fn binary_relevance_baseline() {
    let tmp = TempDir::new().unwrap();
    let split = corpus(tmp.path(), 200);
    let br = tmp.path().join("br");
    ok(&[
        "baseline",
        "br-train",
        "--data",
        s(&split.join("train.jsonl")),
        "--labels-from",
        s(&split.join("val.jsonl")),
        "--out",
        s(&br),
    ]);
    let eval = tmp.path().join("br_eval");
    ok(&[
        "baseline",
        "br-eval",
        "--checkpoint",
        s(&br.join("checkpoint")),
        "--data",
        s(&split.join("test.jsonl")),
        "--out",
        s(&eval),
    ]);
    let report = read_json(eval.join("report.json"));
    let f1: f64 = report["micro_f1"].as_str().unwrap().parse().unwrap();
    assert!((0.0..=1.0).contains(&f1));

    // evaluate dispatches on the checkpoint kind as well
    let eval2 = tmp.path().join("br_eval2");
    ok(&[
        "evaluate",
        "--checkpoint",
        s(&br.join("checkpoint")),
        "--data",
        s(&split.join("test.jsonl")),
        "--out",
        s(&eval2),
    ]);
    assert_eq!(
        read_json(eval2.join("report.json"))["micro_f1"],
        report["micro_f1"]
    );
}
