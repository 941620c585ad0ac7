//! End-to-end pipeline test through the `dcmatch` binary: generate ->
//! label -> train -> evaluate -> predict -> analyze, plus exit-code and
//! idempotence checks.

use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::tempdir;

fn dcmatch(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dcmatch"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn assert_success(out: &Output, context: &str) {
    assert!(
        out.status.success(),
        "{context} failed\nstdout: {}\nstderr: {}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn path_str(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn full_pipeline_through_the_binary() {
    let dir = tempdir().unwrap();
    let data_dir = dir.path().join("data");
    let gen_config = dir.path().join("generate.json");
    fs::write(
        &gen_config,
        r#"{"generate": {"train_size": 200, "dev_size": 40, "test_size": 40}}"#,
    )
    .unwrap();

    // generate
    let out = dcmatch(&[
        "generate",
        "--config",
        path_str(&gen_config),
        "--out",
        path_str(&data_dir),
        "--seed",
        "7",
    ]);
    assert_success(&out, "generate");
    for name in ["train.jsonl", "dev.jsonl", "test.jsonl", "gazetteer.txt", "pos_lexicon.tsv"] {
        assert!(data_dir.join(name).exists(), "missing {name}");
    }

    // label: deterministic reruns and idempotent relabeling
    let label1 = dir.path().join("label1");
    let out = dcmatch(&[
        "label",
        "--data",
        path_str(&data_dir.join("test.jsonl")),
        "--gazetteer",
        path_str(&data_dir.join("gazetteer.txt")),
        "--pos-lexicon",
        path_str(&data_dir.join("pos_lexicon.tsv")),
        "--out",
        path_str(&label1),
    ]);
    assert_success(&out, "label");
    assert!(String::from_utf8_lossy(&out.stdout).contains("avg_keywords_per_pair"));
    let first = fs::read(label1.join("labeled.jsonl")).unwrap();

    let label2 = dir.path().join("label2");
    let out = dcmatch(&[
        "label",
        "--data",
        path_str(&label1.join("labeled.jsonl")),
        "--gazetteer",
        path_str(&data_dir.join("gazetteer.txt")),
        "--pos-lexicon",
        path_str(&data_dir.join("pos_lexicon.tsv")),
        "--out",
        path_str(&label2),
    ]);
    assert_success(&out, "relabel");
    let second = fs::read(label2.join("labeled.jsonl")).unwrap();
    assert_eq!(first, second, "relabeling must overwrite spans, not append");

    // stats on the labeled file
    let out = dcmatch(&["stats", "--data", path_str(&label1.join("labeled.jsonl"))]);
    assert_success(&out, "stats");
    assert!(String::from_utf8_lossy(&out.stdout).contains("bleu_match"));

    // train (tiny settings via config file)
    let train_config = dir.path().join("train.json");
    fs::write(
        &train_config,
        r#"{
            "train": {"epochs": 2, "batch_size": 16, "eval_interval": 8, "learning_rate": 1e-3},
            "encoder": {"hidden_size": 8, "layers": 1, "heads": 2, "ff_size": 16, "max_len": 24}
        }"#,
    )
    .unwrap();
    let model_dir = dir.path().join("model");
    let out = dcmatch(&[
        "train",
        "--config",
        path_str(&train_config),
        "--data",
        path_str(&data_dir),
        "--out",
        path_str(&model_dir),
        "--mode",
        "dc_match",
        "--seed",
        "7",
    ]);
    assert_success(&out, "train");
    for name in ["checkpoint.bin", "vocab.json", "train_log.jsonl", "train_summary.json"] {
        assert!(model_dir.join(name).exists(), "missing {name}");
    }
    let log = fs::read_to_string(model_dir.join("train_log.jsonl")).unwrap();
    assert!(log.lines().count() >= 2);
    assert!(log.contains("\"l_ds\""), "dc_match log carries the auxiliary losses");

    // evaluate
    let eval_dir = dir.path().join("eval");
    let out = dcmatch(&[
        "evaluate",
        "--checkpoint",
        path_str(&model_dir.join("checkpoint.bin")),
        "--vocab",
        path_str(&model_dir.join("vocab.json")),
        "--data",
        path_str(&data_dir.join("test.jsonl")),
        "--out",
        path_str(&eval_dir),
    ]);
    assert_success(&out, "evaluate");
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(eval_dir.join("eval_report.json")).unwrap())
            .unwrap();
    assert!(report["accuracy"].is_f64() || report["accuracy"].is_number());
    assert_eq!(report["n_examples"], 40);

    // predict echoes per-pair class and distribution
    let predict_dir = dir.path().join("predict");
    let out = dcmatch(&[
        "predict",
        "--checkpoint",
        path_str(&model_dir.join("checkpoint.bin")),
        "--vocab",
        path_str(&model_dir.join("vocab.json")),
        "--data",
        path_str(&data_dir.join("test.jsonl")),
        "--out",
        path_str(&predict_dir),
    ]);
    assert_success(&out, "predict");
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert_eq!(stdout.lines().count(), 40);
    let predictions = fs::read_to_string(predict_dir.join("predictions.jsonl")).unwrap();
    assert_eq!(predictions.lines().count(), 40);
    let row: serde_json::Value = serde_json::from_str(predictions.lines().next().unwrap()).unwrap();
    assert!(row["predicted"].is_number());
    assert!(row["probs"].is_array());

    // analyze writes the per-example sub-problem breakdown
    let analyze_dir = dir.path().join("analyze");
    let out = dcmatch(&[
        "analyze",
        "--checkpoint",
        path_str(&model_dir.join("checkpoint.bin")),
        "--vocab",
        path_str(&model_dir.join("vocab.json")),
        "--data",
        path_str(&data_dir.join("test.jsonl")),
        "--out",
        path_str(&analyze_dir),
    ]);
    assert_success(&out, "analyze");
    let breakdown = fs::read_to_string(analyze_dir.join("analysis_breakdown.jsonl")).unwrap();
    assert_eq!(breakdown.lines().count(), 40);
    let row: serde_json::Value = serde_json::from_str(breakdown.lines().next().unwrap()).unwrap();
    for column in ["pred_global", "pred_combined", "pred_keyword", "pred_intent"] {
        assert!(row[column].is_number(), "missing {column}");
    }
    let consistency: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(analyze_dir.join("consistency_report.json")).unwrap())
            .unwrap();
    let scores = consistency["scores"].as_array().unwrap();
    assert_eq!(scores.len(), 40);
    assert!(consistency["mean"].as_f64().unwrap() >= 0.0);

    // Offline recomputation oracle: rebuild Q and the symmetric KL from the
    // logged P, P_k, P_i of every row and compare with the logged values.
    for (row_line, logged_score) in breakdown.lines().zip(scores) {
        let row: serde_json::Value = serde_json::from_str(row_line).unwrap();
        let dist = |key: &str| {
            dcmatch_core::losses::MatchDistribution::new(
                row[key].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect(),
            )
            .unwrap()
        };
        let p = dist("p_global");
        let q = dcmatch_core::losses::combine_q(&dist("p_keyword"), &dist("p_intent")).unwrap();
        for (a, b) in q.probs().iter().zip(row["q_combined"].as_array().unwrap()) {
            assert!((a - b.as_f64().unwrap()).abs() < 1e-9);
        }
        let recomputed = dcmatch_core::losses::loss_dc(&p, &q).unwrap();
        assert!((recomputed - row["sym_kl"].as_f64().unwrap()).abs() < 1e-9);
        assert!((recomputed - logged_score.as_f64().unwrap()).abs() < 1e-9);
    }

    // no temp files left anywhere
    for entry in walk(dir.path()) {
        assert!(!entry.ends_with(".tmp"), "leftover temp file {entry}");
    }
}

fn walk(dir: &Path) -> Vec<String> {
    let mut out = Vec::new();
    if let Ok(entries) = fs::read_dir(dir) {
        for entry in entries.flatten() {
            let path = entry.path();
            if path.is_dir() {
                out.extend(walk(&path));
            } else {
                out.push(path.to_string_lossy().into_owned());
            }
        }
    }
    out
}

#[test]
fn generate_reruns_are_byte_identical() {
    let dir = tempdir().unwrap();
    let config = dir.path().join("generate.json");
    fs::write(&config, r#"{"generate": {"train_size": 50, "dev_size": 10, "test_size": 10}}"#)
        .unwrap();
    for name in ["a", "b"] {
        assert_success(
            &dcmatch(&[
                "generate",
                "--config",
                path_str(&config),
                "--out",
                path_str(&dir.path().join(name)),
                "--seed",
                "13",
            ]),
            "generate",
        );
    }
    for file in ["train.jsonl", "dev.jsonl", "test.jsonl", "gazetteer.txt", "pos_lexicon.tsv"] {
        assert_eq!(
            fs::read(dir.path().join("a").join(file)).unwrap(),
            fs::read(dir.path().join("b").join(file)).unwrap(),
            "{file} differs between identical runs"
        );
    }
}

#[test]
fn empty_gazetteer_labels_everything_outside_with_a_warning() {
    let dir = tempdir().unwrap();
    let data = dir.path().join("data.jsonl");
    fs::write(&data, "{\"text_a\":\"solar reactor\",\"text_b\":\"the cell\",\"label\":0}\n").unwrap();
    let gazetteer = dir.path().join("empty.txt");
    fs::write(&gazetteer, "").unwrap();
    let lexicon = dir.path().join("lex.tsv");
    fs::write(&lexicon, "reactor\tNOUN\n").unwrap();
    let out_dir = dir.path().join("out");
    let out = dcmatch(&[
        "label",
        "--data",
        path_str(&data),
        "--gazetteer",
        path_str(&gazetteer),
        "--pos-lexicon",
        path_str(&lexicon),
        "--out",
        path_str(&out_dir),
    ]);
    assert_success(&out, "label with empty gazetteer");
    assert!(String::from_utf8_lossy(&out.stderr).contains("warning"));
    let labeled = fs::read_to_string(out_dir.join("labeled.jsonl")).unwrap();
    let row: serde_json::Value = serde_json::from_str(labeled.lines().next().unwrap()).unwrap();
    assert_eq!(row["keywords_a"].as_array().unwrap().len(), 0);
    assert_eq!(row["keywords_b"].as_array().unwrap().len(), 0);
}

#[test]
fn usage_errors_exit_1_and_list_every_problem() {
    let out = dcmatch(&["evaluate"]);
    assert_eq!(out.status.code(), Some(1));
    let stderr = String::from_utf8_lossy(&out.stderr);
    for flag in ["--checkpoint", "--vocab", "--data", "--out"] {
        assert!(stderr.contains(flag), "missing {flag} in: {stderr}");
    }

    let out = dcmatch(&["no-such-command"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn unknown_config_keys_exit_1() {
    let dir = tempdir().unwrap();
    let config = dir.path().join("bad.json");
    fs::write(&config, r#"{"sead": 3}"#).unwrap();
    let out = dcmatch(&[
        "generate",
        "--config",
        path_str(&config),
        "--out",
        path_str(&dir.path().join("x")),
    ]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("sead"));
}

#[test]
fn missing_input_file_exits_2() {
    let dir = tempdir().unwrap();
    let out = dcmatch(&[
        "stats",
        "--data",
        path_str(&dir.path().join("nope.jsonl")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn vocab_checkpoint_mismatch_exits_2() {
    let dir = tempdir().unwrap();
    let data_dir = dir.path().join("data");
    let gen_config = dir.path().join("generate.json");
    fs::write(
        &gen_config,
        r#"{"generate": {"train_size": 60, "dev_size": 20, "test_size": 20}}"#,
    )
    .unwrap();
    assert_success(
        &dcmatch(&[
            "generate",
            "--config",
            path_str(&gen_config),
            "--out",
            path_str(&data_dir),
        ]),
        "generate",
    );
    let train_config = dir.path().join("train.json");
    fs::write(
        &train_config,
        r#"{
            "train": {"epochs": 1, "batch_size": 16, "eval_interval": 4},
            "encoder": {"hidden_size": 8, "layers": 1, "heads": 2, "ff_size": 16, "max_len": 24}
        }"#,
    )
    .unwrap();
    let model_dir = dir.path().join("model");
    assert_success(
        &dcmatch(&[
            "train",
            "--config",
            path_str(&train_config),
            "--data",
            path_str(&data_dir),
            "--out",
            path_str(&model_dir),
        ]),
        "train",
    );

    // Hand the checkpoint a vocabulary built from different data.
    let wrong_vocab = dir.path().join("wrong_vocab.json");
    fs::write(
        &wrong_vocab,
        r#"{"[PAD]": 0, "[UNK]": 1, "[CLS]": 2, "[SEP]": 3, "[MASK]": 4, "zzz": 5}"#,
    )
    .unwrap();
    let out = dcmatch(&[
        "evaluate",
        "--checkpoint",
        path_str(&model_dir.join("checkpoint.bin")),
        "--vocab",
        path_str(&wrong_vocab),
        "--data",
        path_str(&data_dir.join("test.jsonl")),
        "--out",
        path_str(&dir.path().join("eval")),
    ]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("hash mismatch"));
}
