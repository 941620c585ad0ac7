//! The seven pipeline commands. Every command is deterministic given its
//! seed and inputs, and writes outputs atomically under the `--out`
//! directory.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use dcmatch_core::corpus::{tokenize, Vocab};
use dcmatch_core::labeler::{corpus_stats, keyword_spans};
use dcmatch_core::scheme::LabelScheme;
use dcmatch_core::synthetic;
use dcmatch_core::trainer::{self, OpCounts, TrainMode};
use serde::Serialize;

use crate::checkpoint::{load_checkpoint, save_checkpoint, verify_vocab, LoadedCheckpoint};
use crate::config::{Requirements, Settings};
use crate::error::CliError;
use crate::files;

fn ensure_out_dir(out: &Path) -> Result<(), CliError> {
    fs::create_dir_all(out).map_err(CliError::io(out))
}

/// Prints to stdout but tolerates a closed pipe (e.g. `dcmatch predict |
/// head`); the written artifacts are the source of truth.
fn echo(text: &str) {
    let _ = writeln!(std::io::stdout(), "{text}");
}

fn scheme_for(settings: &Settings) -> Result<LabelScheme, CliError> {
    LabelScheme::with_classes(settings.num_classes).map_err(CliError::from)
}

/// `generate`: synthesize disjoint train/dev/test splits with gold keyword
/// spans, plus the gazetteer and POS lexicon they were built from.
pub fn cmd_generate(settings: &Settings) -> Result<(), CliError> {
    let mut req = Requirements::new(settings);
    let out = req.out();
    req.finish()?;
    ensure_out_dir(&out)?;

    let config = settings.synthetic_config();
    let data = synthetic::generate(&config)?;
    files::save_dataset(&out.join("train.jsonl"), &data.train)?;
    files::save_dataset(&out.join("dev.jsonl"), &data.dev)?;
    files::save_dataset(&out.join("test.jsonl"), &data.test)?;
    files::save_gazetteer(&out.join("gazetteer.txt"), &data.gazetteer_terms)?;
    files::save_pos_lexicon(&out.join("pos_lexicon.tsv"), &data.pos_entries)?;

    let mut label_counts = vec![0usize; config.num_classes];
    for pair in data.train.iter().chain(&data.dev).chain(&data.test) {
        label_counts[pair.label] += 1;
    }
    echo(&format!(
        "generated {} train / {} dev / {} test pairs (K={}), label counts {:?}",
        data.train.len(),
        data.dev.len(),
        data.test.len(),
        config.num_classes,
        label_counts
    ));
    echo(&format!("wrote datasets, gazetteer.txt, pos_lexicon.tsv to {}", out.display()));
    Ok(())
}

/// `label`: distant-supervision keyword labeling. Existing spans are
/// overwritten, never appended to.
pub fn cmd_label(settings: &Settings) -> Result<(), CliError> {
    let mut req = Requirements::new(settings);
    let data_path = req.data();
    let gazetteer_path = req.gazetteer();
    let lexicon_path = req.pos_lexicon();
    let out = req.out();
    req.finish()?;
    ensure_out_dir(&out)?;

    let scheme = scheme_for(settings)?;
    let mut pairs = files::load_dataset(&data_path, &scheme)?;
    let gazetteer = files::load_gazetteer(&gazetteer_path)?;
    let lexicon = files::load_pos_lexicon(&lexicon_path)?;
    if gazetteer.is_empty() {
        eprintln!("warning: gazetteer {} is empty; labeling everything as intent", gazetteer_path.display());
    }

    for pair in &mut pairs {
        pair.keyword_spans_a = Some(keyword_spans(&tokenize(&pair.text_a), &gazetteer, &lexicon));
        pair.keyword_spans_b = Some(keyword_spans(&tokenize(&pair.text_b), &gazetteer, &lexicon));
    }
    let labeled_path = out.join("labeled.jsonl");
    files::save_dataset(&labeled_path, &pairs)?;

    let stats = corpus_stats(&pairs, &scheme)?;
    files::write_json(&out.join("keyword_stats.json"), &stats)?;
    echo(&serde_json::to_string_pretty(&stats).expect("stats serialize"));
    echo(&format!("wrote {}", labeled_path.display()));
    Ok(())
}

/// `stats`: keyword statistics of an already-labeled dataset.
pub fn cmd_stats(settings: &Settings) -> Result<(), CliError> {
    let mut req = Requirements::new(settings);
    let data_path = req.data();
    req.finish()?;

    let scheme = scheme_for(settings)?;
    let pairs = files::load_dataset(&data_path, &scheme)?;
    let stats = corpus_stats(&pairs, &scheme)?;
    echo(&serde_json::to_string_pretty(&stats).expect("stats serialize"));
    if let Some(out) = &settings.out {
        ensure_out_dir(out)?;
        files::write_json(&out.join("keyword_stats.json"), &stats)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct TrainSummary<'a> {
    mode: TrainMode,
    seed: u64,
    top_checkpoints: &'a [trainer::CheckpointScore],
    test_mean_accuracy: f64,
    test_mean_macro_f1: f64,
}

/// `train`: expects `--data` to be a directory holding `train.jsonl`,
/// `dev.jsonl`, and `test.jsonl` (as written by `generate` or `label`).
/// Builds the vocabulary from the training split, trains, and writes the
/// best checkpoint, the vocabulary, the training log, and a summary.
pub fn cmd_train(settings: &Settings) -> Result<(), CliError> {
    let mut req = Requirements::new(settings);
    let data_dir = req.data();
    let out = req.out();
    req.finish()?;
    ensure_out_dir(&out)?;

    let scheme = scheme_for(settings)?;
    let train_pairs = files::load_dataset(&data_dir.join("train.jsonl"), &scheme)?;
    let dev_pairs = files::load_dataset(&data_dir.join("dev.jsonl"), &scheme)?;
    let test_pairs = files::load_dataset(&data_dir.join("test.jsonl"), &scheme)?;

    let vocab = Vocab::build(&train_pairs, settings.min_freq)?;
    files::save_vocab(&out.join("vocab.json"), &vocab)?;

    let enc_config = settings.encoder_config(vocab.size());
    let train_config = settings.train_config();
    let outcome = trainer::train(
        &enc_config,
        &scheme,
        &train_config,
        &vocab,
        &train_pairs,
        &dev_pairs,
        &test_pairs,
    )?;

    save_checkpoint(&out.join("checkpoint.bin"), &outcome.best_params, &scheme, &vocab)?;
    let mut log_body = String::new();
    for entry in &outcome.log {
        log_body.push_str(&serde_json::to_string(entry).expect("log entry serialize"));
        log_body.push('\n');
    }
    files::atomic_write(&out.join("train_log.jsonl"), log_body.as_bytes())?;
    files::write_json(
        &out.join("train_summary.json"),
        &TrainSummary {
            mode: train_config.mode,
            seed: train_config.seed,
            top_checkpoints: &outcome.top_checkpoints,
            test_mean_accuracy: outcome.test_mean_accuracy,
            test_mean_macro_f1: outcome.test_mean_macro_f1,
        },
    )?;
    echo(&format!(
        "trained ({:?} mode, seed {}): top-3 mean test accuracy {:.4}, macro-F1 {:.4}",
        train_config.mode, train_config.seed, outcome.test_mean_accuracy, outcome.test_mean_macro_f1
    ));
    echo(&format!("wrote checkpoint.bin, vocab.json, train_log.jsonl, train_summary.json to {}", out.display()));
    Ok(())
}

fn load_model(settings: &Settings) -> Result<(LoadedCheckpoint, Vocab, PathBuf, PathBuf), CliError> {
    let mut req = Requirements::new(settings);
    let checkpoint_path = req.checkpoint();
    let vocab_path = req.vocab();
    let data_path = req.data();
    let out = req.out();
    req.finish()?;
    let loaded = load_checkpoint(&checkpoint_path)?;
    let vocab = files::load_vocab(&vocab_path)?;
    verify_vocab(&loaded, &vocab)?;
    Ok((loaded, vocab, data_path, out))
}

/// `evaluate`: accuracy and macro-F1 of a checkpoint on a labeled dataset.
pub fn cmd_evaluate(settings: &Settings) -> Result<(), CliError> {
    let (loaded, vocab, data_path, out) = load_model(settings)?;
    ensure_out_dir(&out)?;
    let pairs = files::load_dataset(&data_path, &loaded.scheme)?;
    let report = trainer::evaluate(&loaded.params, &vocab, &pairs)?;
    files::write_json(&out.join("eval_report.json"), &report)?;
    echo(&serde_json::to_string_pretty(&report).expect("report serialize"));
    Ok(())
}

#[derive(Serialize)]
struct PredictionRow<'a> {
    text_a: &'a str,
    text_b: &'a str,
    predicted: usize,
    class_name: &'a str,
    probs: Vec<f64>,
}

/// `predict`: per-pair class and distribution, echoed to stdout and written
/// to `predictions.jsonl`. Keyword annotations in the input are ignored.
pub fn cmd_predict(settings: &Settings) -> Result<(), CliError> {
    let (loaded, vocab, data_path, out) = load_model(settings)?;
    ensure_out_dir(&out)?;
    let pairs = files::load_dataset(&data_path, &loaded.scheme)?;
    let mut lines = Vec::with_capacity(pairs.len());
    for pair in &pairs {
        let (class, dist) = trainer::predict(&loaded.params, &vocab, pair)?;
        let row = PredictionRow {
            text_a: &pair.text_a,
            text_b: &pair.text_b,
            predicted: class,
            class_name: loaded.scheme.class_name(class).unwrap_or("?"),
            probs: dist.probs().to_vec(),
        };
        lines.push(serde_json::to_string(&row).expect("prediction serialize"));
    }
    let mut body = lines.join("\n");
    body.push('\n');
    files::atomic_write(&out.join("predictions.jsonl"), body.as_bytes())?;
    for line in &lines {
        echo(line);
    }
    Ok(())
}

#[derive(Serialize)]
struct AnalysisRow<'a> {
    text_a: &'a str,
    text_b: &'a str,
    label: usize,
    /// Predictions from the global distribution P, the combined
    /// distribution Q, and the two sub-problems.
    pred_global: usize,
    pred_combined: usize,
    pred_keyword: usize,
    pred_intent: usize,
    sym_kl: f64,
    p_global: Vec<f64>,
    q_combined: Vec<f64>,
    p_keyword: Vec<f64>,
    p_intent: Vec<f64>,
}

#[derive(Serialize)]
struct ConsistencySummary {
    mean: f64,
    median: f64,
    /// Per-example symmetric KL in input order (matches the breakdown
    /// rows), plus a sorted copy for plotting.
    scores: Vec<f64>,
    scores_sorted: Vec<f64>,
}

/// `analyze`: per-example sub-problem breakdown and the P-vs-Q consistency
/// report. Requires keyword annotations on the dataset; they drive only the
/// masked views, never the global prediction.
pub fn cmd_analyze(settings: &Settings) -> Result<(), CliError> {
    let (loaded, vocab, data_path, out) = load_model(settings)?;
    ensure_out_dir(&out)?;
    let pairs = files::load_dataset(&data_path, &loaded.scheme)?;

    let mut body = String::new();
    let mut counts = OpCounts::default();
    let mut scores = Vec::with_capacity(pairs.len());
    for pair in &pairs {
        let analysis = trainer::pair_analysis(&loaded.params, &vocab, pair, &mut counts)?;
        scores.push(analysis.sym_kl);
        let row = AnalysisRow {
            text_a: &pair.text_a,
            text_b: &pair.text_b,
            label: pair.label,
            pred_global: analysis.p_global.argmax(),
            pred_combined: analysis.q_combined.argmax(),
            pred_keyword: analysis.p_keyword.argmax(),
            pred_intent: analysis.p_intent.argmax(),
            sym_kl: analysis.sym_kl,
            p_global: analysis.p_global.probs().to_vec(),
            q_combined: analysis.q_combined.probs().to_vec(),
            p_keyword: analysis.p_keyword.probs().to_vec(),
            p_intent: analysis.p_intent.probs().to_vec(),
        };
        body.push_str(&serde_json::to_string(&row).expect("analysis serialize"));
        body.push('\n');
    }
    files::atomic_write(&out.join("analysis_breakdown.jsonl"), body.as_bytes())?;

    let mean = scores.iter().sum::<f64>() / scores.len().max(1) as f64;
    let mut scores_sorted = scores.clone();
    scores_sorted.sort_by(|a, b| a.partial_cmp(b).expect("finite scores"));
    let median = if scores_sorted.is_empty() {
        0.0
    } else if scores_sorted.len() % 2 == 1 {
        scores_sorted[scores_sorted.len() / 2]
    } else {
        0.5 * (scores_sorted[scores_sorted.len() / 2 - 1] + scores_sorted[scores_sorted.len() / 2])
    };
    let summary = ConsistencySummary { mean, median, scores, scores_sorted };
    files::write_json(&out.join("consistency_report.json"), &summary)?;
    echo(&format!(
        "analyzed {} pairs: mean symmetric KL(P, Q) {:.6}, median {:.6}",
        pairs.len(),
        summary.mean,
        summary.median
    ));
    echo(&format!("wrote analysis_breakdown.jsonl, consistency_report.json to {}", out.display()));
    Ok(())
}
