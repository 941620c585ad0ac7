//! The optimization loop and everything around it: the two training modes
//! (plain classification vs. the divide-and-conquer regime), inference with
//! strict parity to the plain path, evaluation, top-3 checkpoint selection,
//! and the per-example consistency analysis between the global distribution
//! P and the combined sub-problem distribution Q.

use alloc::string::String;
use alloc::vec::Vec;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{encode_pair, EncodedPair, SentencePair, Vocab};
use crate::encoder::{
    backward, class_logits, classify_backward, forward, group_pool, group_pool_backward,
    EncoderConfig, EncoderOutput, ModelParams,
};
use crate::error::{Error, Result};
use crate::labeler::{mask_subproblem, KeepGroup};
use crate::losses::{
    combine_q, combine_q_backward, loss_dc_grad, loss_ds_grad, loss_sm_grad, softmax_backward,
    LossBreakdown, MatchDistribution,
};
use crate::metrics::{ConfusionMatrix, EvalReport};
use crate::optim::AdamW;
use crate::scheme::LabelScheme;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    Baseline,
    DcMatch,
}

/// Optimization settings. The defaults target the from-scratch toy encoder:
/// the conventional fine-tuning rate of 2e-5 assumes pretrained weights and
/// stalls here, so the default is 3e-4 with the usual Adam betas and a
/// weight decay of 0.01.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub max_steps: Option<usize>,
    /// Evaluate on the development split every this many optimizer steps.
    pub eval_interval: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            mode: TrainMode::Baseline,
            learning_rate: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            weight_decay: 0.01,
            batch_size: 64,
            epochs: 3,
            max_steps: None,
            eval_interval: 50,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::InvalidConfig(String::from(msg)));
        if self.learning_rate <= 0.0 || !self.learning_rate.is_finite() {
            return fail("learning_rate must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return fail("betas must lie in [0, 1)");
        }
        if self.weight_decay < 0.0 {
            return fail("weight_decay must be non-negative");
        }
        if self.batch_size == 0 {
            return fail("batch_size must be >= 1");
        }
        if self.epochs == 0 && self.max_steps.is_none() {
            return fail("need epochs >= 1 or max_steps");
        }
        if self.eval_interval == 0 {
            return fail("eval_interval must be >= 1");
        }
        Ok(())
    }
}

/// One development-set evaluation point in the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogEntry {
    pub step: usize,
    pub l_sm: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l_ds: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub l_dc: Option<f64>,
    pub dev_accuracy: f64,
    pub dev_macro_f1: f64,
}

/// Keeps the checkpoints with the highest metric seen so far. On ties the
/// earlier checkpoint is kept.
pub struct CheckpointSelector<T> {
    capacity: usize,
    entries: Vec<SelectedCheckpoint<T>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectedCheckpoint<T> {
    pub step: usize,
    pub metric: f64,
    pub payload: T,
}

impl<T> CheckpointSelector<T> {
    pub fn new(capacity: usize) -> Self {
        Self { capacity, entries: Vec::new() }
    }

    pub fn push(&mut self, step: usize, metric: f64, payload: T) {
        if self.entries.len() < self.capacity {
            self.entries.push(SelectedCheckpoint { step, metric, payload });
            return;
        }
        let mut weakest = 0;
        for (idx, entry) in self.entries.iter().enumerate() {
            if entry.metric < self.entries[weakest].metric {
                weakest = idx;
            }
        }
        if metric > self.entries[weakest].metric {
            self.entries[weakest] = SelectedCheckpoint { step, metric, payload };
        }
    }

    /// Retained checkpoints ordered by metric (descending), then step.
    pub fn selected(&self) -> Vec<&SelectedCheckpoint<T>> {
        let mut refs: Vec<&SelectedCheckpoint<T>> = self.entries.iter().collect();
        refs.sort_by(|a, b| {
            b.metric.partial_cmp(&a.metric).unwrap().then(a.step.cmp(&b.step))
        });
        refs
    }

    pub fn best(&self) -> Option<&SelectedCheckpoint<T>> {
        self.selected().into_iter().next()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Summary of one retained checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointScore {
    pub step: usize,
    pub dev_accuracy: f64,
    pub dev_macro_f1: f64,
    pub test_accuracy: f64,
    pub test_macro_f1: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    /// Parameters of the checkpoint with the highest dev accuracy.
    pub best_params: ModelParams,
    pub log: Vec<LogEntry>,
    /// The up-to-three retained checkpoints, best first.
    pub top_checkpoints: Vec<CheckpointScore>,
    /// Mean test metrics over the retained checkpoints.
    pub test_mean_accuracy: f64,
    pub test_mean_macro_f1: f64,
}

struct TrainExample {
    full: EncodedPair,
    keyword_view: Option<EncodedPair>,
    intent_view: Option<EncodedPair>,
}

fn stripped(pair: &SentencePair) -> SentencePair {
    let mut copy = pair.clone();
    copy.keyword_spans_a = None;
    copy.keyword_spans_b = None;
    copy
}

/// Trains a fresh model. In `DcMatch` mode every step runs the full pair
/// and the two masked views through the same parameters, combines the
/// sub-problem distributions into Q, and optimizes the summed objective;
/// keyword annotations are required on the training split only. The
/// development split is scored every `eval_interval` steps, the three best
/// checkpoints are retained, and their mean test metrics are reported.
pub fn train(
    enc_config: &EncoderConfig,
    scheme: &LabelScheme,
    config: &TrainConfig,
    vocab: &Vocab,
    train_pairs: &[SentencePair],
    dev_pairs: &[SentencePair],
    test_pairs: &[SentencePair],
) -> Result<TrainOutcome> {
    enc_config.validate()?;
    config.validate()?;
    if train_pairs.is_empty() || dev_pairs.is_empty() || test_pairs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if config.mode == TrainMode::DcMatch && !train_pairs.iter().any(SentencePair::is_annotated) {
        return Err(Error::MissingKeywordTags(String::from(
            "divide-and-conquer training needs keyword annotations on the training split",
        )));
    }
    for pair in train_pairs.iter().chain(dev_pairs).chain(test_pairs) {
        pair.validate(scheme)?;
    }

    let max_len = enc_config.max_len;
    let examples: Vec<TrainExample> = train_pairs
        .iter()
        .map(|pair| {
            let full = encode_pair(pair, vocab, max_len)?;
            let (keyword_view, intent_view) = if config.mode == TrainMode::DcMatch {
                (
                    Some(mask_subproblem(&full, KeepGroup::Keyword)),
                    Some(mask_subproblem(&full, KeepGroup::Intent)),
                )
            } else {
                (None, None)
            };
            Ok(TrainExample { full, keyword_view, intent_view })
        })
        .collect::<Result<_>>()?;
    let dev_encoded: Vec<EncodedPair> = dev_pairs
        .iter()
        .map(|p| encode_pair(&stripped(p), vocab, max_len))
        .collect::<Result<_>>()?;
    let test_encoded: Vec<EncodedPair> = test_pairs
        .iter()
        .map(|p| encode_pair(&stripped(p), vocab, max_len))
        .collect::<Result<_>>()?;

    let mut params = ModelParams::init(enc_config, scheme)?;
    let mut optimizer = AdamW::new(
        &params,
        config.learning_rate,
        config.beta1,
        config.beta2,
        config.weight_decay,
    );
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut selector: CheckpointSelector<(ModelParams, EvalReport)> = CheckpointSelector::new(3);
    let mut log = Vec::new();
    let mut window: Vec<LossBreakdown> = Vec::new();
    let mut indices: Vec<usize> = (0..examples.len()).collect();
    let mut step = 0usize;
    let mut last_eval_step = 0usize;

    let epochs = if config.epochs == 0 { usize::MAX } else { config.epochs };
    'outer: for _epoch in 0..epochs {
        indices.shuffle(&mut rng);
        for batch in indices.chunks(config.batch_size) {
            step += 1;
            let mut grads = params.zeros_like();
            let mut batch_losses = Vec::with_capacity(batch.len());
            for &idx in batch {
                let example = &examples[idx];
                let breakdown = match config.mode {
                    TrainMode::Baseline => {
                        baseline_example_step(&params, &example.full, &mut rng, &mut grads)?
                    }
                    TrainMode::DcMatch => dc_example_step(&params, example, &mut rng, &mut grads)?,
                };
                batch_losses.push(breakdown);
            }
            let inv = 1.0 / batch.len() as f64;
            for tensor in grads.tensors_mut() {
                for g in tensor.iter_mut() {
                    *g *= inv;
                }
            }
            optimizer.step(&mut params, &grads)?;
            window.push(LossBreakdown::batch_mean(&batch_losses)?);

            if step % config.eval_interval == 0 {
                eval_checkpoint(&params, &dev_encoded, step, &mut window, &mut log, &mut selector)?;
                last_eval_step = step;
            }
            if let Some(cap) = config.max_steps {
                if step >= cap {
                    break 'outer;
                }
            }
        }
    }
    if last_eval_step != step {
        eval_checkpoint(&params, &dev_encoded, step, &mut window, &mut log, &mut selector)?;
    }

    let mut top_checkpoints = Vec::new();
    let mut acc_sum = 0.0;
    let mut f1_sum = 0.0;
    for entry in selector.selected() {
        let (ckpt_params, dev_report) = &entry.payload;
        let test_report = evaluate_encoded(ckpt_params, &test_encoded)?;
        acc_sum += test_report.accuracy;
        f1_sum += test_report.macro_f1;
        top_checkpoints.push(CheckpointScore {
            step: entry.step,
            dev_accuracy: dev_report.accuracy,
            dev_macro_f1: dev_report.macro_f1,
            test_accuracy: test_report.accuracy,
            test_macro_f1: test_report.macro_f1,
        });
    }
    let n_top = top_checkpoints.len() as f64;
    let best = selector.best().expect("at least one evaluation ran");
    Ok(TrainOutcome {
        best_params: best.payload.0.clone(),
        log,
        top_checkpoints,
        test_mean_accuracy: acc_sum / n_top,
        test_mean_macro_f1: f1_sum / n_top,
    })
}

fn eval_checkpoint(
    params: &ModelParams,
    dev_encoded: &[EncodedPair],
    step: usize,
    window: &mut Vec<LossBreakdown>,
    log: &mut Vec<LogEntry>,
    selector: &mut CheckpointSelector<(ModelParams, EvalReport)>,
) -> Result<()> {
    let report = evaluate_encoded(params, dev_encoded)?;
    let mean = LossBreakdown::batch_mean(window)?;
    window.clear();
    log.push(LogEntry {
        step,
        l_sm: mean.l_sm,
        l_ds: mean.l_ds,
        l_dc: mean.l_dc,
        dev_accuracy: report.accuracy,
        dev_macro_f1: report.macro_f1,
    });
    selector.push(step, report.accuracy, (params.clone(), report));
    Ok(())
}

fn baseline_example_step(
    params: &ModelParams,
    enc: &EncodedPair,
    rng: &mut ChaCha8Rng,
    grads: &mut ModelParams,
) -> Result<LossBreakdown> {
    let (out, trace) = forward(params, enc, Some(rng))?;
    let p = MatchDistribution::from_logits(&class_logits(
        &out.h_cls,
        &params.w_cls,
        params.num_classes,
    ))?;
    let (l_sm, d_p) = loss_sm_grad(&p, enc.label)?;
    let d_logits = softmax_backward(p.probs(), &d_p);
    let mut d_hcls = alloc::vec![0.0; params.config.hidden_size];
    classify_backward(&out.h_cls, &params.w_cls, &d_logits, &mut d_hcls, &mut grads.w_cls);
    backward(params, &trace, &d_hcls, None, grads);
    Ok(LossBreakdown::new(l_sm, None, None))
}

fn dc_example_step(
    params: &ModelParams,
    example: &TrainExample,
    rng: &mut ChaCha8Rng,
    grads: &mut ModelParams,
) -> Result<LossBreakdown> {
    let enc = &example.full;
    let h = params.config.hidden_size;
    let k = params.num_classes;

    let (out_full, trace_full) = forward(params, enc, Some(rng))?;
    let p = MatchDistribution::from_logits(&class_logits(&out_full.h_cls, &params.w_cls, k))?;
    let (l_sm, d_p_sm) = loss_sm_grad(&p, enc.label)?;

    // Disentanglement term on the pooled groups of the full pair; skipped
    // when either group is empty for this example.
    let pooled = group_pool(&out_full.hidden, &enc.group_tags).ok();
    let mut l_ds = None;
    let mut d_hidden_full = alloc::vec![0.0; out_full.hidden.len() * h];
    if let Some(pooled) = &pooled {
        let (value, d_hk, d_hi, d_wds) = loss_ds_grad(&pooled.h_k, &pooled.h_i, &params.w_ds)?;
        l_ds = Some(value);
        group_pool_backward(pooled, &d_hk, &d_hi, h, &mut d_hidden_full);
        for (g, d) in grads.w_ds.iter_mut().zip(&d_wds) {
            *g += d;
        }
    }

    // Sub-problem passes share the parameters with the full pass.
    let kw_view = example.keyword_view.as_ref().expect("dc example has views");
    let in_view = example.intent_view.as_ref().expect("dc example has views");
    let (out_k, trace_k) = forward(params, kw_view, Some(rng))?;
    let (out_i, trace_i) = forward(params, in_view, Some(rng))?;
    let p_k = MatchDistribution::from_logits(&class_logits(&out_k.h_cls, &params.w_cls, k))?;
    let p_i = MatchDistribution::from_logits(&class_logits(&out_i.h_cls, &params.w_cls, k))?;
    let q = combine_q(&p_k, &p_i)?;
    let (l_dc, d_p_dc, d_q) = loss_dc_grad(&p, &q)?;
    let (d_pk, d_pi) = combine_q_backward(&p_k, &p_i, &d_q);

    // Full-pair branch: classification and consistency gradients meet at P.
    let d_p_total: Vec<f64> = d_p_sm.iter().zip(&d_p_dc).map(|(a, b)| a + b).collect();
    let d_logits = softmax_backward(p.probs(), &d_p_total);
    let mut d_hcls = alloc::vec![0.0; h];
    classify_backward(&out_full.h_cls, &params.w_cls, &d_logits, &mut d_hcls, &mut grads.w_cls);
    backward(params, &trace_full, &d_hcls, Some(&d_hidden_full), grads);

    // Masked branches.
    for (out, trace, dist, d_dist) in
        [(&out_k, &trace_k, &p_k, &d_pk), (&out_i, &trace_i, &p_i, &d_pi)]
    {
        let d_logits = softmax_backward(dist.probs(), d_dist);
        let mut d_hcls = alloc::vec![0.0; h];
        classify_backward(&out.h_cls, &params.w_cls, &d_logits, &mut d_hcls, &mut grads.w_cls);
        backward(params, trace, &d_hcls, None, grads);
    }

    Ok(LossBreakdown::new(l_sm, l_ds, Some(l_dc)))
}

/// Counters for the instrumented inference path.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct OpCounts {
    pub encoder_forwards: usize,
    pub mask_operations: usize,
}

fn counted_encode(
    params: &ModelParams,
    enc: &EncodedPair,
    counts: &mut OpCounts,
) -> Result<EncoderOutput> {
    counts.encoder_forwards += 1;
    crate::encoder::encode(params, enc)
}

fn counted_mask(enc: &EncodedPair, keep: KeepGroup, counts: &mut OpCounts) -> EncodedPair {
    counts.mask_operations += 1;
    mask_subproblem(enc, keep)
}

/// Predicts the match class for a raw pair. Keyword annotations are never
/// read: the pair is encoded without tags, runs through the encoder exactly
/// once, and no masked view is built, so the path is identical for models
/// trained in either mode. Argmax ties break toward the lower class.
pub fn predict(
    params: &ModelParams,
    vocab: &Vocab,
    pair: &SentencePair,
) -> Result<(usize, MatchDistribution)> {
    predict_counted(params, vocab, pair, &mut OpCounts::default())
}

/// [`predict`] with operation counting for parity checks.
pub fn predict_counted(
    params: &ModelParams,
    vocab: &Vocab,
    pair: &SentencePair,
    counts: &mut OpCounts,
) -> Result<(usize, MatchDistribution)> {
    let enc = encode_pair(&stripped(pair), vocab, params.config.max_len)?;
    let out = counted_encode(params, &enc, counts)?;
    let dist = MatchDistribution::from_logits(&class_logits(
        &out.h_cls,
        &params.w_cls,
        params.num_classes,
    ))?;
    Ok((dist.argmax(), dist))
}

fn evaluate_encoded(params: &ModelParams, encoded: &[EncodedPair]) -> Result<EvalReport> {
    if encoded.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut matrix = ConfusionMatrix::new(params.num_classes);
    for enc in encoded {
        let out = crate::encoder::encode(params, enc)?;
        let dist = MatchDistribution::from_logits(&class_logits(
            &out.h_cls,
            &params.w_cls,
            params.num_classes,
        ))?;
        matrix.record(enc.label, dist.argmax())?;
    }
    EvalReport::from_confusion(&matrix)
}

/// Scores a labeled dataset with the single-forward inference path.
pub fn evaluate(params: &ModelParams, vocab: &Vocab, pairs: &[SentencePair]) -> Result<EvalReport> {
    let encoded: Vec<EncodedPair> = pairs
        .iter()
        .map(|p| encode_pair(&stripped(p), vocab, params.config.max_len))
        .collect::<Result<_>>()?;
    evaluate_encoded(params, &encoded)
}

/// Per-example sub-problem view used for analysis output: the global
/// distribution, both masked-view distributions, their combination, and the
/// symmetric KL between P and Q.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairAnalysis {
    pub p_global: MatchDistribution,
    pub p_keyword: MatchDistribution,
    pub p_intent: MatchDistribution,
    pub q_combined: MatchDistribution,
    pub sym_kl: f64,
}

/// Analyzes one annotated pair; the annotations drive only the masked
/// views, never the global prediction.
pub fn pair_analysis(
    params: &ModelParams,
    vocab: &Vocab,
    pair: &SentencePair,
    counts: &mut OpCounts,
) -> Result<PairAnalysis> {
    if !pair.is_annotated() {
        return Err(Error::MissingKeywordTags(String::from(
            "consistency analysis needs keyword annotations",
        )));
    }
    let enc = encode_pair(pair, vocab, params.config.max_len)?;
    let k = params.num_classes;
    let dist_of = |out: &EncoderOutput| {
        MatchDistribution::from_logits(&class_logits(&out.h_cls, &params.w_cls, k))
    };
    let out = counted_encode(params, &enc, counts)?;
    let kw_view = counted_mask(&enc, KeepGroup::Keyword, counts);
    let in_view = counted_mask(&enc, KeepGroup::Intent, counts);
    let out_k = counted_encode(params, &kw_view, counts)?;
    let out_i = counted_encode(params, &in_view, counts)?;
    let p_global = dist_of(&out)?;
    let p_keyword = dist_of(&out_k)?;
    let p_intent = dist_of(&out_i)?;
    let q_combined = combine_q(&p_keyword, &p_intent)?;
    let sym_kl = crate::losses::loss_dc(&p_global, &q_combined)?;
    Ok(PairAnalysis { p_global, p_keyword, p_intent, q_combined, sym_kl })
}

/// Per-example symmetric KL scores between P and Q over a dataset, with
/// their mean and median.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConsistencyReport {
    /// One score per input example, in input order.
    pub scores: Vec<f64>,
    pub mean: f64,
    pub median: f64,
}

/// Computes the P-vs-Q consistency report over an annotated dataset.
pub fn analyze_consistency(
    params: &ModelParams,
    vocab: &Vocab,
    pairs: &[SentencePair],
) -> Result<ConsistencyReport> {
    if pairs.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let mut counts = OpCounts::default();
    let scores: Vec<f64> = pairs
        .iter()
        .map(|pair| pair_analysis(params, vocab, pair, &mut counts).map(|a| a.sym_kl))
        .collect::<Result<_>>()?;
    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
    let mut sorted = scores.clone();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = if sorted.len() % 2 == 1 {
        sorted[sorted.len() / 2]
    } else {
        0.5 * (sorted[sorted.len() / 2 - 1] + sorted[sorted.len() / 2])
    };
    Ok(ConsistencyReport { scores, mean, median })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_dataset(n: usize) -> Vec<SentencePair> {
        // Matching pairs share the keyword token; mismatches do not.
        let keywords = ["rotor", "stator", "nozzle", "valve"];
        let frames = [
            ["how", "to", "fix", "the"],
            ["best", "way", "to", "clean"],
        ];
        let mut pairs = Vec::new();
        for i in 0..n {
            let kw_a = keywords[i % keywords.len()];
            let matched = i % 2 == 0;
            let kw_b = if matched { kw_a } else { keywords[(i + 1) % keywords.len()] };
            let fa = frames[i % frames.len()];
            let fb = frames[(i / 2) % frames.len()];
            let text_a = alloc::format!("{} {}", fa.join(" "), kw_a);
            let text_b = alloc::format!("{} {}", fb.join(" "), kw_b);
            let mut pair = SentencePair::new(text_a, text_b, usize::from(matched));
            pair.keyword_spans_a = Some(alloc::vec![(4, 5)]);
            pair.keyword_spans_b = Some(alloc::vec![(4, 5)]);
            pairs.push(pair);
        }
        pairs
    }

    fn tiny_setup(mode: TrainMode) -> (EncoderConfig, LabelScheme, TrainConfig, Vocab, Vec<SentencePair>) {
        let scheme = LabelScheme::binary();
        let pairs = toy_dataset(24);
        let vocab = Vocab::build(&pairs, 1).unwrap();
        let enc_config = EncoderConfig {
            vocab_size: vocab.size(),
            hidden_size: 8,
            layers: 1,
            heads: 2,
            ff_size: 16,
            max_len: 16,
            dropout: 0.1,
            seed: 11,
        };
        let config = TrainConfig {
            mode,
            batch_size: 6,
            epochs: 2,
            eval_interval: 4,
            seed: 11,
            ..TrainConfig::default()
        };
        (enc_config, scheme, config, vocab, pairs)
    }

    #[test]
    fn selector_keeps_exactly_the_best_three() {
        let mut selector = CheckpointSelector::new(3);
        let dev_metrics = [0.2, 0.9, 0.5, 0.7, 0.8, 0.1];
        let test_metrics = [10.0, 20.0, 30.0, 40.0, 50.0, 60.0];
        for (i, (&dev, &test)) in dev_metrics.iter().zip(&test_metrics).enumerate() {
            selector.push(i + 1, dev, test);
        }
        let selected = selector.selected();
        let steps: Vec<usize> = selected.iter().map(|e| e.step).collect();
        assert_eq!(steps, alloc::vec![2, 5, 4]);
        let mean: f64 = selected.iter().map(|e| e.payload).sum::<f64>() / 3.0;
        // Hand-computed: (20 + 50 + 40) / 3.
        assert!((mean - 110.0 / 3.0).abs() < 1e-12);
        assert_eq!(selector.best().unwrap().step, 2);
    }

    #[test]
    fn selector_tie_keeps_the_earlier_checkpoint() {
        let mut selector = CheckpointSelector::new(3);
        for (step, metric) in [(1, 0.5), (2, 0.6), (3, 0.7), (4, 0.5)] {
            selector.push(step, metric, step);
        }
        let steps: Vec<usize> = selector.selected().iter().map(|e| e.step).collect();
        assert_eq!(steps, alloc::vec![3, 2, 1]);
    }

    #[test]
    fn baseline_log_has_no_auxiliary_losses() {
        let (enc_config, scheme, config, vocab, pairs) = tiny_setup(TrainMode::Baseline);
        let outcome =
            train(&enc_config, &scheme, &config, &vocab, &pairs, &pairs[..8], &pairs[..8]).unwrap();
        assert!(!outcome.log.is_empty());
        for entry in &outcome.log {
            assert!(entry.l_ds.is_none());
            assert!(entry.l_dc.is_none());
            assert!(entry.l_sm.is_finite());
        }
    }

    #[test]
    fn dc_log_carries_all_three_losses() {
        let (enc_config, scheme, config, vocab, pairs) = tiny_setup(TrainMode::DcMatch);
        let outcome =
            train(&enc_config, &scheme, &config, &vocab, &pairs, &pairs[..8], &pairs[..8]).unwrap();
        for entry in &outcome.log {
            assert!(entry.l_ds.is_some());
            assert!(entry.l_dc.is_some());
        }
        assert!(outcome.top_checkpoints.len() <= 3);
        assert!(!outcome.top_checkpoints.is_empty());
    }

    #[test]
    fn training_is_bitwise_deterministic_under_a_fixed_seed() {
        let (enc_config, scheme, config, vocab, pairs) = tiny_setup(TrainMode::DcMatch);
        let run1 =
            train(&enc_config, &scheme, &config, &vocab, &pairs, &pairs[..8], &pairs[..8]).unwrap();
        let run2 =
            train(&enc_config, &scheme, &config, &vocab, &pairs, &pairs[..8], &pairs[..8]).unwrap();
        assert_eq!(run1.log, run2.log);
        assert_eq!(run1.best_params, run2.best_params);
    }

    #[test]
    fn dc_mode_requires_training_annotations() {
        let (enc_config, scheme, config, vocab, pairs) = tiny_setup(TrainMode::DcMatch);
        let unannotated: Vec<SentencePair> = pairs.iter().map(stripped).collect();
        let err = train(
            &enc_config,
            &scheme,
            &config,
            &vocab,
            &unannotated,
            &pairs[..8],
            &pairs[..8],
        )
        .unwrap_err();
        assert!(matches!(err, Error::MissingKeywordTags(_)));
    }

    #[test]
    fn predict_runs_one_forward_and_no_masking() {
        let (enc_config, scheme, _, vocab, pairs) = tiny_setup(TrainMode::Baseline);
        let params = ModelParams::init(&enc_config, &scheme).unwrap();
        let mut counts = OpCounts::default();
        let (class, dist) = predict_counted(&params, &vocab, &pairs[0], &mut counts).unwrap();
        assert_eq!(counts, OpCounts { encoder_forwards: 1, mask_operations: 0 });
        assert_eq!(class, dist.argmax());
        let sum: f64 = dist.probs().iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
    }

    #[test]
    fn analysis_uses_masked_views_and_stays_finite() {
        let (enc_config, scheme, _, vocab, pairs) = tiny_setup(TrainMode::Baseline);
        let params = ModelParams::init(&enc_config, &scheme).unwrap();
        let mut counts = OpCounts::default();
        let analysis = pair_analysis(&params, &vocab, &pairs[0], &mut counts).unwrap();
        assert_eq!(counts, OpCounts { encoder_forwards: 3, mask_operations: 2 });
        assert!(analysis.sym_kl >= 0.0);
        assert!(analysis.sym_kl.is_finite());

        let report = analyze_consistency(&params, &vocab, &pairs[..6]).unwrap();
        assert_eq!(report.scores.len(), 6);
        assert!(report.scores.iter().all(|s| *s >= 0.0 && s.is_finite()));
        assert!(report.mean >= 0.0);
        assert!(report.median >= 0.0);
    }

    #[test]
    fn analysis_rejects_unannotated_pairs() {
        let (enc_config, scheme, _, vocab, pairs) = tiny_setup(TrainMode::Baseline);
        let params = ModelParams::init(&enc_config, &scheme).unwrap();
        let plain = stripped(&pairs[0]);
        assert!(matches!(
            analyze_consistency(&params, &vocab, core::slice::from_ref(&plain)),
            Err(Error::MissingKeywordTags(_))
        ));
    }

    #[test]
    fn evaluate_rejects_empty_datasets() {
        let (enc_config, scheme, _, vocab, _) = tiny_setup(TrainMode::Baseline);
        let params = ModelParams::init(&enc_config, &scheme).unwrap();
        assert!(matches!(evaluate(&params, &vocab, &[]), Err(Error::EmptyDataset)));
    }
}
