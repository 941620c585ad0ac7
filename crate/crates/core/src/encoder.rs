//! A small trainable transformer-style pair encoder with hand-written
//! reverse-mode gradients.
//!
//! The stack is pre-norm: token plus position embeddings, then per layer
//! `x + Attn(LN(x))` and `x + FF(LN(x))`, with a final layer norm. Only the
//! non-padding prefix of the sequence is processed, so padded positions can
//! never influence any output. The aggregate representation `h_cls` is the
//! final state at position 0; `hidden` holds the final states of every
//! non-padding position.

use alloc::string::String;
use alloc::vec::Vec;
use core::f64::consts::TAU;
// In std builds the inherent f64 methods shadow this trait.
#[allow(unused_imports)]
use num_traits::Float;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{EncodedPair, GroupTag, PAD_ID};
use crate::error::{Error, Result};
use crate::losses::MatchDistribution;
use crate::scheme::LabelScheme;

const INIT_STD: f64 = 0.02;
const LN_EPSILON: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub hidden_size: usize,
    pub layers: usize,
    pub heads: usize,
    pub ff_size: usize,
    pub max_len: usize,
    pub dropout: f64,
    pub seed: u64,
}

impl EncoderConfig {
    /// Desk-scale default: small enough for finite-difference testing,
    /// large enough to learn the synthetic task.
    pub fn toy(vocab_size: usize) -> Self {
        Self {
            vocab_size,
            hidden_size: 64,
            layers: 2,
            heads: 4,
            ff_size: 128,
            max_len: 64,
            dropout: 0.1,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::InvalidConfig(msg));
        if self.vocab_size < crate::corpus::NUM_RESERVED {
            return fail(alloc::format!("vocab_size {} below reserved count", self.vocab_size));
        }
        if self.hidden_size == 0 || self.layers == 0 || self.heads == 0 || self.ff_size == 0 {
            return fail(String::from("all sizes must be >= 1"));
        }
        if self.hidden_size % self.heads != 0 {
            return fail(alloc::format!(
                "hidden_size {} not divisible by {} heads",
                self.hidden_size,
                self.heads
            ));
        }
        if self.max_len < 5 {
            return Err(Error::MaxLenTooSmall { max_len: self.max_len });
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return fail(alloc::format!("dropout {} outside [0, 1)", self.dropout));
        }
        Ok(())
    }

    fn head_dim(&self) -> usize {
        self.hidden_size / self.heads
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerParams {
    pub ln1_gain: Vec<f64>,
    pub ln1_bias: Vec<f64>,
    pub w_q: Vec<f64>,
    pub b_q: Vec<f64>,
    pub w_k: Vec<f64>,
    pub b_k: Vec<f64>,
    pub w_v: Vec<f64>,
    pub b_v: Vec<f64>,
    pub w_o: Vec<f64>,
    pub b_o: Vec<f64>,
    pub ln2_gain: Vec<f64>,
    pub ln2_bias: Vec<f64>,
    pub w_ff1: Vec<f64>,
    pub b_ff1: Vec<f64>,
    pub w_ff2: Vec<f64>,
    pub b_ff2: Vec<f64>,
}

/// All trainable arrays: embeddings, the transformer layers, the final
/// layer norm, the classification matrix (K x H), and the disentanglement
/// vector (H). Weight matrices are row-major `(out_dim, in_dim)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub config: EncoderConfig,
    pub num_classes: usize,
    pub tok_emb: Vec<f64>,
    pub pos_emb: Vec<f64>,
    pub layers: Vec<LayerParams>,
    pub ln_f_gain: Vec<f64>,
    pub ln_f_bias: Vec<f64>,
    pub w_cls: Vec<f64>,
    pub w_ds: Vec<f64>,
}

impl ModelParams {
    /// All-zero parameters with the shapes implied by the config.
    pub fn zeros(config: &EncoderConfig, scheme: &LabelScheme) -> Result<Self> {
        config.validate()?;
        let h = config.hidden_size;
        let f = config.ff_size;
        let zero_layer = || LayerParams {
            ln1_gain: alloc::vec![0.0; h],
            ln1_bias: alloc::vec![0.0; h],
            w_q: alloc::vec![0.0; h * h],
            b_q: alloc::vec![0.0; h],
            w_k: alloc::vec![0.0; h * h],
            b_k: alloc::vec![0.0; h],
            w_v: alloc::vec![0.0; h * h],
            b_v: alloc::vec![0.0; h],
            w_o: alloc::vec![0.0; h * h],
            b_o: alloc::vec![0.0; h],
            ln2_gain: alloc::vec![0.0; h],
            ln2_bias: alloc::vec![0.0; h],
            w_ff1: alloc::vec![0.0; f * h],
            b_ff1: alloc::vec![0.0; f],
            w_ff2: alloc::vec![0.0; h * f],
            b_ff2: alloc::vec![0.0; h],
        };
        Ok(Self {
            config: config.clone(),
            num_classes: scheme.num_classes(),
            tok_emb: alloc::vec![0.0; config.vocab_size * h],
            pos_emb: alloc::vec![0.0; config.max_len * h],
            layers: (0..config.layers).map(|_| zero_layer()).collect(),
            ln_f_gain: alloc::vec![0.0; h],
            ln_f_bias: alloc::vec![0.0; h],
            w_cls: alloc::vec![0.0; scheme.num_classes() * h],
            w_ds: alloc::vec![0.0; h],
        })
    }

    /// Deterministic seeded initialization: embeddings and linear weights
    /// from a normal with std 0.02, biases zero, layer-norm gain 1 / bias 0,
    /// and the `[PAD]` embedding row pinned to zero.
    pub fn init(config: &EncoderConfig, scheme: &LabelScheme) -> Result<Self> {
        let mut params = Self::zeros(config, scheme)?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut fill = |v: &mut [f64]| {
            for x in v.iter_mut() {
                *x = INIT_STD * standard_normal(&mut rng);
            }
        };
        fill(&mut params.tok_emb);
        fill(&mut params.pos_emb);
        for layer in &mut params.layers {
            fill(&mut layer.w_q);
            fill(&mut layer.w_k);
            fill(&mut layer.w_v);
            fill(&mut layer.w_o);
            fill(&mut layer.w_ff1);
            fill(&mut layer.w_ff2);
            layer.ln1_gain.fill(1.0);
            layer.ln2_gain.fill(1.0);
        }
        fill(&mut params.w_cls);
        fill(&mut params.w_ds);
        params.ln_f_gain.fill(1.0);
        let h = config.hidden_size;
        params.tok_emb[PAD_ID as usize * h..(PAD_ID as usize + 1) * h].fill(0.0);
        Ok(params)
    }

    /// A same-shape, all-zero copy; the gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        let mut copy = self.clone();
        for tensor in copy.tensors_mut() {
            tensor.fill(0.0);
        }
        copy
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Tensor names in canonical order with the decoupled-weight-decay
    /// eligibility flag (true for everything except biases and layer norms).
    pub fn tensor_metas(&self) -> Vec<(String, bool)> {
        let mut metas = Vec::new();
        metas.push((String::from("tok_emb"), true));
        metas.push((String::from("pos_emb"), true));
        for i in 0..self.layers.len() {
            for (field, decay) in [
                ("ln1_gain", false),
                ("ln1_bias", false),
                ("w_q", true),
                ("b_q", false),
                ("w_k", true),
                ("b_k", false),
                ("w_v", true),
                ("b_v", false),
                ("w_o", true),
                ("b_o", false),
                ("ln2_gain", false),
                ("ln2_bias", false),
                ("w_ff1", true),
                ("b_ff1", false),
                ("w_ff2", true),
                ("b_ff2", false),
            ] {
                metas.push((alloc::format!("layers.{i}.{field}"), decay));
            }
        }
        metas.push((String::from("ln_f_gain"), false));
        metas.push((String::from("ln_f_bias"), false));
        metas.push((String::from("w_cls"), true));
        metas.push((String::from("w_ds"), true));
        metas
    }

    /// Tensors in the canonical order of [`Self::tensor_metas`].
    pub fn tensors(&self) -> Vec<&Vec<f64>> {
        let mut out = Vec::new();
        out.push(&self.tok_emb);
        out.push(&self.pos_emb);
        for layer in &self.layers {
            out.push(&layer.ln1_gain);
            out.push(&layer.ln1_bias);
            out.push(&layer.w_q);
            out.push(&layer.b_q);
            out.push(&layer.w_k);
            out.push(&layer.b_k);
            out.push(&layer.w_v);
            out.push(&layer.b_v);
            out.push(&layer.w_o);
            out.push(&layer.b_o);
            out.push(&layer.ln2_gain);
            out.push(&layer.ln2_bias);
            out.push(&layer.w_ff1);
            out.push(&layer.b_ff1);
            out.push(&layer.w_ff2);
            out.push(&layer.b_ff2);
        }
        out.push(&self.ln_f_gain);
        out.push(&self.ln_f_bias);
        out.push(&self.w_cls);
        out.push(&self.w_ds);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Vec<f64>> {
        let mut out: Vec<&mut Vec<f64>> = Vec::new();
        out.push(&mut self.tok_emb);
        out.push(&mut self.pos_emb);
        for layer in &mut self.layers {
            out.push(&mut layer.ln1_gain);
            out.push(&mut layer.ln1_bias);
            out.push(&mut layer.w_q);
            out.push(&mut layer.b_q);
            out.push(&mut layer.w_k);
            out.push(&mut layer.b_k);
            out.push(&mut layer.w_v);
            out.push(&mut layer.b_v);
            out.push(&mut layer.w_o);
            out.push(&mut layer.b_o);
            out.push(&mut layer.ln2_gain);
            out.push(&mut layer.ln2_bias);
            out.push(&mut layer.w_ff1);
            out.push(&mut layer.b_ff1);
            out.push(&mut layer.w_ff2);
            out.push(&mut layer.b_ff2);
        }
        out.push(&mut self.ln_f_gain);
        out.push(&mut self.ln_f_bias);
        out.push(&mut self.w_cls);
        out.push(&mut self.w_ds);
        out
    }
}

fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    // Box-Muller; u1 kept away from zero so the log stays finite.
    let u1: f64 = rng.gen::<f64>().max(1e-300);
    let u2: f64 = rng.gen();
    (-2.0 * u1.ln()).sqrt() * (TAU * u2).cos()
}

/// Aggregate representation and per-position final states for the
/// non-padding positions.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderOutput {
    pub h_cls: Vec<f64>,
    pub hidden: Vec<Vec<f64>>,
}

struct LayerTrace {
    ln1_norm: Vec<f64>,
    ln1_inv_std: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    att: Vec<f64>,
    ctx: Vec<f64>,
    attn_drop: Option<Vec<f64>>,
    ln2_norm: Vec<f64>,
    ln2_inv_std: Vec<f64>,
    ff_pre: Vec<f64>,
    ff_act: Vec<f64>,
    ff_drop: Option<Vec<f64>>,
}

/// Cached activations from one forward pass, consumed by [`backward`].
pub struct ForwardTrace {
    n: usize,
    ids: Vec<u32>,
    emb_drop: Option<Vec<f64>>,
    layers: Vec<LayerTrace>,
    final_norm: Vec<f64>,
    final_inv_std: Vec<f64>,
}

impl ForwardTrace {
    pub fn seq_len(&self) -> usize {
        self.n
    }
}

/// Evaluation-mode forward pass (no dropout): deterministic.
pub fn encode(params: &ModelParams, enc: &EncodedPair) -> Result<EncoderOutput> {
    Ok(forward(params, enc, None)?.0)
}

/// Forward pass that records the activation trace; pass a generator to
/// enable dropout at the configured rate (training mode).
pub fn forward(
    params: &ModelParams,
    enc: &EncodedPair,
    mut dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<(EncoderOutput, ForwardTrace)> {
    let h = params.config.hidden_size;
    let n = enc.seq_len();
    if n == 0 {
        return Err(Error::EmptyDataset);
    }
    if n > params.config.max_len {
        return Err(Error::InvalidConfig(alloc::format!(
            "sequence of {n} real tokens exceeds max_len {}",
            params.config.max_len
        )));
    }
    debug_assert!(enc.attn_mask[..n].iter().all(|&m| m), "padding must be a suffix");
    for &id in &enc.ids[..n] {
        if id as usize >= params.config.vocab_size {
            return Err(Error::TokenIdOutOfRange {
                id,
                vocab_size: params.config.vocab_size,
            });
        }
    }

    let rate = params.config.dropout;
    let draw_mask = |rng: &mut Option<&mut ChaCha8Rng>, len: usize| -> Option<Vec<f64>> {
        match rng {
            Some(rng) if rate > 0.0 => {
                let keep = 1.0 - rate;
                Some(
                    (0..len)
                        .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { 1.0 / keep })
                        .collect(),
                )
            }
            _ => None,
        }
    };

    // Embeddings.
    let mut x = alloc::vec![0.0; n * h];
    for t in 0..n {
        let row = enc.ids[t] as usize * h;
        for j in 0..h {
            x[t * h + j] = params.tok_emb[row + j] + params.pos_emb[t * h + j];
        }
    }
    let emb_drop = draw_mask(&mut dropout_rng, n * h);
    if let Some(mask) = &emb_drop {
        for (xi, &m) in x.iter_mut().zip(mask) {
            *xi *= m;
        }
    }

    let ids: Vec<u32> = enc.ids[..n].to_vec();
    let mut layer_traces = Vec::with_capacity(params.config.layers);

    for layer in &params.layers {
        let input = x.clone();

        // Attention sublayer on the normalized input.
        let mut ln1_norm = alloc::vec![0.0; n * h];
        let mut ln1_inv_std = alloc::vec![0.0; n];
        let mut a = alloc::vec![0.0; n * h];
        layer_norm_rows(
            &input,
            &layer.ln1_gain,
            &layer.ln1_bias,
            n,
            h,
            &mut a,
            &mut ln1_norm,
            &mut ln1_inv_std,
        );

        let mut q = alloc::vec![0.0; n * h];
        let mut k = alloc::vec![0.0; n * h];
        let mut v = alloc::vec![0.0; n * h];
        linear_rows(&layer.w_q, &layer.b_q, &a, n, h, h, &mut q);
        linear_rows(&layer.w_k, &layer.b_k, &a, n, h, h, &mut k);
        linear_rows(&layer.w_v, &layer.b_v, &a, n, h, h, &mut v);

        let heads = params.config.heads;
        let d = params.config.head_dim();
        let scale = 1.0 / (d as f64).sqrt();
        let mut att = alloc::vec![0.0; heads * n * n];
        let mut ctx = alloc::vec![0.0; n * h];
        for head in 0..heads {
            let off = head * d;
            for t in 0..n {
                let row = &mut att[head * n * n + t * n..head * n * n + t * n + n];
                let mut max_score = f64::NEG_INFINITY;
                for (u, slot) in row.iter_mut().enumerate() {
                    let mut dot = 0.0;
                    for j in 0..d {
                        dot += q[t * h + off + j] * k[u * h + off + j];
                    }
                    *slot = dot * scale;
                    max_score = max_score.max(*slot);
                }
                let mut sum = 0.0;
                for slot in row.iter_mut() {
                    *slot = (*slot - max_score).exp();
                    sum += *slot;
                }
                for slot in row.iter_mut() {
                    *slot /= sum;
                }
                for j in 0..d {
                    let mut acc = 0.0;
                    for u in 0..n {
                        acc += row[u] * v[u * h + off + j];
                    }
                    ctx[t * h + off + j] = acc;
                }
            }
        }

        let mut o = alloc::vec![0.0; n * h];
        linear_rows(&layer.w_o, &layer.b_o, &ctx, n, h, h, &mut o);
        let attn_drop = draw_mask(&mut dropout_rng, n * h);
        if let Some(mask) = &attn_drop {
            for (oi, &m) in o.iter_mut().zip(mask) {
                *oi *= m;
            }
        }
        let mut x_mid = input.clone();
        for (xm, &oi) in x_mid.iter_mut().zip(&o) {
            *xm += oi;
        }

        // Feed-forward sublayer.
        let f = params.config.ff_size;
        let mut ln2_norm = alloc::vec![0.0; n * h];
        let mut ln2_inv_std = alloc::vec![0.0; n];
        let mut bvec = alloc::vec![0.0; n * h];
        layer_norm_rows(
            &x_mid,
            &layer.ln2_gain,
            &layer.ln2_bias,
            n,
            h,
            &mut bvec,
            &mut ln2_norm,
            &mut ln2_inv_std,
        );
        let mut ff_pre = alloc::vec![0.0; n * f];
        linear_rows(&layer.w_ff1, &layer.b_ff1, &bvec, n, h, f, &mut ff_pre);
        let ff_act: Vec<f64> = ff_pre.iter().map(|&z| gelu(z)).collect();
        let mut ff_out = alloc::vec![0.0; n * h];
        linear_rows(&layer.w_ff2, &layer.b_ff2, &ff_act, n, f, h, &mut ff_out);
        let ff_drop = draw_mask(&mut dropout_rng, n * h);
        if let Some(mask) = &ff_drop {
            for (fi, &m) in ff_out.iter_mut().zip(mask) {
                *fi *= m;
            }
        }
        x = x_mid.clone();
        for (xi, &fi) in x.iter_mut().zip(&ff_out) {
            *xi += fi;
        }

        layer_traces.push(LayerTrace {
            ln1_norm,
            ln1_inv_std,
            q,
            k,
            v,
            att,
            ctx,
            attn_drop,
            ln2_norm,
            ln2_inv_std,
            ff_pre,
            ff_act,
            ff_drop,
        });
    }

    // Final layer norm.
    let mut final_norm = alloc::vec![0.0; n * h];
    let mut final_inv_std = alloc::vec![0.0; n];
    let mut y = alloc::vec![0.0; n * h];
    layer_norm_rows(
        &x,
        &params.ln_f_gain,
        &params.ln_f_bias,
        n,
        h,
        &mut y,
        &mut final_norm,
        &mut final_inv_std,
    );

    let hidden: Vec<Vec<f64>> = (0..n).map(|t| y[t * h..(t + 1) * h].to_vec()).collect();
    let output = EncoderOutput { h_cls: hidden[0].clone(), hidden };
    let trace = ForwardTrace { n, ids, emb_drop, layers: layer_traces, final_norm, final_inv_std };
    Ok((output, trace))
}

/// Accumulates exact reverse-mode gradients into `grads` given upstream
/// gradients on `h_cls` and (optionally) on every final hidden state.
pub fn backward(
    params: &ModelParams,
    trace: &ForwardTrace,
    d_hcls: &[f64],
    d_hidden: Option<&[f64]>,
    grads: &mut ModelParams,
) {
    let h = params.config.hidden_size;
    let n = trace.n;

    // Gradient w.r.t. the final layer-norm output.
    let mut d_y = alloc::vec![0.0; n * h];
    if let Some(dh) = d_hidden {
        d_y.copy_from_slice(dh);
    }
    for j in 0..h {
        d_y[j] += d_hcls[j];
    }

    let mut d_x = alloc::vec![0.0; n * h];
    layer_norm_rows_backward(
        &d_y,
        &trace.final_norm,
        &trace.final_inv_std,
        &params.ln_f_gain,
        n,
        h,
        &mut grads.ln_f_gain,
        &mut grads.ln_f_bias,
        &mut d_x,
    );

    let heads = params.config.heads;
    let d = params.config.head_dim();
    let scale = 1.0 / (d as f64).sqrt();
    let f = params.config.ff_size;

    for (layer, (lt, lgrads)) in params
        .layers
        .iter()
        .zip(trace.layers.iter().zip(grads.layers.iter_mut()))
        .rev()
    {
        // ---- feed-forward sublayer ----
        let mut d_ff_out = d_x.clone();
        if let Some(mask) = &lt.ff_drop {
            for (g, &m) in d_ff_out.iter_mut().zip(mask) {
                *g *= m;
            }
        }
        // d_x currently holds the gradient w.r.t. the layer output; the
        // residual passes it through to x_mid unchanged.
        let mut d_x_mid = d_x;

        let mut d_ff_act = alloc::vec![0.0; n * f];
        linear_rows_backward(
            &layer.w_ff2,
            &lt.ff_act,
            &d_ff_out,
            n,
            f,
            h,
            &mut lgrads.w_ff2,
            &mut lgrads.b_ff2,
            &mut d_ff_act,
        );
        let mut d_ff_pre = alloc::vec![0.0; n * f];
        for i in 0..n * f {
            d_ff_pre[i] = d_ff_act[i] * gelu_grad(lt.ff_pre[i]);
        }
        // Recompute LN2 output (the feed-forward input) from the cached
        // normalized values.
        let bvec = affine_from_norm(&lt.ln2_norm, &layer.ln2_gain, &layer.ln2_bias, n, h);
        let mut d_bvec = alloc::vec![0.0; n * h];
        linear_rows_backward(
            &layer.w_ff1,
            &bvec,
            &d_ff_pre,
            n,
            h,
            f,
            &mut lgrads.w_ff1,
            &mut lgrads.b_ff1,
            &mut d_bvec,
        );
        layer_norm_rows_backward(
            &d_bvec,
            &lt.ln2_norm,
            &lt.ln2_inv_std,
            &layer.ln2_gain,
            n,
            h,
            &mut lgrads.ln2_gain,
            &mut lgrads.ln2_bias,
            &mut d_x_mid,
        );

        // ---- attention sublayer ----
        let mut d_o = d_x_mid.clone();
        if let Some(mask) = &lt.attn_drop {
            for (g, &m) in d_o.iter_mut().zip(mask) {
                *g *= m;
            }
        }
        let mut d_input = d_x_mid;

        let mut d_ctx = alloc::vec![0.0; n * h];
        linear_rows_backward(
            &layer.w_o,
            &lt.ctx,
            &d_o,
            n,
            h,
            h,
            &mut lgrads.w_o,
            &mut lgrads.b_o,
            &mut d_ctx,
        );

        let mut d_q = alloc::vec![0.0; n * h];
        let mut d_k = alloc::vec![0.0; n * h];
        let mut d_v = alloc::vec![0.0; n * h];
        for head in 0..heads {
            let off = head * d;
            for t in 0..n {
                let att_row = &lt.att[head * n * n + t * n..head * n * n + t * n + n];
                let mut d_att = alloc::vec![0.0; n];
                for u in 0..n {
                    let mut dot = 0.0;
                    for j in 0..d {
                        dot += d_ctx[t * h + off + j] * lt.v[u * h + off + j];
                    }
                    d_att[u] = dot;
                    for j in 0..d {
                        d_v[u * h + off + j] += att_row[u] * d_ctx[t * h + off + j];
                    }
                }
                let inner: f64 = att_row.iter().zip(&d_att).map(|(&a, &g)| a * g).sum();
                for u in 0..n {
                    let d_score = att_row[u] * (d_att[u] - inner) * scale;
                    for j in 0..d {
                        d_q[t * h + off + j] += d_score * lt.k[u * h + off + j];
                        d_k[u * h + off + j] += d_score * lt.q[t * h + off + j];
                    }
                }
            }
        }

        let a = affine_from_norm(&lt.ln1_norm, &layer.ln1_gain, &layer.ln1_bias, n, h);
        let mut d_a = alloc::vec![0.0; n * h];
        linear_rows_backward(&layer.w_q, &a, &d_q, n, h, h, &mut lgrads.w_q, &mut lgrads.b_q, &mut d_a);
        linear_rows_backward(&layer.w_k, &a, &d_k, n, h, h, &mut lgrads.w_k, &mut lgrads.b_k, &mut d_a);
        linear_rows_backward(&layer.w_v, &a, &d_v, n, h, h, &mut lgrads.w_v, &mut lgrads.b_v, &mut d_a);
        layer_norm_rows_backward(
            &d_a,
            &lt.ln1_norm,
            &lt.ln1_inv_std,
            &layer.ln1_gain,
            n,
            h,
            &mut lgrads.ln1_gain,
            &mut lgrads.ln1_bias,
            &mut d_input,
        );

        d_x = d_input;
    }

    if let Some(mask) = &trace.emb_drop {
        for (g, &m) in d_x.iter_mut().zip(mask) {
            *g *= m;
        }
    }
    for t in 0..n {
        let row = trace.ids[t] as usize * h;
        for j in 0..h {
            grads.tok_emb[row + j] += d_x[t * h + j];
            grads.pos_emb[t * h + j] += d_x[t * h + j];
        }
    }
}

/// Softmax classification over `h_cls . W^T`.
pub fn classify(h_cls: &[f64], w_cls: &[f64], num_classes: usize) -> Result<MatchDistribution> {
    MatchDistribution::from_logits(&class_logits(h_cls, w_cls, num_classes))
}

pub fn class_logits(h_cls: &[f64], w_cls: &[f64], num_classes: usize) -> Vec<f64> {
    let h = h_cls.len();
    (0..num_classes)
        .map(|c| w_cls[c * h..(c + 1) * h].iter().zip(h_cls).map(|(w, x)| w * x).sum())
        .collect()
}

/// Pushes a logits gradient back onto `h_cls` and the classifier matrix.
pub fn classify_backward(
    h_cls: &[f64],
    w_cls: &[f64],
    d_logits: &[f64],
    d_hcls: &mut [f64],
    d_w_cls: &mut [f64],
) {
    let h = h_cls.len();
    for (c, &g) in d_logits.iter().enumerate() {
        for j in 0..h {
            d_w_cls[c * h + j] += g * h_cls[j];
            d_hcls[j] += g * w_cls[c * h + j];
        }
    }
}

/// Mean-pooled keyword and intent representations plus the member position
/// lists (needed to scatter gradients back).
#[derive(Debug, Clone, PartialEq)]
pub struct GroupPooled {
    pub h_k: Vec<f64>,
    pub h_i: Vec<f64>,
    pub keyword_positions: Vec<usize>,
    pub intent_positions: Vec<usize>,
}

/// Average-pools the hidden states of keyword and intent positions
/// separately; special and padding positions belong to neither group. An
/// empty group is an error the caller handles by skipping the
/// disentanglement term for that example.
pub fn group_pool(hidden: &[Vec<f64>], tags: &[GroupTag]) -> Result<GroupPooled> {
    let positions = |want: GroupTag| -> Vec<usize> {
        tags.iter().take(hidden.len()).enumerate().filter(|&(_, &t)| t == want).map(|(i, _)| i).collect()
    };
    let keyword_positions = positions(GroupTag::Keyword);
    let intent_positions = positions(GroupTag::Intent);
    if keyword_positions.is_empty() {
        return Err(Error::EmptyGroup { group: "keyword" });
    }
    if intent_positions.is_empty() {
        return Err(Error::EmptyGroup { group: "intent" });
    }
    let mean = |positions: &[usize]| {
        let h = hidden[0].len();
        let mut acc = alloc::vec![0.0; h];
        for &pos in positions {
            for j in 0..h {
                acc[j] += hidden[pos][j];
            }
        }
        for a in acc.iter_mut() {
            *a /= positions.len() as f64;
        }
        acc
    };
    Ok(GroupPooled {
        h_k: mean(&keyword_positions),
        h_i: mean(&intent_positions),
        keyword_positions,
        intent_positions,
    })
}

/// Scatters pooled-vector gradients back onto the per-position hidden-state
/// gradient buffer (`n * h`, flat).
pub fn group_pool_backward(
    pooled: &GroupPooled,
    d_hk: &[f64],
    d_hi: &[f64],
    h: usize,
    d_hidden: &mut [f64],
) {
    for (positions, d_vec) in
        [(&pooled.keyword_positions, d_hk), (&pooled.intent_positions, d_hi)]
    {
        let inv = 1.0 / positions.len() as f64;
        for &pos in positions.iter() {
            for j in 0..h {
                d_hidden[pos * h + j] += d_vec[j] * inv;
            }
        }
    }
}

fn gelu(x: f64) -> f64 {
    const K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    const C: f64 = 0.044715;
    0.5 * x * (1.0 + (K * (x + C * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    const K: f64 = 0.797_884_560_802_865_4;
    const C: f64 = 0.044715;
    let t = (K * (x + C * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * K * (1.0 + 3.0 * C * x * x)
}

/// y = W x + b applied to each of the n rows of x.
fn linear_rows(
    w: &[f64],
    b: &[f64],
    x: &[f64],
    n: usize,
    in_dim: usize,
    out_dim: usize,
    out: &mut [f64],
) {
    for t in 0..n {
        let xi = &x[t * in_dim..(t + 1) * in_dim];
        for o in 0..out_dim {
            let row = &w[o * in_dim..(o + 1) * in_dim];
            let mut acc = b[o];
            for (wij, xj) in row.iter().zip(xi) {
                acc += wij * xj;
            }
            out[t * out_dim + o] = acc;
        }
    }
}

fn linear_rows_backward(
    w: &[f64],
    x: &[f64],
    d_out: &[f64],
    n: usize,
    in_dim: usize,
    out_dim: usize,
    d_w: &mut [f64],
    d_b: &mut [f64],
    d_x: &mut [f64],
) {
    for t in 0..n {
        let xi = &x[t * in_dim..(t + 1) * in_dim];
        let dxi = &mut d_x[t * in_dim..(t + 1) * in_dim];
        for o in 0..out_dim {
            let g = d_out[t * out_dim + o];
            if g == 0.0 {
                continue;
            }
            d_b[o] += g;
            let w_row = &w[o * in_dim..(o + 1) * in_dim];
            let dw_row = &mut d_w[o * in_dim..(o + 1) * in_dim];
            for j in 0..in_dim {
                dw_row[j] += g * xi[j];
                dxi[j] += g * w_row[j];
            }
        }
    }
}

/// Per-row layer norm: writes the affine output, the normalized values, and
/// the reciprocal standard deviations.
fn layer_norm_rows(
    x: &[f64],
    gain: &[f64],
    bias: &[f64],
    n: usize,
    h: usize,
    out: &mut [f64],
    norm: &mut [f64],
    inv_std: &mut [f64],
) {
    for t in 0..n {
        let row = &x[t * h..(t + 1) * h];
        let mean = row.iter().sum::<f64>() / h as f64;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / h as f64;
        let r = 1.0 / (var + LN_EPSILON).sqrt();
        inv_std[t] = r;
        for j in 0..h {
            let nj = (row[j] - mean) * r;
            norm[t * h + j] = nj;
            out[t * h + j] = gain[j] * nj + bias[j];
        }
    }
}

fn layer_norm_rows_backward(
    d_out: &[f64],
    norm: &[f64],
    inv_std: &[f64],
    gain: &[f64],
    n: usize,
    h: usize,
    d_gain: &mut [f64],
    d_bias: &mut [f64],
    d_x: &mut [f64],
) {
    for t in 0..n {
        let d_row = &d_out[t * h..(t + 1) * h];
        let n_row = &norm[t * h..(t + 1) * h];
        let mut sum_dn = 0.0;
        let mut sum_dn_n = 0.0;
        for j in 0..h {
            d_gain[j] += d_row[j] * n_row[j];
            d_bias[j] += d_row[j];
            let dn = d_row[j] * gain[j];
            sum_dn += dn;
            sum_dn_n += dn * n_row[j];
        }
        let r = inv_std[t];
        let inv_h = 1.0 / h as f64;
        for j in 0..h {
            let dn = d_row[j] * gain[j];
            d_x[t * h + j] += r * (dn - sum_dn * inv_h - n_row[j] * sum_dn_n * inv_h);
        }
    }
}

fn affine_from_norm(norm: &[f64], gain: &[f64], bias: &[f64], n: usize, h: usize) -> Vec<f64> {
    let mut out = alloc::vec![0.0; n * h];
    for t in 0..n {
        for j in 0..h {
            out[t * h + j] = gain[j] * norm[t * h + j] + bias[j];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{encode_pair, SentencePair, Vocab};

    fn tiny_config(vocab_size: usize) -> EncoderConfig {
        EncoderConfig {
            vocab_size,
            hidden_size: 8,
            layers: 1,
            heads: 2,
            ff_size: 16,
            max_len: 12,
            dropout: 0.0,
            seed: 7,
        }
    }

    fn sample_encoding() -> (ModelParams, EncodedPair) {
        let pair = SentencePair::new("ion flux gate", "ion beam", 1);
        let vocab = Vocab::build(core::slice::from_ref(&pair), 1).unwrap();
        let config = tiny_config(vocab.size());
        let params = ModelParams::init(&config, &LabelScheme::binary()).unwrap();
        let enc = encode_pair(&pair, &vocab, config.max_len).unwrap();
        (params, enc)
    }

    #[test]
    fn init_is_deterministic_and_well_formed() {
        let scheme = LabelScheme::binary();
        let config = tiny_config(20);
        let p1 = ModelParams::init(&config, &scheme).unwrap();
        let p2 = ModelParams::init(&config, &scheme).unwrap();
        assert_eq!(p1, p2);
        assert!(p1.layers[0].ln1_gain.iter().all(|&g| g == 1.0));
        assert!(p1.ln_f_gain.iter().all(|&g| g == 1.0));
        assert!(p1.layers[0].b_q.iter().all(|&b| b == 0.0));
        let h = config.hidden_size;
        assert!(p1.tok_emb[..h].iter().all(|&x| x == 0.0), "PAD row must be zero");
        assert!(p1.tok_emb[h..].iter().any(|&x| x != 0.0));
    }

    #[test]
    fn seed_changes_parameters() {
        let scheme = LabelScheme::binary();
        let mut config = tiny_config(20);
        let p1 = ModelParams::init(&config, &scheme).unwrap();
        config.seed = 8;
        let p2 = ModelParams::init(&config, &scheme).unwrap();
        assert_ne!(p1.tok_emb, p2.tok_emb);
    }

    #[test]
    fn parameter_count_matches_closed_form() {
        let config = tiny_config(20);
        let params = ModelParams::init(&config, &LabelScheme::three_way()).unwrap();
        let (v, h, f, m, l, k) = (20, 8usize, 16usize, 12usize, 1usize, 3usize);
        let per_layer = 4 * (h * h + h) + 4 * h + (f * h + f) + (h * f + h);
        let expected = v * h + m * h + l * per_layer + 2 * h + k * h + h;
        assert_eq!(params.num_parameters(), expected);
        assert_eq!(params.tensors().len(), params.tensor_metas().len());
    }

    #[test]
    fn decay_flags_exclude_biases_and_layer_norms() {
        let params = ModelParams::init(&tiny_config(20), &LabelScheme::binary()).unwrap();
        for (name, decay) in params.tensor_metas() {
            let is_bias_or_ln = name.contains("ln") || name.contains(".b_");
            assert_eq!(decay, !is_bias_or_ln, "{name}");
        }
    }

    #[test]
    fn encode_shapes_and_determinism() {
        let (params, enc) = sample_encoding();
        let out1 = encode(&params, &enc).unwrap();
        let out2 = encode(&params, &enc).unwrap();
        assert_eq!(out1, out2);
        assert_eq!(out1.h_cls.len(), params.config.hidden_size);
        assert_eq!(out1.hidden.len(), enc.seq_len());
        assert!(out1.h_cls.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn padding_does_not_influence_outputs() {
        let pair = SentencePair::new("ion flux gate", "ion beam", 1);
        let vocab = Vocab::build(core::slice::from_ref(&pair), 1).unwrap();
        let config = tiny_config(vocab.size());
        let params = ModelParams::init(&config, &LabelScheme::binary()).unwrap();
        let short = encode_pair(&pair, &vocab, 9).unwrap();
        let long = encode_pair(&pair, &vocab, 12).unwrap();
        assert!(long.ids.len() > short.ids.len());
        let out_short = encode(&params, &short).unwrap();
        let out_long = encode(&params, &long).unwrap();
        for (a, b) in out_short.h_cls.iter().zip(&out_long.h_cls) {
            assert!((a - b).abs() < 1e-12);
        }
        for (ra, rb) in out_short.hidden.iter().zip(&out_long.hidden) {
            for (a, b) in ra.iter().zip(rb) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn out_of_range_id_rejected() {
        let (params, mut enc) = sample_encoding();
        enc.ids[1] = params.config.vocab_size as u32;
        assert!(matches!(encode(&params, &enc), Err(Error::TokenIdOutOfRange { .. })));
    }

    #[test]
    fn classify_properties() {
        let w = [0.5, -0.2, 0.1, 0.4]; // 2 classes x 2 dims
        let h = [1.0, 2.0];
        let dist = classify(&h, &w, 2).unwrap();
        let sum: f64 = dist.probs().iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
        assert!(dist.probs().iter().all(|&p| p > 0.0 && p < 1.0));
        // Equal logits give the uniform distribution.
        let uniform = classify(&[0.0, 0.0], &[0.3, 0.7, 0.3, 0.7], 2).unwrap();
        assert!((uniform.probs()[0] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn group_pool_means_and_errors() {
        let hidden = alloc::vec![
            alloc::vec![1.0, 2.0],
            alloc::vec![3.0, 4.0],
            alloc::vec![5.0, 6.0],
            alloc::vec![7.0, 8.0],
        ];
        use GroupTag::*;
        let tags = [Special, Keyword, Intent, Intent];
        let pooled = group_pool(&hidden, &tags).unwrap();
        // Single keyword token: h_k is exactly that state.
        assert_eq!(pooled.h_k, alloc::vec![3.0, 4.0]);
        assert_eq!(pooled.h_i, alloc::vec![6.0, 7.0]);

        let no_keyword = [Special, Intent, Intent, Intent];
        assert_eq!(
            group_pool(&hidden, &no_keyword).unwrap_err(),
            Error::EmptyGroup { group: "keyword" }
        );
    }

    #[test]
    fn group_pool_matches_naive_summation() {
        let mut state = 99u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            ((state >> 11) as f64 / (1u64 << 53) as f64) - 0.5
        };
        let hidden: Vec<Vec<f64>> =
            (0..6).map(|_| (0..4).map(|_| next()).collect()).collect();
        use GroupTag::*;
        let tags = [Special, Keyword, Keyword, Intent, Keyword, Intent];
        let pooled = group_pool(&hidden, &tags).unwrap();
        for j in 0..4 {
            let naive = (hidden[1][j] + hidden[2][j] + hidden[4][j]) / 3.0;
            assert!((pooled.h_k[j] - naive).abs() < 1e-9);
        }
    }

    /// Finite-difference check of the raw encoder backward pass through a
    /// fixed linear functional of h_cls and the hidden states.
    #[test]
    fn backward_matches_finite_differences() {
        let (params, enc) = sample_encoding();
        let h = params.config.hidden_size;
        let n = enc.seq_len();

        let weight = |i: usize| 0.05 * ((i % 13) as f64 - 6.0);
        let functional = |p: &ModelParams| -> f64 {
            let out = encode(p, &enc).unwrap();
            let mut acc = 0.0;
            for (j, &x) in out.h_cls.iter().enumerate() {
                acc += weight(j) * x;
            }
            for (t, row) in out.hidden.iter().enumerate() {
                for (j, &x) in row.iter().enumerate() {
                    acc += weight(t * h + j + 1) * x;
                }
            }
            acc
        };

        let mut grads = params.zeros_like();
        let trace = forward(&params, &enc, None).unwrap().1;
        let d_hcls: Vec<f64> = (0..h).map(weight).collect();
        let mut d_hidden = alloc::vec![0.0; n * h];
        for t in 0..n {
            for j in 0..h {
                d_hidden[t * h + j] = weight(t * h + j + 1);
            }
        }
        backward(&params, &trace, &d_hcls, Some(&d_hidden), &mut grads);

        let step = 1e-5;
        let mut checked = 0usize;
        let num_tensors = params.tensors().len();
        for tensor_idx in 0..num_tensors {
            let len = params.tensors()[tensor_idx].len();
            // Probe a few entries of every tensor.
            for probe in 0..len.min(3) {
                let idx = (probe * 17) % len;
                let mut plus = params.clone();
                plus.tensors_mut()[tensor_idx][idx] += step;
                let mut minus = params.clone();
                minus.tensors_mut()[tensor_idx][idx] -= step;
                let fd = (functional(&plus) - functional(&minus)) / (2.0 * step);
                let analytic = grads.tensors()[tensor_idx][idx];
                let denom = fd.abs().max(analytic.abs()).max(1e-6);
                assert!(
                    (fd - analytic).abs() / denom < 1e-4,
                    "tensor {tensor_idx} idx {idx}: fd {fd} vs analytic {analytic}"
                );
                checked += 1;
            }
        }
        assert!(checked > 30);
    }

    #[test]
    fn gradient_of_unused_parameters_is_zero() {
        let (params, enc) = sample_encoding();
        let trace = forward(&params, &enc, None).unwrap().1;
        let mut grads = params.zeros_like();
        let d_hcls = alloc::vec![1.0; params.config.hidden_size];
        backward(&params, &trace, &d_hcls, None, &mut grads);
        let h = params.config.hidden_size;
        // The PAD embedding row is never touched by this input.
        assert!(grads.tok_emb[..h].iter().all(|&g| g == 0.0));
        // Positions beyond the real sequence get no position-embedding grad.
        let n = enc.seq_len();
        assert!(grads.pos_emb[n * h..].iter().all(|&g| g == 0.0));
        // The classifier and disentanglement vector are not part of this
        // graph at all.
        assert!(grads.w_cls.iter().all(|&g| g == 0.0));
        assert!(grads.w_ds.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn backward_is_linear_in_upstream_gradient() {
        let (params, enc) = sample_encoding();
        let trace = forward(&params, &enc, None).unwrap().1;
        let h = params.config.hidden_size;
        let d1: Vec<f64> = (0..h).map(|j| 0.1 * (j as f64 + 1.0)).collect();
        let d2: Vec<f64> = d1.iter().map(|x| 2.0 * x).collect();
        let mut g1 = params.zeros_like();
        backward(&params, &trace, &d1, None, &mut g1);
        let mut g2 = params.zeros_like();
        backward(&params, &trace, &d2, None, &mut g2);
        for (t1, t2) in g1.tensors().iter().zip(g2.tensors().iter()) {
            for (a, b) in t1.iter().zip(t2.iter()) {
                assert!((2.0 * a - b).abs() < 1e-9 * (1.0 + b.abs()));
            }
        }
    }

    #[test]
    fn dropout_is_seed_deterministic_and_off_in_eval() {
        let (params, enc) = sample_encoding();
        let mut with_dropout = params.clone();
        with_dropout.config.dropout = 0.5;
        let mut rng1 = ChaCha8Rng::seed_from_u64(3);
        let mut rng2 = ChaCha8Rng::seed_from_u64(3);
        let out1 = forward(&with_dropout, &enc, Some(&mut rng1)).unwrap().0;
        let out2 = forward(&with_dropout, &enc, Some(&mut rng2)).unwrap().0;
        assert_eq!(out1, out2);
        // Without a generator the dropout rate is ignored entirely.
        let eval1 = encode(&with_dropout, &enc).unwrap();
        let eval2 = encode(&with_dropout, &enc).unwrap();
        assert_eq!(eval1, eval2);
        assert_ne!(out1, eval1);
    }
}
