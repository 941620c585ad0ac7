//! The three training objectives and the divide-and-conquer distribution
//! algebra: classification loss, keyword/intent disentanglement loss, the
//! combined sub-problem distribution Q, and the bidirectional KL loss that
//! ties the global distribution to Q.

use alloc::string::String;
use alloc::vec::Vec;
// In std builds the inherent f64 methods shadow this trait.
#[allow(unused_imports)]
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Probabilities below this are clamped before any logarithm.
pub const PROB_EPSILON: f64 = 1e-12;

/// A probability vector over the K ordinal match classes. Used for the
/// global distribution P, the sub-problem distributions P_k and P_i, and
/// their combination Q.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchDistribution {
    probs: Vec<f64>,
}

impl MatchDistribution {
    /// Wraps a probability vector, checking it is finite, non-negative, and
    /// normalized to within 1e-9.
    pub fn new(probs: Vec<f64>) -> Result<Self> {
        if probs.len() < 2 {
            return Err(Error::InvalidConfig(String::from(
                "distribution needs at least 2 classes",
            )));
        }
        let mut sum = 0.0;
        for &p in &probs {
            if !p.is_finite() || p < 0.0 {
                return Err(Error::NonFinite { what: String::from("probability vector") });
            }
            sum += p;
        }
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidConfig(alloc::format!(
                "probabilities sum to {sum}, not 1"
            )));
        }
        Ok(Self { probs })
    }

    /// Softmax over logits; shift-invariant via max subtraction.
    pub fn from_logits(logits: &[f64]) -> Result<Self> {
        if logits.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite { what: String::from("logits") });
        }
        let max = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let exps: Vec<f64> = logits.iter().map(|&x| (x - max).exp()).collect();
        let sum: f64 = exps.iter().sum();
        Ok(Self { probs: exps.iter().map(|&e| e / sum).collect() })
    }

    pub fn uniform(num_classes: usize) -> Self {
        Self { probs: alloc::vec![1.0 / num_classes as f64; num_classes] }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn num_classes(&self) -> usize {
        self.probs.len()
    }

    /// Most probable class; ties break toward the lower class index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (idx, &p) in self.probs.iter().enumerate() {
            if p > self.probs[best] {
                best = idx;
            }
        }
        best
    }
}

fn check_same_classes(left: &MatchDistribution, right: &MatchDistribution) -> Result<()> {
    if left.num_classes() != right.num_classes() {
        return Err(Error::ClassCountMismatch {
            left: left.num_classes(),
            right: right.num_classes(),
        });
    }
    Ok(())
}

fn clamped(p: f64) -> f64 {
    p.max(PROB_EPSILON)
}

/// Standard classification loss: negative log-likelihood of the gold class.
pub fn loss_sm(p: &MatchDistribution, label: usize) -> Result<f64> {
    if label >= p.num_classes() {
        return Err(Error::LabelOutOfRange { label, num_classes: p.num_classes() });
    }
    Ok(-clamped(p.probs[label]).ln())
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable -ln(sigmoid(x)) = ln(1 + exp(-x)).
fn softplus_neg(x: f64) -> f64 {
    if x >= 0.0 {
        (-x).exp().ln_1p()
    } else {
        -x + x.exp().ln_1p()
    }
}

/// Disentanglement loss: pushes the pooled keyword representation to score
/// positively against `w_ds` and the pooled intent representation to score
/// negatively, i.e. `-[ln s(h_k . w_ds) + ln s(-h_i . w_ds)]` with the
/// logistic function s.
pub fn loss_ds(h_k: &[f64], h_i: &[f64], w_ds: &[f64]) -> Result<f64> {
    if h_k.len() != w_ds.len() || h_i.len() != w_ds.len() {
        return Err(Error::ClassCountMismatch { left: h_k.len(), right: w_ds.len() });
    }
    let score = |h: &[f64]| h.iter().zip(w_ds).map(|(a, b)| a * b).sum::<f64>();
    let (s_k, s_i) = (score(h_k), score(h_i));
    if !s_k.is_finite() || !s_i.is_finite() {
        return Err(Error::NonFinite { what: String::from("disentanglement scores") });
    }
    Ok(softplus_neg(s_k) + softplus_neg(-s_i))
}

/// Combines independent keyword- and intent-matching distributions into the
/// distribution of the combined solution.
///
/// The combined class is `c` exactly when both sub-problems reach at least
/// degree `c` and at least one equals `c`; equivalently Q is the
/// distribution of `min(y_k, y_i)` under the product joint. A higher degree
/// in one sub-problem never lifts the combined degree, so a mismatch in
/// either forces a mismatch overall.
pub fn combine_q(p_k: &MatchDistribution, p_i: &MatchDistribution) -> Result<MatchDistribution> {
    check_same_classes(p_k, p_i)?;
    let k = p_k.num_classes();
    let pk = p_k.probs();
    let pi = p_i.probs();
    // tail[c] = sum_{m >= c} p[m]
    let tail = |p: &[f64]| {
        let mut tail = alloc::vec![0.0; k + 1];
        for c in (0..k).rev() {
            tail[c] = tail[c + 1] + p[c];
        }
        tail
    };
    let (tail_k, tail_i) = (tail(pk), tail(pi));
    let mut q = alloc::vec![0.0; k];
    for c in 0..k {
        q[c] = pk[c] * pi[c] + pk[c] * tail_i[c + 1] + pi[c] * tail_k[c + 1];
    }
    // The buckets partition the K x K joint space; renormalization is not
    // needed, only a guard against accumulated rounding.
    Ok(MatchDistribution { probs: q })
}

/// Bidirectional KL divergence `(KL(P||Q) + KL(Q||P)) / 2` with natural
/// logarithms and epsilon clamping inside the logs.
pub fn loss_dc(p: &MatchDistribution, q: &MatchDistribution) -> Result<f64> {
    check_same_classes(p, q)?;
    let mut total = 0.0;
    for (&pc, &qc) in p.probs().iter().zip(q.probs()) {
        let log_ratio = (clamped(pc) / clamped(qc)).ln();
        total += 0.5 * (pc * log_ratio - qc * log_ratio);
    }
    Ok(total)
}

/// Per-example (or per-batch mean) loss components. `l_ds` is absent when
/// the example had a degenerate keyword or intent group, and `l_dc` is
/// absent in baseline training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_sm: f64,
    pub l_ds: Option<f64>,
    pub l_dc: Option<f64>,
    pub total: f64,
}

impl LossBreakdown {
    /// Unweighted sum of the present components.
    pub fn new(l_sm: f64, l_ds: Option<f64>, l_dc: Option<f64>) -> Self {
        let total = l_sm + l_ds.unwrap_or(0.0) + l_dc.unwrap_or(0.0);
        Self { l_sm, l_ds, l_dc, total }
    }

    /// Mean over a batch. Components absent on some examples contribute
    /// zero there, so `total` stays the mean of per-example totals and the
    /// breakdown still sums to it. A component reported `None` means no
    /// example in the batch had it.
    pub fn batch_mean(items: &[LossBreakdown]) -> Result<LossBreakdown> {
        if items.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let n = items.len() as f64;
        let l_sm = items.iter().map(|b| b.l_sm).sum::<f64>() / n;
        let mean_opt = |get: fn(&LossBreakdown) -> Option<f64>| {
            if items.iter().all(|b| get(b).is_none()) {
                None
            } else {
                Some(items.iter().filter_map(get).sum::<f64>() / n)
            }
        };
        Ok(Self::new(l_sm, mean_opt(|b| b.l_ds), mean_opt(|b| b.l_dc)))
    }
}

// ---------------------------------------------------------------------------
// Analytic gradients, consumed by the trainer and checked against finite
// differences in the test suites.
// ---------------------------------------------------------------------------

/// d(softmax)/d(logits) pullback: turns a gradient w.r.t. probabilities
/// into one w.r.t. logits.
pub fn softmax_backward(probs: &[f64], d_probs: &[f64]) -> Vec<f64> {
    let inner: f64 = probs.iter().zip(d_probs).map(|(&p, &d)| p * d).sum();
    probs.iter().zip(d_probs).map(|(&p, &d)| p * (d - inner)).collect()
}

/// Loss value plus gradient w.r.t. the probability vector.
pub fn loss_sm_grad(p: &MatchDistribution, label: usize) -> Result<(f64, Vec<f64>)> {
    let value = loss_sm(p, label)?;
    let mut d_p = alloc::vec![0.0; p.num_classes()];
    let clamped_p = clamped(p.probs[label]);
    if p.probs[label] >= PROB_EPSILON {
        d_p[label] = -1.0 / clamped_p;
    }
    Ok((value, d_p))
}

/// Loss value plus gradients w.r.t. both pooled vectors and `w_ds`.
pub fn loss_ds_grad(
    h_k: &[f64],
    h_i: &[f64],
    w_ds: &[f64],
) -> Result<(f64, Vec<f64>, Vec<f64>, Vec<f64>)> {
    let value = loss_ds(h_k, h_i, w_ds)?;
    let score = |h: &[f64]| h.iter().zip(w_ds).map(|(a, b)| a * b).sum::<f64>();
    // dL/ds_k = sigmoid(s_k) - 1, dL/ds_i = sigmoid(s_i)
    let g_k = sigmoid(score(h_k)) - 1.0;
    let g_i = sigmoid(score(h_i));
    let d_hk: Vec<f64> = w_ds.iter().map(|&w| g_k * w).collect();
    let d_hi: Vec<f64> = w_ds.iter().map(|&w| g_i * w).collect();
    let d_wds: Vec<f64> =
        h_k.iter().zip(h_i).map(|(&hk, &hi)| g_k * hk + g_i * hi).collect();
    Ok((value, d_hk, d_hi, d_wds))
}

/// Pulls a gradient w.r.t. Q back onto the two sub-problem distributions.
pub fn combine_q_backward(
    p_k: &MatchDistribution,
    p_i: &MatchDistribution,
    d_q: &[f64],
) -> (Vec<f64>, Vec<f64>) {
    let k = p_k.num_classes();
    let pk = p_k.probs();
    let pi = p_i.probs();
    let mut d_pk = alloc::vec![0.0; k];
    let mut d_pi = alloc::vec![0.0; k];
    // dQ(c)/dP_k(j) = tail_i(c) for j == c, P_i(c) for j > c, else 0,
    // where tail_i(c) = sum_{m >= c} P_i(m); symmetrically for P_i.
    let mut tail_i = 0.0;
    let mut tail_k = 0.0;
    let mut prefix_dq_pi = 0.0;
    let mut prefix_dq_pk = 0.0;
    for c in (0..k).rev() {
        tail_i += pi[c];
        tail_k += pk[c];
        d_pk[c] += d_q[c] * tail_i;
        d_pi[c] += d_q[c] * tail_k;
    }
    for j in 0..k {
        d_pk[j] += prefix_dq_pi;
        d_pi[j] += prefix_dq_pk;
        prefix_dq_pi += d_q[j] * pi[j];
        prefix_dq_pk += d_q[j] * pk[j];
    }
    (d_pk, d_pi)
}

/// Loss value plus gradients w.r.t. both distributions; gradients flow into
/// both the P and Q branches.
pub fn loss_dc_grad(
    p: &MatchDistribution,
    q: &MatchDistribution,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let value = loss_dc(p, q)?;
    let k = p.num_classes();
    let mut d_p = alloc::vec![0.0; k];
    let mut d_q = alloc::vec![0.0; k];
    for c in 0..k {
        let (pc, qc) = (p.probs[c], q.probs[c]);
        let (pc_cl, qc_cl) = (clamped(pc), clamped(qc));
        let log_ratio = (pc_cl / qc_cl).ln();
        // L = 1/2 sum_c (p_c - q_c) ln(p_c / q_c) with clamped logs.
        d_p[c] = 0.5 * log_ratio;
        d_q[c] = -0.5 * log_ratio;
        if pc >= PROB_EPSILON {
            d_p[c] += 0.5 * (pc - qc) / pc_cl;
        }
        if qc >= PROB_EPSILON {
            d_q[c] -= 0.5 * (pc - qc) / qc_cl;
        }
    }
    Ok((value, d_p, d_q))
}
