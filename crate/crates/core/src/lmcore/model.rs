//! Tiny decoder-only transformer with hand-written gradients.
//!
//! Layout: token + learned positional embeddings, pre-norm blocks
//! (parameter-free RMSNorm, causal multi-head attention, GELU MLP),
//! a final RMSNorm, and a linear head with bias. Output projections
//! (`wo`, `fc2`, `head.b`) start at zero.
//!
//! A start-of-sequence token is prepended internally so that
//! continuations conditioned on an empty prompt are well defined.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use super::select::AdapterSpec;
use super::tensor::{accumulate_outer, Tensor};
use super::vocab::{TokenSequence, Vocabulary, BOS_ID, EOS_ID};
use super::{LmError, Result};
use crate::num::{real, Real};

const RMS_EPS: f64 = 1e-5;
const INIT_STD: f64 = 0.02;

/// Architecture description. The reference model used throughout the
/// toolkit is 4 blocks, width 64, 4 heads, context 64.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub context_len: usize,
    pub vocab_size: usize,
}

impl ModelConfig {
    pub fn reference() -> Self {
        ModelConfig {
            n_layers: 4,
            d_model: 64,
            n_heads: 4,
            context_len: 64,
            vocab_size: 0,
        }
    }

    /// Small architecture for gradient checks and fast tests.
    pub fn tiny() -> Self {
        ModelConfig {
            n_layers: 2,
            d_model: 16,
            n_heads: 2,
            context_len: 32,
            vocab_size: 0,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }
}

/// Decoder-only language model over a word-level vocabulary.
///
/// Every trainable tensor lives in `params` under a dotted name and belongs
/// to exactly one group: `embedding` (wte, wpe), `head`, or `block{i}`.
/// Low-rank adapters, when installed, add `<target>.lora_down` /
/// `<target>.lora_up` tensors to the owning block's group.
#[derive(Debug, Clone, PartialEq)]
pub struct LanguageModel<F> {
    pub config: ModelConfig,
    pub vocab: Vocabulary,
    pub params: BTreeMap<String, Tensor<F>>,
    pub adapters: Vec<AdapterSpec>,
    pub init_seed: u64,
}

/// Maps a tensor name to its parameter group.
pub fn group_of(name: &str) -> String {
    if name == "wte" || name == "wpe" {
        "embedding".to_string()
    } else if let Some(rest) = name.strip_prefix("head") {
        let _ = rest;
        "head".to_string()
    } else {
        match name.split('.').next() {
            Some(block) => block.to_string(),
            None => name.to_string(),
        }
    }
}

impl<F: Real> LanguageModel<F> {
    pub fn new(mut config: ModelConfig, vocab: Vocabulary, seed: u64) -> Self {
        config.vocab_size = vocab.len();
        let d = config.d_model;
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let mut params = BTreeMap::new();
        params.insert(
            "wte".to_string(),
            Tensor::randn(config.vocab_size, d, INIT_STD, &mut rng),
        );
        params.insert(
            "wpe".to_string(),
            Tensor::randn(config.context_len, d, INIT_STD, &mut rng),
        );
        for layer in 0..config.n_layers {
            for w in ["wq", "wk", "wv"] {
                params.insert(
                    format!("block{layer}.{w}"),
                    Tensor::randn(d, d, INIT_STD, &mut rng),
                );
            }
            params.insert(format!("block{layer}.wo"), Tensor::zeros(d, d));
            params.insert(
                format!("block{layer}.fc1"),
                Tensor::randn(4 * d, d, INIT_STD, &mut rng),
            );
            params.insert(format!("block{layer}.fc2"), Tensor::zeros(d, 4 * d));
        }
        params.insert(
            "head.w".to_string(),
            Tensor::randn(config.vocab_size, d, INIT_STD, &mut rng),
        );
        params.insert("head.b".to_string(), Tensor::zeros(config.vocab_size, 1));
        LanguageModel {
            config,
            vocab,
            params,
            adapters: Vec::new(),
            init_seed: seed,
        }
    }

    pub fn n_layers(&self) -> usize {
        self.config.n_layers
    }

    pub fn vocab_size(&self) -> usize {
        self.config.vocab_size
    }

    pub fn param_count(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    /// Group name → tensor names, in deterministic order.
    pub fn groups(&self) -> BTreeMap<String, Vec<String>> {
        let mut groups: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for name in self.params.keys() {
            groups.entry(group_of(name)).or_default().push(name.clone());
        }
        groups
    }

    /// SHA-256 fingerprint per tensor, for isolation checks.
    pub fn fingerprints(&self) -> BTreeMap<String, String> {
        self.params
            .iter()
            .map(|(name, t)| (name.clone(), t.fingerprint()))
            .collect()
    }

    pub fn tokenize(&self, text: &str) -> TokenSequence {
        self.vocab.tokenize(text)
    }

    /// Log-probability of `target` given `prompt`, summed over target
    /// positions; 0 for an empty target, always ≤ 0 otherwise.
    pub fn continuation_logprob(
        &self,
        prompt: &TokenSequence,
        target: &TokenSequence,
    ) -> Result<F> {
        let (ids, losses) = self.encode_pair(&prompt.ids, &target.ids)?;
        if losses.is_empty() {
            return Ok(F::zero());
        }
        let view = ParamView::new(self);
        let trace = forward_trace(&view, &self.config, &ids, &losses);
        let mut total = F::zero();
        for (pos, tok) in &losses {
            let probs = &trace.probs[pos];
            total += probs[*tok as usize].ln();
        }
        Ok(total)
    }

    /// Next-token logits after the given prefix (which may be empty).
    pub fn next_token_logits(&self, prefix: &[u32]) -> Result<Vec<F>> {
        let mut ids = Vec::with_capacity(prefix.len() + 1);
        ids.push(BOS_ID);
        ids.extend_from_slice(prefix);
        if ids.len() > self.config.context_len {
            return Err(LmError::ContextOverflow {
                needed: ids.len(),
                limit: self.config.context_len,
            });
        }
        let view = ParamView::new(self);
        Ok(forward_last_logits(&view, &self.config, &ids))
    }

    /// Generates a continuation. Greedy decoding is a pure function of
    /// (parameters, prompt); sampling is deterministic given the seed.
    /// Stops at the end-of-text token or when the context fills up.
    pub fn generate(
        &self,
        prompt: &TokenSequence,
        max_new_tokens: usize,
        decoding: Decoding,
    ) -> Result<TokenSequence> {
        if prompt.ids.len() + 1 >= self.config.context_len && max_new_tokens > 0 {
            return Err(LmError::ContextOverflow {
                needed: prompt.ids.len() + 2,
                limit: self.config.context_len,
            });
        }
        let view = ParamView::new(self);
        let mut rng = match decoding {
            Decoding::Greedy => None,
            Decoding::TopK { seed, .. } => Some(ChaCha12Rng::seed_from_u64(seed)),
        };
        let mut ids = Vec::with_capacity(prompt.ids.len() + 1);
        ids.push(BOS_ID);
        ids.extend_from_slice(&prompt.ids);
        let mut out = Vec::new();
        while out.len() < max_new_tokens && ids.len() < self.config.context_len {
            let logits = forward_last_logits(&view, &self.config, &ids);
            let next = match decoding {
                Decoding::Greedy => argmax(&logits),
                Decoding::TopK { k, .. } => {
                    sample_top_k(&logits, k.max(1), rng.as_mut().expect("sampling rng"))
                }
            };
            if next == EOS_ID {
                break;
            }
            ids.push(next);
            out.push(next);
        }
        let text = self.vocab.detokenize(&out);
        Ok(TokenSequence { ids: out, text })
    }

    /// Full internal token sequence and per-position loss targets for a
    /// (prompt, target) pair: `[bos] prompt target`, loss on target tokens.
    pub(crate) fn encode_pair(
        &self,
        prompt: &[u32],
        target: &[u32],
    ) -> Result<EncodedExample> {
        let needed = 1 + prompt.len() + target.len();
        if needed > self.config.context_len {
            return Err(LmError::ContextOverflow {
                needed,
                limit: self.config.context_len,
            });
        }
        let mut ids = Vec::with_capacity(needed);
        ids.push(BOS_ID);
        ids.extend_from_slice(prompt);
        ids.extend_from_slice(target);
        let p = prompt.len();
        let losses = target
            .iter()
            .enumerate()
            .map(|(j, &tok)| (p + j, tok))
            .collect();
        Ok((ids, losses))
    }
}

/// Token ids with the start token prepended, plus (position, target id)
/// pairs naming where the loss lands.
pub(crate) type EncodedExample = (Vec<u32>, Vec<(usize, u32)>);

/// Decoding strategy for [`LanguageModel::generate`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Decoding {
    Greedy,
    TopK { k: usize, seed: u64 },
}

fn argmax<F: Real>(logits: &[F]) -> u32 {
    let mut best = 0usize;
    for (i, &v) in logits.iter().enumerate() {
        if v > logits[best] {
            best = i;
        }
    }
    best as u32
}

fn sample_top_k<F: Real>(logits: &[F], k: usize, rng: &mut ChaCha12Rng) -> u32 {
    let mut order: Vec<usize> = (0..logits.len()).collect();
    order.sort_by(|&a, &b| {
        logits[b]
            .partial_cmp(&logits[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let top = &order[..k.min(order.len())];
    let max = logits[top[0]];
    let weights: Vec<f64> = top
        .iter()
        .map(|&i| (logits[i] - max).to_f64().exp())
        .collect();
    let total: f64 = weights.iter().sum();
    let mut dart = rng.gen::<f64>() * total;
    for (&idx, w) in top.iter().zip(&weights) {
        dart -= w;
        if dart <= 0.0 {
            return idx as u32;
        }
    }
    top[top.len() - 1] as u32
}

// ---------------------------------------------------------------------------
// Effective-weight view (base weights plus any installed low-rank adapters)
// ---------------------------------------------------------------------------

/// Read view over model parameters with adapter deltas materialized once.
pub(crate) struct ParamView<'a, F> {
    model: &'a LanguageModel<F>,
    effective: BTreeMap<String, Tensor<F>>,
}

impl<'a, F: Real> ParamView<'a, F> {
    pub fn new(model: &'a LanguageModel<F>) -> Self {
        let mut effective = BTreeMap::new();
        for spec in &model.adapters {
            let base = &model.params[&spec.target];
            let down = &model.params[&spec.down_name()];
            let up = &model.params[&spec.up_name()];
            let mut w = base.clone();
            let scale = real::<F>(spec.scale);
            // ΔW[o][i] = scale · Σ_r down[i][r] · up[r][o]
            for o in 0..w.rows {
                for i in 0..w.cols {
                    let mut acc = F::zero();
                    for r in 0..spec.rank {
                        acc += down.data[i * spec.rank + r] * up.data[r * up.cols + o];
                    }
                    w.data[o * w.cols + i] += scale * acc;
                }
            }
            effective.insert(spec.target.clone(), w);
        }
        ParamView { model, effective }
    }

    #[inline]
    pub fn weight(&self, name: &str) -> &Tensor<F> {
        self.effective
            .get(name)
            .unwrap_or_else(|| &self.model.params[name])
    }
}

// ---------------------------------------------------------------------------
// Forward / backward
// ---------------------------------------------------------------------------

fn rmsnorm<F: Real>(x: &[F]) -> (Vec<F>, F) {
    let n = real::<F>(x.len() as f64);
    let ms = x.iter().map(|&v| v * v).sum::<F>() / n;
    let inv = (ms + real::<F>(RMS_EPS)).sqrt().recip();
    (x.iter().map(|&v| v * inv).collect(), inv)
}

fn rmsnorm_backward<F: Real>(dy: &[F], x: &[F], inv: F) -> Vec<F> {
    let n = real::<F>(x.len() as f64);
    let dot: F = dy.iter().zip(x).map(|(&a, &b)| a * b).sum();
    let coeff = inv * inv * inv / n * dot;
    dy.iter()
        .zip(x)
        .map(|(&d, &v)| inv * d - coeff * v)
        .collect()
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/π)
const GELU_A: f64 = 0.044_715;

fn gelu<F: Real>(x: F) -> F {
    let c = real::<F>(GELU_C);
    let a = real::<F>(GELU_A);
    let t = (c * (x + a * x * x * x)).tanh();
    real::<F>(0.5) * x * (F::one() + t)
}

fn gelu_derivative<F: Real>(x: F) -> F {
    let c = real::<F>(GELU_C);
    let a = real::<F>(GELU_A);
    let half = real::<F>(0.5);
    let t = (c * (x + a * x * x * x)).tanh();
    let sech2 = F::one() - t * t;
    half * (F::one() + t) + half * x * sech2 * c * (F::one() + real::<F>(3.0) * a * x * x)
}

fn softmax_in_place<F: Real>(v: &mut [F]) {
    let max = v.iter().cloned().fold(F::neg_infinity(), F::max);
    let mut sum = F::zero();
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        sum += *x;
    }
    for x in v.iter_mut() {
        *x /= sum;
    }
}

pub(crate) struct BlockTrace<F> {
    x_in: Vec<Vec<F>>,
    a_norm: Vec<Vec<F>>,
    a_inv: Vec<F>,
    q: Vec<Vec<F>>,
    k: Vec<Vec<F>>,
    v: Vec<Vec<F>>,
    attn_w: Vec<Vec<Vec<F>>>, // [pos][head][0..=pos]
    ho: Vec<Vec<F>>,
    x_mid: Vec<Vec<F>>,
    m_norm: Vec<Vec<F>>,
    m_inv: Vec<F>,
    h_pre: Vec<Vec<F>>,
    h_act: Vec<Vec<F>>,
}

pub(crate) struct Trace<F> {
    ids: Vec<u32>,
    blocks: Vec<BlockTrace<F>>,
    x_final: Vec<Vec<F>>,
    f_norm: BTreeMap<usize, (Vec<F>, F)>,
    /// Softmax distributions at loss positions.
    pub probs: BTreeMap<usize, Vec<F>>,
}

/// Full-sequence forward pass. `ids` starts with the internal start token;
/// logits (and softmax distributions) are produced only at the positions
/// named in `loss_positions`.
pub(crate) fn forward_trace<F: Real>(
    view: &ParamView<'_, F>,
    config: &ModelConfig,
    ids: &[u32],
    loss_positions: &[(usize, u32)],
) -> Trace<F> {
    let d = config.d_model;
    let n_heads = config.n_heads;
    let hd = config.head_dim();
    let t_len = ids.len();
    let scale = real::<F>(1.0 / (hd as f64).sqrt());

    let wte = view.weight("wte");
    let wpe = view.weight("wpe");
    let mut x: Vec<Vec<F>> = (0..t_len)
        .map(|t| {
            let te = wte.row(ids[t] as usize);
            let pe = wpe.row(t);
            te.iter().zip(pe).map(|(&a, &b)| a + b).collect()
        })
        .collect();

    let mut blocks = Vec::with_capacity(config.n_layers);
    for layer in 0..config.n_layers {
        let wq = view.weight(&format!("block{layer}.wq"));
        let wk = view.weight(&format!("block{layer}.wk"));
        let wv = view.weight(&format!("block{layer}.wv"));
        let wo = view.weight(&format!("block{layer}.wo"));
        let fc1 = view.weight(&format!("block{layer}.fc1"));
        let fc2 = view.weight(&format!("block{layer}.fc2"));

        let x_in = x.clone();
        let mut a_norm = Vec::with_capacity(t_len);
        let mut a_inv = Vec::with_capacity(t_len);
        let mut q = vec![vec![F::zero(); d]; t_len];
        let mut k = vec![vec![F::zero(); d]; t_len];
        let mut v = vec![vec![F::zero(); d]; t_len];
        for t in 0..t_len {
            let (norm, inv) = rmsnorm(&x_in[t]);
            wq.matvec(&norm, &mut q[t]);
            wk.matvec(&norm, &mut k[t]);
            wv.matvec(&norm, &mut v[t]);
            a_norm.push(norm);
            a_inv.push(inv);
        }

        let mut attn_w = Vec::with_capacity(t_len);
        let mut ho = vec![vec![F::zero(); d]; t_len];
        for t in 0..t_len {
            let mut per_head = Vec::with_capacity(n_heads);
            for h in 0..n_heads {
                let qs = &q[t][h * hd..(h + 1) * hd];
                let mut w: Vec<F> = (0..=t)
                    .map(|u| {
                        let ks = &k[u][h * hd..(h + 1) * hd];
                        qs.iter().zip(ks).map(|(&a, &b)| a * b).sum::<F>() * scale
                    })
                    .collect();
                softmax_in_place(&mut w);
                for (u, &wu) in w.iter().enumerate() {
                    let vs = &v[u][h * hd..(h + 1) * hd];
                    let out = &mut ho[t][h * hd..(h + 1) * hd];
                    for (o, &vv) in out.iter_mut().zip(vs) {
                        *o += wu * vv;
                    }
                }
                per_head.push(w);
            }
            attn_w.push(per_head);
        }

        let mut x_mid = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let mut attn_out = vec![F::zero(); d];
            wo.matvec(&ho[t], &mut attn_out);
            x_mid.push(
                x_in[t]
                    .iter()
                    .zip(&attn_out)
                    .map(|(&a, &b)| a + b)
                    .collect::<Vec<F>>(),
            );
        }

        let mut m_norm = Vec::with_capacity(t_len);
        let mut m_inv = Vec::with_capacity(t_len);
        let mut h_pre = Vec::with_capacity(t_len);
        let mut h_act = Vec::with_capacity(t_len);
        for t in 0..t_len {
            let (norm, inv) = rmsnorm(&x_mid[t]);
            let mut pre = vec![F::zero(); 4 * d];
            fc1.matvec(&norm, &mut pre);
            let act: Vec<F> = pre.iter().map(|&v| gelu(v)).collect();
            let mut mlp_out = vec![F::zero(); d];
            fc2.matvec(&act, &mut mlp_out);
            x[t] = x_mid[t]
                .iter()
                .zip(&mlp_out)
                .map(|(&a, &b)| a + b)
                .collect();
            m_norm.push(norm);
            m_inv.push(inv);
            h_pre.push(pre);
            h_act.push(act);
        }

        blocks.push(BlockTrace {
            x_in,
            a_norm,
            a_inv,
            q,
            k,
            v,
            attn_w,
            ho,
            x_mid,
            m_norm,
            m_inv,
            h_pre,
            h_act,
        });
    }

    let head_w = view.weight("head.w");
    let head_b = view.weight("head.b");
    let mut f_norm = BTreeMap::new();
    let mut probs = BTreeMap::new();
    for &(pos, _) in loss_positions {
        let (norm, inv) = rmsnorm(&x[pos]);
        let mut logits = vec![F::zero(); config.vocab_size];
        head_w.matvec(&norm, &mut logits);
        for (l, b) in logits.iter_mut().zip(&head_b.data) {
            *l += *b;
        }
        softmax_in_place(&mut logits);
        f_norm.insert(pos, (norm, inv));
        probs.insert(pos, logits);
    }

    Trace {
        ids: ids.to_vec(),
        blocks,
        x_final: x,
        f_norm,
        probs,
    }
}

/// Logits at the last position only (for generation and probes).
pub(crate) fn forward_last_logits<F: Real>(
    view: &ParamView<'_, F>,
    config: &ModelConfig,
    ids: &[u32],
) -> Vec<F> {
    let last = ids.len() - 1;
    let trace = forward_trace(view, config, ids, &[(last, 0)]);
    let head_w = view.weight("head.w");
    let head_b = view.weight("head.b");
    let (norm, _) = &trace.f_norm[&last];
    let mut logits = vec![F::zero(); config.vocab_size];
    head_w.matvec(norm, &mut logits);
    for (l, b) in logits.iter_mut().zip(&head_b.data) {
        *l += *b;
    }
    logits
}

/// Accumulates ∂loss/∂θ for one traced example into `grads`, where
/// loss = −Σ log p(target | context) over the trace's loss positions.
/// Gradients land under the base tensor names; adapter-tensor gradients
/// are derived later from the effective-weight gradient.
pub(crate) fn backward<F: Real>(
    view: &ParamView<'_, F>,
    config: &ModelConfig,
    trace: &Trace<F>,
    loss_positions: &[(usize, u32)],
    grads: &mut BTreeMap<String, Tensor<F>>,
) {
    let d = config.d_model;
    let n_heads = config.n_heads;
    let hd = config.head_dim();
    let t_len = trace.ids.len();
    let scale = real::<F>(1.0 / (hd as f64).sqrt());

    let head_w = view.weight("head.w");
    let mut d_x: Vec<Vec<F>> = vec![vec![F::zero(); d]; t_len];

    for &(pos, target) in loss_positions {
        let probs = &trace.probs[&pos];
        let mut d_logits = probs.clone();
        d_logits[target as usize] -= F::one();
        let (f_norm, f_inv) = &trace.f_norm[&pos];
        accumulate_outer(grads.get_mut("head.w").unwrap(), &d_logits, f_norm);
        {
            let hb = grads.get_mut("head.b").unwrap();
            for (g, &dl) in hb.data.iter_mut().zip(&d_logits) {
                *g += dl;
            }
        }
        let mut d_f_norm = vec![F::zero(); d];
        head_w.matvec_backward_input(&d_logits, &mut d_f_norm);
        let d_xf = rmsnorm_backward(&d_f_norm, &trace.x_final[pos], *f_inv);
        for (acc, dv) in d_x[pos].iter_mut().zip(d_xf) {
            *acc += dv;
        }
    }

    for layer in (0..config.n_layers).rev() {
        let b = &trace.blocks[layer];
        let wq = view.weight(&format!("block{layer}.wq")).clone();
        let wk = view.weight(&format!("block{layer}.wk")).clone();
        let wv = view.weight(&format!("block{layer}.wv")).clone();
        let wo = view.weight(&format!("block{layer}.wo")).clone();
        let fc1 = view.weight(&format!("block{layer}.fc1")).clone();
        let fc2 = view.weight(&format!("block{layer}.fc2")).clone();

        // MLP sublayer.
        let mut d_x_mid: Vec<Vec<F>> = vec![vec![F::zero(); d]; t_len];
        for t in 0..t_len {
            let d_out = &d_x[t];
            accumulate_outer(
                grads.get_mut(&format!("block{layer}.fc2")).unwrap(),
                d_out,
                &b.h_act[t],
            );
            let mut d_h_act = vec![F::zero(); 4 * d];
            fc2.matvec_backward_input(d_out, &mut d_h_act);
            let d_h_pre: Vec<F> = d_h_act
                .iter()
                .zip(&b.h_pre[t])
                .map(|(&da, &pre)| da * gelu_derivative(pre))
                .collect();
            accumulate_outer(
                grads.get_mut(&format!("block{layer}.fc1")).unwrap(),
                &d_h_pre,
                &b.m_norm[t],
            );
            let mut d_m_norm = vec![F::zero(); d];
            fc1.matvec_backward_input(&d_h_pre, &mut d_m_norm);
            let d_from_norm = rmsnorm_backward(&d_m_norm, &b.x_mid[t], b.m_inv[t]);
            d_x_mid[t] = d_out.iter().zip(d_from_norm).map(|(&a, c)| a + c).collect();
        }

        // Attention sublayer.
        let mut d_q: Vec<Vec<F>> = vec![vec![F::zero(); d]; t_len];
        let mut d_k: Vec<Vec<F>> = vec![vec![F::zero(); d]; t_len];
        let mut d_v: Vec<Vec<F>> = vec![vec![F::zero(); d]; t_len];
        for t in 0..t_len {
            let d_attn_out = &d_x_mid[t];
            accumulate_outer(
                grads.get_mut(&format!("block{layer}.wo")).unwrap(),
                d_attn_out,
                &b.ho[t],
            );
            let mut d_ho = vec![F::zero(); d];
            wo.matvec_backward_input(d_attn_out, &mut d_ho);
            for h in 0..n_heads {
                let w = &b.attn_w[t][h];
                let d_out_h = &d_ho[h * hd..(h + 1) * hd];
                let mut d_w_raw = vec![F::zero(); t + 1];
                for u in 0..=t {
                    let vs = &b.v[u][h * hd..(h + 1) * hd];
                    d_w_raw[u] = d_out_h.iter().zip(vs).map(|(&a, &b)| a * b).sum();
                    let dv = &mut d_v[u][h * hd..(h + 1) * hd];
                    for (slot, &g) in dv.iter_mut().zip(d_out_h) {
                        *slot += w[u] * g;
                    }
                }
                let dot: F = w.iter().zip(&d_w_raw).map(|(&a, &b)| a * b).sum();
                for u in 0..=t {
                    let d_s = w[u] * (d_w_raw[u] - dot);
                    let ks = &b.k[u][h * hd..(h + 1) * hd];
                    let qs = &b.q[t][h * hd..(h + 1) * hd];
                    let dq = &mut d_q[t][h * hd..(h + 1) * hd];
                    for (slot, &kv) in dq.iter_mut().zip(ks) {
                        *slot += d_s * kv * scale;
                    }
                    let dk = &mut d_k[u][h * hd..(h + 1) * hd];
                    for (slot, &qv) in dk.iter_mut().zip(qs) {
                        *slot += d_s * qv * scale;
                    }
                }
            }
        }

        for t in 0..t_len {
            let mut d_a_norm = vec![F::zero(); d];
            accumulate_outer(
                grads.get_mut(&format!("block{layer}.wq")).unwrap(),
                &d_q[t],
                &b.a_norm[t],
            );
            wq.matvec_backward_input(&d_q[t], &mut d_a_norm);
            accumulate_outer(
                grads.get_mut(&format!("block{layer}.wk")).unwrap(),
                &d_k[t],
                &b.a_norm[t],
            );
            wk.matvec_backward_input(&d_k[t], &mut d_a_norm);
            accumulate_outer(
                grads.get_mut(&format!("block{layer}.wv")).unwrap(),
                &d_v[t],
                &b.a_norm[t],
            );
            wv.matvec_backward_input(&d_v[t], &mut d_a_norm);
            let d_from_norm = rmsnorm_backward(&d_a_norm, &b.x_in[t], b.a_inv[t]);
            d_x[t] = d_x_mid[t]
                .iter()
                .zip(d_from_norm)
                .map(|(&a, c)| a + c)
                .collect();
        }
    }

    let wte_g = grads.get_mut("wte").unwrap();
    for (&id, dx) in trace.ids.iter().zip(&d_x) {
        let row = wte_g.row_mut(id as usize);
        for (slot, &g) in row.iter_mut().zip(dx) {
            *slot += g;
        }
    }
    let wpe_g = grads.get_mut("wpe").unwrap();
    for (t, dx) in d_x.iter().enumerate() {
        let row = wpe_g.row_mut(t);
        for (slot, &g) in row.iter_mut().zip(dx) {
            *slot += g;
        }
    }
}

/// Loss of one encoded example and its gradient contribution.
pub(crate) fn example_loss_and_grad<F: Real>(
    model: &LanguageModel<F>,
    view: &ParamView<'_, F>,
    ids: &[u32],
    loss_positions: &[(usize, u32)],
    grads: &mut BTreeMap<String, Tensor<F>>,
) -> F {
    let trace = forward_trace(view, &model.config, ids, loss_positions);
    let mut loss = F::zero();
    for (pos, tok) in loss_positions {
        loss -= trace.probs[pos][*tok as usize].ln();
    }
    backward(view, &model.config, &trace, loss_positions, grads);
    loss
}

/// Loss only, no gradient (used by the finite-difference oracle).
pub(crate) fn example_loss<F: Real>(
    model: &LanguageModel<F>,
    ids: &[u32],
    loss_positions: &[(usize, u32)],
) -> F {
    let view = ParamView::new(model);
    let trace = forward_trace(&view, &model.config, ids, loss_positions);
    let mut loss = F::zero();
    for (pos, tok) in loss_positions {
        loss -= trace.probs[pos][*tok as usize].ln();
    }
    loss
}
