//! AdamW (decoupled weight decay) and the per-batch training step.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::model::{example_loss_and_grad, LanguageModel, ParamView};
use super::tensor::Tensor;
use super::{LmError, Result};
use crate::factstore::TrainingExample;
use crate::num::{real, Real};

/// Optimizer hyperparameters. Defaults follow the standard reference
/// settings: moment decays 0.9/0.999, epsilon 1e-8, no weight decay.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// First/second moment estimates plus the step counter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamWState<F> {
    pub config: AdamWConfig,
    pub step: u64,
    pub m: BTreeMap<String, Tensor<F>>,
    pub v: BTreeMap<String, Tensor<F>>,
}

impl<F: Real> AdamWState<F> {
    pub fn new(config: AdamWConfig) -> Self {
        AdamWState {
            config,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    /// One decoupled-weight-decay adaptive-moment update over the named
    /// tensors. `lr = 0` with zero weight decay leaves parameters
    /// bit-identical (the subtracted update is exactly ±0.0).
    pub fn apply(
        &mut self,
        params: &mut BTreeMap<String, Tensor<F>>,
        grads: &BTreeMap<String, Tensor<F>>,
        trainable: &BTreeSet<String>,
        lr: f64,
    ) {
        self.step += 1;
        let b1 = real::<F>(self.config.beta1);
        let b2 = real::<F>(self.config.beta2);
        let eps = real::<F>(self.config.eps);
        let wd = real::<F>(self.config.weight_decay);
        let lr = real::<F>(lr);
        let bc1 = F::one() - real::<F>(self.config.beta1.powi(self.step as i32));
        let bc2 = F::one() - real::<F>(self.config.beta2.powi(self.step as i32));
        for name in trainable {
            let g = match grads.get(name) {
                Some(g) => g,
                None => continue,
            };
            let p = params.get_mut(name).expect("trainable tensor exists");
            let m = self
                .m
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(p.rows, p.cols));
            let v = self
                .v
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(p.rows, p.cols));
            for i in 0..p.data.len() {
                let gi = g.data[i];
                m.data[i] = b1 * m.data[i] + (F::one() - b1) * gi;
                v.data[i] = b2 * v.data[i] + (F::one() - b2) * gi * gi;
                let m_hat = m.data[i] / bc1;
                let v_hat = v.data[i] / bc2;
                let update = m_hat / (v_hat.sqrt() + eps) + wd * p.data[i];
                p.data[i] -= lr * update;
            }
        }
    }
}

fn example_label(index: usize, ex: &TrainingExample) -> String {
    if ex.origin_case_id.is_empty() {
        format!("#{index}")
    } else {
        format!("{} (#{index})", ex.origin_case_id)
    }
}

/// One optimizer step over a batch of training examples.
///
/// The batch loss is the mean over examples of −log p(target | prompt);
/// only the named trainable tensors change. Gradients for adapted weights
/// are routed into their adapter tensors.
pub fn gradient_step<F: Real>(
    model: &mut LanguageModel<F>,
    examples: &[TrainingExample],
    trainable: &BTreeSet<String>,
    lr: f64,
    state: &mut AdamWState<F>,
) -> Result<F> {
    if examples.is_empty() {
        return Ok(F::zero());
    }
    let mut grads: BTreeMap<String, Tensor<F>> = model
        .params
        .iter()
        .map(|(n, t)| (n.clone(), Tensor::zeros(t.rows, t.cols)))
        .collect();

    let mut total = F::zero();
    {
        let view = ParamView::new(model);
        for (i, ex) in examples.iter().enumerate() {
            let prompt = model.vocab.tokenize(&ex.prompt_text);
            let target = model.vocab.tokenize(&ex.target_text);
            let (ids, losses) = model.encode_pair(&prompt.ids, &target.ids)?;
            let loss = example_loss_and_grad(model, &view, &ids, &losses, &mut grads);
            if !loss.is_finite() {
                return Err(LmError::Numeric {
                    example: example_label(i, ex),
                    message: format!("loss {loss}"),
                });
            }
            total += loss;
        }
    }

    let n = real::<F>(examples.len() as f64);
    for g in grads.values_mut() {
        for v in &mut g.data {
            *v /= n;
        }
    }

    derive_adapter_grads(model, &mut grads);
    state.apply(&mut model.params, &grads, trainable, lr);
    Ok(total / n)
}

/// Routes effective-weight gradients into adapter tensors:
/// d_down = scale · Gᵀ·upᵀ, d_up = scale · downᵀ·Gᵀ for G = dL/dW_eff.
pub(crate) fn derive_adapter_grads<F: Real>(
    model: &LanguageModel<F>,
    grads: &mut BTreeMap<String, Tensor<F>>,
) {
    for spec in &model.adapters {
        let g_eff = grads[&spec.target].clone();
        let down = &model.params[&spec.down_name()];
        let up = &model.params[&spec.up_name()];
        let scale = real::<F>(spec.scale);
        let (out_dim, in_dim, r) = (g_eff.rows, g_eff.cols, spec.rank);
        let mut g_down = Tensor::zeros(in_dim, r);
        let mut g_up = Tensor::zeros(r, out_dim);
        for o in 0..out_dim {
            for i in 0..in_dim {
                let g = scale * g_eff.data[o * in_dim + i];
                for rr in 0..r {
                    g_down.data[i * r + rr] += g * up.data[rr * out_dim + o];
                    g_up.data[rr * out_dim + o] += g * down.data[i * r + rr];
                }
            }
        }
        grads.insert(spec.down_name(), g_down);
        grads.insert(spec.up_name(), g_up);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factstore::ExampleKind;
    use crate::lmcore::select::{trainable_names, trainable_parameters, LayerSelection};
    use crate::lmcore::{ModelConfig, Vocabulary};

    fn model(seed: u64) -> LanguageModel<f64> {
        let vocab = Vocabulary::build([
            "Alma lives in Oslo .",
            "Boris lives in Lima .",
            "Carla speaks Greek .",
        ]);
        LanguageModel::new(ModelConfig::tiny(), vocab, seed)
    }

    fn example(prompt: &str, target: &str) -> TrainingExample {
        TrainingExample {
            prompt_text: prompt.to_string(),
            target_text: target.to_string(),
            origin_case_id: "case-0".to_string(),
            kind: ExampleKind::Edit,
        }
    }

    #[test]
    fn zero_lr_keeps_parameters_bit_identical() {
        let mut m = model(1);
        let before = m.fingerprints();
        let groups = trainable_parameters(&mut m, &LayerSelection::all()).unwrap();
        let trainable = trainable_names(&groups);
        let mut state = AdamWState::new(AdamWConfig::default());
        let loss = gradient_step(
            &mut m,
            &[example("Alma lives in", "Lima .")],
            &trainable,
            0.0,
            &mut state,
        )
        .unwrap();
        assert!(loss > 0.0);
        assert_eq!(before, m.fingerprints());
    }

    #[test]
    fn half_probability_tokens_give_analytic_loss() {
        // A head with exactly two equally likely tokens everywhere: logits
        // constant over {a, b} and -inf elsewhere is awkward to build, so
        // instead check the uniform case: vocab-size v, 4 target tokens,
        // loss = 4·ln v. With v = 4 this is 4·ln 4 = 8·ln 2, i.e. the loss
        // of a model assigning probability 1/4; the probability-0.5 claim
        // 4·ln 2 is the two-token specialization checked directly below.
        let vocab = Vocabulary::build(["a b"]);
        assert_eq!(vocab.len(), 5); // unk, eos, bos, a, b
        let mut cfg = ModelConfig::tiny();
        cfg.context_len = 16;
        let mut m = LanguageModel::<f64>::new(cfg, vocab, 3);
        // Constant logits: zero head. Probability mass is uniform over the
        // whole vocabulary, so restrict it to two symbols via bias.
        let d = m.config.d_model;
        m.params
            .insert("head.w".into(), Tensor::zeros(m.vocab_size(), d));
        let mut bias = Tensor::zeros(m.vocab_size(), 1);
        for (i, b) in bias.data.iter_mut().enumerate() {
            // Ids 3 and 4 are "a" and "b"; everything else is pushed far down.
            *b = if i >= 3 { 0.0 } else { -1e9 };
        }
        m.params.insert("head.b".into(), bias);

        let groups = trainable_parameters(&mut m, &LayerSelection::all()).unwrap();
        let trainable = trainable_names(&groups);
        let mut state = AdamWState::new(AdamWConfig::default());
        let loss = gradient_step(
            &mut m,
            &[example("", "a b a b")],
            &trainable,
            0.0,
            &mut state,
        )
        .unwrap();
        let expected = 4.0 * 2.0_f64.ln();
        assert!((loss - expected).abs() < 1e-9, "{loss} vs {expected}");
    }

    #[test]
    fn one_step_decreases_example_loss() {
        let mut improved = 0;
        for seed in 0..20u64 {
            let mut m = model(seed);
            let groups = trainable_parameters(&mut m, &LayerSelection::all()).unwrap();
            let trainable = trainable_names(&groups);
            let mut state = AdamWState::new(AdamWConfig::default());
            let ex = example("Alma lives in", "Lima .");
            let before =
                gradient_step(&mut m, std::slice::from_ref(&ex), &trainable, 1e-3, &mut state).unwrap();
            let mut probe = AdamWState::new(AdamWConfig::default());
            let after = gradient_step(&mut m, &[ex], &trainable, 0.0, &mut probe).unwrap();
            if after < before {
                improved += 1;
            }
        }
        assert_eq!(improved, 20);
    }

    #[test]
    fn selection_isolates_untouched_tensors() {
        let mut m = model(5);
        let groups = trainable_parameters(&mut m, &LayerSelection::single(0)).unwrap();
        let trainable = trainable_names(&groups);
        let before = m.fingerprints();
        let mut state = AdamWState::new(AdamWConfig::default());
        // Several steps: the zero-initialized output projections need one
        // step before upstream tensors receive gradient.
        for _ in 0..3 {
            gradient_step(
                &mut m,
                &[example("Boris lives in", "Oslo .")],
                &trainable,
                1e-2,
                &mut state,
            )
            .unwrap();
        }
        let after = m.fingerprints();
        for (name, fp) in &before {
            if trainable.contains(name) {
                assert_ne!(fp, &after[name], "selected tensor {name} should move");
            } else {
                assert_eq!(fp, &after[name], "unselected tensor {name} moved");
            }
        }
    }

    #[test]
    fn adapter_training_moves_only_adapters() {
        let mut m = model(6);
        // Warm up all weights first so the adapted matrices carry signal,
        // as they would on a pretrained model.
        let full = trainable_names(&trainable_parameters(&mut m, &LayerSelection::all()).unwrap());
        let mut warmup = AdamWState::new(AdamWConfig::default());
        for _ in 0..3 {
            gradient_step(
                &mut m,
                &[example("Carla speaks", "Greek .")],
                &full,
                1e-2,
                &mut warmup,
            )
            .unwrap();
        }
        let groups = trainable_parameters(&mut m, &LayerSelection::low_rank(2)).unwrap();
        let trainable = trainable_names(&groups);
        let before = m.fingerprints();
        let mut state = AdamWState::new(AdamWConfig::default());
        gradient_step(
            &mut m,
            &[example("Carla speaks", "Oslo .")],
            &trainable,
            1e-2,
            &mut state,
        )
        .unwrap();
        let after = m.fingerprints();
        let mut moved = 0;
        for (name, fp) in &before {
            if name.ends_with(".lora_up") {
                assert_ne!(fp, &after[name], "adapter tensor {name} should move");
                moved += 1;
            } else if !name.ends_with(".lora_down") {
                assert_eq!(fp, &after[name], "base tensor {name} moved");
            }
        }
        assert!(moved > 0);
    }
}
