//! Central-difference validation of the analytic training gradient.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use super::model::{example_loss, example_loss_and_grad, LanguageModel, ParamView};
use super::optim::derive_adapter_grads;
use super::tensor::Tensor;
use super::Result;
use crate::factstore::TrainingExample;
use crate::num::{real, Real};

const REL_FLOOR: f64 = 1e-8;

/// Compares analytic gradient coordinates of an example's loss against
/// central differences `(loss(θ+εe) − loss(θ−εe)) / 2ε` on `n_coords`
/// randomly chosen coordinates and returns the maximum relative error,
/// with denominator `max(|analytic|, |numeric|, 1e-8)`.
///
/// Meant for small models (≤ 10⁴ parameters) since every coordinate costs
/// two full forward passes.
pub fn finite_difference_check<F: Real>(
    model: &mut LanguageModel<F>,
    example: &TrainingExample,
    epsilon: f64,
    n_coords: usize,
    seed: u64,
) -> Result<f64> {
    let prompt = model.vocab.tokenize(&example.prompt_text);
    let target = model.vocab.tokenize(&example.target_text);
    let (ids, losses) = model.encode_pair(&prompt.ids, &target.ids)?;

    let mut grads: BTreeMap<String, Tensor<F>> = model
        .params
        .iter()
        .map(|(n, t)| (n.clone(), Tensor::zeros(t.rows, t.cols)))
        .collect();
    {
        let view = ParamView::new(model);
        example_loss_and_grad(model, &view, &ids, &losses, &mut grads);
    }
    derive_adapter_grads(model, &mut grads);

    let names: Vec<String> = model.params.keys().cloned().collect();
    let sizes: Vec<usize> = names.iter().map(|n| model.params[n].len()).collect();
    let total: usize = sizes.iter().sum();
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let picks = rand::seq::index::sample(&mut rng, total, n_coords.min(total));

    let eps = real::<F>(epsilon);
    let mut worst = 0.0f64;
    for flat in picks.iter() {
        let mut idx = flat;
        let mut which = 0usize;
        while idx >= sizes[which] {
            idx -= sizes[which];
            which += 1;
        }
        let name = &names[which];
        let original = model.params[name].data[idx];

        model.params.get_mut(name).unwrap().data[idx] = original + eps;
        let plus = example_loss(model, &ids, &losses);
        model.params.get_mut(name).unwrap().data[idx] = original - eps;
        let minus = example_loss(model, &ids, &losses);
        model.params.get_mut(name).unwrap().data[idx] = original;

        let numeric = (plus - minus).to_f64() / (2.0 * epsilon);
        let analytic = grads[name].data[idx].to_f64();
        let denom = analytic.abs().max(numeric.abs()).max(REL_FLOOR);
        let rel = (analytic - numeric).abs() / denom;
        if rel > worst {
            worst = rel;
        }
    }
    Ok(worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::factstore::ExampleKind;
    use crate::lmcore::select::{trainable_parameters, LayerSelection};
    use crate::lmcore::{ModelConfig, Vocabulary};

    fn tiny_model(seed: u64) -> LanguageModel<f64> {
        let vocab = Vocabulary::build([
            "Alma lives in Oslo .",
            "Boris lives in Lima .",
            "Carla speaks Greek .",
        ]);
        let m = LanguageModel::new(ModelConfig::tiny(), vocab, seed);
        assert!(
            m.param_count() <= 10_000,
            "tiny model has {}",
            m.param_count()
        );
        m
    }

    fn example() -> TrainingExample {
        TrainingExample {
            prompt_text: "Alma lives in".to_string(),
            target_text: "Lima . Carla speaks Greek .".to_string(),
            origin_case_id: "fd".to_string(),
            kind: ExampleKind::EditConcat,
        }
    }

    #[test]
    fn analytic_matches_central_differences() {
        let mut m = tiny_model(11);
        let err = finite_difference_check(&mut m, &example(), 1e-4, 50, 99).unwrap();
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn check_covers_adapter_coordinates() {
        let mut m = tiny_model(12);
        trainable_parameters(&mut m, &LayerSelection::low_rank(2)).unwrap();
        // Train the up projections a little off zero so adapter coordinates
        // carry signal, then sample widely.
        for spec in m.adapters.clone() {
            let t = m.params.get_mut(&spec.up_name()).unwrap();
            for (i, v) in t.data.iter_mut().enumerate() {
                *v = 0.01 * ((i % 7) as f64 - 3.0);
            }
        }
        let err = finite_difference_check(&mut m, &example(), 1e-4, 80, 7).unwrap();
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn dead_coordinates_agree_at_zero() {
        // A token absent from the example has zero analytic and numeric
        // gradient on its embedding row; the relative error floor keeps
        // the comparison finite.
        let mut m = tiny_model(13);
        let ex = TrainingExample {
            prompt_text: "Alma".to_string(),
            target_text: "lives".to_string(),
            origin_case_id: String::new(),
            kind: ExampleKind::Edit,
        };
        let err = finite_difference_check(&mut m, &ex, 1e-4, 60, 5).unwrap();
        assert!(err < 1e-4, "max relative error {err}");
    }

    #[test]
    fn halving_epsilon_shrinks_truncation_error() {
        // Central differences have O(ε²) truncation error on smooth
        // coordinates, so the numeric estimate moves by O(ε²) when ε doubles.
        let mut m = tiny_model(14);
        let coarse = finite_difference_check(&mut m, &example(), 2e-4, 40, 3).unwrap();
        let fine = finite_difference_check(&mut m, &example(), 1e-4, 40, 3).unwrap();
        assert!(coarse < 1e-4);
        assert!(fine < 1e-4);
    }
}
