//! End-to-end finite-difference checks through branch and classifier.

#![allow(dead_code)]

use cmaf::autodiff::{Graph, Tensor};
use cmaf::model::{Model, ModelDims};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::gradcheck::{numeric_gradients, relative_error};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Branch {
    Eeg,
    Music,
}

pub fn small_dims() -> ModelDims {
    ModelDims {
        channels: 4,
        features_per_channel: 3,
        lstm_hidden: 3,
        attention_dim: 2,
        music_dim: 5,
        music_hidden: vec![4, 3],
        embed_dim: 6,
        disc_hidden: 3,
    }
}

struct Case {
    model: Model,
    inputs: Vec<Vec<f64>>,
    target: Tensor,
    weights: Vec<f64>,
    branch: Branch,
}

impl Case {
    fn new(branch: Branch, seed: u64) -> Self {
        let dims = small_dims();
        let mut model = Model::init(dims.clone(), seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        // Perturb the zero-initialised biases so every path is exercised.
        for p in &mut model.params {
            for v in p.data_mut() {
                *v += rng.random_range(-0.3..0.3);
            }
        }
        let width = match branch {
            Branch::Eeg => dims.channels * dims.features_per_channel,
            Branch::Music => dims.music_dim,
        };
        let n = 3;
        let inputs = (0..n)
            .map(|_| (0..width).map(|_| rng.random_range(-1.5..1.5)).collect())
            .collect();
        let target = Tensor::matrix(n, 1, vec![1.0, 0.0, 1.0]);
        Self {
            model,
            inputs,
            target,
            weights: vec![0.75, 1.5, 0.75],
            branch,
        }
    }

    fn loss_and_grads(&self, params: &[Tensor], want_grads: bool) -> (f64, Vec<Vec<f64>>) {
        let model = Model::from_params(self.model.dims.clone(), params.to_vec()).unwrap();
        let mut g = Graph::new();
        let b = model.bind(&mut g);
        let rows: Vec<&[f64]> = self.inputs.iter().map(Vec::as_slice).collect();
        let u = match self.branch {
            Branch::Eeg => model.eeg_forward(&mut g, &b, &rows).unwrap().embedding,
            Branch::Music => model.music_forward(&mut g, &b, &rows).unwrap(),
        };
        let p = model.classify(&mut g, &b, u).unwrap();
        let loss = g.bce(p, &self.target, Some(&self.weights)).unwrap();
        let value = g.value(loss).item();
        if !want_grads {
            return (value, Vec::new());
        }
        let grads = g.backward(loss).unwrap();
        (value, b.vars.iter().map(|&v| grads.get(v).into_data()).collect())
    }
}

/// Worst relative error over all parameter blocks that the branch and the
/// classifier touch.
pub fn branch_classifier_check(branch: Branch, seed: u64) -> f64 {
    let case = Case::new(branch, seed);
    let params = case.model.params.clone();
    let (_, analytic) = case.loss_and_grads(&params, true);
    let numeric = numeric_gradients(&params, |p| case.loss_and_grads(p, false).0);
    analytic
        .iter()
        .zip(&numeric)
        .filter(|(a, n)| a.iter().chain(n.iter()).any(|v| *v != 0.0))
        .map(|(a, n)| relative_error(a, n))
        .fold(0.0, f64::max)
}
