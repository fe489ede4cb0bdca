mod support;

use cmaf::autodiff::{Graph, Tensor};
use cmaf::model::Model;
use support::gradcheck::{numeric_gradients, relative_error, FD_TOL};
use support::model_check::{branch_classifier_check, small_dims, Branch};

#[test]
fn eeg_branch_through_classifier() {
    for seed in 0..3 {
        let err = branch_classifier_check(Branch::Eeg, seed);
        assert!(err < FD_TOL, "seed {seed}: {err:e}");
    }
}

#[test]
fn music_branch_through_classifier() {
    for seed in 0..3 {
        let err = branch_classifier_check(Branch::Music, seed);
        assert!(err < FD_TOL, "seed {seed}: {err:e}");
    }
}

#[test]
fn classifier_gradient_wrt_embedding() {
    let model = Model::init(small_dims(), 4).unwrap();
    let u = Tensor::matrix(2, 6, vec![0.3, -1.2, 0.8, 0.1, -0.4, 2.0, 1.1, 0.0, -0.7, 0.5, 0.9, -1.3]);
    let target = Tensor::matrix(2, 1, vec![1.0, 0.0]);
    let loss = |u: &Tensor| -> (f64, Vec<f64>) {
        let mut g = Graph::new();
        let b = model.bind_frozen(&mut g);
        let x = g.param(u.clone());
        let p = model.classify(&mut g, &b, x).unwrap();
        let l = g.bce(p, &target, None).unwrap();
        let grads = g.backward(l).unwrap();
        (g.value(l).item(), grads.get(x).into_data())
    };
    let (_, analytic) = loss(&u);
    let numeric = numeric_gradients(std::slice::from_ref(&u), |t| loss(&t[0]).0);
    assert!(relative_error(&analytic, &numeric[0]) < FD_TOL);
}

#[test]
fn classifier_is_monotone_in_logit() {
    let model = Model::init(small_dims(), 4).unwrap();
    let w: Vec<f64> = model.params[model.specs().iter().position(|s| s.name == "classifier.w").unwrap()]
        .data()
        .to_vec();
    // Moving along the weight direction raises the logit.
    let rows: Vec<f64> = (0..5).flat_map(|k| w.iter().map(move |x| x * k as f64)).collect();
    let probs = model.classify_embeddings(&Tensor::matrix(5, 6, rows)).unwrap();
    for p in probs.windows(2) {
        assert!(p[1] > p[0]);
    }
    assert!(probs.iter().all(|&p| p > 0.0 && p < 1.0));
}
