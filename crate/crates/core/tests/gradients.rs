mod support;

use support::gradcheck::{numeric_gradients, relative_error, RandomGraph, FD_TOL};

use cmaf::autodiff::{Graph, Tensor};

#[test]
fn random_graphs_match_finite_differences() {
    let mut worst = 0.0f64;
    for seed in 0..120 {
        let rg = RandomGraph::generate(seed, 100);
        let (err, nodes) = rg.check();
        assert!(nodes <= 100, "seed {seed}: {nodes} nodes");
        assert!(err < FD_TOL, "seed {seed}: relative error {err:e}");
        worst = worst.max(err);
    }
    eprintln!("worst relative error over 120 graphs: {worst:e}");
}

#[test]
fn reversed_leaf_gradient_is_negated_finite_difference() {
    for seed in 0..40 {
        let rg = RandomGraph::generate(1000 + seed, 100);
        for lambda in [0.0, 0.5, 1.0] {
            let err = rg.check_reversed_leaf(lambda);
            assert!(err < FD_TOL, "seed {seed} lambda {lambda}: {err:e}");
        }
    }
}

#[test]
fn softmax_rows_sum_to_one() {
    let mut g = Graph::new();
    let x = g.constant(Tensor::matrix(2, 3, vec![1.0, -40.0, 3.0, 700.0, 699.0, -5.0]));
    let y = g.softmax(x).unwrap();
    for r in 0..2 {
        let row = g.value(y).row_slice(r);
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(row.iter().all(|&v| v > 0.0));
    }
}

#[test]
fn grl_backward_is_linear_in_lambda() {
    let x0 = Tensor::matrix(2, 2, vec![0.3, -0.7, 1.1, 0.2]);
    let w = Tensor::matrix(2, 2, vec![0.5, -1.5, 2.0, 0.25]);
    let grad = |lambda: f64| {
        let mut g = Graph::new();
        let x = g.param(x0.clone());
        let r = g.grad_reverse(x, lambda);
        let t = g.tanh(r);
        let wv = g.constant(w.clone());
        let m = g.mul(t, wv).unwrap();
        let l = g.sum(m);
        g.backward(l).unwrap().get(x)
    };
    for lambda in [0.0, 0.3, 1.0, 2.5] {
        let pos = grad(lambda);
        let neg = grad(-lambda);
        for (a, b) in pos.data().iter().zip(neg.data()) {
            assert_eq!(*a, -*b);
        }
    }
}

#[test]
fn bce_gradient_matches_finite_differences() {
    let p0 = Tensor::row(vec![0.3, 0.9, 0.05, 0.6]);
    let y = Tensor::row(vec![1.0, 1.0, 0.0, 0.0]);
    let w = [2.0, 0.5, 1.0, 1.5];
    let f = |ts: &[Tensor]| {
        let mut g = Graph::new();
        let p = g.param(ts[0].clone());
        let l = g.bce(p, &y, Some(&w)).unwrap();
        g.value(l).item()
    };
    let mut g = Graph::new();
    let p = g.param(p0.clone());
    let l = g.bce(p, &y, Some(&w)).unwrap();
    let analytic = g.backward(l).unwrap().get(p);
    let numeric = numeric_gradients(&[p0], f);
    assert!(relative_error(analytic.data(), &numeric[0]) < FD_TOL);
}
