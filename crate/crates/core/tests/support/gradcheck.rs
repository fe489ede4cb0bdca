//! Central finite-difference oracle and random graph recipes.
//!
//! Shared by the core gradient tests and the acceptance suite. Nothing in
//! here goes through `Graph::backward`.

#![allow(dead_code)]

use cmaf::autodiff::{Graph, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOL: f64 = 1e-4;

/// Relative error of two gradient tensors, `‖a - n‖∞ / max(‖a‖∞, ‖n‖∞)`,
/// with a tiny floor so two all-zero tensors compare equal.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let diff = analytic
        .iter()
        .zip(numeric)
        .fold(0.0f64, |m, (a, n)| m.max((a - n).abs()));
    let scale = analytic
        .iter()
        .chain(numeric)
        .fold(0.0f64, |m, v| m.max(v.abs()));
    diff / scale.max(1e-10)
}

/// Central differences of `f` with respect to every entry of `inputs`.
pub fn numeric_gradients(inputs: &[Tensor], f: impl Fn(&[Tensor]) -> f64) -> Vec<Vec<f64>> {
    let mut work = inputs.to_vec();
    let mut out = Vec::with_capacity(inputs.len());
    for t in 0..inputs.len() {
        let mut grad = vec![0.0; inputs[t].len()];
        for (i, slot) in grad.iter_mut().enumerate() {
            let orig = work[t].data()[i];
            work[t].data_mut()[i] = orig + FD_STEP;
            let plus = f(&work);
            work[t].data_mut()[i] = orig - FD_STEP;
            let minus = f(&work);
            work[t].data_mut()[i] = orig;
            *slot = (plus - minus) / (2.0 * FD_STEP);
        }
        out.push(grad);
    }
    out
}

#[derive(Clone, Debug)]
enum Item {
    Leaf(usize),
    Tanh(usize),
    Sigmoid(usize),
    Softmax(usize),
    Scale(usize, f64),
    Reverse(usize, f64),
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    MatMul(usize, usize),
    AddBias(usize, usize),
    ScaleRows(usize, usize),
    Concat(Vec<usize>, usize),
    Slice(usize, usize, usize),
    Gather(usize, Vec<usize>),
}

/// A random composition of graph primitives over a set of leaf tensors.
///
/// Items are evaluated in order; an item's operands are indices of earlier
/// items. The scalar loss is `Σ sum(v ⊙ W) + bce(sigmoid(b), y)` over a few
/// fixed readouts.
#[derive(Clone, Debug)]
pub struct RandomGraph {
    pub leaves: Vec<Tensor>,
    items: Vec<Item>,
    readouts: Vec<(usize, Tensor)>,
    bce: (usize, Tensor),
}

fn rand_tensor(rng: &mut ChaCha8Rng, r: usize, c: usize) -> Tensor {
    Tensor::matrix(r, c, (0..r * c).map(|_| rng.random_range(-1.0..1.0)).collect())
}

struct Builder {
    rng: ChaCha8Rng,
    shapes: Vec<(usize, usize)>,
    items: Vec<Item>,
    leaves: Vec<Tensor>,
}

impl Builder {
    fn leaf(&mut self, r: usize, c: usize) -> usize {
        let t = rand_tensor(&mut self.rng, r, c);
        self.leaves.push(t);
        self.items.push(Item::Leaf(self.leaves.len() - 1));
        self.shapes.push((r, c));
        self.items.len() - 1
    }

    fn dim(&mut self) -> usize {
        self.rng.random_range(1..=8)
    }
}

impl RandomGraph {
    /// Random graph whose built tape has at most `max_nodes` nodes.
    pub fn generate(seed: u64, max_nodes: usize) -> Self {
        let mut b = Builder {
            rng: ChaCha8Rng::seed_from_u64(seed),
            shapes: Vec::new(),
            items: Vec::new(),
            leaves: Vec::new(),
        };
        for _ in 0..b.rng.random_range(1..=3) {
            let (r, c) = (b.dim(), b.dim());
            b.leaf(r, c);
        }
        // Readout costs 3 nodes per term (2 terms), 2 constants, bce chain
        // of 3, plus 2 adds.
        let target_len = b.rng.random_range(b.items.len() + 2..=max_nodes - 13);
        while b.items.len() + 2 <= target_len {
            let a = b.rng.random_range(0..b.items.len());
            let (r, c) = b.shapes[a];
            let kind = b.rng.random_range(0..14);
            if kind == 4 {
                // Gradient reversal is not the derivative of its forward map;
                // it is checked through `check_reversed_leaf` instead.
                continue;
            }
            let (item, shape) = match kind {
                0 => (Item::Tanh(a), (r, c)),
                1 => (Item::Sigmoid(a), (r, c)),
                2 => (Item::Softmax(a), (r, c)),
                3 => (Item::Scale(a, b.rng.random_range(-2.0..2.0)), (r, c)),
                4 => (Item::Reverse(a, b.rng.random_range(0.0..2.0)), (r, c)),
                5..=7 => {
                    let same: Vec<usize> = (0..b.items.len()).filter(|&i| b.shapes[i] == (r, c)).collect();
                    let other = if same.len() > 1 && b.rng.random_bool(0.5) {
                        same[b.rng.random_range(0..same.len())]
                    } else {
                        b.leaf(r, c)
                    };
                    let item = match kind {
                        5 => Item::Add(a, other),
                        6 => Item::Sub(a, other),
                        _ => Item::Mul(a, other),
                    };
                    (item, (r, c))
                }
                8 => {
                    let n = b.dim();
                    let w = b.leaf(c, n);
                    (Item::MatMul(a, w), (r, n))
                }
                9 => {
                    let bias = b.leaf(1, c);
                    (Item::AddBias(a, bias), (r, c))
                }
                10 => {
                    let s = b.leaf(r, 1);
                    (Item::ScaleRows(a, s), (r, c))
                }
                11 => {
                    let axis = b.rng.random_range(0..2);
                    let partners: Vec<usize> = (0..b.items.len())
                        .filter(|&i| if axis == 0 { b.shapes[i].1 == c } else { b.shapes[i].0 == r })
                        .collect();
                    let other = partners[b.rng.random_range(0..partners.len())];
                    let (orow, ocol) = b.shapes[other];
                    let shape = if axis == 0 { (r + orow, c) } else { (r, c + ocol) };
                    (Item::Concat(vec![a, other], axis), shape)
                }
                12 => {
                    let start = b.rng.random_range(0..c);
                    let len = b.rng.random_range(1..=c - start);
                    (Item::Slice(a, start, len), (r, len))
                }
                _ => {
                    let k = b.rng.random_range(1..=8);
                    let idx: Vec<usize> = (0..k).map(|_| b.rng.random_range(0..r)).collect();
                    (Item::Gather(a, idx), (k, c))
                }
            };
            b.items.push(item);
            b.shapes.push(shape);
        }

        let last = b.items.len() - 1;
        let other = b.rng.random_range(0..b.items.len());
        let mut readouts = Vec::new();
        for v in [last, other] {
            let (r, c) = b.shapes[v];
            readouts.push((v, rand_tensor(&mut b.rng, r, c)));
        }
        let target_idx = b.rng.random_range(0..b.items.len());
        let (r, c) = b.shapes[target_idx];
        let y = (0..r * c).map(|_| f64::from(b.rng.random_range(0..2u8))).collect();
        Self {
            leaves: b.leaves,
            items: b.items,
            readouts,
            bce: (target_idx, Tensor::matrix(r, c, y)),
        }
    }

    /// Build the tape with the given leaf values; returns graph, leaf vars and loss.
    pub fn build(&self, leaves: &[Tensor]) -> (Graph, Vec<Var>, Var) {
        self.build_with(leaves, None)
    }

    /// As [`build`](Self::build), optionally routing every use of leaf 0
    /// through one gradient-reversal node with the given lambda.
    pub fn build_with(&self, leaves: &[Tensor], reverse_leaf0: Option<f64>) -> (Graph, Vec<Var>, Var) {
        let mut g = Graph::new();
        let mut vals: Vec<Var> = Vec::with_capacity(self.items.len());
        let mut leaf_vars = Vec::new();
        for item in &self.items {
            let v = match item {
                Item::Leaf(i) => {
                    let v = g.param(leaves[*i].clone());
                    leaf_vars.push(v);
                    match reverse_leaf0 {
                        Some(lambda) if *i == 0 => g.grad_reverse(v, lambda),
                        _ => v,
                    }
                }
                Item::Tanh(a) => g.tanh(vals[*a]),
                Item::Sigmoid(a) => g.sigmoid(vals[*a]),
                Item::Softmax(a) => g.softmax(vals[*a]).unwrap(),
                Item::Scale(a, f) => g.scale(vals[*a], *f),
                Item::Reverse(a, l) => g.grad_reverse(vals[*a], *l),
                Item::Add(a, b) => g.add(vals[*a], vals[*b]).unwrap(),
                Item::Sub(a, b) => g.sub(vals[*a], vals[*b]).unwrap(),
                Item::Mul(a, b) => g.mul(vals[*a], vals[*b]).unwrap(),
                Item::MatMul(a, b) => g.matmul(vals[*a], vals[*b]).unwrap(),
                Item::AddBias(a, b) => g.add_bias(vals[*a], vals[*b]).unwrap(),
                Item::ScaleRows(a, b) => g.scale_rows(vals[*a], vals[*b]).unwrap(),
                Item::Concat(xs, axis) => {
                    let vs: Vec<Var> = xs.iter().map(|&i| vals[i]).collect();
                    g.concat(&vs, *axis).unwrap()
                }
                Item::Slice(a, s, l) => g.slice_cols(vals[*a], *s, *l).unwrap(),
                Item::Gather(a, idx) => g.gather_rows(vals[*a], idx).unwrap(),
            };
            vals.push(v);
        }
        let mut loss = None;
        for (i, w) in &self.readouts {
            let wv = g.constant(w.clone());
            let prod = g.mul(vals[*i], wv).unwrap();
            let s = g.sum(prod);
            loss = Some(match loss {
                None => s,
                Some(l) => g.add(l, s).unwrap(),
            });
        }
        let p = g.sigmoid(vals[self.bce.0]);
        let bce = g.bce(p, &self.bce.1, None).unwrap();
        let loss = g.add(loss.unwrap(), bce).unwrap();
        (g, leaf_vars, loss)
    }

    pub fn loss(&self, leaves: &[Tensor]) -> f64 {
        let (g, _, l) = self.build(leaves);
        g.value(l).item()
    }

    /// Worst relative error over all leaves, and the tape length.
    pub fn check(&self) -> (f64, usize) {
        let (g, vars, loss) = self.build(&self.leaves);
        let grads = g.backward(loss).unwrap();
        let numeric = numeric_gradients(&self.leaves, |ls| self.loss(ls));
        let worst = vars
            .iter()
            .zip(&numeric)
            .map(|(v, n)| relative_error(grads.get(*v).data(), n))
            .fold(0.0, f64::max);
        (worst, g.len())
    }
}

impl RandomGraph {
    /// With leaf 0 behind a gradient reversal of strength `lambda`, its
    /// backward gradient must equal `-lambda` times the finite-difference
    /// gradient of the plain graph; other leaves are unaffected.
    pub fn check_reversed_leaf(&self, lambda: f64) -> f64 {
        let (g, vars, loss) = self.build_with(&self.leaves, Some(lambda));
        let grads = g.backward(loss).unwrap();
        let numeric = numeric_gradients(&self.leaves, |ls| self.loss(ls));
        vars.iter()
            .zip(&numeric)
            .enumerate()
            .map(|(i, (v, n))| {
                let expected: Vec<f64> = if i == 0 { n.iter().map(|x| -lambda * x).collect() } else { n.clone() };
                relative_error(grads.get(*v).data(), &expected)
            })
            .fold(0.0, f64::max)
    }
}
