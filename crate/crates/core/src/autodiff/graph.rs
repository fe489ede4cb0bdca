//! Tape-based reverse-mode differentiation.
//!
//! Every operation appends a node holding its output value and the input
//! references needed by its local gradient rule. Inputs always precede the
//! node on the tape, so [`Graph::backward`] is a single reverse sweep.

use super::tensor::{gemm, Tensor};
use crate::error::{Error, Result};

/// Probability clamp applied before the logarithms in [`Graph::bce`].
pub const BCE_EPS: f64 = 1e-7;

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// The primitive kinds reachable through [`Graph::apply`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Primitive {
    Add,
    Mul,
    MatMul,
    /// Column-wise concatenation of 2-D inputs.
    Concat,
    Mean,
    Tanh,
    Sigmoid,
    /// Row-wise softmax.
    Softmax,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    MatMul(Var, Var),
    AddBias(Var, Var),
    ScaleRows(Var, Var),
    Concat { inputs: Vec<Var>, axis: usize },
    SliceCols { input: Var, start: usize },
    GatherRows { input: Var, indices: Vec<usize> },
    Sum(Var),
    Mean(Var),
    Scale(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Softmax(Var),
    GradReverse(Var, f64),
    Bce {
        p: Var,
        target: Vec<f64>,
        weights: Option<Vec<f64>>,
    },
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Tensor,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients produced by [`Graph::backward`].
///
/// Nodes that the loss does not depend on (constants, or anything behind a
/// zero-scaled gradient reversal) report a zero tensor of the node's shape.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    pub fn get(&self, var: Var) -> Tensor {
        match &self.grads[var.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[var.0]),
        }
    }

    pub fn take(&mut self, var: Var) -> Tensor {
        match self.grads[var.0].take() {
            Some(g) => g,
            None => Tensor::zeros(&self.shapes[var.0]),
        }
    }

    pub fn is_connected(&self, var: Var) -> bool {
        self.grads[var.0].is_some()
    }
}

fn mismatch(op: &'static str, a: &Tensor, b: &Tensor) -> Error {
    Error::ShapeMismatch {
        op,
        lhs: a.shape().to_vec(),
        rhs: b.shape().to_vec(),
    }
}

fn require_2d(op: &'static str, t: &Tensor) -> Result<()> {
    if t.shape().len() > 2 {
        return Err(Error::Shape(format!("{op}: expected rank <= 2, got {:?}", t.shape())));
    }
    Ok(())
}

fn accumulate(slot: &mut Option<Tensor>, g: Tensor) {
    match slot {
        Some(s) => s.add_assign(&g),
        None => *slot = Some(g),
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn push(&mut self, op: Op, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Trainable leaf.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(Op::Leaf, t, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(Op::Leaf, t, false)
    }

    /// Dispatch by primitive kind. `Concat` takes any number of inputs,
    /// unary kinds take one, binary kinds take two.
    pub fn apply(&mut self, kind: Primitive, inputs: &[Var]) -> Result<Var> {
        let arity = |n: usize| -> Result<()> {
            if inputs.len() != n {
                return Err(Error::invalid(format!(
                    "{kind:?} takes {n} input(s), got {}",
                    inputs.len()
                )));
            }
            Ok(())
        };
        match kind {
            Primitive::Add => {
                arity(2)?;
                self.add(inputs[0], inputs[1])
            }
            Primitive::Mul => {
                arity(2)?;
                self.mul(inputs[0], inputs[1])
            }
            Primitive::MatMul => {
                arity(2)?;
                self.matmul(inputs[0], inputs[1])
            }
            Primitive::Concat => self.concat(inputs, 1),
            Primitive::Mean => {
                arity(1)?;
                Ok(self.mean(inputs[0]))
            }
            Primitive::Tanh => {
                arity(1)?;
                Ok(self.tanh(inputs[0]))
            }
            Primitive::Sigmoid => {
                arity(1)?;
                Ok(self.sigmoid(inputs[0]))
            }
            Primitive::Softmax => {
                arity(1)?;
                self.softmax(inputs[0])
            }
        }
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.shape() != tb.shape() {
            return Err(mismatch(op, ta, tb));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("add", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x + y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Op::Add(a, b), v, rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("sub", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x - y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Op::Sub(a, b), v, rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape("mul", a, b)?;
        let v = self.value(a).zip_map(self.value(b), |x, y| x * y);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Op::Mul(a, b), v, rg))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        require_2d("matmul", ta)?;
        require_2d("matmul", tb)?;
        let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
        if tb.rows() != k {
            return Err(mismatch("matmul", ta, tb));
        }
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, ta.data(), false, tb.data(), false, &mut out, 0.0);
        let rg = self.rg(&[a, b]);
        Ok(self.push(Op::MatMul(a, b), Tensor::matrix(m, n, out), rg))
    }

    /// `a (m x n) + bias (1 x n)` broadcast over rows.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(bias));
        require_2d("add_bias", ta)?;
        if tb.rows() != 1 || tb.cols() != ta.cols() || tb.shape().len() != 2 {
            return Err(mismatch("add_bias", ta, tb));
        }
        let n = ta.cols();
        let mut out = ta.data().to_vec();
        for row in out.chunks_mut(n) {
            for (o, b) in row.iter_mut().zip(tb.data()) {
                *o += b;
            }
        }
        let v = Tensor::matrix(ta.rows(), n, out);
        let rg = self.rg(&[a, bias]);
        Ok(self.push(Op::AddBias(a, bias), v, rg))
    }

    /// `a (m x n)` with row `i` multiplied by `s[i]`, `s` being `m x 1`.
    pub fn scale_rows(&mut self, a: Var, s: Var) -> Result<Var> {
        let (ta, ts) = (self.value(a), self.value(s));
        require_2d("scale_rows", ta)?;
        if ts.shape() != [ta.rows(), 1] {
            return Err(mismatch("scale_rows", ta, ts));
        }
        let n = ta.cols();
        let mut out = ta.data().to_vec();
        for (row, &f) in out.chunks_mut(n).zip(ts.data()) {
            row.iter_mut().for_each(|x| *x *= f);
        }
        let v = Tensor::matrix(ta.rows(), n, out);
        let rg = self.rg(&[a, s]);
        Ok(self.push(Op::ScaleRows(a, s), v, rg))
    }

    /// Concatenate 2-D tensors along `axis` (0 = rows, 1 = columns).
    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        if inputs.is_empty() {
            return Err(Error::invalid("concat of zero tensors"));
        }
        if axis > 1 {
            return Err(Error::invalid(format!("concat axis {axis} out of range")));
        }
        let first = self.value(inputs[0]);
        require_2d("concat", first)?;
        let (rows, cols) = (first.rows(), first.cols());
        for &v in &inputs[1..] {
            let t = self.value(v);
            require_2d("concat", t)?;
            let ok = if axis == 0 { t.cols() == cols } else { t.rows() == rows };
            if !ok {
                return Err(mismatch("concat", first, t));
            }
        }
        let value = if axis == 0 {
            let total: usize = inputs.iter().map(|&v| self.value(v).rows()).sum();
            let mut data = Vec::with_capacity(total * cols);
            for &v in inputs {
                data.extend_from_slice(self.value(v).data());
            }
            Tensor::matrix(total, cols, data)
        } else {
            let total: usize = inputs.iter().map(|&v| self.value(v).cols()).sum();
            let mut data = Vec::with_capacity(rows * total);
            for r in 0..rows {
                for &v in inputs {
                    data.extend_from_slice(self.value(v).row_slice(r));
                }
            }
            Tensor::matrix(rows, total, data)
        };
        let rg = self.rg(inputs);
        Ok(self.push(
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            value,
            rg,
        ))
    }

    /// Columns `start..start + len` of a 2-D tensor.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        let ta = self.value(a);
        require_2d("slice_cols", ta)?;
        if len == 0 || start + len > ta.cols() {
            return Err(Error::Shape(format!(
                "slice_cols: columns {start}..{} out of range for {:?}",
                start + len,
                ta.shape()
            )));
        }
        let mut data = Vec::with_capacity(ta.rows() * len);
        for r in 0..ta.rows() {
            data.extend_from_slice(&ta.row_slice(r)[start..start + len]);
        }
        let v = Tensor::matrix(ta.rows(), len, data);
        let rg = self.rg(&[a]);
        Ok(self.push(Op::SliceCols { input: a, start }, v, rg))
    }

    /// Select (and possibly repeat) rows by index.
    pub fn gather_rows(&mut self, a: Var, indices: &[usize]) -> Result<Var> {
        let ta = self.value(a);
        require_2d("gather_rows", ta)?;
        if indices.is_empty() {
            return Err(Error::invalid("gather_rows with no indices"));
        }
        if let Some(&bad) = indices.iter().find(|&&i| i >= ta.rows()) {
            return Err(Error::Shape(format!(
                "gather_rows: row {bad} out of range for {:?}",
                ta.shape()
            )));
        }
        let mut data = Vec::with_capacity(indices.len() * ta.cols());
        for &i in indices {
            data.extend_from_slice(ta.row_slice(i));
        }
        let v = Tensor::matrix(indices.len(), ta.cols(), data);
        let rg = self.rg(&[a]);
        Ok(self.push(
            Op::GatherRows {
                input: a,
                indices: indices.to_vec(),
            },
            v,
            rg,
        ))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let v = Tensor::scalar(self.value(a).sum());
        let rg = self.rg(&[a]);
        self.push(Op::Sum(a), v, rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let v = Tensor::scalar(t.sum() / t.len() as f64);
        let rg = self.rg(&[a]);
        self.push(Op::Mean(a), v, rg)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let v = self.value(a).map(|x| x * factor);
        let rg = self.rg(&[a]);
        self.push(Op::Scale(a, factor), v, rg)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let v = self.value(a).map(f64::tanh);
        let rg = self.rg(&[a]);
        self.push(Op::Tanh(a), v, rg)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).map(sigmoid);
        let rg = self.rg(&[a]);
        self.push(Op::Sigmoid(a), v, rg)
    }

    /// Softmax over the last axis, row by row.
    pub fn softmax(&mut self, a: Var) -> Result<Var> {
        let ta = self.value(a);
        require_2d("softmax", ta)?;
        let n = ta.cols();
        let mut out = ta.data().to_vec();
        for row in out.chunks_mut(n) {
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut total = 0.0;
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                total += *x;
            }
            row.iter_mut().for_each(|x| *x /= total);
        }
        let v = Tensor::new(ta.shape().to_vec(), out)?;
        let rg = self.rg(&[a]);
        Ok(self.push(Op::Softmax(a), v, rg))
    }

    /// Identity on the forward pass; the backward pass replaces the upstream
    /// gradient `g` by `-lambda * g`.
    pub fn grad_reverse(&mut self, a: Var, lambda: f64) -> Var {
        let v = self.value(a).clone();
        let rg = self.rg(&[a]);
        self.push(Op::GradReverse(a, lambda), v, rg)
    }

    /// Mean binary cross-entropy `-(1/N) Σ w_i [y_i ln p_i + (1-y_i) ln(1-p_i)]`
    /// with `p` clamped to `[BCE_EPS, 1 - BCE_EPS]`. Without weights every
    /// `w_i` is 1.
    pub fn bce(&mut self, p: Var, target: &Tensor, weights: Option<&[f64]>) -> Result<Var> {
        let tp = self.value(p);
        if tp.shape() != target.shape() {
            return Err(mismatch("bce", tp, target));
        }
        if let Some(w) = weights {
            if w.len() != tp.len() {
                return Err(Error::ShapeMismatch {
                    op: "bce weights",
                    lhs: tp.shape().to_vec(),
                    rhs: vec![w.len()],
                });
            }
        }
        let n = tp.len() as f64;
        let mut total = 0.0;
        for (i, (&pi, &yi)) in tp.data().iter().zip(target.data()).enumerate() {
            let pc = pi.clamp(BCE_EPS, 1.0 - BCE_EPS);
            let w = weights.map_or(1.0, |w| w[i]);
            total -= w * (yi * pc.ln() + (1.0 - yi) * (1.0 - pc).ln());
        }
        let v = Tensor::scalar(total / n);
        let rg = self.rg(&[p]);
        Ok(self.push(
            Op::Bce {
                p,
                target: target.data().to_vec(),
                weights: weights.map(|w| w.to_vec()),
            },
            v,
            rg,
        ))
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let lt = self.value(loss);
        if lt.len() != 1 {
            return Err(Error::NonScalarLoss(lt.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = vec![None; loss.0 + 1];
        grads[loss.0] = Some(Tensor::filled(lt.shape(), 1.0));

        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            let (lower, upper) = grads.split_at_mut(i);
            let Some(g) = upper[0].as_ref() else { continue };
            let needs = |v: &Var| self.nodes[v.0].requires_grad;
            let val = |v: &Var| &self.nodes[v.0].value;

            match &node.op {
                Op::Leaf => {}
                Op::Add(a, b) => {
                    if needs(a) {
                        accumulate(&mut lower[a.0], g.clone());
                    }
                    if needs(b) {
                        accumulate(&mut lower[b.0], g.clone());
                    }
                }
                Op::Sub(a, b) => {
                    if needs(a) {
                        accumulate(&mut lower[a.0], g.clone());
                    }
                    if needs(b) {
                        accumulate(&mut lower[b.0], g.map(|x| -x));
                    }
                }
                Op::Mul(a, b) => {
                    if needs(a) {
                        accumulate(&mut lower[a.0], g.zip_map(val(b), |x, y| x * y));
                    }
                    if needs(b) {
                        accumulate(&mut lower[b.0], g.zip_map(val(a), |x, y| x * y));
                    }
                }
                Op::MatMul(a, b) => {
                    let (ta, tb) = (val(a), val(b));
                    let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                    if needs(a) {
                        let mut ga = vec![0.0; m * k];
                        gemm(m, n, k, g.data(), false, tb.data(), true, &mut ga, 0.0);
                        accumulate(&mut lower[a.0], Tensor::matrix(m, k, ga));
                    }
                    if needs(b) {
                        let mut gb = vec![0.0; k * n];
                        gemm(k, m, n, ta.data(), true, g.data(), false, &mut gb, 0.0);
                        accumulate(&mut lower[b.0], Tensor::matrix(k, n, gb));
                    }
                }
                Op::AddBias(a, bias) => {
                    if needs(a) {
                        accumulate(&mut lower[a.0], g.clone());
                    }
                    if needs(bias) {
                        let n = g.cols();
                        let mut gb = vec![0.0; n];
                        for row in g.data().chunks(n) {
                            for (s, x) in gb.iter_mut().zip(row) {
                                *s += x;
                            }
                        }
                        accumulate(&mut lower[bias.0], Tensor::matrix(1, n, gb));
                    }
                }
                Op::ScaleRows(a, s) => {
                    let (ta, ts) = (val(a), val(s));
                    let n = ta.cols();
                    if needs(a) {
                        let mut ga = g.data().to_vec();
                        for (row, &f) in ga.chunks_mut(n).zip(ts.data()) {
                            row.iter_mut().for_each(|x| *x *= f);
                        }
                        accumulate(&mut lower[a.0], Tensor::matrix(ta.rows(), n, ga));
                    }
                    if needs(s) {
                        let gs: Vec<f64> = g
                            .data()
                            .chunks(n)
                            .zip(ta.data().chunks(n))
                            .map(|(gr, ar)| gr.iter().zip(ar).map(|(x, y)| x * y).sum())
                            .collect();
                        accumulate(&mut lower[s.0], Tensor::matrix(ta.rows(), 1, gs));
                    }
                }
                Op::Concat { inputs, axis } => {
                    let mut offset = 0;
                    for v in inputs {
                        let t = val(v);
                        let part = if *axis == 0 {
                            let start = offset * g.cols();
                            let d = g.data()[start..start + t.len()].to_vec();
                            offset += t.rows();
                            d
                        } else {
                            let mut d = Vec::with_capacity(t.len());
                            for r in 0..g.rows() {
                                d.extend_from_slice(&g.row_slice(r)[offset..offset + t.cols()]);
                            }
                            offset += t.cols();
                            d
                        };
                        if needs(v) {
                            accumulate(&mut lower[v.0], Tensor::matrix(t.rows(), t.cols(), part));
                        }
                    }
                }
                Op::SliceCols { input, start } => {
                    if needs(input) {
                        let t = val(input);
                        let (cols, len) = (t.cols(), g.cols());
                        let mut ga = vec![0.0; t.len()];
                        for r in 0..t.rows() {
                            ga[r * cols + start..r * cols + start + len]
                                .copy_from_slice(g.row_slice(r));
                        }
                        accumulate(&mut lower[input.0], Tensor::matrix(t.rows(), cols, ga));
                    }
                }
                Op::GatherRows { input, indices } => {
                    if needs(input) {
                        let t = val(input);
                        let cols = t.cols();
                        let mut ga = vec![0.0; t.len()];
                        for (k, &i) in indices.iter().enumerate() {
                            for (dst, src) in ga[i * cols..(i + 1) * cols].iter_mut().zip(g.row_slice(k)) {
                                *dst += src;
                            }
                        }
                        accumulate(&mut lower[input.0], Tensor::matrix(t.rows(), cols, ga));
                    }
                }
                Op::Sum(a) => {
                    if needs(a) {
                        accumulate(&mut lower[a.0], Tensor::filled(val(a).shape(), g.item()));
                    }
                }
                Op::Mean(a) => {
                    if needs(a) {
                        let t = val(a);
                        let s = g.item() / t.len() as f64;
                        accumulate(&mut lower[a.0], Tensor::filled(t.shape(), s));
                    }
                }
                Op::Scale(a, f) => {
                    if needs(a) {
                        accumulate(&mut lower[a.0], g.map(|x| x * f));
                    }
                }
                Op::Tanh(a) => {
                    if needs(a) {
                        accumulate(&mut lower[a.0], g.zip_map(&node.value, |x, y| x * (1.0 - y * y)));
                    }
                }
                Op::Sigmoid(a) => {
                    if needs(a) {
                        accumulate(&mut lower[a.0], g.zip_map(&node.value, |x, y| x * y * (1.0 - y)));
                    }
                }
                Op::Softmax(a) => {
                    if needs(a) {
                        let n = node.value.cols();
                        let mut ga = Vec::with_capacity(node.value.len());
                        for (gr, yr) in g.data().chunks(n).zip(node.value.data().chunks(n)) {
                            let dot: f64 = gr.iter().zip(yr).map(|(x, y)| x * y).sum();
                            ga.extend(gr.iter().zip(yr).map(|(x, y)| y * (x - dot)));
                        }
                        accumulate(&mut lower[a.0], Tensor::new(node.value.shape().to_vec(), ga)?);
                    }
                }
                Op::GradReverse(a, lambda) => {
                    if needs(a) {
                        accumulate(&mut lower[a.0], g.map(|x| -lambda * x));
                    }
                }
                Op::Bce { p, target, weights } => {
                    if needs(p) {
                        let tp = val(p);
                        let n = tp.len() as f64;
                        let up = g.item();
                        let gp: Vec<f64> = tp
                            .data()
                            .iter()
                            .zip(target)
                            .enumerate()
                            .map(|(i, (&pi, &yi))| {
                                if !(BCE_EPS..=1.0 - BCE_EPS).contains(&pi) {
                                    return 0.0;
                                }
                                let w = weights.as_ref().map_or(1.0, |w| w[i]);
                                up * w / n * (-yi / pi + (1.0 - yi) / (1.0 - pi))
                            })
                            .collect();
                        accumulate(&mut lower[p.0], Tensor::new(tp.shape().to_vec(), gp)?);
                    }
                }
            }
        }

        let shapes = self.nodes[..=loss.0]
            .iter()
            .map(|n| n.value.shape().to_vec())
            .collect();
        Ok(Gradients { grads, shapes })
    }
}
