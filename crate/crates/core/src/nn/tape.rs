//! Reverse-mode automatic differentiation over a recorded trace.
//!
//! A [`Tape`] records every operation applied to its [`Var`]s. Calling
//! [`Tape::backward`] once walks the trace in reverse and returns the
//! gradient of a scalar loss with respect to every node.

use std::collections::BTreeMap;

use super::tensor::{matmul_a_bt_into, matmul_at_b_into, matmul_into, Tensor};
use super::NetParams;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Relu(Var),
    Square(Var),
    GatherRows(Var, Vec<usize>),
    ScatterAddRows(Var, Vec<usize>),
    ScaleRows(Var, Vec<f64>),
    ConcatCols(Vec<Var>),
    SelectPerRow(Var, Vec<usize>),
    Softmax(Var),
    LogSoftmax(Var),
    Sum(Var),
    Mean(Var),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    consumed: bool,
}

/// Parameters of one network bound onto a tape, by name.
pub type BoundParams = BTreeMap<String, Var>;

fn shape_err(op: &str, a: &Tensor, b: &Tensor) -> Error {
    Error::Shape(format!("{op}: {:?} vs {:?}", a.shape(), b.shape()))
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Differentiable leaf.
    pub fn param(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, true)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    pub fn bind(&mut self, params: &NetParams) -> BoundParams {
        params
            .iter()
            .map(|(name, t)| (name.clone(), self.param(t.clone())))
            .collect()
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
        if tb.rows() != k {
            return Err(shape_err("matmul", ta, tb));
        }
        let mut out = Tensor::zeros(&[m, n]);
        matmul_into(ta.data(), tb.data(), out.data_mut(), m, k, n);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    /// `x[m,n] + bias[1,n]` broadcast over rows.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (tx, tb) = (self.value(x), self.value(bias));
        if tb.len() != tx.cols() {
            return Err(shape_err("add_bias", tx, tb));
        }
        let mut out = tx.clone();
        let n = tx.cols();
        for r in 0..tx.rows() {
            for (o, b) in out.row_mut(r).iter_mut().zip(tb.data()) {
                *o += b;
            }
        }
        debug_assert_eq!(out.cols(), n);
        let rg = self.rg(x) || self.rg(bias);
        Ok(self.push(out, Op::AddBias(x, bias), rg))
    }

    fn zip_with(&mut self, a: Var, b: Var, name: &str, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
        let (ta, tb) = (self.value(a), self.value(b));
        if !ta.same_shape(tb) {
            return Err(shape_err(name, ta, tb));
        }
        let data = ta.data().iter().zip(tb.data()).map(|(&x, &y)| f(x, y)).collect();
        Tensor::from_vec(ta.shape(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with(a, b, "add", |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with(a, b, "sub", |x, y| x - y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let out = self.zip_with(a, b, "mul", |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Var {
        let out = self.value(a).map(|v| v * c);
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, c), rg)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| v.max(0.0));
        let rg = self.rg(a);
        self.push(out, Op::Relu(a), rg)
    }

    pub fn square(&mut self, a: Var) -> Var {
        let out = self.value(a).map(|v| v * v);
        let rg = self.rg(a);
        self.push(out, Op::Square(a), rg)
    }

    /// Output row `i` is input row `index[i]`.
    pub fn gather_rows(&mut self, a: Var, index: &[usize]) -> Result<Var> {
        let ta = self.value(a);
        let n = ta.cols();
        if let Some(&bad) = index.iter().find(|&&i| i >= ta.rows()) {
            return Err(Error::Shape(format!("gather row {bad} of {}", ta.rows())));
        }
        let mut out = Tensor::zeros(&[index.len(), n]);
        for (r, &i) in index.iter().enumerate() {
            out.row_mut(r).copy_from_slice(ta.row(i));
        }
        let rg = self.rg(a);
        Ok(self.push(out, Op::GatherRows(a, index.to_vec()), rg))
    }

    /// Sums input row `i` into output row `index[i]`, producing `out_rows` rows.
    pub fn scatter_add_rows(&mut self, a: Var, index: &[usize], out_rows: usize) -> Result<Var> {
        let ta = self.value(a);
        if index.len() != ta.rows() {
            return Err(Error::Shape(format!(
                "scatter index has {} entries for {} rows",
                index.len(),
                ta.rows()
            )));
        }
        if let Some(&bad) = index.iter().find(|&&i| i >= out_rows) {
            return Err(Error::Shape(format!("scatter target {bad} of {out_rows}")));
        }
        let n = ta.cols();
        let mut out = Tensor::zeros(&[out_rows, n]);
        for (r, &i) in index.iter().enumerate() {
            for (o, v) in out.row_mut(i).iter_mut().zip(ta.row(r)) {
                *o += v;
            }
        }
        let rg = self.rg(a);
        Ok(self.push(out, Op::ScatterAddRows(a, index.to_vec()), rg))
    }

    /// Multiplies row `r` by the constant `coeffs[r]`.
    pub fn scale_rows(&mut self, a: Var, coeffs: &[f64]) -> Result<Var> {
        let ta = self.value(a);
        if coeffs.len() != ta.rows() {
            return Err(Error::Shape("scale_rows coefficient count".into()));
        }
        let mut out = ta.clone();
        for (r, &c) in coeffs.iter().enumerate() {
            for v in out.row_mut(r) {
                *v *= c;
            }
        }
        let rg = self.rg(a);
        Ok(self.push(out, Op::ScaleRows(a, coeffs.to_vec()), rg))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let rows = self.value(parts[0]).rows();
        if parts.iter().any(|&p| self.value(p).rows() != rows) {
            return Err(Error::Shape("concat_cols with different row counts".into()));
        }
        let width: usize = parts.iter().map(|&p| self.value(p).cols()).sum();
        let mut out = Tensor::zeros(&[rows, width]);
        for r in 0..rows {
            let mut off = 0;
            for &p in parts {
                let src = self.value(p).row(r);
                out.row_mut(r)[off..off + src.len()].copy_from_slice(src);
                off += src.len();
            }
        }
        let rg = parts.iter().any(|&p| self.rg(p));
        Ok(self.push(out, Op::ConcatCols(parts.to_vec()), rg))
    }

    /// Picks column `index[r]` from each row, giving `[rows, 1]`.
    pub fn select_per_row(&mut self, a: Var, index: &[usize]) -> Result<Var> {
        let ta = self.value(a);
        if index.len() != ta.rows() || index.iter().any(|&c| c >= ta.cols()) {
            return Err(Error::Shape("select_per_row index out of range".into()));
        }
        let data = index.iter().enumerate().map(|(r, &c)| ta.get(r, c)).collect();
        let out = Tensor::from_vec(&[index.len(), 1], data)?;
        let rg = self.rg(a);
        Ok(self.push(out, Op::SelectPerRow(a, index.to_vec()), rg))
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        let out = softmax_rows(self.value(a));
        let rg = self.rg(a);
        self.push(out, Op::Softmax(a), rg)
    }

    pub fn log_softmax(&mut self, a: Var) -> Var {
        let ta = self.value(a);
        let mut out = ta.clone();
        for r in 0..ta.rows() {
            let row = out.row_mut(r);
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            for v in row.iter_mut() {
                *v -= lse;
            }
        }
        let rg = self.rg(a);
        self.push(out, Op::LogSoftmax(a), rg)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).data().iter().sum();
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Sum(a), rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = self.value(a);
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        let rg = self.rg(a);
        self.push(Tensor::scalar(s), Op::Mean(a), rg)
    }

    /// Gradients of the scalar `loss` with respect to every node of the trace.
    /// A trace can be differentiated once.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        if self.consumed {
            return Err(Error::Usage("backward called on a consumed trace".into()));
        }
        if self.value(loss).len() != 1 {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        self.consumed = true;
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                grads[idx] = Some(g);
                continue;
            }
            let acc = |v: Var, t: Tensor, grads: &mut Vec<Option<Tensor>>| {
                if !self.nodes[v.0].requires_grad {
                    return;
                }
                match &mut grads[v.0] {
                    Some(existing) => existing.add_assign(&t),
                    slot @ None => *slot = Some(t),
                }
            };
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let (m, k, n) = (ta.rows(), ta.cols(), tb.cols());
                    if self.rg(*a) {
                        let mut da = Tensor::zeros(ta.shape());
                        matmul_a_bt_into(g.data(), tb.data(), da.data_mut(), m, n, k);
                        acc(*a, da, &mut grads);
                    }
                    if self.rg(*b) {
                        let mut db = Tensor::zeros(tb.shape());
                        matmul_at_b_into(ta.data(), g.data(), db.data_mut(), m, k, n);
                        acc(*b, db, &mut grads);
                    }
                }
                Op::AddBias(x, bias) => {
                    if self.rg(*bias) {
                        let mut db = Tensor::zeros(self.value(*bias).shape());
                        for r in 0..g.rows() {
                            for (d, v) in db.data_mut().iter_mut().zip(g.row(r)) {
                                *d += v;
                            }
                        }
                        acc(*bias, db, &mut grads);
                    }
                    acc(*x, g.clone(), &mut grads);
                }
                Op::Add(a, b) => {
                    acc(*a, g.clone(), &mut grads);
                    acc(*b, g.clone(), &mut grads);
                }
                Op::Sub(a, b) => {
                    acc(*a, g.clone(), &mut grads);
                    acc(*b, g.map(|v| -v), &mut grads);
                }
                Op::Mul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let da = zip(&g, tb, |x, y| x * y);
                    let db = zip(&g, ta, |x, y| x * y);
                    acc(*a, da, &mut grads);
                    acc(*b, db, &mut grads);
                }
                Op::Scale(a, c) => acc(*a, g.map(|v| v * c), &mut grads),
                Op::Relu(a) => {
                    let d = zip(&g, self.value(*a), |gv, x| if x > 0.0 { gv } else { 0.0 });
                    acc(*a, d, &mut grads);
                }
                Op::Square(a) => {
                    let d = zip(&g, self.value(*a), |gv, x| 2.0 * x * gv);
                    acc(*a, d, &mut grads);
                }
                Op::GatherRows(a, index) => {
                    let mut d = Tensor::zeros(self.value(*a).shape());
                    for (r, &i) in index.iter().enumerate() {
                        for (o, v) in d.row_mut(i).iter_mut().zip(g.row(r)) {
                            *o += v;
                        }
                    }
                    acc(*a, d, &mut grads);
                }
                Op::ScatterAddRows(a, index) => {
                    let mut d = Tensor::zeros(self.value(*a).shape());
                    for (r, &i) in index.iter().enumerate() {
                        d.row_mut(r).copy_from_slice(g.row(i));
                    }
                    acc(*a, d, &mut grads);
                }
                Op::ScaleRows(a, coeffs) => {
                    let mut d = g.clone();
                    for (r, &c) in coeffs.iter().enumerate() {
                        for v in d.row_mut(r) {
                            *v *= c;
                        }
                    }
                    acc(*a, d, &mut grads);
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for &p in parts {
                        let w = self.value(p).cols();
                        let mut d = Tensor::zeros(self.value(p).shape());
                        for r in 0..g.rows() {
                            d.row_mut(r).copy_from_slice(&g.row(r)[off..off + w]);
                        }
                        off += w;
                        acc(p, d, &mut grads);
                    }
                }
                Op::SelectPerRow(a, index) => {
                    let mut d = Tensor::zeros(self.value(*a).shape());
                    for (r, &c) in index.iter().enumerate() {
                        d.row_mut(r)[c] = g.data()[r];
                    }
                    acc(*a, d, &mut grads);
                }
                Op::Softmax(a) => {
                    let y = &node.value;
                    let mut d = Tensor::zeros(y.shape());
                    for r in 0..y.rows() {
                        let (yr, gr) = (y.row(r), g.row(r));
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for ((o, yv), gv) in d.row_mut(r).iter_mut().zip(yr).zip(gr) {
                            *o = yv * (gv - dot);
                        }
                    }
                    acc(*a, d, &mut grads);
                }
                Op::LogSoftmax(a) => {
                    let y = &node.value;
                    let mut d = Tensor::zeros(y.shape());
                    for r in 0..y.rows() {
                        let (yr, gr) = (y.row(r), g.row(r));
                        let total: f64 = gr.iter().sum();
                        for ((o, yv), gv) in d.row_mut(r).iter_mut().zip(yr).zip(gr) {
                            *o = gv - yv.exp() * total;
                        }
                    }
                    acc(*a, d, &mut grads);
                }
                Op::Sum(a) => {
                    let d = Tensor::full(self.value(*a).shape(), g.item());
                    acc(*a, d, &mut grads);
                }
                Op::Mean(a) => {
                    let t = self.value(*a);
                    let d = Tensor::full(t.shape(), g.item() / t.len() as f64);
                    acc(*a, d, &mut grads);
                }
            }
            grads[idx] = Some(g);
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect();
    Tensor::from_vec(a.shape(), data).expect("same shape")
}

/// Row-wise numerically stable softmax.
pub fn softmax_rows(t: &Tensor) -> Tensor {
    let mut out = t.clone();
    for r in 0..t.rows() {
        let row = out.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    out
}

/// Result of [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient for `v`; zero if the loss does not depend on it.
    pub fn get(&self, v: Var) -> Tensor {
        self.grads[v.0]
            .clone()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }

    pub fn collect(&self, bound: &BoundParams) -> BTreeMap<String, Tensor> {
        bound.iter().map(|(k, &v)| (k.clone(), self.get(v))).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sum_gradient_is_ones() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::from_vec(&[2, 3], vec![1.0, -2.0, 3.0, 0.5, 0.0, 9.0]).unwrap());
        let s = tape.sum(x);
        let g = tape.backward(s).unwrap();
        assert!(g.get(x).data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn half_squared_norm_gradient_is_x() {
        let mut tape = Tape::new();
        let data = vec![1.0, -2.0, 3.5, 0.25];
        let x = tape.param(Tensor::from_vec(&[1, 4], data.clone()).unwrap());
        let sq = tape.square(x);
        let s = tape.sum(sq);
        let loss = tape.scale(s, 0.5);
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(x).data(), data.as_slice());
    }

    #[test]
    fn unused_parameter_has_zero_gradient() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::full(&[2, 2], 1.0));
        let unused = tape.param(Tensor::full(&[3, 1], 4.0));
        let s = tape.sum(x);
        let g = tape.backward(s).unwrap();
        assert_eq!(g.get(unused), Tensor::zeros(&[3, 1]));
    }

    #[test]
    fn second_backward_is_usage_error() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::scalar(2.0));
        let y = tape.square(x);
        tape.backward(y).unwrap();
        assert!(matches!(tape.backward(y), Err(Error::Usage(_))));
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::new();
        let x = tape.param(Tensor::full(&[2, 2], 1.0));
        assert!(matches!(tape.backward(x), Err(Error::Usage(_))));
    }

    #[test]
    fn matmul_shape_mismatch() {
        let mut tape = Tape::new();
        let a = tape.param(Tensor::zeros(&[2, 3]));
        let b = tape.param(Tensor::zeros(&[2, 3]));
        assert!(matches!(tape.matmul(a, b), Err(Error::Shape(_))));
    }

    #[test]
    fn softmax_shift_invariance_and_known_values() {
        let t = Tensor::from_vec(&[1, 2], vec![0.0, 2f64.ln()]).unwrap();
        let p = softmax_rows(&t);
        assert!((p.data()[0] - 1.0 / 3.0).abs() < 1e-15);
        assert!((p.data()[1] - 2.0 / 3.0).abs() < 1e-15);
        let shifted = softmax_rows(&t.map(|v| v + 123.4));
        for (a, b) in p.data().iter().zip(shifted.data()) {
            assert!((a - b).abs() < 1e-12);
        }
        let flat = softmax_rows(&Tensor::full(&[1, 6], 0.7));
        assert!(flat.data().iter().all(|v| (v - 1.0 / 6.0).abs() < 1e-15));
    }
}
