//! Wengert-list reverse-mode autodiff over [`Tensor`] values.
//!
//! Operations are coarse (a whole affine layer is one node) so the per-node
//! bookkeeping stays negligible next to the matrix products. Nodes are
//! appended in evaluation order, which is already a topological order; the
//! backward pass walks the list once in reverse.

use std::collections::{BTreeMap, HashMap};

use super::tensor::{gemm, Tensor, AVG_L1_EPS};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    /// `x * w + b`
    Linear { x: usize, w: usize, b: usize },
    Relu(usize),
    Tanh(usize),
    AvgL1Norm(usize),
    Concat(usize, usize),
    Add(usize, usize),
    Sub(usize, usize),
    Scale(usize, f64),
    Mean(usize),
    MeanSquare(usize),
    MeanHuber(usize, f64),
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Gradient map keyed by qualified parameter name (`net/w0`).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Grads(BTreeMap<String, Tensor>);

impl Grads {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.0.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.0.contains_key(name)
    }

    pub fn insert(&mut self, name: impl Into<String>, grad: Tensor) {
        self.0.insert(name.into(), grad);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.0.iter()
    }

    pub fn keys(&self) -> impl Iterator<Item = &String> {
        self.0.keys()
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Entries whose name starts with `prefix`.
    pub fn with_prefix(&self, prefix: &str) -> Grads {
        Grads(
            self.0
                .iter()
                .filter(|(k, _)| k.starts_with(prefix))
                .map(|(k, v)| (k.clone(), v.clone()))
                .collect(),
        )
    }
}

#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<String, usize>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node { value, op, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn grad_of(&self, v: usize) -> bool {
        self.nodes[v].requires_grad
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, t: Tensor) -> Var {
        self.push(t, Op::Leaf, false)
    }

    /// Trainable leaf. Registering the same name twice returns the first
    /// handle, so shared weights accumulate into one gradient.
    pub fn param(&mut self, name: &str, t: &Tensor) -> Var {
        if let Some(&i) = self.params.get(name) {
            return Var(i);
        }
        let v = self.push(t.clone(), Op::Leaf, true);
        self.params.insert(name.to_string(), v.0);
        v
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        if wv.shape().len() != 2 || xv.cols() != wv.rows() || bv.len() != wv.cols() {
            return Err(Error::dim(format!(
                "linear: input {:?}, weight {:?}, bias {:?}",
                xv.shape(),
                wv.shape(),
                bv.shape()
            )));
        }
        let (m, k, n) = (xv.rows(), wv.rows(), wv.cols());
        let mut out = Vec::with_capacity(m * n);
        for _ in 0..m {
            out.extend_from_slice(bv.data());
        }
        gemm(m, k, n, xv.data(), false, wv.data(), false, &mut out, true);
        let rg = self.grad_of(x.0) || self.grad_of(w.0) || self.grad_of(b.0);
        Ok(self.push(
            Tensor::from_parts(vec![m, n], out),
            Op::Linear { x: x.0, w: w.0, b: b.0 },
            rg,
        ))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let v = self.value(x).map(|a| a.max(0.0));
        let rg = self.grad_of(x.0);
        self.push(v, Op::Relu(x.0), rg)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let v = self.value(x).map(f64::tanh);
        let rg = self.grad_of(x.0);
        self.push(v, Op::Tanh(x.0), rg)
    }

    /// Row-wise `x / (mean|x| + eps)`.
    pub fn avg_l1_norm(&mut self, x: Var) -> Var {
        let v = self.value(x).avg_l1_norm();
        let rg = self.grad_of(x.0);
        self.push(v, Op::AvgL1Norm(x.0), rg)
    }

    pub fn concat(&mut self, a: Var, b: Var) -> Result<Var> {
        let v = self.value(a).concat_cols(self.value(b))?;
        let rg = self.grad_of(a.0) || self.grad_of(b.0);
        Ok(self.push(v, Op::Concat(a.0, b.0), rg))
    }

    fn same_shape(&self, a: Var, b: Var, what: &str) -> Result<()> {
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::dim(format!(
                "{what}: {:?} vs {:?}",
                self.value(a).shape(),
                self.value(b).shape()
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "add")?;
        let d = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x + y).collect();
        let v = Tensor::from_parts(self.value(a).shape().to_vec(), d);
        let rg = self.grad_of(a.0) || self.grad_of(b.0);
        Ok(self.push(v, Op::Add(a.0, b.0), rg))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.same_shape(a, b, "sub")?;
        let d = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x - y).collect();
        let v = Tensor::from_parts(self.value(a).shape().to_vec(), d);
        let rg = self.grad_of(a.0) || self.grad_of(b.0);
        Ok(self.push(v, Op::Sub(a.0, b.0), rg))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let v = self.value(x).map(|a| a * c);
        let rg = self.grad_of(x.0);
        self.push(v, Op::Scale(x.0, c), rg)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let m = t.data().iter().sum::<f64>() / t.len() as f64;
        let rg = self.grad_of(x.0);
        self.push(Tensor::scalar(m), Op::Mean(x.0), rg)
    }

    pub fn mean_square(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let m = t.data().iter().map(|a| a * a).sum::<f64>() / t.len() as f64;
        let rg = self.grad_of(x.0);
        self.push(Tensor::scalar(m), Op::MeanSquare(x.0), rg)
    }

    /// Mean squared error against another recorded value.
    pub fn mse(&mut self, pred: Var, target: Var) -> Result<Var> {
        let e = self.sub(pred, target)?;
        Ok(self.mean_square(e))
    }

    /// Mean elementwise Huber penalty of `x` (an error tensor).
    pub fn mean_huber(&mut self, x: Var, delta: f64) -> Result<Var> {
        if !(delta > 0.0) {
            return Err(Error::param(format!("huber delta must be positive, got {delta}")));
        }
        let t = self.value(x);
        let m = t.data().iter().map(|&e| huber_elem(e, delta)).sum::<f64>() / t.len() as f64;
        let rg = self.grad_of(x.0);
        Ok(self.push(Tensor::scalar(m), Op::MeanHuber(x.0, delta), rg))
    }

    /// Reverse pass from a scalar `loss`. Every registered parameter gets an
    /// entry; parameters off the loss path get zeros.
    pub fn backward(&self, loss: Var) -> Result<Grads> {
        if !self.value(loss).is_scalar() {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            match node.op {
                Op::Leaf => {
                    grads[i] = Some(g);
                }
                Op::Linear { x, w, b } => {
                    let (xv, wv) = (&self.nodes[x].value, &self.nodes[w].value);
                    let (m, k, n) = (xv.rows(), wv.rows(), wv.cols());
                    if self.grad_of(x) {
                        let mut dx = vec![0.0; m * k];
                        gemm(m, n, k, &g, false, wv.data(), true, &mut dx, false);
                        accumulate(&mut grads[x], dx);
                    }
                    if self.grad_of(w) {
                        let mut dw = vec![0.0; k * n];
                        gemm(k, m, n, xv.data(), true, &g, false, &mut dw, false);
                        accumulate(&mut grads[w], dw);
                    }
                    if self.grad_of(b) {
                        let mut db = vec![0.0; n];
                        for r in 0..m {
                            for (d, gv) in db.iter_mut().zip(&g[r * n..(r + 1) * n]) {
                                *d += gv;
                            }
                        }
                        accumulate(&mut grads[b], db);
                    }
                }
                Op::Relu(x) => {
                    let y = node.value.data();
                    let dx = g.iter().zip(y).map(|(gv, yv)| if *yv > 0.0 { *gv } else { 0.0 }).collect();
                    accumulate(&mut grads[x], dx);
                }
                Op::Tanh(x) => {
                    let y = node.value.data();
                    let dx = g.iter().zip(y).map(|(gv, yv)| gv * (1.0 - yv * yv)).collect();
                    accumulate(&mut grads[x], dx);
                }
                Op::AvgL1Norm(x) => {
                    let xv = &self.nodes[x].value;
                    let c = xv.cols().max(1);
                    let mut dx = Vec::with_capacity(g.len());
                    for (xr, gr) in xv.data().chunks(c).zip(g.chunks(c)) {
                        let m = xr.iter().map(|v| v.abs()).sum::<f64>() / c as f64 + AVG_L1_EPS;
                        let gx: f64 = gr.iter().zip(xr).map(|(a, b)| a * b).sum();
                        let k = gx / (c as f64 * m * m);
                        dx.extend(gr.iter().zip(xr).map(|(gv, xv)| gv / m - k * sign(*xv)));
                    }
                    accumulate(&mut grads[x], dx);
                }
                Op::Concat(a, b) => {
                    let (ca, cb) = (self.nodes[a].value.cols(), self.nodes[b].value.cols());
                    let rows = node.value.rows();
                    let (mut da, mut db) = (Vec::with_capacity(rows * ca), Vec::with_capacity(rows * cb));
                    for r in 0..rows {
                        let row = &g[r * (ca + cb)..(r + 1) * (ca + cb)];
                        da.extend_from_slice(&row[..ca]);
                        db.extend_from_slice(&row[ca..]);
                    }
                    if self.grad_of(a) {
                        accumulate(&mut grads[a], da);
                    }
                    if self.grad_of(b) {
                        accumulate(&mut grads[b], db);
                    }
                }
                Op::Add(a, b) => {
                    if self.grad_of(a) {
                        accumulate(&mut grads[a], g.clone());
                    }
                    if self.grad_of(b) {
                        accumulate(&mut grads[b], g);
                    }
                }
                Op::Sub(a, b) => {
                    if self.grad_of(b) {
                        accumulate(&mut grads[b], g.iter().map(|v| -v).collect());
                    }
                    if self.grad_of(a) {
                        accumulate(&mut grads[a], g);
                    }
                }
                Op::Scale(x, c) => {
                    accumulate(&mut grads[x], g.iter().map(|v| v * c).collect());
                }
                Op::Mean(x) => {
                    let n = self.nodes[x].value.len();
                    accumulate(&mut grads[x], vec![g[0] / n as f64; n]);
                }
                Op::MeanSquare(x) => {
                    let xv = self.nodes[x].value.data();
                    let s = 2.0 * g[0] / xv.len() as f64;
                    accumulate(&mut grads[x], xv.iter().map(|v| s * v).collect());
                }
                Op::MeanHuber(x, delta) => {
                    let xv = self.nodes[x].value.data();
                    let s = g[0] / xv.len() as f64;
                    accumulate(
                        &mut grads[x],
                        xv.iter().map(|&e| s * e.clamp(-delta, delta)).collect(),
                    );
                }
            }
        }

        let mut out = Grads::default();
        let mut names: Vec<_> = self.params.iter().collect();
        names.sort();
        for (name, &idx) in names {
            let shape = self.nodes[idx].value.shape().to_vec();
            let g = match grads.get_mut(idx).and_then(Option::take) {
                Some(d) => Tensor::from_parts(shape, d),
                None => Tensor::zeros(&shape),
            };
            out.insert(name.clone(), g);
        }
        Ok(out)
    }
}

fn sign(v: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else if v < 0.0 {
        -1.0
    } else {
        0.0
    }
}

fn accumulate(slot: &mut Option<Vec<f64>>, g: Vec<f64>) {
    match slot {
        Some(acc) => {
            for (a, v) in acc.iter_mut().zip(g) {
                *a += v;
            }
        }
        None => *slot = Some(g),
    }
}

pub(crate) fn huber_elem(e: f64, delta: f64) -> f64 {
    let a = e.abs();
    if a <= delta {
        0.5 * e * e
    } else {
        delta * (a - 0.5 * delta)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_derivative() {
        let mut tape = Tape::new();
        let x = tape.param("x", &Tensor::scalar(3.0));
        let y = tape.mean_square(x);
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get("x").unwrap().item(), 6.0);
    }

    #[test]
    fn inactive_relu_has_zero_slope() {
        let mut tape = Tape::new();
        let x = tape.param("x", &Tensor::scalar(-1.0));
        let two_x = tape.scale(x, 2.0);
        let r = tape.relu(two_x);
        let y = tape.mean(r);
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get("x").unwrap().item(), 0.0);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::new();
        let x = tape.param("x", &Tensor::zeros(&[2]));
        assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn unused_params_get_zero_gradients() {
        let mut tape = Tape::new();
        let x = tape.param("x", &Tensor::scalar(2.0));
        let _unused = tape.param("u", &Tensor::zeros(&[2, 3]));
        let y = tape.mean_square(x);
        let g = tape.backward(y).unwrap();
        assert_eq!(g.get("u").unwrap(), &Tensor::zeros(&[2, 3]));
    }

    #[test]
    fn shared_param_accumulates() {
        let mut tape = Tape::new();
        let x = tape.param("x", &Tensor::scalar(1.5));
        let x2 = tape.param("x", &Tensor::scalar(99.0));
        assert_eq!(x, x2);
        let s = tape.add(x, x2).unwrap();
        let y = tape.mean(s);
        assert_eq!(tape.backward(y).unwrap().get("x").unwrap().item(), 2.0);
    }
}
