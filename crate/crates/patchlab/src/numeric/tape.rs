//! Reverse-mode gradient tape.
//!
//! The tape records the handful of operations needed by feedforward
//! classifiers, translators, discriminators and the loss expressions built
//! on top of them. `backward` walks the record once in reverse and returns
//! one gradient per registered parameter slot.

use crate::error::{Error, Result};
use crate::numeric::tensor::Tensor;

/// Handle to a value on the tape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(usize);

enum Op {
    /// Constant input; no gradient is tracked past it.
    Input,
    /// Leaf bound to parameter slot `usize`.
    Param(usize),
    MatMul(NodeId, NodeId),
    /// Row-broadcast add of a bias vector.
    AddBias(NodeId, NodeId),
    Relu(NodeId),
    /// Row-wise log-softmax (stable, max-subtracted).
    LogSoftmax(NodeId),
    Exp(NodeId),
    Log(NodeId),
    /// ln(1 + e^x), evaluated stably.
    Softplus(NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    AddConst(NodeId),
    Abs(NodeId),
    Neg(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    /// Row selection; backward scatter-adds into the source rows.
    Gather(NodeId, Vec<usize>),
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Recorded computation; build values with the methods, then call
/// [`Tape::backward`] on a scalar loss node.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    /// Highest parameter slot seen, for sizing the gradient vector.
    max_slot: usize,
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            nodes: Vec::new(),
            max_slot: 0,
        }
    }

    fn push(&mut self, value: Tensor, op: Op) -> NodeId {
        self.nodes.push(Node { value, op });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    /// Constant data; gradients stop here.
    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.push(value, Op::Input)
    }

    /// Differentiable leaf identified by a parameter slot.
    pub fn param(&mut self, slot: usize, value: Tensor) -> NodeId {
        self.max_slot = self.max_slot.max(slot);
        self.push(value, Op::Param(slot))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(v, Op::MatMul(a, b)))
    }

    pub fn add_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let xt = self.value(x);
        let bt = self.value(bias);
        if xt.cols() != bt.len() {
            return Err(Error::Shape(format!(
                "bias of {} on columns of {}",
                bt.len(),
                xt.cols()
            )));
        }
        let cols = xt.cols();
        let mut out = xt.clone();
        for (i, v) in out.values_mut().iter_mut().enumerate() {
            *v += bt.values()[i % cols];
        }
        Ok(self.push(out, Op::AddBias(x, bias)))
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).map(|a| a.max(0.0));
        self.push(v, Op::Relu(x))
    }

    pub fn log_softmax(&mut self, x: NodeId) -> NodeId {
        let xt = self.value(x);
        let cols = xt.cols();
        let mut out = xt.clone();
        for r in 0..out.rows() {
            let row = &mut out.values_mut()[r * cols..(r + 1) * cols];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = row.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
            for v in row {
                *v -= lse;
            }
        }
        self.push(out, Op::LogSoftmax(x))
    }

    /// Softmax probabilities, as exp of the stable log-softmax.
    pub fn softmax(&mut self, logits: NodeId) -> NodeId {
        let ls = self.log_softmax(logits);
        self.exp(ls)
    }

    pub fn exp(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).map(f64::exp);
        self.push(v, Op::Exp(x))
    }

    pub fn log(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).map(f64::ln);
        self.push(v, Op::Log(x))
    }

    pub fn softplus(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).map(|a| {
            if a > 30.0 {
                a
            } else if a < -30.0 {
                a.exp()
            } else {
                a.exp().ln_1p()
            }
        });
        self.push(v, Op::Softplus(x))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).zip(self.value(b), |x, y| x + y)?;
        Ok(self.push(v, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).zip(self.value(b), |x, y| x - y)?;
        Ok(self.push(v, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = self.value(a).zip(self.value(b), |x, y| x * y)?;
        Ok(self.push(v, Op::Mul(a, b)))
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        let v = self.value(x).map(|a| a * c);
        self.push(v, Op::Scale(x, c))
    }

    pub fn add_const(&mut self, x: NodeId, c: f64) -> NodeId {
        let v = self.value(x).map(|a| a + c);
        self.push(v, Op::AddConst(x))
    }

    pub fn abs(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).map(f64::abs);
        self.push(v, Op::Abs(x))
    }

    pub fn neg(&mut self, x: NodeId) -> NodeId {
        let v = self.value(x).map(|a| -a);
        self.push(v, Op::Neg(x))
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        let v = Tensor::scalar(self.value(x).values().iter().sum());
        self.push(v, Op::Sum(x))
    }

    pub fn mean(&mut self, x: NodeId) -> NodeId {
        let t = self.value(x);
        let v = Tensor::scalar(t.values().iter().sum::<f64>() / t.len() as f64);
        self.push(v, Op::Mean(x))
    }

    /// Select rows of a 2-D node.
    pub fn gather_rows(&mut self, x: NodeId, rows: Vec<usize>) -> Result<NodeId> {
        let t = self.value(x);
        let cols = t.cols();
        let mut out = Vec::with_capacity(rows.len() * cols);
        for &r in &rows {
            if r >= t.rows() {
                return Err(Error::Shape(format!(
                    "gather row {r} out of {} rows",
                    t.rows()
                )));
            }
            out.extend_from_slice(t.row(r));
        }
        let v = Tensor::new(vec![rows.len(), cols], out)?;
        Ok(self.push(v, Op::Gather(x, rows)))
    }

    /// Sum of scaled nodes: `Σ coeff_i · x_i`. All operands must be scalars.
    pub fn weighted_sum(&mut self, terms: &[(f64, NodeId)]) -> Result<NodeId> {
        let mut acc: Option<NodeId> = None;
        for &(c, id) in terms {
            let scaled = self.scale(id, c);
            acc = Some(match acc {
                None => scaled,
                Some(a) => self.add(a, scaled)?,
            });
        }
        acc.ok_or_else(|| Error::Contract("weighted_sum over no terms".into()))
    }

    /// Reverse pass from a scalar `loss`. Returns one gradient tensor per
    /// parameter slot (zero tensors are omitted as `None`).
    pub fn backward(&self, loss: NodeId) -> Result<Vec<Option<Tensor>>> {
        if !self.value(loss).is_scalar() {
            return Err(Error::Contract(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.value(loss).shape()
            )));
        }
        let mut adj: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[loss.0] = Some(Tensor::scalar(1.0));
        let mut grads: Vec<Option<Tensor>> = (0..=self.max_slot).map(|_| None).collect();

        for idx in (0..self.nodes.len()).rev() {
            let g = match adj[idx].take() {
                Some(g) => g,
                None => continue,
            };
            let node = &self.nodes[idx];
            match node.op {
                Op::Input => {}
                Op::Param(slot) => accumulate(&mut grads[slot], &g),
                Op::MatMul(a, b) => {
                    let at = self.value(a);
                    let bt = self.value(b);
                    // dA = g @ B^T
                    let (n, m) = (at.rows(), bt.cols());
                    let k = at.cols();
                    let mut da = vec![0.0; n * k];
                    let mut db = vec![0.0; k * m];
                    for i in 0..n {
                        let grow = g.row(i);
                        for l in 0..k {
                            let brow = bt.row(l);
                            let mut s = 0.0;
                            for j in 0..m {
                                s += grow[j] * brow[j];
                            }
                            da[i * k + l] = s;
                        }
                    }
                    for l in 0..k {
                        for i in 0..n {
                            let ail = at.row(i)[l];
                            let grow = g.row(i);
                            let drow = &mut db[l * m..(l + 1) * m];
                            for (dj, &gj) in drow.iter_mut().zip(grow) {
                                *dj += ail * gj;
                            }
                        }
                    }
                    let da = Tensor::new(at.shape().to_vec(), da)?;
                    let db = Tensor::new(bt.shape().to_vec(), db)?;
                    accumulate(&mut adj[a.0], &da);
                    accumulate(&mut adj[b.0], &db);
                }
                Op::AddBias(x, bias) => {
                    let cols = self.value(x).cols();
                    let mut dbias = vec![0.0; cols];
                    for (i, &gv) in g.values().iter().enumerate() {
                        dbias[i % cols] += gv;
                    }
                    accumulate(&mut adj[x.0], &g);
                    accumulate(&mut adj[bias.0], &Tensor::vector(dbias));
                }
                Op::Relu(x) => {
                    let d = self
                        .value(x)
                        .zip(&g, |xv, gv| if xv > 0.0 { gv } else { 0.0 })?;
                    accumulate(&mut adj[x.0], &d);
                }
                Op::LogSoftmax(x) => {
                    // dx = g - softmax(x) * rowsum(g)
                    let ls = &node.value;
                    let cols = ls.cols();
                    let mut d = g.clone();
                    for r in 0..ls.rows() {
                        let grow = g.row(r);
                        let gsum: f64 = grow.iter().sum();
                        let lsrow = ls.row(r);
                        let drow = &mut d.values_mut()[r * cols..(r + 1) * cols];
                        for j in 0..cols {
                            drow[j] = grow[j] - lsrow[j].exp() * gsum;
                        }
                    }
                    accumulate(&mut adj[x.0], &d);
                }
                Op::Exp(x) => {
                    let d = node.value.zip(&g, |v, gv| v * gv)?;
                    accumulate(&mut adj[x.0], &d);
                }
                Op::Log(x) => {
                    let d = self.value(x).zip(&g, |v, gv| gv / v)?;
                    accumulate(&mut adj[x.0], &d);
                }
                Op::Softplus(x) => {
                    let d = self
                        .value(x)
                        .zip(&g, |v, gv| gv / (1.0 + (-v).exp()))?;
                    accumulate(&mut adj[x.0], &d);
                }
                Op::Add(a, b) => {
                    accumulate(&mut adj[a.0], &g);
                    accumulate(&mut adj[b.0], &g);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut adj[a.0], &g);
                    let ng = g.map(|v| -v);
                    accumulate(&mut adj[b.0], &ng);
                }
                Op::Mul(a, b) => {
                    let da = self.value(b).zip(&g, |bv, gv| bv * gv)?;
                    let db = self.value(a).zip(&g, |av, gv| av * gv)?;
                    accumulate(&mut adj[a.0], &da);
                    accumulate(&mut adj[b.0], &db);
                }
                Op::Scale(x, c) => {
                    let d = g.map(|v| v * c);
                    accumulate(&mut adj[x.0], &d);
                }
                Op::AddConst(x) => accumulate(&mut adj[x.0], &g),
                Op::Abs(x) => {
                    let d = self.value(x).zip(&g, |v, gv| gv * sign(v))?;
                    accumulate(&mut adj[x.0], &d);
                }
                Op::Neg(x) => {
                    let d = g.map(|v| -v);
                    accumulate(&mut adj[x.0], &d);
                }
                Op::Sum(x) => {
                    let gv = g.item();
                    let d = self.value(x).map(|_| gv);
                    accumulate(&mut adj[x.0], &d);
                }
                Op::Mean(x) => {
                    let n = self.value(x).len() as f64;
                    let gv = g.item() / n;
                    let d = self.value(x).map(|_| gv);
                    accumulate(&mut adj[x.0], &d);
                }
                Op::Gather(x, ref rows) => {
                    let src = self.value(x);
                    let cols = src.cols();
                    let mut d = Tensor::zeros(src.shape().to_vec());
                    for (out_r, &src_r) in rows.iter().enumerate() {
                        let grow = g.row(out_r);
                        let drow = &mut d.values_mut()[src_r * cols..(src_r + 1) * cols];
                        for (dv, &gv) in drow.iter_mut().zip(grow) {
                            *dv += gv;
                        }
                    }
                    accumulate(&mut adj[x.0], &d);
                }
            }
        }
        Ok(grads)
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

fn accumulate(slot: &mut Option<Tensor>, g: &Tensor) {
    match slot {
        None => *slot = Some(g.clone()),
        Some(existing) => {
            for (e, v) in existing.values_mut().iter_mut().zip(g.values()) {
                *e += v;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_gradient() {
        // loss = w^2 at w = 3 -> dloss/dw = 6
        let mut tape = Tape::new();
        let w = tape.param(0, Tensor::scalar(3.0));
        let sq = tape.mul(w, w).unwrap();
        let loss = tape.sum(sq);
        let grads = tape.backward(loss).unwrap();
        assert_eq!(grads[0].as_ref().unwrap().item(), 6.0);
    }

    #[test]
    fn non_scalar_loss_is_rejected() {
        let mut tape = Tape::new();
        let w = tape.param(0, Tensor::vector(vec![1.0, 2.0]));
        assert!(tape.backward(w).is_err());
    }

    #[test]
    fn softmax_cross_entropy_closed_form() {
        // grad at logits = p - onehot(y)
        let mut tape = Tape::new();
        let logits = tape.param(0, Tensor::matrix(1, 3, vec![0.2, -0.1, 0.5]).unwrap());
        let ls = tape.log_softmax(logits);
        let onehot = tape.input(Tensor::matrix(1, 3, vec![0.0, 1.0, 0.0]).unwrap());
        let picked = tape.mul(ls, onehot).unwrap();
        let s = tape.sum(picked);
        let loss = tape.neg(s);
        let grads = tape.backward(loss).unwrap();
        let p = tape.value(ls).map(f64::exp);
        let g = grads[0].as_ref().unwrap();
        for j in 0..3 {
            let expect = p.values()[j] - if j == 1 { 1.0 } else { 0.0 };
            assert!((g.values()[j] - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn log_softmax_rows_normalize() {
        let mut tape = Tape::new();
        let x = tape.input(Tensor::matrix(2, 3, vec![1.0, 2.0, 3.0, -5.0, 0.0, 5.0]).unwrap());
        let p = tape.softmax(x);
        for r in 0..2 {
            let s: f64 = tape.value(p).row(r).iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
        }
    }
}
