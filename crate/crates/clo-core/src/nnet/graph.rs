//! A two-level reverse-mode tape: heavy leaf nodes are sequence scorings
//! (each carrying the activation cache of one transformer forward pass),
//! and everything above them is cheap scalar arithmetic. Backward walks the
//! scalar adjoints in reverse and, at each leaf, pushes the accumulated
//! adjoint through the transformer.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};

use super::forward::{backward_scored, score_with_cache, SeqCache};
use super::{GradStore, PolicyModel};

static NEXT_GRAPH_ID: AtomicU64 = AtomicU64::new(1);

/// Handle to a scalar node; only valid for the graph that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NodeId {
    graph_id: u64,
    index: usize,
}

enum Op {
    SeqLogProb(Box<SeqCache>),
    Constant,
    Add(usize, usize),
    Sub(usize, usize),
    Neg(usize),
    Scale(f64, usize),
    AddConst(usize),
    Softplus(usize),
    Mean(Vec<usize>),
}

/// Scalar expression graph over sequence log-probabilities of one model.
///
/// Borrowing the model for the graph's lifetime guarantees the parameters
/// cannot change between the forward passes and `backward`.
pub struct Graph<'m> {
    model: &'m PolicyModel,
    graph_id: u64,
    ops: Vec<Op>,
    values: Vec<f64>,
}

/// ln(1 + e^x), computed without overflow for any finite x.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Logistic sigmoid, stable on both tails.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl<'m> Graph<'m> {
    pub fn new(model: &'m PolicyModel) -> Self {
        Graph {
            model,
            graph_id: NEXT_GRAPH_ID.fetch_add(1, Ordering::Relaxed),
            ops: Vec::new(),
            values: Vec::new(),
        }
    }

    pub fn model(&self) -> &PolicyModel {
        self.model
    }

    fn push(&mut self, op: Op, value: f64) -> NodeId {
        self.ops.push(op);
        self.values.push(value);
        NodeId {
            graph_id: self.graph_id,
            index: self.values.len() - 1,
        }
    }

    fn own(&self, id: NodeId) -> Result<usize> {
        if id.graph_id != self.graph_id {
            return Err(Error::Autodiff(
                "node belongs to a different graph".into(),
            ));
        }
        Ok(id.index)
    }

    /// Differentiable sequence scoring; runs a cached forward pass.
    pub fn seq_logprob(&mut self, prompt: &[u32], response: &[u32]) -> Result<NodeId> {
        let cache = score_with_cache(self.model, prompt, response)?;
        let value = cache.logprob_sum;
        Ok(self.push(Op::SeqLogProb(Box::new(cache)), value))
    }

    pub fn constant(&mut self, value: f64) -> NodeId {
        self.push(Op::Constant, value)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ia, ib) = (self.own(a)?, self.own(b)?);
        let v = self.values[ia] + self.values[ib];
        Ok(self.push(Op::Add(ia, ib), v))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let (ia, ib) = (self.own(a)?, self.own(b)?);
        let v = self.values[ia] - self.values[ib];
        Ok(self.push(Op::Sub(ia, ib), v))
    }

    pub fn neg(&mut self, a: NodeId) -> Result<NodeId> {
        let ia = self.own(a)?;
        let v = -self.values[ia];
        Ok(self.push(Op::Neg(ia), v))
    }

    pub fn scale(&mut self, c: f64, a: NodeId) -> Result<NodeId> {
        let ia = self.own(a)?;
        let v = c * self.values[ia];
        Ok(self.push(Op::Scale(c, ia), v))
    }

    pub fn add_const(&mut self, c: f64, a: NodeId) -> Result<NodeId> {
        let ia = self.own(a)?;
        let v = c + self.values[ia];
        Ok(self.push(Op::AddConst(ia), v))
    }

    pub fn softplus(&mut self, a: NodeId) -> Result<NodeId> {
        let ia = self.own(a)?;
        let v = softplus(self.values[ia]);
        Ok(self.push(Op::Softplus(ia), v))
    }

    /// Arithmetic mean of a non-empty set of nodes.
    pub fn mean(&mut self, nodes: &[NodeId]) -> Result<NodeId> {
        if nodes.is_empty() {
            return Err(Error::Autodiff("mean over an empty node set".into()));
        }
        let mut indices = Vec::with_capacity(nodes.len());
        let mut sum = 0.0;
        for &n in nodes {
            let i = self.own(n)?;
            indices.push(i);
            sum += self.values[i];
        }
        let v = sum / nodes.len() as f64;
        Ok(self.push(Op::Mean(indices), v))
    }

    pub fn value(&self, id: NodeId) -> Result<f64> {
        Ok(self.values[self.own(id)?])
    }

    /// Gradient of the scalar at `loss` with respect to every model
    /// parameter.
    pub fn backward(&self, loss: NodeId) -> Result<GradStore> {
        let root = self.own(loss)?;
        let mut adjoint = vec![0.0; self.values.len()];
        adjoint[root] = 1.0;
        let mut grads = GradStore::zeros(self.model.config());
        for idx in (0..=root).rev() {
            let a = adjoint[idx];
            if a == 0.0 {
                continue;
            }
            match &self.ops[idx] {
                Op::SeqLogProb(cache) => backward_scored(self.model, cache, a, &mut grads),
                Op::Constant => {}
                Op::Add(x, y) => {
                    adjoint[*x] += a;
                    adjoint[*y] += a;
                }
                Op::Sub(x, y) => {
                    adjoint[*x] += a;
                    adjoint[*y] -= a;
                }
                Op::Neg(x) => adjoint[*x] -= a,
                Op::Scale(c, x) => adjoint[*x] += c * a,
                Op::AddConst(x) => adjoint[*x] += a,
                Op::Softplus(x) => adjoint[*x] += a * sigmoid(self.values[*x]),
                Op::Mean(xs) => {
                    let share = a / xs.len() as f64;
                    for &x in xs {
                        adjoint[x] += share;
                    }
                }
            }
        }
        Ok(grads)
    }
}
