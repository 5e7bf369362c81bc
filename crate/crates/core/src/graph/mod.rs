//! Reverse-mode tape over [`Tensor`] values.
//!
//! Operations append a node holding their output value and enough saved state
//! for the backward rule. Nodes are appended in execution order, so the tape is
//! always topologically sorted and [`Graph::backward`] is a single reverse
//! sweep. Every forward operation also charges its work to the current FLOP
//! scope.
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{contract_err, Error, Result};
use crate::flops::{FlopCount, FlopCounter};
use crate::tensor::Tensor;

mod attention_op;
mod loss_ops;
mod nn;

pub use nn::{hsigmoid as nn_hsigmoid, sigmoid as nn_sigmoid};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub(crate) enum Op {
    Leaf,
    PointwiseLinear { x: NodeId, w: NodeId, b: NodeId },
    Conv2d { x: NodeId, w: NodeId, b: NodeId, stride: usize, pad: usize },
    GlobalMaxPool { x: NodeId, argmax: Vec<usize> },
    GlobalAvgPool { x: NodeId },
    HSigmoid { x: NodeId },
    Sigmoid { x: NodeId },
    Relu { x: NodeId },
    Mul { a: NodeId, b: NodeId },
    Add { a: NodeId, b: NodeId },
    BroadcastAdd { x: NodeId, g: NodeId },
    Scale { x: NodeId, c: f64 },
    ConcatChannels { a: NodeId, b: NodeId },
    L2Normalize { x: NodeId, axis: usize, eps: f64 },
    ChannelDot { v: NodeId, a: NodeId },
    Upsample { x: NodeId },
    Sum { x: NodeId },
    MeanOf { items: Vec<NodeId> },
    Dice { logits: NodeId, target: Tensor },
    BceLogits { logits: NodeId, target: Tensor },
    BceProb { probs: NodeId, target: Tensor },
    SoftmaxCe { logits: NodeId, classes: Vec<usize> },
    SpatialKl { scores: NodeId, target: Tensor },
    Attention { q: NodeId, k: NodeId, v: NodeId, probs: Vec<f64> },
}

struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Execution tape plus FLOP counter.
#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
    flops: FlopCounter,
    scopes: Vec<String>,
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

    /// Adds an input. Gradients are accumulated for it when `requires_grad`.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Result<NodeId> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: "leaf" });
        }
        Ok(self.push(value, Op::Leaf, requires_grad))
    }

    pub fn constant(&mut self, value: Tensor) -> Result<NodeId> {
        self.leaf(value, false)
    }

    pub fn param(&mut self, value: Tensor) -> Result<NodeId> {
        self.leaf(value, true)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Gradient of the last [`backward`](Self::backward) root with respect to `id`.
    pub fn grad(&self, id: NodeId) -> Option<Tensor> {
        let g = self.grads.get(id.0)?.as_ref()?;
        Tensor::new(self.value(id).shape().to_vec(), g.clone()).ok()
    }

    /// Row-stochastic attention weights saved by an attention node, `[B, N, N]`.
    pub fn attention_weights(&self, id: NodeId) -> Option<&[f64]> {
        match &self.nodes[id.0].op {
            Op::Attention { probs, .. } => Some(probs),
            _ => None,
        }
    }

    pub fn flops(&self) -> &FlopCounter {
        &self.flops
    }

    pub fn reset_flops(&mut self) {
        self.flops.reset();
    }

    pub fn push_scope(&mut self, name: &str) {
        self.scopes.push(String::from(name));
    }

    pub fn pop_scope(&mut self) {
        self.scopes.pop();
    }

    /// Runs `f` with `name` appended to the FLOP scope path.
    pub fn scoped<T>(&mut self, name: &str, f: impl FnOnce(&mut Self) -> T) -> T {
        self.push_scope(name);
        let out = f(self);
        self.pop_scope();
        out
    }

    pub fn scope_path(&self) -> String {
        if self.scopes.is_empty() {
            String::from("unscoped")
        } else {
            self.scopes.join("/")
        }
    }

    fn charge(&mut self, macs: usize, elementwise: usize) {
        let key = self.scope_path();
        self.flops.record(
            &key,
            FlopCount {
                macs: macs as u64,
                elementwise: elementwise as u64,
            },
        );
    }

    fn push(&mut self, value: Tensor, op: Op, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Appends a computed node after checking its values are finite.
    fn emit(&mut self, name: &'static str, value: Tensor, op: Op, inputs: &[NodeId]) -> Result<NodeId> {
        if !value.is_finite() {
            return Err(Error::NonFinite { op: name });
        }
        let rg = inputs.iter().any(|&i| self.nodes[i.0].requires_grad);
        Ok(self.push(value, op, rg))
    }

    /// Hash of every piecewise branch taken on the tape: ReLU and hard-sigmoid
    /// regions, max-pool winners and probability clamps. Two evaluations with
    /// equal signatures lie on the same smooth piece.
    pub fn branch_signature(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |v: u64| {
            h ^= v;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        };
        for (i, node) in self.nodes.iter().enumerate() {
            match &node.op {
                Op::Relu { x } => {
                    eat(i as u64);
                    self.value(*x).data().iter().for_each(|&v| eat((v > 0.0) as u64));
                }
                Op::HSigmoid { x } => {
                    eat(i as u64);
                    self.value(*x).data().iter().for_each(|&v| eat((v > -3.0) as u64 + (v >= 3.0) as u64));
                }
                Op::GlobalMaxPool { argmax, .. } => {
                    eat(i as u64);
                    argmax.iter().for_each(|&a| eat(a as u64));
                }
                Op::BceProb { probs, .. } => {
                    eat(i as u64);
                    self.value(*probs).data().iter().for_each(|&p| {
                        eat((p > loss_ops::PROB_CLAMP) as u64 + (p >= 1.0 - loss_ops::PROB_CLAMP) as u64)
                    });
                }
                _ => {}
            }
        }
        h
    }

    /// Accumulates `d loss / d node` for every node feeding `loss`.
    pub fn backward(&mut self, loss: NodeId) -> Result<()> {
        if self.value(loss).numel() != 1 {
            return Err(contract_err!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            ));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        for (i, g) in grads.iter().enumerate() {
            if let Some(g) = g {
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite {
                        op: op_name(&self.nodes[i].op),
                    });
                }
            }
        }
        self.grads = grads;
        Ok(())
    }

    fn backward_node(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        match &node.op {
            Op::Leaf => {}
            Op::PointwiseLinear { x, w, b } => self.back_pointwise_linear(*x, *w, *b, g, grads),
            Op::Conv2d { x, w, b, stride, pad } => {
                self.back_conv2d(*x, *w, *b, *stride, *pad, g, grads)
            }
            Op::GlobalMaxPool { x, argmax } => self.back_max_pool(*x, argmax, g, grads),
            Op::GlobalAvgPool { x } => self.back_avg_pool(*x, g, grads),
            Op::HSigmoid { x } => {
                let xv = self.value(*x).data();
                self.accumulate(*x, grads, |d| {
                    for ((d, &x), &g) in d.iter_mut().zip(xv).zip(g) {
                        if x > -3.0 && x < 3.0 {
                            *d += g / 6.0;
                        }
                    }
                });
            }
            Op::Sigmoid { x } => {
                let y = node.value.data();
                self.accumulate(*x, grads, |d| {
                    for ((d, &y), &g) in d.iter_mut().zip(y).zip(g) {
                        *d += g * y * (1.0 - y);
                    }
                });
            }
            Op::Relu { x } => {
                let xv = self.value(*x).data();
                self.accumulate(*x, grads, |d| {
                    for ((d, &x), &g) in d.iter_mut().zip(xv).zip(g) {
                        if x > 0.0 {
                            *d += g;
                        }
                    }
                });
            }
            Op::Mul { a, b } => {
                let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                self.accumulate(*a, grads, |d| {
                    for ((d, &b), &g) in d.iter_mut().zip(bv).zip(g) {
                        *d += g * b;
                    }
                });
                self.accumulate(*b, grads, |d| {
                    for ((d, &a), &g) in d.iter_mut().zip(av).zip(g) {
                        *d += g * a;
                    }
                });
            }
            Op::Add { a, b } => {
                for id in [*a, *b] {
                    self.accumulate(id, grads, |d| add_into(d, g));
                }
            }
            Op::BroadcastAdd { x, g: bias } => self.back_broadcast_add(*x, *bias, g, grads),
            Op::Scale { x, c } => {
                self.accumulate(*x, grads, |d| {
                    for (d, &g) in d.iter_mut().zip(g) {
                        *d += c * g;
                    }
                });
            }
            Op::ConcatChannels { a, b } => self.back_concat(*a, *b, g, grads),
            Op::L2Normalize { x, axis, eps } => self.back_l2_normalize(*x, *axis, *eps, g, grads),
            Op::ChannelDot { v, a } => self.back_channel_dot(*v, *a, g, grads),
            Op::Upsample { x } => self.back_upsample(*x, node.value.shape(), g, grads),
            Op::Sum { x } => {
                self.accumulate(*x, grads, |d| d.iter_mut().for_each(|d| *d += g[0]));
            }
            Op::MeanOf { items } => {
                let share = g[0] / items.len() as f64;
                for &id in items {
                    self.accumulate(id, grads, |d| d[0] += share);
                }
            }
            Op::Dice { logits, target } => self.back_dice(*logits, target, g[0], grads),
            Op::BceLogits { logits, target } => self.back_bce_logits(*logits, target, g[0], grads),
            Op::BceProb { probs, target } => self.back_bce_prob(*probs, target, g[0], grads),
            Op::SoftmaxCe { logits, classes } => self.back_softmax_ce(*logits, classes, g[0], grads),
            Op::SpatialKl { scores, target } => self.back_spatial_kl(*scores, target, g[0], grads),
            Op::Attention { q, k, v, probs } => self.back_attention(*q, *k, *v, probs, g, grads),
        }
    }

    /// Lazily allocates the gradient buffer of `id` and lets `f` add into it.
    fn accumulate(&self, id: NodeId, grads: &mut [Option<Vec<f64>>], f: impl FnOnce(&mut [f64])) {
        if !self.nodes[id.0].requires_grad {
            return;
        }
        let n = self.nodes[id.0].value.numel();
        let buf = grads[id.0].get_or_insert_with(|| vec![0.0; n]);
        f(buf);
    }
}

fn add_into(d: &mut [f64], g: &[f64]) {
    for (d, &g) in d.iter_mut().zip(g) {
        *d += g;
    }
}

fn op_name(op: &Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::PointwiseLinear { .. } => "pointwise_linear",
        Op::Conv2d { .. } => "conv2d",
        Op::GlobalMaxPool { .. } => "global_max_pool",
        Op::GlobalAvgPool { .. } => "global_avg_pool",
        Op::HSigmoid { .. } => "hsigmoid",
        Op::Sigmoid { .. } => "sigmoid",
        Op::Relu { .. } => "relu",
        Op::Mul { .. } => "mul",
        Op::Add { .. } => "add",
        Op::BroadcastAdd { .. } => "broadcast_add",
        Op::Scale { .. } => "scale",
        Op::ConcatChannels { .. } => "concat_channels",
        Op::L2Normalize { .. } => "l2_normalize",
        Op::ChannelDot { .. } => "channel_dot",
        Op::Upsample { .. } => "bilinear_upsample",
        Op::Sum { .. } => "sum",
        Op::MeanOf { .. } => "mean_of",
        Op::Dice { .. } => "dice_loss",
        Op::BceLogits { .. } => "bce_loss",
        Op::BceProb { .. } => "bce_prob",
        Op::SoftmaxCe { .. } => "softmax_ce",
        Op::SpatialKl { .. } => "spatial_kl",
        Op::Attention { .. } => "attention",
    }
}
