//! Reverse-mode differentiation tape over the kernels in [`crate::ops`].
//!
//! Nodes are appended in construction order, so reverse index order is a
//! valid reverse-topological order and backward visits each node exactly
//! once. Gradient slots always match the value shape. A tape built with
//! `grad_enabled = false` computes identical values but records no
//! parents, which is the inference mode.

use std::collections::BTreeMap;

use crate::error::{shape_err, Error, Result};
use crate::ops::activation::{gelu_grad_scalar, softmax_lastdim_backward};
use crate::ops::conv::{conv2d_backward, laplacian_backward};
use crate::ops::norm::{batchnorm2d_backward, layernorm_backward, BnSaved};
use crate::ops::resize::bilinear_resize_backward;
use crate::ops::{self, ConvSpec, PoolMode};
use crate::scalar::Real;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(usize);

struct NodeData<T> {
    value: Tensor<T>,
    requires_grad: bool,
    name: Option<String>,
    op: Op<T>,
}

enum Op<T> {
    Leaf,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    AddBroadcast(NodeId, NodeId),
    MulBroadcast(NodeId, NodeId),
    Scale(NodeId, T),
    AddScalar(NodeId),
    Matmul(NodeId, NodeId),
    BmmNn(NodeId, NodeId),
    BmmNt(NodeId, NodeId),
    Conv2d {
        input: NodeId,
        weight: NodeId,
        bias: Option<NodeId>,
        spec: ConvSpec,
    },
    Laplacian(NodeId),
    BatchNorm {
        input: NodeId,
        gamma: NodeId,
        beta: NodeId,
        saved: BnSaved<T>,
    },
    LayerNorm {
        input: NodeId,
        gamma: NodeId,
        beta: NodeId,
        mean: Vec<T>,
        inv_std: Vec<T>,
    },
    Relu(NodeId),
    Sigmoid(NodeId),
    Gelu(NodeId),
    SoftmaxLast(NodeId),
    AvgPool {
        input: NodeId,
        window: (usize, usize),
        stride: (usize, usize),
        padding: (usize, usize),
    },
    MaxPool {
        input: NodeId,
        argmax: Vec<usize>,
    },
    GlobalAvgPool(NodeId),
    GlobalMaxPool {
        input: NodeId,
        argmax: Vec<usize>,
    },
    ChannelMean(NodeId),
    ChannelMax {
        input: NodeId,
        argmax: Vec<usize>,
    },
    Resize {
        input: NodeId,
        in_h: usize,
        in_w: usize,
    },
    Reshape(NodeId),
    Permute {
        input: NodeId,
        perm: Vec<usize>,
    },
    ConcatChannels(Vec<NodeId>),
    SliceLast {
        input: NodeId,
        start: usize,
    },
    SumAll(NodeId),
    WeightedBceIou {
        logits: NodeId,
        target: Tensor<T>,
        weight: Tensor<T>,
        eps: f64,
    },
}

pub struct Tape<T: Real> {
    nodes: Vec<NodeData<T>>,
    grad_enabled: bool,
}

/// Per-node gradients produced by [`Tape::backward`].
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
}

impl<T: Real> Gradients<T> {
    pub fn by_id(&self, id: NodeId) -> Option<&Tensor<T>> {
        self.grads[id.0].as_ref()
    }

    /// Gradients of all named leaves, keyed by name.
    pub fn named(&self, tape: &Tape<T>) -> BTreeMap<String, Tensor<T>> {
        let mut out = BTreeMap::new();
        for (i, node) in tape.nodes.iter().enumerate() {
            if let (Some(name), Some(grad)) = (&node.name, &self.grads[i]) {
                out.insert(name.clone(), grad.clone());
            }
        }
        out
    }
}

impl<T: Real> Tape<T> {
    pub fn new(grad_enabled: bool) -> Self {
        Tape {
            nodes: Vec::new(),
            grad_enabled,
        }
    }

    pub fn grad_enabled(&self) -> bool {
        self.grad_enabled
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    fn push(&mut self, value: Tensor<T>, requires_grad: bool, name: Option<String>, op: Op<T>) -> NodeId {
        let (requires_grad, op) = if self.grad_enabled {
            (requires_grad, op)
        } else {
            (false, Op::Leaf)
        };
        self.nodes.push(NodeData {
            value,
            requires_grad,
            name,
            op,
        });
        NodeId(self.nodes.len() - 1)
    }

    /// Constant input (no gradient).
    pub fn leaf(&mut self, value: Tensor<T>) -> NodeId {
        self.push(value, false, None, Op::Leaf)
    }

    /// Trainable leaf; its gradient is reported under `name`.
    pub fn param(&mut self, name: impl Into<String>, value: Tensor<T>) -> NodeId {
        self.push(value, true, Some(name.into()), Op::Leaf)
    }

    fn req(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = ops::add(self.value(a), self.value(b))?;
        Ok(self.push(v, self.req(a) || self.req(b), None, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = ops::sub(self.value(a), self.value(b))?;
        Ok(self.push(v, self.req(a) || self.req(b), None, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = ops::mul(self.value(a), self.value(b))?;
        Ok(self.push(v, self.req(a) || self.req(b), None, Op::Mul(a, b)))
    }

    /// `a + b` with `b` broadcast onto `a`.
    pub fn add_bc(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = ops::add_broadcast(self.value(a), self.value(b))?;
        Ok(self.push(v, self.req(a) || self.req(b), None, Op::AddBroadcast(a, b)))
    }

    /// `a * b` with `b` broadcast onto `a`.
    pub fn mul_bc(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = ops::mul_broadcast(self.value(a), self.value(b))?;
        Ok(self.push(v, self.req(a) || self.req(b), None, Op::MulBroadcast(a, b)))
    }

    pub fn scale(&mut self, a: NodeId, s: T) -> Result<NodeId> {
        let v = ops::scale(self.value(a), s)?;
        Ok(self.push(v, self.req(a), None, Op::Scale(a, s)))
    }

    pub fn add_scalar(&mut self, a: NodeId, s: T) -> Result<NodeId> {
        let v = ops::add_scalar(self.value(a), s)?;
        Ok(self.push(v, self.req(a), None, Op::AddScalar(a)))
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = ops::matmul(self.value(a), self.value(b))?;
        Ok(self.push(v, self.req(a) || self.req(b), None, Op::Matmul(a, b)))
    }

    pub fn bmm_nn(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = ops::bmm_nn(self.value(a), self.value(b))?;
        Ok(self.push(v, self.req(a) || self.req(b), None, Op::BmmNn(a, b)))
    }

    pub fn bmm_nt(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let v = ops::bmm_nt(self.value(a), self.value(b))?;
        Ok(self.push(v, self.req(a) || self.req(b), None, Op::BmmNt(a, b)))
    }

    pub fn conv2d(&mut self, input: NodeId, weight: NodeId, bias: Option<NodeId>, spec: ConvSpec) -> Result<NodeId> {
        let v = ops::conv2d(
            self.value(input),
            self.value(weight),
            bias.map(|b| self.value(b)),
            &spec,
        )?;
        let req = self.req(input) || self.req(weight) || bias.is_some_and(|b| self.req(b));
        Ok(self.push(v, req, None, Op::Conv2d { input, weight, bias, spec }))
    }

    pub fn dwconv2d(&mut self, input: NodeId, weight: NodeId, spec: ConvSpec) -> Result<NodeId> {
        let (_, c, _, _) = self.value(input).dims4()?;
        if spec.groups != c {
            return Err(Error::InvalidSpec {
                op: "dwconv2d",
                detail: format!("groups {} must equal channels {c}", spec.groups),
            });
        }
        self.conv2d(input, weight, None, spec)
    }

    /// Fixed-stencil Laplacian response (replicated borders, non-trainable).
    pub fn laplacian(&mut self, input: NodeId) -> Result<NodeId> {
        let v = ops::laplacian_response(self.value(input))?;
        Ok(self.push(v, self.req(input), None, Op::Laplacian(input)))
    }

    /// Batch norm; in training mode the returned pair carries the updated
    /// running statistics for the caller to write back into its store.
    #[allow(clippy::too_many_arguments, clippy::type_complexity)]
    pub fn batchnorm(
        &mut self,
        input: NodeId,
        gamma: NodeId,
        beta: NodeId,
        running_mean: &Tensor<T>,
        running_var: &Tensor<T>,
        training: bool,
        momentum: f64,
        eps: f64,
    ) -> Result<(NodeId, Option<(Tensor<T>, Tensor<T>)>)> {
        let (v, saved, updates) = ops::norm::batchnorm2d(
            self.value(input),
            self.value(gamma),
            self.value(beta),
            running_mean,
            running_var,
            training,
            momentum,
            eps,
        )?;
        let req = self.req(input) || self.req(gamma) || self.req(beta);
        let id = self.push(v, req, None, Op::BatchNorm { input, gamma, beta, saved });
        Ok((id, updates))
    }

    pub fn layernorm(&mut self, input: NodeId, gamma: NodeId, beta: NodeId, eps: f64) -> Result<NodeId> {
        let (v, mean, inv_std) = ops::norm::layernorm(self.value(input), self.value(gamma), self.value(beta), eps)?;
        let req = self.req(input) || self.req(gamma) || self.req(beta);
        Ok(self.push(v, req, None, Op::LayerNorm { input, gamma, beta, mean, inv_std }))
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        let v = ops::relu(self.value(a))?;
        Ok(self.push(v, self.req(a), None, Op::Relu(a)))
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        let v = ops::sigmoid(self.value(a))?;
        Ok(self.push(v, self.req(a), None, Op::Sigmoid(a)))
    }

    pub fn gelu(&mut self, a: NodeId) -> Result<NodeId> {
        let v = ops::gelu(self.value(a))?;
        Ok(self.push(v, self.req(a), None, Op::Gelu(a)))
    }

    pub fn softmax_lastdim(&mut self, a: NodeId) -> Result<NodeId> {
        let v = ops::softmax_lastdim(self.value(a))?;
        Ok(self.push(v, self.req(a), None, Op::SoftmaxLast(a)))
    }

    pub fn avg_pool(
        &mut self,
        a: NodeId,
        window: (usize, usize),
        stride: (usize, usize),
        padding: (usize, usize),
    ) -> Result<NodeId> {
        let v = ops::pool2d(self.value(a), PoolMode::Avg, window, stride, padding)?;
        Ok(self.push(v, self.req(a), None, Op::AvgPool { input: a, window, stride, padding }))
    }

    pub fn max_pool(&mut self, a: NodeId, window: (usize, usize), stride: (usize, usize)) -> Result<NodeId> {
        let (v, argmax) = ops::pool::pool2d_impl(self.value(a), PoolMode::Max, window, stride, (0, 0))?;
        v.validate_finite("max_pool")?;
        Ok(self.push(v, self.req(a), None, Op::MaxPool { input: a, argmax }))
    }

    pub fn global_avg_pool(&mut self, a: NodeId) -> Result<NodeId> {
        let v = ops::global_avg_pool(self.value(a))?;
        Ok(self.push(v, self.req(a), None, Op::GlobalAvgPool(a)))
    }

    pub fn global_max_pool(&mut self, a: NodeId) -> Result<NodeId> {
        let (v, argmax) = ops::global_max_pool(self.value(a))?;
        Ok(self.push(v, self.req(a), None, Op::GlobalMaxPool { input: a, argmax }))
    }

    pub fn channel_mean(&mut self, a: NodeId) -> Result<NodeId> {
        let v = ops::channel_mean(self.value(a))?;
        Ok(self.push(v, self.req(a), None, Op::ChannelMean(a)))
    }

    pub fn channel_max(&mut self, a: NodeId) -> Result<NodeId> {
        let (v, argmax) = ops::channel_max(self.value(a))?;
        Ok(self.push(v, self.req(a), None, Op::ChannelMax { input: a, argmax }))
    }

    pub fn bilinear_resize(&mut self, a: NodeId, out_h: usize, out_w: usize) -> Result<NodeId> {
        let (_, _, in_h, in_w) = self.value(a).dims4()?;
        let v = ops::bilinear_resize(self.value(a), out_h, out_w)?;
        Ok(self.push(v, self.req(a), None, Op::Resize { input: a, in_h, in_w }))
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        let v = self.value(a).reshape(shape)?;
        Ok(self.push(v, self.req(a), None, Op::Reshape(a)))
    }

    pub fn permute(&mut self, a: NodeId, perm: &[usize]) -> Result<NodeId> {
        let v = ops::permute(self.value(a), perm)?;
        Ok(self.push(v, self.req(a), None, Op::Permute { input: a, perm: perm.to_vec() }))
    }

    pub fn concat_channels(&mut self, parts: &[NodeId]) -> Result<NodeId> {
        let tensors: Vec<&Tensor<T>> = parts.iter().map(|&p| self.value(p)).collect();
        let v = ops::concat_channels(&tensors)?;
        let req = parts.iter().any(|&p| self.req(p));
        Ok(self.push(v, req, None, Op::ConcatChannels(parts.to_vec())))
    }

    pub fn slice_lastdim(&mut self, a: NodeId, start: usize, len: usize) -> Result<NodeId> {
        let v = ops::slice_lastdim(self.value(a), start, len)?;
        Ok(self.push(v, self.req(a), None, Op::SliceLast { input: a, start }))
    }

    pub fn sum_all(&mut self, a: NodeId) -> Result<NodeId> {
        let v = ops::sum_all(self.value(a))?;
        Ok(self.push(v, self.req(a), None, Op::SumAll(a)))
    }

    /// Fused weighted BCE + weighted soft-IoU loss over `[N,1,H,W]` logits
    /// (mean over the batch). `target` must be binary; `weight` is a
    /// constant map of the same shape.
    pub fn weighted_bce_iou(
        &mut self,
        logits: NodeId,
        target: &Tensor<T>,
        weight: &Tensor<T>,
        eps: f64,
    ) -> Result<NodeId> {
        let x = self.value(logits);
        if x.shape() != target.shape() || x.shape() != weight.shape() {
            return Err(shape_err(
                "weighted_bce_iou",
                format!(
                    "logits {:?}, target {:?}, weight {:?}",
                    x.shape(),
                    target.shape(),
                    weight.shape()
                ),
            ));
        }
        if target.data().iter().any(|&t| {
            let t = t.to_f64();
            t != 0.0 && t != 1.0
        }) {
            return Err(Error::Input("weighted_bce_iou target must be binary".into()));
        }
        let (n, _, _, _) = x.dims4()?;
        let per = x.numel() / n;
        let xd = x.data();
        let td = target.data();
        let wd = weight.data();
        let mut total = 0.0f64;
        for nn in 0..n {
            let mut wsum = 0.0;
            let mut wbce = 0.0;
            let mut inter = 0.0;
            let mut union = 0.0;
            for i in nn * per..(nn + 1) * per {
                let xv = xd[i].to_f64();
                let tv = td[i].to_f64();
                let wv = wd[i].to_f64();
                let p = 1.0 / (1.0 + (-xv).exp());
                let bce = xv.max(0.0) - xv * tv + (1.0 + (-xv.abs()).exp()).ln();
                wbce += wv * bce;
                wsum += wv;
                inter += wv * p * tv;
                union += wv * (p + tv - p * tv);
            }
            total += wbce / wsum + (1.0 - (inter + eps) / (union + eps));
        }
        let v = Tensor::scalar(T::from_f64(total / n as f64));
        v.validate_finite("weighted_bce_iou")?;
        Ok(self.push(
            v,
            self.req(logits),
            None,
            Op::WeightedBceIou {
                logits,
                target: target.clone(),
                weight: weight.clone(),
                eps,
            },
        ))
    }

    /// Applies `w` (`[in, out]`) and bias `b` (`[out]`) to the last
    /// dimension of `x`.
    pub fn linear_lastdim(&mut self, x: NodeId, w: NodeId, b: Option<NodeId>) -> Result<NodeId> {
        let in_shape = self.value(x).shape().to_vec();
        let feat = *in_shape.last().unwrap();
        let (w_in, w_out) = self.value(w).dims2()?;
        if w_in != feat {
            return Err(shape_err("linear", format!("input features {feat} vs weight {w_in}")));
        }
        let rows = self.value(x).numel() / feat;
        let flat = self.reshape(x, &[rows, feat])?;
        let mut y = self.matmul(flat, w)?;
        if let Some(b) = b {
            let b2 = self.reshape(b, &[1, w_out])?;
            y = self.add_bc(y, b2)?;
        }
        let mut out_shape = in_shape;
        *out_shape.last_mut().unwrap() = w_out;
        self.reshape(y, &out_shape)
    }

    /// Reverse pass from a scalar root; returns gradients for every node
    /// that requires them. Leaf buffers and constants stay untouched.
    pub fn backward(&self, root: NodeId) -> Result<Gradients<T>> {
        if self.value(root).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward root must be scalar, got shape {:?}",
                self.value(root).shape()
            )));
        }
        if !self.nodes[root.0].requires_grad {
            return Err(Error::Contract(
                "backward root does not depend on any trainable leaf (or tape has gradients disabled)".into(),
            ));
        }
        let mut grads: Vec<Option<Tensor<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[root.0] = Some(Tensor::full(self.value(root).shape(), T::ONE));

        for i in (0..=root.0).rev() {
            if grads[i].is_none() || !self.nodes[i].requires_grad {
                continue;
            }
            let g = grads[i].take().unwrap();
            self.backprop_node(i, &g, &mut grads)?;
            grads[i] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn backprop_node(&self, i: usize, g: &Tensor<T>, grads: &mut [Option<Tensor<T>>]) -> Result<()> {
        let node = &self.nodes[i];
        let accum = |grads: &mut [Option<Tensor<T>>], id: NodeId, delta: Tensor<T>| -> Result<()> {
            debug_assert_eq!(self.value(id).shape(), delta.shape());
            match &mut grads[id.0] {
                Some(existing) => {
                    *existing = ops::add(existing, &delta)?;
                }
                slot @ None => *slot = Some(delta),
            }
            Ok(())
        };
        macro_rules! push_if {
            ($id:expr, $delta:expr) => {
                if self.req($id) {
                    accum(grads, $id, $delta)?;
                }
            };
        }

        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                push_if!(*a, g.clone());
                push_if!(*b, g.clone());
            }
            Op::Sub(a, b) => {
                push_if!(*a, g.clone());
                push_if!(*b, ops::scale(g, -T::ONE)?);
            }
            Op::Mul(a, b) => {
                push_if!(*a, ops::mul(g, self.value(*b))?);
                push_if!(*b, ops::mul(g, self.value(*a))?);
            }
            Op::AddBroadcast(a, b) => {
                push_if!(*a, g.clone());
                push_if!(*b, ops::linalg::reduce_to_shape(g, self.value(*b).shape())?);
            }
            Op::MulBroadcast(a, b) => {
                push_if!(*a, ops::mul_broadcast(g, self.value(*b))?);
                if self.req(*b) {
                    let gm = ops::mul(g, self.value(*a))?;
                    accum(grads, *b, ops::linalg::reduce_to_shape(&gm, self.value(*b).shape())?)?;
                }
            }
            Op::Scale(a, s) => {
                push_if!(*a, ops::scale(g, *s)?);
            }
            Op::AddScalar(a) => {
                push_if!(*a, g.clone());
            }
            Op::Matmul(a, b) => {
                if self.req(*a) {
                    let bt = ops::permute(self.value(*b), &[1, 0])?;
                    accum(grads, *a, ops::matmul(g, &bt)?)?;
                }
                if self.req(*b) {
                    let at = ops::permute(self.value(*a), &[1, 0])?;
                    accum(grads, *b, ops::matmul(&at, g)?)?;
                }
            }
            Op::BmmNn(a, b) => {
                if self.req(*a) {
                    accum(grads, *a, ops::bmm_nt(g, self.value(*b))?)?;
                }
                if self.req(*b) {
                    let at = ops::permute(self.value(*a), &[0, 2, 1])?;
                    accum(grads, *b, ops::bmm_nn(&at, g)?)?;
                }
            }
            Op::BmmNt(a, b) => {
                if self.req(*a) {
                    accum(grads, *a, ops::bmm_nn(g, self.value(*b))?)?;
                }
                if self.req(*b) {
                    let gt = ops::permute(g, &[0, 2, 1])?;
                    accum(grads, *b, ops::bmm_nn(&gt, self.value(*a))?)?;
                }
            }
            Op::Conv2d { input, weight, bias, spec } => {
                let (dx, dw, db) =
                    conv2d_backward(self.value(*input), self.value(*weight), bias.is_some(), spec, g)?;
                push_if!(*input, dx);
                push_if!(*weight, dw);
                if let (Some(b), Some(db)) = (bias, db) {
                    push_if!(*b, db);
                }
            }
            Op::Laplacian(a) => {
                push_if!(*a, laplacian_backward(self.value(*a).shape(), g)?);
            }
            Op::BatchNorm { input, gamma, beta, saved } => {
                let (dx, dg, db) = batchnorm2d_backward(self.value(*input), self.value(*gamma), saved, g)?;
                push_if!(*input, dx);
                push_if!(*gamma, dg);
                push_if!(*beta, db);
            }
            Op::LayerNorm { input, gamma, beta, mean, inv_std } => {
                let (dx, dg, db) =
                    layernorm_backward(self.value(*input), self.value(*gamma), mean, inv_std, g)?;
                push_if!(*input, dx);
                push_if!(*gamma, dg);
                push_if!(*beta, db);
            }
            Op::Relu(a) => {
                let x = self.value(*a);
                let mask = x.map(|v| if v > T::ZERO { T::ONE } else { T::ZERO });
                push_if!(*a, ops::mul(g, &mask)?);
            }
            Op::Sigmoid(a) => {
                let s = &node.value;
                let d = s.map(|v| v * (T::ONE - v));
                push_if!(*a, ops::mul(g, &d)?);
            }
            Op::Gelu(a) => {
                let d = self.value(*a).map(gelu_grad_scalar);
                push_if!(*a, ops::mul(g, &d)?);
            }
            Op::SoftmaxLast(a) => {
                push_if!(*a, softmax_lastdim_backward(&node.value, g)?);
            }
            Op::AvgPool { input, window, stride, padding } => {
                push_if!(*input, avg_pool_backward(self.value(*input).shape(), *window, *stride, *padding, g)?);
            }
            Op::MaxPool { input, argmax } | Op::GlobalMaxPool { input, argmax } => {
                let mut dx = vec![T::ZERO; self.value(*input).numel()];
                for (k, &src) in argmax.iter().enumerate() {
                    dx[src] += g.data()[k];
                }
                push_if!(*input, Tensor::new(self.value(*input).shape().to_vec(), dx)?);
            }
            Op::GlobalAvgPool(a) => {
                let (n, c, h, w) = self.value(*a).dims4()?;
                let inv = T::from_f64(1.0 / (h * w) as f64);
                let mut dx = vec![T::ZERO; n * c * h * w];
                for plane in 0..n * c {
                    let gv = g.data()[plane] * inv;
                    for v in &mut dx[plane * h * w..(plane + 1) * h * w] {
                        *v = gv;
                    }
                }
                push_if!(*a, Tensor::new(self.value(*a).shape().to_vec(), dx)?);
            }
            Op::ChannelMean(a) => {
                let (n, c, h, w) = self.value(*a).dims4()?;
                let inv = T::from_f64(1.0 / c as f64);
                let mut dx = vec![T::ZERO; n * c * h * w];
                for nn in 0..n {
                    for cc in 0..c {
                        let base = (nn * c + cc) * h * w;
                        let gb = nn * h * w;
                        for idx in 0..h * w {
                            dx[base + idx] = g.data()[gb + idx] * inv;
                        }
                    }
                }
                push_if!(*a, Tensor::new(self.value(*a).shape().to_vec(), dx)?);
            }
            Op::ChannelMax { input, argmax } => {
                let (n, c, h, w) = self.value(*input).dims4()?;
                let mut dx = vec![T::ZERO; n * c * h * w];
                for nn in 0..n {
                    for idx in 0..h * w {
                        let cc = argmax[nn * h * w + idx];
                        dx[(nn * c + cc) * h * w + idx] += g.data()[nn * h * w + idx];
                    }
                }
                push_if!(*input, Tensor::new(self.value(*input).shape().to_vec(), dx)?);
            }
            Op::Resize { input, in_h, in_w } => {
                push_if!(*input, bilinear_resize_backward(*in_h, *in_w, g)?);
            }
            Op::Reshape(a) => {
                push_if!(*a, g.reshape(self.value(*a).shape())?);
            }
            Op::Permute { input, perm } => {
                push_if!(*input, ops::permute(g, &ops::linalg::inverse_perm(perm))?);
            }
            Op::ConcatChannels(parts) => {
                let (n, _, h, w) = node.value.dims4()?;
                let gd = g.data();
                let c_total = node.value.shape()[1];
                let mut c_off = 0usize;
                for &p in parts {
                    let pc = self.value(p).shape()[1];
                    if self.req(p) {
                        let mut dp = Vec::with_capacity(n * pc * h * w);
                        for nn in 0..n {
                            let base = (nn * c_total + c_off) * h * w;
                            dp.extend_from_slice(&gd[base..base + pc * h * w]);
                        }
                        accum(grads, p, Tensor::new(vec![n, pc, h, w], dp)?)?;
                    }
                    c_off += pc;
                }
            }
            Op::SliceLast { input, start } => {
                let in_shape = self.value(*input).shape();
                let feat = *in_shape.last().unwrap();
                let len = *node.value.shape().last().unwrap();
                let rows = self.value(*input).numel() / feat;
                let mut dx = vec![T::ZERO; self.value(*input).numel()];
                for r in 0..rows {
                    for k in 0..len {
                        dx[r * feat + start + k] = g.data()[r * len + k];
                    }
                }
                push_if!(*input, Tensor::new(in_shape.to_vec(), dx)?);
            }
            Op::SumAll(a) => {
                let gv = g.data()[0];
                push_if!(*a, Tensor::full(self.value(*a).shape(), gv));
            }
            Op::WeightedBceIou { logits, target, weight, eps } => {
                if self.req(*logits) {
                    let x = self.value(*logits);
                    let (n, _, _, _) = x.dims4()?;
                    let per = x.numel() / n;
                    let xd = x.data();
                    let td = target.data();
                    let wd = weight.data();
                    let gscale = g.data()[0].to_f64() / n as f64;
                    let mut dx = vec![T::ZERO; x.numel()];
                    for nn in 0..n {
                        let mut wsum = 0.0;
                        let mut inter = 0.0;
                        let mut union = 0.0;
                        for i in nn * per..(nn + 1) * per {
                            let xv = xd[i].to_f64();
                            let tv = td[i].to_f64();
                            let wv = wd[i].to_f64();
                            let p = 1.0 / (1.0 + (-xv).exp());
                            wsum += wv;
                            inter += wv * p * tv;
                            union += wv * (p + tv - p * tv);
                        }
                        let denom = union + eps;
                        for i in nn * per..(nn + 1) * per {
                            let xv = xd[i].to_f64();
                            let tv = td[i].to_f64();
                            let wv = wd[i].to_f64();
                            let p = 1.0 / (1.0 + (-xv).exp());
                            // d(wbce)/dx = w * (sigma - t) / wsum
                            let d_bce = wv * (p - tv) / wsum;
                            // d(1 - (I+eps)/(U+eps))/dp, with dI/dp = w*t, dU/dp = w*(1-t)
                            let d_iou_dp =
                                -(wv * tv * denom - (inter + eps) * wv * (1.0 - tv)) / (denom * denom);
                            let d_iou = d_iou_dp * p * (1.0 - p);
                            dx[i] = T::from_f64(gscale * (d_bce + d_iou));
                        }
                    }
                    accum(grads, *logits, Tensor::new(x.shape().to_vec(), dx)?)?;
                }
            }
        }
        Ok(())
    }
}

/// Distributes each output gradient uniformly over its (unpadded) window.
fn avg_pool_backward<T: Real>(
    in_shape: &[usize],
    window: (usize, usize),
    stride: (usize, usize),
    padding: (usize, usize),
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (n, c, out_h, out_w) = grad_out.dims4()?;
    let (h, w) = (in_shape[2], in_shape[3]);
    let (kh, kw) = window;
    let (sh, sw) = stride;
    let (ph, pw) = padding;
    let inv_area = T::from_f64(1.0 / (kh * kw) as f64);
    let go = grad_out.data();
    let mut dx = vec![T::ZERO; n * c * h * w];
    for plane in 0..n * c {
        let ob = plane * out_h * out_w;
        let ib = plane * h * w;
        for oy in 0..out_h {
            for ox in 0..out_w {
                let gv = go[ob + oy * out_w + ox] * inv_area;
                for ky in 0..kh {
                    let iy = (oy * sh + ky) as isize - ph as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    for kx in 0..kw {
                        let ix = (ox * sw + kx) as isize - pw as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        dx[ib + iy as usize * w + ix as usize] += gv;
                    }
                }
            }
        }
    }
    Tensor::new(in_shape.to_vec(), dx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_gradient_at_zero_is_quarter() {
        let mut tape = Tape::<f64>::new(true);
        let x = tape.param("x", Tensor::scalar(0.0));
        let s = tape.sigmoid(x).unwrap();
        let grads = tape.backward(s).unwrap();
        let g = grads.by_id(x).unwrap().data()[0];
        assert!((g - 0.25).abs() < 1e-12);
    }

    #[test]
    fn non_scalar_root_rejected() {
        let mut tape = Tape::<f32>::new(true);
        let x = tape.param("x", Tensor::full(&[2], 1.0));
        assert!(matches!(tape.backward(x), Err(Error::Contract(_))));
    }

    #[test]
    fn matmul_sum_gradient_is_ones_times_b_transposed() {
        let mut rng = crate::rng::Rng::new(12);
        let a_t = Tensor::<f64>::rand_uniform(&[3, 2], &mut rng, -1.0, 1.0);
        let b_t = Tensor::<f64>::rand_uniform(&[2, 4], &mut rng, -1.0, 1.0);
        let mut tape = Tape::<f64>::new(true);
        let a = tape.param("a", a_t.clone());
        let b = tape.leaf(b_t.clone());
        let y = tape.matmul(a, b).unwrap();
        let loss = tape.sum_all(y).unwrap();
        let grads = tape.backward(loss).unwrap();
        let ga = grads.by_id(a).unwrap();
        // d/dA sum(AB) = ones(3,4) . B^T, i.e. each row sums B's rows
        for i in 0..3 {
            for k in 0..2 {
                let expect: f64 = (0..4).map(|j| b_t.data()[k * 4 + j]).sum();
                assert!((ga.data()[i * 2 + k] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn no_grad_tape_computes_values_only() {
        let mut tape = Tape::<f32>::new(false);
        let x = tape.param("x", Tensor::scalar(1.5));
        let y = tape.sigmoid(x).unwrap();
        assert!(tape.value(y).data()[0] > 0.5);
        assert!(tape.backward(y).is_err());
    }

    #[test]
    fn backward_of_sum_of_graphs_is_sum_of_backwards() {
        let mut rng = crate::rng::Rng::new(77);
        let xv = Tensor::<f64>::rand_uniform(&[4], &mut rng, -1.0, 1.0);

        let run = |combine: bool| -> (Vec<f64>, Vec<f64>) {
            let mut tape = Tape::<f64>::new(true);
            let x = tape.param("x", xv.clone());
            let s = tape.sigmoid(x).unwrap();
            let l1 = tape.sum_all(s).unwrap();
            let sq = tape.mul(x, x).unwrap();
            let l2 = tape.sum_all(sq).unwrap();
            if combine {
                let total = tape.add(l1, l2).unwrap();
                let g = tape.backward(total).unwrap();
                let gx = g.by_id(x).unwrap().data().to_vec();
                (gx.clone(), gx)
            } else {
                let g1 = tape.backward(l1).unwrap();
                let g2 = tape.backward(l2).unwrap();
                (
                    g1.by_id(x).unwrap().data().to_vec(),
                    g2.by_id(x).unwrap().data().to_vec(),
                )
            }
        };

        let (combined, _) = run(true);
        let (ga, gb) = run(false);
        for i in 0..4 {
            assert!((combined[i] - (ga[i] + gb[i])).abs() < 1e-12);
        }
    }
}
