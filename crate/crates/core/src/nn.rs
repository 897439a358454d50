//! Shared building blocks for model assembly: parameter binding, the
//! lightweight convolution (depthwise + pointwise), plain convolutions,
//! linear layers and the small gate MLPs.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::graph::{NodeId, Tape};
use crate::ops::ConvSpec;
use crate::params::{init_conv_kaiming, init_trunc_normal, ParameterStore};
use crate::rng::Rng;
use crate::scalar::Real;
use crate::tensor::Tensor;

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;
pub const LN_EPS: f64 = 1e-6;

/// One forward pass over a store: binds each named parameter to a single
/// tape node (so shared weights accumulate gradients correctly) and
/// stages batch-norm running-statistic updates for the caller to apply
/// after the step.
pub struct Ctx<'s, T: Real> {
    store: &'s ParameterStore<T>,
    pub training: bool,
    pub updates: Vec<(String, Tensor<T>)>,
    bound: BTreeMap<String, NodeId>,
}

impl<'s, T: Real> Ctx<'s, T> {
    pub fn new(store: &'s ParameterStore<T>, training: bool) -> Self {
        Ctx {
            store,
            training,
            updates: Vec::new(),
            bound: BTreeMap::new(),
        }
    }

    pub fn store(&self) -> &ParameterStore<T> {
        self.store
    }

    /// Node for a named parameter (bound at most once per pass).
    pub fn p(&mut self, tape: &mut Tape<T>, name: &str) -> Result<NodeId> {
        if let Some(&id) = self.bound.get(name) {
            return Ok(id);
        }
        let id = tape.param(name, self.store.get(name)?.clone());
        self.bound.insert(name.to_string(), id);
        Ok(id)
    }

    /// Applies the staged running-statistic updates to a store.
    pub fn apply_updates(self, store: &mut ParameterStore<T>) -> Result<()> {
        for (name, tensor) in self.updates {
            store.set(&name, tensor)?;
        }
        Ok(())
    }

    /// Hands out the staged updates, releasing the store borrow.
    pub fn into_updates(self) -> Vec<(String, Tensor<T>)> {
        self.updates
    }
}

/// Plain convolution, parameters `{prefix}.w` / `{prefix}.b`.
pub fn conv_fwd<T: Real>(
    tape: &mut Tape<T>,
    ctx: &mut Ctx<'_, T>,
    prefix: &str,
    x: NodeId,
    spec: ConvSpec,
) -> Result<NodeId> {
    let w = ctx.p(tape, &format!("{prefix}.w"))?;
    let b = ctx.p(tape, &format!("{prefix}.b"))?;
    tape.conv2d(x, w, Some(b), spec)
}

/// Batch norm bound to `{prefix}.{g,b,running_mean,running_var}`.
pub fn batchnorm_fwd<T: Real>(
    tape: &mut Tape<T>,
    ctx: &mut Ctx<'_, T>,
    prefix: &str,
    x: NodeId,
) -> Result<NodeId> {
    let g = ctx.p(tape, &format!("{prefix}.g"))?;
    let b = ctx.p(tape, &format!("{prefix}.b"))?;
    let rm = ctx.store.get(&format!("{prefix}.running_mean"))?.clone();
    let rv = ctx.store.get(&format!("{prefix}.running_var"))?.clone();
    let (y, upd) = tape.batchnorm(x, g, b, &rm, &rv, ctx.training, BN_MOMENTUM, BN_EPS)?;
    if let Some((nm, nv)) = upd {
        ctx.updates.push((format!("{prefix}.running_mean"), nm));
        ctx.updates.push((format!("{prefix}.running_var"), nv));
    }
    Ok(y)
}

/// Layer norm bound to `{prefix}.{g,b}`.
pub fn layernorm_fwd<T: Real>(
    tape: &mut Tape<T>,
    ctx: &mut Ctx<'_, T>,
    prefix: &str,
    x: NodeId,
) -> Result<NodeId> {
    let g = ctx.p(tape, &format!("{prefix}.g"))?;
    let b = ctx.p(tape, &format!("{prefix}.b"))?;
    tape.layernorm(x, g, b, LN_EPS)
}

/// Linear layer on the last dimension, `{prefix}.{w,b}`.
pub fn linear_fwd<T: Real>(
    tape: &mut Tape<T>,
    ctx: &mut Ctx<'_, T>,
    prefix: &str,
    x: NodeId,
) -> Result<NodeId> {
    let w = ctx.p(tape, &format!("{prefix}.w"))?;
    let b = ctx.p(tape, &format!("{prefix}.b"))?;
    tape.linear_lastdim(x, w, Some(b))
}

/// Lightweight convolution: `Conv1x1(ReLU(BN(DWConv_k(x))))` for odd
/// `k >= 3`; for `k == 1` the depthwise stage is skipped and the layer is
/// the plain pointwise path. Spatial extents are preserved.
pub fn lconv<T: Real>(
    tape: &mut Tape<T>,
    ctx: &mut Ctx<'_, T>,
    prefix: &str,
    x: NodeId,
    k: usize,
) -> Result<NodeId> {
    if k.is_multiple_of(2) {
        return Err(Error::Config(format!("lconv kernel must be odd, got {k}")));
    }
    let mut h = x;
    if k > 1 {
        let (_, c_in, _, _) = tape.value(x).dims4()?;
        let dw = ctx.p(tape, &format!("{prefix}.dw.w"))?;
        h = tape.dwconv2d(h, dw, ConvSpec::same(k).with_groups(c_in))?;
        h = batchnorm_fwd(tape, ctx, &format!("{prefix}.bn"), h)?;
        h = tape.relu(h)?;
    }
    conv_fwd(tape, ctx, &format!("{prefix}.pw"), h, ConvSpec::unit(1))
}

/// Registers LConv parameters. Init: kaiming for conv weights, zero
/// biases, identity batch norm.
pub fn init_lconv<T: Real>(
    store: &mut ParameterStore<T>,
    rng: &mut Rng,
    prefix: &str,
    c_in: usize,
    c_out: usize,
    k: usize,
) {
    if k > 1 {
        store.insert(format!("{prefix}.dw.w"), init_conv_kaiming(rng, &[c_in, 1, k, k]));
        store.insert(format!("{prefix}.bn.g"), Tensor::full(&[c_in], T::ONE));
        store.insert(format!("{prefix}.bn.b"), Tensor::zeros(&[c_in]));
        store.insert(format!("{prefix}.bn.running_mean"), Tensor::zeros(&[c_in]));
        store.insert(format!("{prefix}.bn.running_var"), Tensor::full(&[c_in], T::ONE));
    }
    store.insert(format!("{prefix}.pw.w"), init_conv_kaiming(rng, &[c_out, c_in, 1, 1]));
    store.insert(format!("{prefix}.pw.b"), Tensor::zeros(&[c_out]));
}

/// Trainable parameter count of one LConv.
pub fn lconv_param_count(c_in: usize, c_out: usize, k: usize) -> u64 {
    let mut n = (c_in * c_out + c_out) as u64; // pointwise with bias
    if k > 1 {
        n += (c_in * k * k) as u64; // depthwise, no bias
        n += 2 * c_in as u64; // bn gamma/beta
    }
    n
}

/// MACs of one LConv over an `h x w` map.
pub fn lconv_macs(c_in: usize, c_out: usize, k: usize, h: usize, w: usize) -> u64 {
    let hw = (h * w) as u64;
    let mut m = (c_in * c_out) as u64 * hw;
    if k > 1 {
        m += (c_in * k * k) as u64 * hw;
    }
    m
}

/// Registers a plain convolution's parameters.
pub fn init_conv<T: Real>(
    store: &mut ParameterStore<T>,
    rng: &mut Rng,
    prefix: &str,
    c_in: usize,
    c_out: usize,
    k: usize,
) {
    store.insert(format!("{prefix}.w"), init_conv_kaiming(rng, &[c_out, c_in, k, k]));
    store.insert(format!("{prefix}.b"), Tensor::zeros(&[c_out]));
}

/// Registers a linear layer's parameters (truncated-normal weights).
pub fn init_linear<T: Real>(
    store: &mut ParameterStore<T>,
    rng: &mut Rng,
    prefix: &str,
    d_in: usize,
    d_out: usize,
) {
    store.insert(format!("{prefix}.w"), init_trunc_normal(rng, &[d_in, d_out], 0.02));
    store.insert(format!("{prefix}.b"), Tensor::zeros(&[d_out]));
}

/// Registers layer-norm parameters.
pub fn init_layernorm<T: Real>(store: &mut ParameterStore<T>, prefix: &str, c: usize) {
    store.insert(format!("{prefix}.g"), Tensor::full(&[c], T::ONE));
    store.insert(format!("{prefix}.b"), Tensor::zeros(&[c]));
}

/// Hidden width of the channel-gate MLPs: `max(C/4, 4)`.
pub fn gate_hidden(c: usize) -> usize {
    (c / 4).max(4)
}

/// Two-layer gate MLP on a pooled `[N,C,1,1]` descriptor; returns `[N,C]`
/// pre-activation (callers apply sigmoid where the gate closes).
pub fn gate_mlp_fwd<T: Real>(
    tape: &mut Tape<T>,
    ctx: &mut Ctx<'_, T>,
    prefix: &str,
    pooled: NodeId,
) -> Result<NodeId> {
    let (n, c, _, _) = tape.value(pooled).dims4()?;
    let flat = tape.reshape(pooled, &[n, c])?;
    let h = linear_fwd(tape, ctx, &format!("{prefix}.fc1"), flat)?;
    let h = tape.relu(h)?;
    linear_fwd(tape, ctx, &format!("{prefix}.fc2"), h)
}

pub fn init_gate_mlp<T: Real>(store: &mut ParameterStore<T>, rng: &mut Rng, prefix: &str, c: usize) {
    let hidden = gate_hidden(c);
    init_linear(store, rng, &format!("{prefix}.fc1"), c, hidden);
    init_linear(store, rng, &format!("{prefix}.fc2"), hidden, c);
}

pub fn gate_mlp_param_count(c: usize) -> u64 {
    let hidden = gate_hidden(c);
    ((c * hidden + hidden) + (hidden * c + c)) as u64
}

pub fn gate_mlp_macs(c: usize, batch: usize) -> u64 {
    (2 * c * gate_hidden(c) * batch) as u64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Tape;

    #[test]
    fn lconv_rejects_even_kernels() {
        let store = ParameterStore::<f32>::new();
        let mut tape = Tape::new(false);
        let mut ctx = Ctx::new(&store, false);
        let x = tape.leaf(Tensor::zeros(&[1, 2, 4, 4]));
        assert!(lconv(&mut tape, &mut ctx, "lc", x, 2).is_err());
    }

    #[test]
    fn lconv_zero_input_yields_pointwise_bias() {
        let mut rng = Rng::new(17);
        let mut store = ParameterStore::<f32>::new();
        init_lconv(&mut store, &mut rng, "lc", 3, 5, 3);
        let bias = Tensor::<f32>::rand_uniform(&[5], &mut rng, -1.0, 1.0);
        store.set("lc.pw.b", bias.clone()).unwrap();

        let mut tape = Tape::new(false);
        let mut ctx = Ctx::new(&store, false);
        let x = tape.leaf(Tensor::zeros(&[1, 3, 4, 4]));
        let y = lconv(&mut tape, &mut ctx, "lc", x, 3).unwrap();
        let out = tape.value(y);
        for c in 0..5 {
            for i in 0..16 {
                assert_eq!(out.data()[c * 16 + i], bias.data()[c]);
            }
        }
    }

    #[test]
    fn lconv_preserves_spatial_extent() {
        let mut rng = Rng::new(18);
        let mut store = ParameterStore::<f32>::new();
        init_lconv(&mut store, &mut rng, "lc", 4, 4, 5);
        let mut tape = Tape::new(false);
        let mut ctx = Ctx::new(&store, false);
        let x = tape.leaf(Tensor::rand_uniform(&[2, 4, 7, 9], &mut rng, -1.0, 1.0));
        let y = lconv(&mut tape, &mut ctx, "lc", x, 5).unwrap();
        assert_eq!(tape.value(y).shape(), &[2, 4, 7, 9]);
    }

    #[test]
    fn shared_parameters_bind_to_one_node() {
        let mut rng = Rng::new(19);
        let mut store = ParameterStore::<f32>::new();
        store.insert("w", Tensor::rand_uniform(&[2, 2], &mut rng, -1.0, 1.0));
        let mut tape = Tape::new(true);
        let mut ctx = Ctx::new(&store, true);
        let a = ctx.p(&mut tape, "w").unwrap();
        let b = ctx.p(&mut tape, "w").unwrap();
        assert_eq!(a, b);
    }
}
