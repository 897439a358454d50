//! The network's specialty blocks: the multi-branch feature processor,
//! efficient channel attention and edge-aware attention.
//!
//! All three are pure functions of `(input, params)` and honor the
//! ablation toggles: `multi_branch = false` collapses the processor to a
//! single LConv; `ultrasound_specific = false` keeps a generic 3-branch
//! fusion but drops the Laplacian terms and branch specializations.

use crate::error::Result;
use crate::graph::{NodeId, Tape};
use crate::nn::{
    self, conv_fwd, gate_mlp_fwd, gate_mlp_macs, gate_mlp_param_count, init_conv, init_gate_mlp,
    init_lconv, init_linear, lconv, lconv_macs, lconv_param_count, Ctx,
};
use crate::ops::ConvSpec;
use crate::params::ParameterStore;
use crate::rng::Rng;
use crate::scalar::Real;


/// Branch-count of the multi-branch processor.
pub const MBFP_BRANCHES: usize = 3;

#[derive(Clone, Copy, Debug)]
pub struct MbfpMode {
    pub multi_branch: bool,
    pub ultrasound_specific: bool,
}

/// Output of [`mbfp`]; the fusion weights are exposed for the invariant
/// suites (`None` in single-LConv mode).
pub struct MbfpOut {
    pub out: NodeId,
    pub fusion_weights: Option<NodeId>,
}

/// Multi-branch feature processor, `c_in -> c_out`.
///
/// Full form: `F' = Conv1x1(x)`; noise branch `F' + LConv(LConv(F'))`;
/// edge branch `LConv(F') + alpha * Laplacian(LConv(F'))`; contrast branch
/// `LConv(F') * sigmoid(MLP(GAP(LConv(F'))))`; fused with softmax weights
/// from `FC(GAP(concat))` and a residual 1x1 LConv on the raw input.
pub fn mbfp<T: Real>(
    tape: &mut Tape<T>,
    ctx: &mut Ctx<'_, T>,
    prefix: &str,
    x: NodeId,
    mode: MbfpMode,
    alpha_edge: f64,
) -> Result<MbfpOut> {
    if !mode.multi_branch {
        // single LConv of matched channels
        let out = lconv(tape, ctx, &format!("{prefix}.proj"), x, 3)?;
        return Ok(MbfpOut {
            out,
            fusion_weights: None,
        });
    }

    let f = conv_fwd(tape, ctx, &format!("{prefix}.inproj"), x, ConvSpec::unit(1))?;

    let branches: [NodeId; MBFP_BRANCHES] = if mode.ultrasound_specific {
        let n1 = lconv(tape, ctx, &format!("{prefix}.noise1"), f, 3)?;
        let n2 = lconv(tape, ctx, &format!("{prefix}.noise2"), n1, 3)?;
        let noise = tape.add(f, n2)?;

        let edge_conv = lconv(tape, ctx, &format!("{prefix}.edge"), f, 3)?;
        let lap = tape.laplacian(edge_conv)?;
        let lap = tape.scale(lap, T::from_f64(alpha_edge))?;
        let edge = tape.add(edge_conv, lap)?;

        let con_conv = lconv(tape, ctx, &format!("{prefix}.contrast"), f, 3)?;
        let pooled = tape.global_avg_pool(con_conv)?;
        let gate = gate_mlp_fwd(tape, ctx, &format!("{prefix}.contrast.mlp"), pooled)?;
        let gate = tape.sigmoid(gate)?;
        let (n, c) = tape.value(gate).dims2()?;
        let gate = tape.reshape(gate, &[n, c, 1, 1])?;
        let contrast = tape.mul_bc(con_conv, gate)?;

        [noise, edge, contrast]
    } else {
        [
            lconv(tape, ctx, &format!("{prefix}.branch1"), f, 3)?,
            lconv(tape, ctx, &format!("{prefix}.branch2"), f, 3)?,
            lconv(tape, ctx, &format!("{prefix}.branch3"), f, 3)?,
        ]
    };

    let weights = branch_weights(tape, ctx, prefix, &branches)?;
    let mut fused: Option<NodeId> = None;
    for (i, &branch) in branches.iter().enumerate() {
        let wi = tape.slice_lastdim(weights, i, 1)?;
        let (n, _) = tape.value(wi).dims2()?;
        let wi = tape.reshape(wi, &[n, 1, 1, 1])?;
        let term = tape.mul_bc(branch, wi)?;
        fused = Some(match fused {
            Some(acc) => tape.add(acc, term)?,
            None => term,
        });
    }
    let fused = lconv(tape, ctx, &format!("{prefix}.fuse"), fused.unwrap(), 3)?;
    let residual = lconv(tape, ctx, &format!("{prefix}.res"), x, 1)?;
    let out = tape.add(fused, residual)?;
    let out = tape.relu(out)?;
    Ok(MbfpOut {
        out,
        fusion_weights: Some(weights),
    })
}

/// Softmax fusion weights `[N, 3]` from the concatenated branches.
fn branch_weights<T: Real>(
    tape: &mut Tape<T>,
    ctx: &mut Ctx<'_, T>,
    prefix: &str,
    branches: &[NodeId; MBFP_BRANCHES],
) -> Result<NodeId> {
    let cat = tape.concat_channels(branches)?;
    let pooled = tape.global_avg_pool(cat)?;
    let (n, c3, _, _) = tape.value(pooled).dims4()?;
    let flat = tape.reshape(pooled, &[n, c3])?;
    let logits = nn::linear_fwd(tape, ctx, &format!("{prefix}.fuse_fc"), flat)?;
    tape.softmax_lastdim(logits)
}

pub fn init_mbfp<T: Real>(
    store: &mut ParameterStore<T>,
    rng: &mut Rng,
    prefix: &str,
    c_in: usize,
    c_out: usize,
    mode: MbfpMode,
) {
    if !mode.multi_branch {
        init_lconv(store, rng, &format!("{prefix}.proj"), c_in, c_out, 3);
        return;
    }
    init_conv(store, rng, &format!("{prefix}.inproj"), c_in, c_out, 1);
    if mode.ultrasound_specific {
        init_lconv(store, rng, &format!("{prefix}.noise1"), c_out, c_out, 3);
        init_lconv(store, rng, &format!("{prefix}.noise2"), c_out, c_out, 3);
        init_lconv(store, rng, &format!("{prefix}.edge"), c_out, c_out, 3);
        init_lconv(store, rng, &format!("{prefix}.contrast"), c_out, c_out, 3);
        init_gate_mlp(store, rng, &format!("{prefix}.contrast.mlp"), c_out);
    } else {
        for i in 1..=MBFP_BRANCHES {
            init_lconv(store, rng, &format!("{prefix}.branch{i}"), c_out, c_out, 3);
        }
    }
    init_linear(store, rng, &format!("{prefix}.fuse_fc"), MBFP_BRANCHES * c_out, MBFP_BRANCHES);
    init_lconv(store, rng, &format!("{prefix}.fuse"), c_out, c_out, 3);
    init_lconv(store, rng, &format!("{prefix}.res"), c_in, c_out, 1);
}

pub fn mbfp_param_count(c_in: usize, c_out: usize, mode: MbfpMode) -> u64 {
    if !mode.multi_branch {
        return lconv_param_count(c_in, c_out, 3);
    }
    let mut n = (c_in * c_out + c_out) as u64; // inproj
    if mode.ultrasound_specific {
        n += 3 * lconv_param_count(c_out, c_out, 3); // noise x2 + edge
        n += lconv_param_count(c_out, c_out, 3); // contrast
        n += gate_mlp_param_count(c_out);
    } else {
        n += 3 * lconv_param_count(c_out, c_out, 3);
    }
    n += (MBFP_BRANCHES * c_out * MBFP_BRANCHES + MBFP_BRANCHES) as u64; // fuse_fc
    n += lconv_param_count(c_out, c_out, 3); // fuse
    n += lconv_param_count(c_in, c_out, 1); // residual
    n
}

pub fn mbfp_macs(c_in: usize, c_out: usize, mode: MbfpMode, h: usize, w: usize, batch: usize) -> u64 {
    let hw = (h * w * batch) as u64;
    if !mode.multi_branch {
        return lconv_macs(c_in, c_out, 3, h, w) * batch as u64;
    }
    let lc = lconv_macs(c_out, c_out, 3, h, w) * batch as u64;
    let mut m = (c_in * c_out) as u64 * hw; // inproj
    if mode.ultrasound_specific {
        m += 2 * lc; // noise cascade
        m += lc + 9 * c_out as u64 * hw; // edge branch + laplacian stencil
        m += lc + gate_mlp_macs(c_out, batch); // contrast branch
    } else {
        m += 3 * lc;
    }
    m += (MBFP_BRANCHES * c_out * MBFP_BRANCHES) as u64 * batch as u64; // fuse_fc
    m += lc; // fuse
    m += (c_in * c_out) as u64 * hw; // residual 1x1
    m
}

/// Efficient channel attention: dual-pooled channel gate times a spatial
/// gate from channel-wise statistics.
pub fn eca<T: Real>(tape: &mut Tape<T>, ctx: &mut Ctx<'_, T>, prefix: &str, x: NodeId) -> Result<NodeId> {
    let gap = tape.global_avg_pool(x)?;
    let gmp = tape.global_max_pool(x)?;
    let a1 = gate_mlp_fwd(tape, ctx, &format!("{prefix}.mlp"), gap)?;
    let a2 = gate_mlp_fwd(tape, ctx, &format!("{prefix}.mlp"), gmp)?;
    let a = tape.add(a1, a2)?;
    let a = tape.sigmoid(a)?;
    let (n, c) = tape.value(a).dims2()?;
    let a = tape.reshape(a, &[n, c, 1, 1])?;

    let mean_map = tape.channel_mean(x)?;
    let max_map = tape.channel_max(x)?;
    let stacked = tape.concat_channels(&[mean_map, max_map])?;
    let s = conv_fwd(tape, ctx, &format!("{prefix}.spatial"), stacked, ConvSpec::same(3))?;
    let s = tape.sigmoid(s)?;

    let y = tape.mul_bc(x, a)?;
    tape.mul_bc(y, s)
}

pub fn init_eca<T: Real>(store: &mut ParameterStore<T>, rng: &mut Rng, prefix: &str, c: usize) {
    init_gate_mlp(store, rng, &format!("{prefix}.mlp"), c);
    init_conv(store, rng, &format!("{prefix}.spatial"), 2, 1, 3);
}

pub fn eca_param_count(c: usize) -> u64 {
    gate_mlp_param_count(c) + (2 * 9 + 1) as u64
}

pub fn eca_macs(c: usize, h: usize, w: usize, batch: usize) -> u64 {
    // shared MLP applied to both pooled descriptors + 3x3 spatial conv
    2 * gate_mlp_macs(c, batch) + (2 * 9) as u64 * (h * w * batch) as u64
}

/// Edge-aware attention: `x * (1 + beta * ReLU(Laplacian(x))) *
/// sigmoid(MLP(GAP(x)))`. With `with_laplacian = false` (the
/// no-ultrasound-specific ablation) the Laplacian factor is dropped.
pub fn eaa<T: Real>(
    tape: &mut Tape<T>,
    ctx: &mut Ctx<'_, T>,
    prefix: &str,
    x: NodeId,
    beta: f64,
    with_laplacian: bool,
) -> Result<NodeId> {
    let mut y = x;
    if with_laplacian {
        let e = tape.laplacian(x)?;
        let e = tape.relu(e)?;
        let e = tape.scale(e, T::from_f64(beta))?;
        let boost = tape.add_scalar(e, T::ONE)?;
        y = tape.mul(x, boost)?;
    }
    let pooled = tape.global_avg_pool(x)?;
    let gate = gate_mlp_fwd(tape, ctx, &format!("{prefix}.mlp"), pooled)?;
    let gate = tape.sigmoid(gate)?;
    let (n, c) = tape.value(gate).dims2()?;
    let gate = tape.reshape(gate, &[n, c, 1, 1])?;
    tape.mul_bc(y, gate)
}

pub fn init_eaa<T: Real>(store: &mut ParameterStore<T>, rng: &mut Rng, prefix: &str, c: usize) {
    init_gate_mlp(store, rng, &format!("{prefix}.mlp"), c);
}

pub fn eaa_param_count(c: usize) -> u64 {
    gate_mlp_param_count(c)
}

pub fn eaa_macs(c: usize, h: usize, w: usize, batch: usize, with_laplacian: bool) -> u64 {
    let mut m = gate_mlp_macs(c, batch);
    if with_laplacian {
        m += 9 * (c * h * w * batch) as u64;
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Tape;
    use crate::tensor::Tensor;

    fn full_mode() -> MbfpMode {
        MbfpMode {
            multi_branch: true,
            ultrasound_specific: true,
        }
    }

    #[test]
    fn lconv_param_count_matches_hand_count() {
        // 32->32, k=3: 288 depthwise + 64 bn + 1056 pointwise-with-bias
        assert_eq!(lconv_param_count(32, 32, 3), 1408);
    }

    #[test]
    fn lconv_macs_show_depthwise_reduction() {
        // per pixel: depthwise 288 + pointwise 1024 vs dense 9216
        assert_eq!(lconv_macs(32, 32, 3, 1, 1), 288 + 1024);
        let dense = 32u64 * 32 * 9;
        assert_eq!(dense, 9216);
        assert!(lconv_macs(32, 32, 3, 1, 1) < dense);
    }

    #[test]
    fn mbfp_fusion_weights_are_uniform_with_zeroed_fc() {
        let mut rng = Rng::new(21);
        let mut store = ParameterStore::<f32>::new();
        init_mbfp(&mut store, &mut rng, "m", 8, 8, full_mode());
        store.set("m.fuse_fc.w", Tensor::zeros(&[24, 3])).unwrap();
        store.set("m.fuse_fc.b", Tensor::zeros(&[3])).unwrap();

        let mut tape = Tape::<f32>::new(false);
        let mut ctx = Ctx::new(&store, false);
        let x = tape.leaf(Tensor::rand_uniform(&[2, 8, 6, 6], &mut rng, -1.0, 1.0));
        let out = mbfp(&mut tape, &mut ctx, "m", x, full_mode(), 0.1).unwrap();
        let w = tape.value(out.fusion_weights.unwrap());
        assert_eq!(w.shape(), &[2, 3]);
        assert!(w.data().iter().all(|&v| v == 1.0 / 3.0), "{:?}", w.data());
    }

    #[test]
    fn mbfp_fusion_weights_rows_sum_to_one() {
        let mut rng = Rng::new(22);
        let mut store = ParameterStore::<f32>::new();
        init_mbfp(&mut store, &mut rng, "m", 6, 10, full_mode());
        let mut tape = Tape::<f32>::new(false);
        let mut ctx = Ctx::new(&store, false);
        let x = tape.leaf(Tensor::rand_uniform(&[3, 6, 5, 5], &mut rng, -1.0, 1.0));
        let out = mbfp(&mut tape, &mut ctx, "m", x, full_mode(), 0.1).unwrap();
        assert_eq!(tape.value(out.out).shape(), &[3, 10, 5, 5]);
        let w = tape.value(out.fusion_weights.unwrap());
        for row in 0..3 {
            let sum: f32 = w.data()[row * 3..(row + 1) * 3].iter().sum();
            assert!((sum - 1.0).abs() <= 1e-5);
            assert!(w.data()[row * 3..(row + 1) * 3].iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }

    #[test]
    fn eca_zero_init_quarters_the_input() {
        let mut rng = Rng::new(5);
        let mut store = ParameterStore::<f32>::new();
        init_eca(&mut store, &mut rng, "e", 8);
        for name in ["e.mlp.fc1.w", "e.mlp.fc2.w", "e.spatial.w"] {
            let shape = store.get(name).unwrap().shape().to_vec();
            store.set(name, Tensor::zeros(&shape)).unwrap();
        }
        let x_t = Tensor::<f32>::rand_uniform(&[1, 8, 5, 5], &mut rng, -2.0, 2.0);
        let mut tape = Tape::<f32>::new(false);
        let mut ctx = Ctx::new(&store, false);
        let x = tape.leaf(x_t.clone());
        let y = eca(&mut tape, &mut ctx, "e", x).unwrap();
        let expect = x_t.map(|v| 0.25 * v);
        assert!(tape.value(y).max_abs_diff(&expect).unwrap() < 1e-6);
    }

    #[test]
    fn eca_gates_never_amplify() {
        let mut rng = Rng::new(6);
        let mut store = ParameterStore::<f32>::new();
        init_eca(&mut store, &mut rng, "e", 8);
        let x_t = Tensor::<f32>::rand_uniform(&[1, 8, 5, 5], &mut rng, -2.0, 2.0);
        let mut tape = Tape::<f32>::new(false);
        let mut ctx = Ctx::new(&store, false);
        let x = tape.leaf(x_t.clone());
        let y = eca(&mut tape, &mut ctx, "e", x).unwrap();
        for (yo, xo) in tape.value(y).data().iter().zip(x_t.data()) {
            assert!(yo.abs() <= xo.abs() + 1e-6);
        }
    }

    #[test]
    fn eaa_constant_input_with_zero_mlp_halves() {
        let mut rng = Rng::new(7);
        let mut store = ParameterStore::<f32>::new();
        init_eaa(&mut store, &mut rng, "a", 4);
        for name in ["a.mlp.fc1.w", "a.mlp.fc2.w"] {
            let shape = store.get(name).unwrap().shape().to_vec();
            store.set(name, Tensor::zeros(&shape)).unwrap();
        }
        let c = 0.75f32;
        let x_t = Tensor::<f32>::full(&[1, 4, 6, 6], c);
        let mut tape = Tape::<f32>::new(false);
        let mut ctx = Ctx::new(&store, false);
        let x = tape.leaf(x_t);
        let y = eaa(&mut tape, &mut ctx, "a", x, 0.1, true).unwrap();
        // Laplacian of a constant is exactly zero, gate is sigmoid(0) = 0.5
        assert!(tape.value(y).data().iter().all(|&v| (v - 0.5 * c).abs() < 1e-7));
    }

    #[test]
    fn eaa_amplifies_step_edges() {
        let mut rng = Rng::new(8);
        let mut store = ParameterStore::<f32>::new();
        init_eaa(&mut store, &mut rng, "a", 1);
        // step edge: left half 0, right half 1
        let x_t = Tensor::<f32>::from_fn(&[1, 1, 8, 8], |i| if i % 8 >= 4 { 1.0 } else { 0.0 });
        let mut tape = Tape::<f32>::new(false);
        let mut ctx = Ctx::new(&store, false);
        let x = tape.leaf(x_t.clone());
        let y = eaa(&mut tape, &mut ctx, "a", x, 0.1, true).unwrap();
        let yd = tape.value(y).data();
        // column 4 sits on the edge (response > 0), column 6 is flat interior
        let edge = yd[8 * 4 + 4].abs();
        let flat = yd[8 * 4 + 6].abs();
        assert!(edge > flat, "edge {edge} vs flat {flat}");
    }
}
