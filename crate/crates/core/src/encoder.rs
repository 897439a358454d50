//! Four-stage pyramid transformer backbone.
//!
//! Stage layout (B0-sized): channels {32, 64, 160, 256} at strides
//! {4, 8, 16, 32}, two blocks per stage, heads {1, 2, 5, 8},
//! spatial-reduction ratios {8, 4, 2, 1}, MLP expansion {8, 8, 4, 4}.
//! Overlapping patch embeddings (7/4/3 then 3/2/1) and a depthwise 3x3
//! inside each MLP; the zero padding of that depthwise convolution is the
//! only positional signal, so there is no positional embedding table.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{NodeId, Tape};
use crate::nn::{self, init_layernorm, init_linear, layernorm_fwd, linear_fwd, Ctx};
use crate::ops::ConvSpec;
use crate::params::{init_conv_kaiming, ParameterStore};
use crate::rng::Rng;
use crate::scalar::Real;

pub const STAGES: usize = 4;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub embed_dims: [usize; STAGES],
    pub depths: [usize; STAGES],
    pub num_heads: [usize; STAGES],
    pub sr_ratios: [usize; STAGES],
    pub mlp_ratios: [usize; STAGES],
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            embed_dims: [32, 64, 160, 256],
            depths: [2, 2, 2, 2],
            num_heads: [1, 2, 5, 8],
            sr_ratios: [8, 4, 2, 1],
            mlp_ratios: [8, 8, 4, 4],
        }
    }
}

impl EncoderConfig {
    /// Desk-scale variant: one block per stage, same widths.
    pub fn tiny() -> Self {
        EncoderConfig {
            depths: [1, 1, 1, 1],
            ..EncoderConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        for i in 0..STAGES {
            if self.embed_dims[i] == 0 || self.depths[i] == 0 {
                return Err(Error::Config(format!("stage {i} has zero dim or depth")));
            }
            if !self.embed_dims[i].is_multiple_of(self.num_heads[i]) {
                return Err(Error::Config(format!(
                    "stage {i}: embed dim {} not divisible by {} heads",
                    self.embed_dims[i], self.num_heads[i]
                )));
            }
            if self.sr_ratios[i] == 0 || self.mlp_ratios[i] == 0 {
                return Err(Error::Config(format!("stage {i}: zero sr or mlp ratio")));
            }
        }
        Ok(())
    }

    /// Patch-embedding (kernel, stride, padding) per stage.
    pub fn patch_spec(stage: usize) -> (usize, usize, usize) {
        if stage == 0 {
            (7, 4, 3)
        } else {
            (3, 2, 1)
        }
    }

    /// Output stride of stage `i` (0-based): 4 * 2^i.
    pub fn stage_stride(stage: usize) -> usize {
        4 << stage
    }
}

/// Encoder outputs F1..F4 with halving spatial extents.
pub struct FeaturePyramid {
    pub levels: [NodeId; STAGES],
}

fn tokens_to_map<T: Real>(tape: &mut Tape<T>, x: NodeId, h: usize, w: usize) -> Result<NodeId> {
    let (n, l, c) = tape.value(x).dims3()?;
    debug_assert_eq!(l, h * w);
    let t = tape.permute(x, &[0, 2, 1])?;
    tape.reshape(t, &[n, c, h, w])
}

fn map_to_tokens<T: Real>(tape: &mut Tape<T>, x: NodeId) -> Result<NodeId> {
    let (n, c, h, w) = tape.value(x).dims4()?;
    let t = tape.reshape(x, &[n, c, h * w])?;
    tape.permute(t, &[0, 2, 1])
}

/// `[N, L, C] -> [N*heads, L, C/heads]`.
fn split_heads<T: Real>(tape: &mut Tape<T>, x: NodeId, heads: usize) -> Result<NodeId> {
    let (n, l, c) = tape.value(x).dims3()?;
    let d = c / heads;
    let t = tape.reshape(x, &[n, l, heads, d])?;
    let t = tape.permute(t, &[0, 2, 1, 3])?;
    tape.reshape(t, &[n * heads, l, d])
}

fn merge_heads<T: Real>(tape: &mut Tape<T>, x: NodeId, n: usize, heads: usize) -> Result<NodeId> {
    let (nh, l, d) = tape.value(x).dims3()?;
    debug_assert_eq!(nh, n * heads);
    let t = tape.reshape(x, &[n, heads, l, d])?;
    let t = tape.permute(t, &[0, 2, 1, 3])?;
    tape.reshape(t, &[n, l, heads * d])
}

/// Spatial-reduction multi-head self-attention on a token map. Keys and
/// values are downsampled by `sr` via a strided convolution before
/// standard attention; `sr == 1` is plain multi-head self-attention.
#[allow(clippy::too_many_arguments)]
pub fn sra_attention<T: Real>(
    tape: &mut Tape<T>,
    ctx: &mut Ctx<'_, T>,
    prefix: &str,
    x: NodeId,
    h: usize,
    w: usize,
    heads: usize,
    sr: usize,
) -> Result<NodeId> {
    let (n, l, c) = tape.value(x).dims3()?;
    if l != h * w {
        return Err(Error::Config(format!("token count {l} vs {h}x{w} map")));
    }
    if c % heads != 0 {
        return Err(Error::Config(format!("dim {c} not divisible by {heads} heads")));
    }
    let d = c / heads;

    let q = linear_fwd(tape, ctx, &format!("{prefix}.q"), x)?;
    let q = split_heads(tape, q, heads)?;

    let kv_src = if sr > 1 {
        let map = tokens_to_map(tape, x, h, w)?;
        let reduced = nn::conv_fwd(
            tape,
            ctx,
            &format!("{prefix}.sr"),
            map,
            ConvSpec {
                kernel: (sr, sr),
                stride: (sr, sr),
                padding: (0, 0),
                groups: 1,
            },
        )?;
        let tokens = map_to_tokens(tape, reduced)?;
        layernorm_fwd(tape, ctx, &format!("{prefix}.srnorm"), tokens)?
    } else {
        x
    };

    let kv = linear_fwd(tape, ctx, &format!("{prefix}.kv"), kv_src)?;
    let k = tape.slice_lastdim(kv, 0, c)?;
    let v = tape.slice_lastdim(kv, c, c)?;
    let k = split_heads(tape, k, heads)?;
    let v = split_heads(tape, v, heads)?;

    let scores = tape.bmm_nt(q, k)?;
    let scores = tape.scale(scores, T::from_f64(1.0 / (d as f64).sqrt()))?;
    let attn = tape.softmax_lastdim(scores)?;
    let out = tape.bmm_nn(attn, v)?;
    let out = merge_heads(tape, out, n, heads)?;
    linear_fwd(tape, ctx, &format!("{prefix}.proj"), out)
}

/// Feed-forward: fc1 -> depthwise 3x3 (token map) -> GELU -> fc2.
fn mlp_block<T: Real>(
    tape: &mut Tape<T>,
    ctx: &mut Ctx<'_, T>,
    prefix: &str,
    x: NodeId,
    h: usize,
    w: usize,
) -> Result<NodeId> {
    let y = linear_fwd(tape, ctx, &format!("{prefix}.fc1"), x)?;
    let (_, _, hidden) = tape.value(y).dims3()?;
    let map = tokens_to_map(tape, y, h, w)?;
    let dw_w = ctx.p(tape, &format!("{prefix}.dw.w"))?;
    let dw_b = ctx.p(tape, &format!("{prefix}.dw.b"))?;
    let map = tape.conv2d(map, dw_w, Some(dw_b), ConvSpec::same(3).with_groups(hidden))?;
    let y = map_to_tokens(tape, map)?;
    let y = tape.gelu(y)?;
    linear_fwd(tape, ctx, &format!("{prefix}.fc2"), y)
}

/// One transformer block: pre-norm attention and MLP, both residual.
#[allow(clippy::too_many_arguments)]
fn encoder_block<T: Real>(
    tape: &mut Tape<T>,
    ctx: &mut Ctx<'_, T>,
    prefix: &str,
    x: NodeId,
    h: usize,
    w: usize,
    heads: usize,
    sr: usize,
) -> Result<NodeId> {
    let normed = layernorm_fwd(tape, ctx, &format!("{prefix}.norm1"), x)?;
    let attn = sra_attention(tape, ctx, &format!("{prefix}.attn"), normed, h, w, heads, sr)?;
    let x = tape.add(x, attn)?;
    let normed = layernorm_fwd(tape, ctx, &format!("{prefix}.norm2"), x)?;
    let ff = mlp_block(tape, ctx, &format!("{prefix}.mlp"), normed, h, w)?;
    tape.add(x, ff)
}

/// Overlapping strided patch embedding; returns layer-normalized tokens
/// plus the embedded map extents.
pub fn patch_embed<T: Real>(
    tape: &mut Tape<T>,
    ctx: &mut Ctx<'_, T>,
    stage: usize,
    x: NodeId,
) -> Result<(NodeId, usize, usize)> {
    let (k, s, p) = EncoderConfig::patch_spec(stage);
    let (_, _, in_h, in_w) = tape.value(x).dims4()?;
    if in_h < s || in_w < s {
        return Err(Error::Input(format!(
            "stage {stage} input {in_h}x{in_w} smaller than stride {s}"
        )));
    }
    let map = nn::conv_fwd(
        tape,
        ctx,
        &format!("encoder.patch{stage}.proj"),
        x,
        ConvSpec {
            kernel: (k, k),
            stride: (s, s),
            padding: (p, p),
            groups: 1,
        },
    )?;
    let (_, _, h, w) = tape.value(map).dims4()?;
    let tokens = map_to_tokens(tape, map)?;
    let tokens = layernorm_fwd(tape, ctx, &format!("encoder.patch{stage}.norm"), tokens)?;
    Ok((tokens, h, w))
}

/// Full encoder: `[N,3,H,W]` (H, W divisible by 32) -> F1..F4.
pub fn encoder_forward<T: Real>(
    tape: &mut Tape<T>,
    ctx: &mut Ctx<'_, T>,
    input: NodeId,
    cfg: &EncoderConfig,
) -> Result<FeaturePyramid> {
    cfg.validate()?;
    let (_, c, h, w) = tape.value(input).dims4()?;
    if c != 3 {
        return Err(Error::Input(format!("encoder expects 3 input channels, got {c}")));
    }
    if h % 32 != 0 || w % 32 != 0 {
        return Err(Error::Input(format!("input extents {h}x{w} not divisible by 32")));
    }

    let mut levels = Vec::with_capacity(STAGES);
    let mut x = input;
    for stage in 0..STAGES {
        let (mut tokens, sh, sw) = patch_embed(tape, ctx, stage, x)?;
        for block in 0..cfg.depths[stage] {
            tokens = encoder_block(
                tape,
                ctx,
                &format!("encoder.s{stage}.b{block}"),
                tokens,
                sh,
                sw,
                cfg.num_heads[stage],
                cfg.sr_ratios[stage],
            )?;
        }
        let tokens = layernorm_fwd(tape, ctx, &format!("encoder.norm{stage}"), tokens)?;
        let map = tokens_to_map(tape, tokens, sh, sw)?;
        levels.push(map);
        x = map;
    }
    Ok(FeaturePyramid {
        levels: [levels[0], levels[1], levels[2], levels[3]],
    })
}

/// Registers all encoder parameters.
pub fn init_encoder<T: Real>(store: &mut ParameterStore<T>, rng: &mut Rng, cfg: &EncoderConfig) {
    let mut in_ch = 3usize;
    for stage in 0..STAGES {
        let dim = cfg.embed_dims[stage];
        let (k, _, _) = EncoderConfig::patch_spec(stage);
        store.insert(
            format!("encoder.patch{stage}.proj.w"),
            init_conv_kaiming(rng, &[dim, in_ch, k, k]),
        );
        store.insert(format!("encoder.patch{stage}.proj.b"), crate::tensor::Tensor::zeros(&[dim]));
        init_layernorm(store, &format!("encoder.patch{stage}.norm"), dim);

        for block in 0..cfg.depths[stage] {
            let p = format!("encoder.s{stage}.b{block}");
            init_layernorm(store, &format!("{p}.norm1"), dim);
            init_linear(store, rng, &format!("{p}.attn.q"), dim, dim);
            init_linear(store, rng, &format!("{p}.attn.kv"), dim, 2 * dim);
            init_linear(store, rng, &format!("{p}.attn.proj"), dim, dim);
            if cfg.sr_ratios[stage] > 1 {
                let sr = cfg.sr_ratios[stage];
                store.insert(
                    format!("{p}.attn.sr.w"),
                    init_conv_kaiming(rng, &[dim, dim, sr, sr]),
                );
                store.insert(format!("{p}.attn.sr.b"), crate::tensor::Tensor::zeros(&[dim]));
                init_layernorm(store, &format!("{p}.attn.srnorm"), dim);
            }
            init_layernorm(store, &format!("{p}.norm2"), dim);
            let hidden = dim * cfg.mlp_ratios[stage];
            init_linear(store, rng, &format!("{p}.mlp.fc1"), dim, hidden);
            store.insert(format!("{p}.mlp.dw.w"), init_conv_kaiming(rng, &[hidden, 1, 3, 3]));
            store.insert(format!("{p}.mlp.dw.b"), crate::tensor::Tensor::zeros(&[hidden]));
            init_linear(store, rng, &format!("{p}.mlp.fc2"), hidden, dim);
        }
        init_layernorm(store, &format!("encoder.norm{stage}"), dim);
        in_ch = dim;
    }
}

/// Trainable parameter count, mirroring [`init_encoder`] analytically.
pub fn encoder_param_count(cfg: &EncoderConfig) -> u64 {
    let mut total = 0u64;
    let mut in_ch = 3usize;
    for stage in 0..STAGES {
        let dim = cfg.embed_dims[stage];
        let (k, _, _) = EncoderConfig::patch_spec(stage);
        total += (dim * in_ch * k * k + dim) as u64; // patch conv
        total += 2 * dim as u64; // patch norm

        let per_block = {
            let mut n = 0u64;
            n += 2 * dim as u64; // norm1
            n += (dim * dim + dim) as u64; // q
            n += (dim * 2 * dim + 2 * dim) as u64; // kv
            n += (dim * dim + dim) as u64; // proj
            if cfg.sr_ratios[stage] > 1 {
                let sr = cfg.sr_ratios[stage];
                n += (dim * dim * sr * sr + dim) as u64; // sr conv
                n += 2 * dim as u64; // sr norm
            }
            n += 2 * dim as u64; // norm2
            let hidden = dim * cfg.mlp_ratios[stage];
            n += (dim * hidden + hidden) as u64; // fc1
            n += (hidden * 9 + hidden) as u64; // dw 3x3 + bias
            n += (hidden * dim + dim) as u64; // fc2
            n
        };
        total += per_block * cfg.depths[stage] as u64;
        total += 2 * dim as u64; // stage norm
        in_ch = dim;
    }
    total
}

/// MACs for one forward at `input_size` (square input, batch 1):
/// convolutions, linear projections and the two attention matmuls;
/// normalizations and activations excluded.
pub fn encoder_macs(cfg: &EncoderConfig, input_size: usize) -> u64 {
    let mut total = 0u64;
    let mut in_ch = 3usize;
    let mut extent = input_size;
    for stage in 0..STAGES {
        let dim = cfg.embed_dims[stage];
        let (k, s, _) = EncoderConfig::patch_spec(stage);
        extent /= s;
        let l = (extent * extent) as u64;
        total += (in_ch * dim * k * k) as u64 * l;

        let sr = cfg.sr_ratios[stage];
        let l_red = ((extent / sr) * (extent / sr)) as u64;
        let per_block = {
            let mut m = 0u64;
            m += l * (dim * dim) as u64; // q
            if sr > 1 {
                m += l_red * (dim * dim * sr * sr) as u64; // sr conv
            }
            m += l_red * (dim * 2 * dim) as u64; // kv
            m += 2 * l * l_red * dim as u64; // qk^T and attn*v
            m += l * (dim * dim) as u64; // proj
            let hidden = dim * cfg.mlp_ratios[stage];
            m += l * (dim * hidden) as u64; // fc1
            m += l * (hidden * 9) as u64; // dw conv
            m += l * (hidden * dim) as u64; // fc2
            m
        };
        total += per_block * cfg.depths[stage] as u64;
        in_ch = dim;
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn default_config_validates() {
        EncoderConfig::default().validate().unwrap();
    }

    #[test]
    fn stage_strides_double() {
        assert_eq!(EncoderConfig::stage_stride(0), 4);
        assert_eq!(EncoderConfig::stage_stride(1), 8);
        assert_eq!(EncoderConfig::stage_stride(2), 16);
        assert_eq!(EncoderConfig::stage_stride(3), 32);
    }

    #[test]
    fn pyramid_shapes_on_tiny_input() {
        let cfg = EncoderConfig::tiny();
        let mut rng = Rng::new(42);
        let mut store = ParameterStore::<f32>::new();
        init_encoder(&mut store, &mut rng, &cfg);

        let mut tape = Tape::<f32>::new(false);
        let mut ctx = Ctx::new(&store, false);
        let x = tape.leaf(Tensor::rand_uniform(&[1, 3, 64, 64], &mut rng, -1.0, 1.0));
        let pyramid = encoder_forward(&mut tape, &mut ctx, x, &cfg).unwrap();
        let expect = [(32, 16), (64, 8), (160, 4), (256, 2)];
        for (lvl, (c, e)) in pyramid.levels.iter().zip(expect) {
            assert_eq!(tape.value(*lvl).shape(), &[1, c, e, e]);
        }
    }

    #[test]
    fn indivisible_input_rejected() {
        let cfg = EncoderConfig::tiny();
        let mut rng = Rng::new(1);
        let mut store = ParameterStore::<f32>::new();
        init_encoder(&mut store, &mut rng, &cfg);
        let mut tape = Tape::<f32>::new(false);
        let mut ctx = Ctx::new(&store, false);
        let x = tape.leaf(Tensor::zeros(&[1, 3, 60, 60]));
        assert!(matches!(
            encoder_forward(&mut tape, &mut ctx, x, &cfg),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn param_count_matches_store_walk() {
        for cfg in [EncoderConfig::default(), EncoderConfig::tiny()] {
            let mut rng = Rng::new(3);
            let mut store = ParameterStore::<f32>::new();
            init_encoder(&mut store, &mut rng, &cfg);
            assert_eq!(encoder_param_count(&cfg), store.trainable_elements());
        }
    }

    #[test]
    fn backbone_param_count_is_about_3_4m() {
        let n = encoder_param_count(&EncoderConfig::default());
        assert!((3_200_000..3_600_000).contains(&n), "backbone params {n}");
    }

    #[test]
    fn constant_input_patch_embed_has_zero_token_mean() {
        let cfg = EncoderConfig::tiny();
        let mut rng = Rng::new(4);
        let mut store = ParameterStore::<f32>::new();
        init_encoder(&mut store, &mut rng, &cfg);
        let mut tape = Tape::<f32>::new(false);
        let mut ctx = Ctx::new(&store, false);
        let x = tape.leaf(Tensor::full(&[1, 3, 32, 32], 0.7));
        let (tokens, h, w) = patch_embed(&mut tape, &mut ctx, 0, x).unwrap();
        assert_eq!((h, w), (8, 8));
        let t = tape.value(tokens);
        let (_, l, c) = t.dims3().unwrap();
        for row in 0..l {
            let mean: f32 = t.data()[row * c..(row + 1) * c].iter().sum::<f32>() / c as f32;
            assert!(mean.abs() < 1e-4, "token {row} mean {mean}");
        }
    }
}
