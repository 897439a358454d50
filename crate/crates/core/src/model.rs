//! Full network assembly: per-level feature processing, hierarchical
//! feature aggregation with dual foreground/background heads, the
//! top-down decoder with ultrasound-aware enhancement, multi-scale
//! prediction heads and the final mask.
//!
//! Scale map: s=2 is the stride-8 decoder output (F2 resolution), s=3
//! stride 16, s=4 stride 32, and s=5 the aggregation module's dual
//! prediction (stride 8), which is also the enhancement source for the
//! decoder levels.

use serde::{Deserialize, Serialize};

use crate::blocks::{eaa, eca, mbfp, MbfpMode};
use crate::encoder::{encoder_forward, EncoderConfig};
use crate::error::{Error, Result};
use crate::graph::{NodeId, Tape};
use crate::nn::{conv_fwd, lconv, Ctx};
use crate::ops::ConvSpec;
use crate::params::ParameterStore;
use crate::rng::Rng;
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Pyramid levels consumed by the aggregation and decoder stages
/// (1-based stage indices of F2, F3, F4).
pub const DECODER_LEVELS: [usize; 3] = [2, 3, 4];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub input_size: usize,
    pub encoder: EncoderConfig,
    /// Uniform channel width of the processed pyramid and decoder.
    pub decoder_width: usize,
    /// Fusion strength of the aggregation gates.
    pub alpha_hfa: f64,
    /// Laplacian mixing factor of the edge branch.
    pub alpha_edge: f64,
    /// Edge-boost factor of the edge-aware attention.
    pub beta_eaa: f64,
    /// Ablation toggles; all on reproduces the full configuration.
    pub attention: bool,
    pub multi_branch: bool,
    pub ultrasound_specific: bool,
    pub multi_scale: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_size: 256,
            encoder: EncoderConfig::default(),
            decoder_width: 64,
            alpha_hfa: 0.5,
            alpha_edge: 0.1,
            beta_eaa: 0.1,
            attention: true,
            multi_branch: true,
            ultrasound_specific: true,
            multi_scale: true,
        }
    }
}

impl ModelConfig {
    /// Desk-scale configuration for overfit runs and gradient checks.
    pub fn tiny() -> Self {
        ModelConfig {
            input_size: 64,
            encoder: EncoderConfig::tiny(),
            ..ModelConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        if !self.input_size.is_multiple_of(32) || self.input_size == 0 {
            return Err(Error::Config(format!(
                "input size {} must be a positive multiple of 32",
                self.input_size
            )));
        }
        if self.decoder_width < 4 {
            return Err(Error::Config("decoder width below 4".into()));
        }
        if self.supervised_scales().is_empty() {
            return Err(Error::Config("no prediction path: supervised scale set is empty".into()));
        }
        Ok(())
    }

    /// Supervised prediction scales; the two-layer ablation keeps {2, 5}.
    pub fn supervised_scales(&self) -> Vec<u8> {
        if self.multi_scale {
            vec![2, 3, 4, 5]
        } else {
            vec![2, 5]
        }
    }

    pub fn mbfp_mode(&self) -> MbfpMode {
        MbfpMode {
            multi_branch: self.multi_branch,
            ultrasound_specific: self.ultrasound_specific,
        }
    }
}

/// Per-scale dual logit maps plus the final full-resolution mask
/// probabilities.
pub struct Predictions {
    /// `(scale, foreground logits, background logits)`, ascending scale.
    pub scales: Vec<(u8, NodeId, NodeId)>,
    /// `[N,1,H,W]` probabilities in [0,1] at input resolution.
    pub final_probs: NodeId,
    /// Fusion-weight nodes of the per-level processors (invariant checks).
    pub fusion_weights: Vec<NodeId>,
}

impl Predictions {
    pub fn logits_for(&self, scale: u8) -> Option<(NodeId, NodeId)> {
        self.scales
            .iter()
            .find(|(s, _, _)| *s == scale)
            .map(|(_, f, b)| (*f, *b))
    }
}

/// Ultrasound-aware decoder enhancement: gates a decoder feature with the
/// resized foreground/background contrast, `x + x * sigmoid(resize(diff))`.
pub fn uade<T: Real>(tape: &mut Tape<T>, feature: NodeId, fg_bg_diff: NodeId) -> Result<NodeId> {
    let (_, _, h, w) = tape.value(feature).dims4()?;
    let resized = tape.bilinear_resize(fg_bg_diff, h, w)?;
    let gate = tape.sigmoid(resized)?;
    let boost = tape.mul_bc(feature, gate)?;
    tape.add(feature, boost)
}

/// Hierarchical feature aggregation over the processed pyramid levels
/// (all at `decoder_width` channels). Returns `(P_fg, P_bg)` at F2
/// resolution.
fn hfa<T: Real>(
    tape: &mut Tape<T>,
    ctx: &mut Ctx<'_, T>,
    cfg: &ModelConfig,
    f2: NodeId,
    f3: NodeId,
    f4: NodeId,
) -> Result<(NodeId, NodeId)> {
    let (_, _, h2, w2) = tape.value(f2).dims4()?;
    let alpha = T::from_f64(cfg.alpha_hfa);

    let up4 = tape.bilinear_resize(f4, h2, w2)?;
    let up3 = tape.bilinear_resize(f3, h2, w2)?;

    let g4 = lconv(tape, ctx, "hfa.g4", up4, 3)?;
    let g4 = tape.scale(g4, alpha)?;
    let g4 = tape.add_scalar(g4, T::ONE)?;
    let g3 = lconv(tape, ctx, "hfa.g3", up3, 3)?;
    let g3 = tape.scale(g3, alpha)?;
    let g3 = tape.add_scalar(g3, T::ONE)?;
    let fuse = tape.mul(f2, g4)?;
    let fuse = tape.mul(fuse, g3)?;

    let c4 = lconv(tape, ctx, "hfa.c4", up4, 3)?;
    let cat = tape.concat_channels(&[fuse, c4])?;
    let mut agg = lconv(tape, ctx, "hfa.cat", cat, 3)?;
    if cfg.attention {
        agg = eaa(tape, ctx, "hfa.eaa", agg, cfg.beta_eaa, cfg.ultrasound_specific)?;
    }

    let p_fg = conv_fwd(tape, ctx, "hfa.fg", agg, ConvSpec::unit(1))?;
    let p_bg = conv_fwd(tape, ctx, "hfa.bg", agg, ConvSpec::unit(1))?;
    Ok((p_fg, p_bg))
}

/// Full forward pass. `input` is `[N,3,H,W]` with H, W divisible by 32.
pub fn useanet_forward<T: Real>(
    tape: &mut Tape<T>,
    ctx: &mut Ctx<'_, T>,
    input: NodeId,
    cfg: &ModelConfig,
) -> Result<Predictions> {
    cfg.validate()?;
    let (_, _, in_h, in_w) = tape.value(input).dims4()?;
    let pyramid = encoder_forward(tape, ctx, input, &cfg.encoder)?;

    // per-level processing of the consumed levels F2..F4
    let mut processed = Vec::with_capacity(DECODER_LEVELS.len());
    let mut fusion_weights = Vec::new();
    for (slot, level) in DECODER_LEVELS.iter().enumerate() {
        let raw = pyramid.levels[slot + 1];
        let m = mbfp(
            tape,
            ctx,
            &format!("neck.l{level}.mbfp"),
            raw,
            cfg.mbfp_mode(),
            cfg.alpha_edge,
        )?;
        if let Some(w) = m.fusion_weights {
            fusion_weights.push(w);
        }
        let mut x = m.out;
        if cfg.attention {
            x = eca(tape, ctx, &format!("neck.l{level}.eca"), x)?;
        }
        processed.push(x);
    }
    let (f2, f3, f4) = (processed[0], processed[1], processed[2]);

    let (p_fg, p_bg) = hfa(tape, ctx, cfg, f2, f3, f4)?;
    let diff = tape.sub(p_fg, p_bg)?;

    // top-down decoder
    let d4 = lconv(tape, ctx, "decoder.d4", f4, 3)?;
    let (_, _, h3, w3) = tape.value(f3).dims4()?;
    let up = tape.bilinear_resize(d4, h3, w3)?;
    let sum = tape.add(up, f3)?;
    let d3 = lconv(tape, ctx, "decoder.d3", sum, 3)?;
    let (_, _, h2, w2) = tape.value(f2).dims4()?;
    let up = tape.bilinear_resize(d3, h2, w2)?;
    let sum = tape.add(up, f2)?;
    let d2 = lconv(tape, ctx, "decoder.d2", sum, 3)?;

    let supervised = cfg.supervised_scales();
    let mut scales = Vec::new();
    for (scale, feature) in [(2u8, d2), (3u8, d3), (4u8, d4)] {
        if !supervised.contains(&scale) {
            continue;
        }
        let enhanced = uade(tape, feature, diff)?;
        let fg = conv_fwd(tape, ctx, &format!("heads.s{scale}.fg"), enhanced, ConvSpec::unit(1))?;
        let bg = conv_fwd(tape, ctx, &format!("heads.s{scale}.bg"), enhanced, ConvSpec::unit(1))?;
        scales.push((scale, fg, bg));
    }
    if supervised.contains(&5) {
        scales.push((5, p_fg, p_bg));
    }

    let (fg2, _) = scales
        .iter()
        .find(|(s, _, _)| *s == 2)
        .map(|(_, f, b)| (*f, *b))
        .ok_or_else(|| Error::Config("no prediction path: scale-2 head missing".into()))?;
    let up = tape.bilinear_resize(fg2, in_h, in_w)?;
    let final_probs = tape.sigmoid(up)?;

    Ok(Predictions {
        scales,
        final_probs,
        fusion_weights,
    })
}

/// Registers every parameter of the model.
pub fn init_params<T: Real>(cfg: &ModelConfig, seed: u64) -> Result<ParameterStore<T>> {
    cfg.validate()?;
    let mut rng = Rng::new(seed);
    let mut store = ParameterStore::new();
    crate::encoder::init_encoder(&mut store, &mut rng, &cfg.encoder);

    let width = cfg.decoder_width;
    for (slot, level) in DECODER_LEVELS.iter().enumerate() {
        let c_in = cfg.encoder.embed_dims[slot + 1];
        crate::blocks::init_mbfp(
            &mut store,
            &mut rng,
            &format!("neck.l{level}.mbfp"),
            c_in,
            width,
            cfg.mbfp_mode(),
        );
        if cfg.attention {
            crate::blocks::init_eca(&mut store, &mut rng, &format!("neck.l{level}.eca"), width);
        }
    }

    for name in ["hfa.g4", "hfa.g3", "hfa.c4"] {
        crate::nn::init_lconv(&mut store, &mut rng, name, width, width, 3);
    }
    crate::nn::init_lconv(&mut store, &mut rng, "hfa.cat", 2 * width, width, 3);
    if cfg.attention {
        crate::blocks::init_eaa(&mut store, &mut rng, "hfa.eaa", width);
    }
    crate::nn::init_conv(&mut store, &mut rng, "hfa.fg", width, 1, 1);
    crate::nn::init_conv(&mut store, &mut rng, "hfa.bg", width, 1, 1);

    for name in ["decoder.d4", "decoder.d3", "decoder.d2"] {
        crate::nn::init_lconv(&mut store, &mut rng, name, width, width, 3);
    }
    for scale in cfg.supervised_scales() {
        if scale == 5 {
            continue;
        }
        crate::nn::init_conv(&mut store, &mut rng, &format!("heads.s{scale}.fg"), width, 1, 1);
        crate::nn::init_conv(&mut store, &mut rng, &format!("heads.s{scale}.bg"), width, 1, 1);
    }
    Ok(store)
}

/// Validates a loaded store against a configuration: every expected
/// tensor present with the expected shape, nothing extra. Reports the
/// first offending tensor in sorted-name order.
pub fn check_compatible<T: Real>(cfg: &ModelConfig, store: &ParameterStore<T>) -> Result<()> {
    let expected = init_params::<T>(cfg, 0)?;
    for (name, p) in expected.iter() {
        match store.get(name) {
            Err(_) => return Err(Error::MissingParameter(name.to_string())),
            Ok(t) if t.shape() != p.tensor.shape() => {
                return Err(Error::Shape {
                    op: "checkpoint",
                    detail: format!(
                        "{name}: checkpoint shape {:?}, config expects {:?}",
                        t.shape(),
                        p.tensor.shape()
                    ),
                });
            }
            Ok(_) => {}
        }
    }
    for (name, _) in store.iter() {
        if !expected.contains(name) {
            return Err(Error::Shape {
                op: "checkpoint",
                detail: format!("{name}: not part of the configured architecture"),
            });
        }
    }
    Ok(())
}

/// Thresholded binary mask; ties (exactly at the threshold) count as
/// foreground.
pub fn predict_mask<T: Real>(probs: &Tensor<T>, threshold: f64) -> Result<Tensor<T>> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::Input(format!("threshold {threshold} outside [0, 1]")));
    }
    let t = T::from_f64(threshold);
    Ok(probs.map(|v| if v >= t { T::ONE } else { T::ZERO }))
}

/// Convenience inference path: standardized image `[3,H,W]` (any extent)
/// -> mask probabilities at the image's own resolution.
pub fn segment_image<T: Real>(
    store: &ParameterStore<T>,
    cfg: &ModelConfig,
    image: &Tensor<T>,
) -> Result<Tensor<T>> {
    let [c, h, w] = image.shape() else {
        return Err(Error::Input(format!("expected [3,H,W] image, got {:?}", image.shape())));
    };
    let (c, h, w) = (*c, *h, *w);
    if c != 3 {
        return Err(Error::Input(format!("expected 3 channels, got {c}")));
    }
    let batched = image.reshape(&[1, 3, h, w])?;
    let resized = crate::ops::bilinear_resize(&batched, cfg.input_size, cfg.input_size)?;

    let mut tape = Tape::new(false);
    let mut ctx = Ctx::new(store, false);
    let input = tape.leaf(resized);
    let preds = useanet_forward(&mut tape, &mut ctx, input, cfg)?;
    let probs = tape.value(preds.final_probs);
    let probs = crate::ops::bilinear_resize(probs, h, w)?;
    probs.reshape(&[1, h, w])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uade_equal_predictions_give_exactly_1_5x() {
        let mut rng = Rng::new(31);
        let mut tape = Tape::<f32>::new(false);
        let f_t = Tensor::<f32>::rand_uniform(&[1, 4, 6, 6], &mut rng, -1.0, 1.0);
        let f = tape.leaf(f_t.clone());
        let p = tape.leaf(Tensor::rand_uniform(&[1, 1, 3, 3], &mut rng, -2.0, 2.0));
        let diff = tape.sub(p, p).unwrap();
        let out = uade(&mut tape, f, diff).unwrap();
        let expect = f_t.map(|v| 1.5 * v);
        assert_eq!(tape.value(out).max_abs_diff(&expect).unwrap(), 0.0);
    }

    #[test]
    fn uade_respects_gating_bounds_for_nonnegative_features() {
        let mut rng = Rng::new(32);
        let mut tape = Tape::<f32>::new(false);
        let f_t = Tensor::<f32>::rand_uniform(&[1, 2, 5, 5], &mut rng, 0.0, 2.0);
        let f = tape.leaf(f_t.clone());
        let fg = tape.leaf(Tensor::rand_uniform(&[1, 1, 5, 5], &mut rng, -30.0, 30.0));
        let bg = tape.leaf(Tensor::rand_uniform(&[1, 1, 5, 5], &mut rng, -30.0, 30.0));
        let diff = tape.sub(fg, bg).unwrap();
        let out = uade(&mut tape, f, diff).unwrap();
        for (o, x) in tape.value(out).data().iter().zip(f_t.data()) {
            assert!(*o >= x - 1e-6 && *o <= 2.0 * x + 1e-6);
        }
    }

    #[test]
    fn threshold_semantics() {
        let probs = Tensor::<f32>::new(vec![1, 1, 4], vec![0.4, 0.5, 0.6, 0.49999]).unwrap();
        let mask = predict_mask(&probs, 0.5).unwrap();
        assert_eq!(mask.data(), &[0.0, 1.0, 1.0, 0.0]);
        assert!(predict_mask(&probs, 1.1).is_err());
        let all_bg = predict_mask(&Tensor::<f32>::full(&[4], 0.4), 0.5).unwrap();
        assert!(all_bg.data().iter().all(|&v| v == 0.0));
        let all_fg = predict_mask(&Tensor::<f32>::full(&[4], 0.6), 0.5).unwrap();
        assert!(all_fg.data().iter().all(|&v| v == 1.0));
    }
}
