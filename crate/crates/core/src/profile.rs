//! Parameter and MAC profiling.
//!
//! Two independent routes exist for the parameter totals: the analytic
//! count below (pure arithmetic over the configuration) and
//! [`recount_store`], which walks an actual parameter store; the
//! verification suites require them to agree exactly. MACs are reported
//! as FLOPs with the 1 MAC = 1 FLOP convention; only convolution/linear
//! multiplies and the two attention matrix products are counted;
//! normalizations, activations, poolings and resizes are excluded.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::blocks::{eaa_macs, eaa_param_count, eca_macs, eca_param_count, mbfp_macs, mbfp_param_count};
use crate::encoder::{encoder_macs, encoder_param_count};
use crate::error::Result;
use crate::model::{ModelConfig, DECODER_LEVELS};
use crate::nn::{lconv_macs, lconv_param_count};
use crate::params::ParameterStore;
use crate::scalar::Real;

pub const MODULE_GROUPS: [&str; 6] = ["encoder", "mbfp", "eca_eaa", "hfa", "decoder", "heads"];

#[derive(Clone, Debug, Serialize)]
pub struct ModuleCost {
    pub params: u64,
    pub flops: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ProfileReport {
    pub input_size: usize,
    pub params_total: u64,
    pub flops_total: u64,
    pub params_millions: f64,
    pub flops_giga: f64,
    pub modules: BTreeMap<String, ModuleCost>,
}

impl ProfileReport {
    pub fn module(&self, name: &str) -> &ModuleCost {
        &self.modules[name]
    }
}

/// Analytic profile of a configuration at `input_size` (square, batch 1).
pub fn profile(cfg: &ModelConfig, input_size: usize) -> Result<ProfileReport> {
    cfg.validate()?;
    let width = cfg.decoder_width;
    let mode = cfg.mbfp_mode();
    let s8 = input_size / 8;
    let s16 = input_size / 16;
    let s32 = input_size / 32;
    let level_extents = [s8, s16, s32];

    let mut modules: BTreeMap<String, ModuleCost> = BTreeMap::new();

    modules.insert(
        "encoder".into(),
        ModuleCost {
            params: encoder_param_count(&cfg.encoder),
            flops: encoder_macs(&cfg.encoder, input_size),
        },
    );

    let mut mbfp_params = 0u64;
    let mut mbfp_flops = 0u64;
    let mut att_params = 0u64;
    let mut att_flops = 0u64;
    for (slot, _level) in DECODER_LEVELS.iter().enumerate() {
        let c_in = cfg.encoder.embed_dims[slot + 1];
        let e = level_extents[slot];
        mbfp_params += mbfp_param_count(c_in, width, mode);
        mbfp_flops += mbfp_macs(c_in, width, mode, e, e, 1);
        if cfg.attention {
            att_params += eca_param_count(width);
            att_flops += eca_macs(width, e, e, 1);
        }
    }
    if cfg.attention {
        att_params += eaa_param_count(width);
        att_flops += eaa_macs(width, s8, s8, 1, cfg.ultrasound_specific);
    }
    modules.insert("mbfp".into(), ModuleCost { params: mbfp_params, flops: mbfp_flops });
    modules.insert("eca_eaa".into(), ModuleCost { params: att_params, flops: att_flops });

    // aggregation: three 3x3 LConvs at F2 resolution plus the concat LConv
    let hfa_params = 3 * lconv_param_count(width, width, 3) + lconv_param_count(2 * width, width, 3);
    let hfa_flops = 3 * lconv_macs(width, width, 3, s8, s8) + lconv_macs(2 * width, width, 3, s8, s8);
    modules.insert("hfa".into(), ModuleCost { params: hfa_params, flops: hfa_flops });

    let dec_params = 3 * lconv_param_count(width, width, 3);
    let dec_flops = lconv_macs(width, width, 3, s32, s32)
        + lconv_macs(width, width, 3, s16, s16)
        + lconv_macs(width, width, 3, s8, s8);
    modules.insert("decoder".into(), ModuleCost { params: dec_params, flops: dec_flops });

    // dual 1x1 heads: aggregation pair plus one pair per supervised
    // decoder level
    let mut head_params = 2 * (width as u64 + 1);
    let mut head_flops = 2 * (width * s8 * s8) as u64;
    for scale in cfg.supervised_scales() {
        let e = match scale {
            2 => s8,
            3 => s16,
            4 => s32,
            _ => continue, // scale 5 is the aggregation pair, already counted
        };
        head_params += 2 * (width as u64 + 1);
        head_flops += 2 * (width * e * e) as u64;
    }
    modules.insert("heads".into(), ModuleCost { params: head_params, flops: head_flops });

    let params_total: u64 = modules.values().map(|m| m.params).sum();
    let flops_total: u64 = modules.values().map(|m| m.flops).sum();
    Ok(ProfileReport {
        input_size,
        params_total,
        flops_total,
        params_millions: params_total as f64 / 1e6,
        flops_giga: flops_total as f64 / 1e9,
        modules,
    })
}

/// Module group of a parameter name (the store-walk route).
pub fn group_of(name: &str) -> &'static str {
    if name.starts_with("encoder.") {
        "encoder"
    } else if name.contains(".mbfp.") {
        "mbfp"
    } else if name.contains(".eca.") || name.starts_with("hfa.eaa.") {
        "eca_eaa"
    } else if name.starts_with("hfa.fg.") || name.starts_with("hfa.bg.") || name.starts_with("heads.") {
        "heads"
    } else if name.starts_with("hfa.") {
        "hfa"
    } else if name.starts_with("decoder.") {
        "decoder"
    } else {
        "other"
    }
}

/// Independent recount: walks the store and sums trainable elements per
/// module group.
pub fn recount_store<T: Real>(store: &ParameterStore<T>) -> BTreeMap<String, u64> {
    let mut out: BTreeMap<String, u64> = BTreeMap::new();
    for (name, p) in store.iter() {
        if !p.trainable {
            continue;
        }
        *out.entry(group_of(name).to_string()).or_insert(0) += p.tensor.numel() as u64;
    }
    out
}
