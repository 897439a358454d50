//! Regenerates the committed golden artifacts under `golden/`: a reduced
//! configuration, a briefly trained checkpoint with decisive logits, the
//! fixture it was trained on, and the mask that checkpoint must reproduce
//! byte-for-byte in reference mode.
//!
//! Run from the workspace root: `cargo run -p useanet-cli --example make_golden`

use std::path::Path;

use useanet_core::encoder::EncoderConfig;
use useanet_core::io::checkpoint::save_checkpoint;
use useanet_core::io::image::{load_image, write_gray_pgm, write_mask_pgm};
use useanet_core::model::{predict_mask, segment_image, ModelConfig};
use useanet_core::train::{overfit_fixture, OverfitSettings};

fn micro_config() -> ModelConfig {
    ModelConfig {
        input_size: 64,
        encoder: EncoderConfig {
            embed_dims: [8, 16, 40, 64],
            depths: [1, 1, 1, 1],
            num_heads: [1, 2, 5, 8],
            sr_ratios: [8, 4, 2, 1],
            mlp_ratios: [2, 2, 2, 2],
        },
        decoder_width: 16,
        ..ModelConfig::default()
    }
}

fn main() {
    let dir = Path::new("golden");
    std::fs::create_dir_all(dir).unwrap();

    let cfg = micro_config();
    let settings = OverfitSettings {
        size: 64,
        steps: 300,
        seed: 2024,
        ..OverfitSettings::default()
    };
    let outcome = overfit_fixture(&cfg, &settings, |log| {
        println!("step {:>4} loss {:.4} iou {:.4}", log.step, log.loss, log.iou);
    })
    .unwrap();
    println!("golden training: {} steps, IoU {:.4}", outcome.steps_run, outcome.final_iou);

    save_checkpoint(&outcome.store, &dir.join("weights.ckpt")).unwrap();
    write_gray_pgm(&outcome.fixture.image, &dir.join("fixture.pgm")).unwrap();
    write_mask_pgm(&outcome.fixture.mask, &dir.join("gt_mask.pgm")).unwrap();

    // the reference mask is produced through the same path cmd_segment
    // uses: decode the written PGM, standardize, segment, threshold
    let image = load_image::<f32>(&dir.join("fixture.pgm")).unwrap();
    let probs = segment_image(&outcome.store, &cfg, &image).unwrap();
    let min_margin = probs
        .data()
        .iter()
        .map(|p| (p - 0.5).abs())
        .fold(f32::INFINITY, f32::min);
    println!("minimum |p - 0.5| margin: {min_margin:.2e}");
    let mask = predict_mask(&probs, 0.5).unwrap();
    write_mask_pgm(&mask, &dir.join("mask.pgm")).unwrap();

    let run_cfg = serde_json::json!({ "model": {
        "input_size": cfg.input_size,
        "encoder": {
            "embed_dims": cfg.encoder.embed_dims,
            "depths": cfg.encoder.depths,
            "num_heads": cfg.encoder.num_heads,
            "sr_ratios": cfg.encoder.sr_ratios,
            "mlp_ratios": cfg.encoder.mlp_ratios,
        },
        "decoder_width": cfg.decoder_width,
        "alpha_hfa": cfg.alpha_hfa,
        "alpha_edge": cfg.alpha_edge,
        "beta_eaa": cfg.beta_eaa,
        "attention": cfg.attention,
        "multi_branch": cfg.multi_branch,
        "ultrasound_specific": cfg.ultrasound_specific,
        "multi_scale": cfg.multi_scale,
    }});
    std::fs::write(dir.join("config.json"), serde_json::to_string_pretty(&run_cfg).unwrap()).unwrap();
    println!("golden artifacts written to {}", dir.display());
}
