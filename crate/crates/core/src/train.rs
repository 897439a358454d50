//! Desk-scale overfit training on one synthetic fixture.

use crate::error::{Error, Result};
use crate::scalar::Real;
use crate::graph::Tape;
use crate::io::fixture::{synth_fixture, FixtureKind, SampleRecord};
use crate::io::image::standardize;
use crate::loss::{total_loss, LossConfig};
use crate::metrics::{metrics, MetricsReport};
use crate::model::{init_params, predict_mask, useanet_forward, ModelConfig};
use crate::nn::Ctx;
use crate::optim::{Adam, AdamConfig, ReduceLrOnPlateau};
use crate::params::ParameterStore;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub struct OverfitSettings {
    pub size: usize,
    pub steps: usize,
    pub seed: u64,
    pub lr: f64,
    pub clip_norm: f64,
    pub eval_every: usize,
    /// Success threshold on the training IoU.
    pub target_iou: f64,
    /// Early-stop threshold (stop once the eval IoU clears this).
    pub stop_iou: f64,
}

impl Default for OverfitSettings {
    fn default() -> Self {
        OverfitSettings {
            size: 64,
            steps: 300,
            seed: 7,
            lr: 1e-4,
            clip_norm: 1.0,
            eval_every: 10,
            target_iou: 0.9,
            stop_iou: 0.95,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct OverfitLog {
    pub step: usize,
    pub loss: f64,
    pub iou: f64,
    pub lr: f64,
}

pub struct OverfitOutcome {
    pub final_loss: f64,
    pub final_iou: f64,
    pub first_loss: f64,
    pub steps_run: usize,
    pub reached_target: bool,
    pub store: ParameterStore<f32>,
    pub fixture: SampleRecord<f32>,
    pub trace: Vec<OverfitLog>,
}

/// Inference-mode IoU of the current parameters on the fixture.
fn eval_iou(
    store: &ParameterStore<f32>,
    cfg: &ModelConfig,
    input: &Tensor<f32>,
    gt: &Tensor<f32>,
) -> Result<MetricsReport> {
    let mut tape = Tape::new(false);
    let mut ctx = Ctx::new(store, false);
    let x = tape.leaf(input.clone());
    let preds = useanet_forward(&mut tape, &mut ctx, x, cfg)?;
    let mask = predict_mask(tape.value(preds.final_probs), 0.5)?;
    metrics(&mask, gt)
}

/// Trains the given configuration on one speckled-disk fixture. Succeeds
/// iff the final training IoU reaches `target_iou`; stops early once the
/// IoU clears `stop_iou` at an evaluation point.
pub fn overfit_fixture(
    cfg: &ModelConfig,
    settings: &OverfitSettings,
    mut on_log: impl FnMut(&OverfitLog),
) -> Result<OverfitOutcome> {
    if !settings.size.is_multiple_of(32) {
        return Err(Error::Input(format!(
            "overfit size {} must be divisible by 32",
            settings.size
        )));
    }
    let fixture = synth_fixture::<f32>(FixtureKind::SpeckledDisk, settings.size, settings.seed)?;
    let s = settings.size;
    let input = standardize(&fixture.image).reshape(&[1, 3, s, s])?;
    let gt = fixture.mask.reshape(&[1, 1, s, s])?;

    let mut store = init_params::<f32>(cfg, settings.seed)?;
    let mut adam = Adam::new(AdamConfig {
        lr: settings.lr,
        clip_norm: Some(settings.clip_norm),
        ..AdamConfig::default()
    });
    let mut scheduler = ReduceLrOnPlateau::new(0.5, 10);
    let loss_cfg = LossConfig::default();

    let mut trace: Vec<OverfitLog> = Vec::new();
    let mut first_loss = f64::NAN;
    let mut last_loss = f64::NAN;
    let mut steps_run = 0;
    // checkpoint the best-IoU parameters, mirroring the usual
    // keep-best-validation protocol
    let mut best: Option<(f64, ParameterStore<f32>)> = None;

    for step in 1..=settings.steps {
        let mut tape = Tape::new(true);
        let mut ctx = Ctx::new(&store, true);
        let x = tape.leaf(input.clone());
        let preds = useanet_forward(&mut tape, &mut ctx, x, cfg)?;
        let loss = total_loss(&mut tape, &preds, &gt, &loss_cfg)?;
        let loss_v = tape.value(loss).item()?.to_f64();
        if !loss_v.is_finite() {
            return Err(Error::Train(format!("non-finite loss at step {step}")));
        }
        if step == 1 {
            first_loss = loss_v;
        }
        last_loss = loss_v;
        let grads = tape.backward(loss)?.named(&tape);
        let updates = ctx.into_updates();
        drop(tape);

        adam.step(&mut store, &grads).map_err(|e| match e {
            Error::Train(msg) => Error::Train(format!("step {step}: {msg}")),
            other => other,
        })?;
        for (name, tensor) in updates {
            store.set(&name, tensor)?;
        }
        steps_run = step;

        if step % settings.eval_every == 0 || step == settings.steps {
            let report = eval_iou(&store, cfg, &input, &gt)?;
            adam.cfg.lr = scheduler.observe(loss_v, adam.cfg.lr);
            let entry = OverfitLog {
                step,
                loss: loss_v,
                iou: report.iou,
                lr: adam.cfg.lr,
            };
            on_log(&entry);
            trace.push(entry);
            if best.as_ref().is_none_or(|(b, _)| report.iou > *b) {
                best = Some((report.iou, store.clone()));
            }
            if report.iou >= settings.stop_iou {
                break;
            }
        }
    }

    let store = match best {
        Some((_, snapshot)) => snapshot,
        None => store,
    };
    let final_report = eval_iou(&store, cfg, &input, &gt)?;
    Ok(OverfitOutcome {
        final_loss: last_loss,
        final_iou: final_report.iou,
        first_loss,
        steps_run,
        reached_target: final_report.iou >= settings.target_iou,
        store,
        fixture,
        trace,
    })
}
