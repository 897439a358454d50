//! Central finite-difference gradient verification.
//!
//! Each case owns a parameter store and a deterministic builder that
//! produces a scalar loss from it. The harness compares analytic
//! gradients from [`crate::graph::Tape::backward`] against
//! `(f(p+h) - f(p-h)) / 2h` on a sampled subset of parameter elements.

use crate::error::{Error, Result};
use crate::graph::{NodeId, Tape};
use crate::params::ParameterStore;
use crate::tensor::Tensor;
use crate::rng::Rng;
use crate::scalar::Real;

pub type LossBuilder<T> = dyn Fn(&mut Tape<T>, &ParameterStore<T>) -> Result<NodeId>;

#[derive(Clone, Copy, Debug)]
pub struct GradCheckSettings {
    /// Central-difference step.
    pub h: f64,
    /// Maximum accepted relative error.
    pub tol: f64,
    /// Elements sampled per parameter tensor.
    pub samples_per_param: usize,
    /// Cap on finite-difference evaluations for one case.
    pub max_total_samples: usize,
}

impl GradCheckSettings {
    /// f32 profile: h = 1e-3, tolerance 1e-3.
    pub fn f32_mode() -> Self {
        GradCheckSettings {
            h: 1e-3,
            tol: 1e-3,
            samples_per_param: 4,
            max_total_samples: 128,
        }
    }

    /// f64 profile: h = 1e-6, tolerance 1e-6.
    pub fn f64_mode() -> Self {
        GradCheckSettings {
            h: 1e-6,
            tol: 1e-6,
            samples_per_param: 4,
            max_total_samples: 128,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ParamReport {
    pub name: String,
    pub max_rel: f64,
    pub checked: usize,
}

#[derive(Clone, Debug)]
pub struct CaseReport {
    pub name: String,
    pub params: Vec<ParamReport>,
    pub max_rel: f64,
    pub pass: bool,
}

impl CaseReport {
    pub fn summary_line(&self) -> String {
        format!(
            "{} {:<38} max rel err {:.3e}",
            if self.pass { "PASS" } else { "FAIL" },
            self.name,
            self.max_rel
        )
    }
}

/// Relative error with a unit floor so near-zero gradient pairs compare
/// absolutely (the finite-difference noise floor dominates there).
fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1.0)
}

fn forward_loss<T: Real>(builder: &LossBuilder<T>, store: &ParameterStore<T>) -> Result<f64> {
    let mut tape = Tape::new(false);
    let loss = builder(&mut tape, store)?;
    Ok(tape.value(loss).item()?.to_f64())
}

/// Runs one gradient-check case. The builder must be deterministic: two
/// forward passes with identical parameters must agree bit for bit.
pub fn check_case<T: Real>(
    name: &str,
    store: &ParameterStore<T>,
    builder: &LossBuilder<T>,
    settings: &GradCheckSettings,
    seed: u64,
) -> Result<CaseReport> {
    let l0 = forward_loss(builder, store)?;
    let l1 = forward_loss(builder, store)?;
    if l0.to_bits() != l1.to_bits() {
        return Err(Error::Contract(format!(
            "nondeterministic builder in gradcheck case {name}: {l0:?} vs {l1:?}"
        )));
    }

    let mut tape = Tape::new(true);
    let loss = builder(&mut tape, store)?;
    let grads = tape.backward(loss)?.named(&tape);

    let mut rng = Rng::new(seed ^ 0x9D5A_B3F1);
    let mut work = store.clone();
    let mut reports = Vec::new();
    let mut total_samples = 0usize;
    let trainables = store.trainable_names();
    for pname in &trainables {
        let numel = store.get(pname)?.numel();
        let analytic = grads
            .get(pname)
            .ok_or_else(|| Error::Contract(format!("no gradient recorded for {pname} in case {name}")))?;
        let take = settings.samples_per_param.min(numel);
        let mut max_rel: f64 = 0.0;
        let mut checked = 0usize;
        for _ in 0..take {
            if total_samples >= settings.max_total_samples {
                break;
            }
            let idx = if numel == 1 { 0 } else { rng.below(numel) };
            let orig = store.get(pname)?.data()[idx];
            let h = T::from_f64(settings.h);

            work.get_mut(pname)?.data_mut()[idx] = orig + h;
            let lp = forward_loss(builder, &work)?;
            work.get_mut(pname)?.data_mut()[idx] = orig - h;
            let lm = forward_loss(builder, &work)?;
            work.get_mut(pname)?.data_mut()[idx] = orig;

            let numeric = (lp - lm) / (2.0 * settings.h);
            let a = analytic.data()[idx].to_f64();
            max_rel = max_rel.max(rel_err(a, numeric));
            checked += 1;
            total_samples += 1;
        }
        reports.push(ParamReport {
            name: pname.clone(),
            max_rel,
            checked,
        });
    }

    let max_rel = reports.iter().map(|r| r.max_rel).fold(0.0, f64::max);
    Ok(CaseReport {
        name: name.to_string(),
        pass: max_rel <= settings.tol,
        params: reports,
        max_rel,
    })
}

/// A named gradient-check case: a parameter store plus a deterministic
/// scalar-loss builder over it.
pub struct GradCheckCase<T: Real> {
    pub name: &'static str,
    pub store: ParameterStore<T>,
    pub builder: Box<LossBuilder<T>>,
}

impl<T: Real> GradCheckCase<T> {
    pub fn run(&self, settings: &GradCheckSettings, seed: u64) -> Result<CaseReport> {
        check_case(self.name, &self.store, self.builder.as_ref(), settings, seed)
    }
}

/// Scales a summed loss down to O(1) so finite differences stay well
/// conditioned.
fn mean_loss<T: Real>(tape: &mut Tape<T>, x: crate::graph::NodeId) -> Result<crate::graph::NodeId> {
    let n = tape.value(x).numel();
    let s = tape.sum_all(x)?;
    tape.scale(s, T::from_f64(1.0 / n as f64))
}

/// Per-op-class cases. Each exercises one kernel's VJP inside a small,
/// deterministic graph; ReLU-bearing cases keep pre-activations away from
/// the kink so the f32 profile (h = 1e-3) stays meaningful.
pub fn op_cases<T: Real>(seed: u64) -> Result<Vec<GradCheckCase<T>>> {
    use crate::ops::ConvSpec;
    let mut rng = Rng::new(seed);
    let mut cases: Vec<GradCheckCase<T>> = Vec::new();

    // conv2d with stride, padding, bias
    {
        let x = Tensor::<T>::rand_uniform(&[1, 3, 6, 6], &mut rng, -1.0, 1.0);
        let mut store = ParameterStore::new();
        store.insert("w", Tensor::rand_uniform(&[4, 3, 3, 3], &mut rng, -0.5, 0.5));
        store.insert("b", Tensor::rand_uniform(&[4], &mut rng, -0.5, 0.5));
        cases.push(GradCheckCase {
            name: "conv2d",
            store,
            builder: Box::new(move |tape, store| {
                let xi = tape.leaf(x.clone());
                let w = tape.param("w", store.get("w")?.clone());
                let b = tape.param("b", store.get("b")?.clone());
                let y = tape.conv2d(xi, w, Some(b), ConvSpec::same(3).with_stride(2))?;
                let y = tape.sigmoid(y)?;
                mean_loss(tape, y)
            }),
        });
    }

    // grouped convolution
    {
        let x = Tensor::<T>::rand_uniform(&[1, 4, 5, 5], &mut rng, -1.0, 1.0);
        let mut store = ParameterStore::new();
        store.insert("w", Tensor::rand_uniform(&[6, 2, 3, 3], &mut rng, -0.5, 0.5));
        cases.push(GradCheckCase {
            name: "conv2d-grouped",
            store,
            builder: Box::new(move |tape, store| {
                let xi = tape.leaf(x.clone());
                let w = tape.param("w", store.get("w")?.clone());
                let y = tape.conv2d(xi, w, None, ConvSpec::same(3).with_groups(2))?;
                let y = tape.sigmoid(y)?;
                mean_loss(tape, y)
            }),
        });
    }

    // depthwise convolution (input gradient exercised through a param gate)
    {
        let x = Tensor::<T>::rand_uniform(&[1, 3, 5, 5], &mut rng, -1.0, 1.0);
        let mut store = ParameterStore::new();
        store.insert("gate", Tensor::rand_uniform(&[1, 3, 1, 1], &mut rng, 0.5, 1.5));
        store.insert("w", Tensor::rand_uniform(&[3, 1, 3, 3], &mut rng, -0.5, 0.5));
        cases.push(GradCheckCase {
            name: "dwconv2d",
            store,
            builder: Box::new(move |tape, store| {
                let xi = tape.leaf(x.clone());
                let g = tape.param("gate", store.get("gate")?.clone());
                let w = tape.param("w", store.get("w")?.clone());
                let gated = tape.mul_bc(xi, g)?;
                let y = tape.dwconv2d(gated, w, ConvSpec::same(3).with_groups(3))?;
                let y = tape.sigmoid(y)?;
                mean_loss(tape, y)
            }),
        });
    }

    // fixed Laplacian stencil (input path only)
    {
        let x = Tensor::<T>::rand_uniform(&[1, 2, 6, 6], &mut rng, -1.0, 1.0);
        let mut store = ParameterStore::new();
        store.insert("gate", Tensor::rand_uniform(&[1, 2, 1, 1], &mut rng, 0.5, 1.5));
        cases.push(GradCheckCase {
            name: "laplacian",
            store,
            builder: Box::new(move |tape, store| {
                let xi = tape.leaf(x.clone());
                let g = tape.param("gate", store.get("gate")?.clone());
                let gated = tape.mul_bc(xi, g)?;
                let y = tape.laplacian(gated)?;
                let y = tape.sigmoid(y)?;
                mean_loss(tape, y)
            }),
        });
    }

    // batch norm, training statistics
    {
        let x = Tensor::<T>::rand_uniform(&[2, 3, 4, 4], &mut rng, -1.0, 1.0);
        let rm = Tensor::<T>::zeros(&[3]);
        let rv = Tensor::<T>::full(&[3], T::ONE);
        let mut store = ParameterStore::new();
        store.insert("w", Tensor::rand_uniform(&[3, 3, 1, 1], &mut rng, -0.5, 0.5));
        store.insert("g", Tensor::rand_uniform(&[3], &mut rng, 0.5, 1.5));
        store.insert("beta", Tensor::rand_uniform(&[3], &mut rng, -0.5, 0.5));
        cases.push(GradCheckCase {
            name: "batchnorm-train",
            store,
            builder: Box::new(move |tape, store| {
                let xi = tape.leaf(x.clone());
                let w = tape.param("w", store.get("w")?.clone());
                let g = tape.param("g", store.get("g")?.clone());
                let b = tape.param("beta", store.get("beta")?.clone());
                let y = tape.conv2d(xi, w, None, ConvSpec::unit(1))?;
                let (y, _) = tape.batchnorm(y, g, b, &rm, &rv, true, 0.1, 1e-5)?;
                let y = tape.sigmoid(y)?;
                mean_loss(tape, y)
            }),
        });
    }

    // batch norm, frozen statistics
    {
        let x = Tensor::<T>::rand_uniform(&[1, 3, 4, 4], &mut rng, -1.0, 1.0);
        let rm = Tensor::<T>::rand_uniform(&[3], &mut rng, -0.2, 0.2);
        let rv = Tensor::<T>::rand_uniform(&[3], &mut rng, 0.5, 1.5);
        let mut store = ParameterStore::new();
        store.insert("g", Tensor::rand_uniform(&[3], &mut rng, 0.5, 1.5));
        store.insert("beta", Tensor::rand_uniform(&[3], &mut rng, -0.5, 0.5));
        cases.push(GradCheckCase {
            name: "batchnorm-eval",
            store,
            builder: Box::new(move |tape, store| {
                let xi = tape.leaf(x.clone());
                let g = tape.param("g", store.get("g")?.clone());
                let b = tape.param("beta", store.get("beta")?.clone());
                let (y, _) = tape.batchnorm(xi, g, b, &rm, &rv, false, 0.1, 1e-5)?;
                let y = tape.sigmoid(y)?;
                mean_loss(tape, y)
            }),
        });
    }

    // layer norm over tokens
    {
        let x = Tensor::<T>::rand_uniform(&[2, 5, 8], &mut rng, -1.0, 1.0);
        let mut store = ParameterStore::new();
        store.insert("g", Tensor::rand_uniform(&[8], &mut rng, 0.5, 1.5));
        store.insert("beta", Tensor::rand_uniform(&[8], &mut rng, -0.5, 0.5));
        cases.push(GradCheckCase {
            name: "layernorm",
            store,
            builder: Box::new(move |tape, store| {
                let xi = tape.leaf(x.clone());
                let g = tape.param("g", store.get("g")?.clone());
                let b = tape.param("beta", store.get("beta")?.clone());
                let y = tape.layernorm(xi, g, b, 1e-6)?;
                let y = tape.sigmoid(y)?;
                mean_loss(tape, y)
            }),
        });
    }

    // relu with pre-activations held away from the kink
    {
        let x = Tensor::<T>::rand_uniform(&[1, 2, 5, 5], &mut rng, -0.3, 0.3);
        let mut store = ParameterStore::new();
        store.insert("w", Tensor::rand_uniform(&[4, 2, 3, 3], &mut rng, -0.2, 0.2));
        let bias: Vec<T> = (0..4)
            .map(|i| T::from_f64(if i % 2 == 0 { 0.75 } else { -0.75 }))
            .collect();
        store.insert("b", Tensor::new(vec![4], bias)?);
        cases.push(GradCheckCase {
            name: "relu",
            store,
            builder: Box::new(move |tape, store| {
                let xi = tape.leaf(x.clone());
                let w = tape.param("w", store.get("w")?.clone());
                let b = tape.param("b", store.get("b")?.clone());
                let y = tape.conv2d(xi, w, Some(b), ConvSpec::same(3))?;
                let y = tape.relu(y)?;
                let y = tape.sigmoid(y)?;
                mean_loss(tape, y)
            }),
        });
    }

    // gelu
    {
        let x = Tensor::<T>::rand_uniform(&[6, 4], &mut rng, -1.0, 1.0);
        let mut store = ParameterStore::new();
        store.insert("w", Tensor::rand_uniform(&[4, 5], &mut rng, -0.7, 0.7));
        cases.push(GradCheckCase {
            name: "gelu",
            store,
            builder: Box::new(move |tape, store| {
                let xi = tape.leaf(x.clone());
                let w = tape.param("w", store.get("w")?.clone());
                let y = tape.matmul(xi, w)?;
                let y = tape.gelu(y)?;
                mean_loss(tape, y)
            }),
        });
    }

    // sigmoid
    {
        let mut store = ParameterStore::new();
        store.insert("x", Tensor::<T>::rand_uniform(&[10], &mut rng, -2.0, 2.0));
        cases.push(GradCheckCase {
            name: "sigmoid",
            store,
            builder: Box::new(move |tape, store| {
                let x = tape.param("x", store.get("x")?.clone());
                let y = tape.sigmoid(x)?;
                mean_loss(tape, y)
            }),
        });
    }

    // softmax weighted by a fixed mixing tensor
    {
        let mix = Tensor::<T>::rand_uniform(&[3, 6], &mut rng, -1.0, 1.0);
        let mut store = ParameterStore::new();
        store.insert("x", Tensor::<T>::rand_uniform(&[3, 6], &mut rng, -1.5, 1.5));
        cases.push(GradCheckCase {
            name: "softmax",
            store,
            builder: Box::new(move |tape, store| {
                let x = tape.param("x", store.get("x")?.clone());
                let s = tape.softmax_lastdim(x)?;
                let m = tape.leaf(mix.clone());
                let y = tape.mul(s, m)?;
                mean_loss(tape, y)
            }),
        });
    }

    // matmul, both operands trainable
    {
        let mut store = ParameterStore::new();
        store.insert("a", Tensor::<T>::rand_uniform(&[3, 4], &mut rng, -1.0, 1.0));
        store.insert("b", Tensor::<T>::rand_uniform(&[4, 5], &mut rng, -1.0, 1.0));
        cases.push(GradCheckCase {
            name: "matmul",
            store,
            builder: Box::new(move |tape, store| {
                let a = tape.param("a", store.get("a")?.clone());
                let b = tape.param("b", store.get("b")?.clone());
                let y = tape.matmul(a, b)?;
                let y = tape.sigmoid(y)?;
                mean_loss(tape, y)
            }),
        });
    }

    // batched attention arithmetic: bmm_nt, softmax, bmm_nn
    {
        let mut store = ParameterStore::new();
        store.insert("q", Tensor::<T>::rand_uniform(&[2, 4, 3], &mut rng, -1.0, 1.0));
        store.insert("k", Tensor::<T>::rand_uniform(&[2, 4, 3], &mut rng, -1.0, 1.0));
        store.insert("v", Tensor::<T>::rand_uniform(&[2, 4, 3], &mut rng, -1.0, 1.0));
        cases.push(GradCheckCase {
            name: "bmm-attention",
            store,
            builder: Box::new(move |tape, store| {
                let q = tape.param("q", store.get("q")?.clone());
                let k = tape.param("k", store.get("k")?.clone());
                let v = tape.param("v", store.get("v")?.clone());
                let scores = tape.bmm_nt(q, k)?;
                let scores = tape.scale(scores, T::from_f64(1.0 / 3.0f64.sqrt()))?;
                let attn = tape.softmax_lastdim(scores)?;
                let y = tape.bmm_nn(attn, v)?;
                let y = tape.sigmoid(y)?;
                mean_loss(tape, y)
            }),
        });
    }

    // windowed pooling (avg with padding, max without)
    {
        let x = Tensor::<T>::rand_uniform(&[1, 2, 6, 6], &mut rng, -1.0, 1.0);
        let mut store = ParameterStore::new();
        store.insert("w", Tensor::rand_uniform(&[2, 2, 1, 1], &mut rng, -0.8, 0.8));
        cases.push(GradCheckCase {
            name: "pool2d",
            store,
            builder: Box::new(move |tape, store| {
                let xi = tape.leaf(x.clone());
                let w = tape.param("w", store.get("w")?.clone());
                let y = tape.conv2d(xi, w, None, ConvSpec::unit(1))?;
                let a = tape.avg_pool(y, (3, 3), (1, 1), (1, 1))?;
                let m = tape.max_pool(y, (2, 2), (2, 2))?;
                let la = mean_loss(tape, a)?;
                let lm = mean_loss(tape, m)?;
                tape.add(la, lm)
            }),
        });
    }

    // global pools
    {
        let x = Tensor::<T>::rand_uniform(&[2, 3, 5, 5], &mut rng, -1.0, 1.0);
        let mut store = ParameterStore::new();
        store.insert("w", Tensor::rand_uniform(&[3, 3, 1, 1], &mut rng, -0.8, 0.8));
        cases.push(GradCheckCase {
            name: "global-pools",
            store,
            builder: Box::new(move |tape, store| {
                let xi = tape.leaf(x.clone());
                let w = tape.param("w", store.get("w")?.clone());
                let y = tape.conv2d(xi, w, None, ConvSpec::unit(1))?;
                let gap = tape.global_avg_pool(y)?;
                let gmp = tape.global_max_pool(y)?;
                let s = tape.add(gap, gmp)?;
                let s = tape.sigmoid(s)?;
                mean_loss(tape, s)
            }),
        });
    }

    // channel-wise statistics
    {
        let x = Tensor::<T>::rand_uniform(&[1, 4, 4, 4], &mut rng, -1.0, 1.0);
        let mut store = ParameterStore::new();
        store.insert("w", Tensor::rand_uniform(&[4, 4, 1, 1], &mut rng, -0.8, 0.8));
        cases.push(GradCheckCase {
            name: "channel-stats",
            store,
            builder: Box::new(move |tape, store| {
                let xi = tape.leaf(x.clone());
                let w = tape.param("w", store.get("w")?.clone());
                let y = tape.conv2d(xi, w, None, ConvSpec::unit(1))?;
                let mean = tape.channel_mean(y)?;
                let maxc = tape.channel_max(y)?;
                let cat = tape.concat_channels(&[mean, maxc])?;
                let cat = tape.sigmoid(cat)?;
                mean_loss(tape, cat)
            }),
        });
    }

    // bilinear resize, up and down
    {
        let x = Tensor::<T>::rand_uniform(&[1, 2, 5, 5], &mut rng, -1.0, 1.0);
        let mut store = ParameterStore::new();
        store.insert("w", Tensor::rand_uniform(&[2, 2, 1, 1], &mut rng, -0.8, 0.8));
        cases.push(GradCheckCase {
            name: "bilinear-resize",
            store,
            builder: Box::new(move |tape, store| {
                let xi = tape.leaf(x.clone());
                let w = tape.param("w", store.get("w")?.clone());
                let y = tape.conv2d(xi, w, None, ConvSpec::unit(1))?;
                let up = tape.bilinear_resize(y, 9, 9)?;
                let down = tape.bilinear_resize(y, 3, 3)?;
                let lu = mean_loss(tape, up)?;
                let ld = mean_loss(tape, down)?;
                tape.add(lu, ld)
            }),
        });
    }

    // broadcast add/mul, slicing, permute/reshape
    {
        let x = Tensor::<T>::rand_uniform(&[2, 3, 4, 4], &mut rng, -1.0, 1.0);
        let mut store = ParameterStore::new();
        store.insert("cg", Tensor::rand_uniform(&[1, 3, 1, 1], &mut rng, -1.0, 1.0));
        store.insert("sb", Tensor::rand_uniform(&[1, 1, 4, 4], &mut rng, -1.0, 1.0));
        cases.push(GradCheckCase {
            name: "broadcast-layout",
            store,
            builder: Box::new(move |tape, store| {
                let xi = tape.leaf(x.clone());
                let cg = tape.param("cg", store.get("cg")?.clone());
                let sb = tape.param("sb", store.get("sb")?.clone());
                let y = tape.mul_bc(xi, cg)?;
                let y = tape.add_bc(y, sb)?;
                let p = tape.permute(y, &[0, 2, 3, 1])?;
                let r = tape.reshape(p, &[2, 16, 3])?;
                let s = tape.slice_lastdim(r, 1, 2)?;
                let s = tape.sigmoid(s)?;
                mean_loss(tape, s)
            }),
        });
    }

    // the fused loss itself
    {
        let mut rr = Rng::new(seed ^ 0xBEEF);
        let target = Tensor::<T>::from_fn(&[1, 1, 8, 8], |_| {
            if rr.next_f64() < 0.4 {
                T::ONE
            } else {
                T::ZERO
            }
        });
        let weight = crate::loss::boundary_weight(&target, 5.0, 15)?;
        let mut store = ParameterStore::new();
        store.insert("logits", Tensor::<T>::rand_uniform(&[1, 1, 8, 8], &mut rng, -2.0, 2.0));
        cases.push(GradCheckCase {
            name: "weighted-bce-iou",
            store,
            builder: Box::new(move |tape, store| {
                let l = tape.param("logits", store.get("logits")?.clone());
                tape.weighted_bce_iou(l, &target, &weight, 1.0)
            }),
        });
    }

    Ok(cases)
}

/// Nudges every trainable parameter off its exact init. Fresh stores put
/// batch-norm shifts and biases at exactly 0, where downstream ReLUs sit
/// on their corner; central differences there measure the half-slope and
/// disagree with the subgradient convention. Checking at a generic point
/// avoids that measure-zero artifact without touching the gradients under
/// test.
pub fn jitter_store<T: Real>(store: &mut ParameterStore<T>, seed: u64, amplitude: f64) {
    let mut rng = Rng::new(seed ^ 0x7177E2);
    for name in store.trainable_names() {
        let t = store.get_mut(&name).expect("trainable name");
        for v in t.data_mut() {
            *v += T::from_f64(rng.uniform(-amplitude, amplitude));
        }
    }
}

/// Block- and model-level cases (run at the f64 profile).
pub fn block_cases<T: Real>(seed: u64) -> Result<Vec<GradCheckCase<T>>> {
    use crate::blocks::MbfpMode;
    use crate::nn::Ctx;
    let mut rng = Rng::new(seed ^ 0x51DE);
    let mut cases: Vec<GradCheckCase<T>> = Vec::new();

    // single LConv + GAP loss
    {
        let x = Tensor::<T>::rand_uniform(&[1, 4, 6, 6], &mut rng, -1.0, 1.0);
        let mut store = ParameterStore::new();
        let mut r = Rng::new(seed ^ 0x11);
        crate::nn::init_lconv(&mut store, &mut r, "lc", 4, 6, 3);
        jitter_store(&mut store, seed ^ 0x21, 0.03);
        cases.push(GradCheckCase {
            name: "lconv-gap",
            store,
            builder: Box::new(move |tape, store| {
                let mut ctx = Ctx::new(store, true);
                let xi = tape.leaf(x.clone());
                let y = crate::nn::lconv(tape, &mut ctx, "lc", xi, 3)?;
                let g = tape.global_avg_pool(y)?;
                let g = tape.sigmoid(g)?;
                mean_loss(tape, g)
            }),
        });
    }

    // multi-branch feature processor
    {
        let mode = MbfpMode {
            multi_branch: true,
            ultrasound_specific: true,
        };
        let x = Tensor::<T>::rand_uniform(&[1, 4, 6, 6], &mut rng, -1.0, 1.0);
        let mut store = ParameterStore::new();
        let mut r = Rng::new(seed ^ 0x12);
        crate::blocks::init_mbfp(&mut store, &mut r, "m", 4, 6, mode);
        jitter_store(&mut store, seed ^ 0x22, 0.03);
        cases.push(GradCheckCase {
            name: "mbfp",
            store,
            builder: Box::new(move |tape, store| {
                let mut ctx = Ctx::new(store, true);
                let xi = tape.leaf(x.clone());
                let out = crate::blocks::mbfp(tape, &mut ctx, "m", xi, mode, 0.1)?;
                let g = tape.global_avg_pool(out.out)?;
                let g = tape.sigmoid(g)?;
                mean_loss(tape, g)
            }),
        });
    }

    // channel/spatial attention
    {
        let x = Tensor::<T>::rand_uniform(&[1, 6, 5, 5], &mut rng, -1.0, 1.0);
        let mut store = ParameterStore::new();
        let mut r = Rng::new(seed ^ 0x13);
        crate::blocks::init_eca(&mut store, &mut r, "e", 6);
        cases.push(GradCheckCase {
            name: "eca",
            store,
            builder: Box::new(move |tape, store| {
                let mut ctx = Ctx::new(store, true);
                let xi = tape.leaf(x.clone());
                let y = crate::blocks::eca(tape, &mut ctx, "e", xi)?;
                mean_loss(tape, y)
            }),
        });
    }

    // edge-aware attention
    {
        let x = Tensor::<T>::rand_uniform(&[1, 6, 5, 5], &mut rng, -1.0, 1.0);
        let mut store = ParameterStore::new();
        let mut r = Rng::new(seed ^ 0x14);
        crate::blocks::init_eaa(&mut store, &mut r, "a", 6);
        cases.push(GradCheckCase {
            name: "eaa",
            store,
            builder: Box::new(move |tape, store| {
                let mut ctx = Ctx::new(store, true);
                let xi = tape.leaf(x.clone());
                let y = crate::blocks::eaa(tape, &mut ctx, "a", xi, 0.1, true)?;
                mean_loss(tape, y)
            }),
        });
    }

    // spatial-reduction attention block
    {
        let x = Tensor::<T>::rand_uniform(&[1, 16, 8], &mut rng, -1.0, 1.0);
        let mut store = ParameterStore::new();
        let mut r = Rng::new(seed ^ 0x15);
        crate::nn::init_linear(&mut store, &mut r, "at.q", 8, 8);
        crate::nn::init_linear(&mut store, &mut r, "at.kv", 8, 16);
        crate::nn::init_linear(&mut store, &mut r, "at.proj", 8, 8);
        store.insert("at.sr.w", crate::params::init_conv_kaiming(&mut r, &[8, 8, 2, 2]));
        store.insert("at.sr.b", Tensor::zeros(&[8]));
        crate::nn::init_layernorm(&mut store, "at.srnorm", 8);
        cases.push(GradCheckCase {
            name: "sra-attention",
            store,
            builder: Box::new(move |tape, store| {
                let mut ctx = Ctx::new(store, true);
                let xi = tape.leaf(x.clone());
                let y = crate::encoder::sra_attention(tape, &mut ctx, "at", xi, 4, 4, 2, 2)?;
                let y = tape.sigmoid(y)?;
                mean_loss(tape, y)
            }),
        });
    }

    Ok(cases)
}

/// The assembled desk-scale network loss (run at the f64 profile on a
/// small input, sampling a handful of parameter elements).
pub fn assembled_case<T: Real>(seed: u64) -> Result<GradCheckCase<T>> {
    use crate::nn::Ctx;
    let cfg = crate::model::ModelConfig {
        input_size: 32,
        encoder: crate::encoder::EncoderConfig::tiny(),
        ..crate::model::ModelConfig::default()
    };
    let mut store = crate::model::init_params::<T>(&cfg, seed ^ 0x16)?;
    jitter_store(&mut store, seed, 0.03);
    let fixture = crate::io::fixture::synth_fixture::<T>(crate::io::fixture::FixtureKind::Disk, 32, seed)?;
    let input = crate::io::image::standardize(&fixture.image).reshape(&[1, 3, 32, 32])?;
    let gt = fixture.mask.reshape(&[1, 1, 32, 32])?;
    let loss_cfg = crate::loss::LossConfig::default();
    Ok(GradCheckCase {
        name: "assembled-tiny-loss",
        store,
        builder: Box::new(move |tape, store| {
            let mut ctx = Ctx::new(store, true);
            let x = tape.leaf(input.clone());
            let preds = crate::model::useanet_forward(tape, &mut ctx, x, &cfg)?;
            crate::loss::total_loss(tape, &preds, &gt, &loss_cfg)
        }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;


    #[test]
    fn quadratic_gradient_is_2x() {
        // ||x||^2 has gradient 2x; analytic vs finite differences agree to 1e-7
        let mut store = ParameterStore::<f64>::new();
        let mut rng = Rng::new(3);
        store.insert("x", Tensor::rand_uniform(&[6], &mut rng, -1.0, 1.0));
        let builder = |tape: &mut Tape<f64>, store: &ParameterStore<f64>| {
            let x = tape.param("x", store.get("x")?.clone());
            let sq = tape.mul(x, x)?;
            tape.sum_all(sq)
        };
        let report = check_case("quadratic", &store, &builder, &GradCheckSettings::f64_mode(), 1).unwrap();
        assert!(report.pass, "{report:?}");
        assert!(report.max_rel <= 1e-7);

        let mut tape = Tape::<f64>::new(true);
        let x = tape.param("x", store.get("x").unwrap().clone());
        let sq = tape.mul(x, x).unwrap();
        let loss = tape.sum_all(sq).unwrap();
        let grads = tape.backward(loss).unwrap();
        let g = grads.by_id(x).unwrap();
        for (gv, xv) in g.data().iter().zip(store.get("x").unwrap().data()) {
            assert!((gv - 2.0 * xv).abs() < 1e-12);
        }
    }

    #[test]
    fn nondeterministic_builder_detected() {
        use std::cell::Cell;
        let counter = Cell::new(0.0f64);
        let mut store = ParameterStore::<f64>::new();
        store.insert("x", Tensor::scalar(1.0));
        let builder = move |tape: &mut Tape<f64>, store: &ParameterStore<f64>| {
            counter.set(counter.get() + 1.0);
            let x = tape.param("x", store.get("x")?.clone());
            let noise = tape.leaf(Tensor::scalar(counter.get()));
            let y = tape.mul(x, noise)?;
            tape.sum_all(y)
        };
        let err = check_case("nondet", &store, &builder, &GradCheckSettings::f64_mode(), 1);
        assert!(matches!(err, Err(Error::Contract(_))));
    }
}
