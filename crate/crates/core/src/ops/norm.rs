//! Batch normalization (NCHW, per-channel) and layer normalization
//! (token maps, over the last dimension).

use crate::error::{shape_err, Error, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Forward result: output, saved context, and the updated running
/// statistics when training.
pub type BnForward<T> = (Tensor<T>, BnSaved<T>, Option<(Tensor<T>, Tensor<T>)>);

/// Saved forward context reused by the backward pass.
#[derive(Clone, Debug)]
pub struct BnSaved<T> {
    pub mean: Vec<T>,
    pub inv_std: Vec<T>,
    pub training: bool,
}

/// Batch-norm forward.
///
/// Training mode normalizes with batch statistics (biased variance) and
/// returns updated running statistics
/// `running' = (1 - momentum) * running + momentum * batch`; inference
/// mode uses the stored running statistics and returns `None`.
#[allow(clippy::too_many_arguments, clippy::needless_range_loop)]
pub fn batchnorm2d<T: Real>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running_mean: &Tensor<T>,
    running_var: &Tensor<T>,
    training: bool,
    momentum: f64,
    eps: f64,
) -> Result<BnForward<T>> {
    let (n, c, h, w) = input.dims4()?;
    for (name, t) in [("gamma", gamma), ("beta", beta), ("running_mean", running_mean), ("running_var", running_var)] {
        if t.shape() != [c] {
            return Err(shape_err("batchnorm2d", format!("{name} shape {:?} vs C={c}", t.shape())));
        }
    }
    let x = input.data();
    let count = (n * h * w) as f64;
    let eps_t = T::from_f64(eps);

    let (mean, var): (Vec<T>, Vec<T>) = if training {
        let mut mean = vec![T::ZERO; c];
        let mut var = vec![T::ZERO; c];
        for cc in 0..c {
            let mut acc = T::ZERO;
            for nn in 0..n {
                let base = (nn * c + cc) * h * w;
                for i in 0..h * w {
                    acc += x[base + i];
                }
            }
            mean[cc] = acc / T::from_f64(count);
        }
        for cc in 0..c {
            let m = mean[cc];
            let mut acc = T::ZERO;
            for nn in 0..n {
                let base = (nn * c + cc) * h * w;
                for i in 0..h * w {
                    let d = x[base + i] - m;
                    acc += d * d;
                }
            }
            var[cc] = acc / T::from_f64(count);
        }
        (mean, var)
    } else {
        (running_mean.data().to_vec(), running_var.data().to_vec())
    };

    let inv_std: Vec<T> = var.iter().map(|&v| T::ONE / (v + eps_t).sqrt()).collect();
    let g = gamma.data();
    let b = beta.data();
    let mut out = vec![T::ZERO; x.len()];
    for nn in 0..n {
        for cc in 0..c {
            let base = (nn * c + cc) * h * w;
            let (m, is, gg, bb) = (mean[cc], inv_std[cc], g[cc], b[cc]);
            for i in 0..h * w {
                out[base + i] = (x[base + i] - m) * is * gg + bb;
            }
        }
    }
    let out = Tensor::new(input.shape().to_vec(), out)?;
    out.validate_finite("batchnorm2d")?;

    let updates = if training {
        let mom = T::from_f64(momentum);
        let keep = T::from_f64(1.0 - momentum);
        let new_mean = Tensor::new(
            vec![c],
            running_mean
                .data()
                .iter()
                .zip(mean.iter())
                .map(|(&r, &m)| r * keep + m * mom)
                .collect(),
        )?;
        let new_var = Tensor::new(
            vec![c],
            running_var
                .data()
                .iter()
                .zip(var.iter())
                .map(|(&r, &v)| r * keep + v * mom)
                .collect(),
        )?;
        Some((new_mean, new_var))
    } else {
        None
    };

    Ok((out, BnSaved { mean, inv_std, training }, updates))
}

/// Batch-norm backward. In training mode differentiates through the batch
/// statistics (full formula); in inference mode the statistics are frozen
/// constants. Returns `(d_input, d_gamma, d_beta)`.
pub fn batchnorm2d_backward<T: Real>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    saved: &BnSaved<T>,
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let (n, c, h, w) = input.dims4()?;
    let x = input.data();
    let go = grad_out.data();
    let g = gamma.data();
    let count = T::from_f64((n * h * w) as f64);

    let mut d_gamma = vec![T::ZERO; c];
    let mut d_beta = vec![T::ZERO; c];
    let mut dx = vec![T::ZERO; x.len()];

    for cc in 0..c {
        let m = saved.mean[cc];
        let is = saved.inv_std[cc];
        let mut sum_g = T::ZERO;
        let mut sum_gx = T::ZERO;
        for nn in 0..n {
            let base = (nn * c + cc) * h * w;
            for i in 0..h * w {
                let xhat = (x[base + i] - m) * is;
                sum_g += go[base + i];
                sum_gx += go[base + i] * xhat;
            }
        }
        d_gamma[cc] = sum_gx;
        d_beta[cc] = sum_g;
        let scale = g[cc] * is;
        if saved.training {
            let mean_g = sum_g / count;
            let mean_gx = sum_gx / count;
            for nn in 0..n {
                let base = (nn * c + cc) * h * w;
                for i in 0..h * w {
                    let xhat = (x[base + i] - m) * is;
                    dx[base + i] = scale * (go[base + i] - mean_g - xhat * mean_gx);
                }
            }
        } else {
            for nn in 0..n {
                let base = (nn * c + cc) * h * w;
                for i in 0..h * w {
                    dx[base + i] = scale * go[base + i];
                }
            }
        }
    }

    Ok((
        Tensor::new(input.shape().to_vec(), dx)?,
        Tensor::new(vec![c], d_gamma)?,
        Tensor::new(vec![c], d_beta)?,
    ))
}

/// Layer norm over the last dimension of a rank-2/3 tensor (token maps are
/// `[N, L, C]`). Returns the output and `(mean, inv_std)` per row.
pub fn layernorm<T: Real>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    eps: f64,
) -> Result<(Tensor<T>, Vec<T>, Vec<T>)> {
    let shape = input.shape();
    let feat = *shape.last().expect("non-empty shape");
    if gamma.shape() != [feat] || beta.shape() != [feat] {
        return Err(shape_err(
            "layernorm",
            format!("gamma/beta {:?}/{:?} vs features {feat}", gamma.shape(), beta.shape()),
        ));
    }
    let rows = input.numel() / feat;
    let x = input.data();
    let g = gamma.data();
    let b = beta.data();
    let eps_t = T::from_f64(eps);
    let feat_t = T::from_f64(feat as f64);
    let mut out = vec![T::ZERO; x.len()];
    let mut means = Vec::with_capacity(rows);
    let mut inv_stds = Vec::with_capacity(rows);
    for r in 0..rows {
        let base = r * feat;
        let mut acc = T::ZERO;
        for i in 0..feat {
            acc += x[base + i];
        }
        let mean = acc / feat_t;
        let mut vacc = T::ZERO;
        for i in 0..feat {
            let d = x[base + i] - mean;
            vacc += d * d;
        }
        let inv_std = T::ONE / (vacc / feat_t + eps_t).sqrt();
        for i in 0..feat {
            out[base + i] = (x[base + i] - mean) * inv_std * g[i] + b[i];
        }
        means.push(mean);
        inv_stds.push(inv_std);
    }
    let out = Tensor::new(shape.to_vec(), out)?;
    out.validate_finite("layernorm")?;
    Ok((out, means, inv_stds))
}

/// Layer-norm backward; returns `(d_input, d_gamma, d_beta)`.
pub fn layernorm_backward<T: Real>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    mean: &[T],
    inv_std: &[T],
    grad_out: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>, Tensor<T>)> {
    let feat = *input.shape().last().expect("non-empty shape");
    let rows = input.numel() / feat;
    let x = input.data();
    let go = grad_out.data();
    let g = gamma.data();
    let feat_t = T::from_f64(feat as f64);

    let mut dx = vec![T::ZERO; x.len()];
    let mut d_gamma = vec![T::ZERO; feat];
    let mut d_beta = vec![T::ZERO; feat];
    for r in 0..rows {
        let base = r * feat;
        let (m, is) = (mean[r], inv_std[r]);
        let mut sum_gh = T::ZERO;
        let mut sum_gh_xhat = T::ZERO;
        for i in 0..feat {
            let xhat = (x[base + i] - m) * is;
            let gh = go[base + i] * g[i];
            sum_gh += gh;
            sum_gh_xhat += gh * xhat;
            d_gamma[i] += go[base + i] * xhat;
            d_beta[i] += go[base + i];
        }
        let mean_gh = sum_gh / feat_t;
        let mean_gh_xhat = sum_gh_xhat / feat_t;
        for i in 0..feat {
            let xhat = (x[base + i] - m) * is;
            let gh = go[base + i] * g[i];
            dx[base + i] = is * (gh - mean_gh - xhat * mean_gh_xhat);
        }
    }
    Ok((
        Tensor::new(input.shape().to_vec(), dx)?,
        Tensor::new(vec![feat], d_gamma)?,
        Tensor::new(vec![feat], d_beta)?,
    ))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormKind {
    Batch,
    Layer,
}

/// Unified normalization entry point. Batch mode requires running
/// statistics when `training` is false; layer mode ignores them.
#[allow(clippy::too_many_arguments)]
pub fn normalize<T: Real>(
    input: &Tensor<T>,
    kind: NormKind,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running: Option<(&Tensor<T>, &Tensor<T>)>,
    training: bool,
    momentum: f64,
    eps: f64,
) -> Result<Tensor<T>> {
    match kind {
        NormKind::Layer => Ok(layernorm(input, gamma, beta, eps)?.0),
        NormKind::Batch => {
            let (rm, rv) = match running {
                Some(pair) => pair,
                None if training => {
                    let c = input.dims4()?.1;
                    let zero = Tensor::zeros(&[c]);
                    let one = Tensor::full(&[c], T::ONE);
                    return Ok(batchnorm2d(input, gamma, beta, &zero, &one, true, momentum, eps)?.0);
                }
                None => {
                    return Err(Error::Config(
                        "batch norm in inference mode requires running statistics".into(),
                    ))
                }
            };
            Ok(batchnorm2d(input, gamma, beta, rm, rv, training, momentum, eps)?.0)
        }
    }
}
