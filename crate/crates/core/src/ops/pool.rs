//! Spatial pooling: windowed avg/max, global avg/max, channel-wise
//! reductions for spatial attention.

use crate::error::{spec_err, Result};
use crate::scalar::Real;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PoolMode {
    Avg,
    Max,
}

/// Windowed pooling over NCHW. Average pooling divides by the full window
/// area even where zero padding overlaps the border (the convention the
/// boundary-weight map relies on); max pooling accepts no padding.
pub fn pool2d<T: Real>(
    input: &Tensor<T>,
    mode: PoolMode,
    window: (usize, usize),
    stride: (usize, usize),
    padding: (usize, usize),
) -> Result<Tensor<T>> {
    let out = pool2d_impl(input, mode, window, stride, padding)?.0;
    out.validate_finite("pool2d")?;
    Ok(out)
}

/// Same as [`pool2d`] but also returns, for max mode, the flat input index
/// of the (first, in scan order) maximal element per output cell.
pub(crate) fn pool2d_impl<T: Real>(
    input: &Tensor<T>,
    mode: PoolMode,
    window: (usize, usize),
    stride: (usize, usize),
    padding: (usize, usize),
) -> Result<(Tensor<T>, Vec<usize>)> {
    let (n, c, h, w) = input.dims4()?;
    let (kh, kw) = window;
    let (sh, sw) = stride;
    let (ph, pw) = padding;
    if kh == 0 || kw == 0 || sh == 0 || sw == 0 {
        return Err(spec_err("pool2d", "zero window or stride"));
    }
    if mode == PoolMode::Max && (ph > 0 || pw > 0) {
        return Err(spec_err("pool2d", "max pooling does not support padding"));
    }
    if h + 2 * ph < kh || w + 2 * pw < kw {
        return Err(spec_err(
            "pool2d",
            format!("window {kh}x{kw} larger than padded input {}x{}", h + 2 * ph, w + 2 * pw),
        ));
    }
    let out_h = (h + 2 * ph - kh) / sh + 1;
    let out_w = (w + 2 * pw - kw) / sw + 1;
    let x = input.data();
    let mut out = Vec::with_capacity(n * c * out_h * out_w);
    let mut argmax = Vec::new();
    if mode == PoolMode::Max {
        argmax.reserve(n * c * out_h * out_w);
    }
    let area = T::from_f64((kh * kw) as f64);
    for plane_idx in 0..n * c {
        let base = plane_idx * h * w;
        for oy in 0..out_h {
            let iy0 = (oy * sh) as isize - ph as isize;
            for ox in 0..out_w {
                let ix0 = (ox * sw) as isize - pw as isize;
                match mode {
                    PoolMode::Avg => {
                        let mut acc = T::ZERO;
                        for ky in 0..kh {
                            let iy = iy0 + ky as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..kw {
                                let ix = ix0 + kx as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                acc += x[base + iy as usize * w + ix as usize];
                            }
                        }
                        out.push(acc / area);
                    }
                    PoolMode::Max => {
                        let mut best = None::<(T, usize)>;
                        for ky in 0..kh {
                            let iy = (iy0 + ky as isize) as usize;
                            for kx in 0..kw {
                                let ix = (ix0 + kx as isize) as usize;
                                let idx = base + iy * w + ix;
                                let v = x[idx];
                                // strict > keeps the first maximum in scan order
                                if best.is_none_or(|(bv, _)| v > bv) {
                                    best = Some((v, idx));
                                }
                            }
                        }
                        let (v, idx) = best.expect("window is non-empty");
                        out.push(v);
                        argmax.push(idx);
                    }
                }
            }
        }
    }
    Ok((Tensor::new(vec![n, c, out_h, out_w], out)?, argmax))
}

/// Global average pooling to `[N, C, 1, 1]`.
pub fn global_avg_pool<T: Real>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = input.dims4()?;
    let x = input.data();
    let area = T::from_f64((h * w) as f64);
    let mut out = Vec::with_capacity(n * c);
    for plane_idx in 0..n * c {
        let base = plane_idx * h * w;
        let mut acc = T::ZERO;
        for i in 0..h * w {
            acc += x[base + i];
        }
        out.push(acc / area);
    }
    let out = Tensor::new(vec![n, c, 1, 1], out)?;
    out.validate_finite("global_avg_pool")?;
    Ok(out)
}

/// Global max pooling to `[N, C, 1, 1]`; also returns flat argmax indices.
pub fn global_max_pool<T: Real>(input: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let (n, c, h, w) = input.dims4()?;
    let x = input.data();
    let mut out = Vec::with_capacity(n * c);
    let mut argmax = Vec::with_capacity(n * c);
    for plane_idx in 0..n * c {
        let base = plane_idx * h * w;
        let mut bv = x[base];
        let mut bi = base;
        for i in 1..h * w {
            let v = x[base + i];
            if v > bv {
                bv = v;
                bi = base + i;
            }
        }
        out.push(bv);
        argmax.push(bi);
    }
    let out = Tensor::new(vec![n, c, 1, 1], out)?;
    out.validate_finite("global_max_pool")?;
    Ok((out, argmax))
}

/// Mean over the channel dimension -> `[N, 1, H, W]`.
pub fn channel_mean<T: Real>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = input.dims4()?;
    let x = input.data();
    let denom = T::from_f64(c as f64);
    let mut out = vec![T::ZERO; n * h * w];
    for nn in 0..n {
        for cc in 0..c {
            let base = (nn * c + cc) * h * w;
            let ob = nn * h * w;
            for i in 0..h * w {
                out[ob + i] += x[base + i];
            }
        }
    }
    for v in &mut out {
        *v = *v / denom;
    }
    let out = Tensor::new(vec![n, 1, h, w], out)?;
    out.validate_finite("channel_mean")?;
    Ok(out)
}

/// Max over the channel dimension -> `[N, 1, H, W]`; returns argmax channel
/// per position (first maximal channel wins).
pub fn channel_max<T: Real>(input: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let (n, c, h, w) = input.dims4()?;
    let x = input.data();
    let mut out = Vec::with_capacity(n * h * w);
    let mut arg = Vec::with_capacity(n * h * w);
    for nn in 0..n {
        for i in 0..h * w {
            let mut bv = x[(nn * c) * h * w + i];
            let mut bc = 0usize;
            for cc in 1..c {
                let v = x[(nn * c + cc) * h * w + i];
                if v > bv {
                    bv = v;
                    bc = cc;
                }
            }
            out.push(bv);
            arg.push(bc);
        }
    }
    let out = Tensor::new(vec![n, 1, h, w], out)?;
    out.validate_finite("channel_max")?;
    Ok((out, arg))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gap_is_arithmetic_mean() {
        let x = Tensor::<f32>::new(vec![1, 1, 2, 2], vec![1.0, 3.0, 5.0, 7.0]).unwrap();
        let y = global_avg_pool(&x).unwrap();
        assert_eq!(y.data(), &[4.0]);
    }

    #[test]
    fn gmp_of_constant_is_constant() {
        let x = Tensor::<f32>::full(&[2, 3, 4, 5], 2.5);
        let (y, _) = global_max_pool(&x).unwrap();
        assert_eq!(y.shape(), &[2, 3, 1, 1]);
        assert!(y.data().iter().all(|&v| v == 2.5));
    }

    #[test]
    fn oversized_window_rejected() {
        let x = Tensor::<f32>::full(&[1, 1, 3, 3], 1.0);
        assert!(pool2d(&x, PoolMode::Max, (4, 4), (1, 1), (0, 0)).is_err());
    }

    #[test]
    fn max_pool_tie_takes_first_in_scan_order() {
        let x = Tensor::<f32>::new(vec![1, 1, 2, 2], vec![3.0, 3.0, 1.0, 3.0]).unwrap();
        let (y, arg) = pool2d_impl(&x, PoolMode::Max, (2, 2), (1, 1), (0, 0)).unwrap();
        assert_eq!(y.data(), &[3.0]);
        assert_eq!(arg, vec![0]);
    }

    #[test]
    fn avg_pool_counts_zero_padding() {
        let x = Tensor::<f32>::full(&[1, 1, 1, 1], 4.0);
        let y = pool2d(&x, PoolMode::Avg, (3, 3), (1, 1), (1, 1)).unwrap();
        assert_eq!(y.data(), &[4.0 / 9.0]);
    }
}
