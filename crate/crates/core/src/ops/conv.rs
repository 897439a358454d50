//! 2-D cross-correlation kernels (standard, grouped, depthwise) and the
//! fixed Laplacian stencil used by the edge-aware paths.

use crate::error::{shape_err, spec_err, Result};
use crate::parallel::for_each_chunk_mut;
use crate::scalar::Real;
use crate::tensor::Tensor;

/// Convolution geometry. `groups == C_in` realizes depthwise mode.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub padding: (usize, usize),
    pub groups: usize,
}

impl ConvSpec {
    pub fn unit(kernel: usize) -> Self {
        ConvSpec {
            kernel: (kernel, kernel),
            stride: (1, 1),
            padding: (0, 0),
            groups: 1,
        }
    }

    pub fn same(kernel: usize) -> Self {
        ConvSpec {
            kernel: (kernel, kernel),
            stride: (1, 1),
            padding: ((kernel - 1) / 2, (kernel - 1) / 2),
            groups: 1,
        }
    }

    pub fn with_groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = (stride, stride);
        self
    }

    pub fn with_padding(mut self, padding: usize) -> Self {
        self.padding = (padding, padding);
        self
    }

    /// Output extents: floor((in + 2p - k)/s) + 1; both must be positive.
    pub fn out_extents(&self, in_h: usize, in_w: usize) -> Result<(usize, usize)> {
        let (kh, kw) = self.kernel;
        let (sh, sw) = self.stride;
        let (ph, pw) = self.padding;
        if kh == 0 || kw == 0 || sh == 0 || sw == 0 || self.groups == 0 {
            return Err(spec_err("conv2d", format!("degenerate spec {self:?}")));
        }
        let padded_h = in_h + 2 * ph;
        let padded_w = in_w + 2 * pw;
        if padded_h < kh || padded_w < kw {
            return Err(spec_err(
                "conv2d",
                format!("kernel {kh}x{kw} exceeds padded input {padded_h}x{padded_w}"),
            ));
        }
        Ok(((padded_h - kh) / sh + 1, (padded_w - kw) / sw + 1))
    }
}

/// Cross-correlation (no kernel flip), NCHW layout.
///
/// `weight` is `[C_out, C_in/groups, kh, kw]`; `bias` is `[C_out]`.
pub fn conv2d<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    let (n, c_in, in_h, in_w) = input.dims4()?;
    let [c_out, c_in_g, kh, kw] = weight.shape() else {
        return Err(shape_err("conv2d", format!("weight rank {:?}", weight.shape())));
    };
    let (c_out, c_in_g, kh, kw) = (*c_out, *c_in_g, *kh, *kw);
    if (kh, kw) != spec.kernel {
        return Err(shape_err(
            "conv2d",
            format!("weight kernel {kh}x{kw} vs spec {:?}", spec.kernel),
        ));
    }
    let groups = spec.groups;
    if c_in % groups != 0 || c_out % groups != 0 {
        return Err(spec_err(
            "conv2d",
            format!("groups {groups} does not divide channels {c_in}->{c_out}"),
        ));
    }
    if c_in_g != c_in / groups {
        return Err(shape_err(
            "conv2d",
            format!("weight expects {} input channels per group, input has {}", c_in_g, c_in / groups),
        ));
    }
    if let Some(b) = bias {
        if b.shape() != [c_out] {
            return Err(shape_err("conv2d", format!("bias shape {:?} vs C_out {c_out}", b.shape())));
        }
    }
    let (out_h, out_w) = spec.out_extents(in_h, in_w)?;
    let (sh, sw) = spec.stride;
    let (ph, pw) = spec.padding;
    let co_per_g = c_out / groups;

    let x = input.data();
    let w = weight.data();
    let mut out = vec![T::ZERO; n * c_out * out_h * out_w];
    for_each_chunk_mut(&mut out, out_h * out_w, |chunk_idx, plane| {
        let nn = chunk_idx / c_out;
        let co = chunk_idx % c_out;
        let g = co / co_per_g;
        let b = bias.map(|b| b.data()[co]).unwrap_or(T::ZERO);
        for oy in 0..out_h {
            let iy0 = (oy * sh) as isize - ph as isize;
            let ky_lo = (-iy0).max(0) as usize;
            let ky_hi = kh.min((in_h as isize - iy0).max(0) as usize);
            for ox in 0..out_w {
                let ix0 = (ox * sw) as isize - pw as isize;
                let kx_lo = (-ix0).max(0) as usize;
                let kx_hi = kw.min((in_w as isize - ix0).max(0) as usize);
                let mut acc = T::ZERO;
                for cig in 0..c_in_g {
                    let ci = g * c_in_g + cig;
                    let x_base = (nn * c_in + ci) * in_h;
                    let w_base = (co * c_in_g + cig) * kh;
                    for ky in ky_lo..ky_hi {
                        let iy = (iy0 + ky as isize) as usize;
                        let x_row = (x_base + iy) * in_w;
                        let w_row = (w_base + ky) * kw;
                        for kx in kx_lo..kx_hi {
                            let ix = (ix0 + kx as isize) as usize;
                            acc += x[x_row + ix] * w[w_row + kx];
                        }
                    }
                }
                plane[oy * out_w + ox] = acc + b;
            }
        }
    });

    let out = Tensor::new(vec![n, c_out, out_h, out_w], out)?;
    out.validate_finite("conv2d")?;
    Ok(out)
}

/// Depthwise convolution: `weight` is `[C, 1, kh, kw]`, `spec.groups` must
/// equal the input channel count.
pub fn dwconv2d<T: Real>(input: &Tensor<T>, weight: &Tensor<T>, spec: &ConvSpec) -> Result<Tensor<T>> {
    let (_, c_in, _, _) = input.dims4()?;
    if spec.groups != c_in {
        return Err(spec_err(
            "dwconv2d",
            format!("groups {} must equal input channels {c_in}", spec.groups),
        ));
    }
    if weight.shape().first() != Some(&c_in) || weight.shape().get(1) != Some(&1) {
        return Err(shape_err(
            "dwconv2d",
            format!("weight {:?} must be [C,1,kh,kw] with C={c_in}", weight.shape()),
        ));
    }
    conv2d(input, weight, None, spec)
}

/// `(d_input, d_weight, d_bias)` triple from [`conv2d_backward`].
pub type ConvGrads<T> = (Tensor<T>, Tensor<T>, Option<Tensor<T>>);

/// Gradients of [`conv2d`] with respect to input, weight and bias.
///
/// Returns `(d_input, d_weight, d_bias)`; `d_bias` is present iff
/// `has_bias`. Deterministic scatter in output scan order.
pub fn conv2d_backward<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    has_bias: bool,
    spec: &ConvSpec,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let (n, c_in, in_h, in_w) = input.dims4()?;
    let (_, c_out, out_h, out_w) = grad_out.dims4()?;
    let c_in_g = weight.shape()[1];
    let (kh, kw) = spec.kernel;
    let (sh, sw) = spec.stride;
    let (ph, pw) = spec.padding;
    let groups = spec.groups;
    let co_per_g = c_out / groups;

    let x = input.data();
    let w = weight.data();
    let go = grad_out.data();
    let mut dx = vec![T::ZERO; x.len()];
    let mut dw = vec![T::ZERO; w.len()];
    let mut db = vec![T::ZERO; c_out];

    for nn in 0..n {
        for co in 0..c_out {
            let g = co / co_per_g;
            for oy in 0..out_h {
                let iy0 = (oy * sh) as isize - ph as isize;
                for ox in 0..out_w {
                    let ix0 = (ox * sw) as isize - pw as isize;
                    let gv = go[((nn * c_out + co) * out_h + oy) * out_w + ox];
                    db[co] += gv;
                    for cig in 0..c_in_g {
                        let ci = g * c_in_g + cig;
                        for ky in 0..kh {
                            let iy = iy0 + ky as isize;
                            if iy < 0 || iy >= in_h as isize {
                                continue;
                            }
                            for kx in 0..kw {
                                let ix = ix0 + kx as isize;
                                if ix < 0 || ix >= in_w as isize {
                                    continue;
                                }
                                let xi = ((nn * c_in + ci) * in_h + iy as usize) * in_w + ix as usize;
                                let wi = ((co * c_in_g + cig) * kh + ky) * kw + kx;
                                dx[xi] += gv * w[wi];
                                dw[wi] += gv * x[xi];
                            }
                        }
                    }
                }
            }
        }
    }

    let d_input = Tensor::new(input.shape().to_vec(), dx)?;
    let d_weight = Tensor::new(weight.shape().to_vec(), dw)?;
    let d_bias = if has_bias {
        Some(Tensor::new(vec![c_out], db)?)
    } else {
        None
    };
    Ok((d_input, d_weight, d_bias))
}

/// The fixed 8-neighbor Laplacian stencil (center 8, neighbors -1) as a
/// `[1,1,3,3]` tensor. Entries sum to exactly zero.
pub fn laplacian_stencil<T: Real>() -> Tensor<T> {
    let m1 = -T::ONE;
    let eight = T::from_f64(8.0);
    Tensor::new(
        vec![1, 1, 3, 3],
        vec![m1, m1, m1, m1, eight, m1, m1, m1, m1],
    )
    .expect("static stencil")
}

/// Per-channel response to the fixed Laplacian stencil with replicated
/// borders. The accumulation pairs the eight neighbors as
/// `8*c - ((n1+n2)+(n3+n4)) - ((n5+n6)+(n7+n8))`, which cancels exactly in
/// floating point on constant inputs, so the null response is machine
/// exact everywhere including the borders.
pub fn laplacian_response<T: Real>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = input.dims4()?;
    let x = input.data();
    let eight = T::from_f64(8.0);
    let mut out = vec![T::ZERO; x.len()];
    for_each_chunk_mut(&mut out, h * w, |chunk_idx, plane| {
        let base = chunk_idx * h * w;
        let _ = (n, c);
        let clamp = |v: isize, hi: usize| -> usize { v.clamp(0, hi as isize - 1) as usize };
        for y in 0..h {
            for xk in 0..w {
                let at = |dy: isize, dx: isize| -> T {
                    let yy = clamp(y as isize + dy, h);
                    let xx = clamp(xk as isize + dx, w);
                    x[base + yy * w + xx]
                };
                let center = at(0, 0);
                let s1 = (at(-1, -1) + at(-1, 0)) + (at(-1, 1) + at(0, -1));
                let s2 = (at(0, 1) + at(1, -1)) + (at(1, 0) + at(1, 1));
                plane[y * w + xk] = eight * center - s1 - s2;
            }
        }
    });
    let out = Tensor::new(input.shape().to_vec(), out)?;
    out.validate_finite("laplacian")?;
    Ok(out)
}

/// Transpose of [`laplacian_response`]: scatters each output gradient back
/// through the stencil taps (border clamping included).
pub fn laplacian_backward<T: Real>(input_shape: &[usize], grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = grad_out.dims4()?;
    debug_assert_eq!(input_shape, grad_out.shape());
    let go = grad_out.data();
    let eight = T::from_f64(8.0);
    let mut dx = vec![T::ZERO; go.len()];
    let clamp = |v: isize, hi: usize| -> usize { v.clamp(0, hi as isize - 1) as usize };
    for plane_idx in 0..n * c {
        let base = plane_idx * h * w;
        for y in 0..h {
            for xk in 0..w {
                let gv = go[base + y * w + xk];
                for dy in -1..=1isize {
                    for dxo in -1..=1isize {
                        let yy = clamp(y as isize + dy, h);
                        let xx = clamp(xk as isize + dxo, w);
                        let tap = if dy == 0 && dxo == 0 { eight } else { -T::ONE };
                        dx[base + yy * w + xx] += gv * tap;
                    }
                }
            }
        }
    }
    Tensor::new(input_shape.to_vec(), dx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_1x1_kernel() {
        let x = Tensor::<f32>::new(vec![1, 1, 1, 1], vec![2.0]).unwrap();
        let w = Tensor::<f32>::new(vec![1, 1, 1, 1], vec![1.0]).unwrap();
        let y = conv2d(&x, &w, None, &ConvSpec::unit(1)).unwrap();
        assert_eq!(y.data(), &[2.0]);
    }

    #[test]
    fn ones_3x3_sums_to_nine() {
        let x = Tensor::<f32>::full(&[1, 1, 3, 3], 1.0);
        let w = Tensor::<f32>::full(&[1, 1, 3, 3], 1.0);
        let y = conv2d(&x, &w, None, &ConvSpec::unit(3)).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.data(), &[9.0]);
    }

    #[test]
    fn zero_size_output_rejected() {
        let x = Tensor::<f32>::full(&[1, 1, 2, 2], 1.0);
        let w = Tensor::<f32>::full(&[1, 1, 3, 3], 1.0);
        assert!(conv2d(&x, &w, None, &ConvSpec::unit(3)).is_err());
    }

    #[test]
    fn dwconv_requires_matching_groups() {
        let x = Tensor::<f32>::full(&[1, 3, 4, 4], 1.0);
        let w = Tensor::<f32>::full(&[3, 1, 3, 3], 1.0);
        let bad = ConvSpec::same(3).with_groups(2);
        assert!(dwconv2d(&x, &w, &bad).is_err());
        let good = ConvSpec::same(3).with_groups(3);
        assert!(dwconv2d(&x, &w, &good).is_ok());
    }

    #[test]
    fn dwconv_single_channel_equals_conv() {
        let mut rng = crate::rng::Rng::new(3);
        let x = Tensor::<f32>::rand_uniform(&[1, 1, 5, 5], &mut rng, -1.0, 1.0);
        let w = Tensor::<f32>::rand_uniform(&[1, 1, 3, 3], &mut rng, -1.0, 1.0);
        let a = dwconv2d(&x, &w, &ConvSpec::same(3).with_groups(1)).unwrap();
        let b = conv2d(&x, &w, None, &ConvSpec::same(3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn laplacian_constant_response_is_exactly_zero() {
        for &c in &[1.0f32, 0.333_333_34_f32, 0.123_456_79_f32, -7.77f32] {
            let x = Tensor::<f32>::full(&[1, 2, 6, 7], c);
            let y = laplacian_response(&x).unwrap();
            assert!(y.data().iter().all(|&v| v == 0.0), "residual for c={c}");
        }
    }

    #[test]
    fn laplacian_stencil_sums_to_zero() {
        let s = laplacian_stencil::<f32>();
        let sum: f32 = s.data().iter().sum();
        assert_eq!(sum, 0.0);
    }

    #[test]
    fn dwconv_with_zero_sum_kernel_nulls_constant_interior() {
        let x = Tensor::<f32>::full(&[1, 2, 5, 5], 1.0);
        let lap = laplacian_stencil::<f32>();
        let w = Tensor::<f32>::new(vec![2, 1, 3, 3], [lap.data(), lap.data()].concat()).unwrap();
        let y = dwconv2d(&x, &w, &ConvSpec::unit(3).with_groups(2)).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }
}
