//! Pointwise activations and softmax.

use crate::error::Result;
use crate::scalar::Real;
use crate::tensor::Tensor;

pub fn relu<T: Real>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let out = input.map(|v| v.maxv(T::ZERO));
    out.validate_finite("relu")?;
    Ok(out)
}

#[inline]
pub fn sigmoid_scalar<T: Real>(x: T) -> T {
    // branch keeps exp() off large positive arguments
    if x >= T::ZERO {
        T::ONE / (T::ONE + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::ONE + e)
    }
}

pub fn sigmoid<T: Real>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let out = input.map(sigmoid_scalar);
    out.validate_finite("sigmoid")?;
    Ok(out)
}

/// Tanh-approximated GELU (the transformer blocks' activation).
#[inline]
pub fn gelu_scalar<T: Real>(x: T) -> T {
    let c = T::from_f64(0.7978845608028654); // sqrt(2/pi)
    let k = T::from_f64(0.044715);
    let half = T::from_f64(0.5);
    half * x * (T::ONE + (c * (x + k * x * x * x)).tanh())
}

#[inline]
pub fn gelu_grad_scalar<T: Real>(x: T) -> T {
    let c = T::from_f64(0.7978845608028654);
    let k = T::from_f64(0.044715);
    let half = T::from_f64(0.5);
    let three_k = T::from_f64(3.0 * 0.044715);
    let t = (c * (x + k * x * x * x)).tanh();
    half * (T::ONE + t) + half * x * (T::ONE - t * t) * c * (T::ONE + three_k * x * x)
}

pub fn gelu<T: Real>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let out = input.map(gelu_scalar);
    out.validate_finite("gelu")?;
    Ok(out)
}

/// Softmax over the last dimension; each slice sums to 1. The running
/// maximum is subtracted first, which also makes the result invariant to
/// adding a constant to all logits.
pub fn softmax_lastdim<T: Real>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let feat = *input.shape().last().expect("non-empty shape");
    let rows = input.numel() / feat;
    let x = input.data();
    let mut out = vec![T::ZERO; x.len()];
    for r in 0..rows {
        let base = r * feat;
        let mut maxv = x[base];
        for i in 1..feat {
            maxv = maxv.maxv(x[base + i]);
        }
        let mut sum = T::ZERO;
        for i in 0..feat {
            let e = (x[base + i] - maxv).exp();
            out[base + i] = e;
            sum += e;
        }
        for i in 0..feat {
            out[base + i] = out[base + i] / sum;
        }
    }
    let out = Tensor::new(input.shape().to_vec(), out)?;
    out.validate_finite("softmax")?;
    Ok(out)
}

/// Softmax over an arbitrary axis, routed through the last-dim kernel by
/// permutation.
pub fn softmax_axis<T: Real>(input: &Tensor<T>, axis: usize) -> Result<Tensor<T>> {
    let rank = input.rank();
    if axis >= rank {
        return Err(crate::error::Error::InvalidSpec {
            op: "softmax_axis",
            detail: format!("axis {axis} out of range for rank {rank}"),
        });
    }
    if axis == rank - 1 {
        return softmax_lastdim(input);
    }
    let mut perm: Vec<usize> = (0..rank).collect();
    perm.remove(axis);
    perm.push(axis);
    let moved = crate::ops::linalg::permute(input, &perm)?;
    let soft = softmax_lastdim(&moved)?;
    crate::ops::linalg::permute(&soft, &crate::ops::linalg::inverse_perm(&perm))
}

/// Softmax backward given the forward output: `ds = (g - sum(g*s)) * s`
/// per row.
pub fn softmax_lastdim_backward<T: Real>(output: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    let feat = *output.shape().last().expect("non-empty shape");
    let rows = output.numel() / feat;
    let s = output.data();
    let go = grad_out.data();
    let mut dx = vec![T::ZERO; s.len()];
    for r in 0..rows {
        let base = r * feat;
        let mut dot = T::ZERO;
        for i in 0..feat {
            dot += go[base + i] * s[base + i];
        }
        for i in 0..feat {
            dx[base + i] = (go[base + i] - dot) * s[base + i];
        }
    }
    Tensor::new(output.shape().to_vec(), dx)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sigmoid_at_zero_is_half() {
        assert_eq!(sigmoid_scalar(0.0f32), 0.5);
    }

    #[test]
    fn sigmoid_stays_in_open_unit_interval() {
        for &v in &[-100.0f32, -5.0, 0.0, 5.0, 100.0] {
            let s = sigmoid_scalar(v);
            assert!((0.0..=1.0).contains(&s));
            assert!(s.is_finite());
        }
    }

    #[test]
    fn softmax_of_equal_logits_is_uniform() {
        let x = Tensor::<f32>::full(&[2, 5], 3.0);
        let s = softmax_lastdim(&x).unwrap();
        assert!(s.data().iter().all(|&v| (v - 0.2).abs() < 1e-6));
    }

    #[test]
    fn softmax_shift_invariance() {
        let x = Tensor::<f32>::new(vec![1, 4], vec![0.1, -0.7, 2.0, 0.4]).unwrap();
        let shifted = x.map(|v| v + 13.5);
        let a = softmax_lastdim(&x).unwrap();
        let b = softmax_lastdim(&shifted).unwrap();
        assert!(a.max_abs_diff(&b).unwrap() <= 1e-6);
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut rng = crate::rng::Rng::new(8);
        let x = Tensor::<f32>::rand_uniform(&[3, 7], &mut rng, -4.0, 4.0);
        let s = softmax_lastdim(&x).unwrap();
        for r in 0..3 {
            let sum: f32 = s.data()[r * 7..(r + 1) * 7].iter().sum();
            assert!((sum - 1.0).abs() <= 1e-5);
        }
    }

    #[test]
    fn relu_is_nonnegative() {
        let x = Tensor::<f32>::new(vec![3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu(&x).unwrap().data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn softmax_axis_slices_sum_to_one() {
        let mut rng = crate::rng::Rng::new(13);
        let x = Tensor::<f32>::rand_uniform(&[2, 3, 4], &mut rng, -2.0, 2.0);
        let s = softmax_axis(&x, 1).unwrap();
        assert_eq!(s.shape(), x.shape());
        for n in 0..2 {
            for k in 0..4 {
                let sum: f32 = (0..3).map(|c| s.data()[(n * 3 + c) * 4 + k]).sum();
                assert!((sum - 1.0).abs() <= 1e-5);
            }
        }
        assert!(softmax_axis(&x, 3).is_err());
    }
}
