//! Matrix products, layout manipulation and elementwise arithmetic.

use crate::error::{shape_err, Result};
use crate::parallel::for_each_chunk_mut;
use crate::scalar::Real;
use crate::tensor::Tensor;

/// `[m,k] x [k,n] -> [m,n]`, accumulation in k order.
pub fn matmul<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k) = a.dims2()?;
    let (k2, n) = b.dims2()?;
    if k != k2 {
        return Err(shape_err("matmul", format!("inner extents {k} vs {k2}")));
    }
    let ad = a.data();
    let bd = b.data();
    let mut out = vec![T::ZERO; m * n];
    for_each_chunk_mut(&mut out, n, |i, row| {
        for kk in 0..k {
            let av = ad[i * k + kk];
            let brow = &bd[kk * n..(kk + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow.iter()) {
                *o += av * bv;
            }
        }
    });
    let out = Tensor::new(vec![m, n], out)?;
    out.validate_finite("matmul")?;
    Ok(out)
}

/// Batched `[b,m,k] x [b,k,n] -> [b,m,n]`.
pub fn bmm_nn<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (ba, m, k) = a.dims3()?;
    let (bb, k2, n) = b.dims3()?;
    if ba != bb || k != k2 {
        return Err(shape_err("bmm_nn", format!("{:?} x {:?}", a.shape(), b.shape())));
    }
    let ad = a.data();
    let bd = b.data();
    let mut out = vec![T::ZERO; ba * m * n];
    for_each_chunk_mut(&mut out, m * n, |bi, plane| {
        let abase = bi * m * k;
        let bbase = bi * k * n;
        for i in 0..m {
            for kk in 0..k {
                let av = ad[abase + i * k + kk];
                let brow = &bd[bbase + kk * n..bbase + (kk + 1) * n];
                let orow = &mut plane[i * n..(i + 1) * n];
                for (o, &bv) in orow.iter_mut().zip(brow.iter()) {
                    *o += av * bv;
                }
            }
        }
    });
    let out = Tensor::new(vec![ba, m, n], out)?;
    out.validate_finite("bmm_nn")?;
    Ok(out)
}

/// Batched `[b,m,k] x [b,n,k]^T -> [b,m,n]` (second operand transposed).
pub fn bmm_nt<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (ba, m, k) = a.dims3()?;
    let (bb, n, k2) = b.dims3()?;
    if ba != bb || k != k2 {
        return Err(shape_err("bmm_nt", format!("{:?} x {:?}^T", a.shape(), b.shape())));
    }
    let ad = a.data();
    let bd = b.data();
    let mut out = vec![T::ZERO; ba * m * n];
    for_each_chunk_mut(&mut out, m * n, |bi, plane| {
        let abase = bi * m * k;
        let bbase = bi * n * k;
        for i in 0..m {
            let arow = &ad[abase + i * k..abase + (i + 1) * k];
            for j in 0..n {
                let brow = &bd[bbase + j * k..bbase + (j + 1) * k];
                let mut acc = T::ZERO;
                for kk in 0..k {
                    acc += arow[kk] * brow[kk];
                }
                plane[i * n + j] = acc;
            }
        }
    });
    let out = Tensor::new(vec![ba, m, n], out)?;
    out.validate_finite("bmm_nt")?;
    Ok(out)
}

/// General axis permutation for rank 2-4 tensors.
pub fn permute<T: Real>(input: &Tensor<T>, perm: &[usize]) -> Result<Tensor<T>> {
    let rank = input.rank();
    if perm.len() != rank {
        return Err(shape_err("permute", format!("perm {perm:?} vs rank {rank}")));
    }
    let mut seen = vec![false; rank];
    for &p in perm {
        if p >= rank || seen[p] {
            return Err(shape_err("permute", format!("invalid perm {perm:?}")));
        }
        seen[p] = true;
    }
    let in_shape = input.shape();
    let out_shape: Vec<usize> = perm.iter().map(|&p| in_shape[p]).collect();

    // pad to rank 4 for a single code path
    let mut ish = [1usize; 4];
    ish[4 - rank..].copy_from_slice(in_shape);
    let mut pm = [0usize, 1, 2, 3];
    for (i, &p) in perm.iter().enumerate() {
        pm[4 - rank + i] = 4 - rank + p;
    }
    let in_strides = {
        let mut s = [1usize; 4];
        for d in (0..3).rev() {
            s[d] = s[d + 1] * ish[d + 1];
        }
        s
    };
    let osh: [usize; 4] = [ish[pm[0]], ish[pm[1]], ish[pm[2]], ish[pm[3]]];
    let x = input.data();
    let mut out = Vec::with_capacity(x.len());
    for a in 0..osh[0] {
        for b in 0..osh[1] {
            for c in 0..osh[2] {
                let base = a * in_strides[pm[0]] + b * in_strides[pm[1]] + c * in_strides[pm[2]];
                let stride = in_strides[pm[3]];
                for d in 0..osh[3] {
                    out.push(x[base + d * stride]);
                }
            }
        }
    }
    Tensor::new(out_shape, out)
}

/// Inverse of a permutation.
pub fn inverse_perm(perm: &[usize]) -> Vec<usize> {
    let mut inv = vec![0usize; perm.len()];
    for (i, &p) in perm.iter().enumerate() {
        inv[p] = i;
    }
    inv
}

/// Concatenation over the channel dimension of NCHW tensors.
pub fn concat_channels<T: Real>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    if parts.is_empty() {
        return Err(shape_err("concat_channels", "no operands"));
    }
    let (n, _, h, w) = parts[0].dims4()?;
    let mut c_total = 0;
    for p in parts {
        let (pn, pc, ph, pw) = p.dims4()?;
        if (pn, ph, pw) != (n, h, w) {
            return Err(shape_err(
                "concat_channels",
                format!("incompatible {:?} vs {:?}", p.shape(), parts[0].shape()),
            ));
        }
        c_total += pc;
    }
    let mut out = Vec::with_capacity(n * c_total * h * w);
    for nn in 0..n {
        for p in parts {
            let pc = p.shape()[1];
            let plane = h * w;
            let base = nn * pc * plane;
            out.extend_from_slice(&p.data()[base..base + pc * plane]);
        }
    }
    Tensor::new(vec![n, c_total, h, w], out)
}

/// Contiguous slice along the last dimension.
pub fn slice_lastdim<T: Real>(input: &Tensor<T>, start: usize, len: usize) -> Result<Tensor<T>> {
    let feat = *input.shape().last().expect("non-empty shape");
    if start + len > feat || len == 0 {
        return Err(shape_err(
            "slice_lastdim",
            format!("range {start}..{} out of {feat}", start + len),
        ));
    }
    let rows = input.numel() / feat;
    let x = input.data();
    let mut out = Vec::with_capacity(rows * len);
    for r in 0..rows {
        let base = r * feat;
        out.extend_from_slice(&x[base + start..base + start + len]);
    }
    let mut shape = input.shape().to_vec();
    *shape.last_mut().unwrap() = len;
    Tensor::new(shape, out)
}

pub fn add<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let out = a.zip_map(b, "add", |x, y| x + y)?;
    out.validate_finite("add")?;
    Ok(out)
}

pub fn sub<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let out = a.zip_map(b, "sub", |x, y| x - y)?;
    out.validate_finite("sub")?;
    Ok(out)
}

pub fn mul<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let out = a.zip_map(b, "mul", |x, y| x * y)?;
    out.validate_finite("mul")?;
    Ok(out)
}

pub fn scale<T: Real>(a: &Tensor<T>, s: T) -> Result<Tensor<T>> {
    let out = a.map(|v| v * s);
    out.validate_finite("scale")?;
    Ok(out)
}

pub fn add_scalar<T: Real>(a: &Tensor<T>, s: T) -> Result<Tensor<T>> {
    let out = a.map(|v| v + s);
    out.validate_finite("add_scalar")?;
    Ok(out)
}

/// True when `small` broadcasts onto `big`: equal rank, every dimension
/// equal or 1 in `small`.
pub fn broadcast_compatible(big: &[usize], small: &[usize]) -> bool {
    big.len() == small.len() && big.iter().zip(small.iter()).all(|(&b, &s)| s == b || s == 1)
}

fn broadcast_map<T: Real>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    op: &'static str,
    f: impl Fn(T, T) -> T,
) -> Result<Tensor<T>> {
    if !broadcast_compatible(a.shape(), b.shape()) {
        return Err(shape_err(op, format!("{:?} with {:?}", a.shape(), b.shape())));
    }
    let rank = a.rank();
    let mut ash = [1usize; 4];
    ash[4 - rank..].copy_from_slice(a.shape());
    let mut bsh = [1usize; 4];
    bsh[4 - rank..].copy_from_slice(b.shape());
    let bstr = {
        let mut s = [0usize; 4];
        let mut acc = 1;
        for d in (0..4).rev() {
            s[d] = if bsh[d] == 1 { 0 } else { acc };
            acc *= bsh[d];
        }
        s
    };
    let ad = a.data();
    let bd = b.data();
    let mut out = Vec::with_capacity(ad.len());
    let mut idx = 0usize;
    for i0 in 0..ash[0] {
        for i1 in 0..ash[1] {
            for i2 in 0..ash[2] {
                let bbase = i0.min(bsh[0] - 1) * bstr[0]
                    + i1.min(bsh[1] - 1) * bstr[1]
                    + i2.min(bsh[2] - 1) * bstr[2];
                for i3 in 0..ash[3] {
                    let bv = bd[bbase + i3.min(bsh[3] - 1) * bstr[3]];
                    out.push(f(ad[idx], bv));
                    idx += 1;
                }
            }
        }
    }
    let out = Tensor::new(a.shape().to_vec(), out)?;
    out.validate_finite(op)?;
    Ok(out)
}

/// `a * b` with `b` broadcast onto `a`'s shape.
pub fn mul_broadcast<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    broadcast_map(a, b, "mul_broadcast", |x, y| x * y)
}

/// `a + b` with `b` broadcast onto `a`'s shape.
pub fn add_broadcast<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    broadcast_map(a, b, "add_broadcast", |x, y| x + y)
}

/// Sums `grad` (shaped like the broadcast result) down to `small_shape`.
pub fn reduce_to_shape<T: Real>(grad: &Tensor<T>, small_shape: &[usize]) -> Result<Tensor<T>> {
    if grad.shape() == small_shape {
        return Ok(grad.clone());
    }
    if !broadcast_compatible(grad.shape(), small_shape) {
        return Err(shape_err(
            "reduce_to_shape",
            format!("{:?} -> {:?}", grad.shape(), small_shape),
        ));
    }
    let rank = grad.rank();
    let mut gsh = [1usize; 4];
    gsh[4 - rank..].copy_from_slice(grad.shape());
    let mut ssh = [1usize; 4];
    ssh[4 - rank..].copy_from_slice(small_shape);
    let sstr = {
        let mut s = [0usize; 4];
        let mut acc = 1;
        for d in (0..4).rev() {
            s[d] = if ssh[d] == 1 { 0 } else { acc };
            acc *= ssh[d];
        }
        s
    };
    let gd = grad.data();
    let numel: usize = small_shape.iter().product();
    let mut out = vec![T::ZERO; numel];
    let mut idx = 0usize;
    for i0 in 0..gsh[0] {
        for i1 in 0..gsh[1] {
            for i2 in 0..gsh[2] {
                let sbase = i0.min(ssh[0] - 1) * sstr[0]
                    + i1.min(ssh[1] - 1) * sstr[1]
                    + i2.min(ssh[2] - 1) * sstr[2];
                for i3 in 0..gsh[3] {
                    out[sbase + i3.min(ssh[3] - 1) * sstr[3]] += gd[idx];
                    idx += 1;
                }
            }
        }
    }
    Tensor::new(small_shape.to_vec(), out)
}

/// Sum of all elements, returned as a `[1]` tensor.
pub fn sum_all<T: Real>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let mut acc = T::ZERO;
    for &v in input.data() {
        acc += v;
    }
    let out = Tensor::scalar(acc);
    out.validate_finite("sum_all")?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_matmul() {
        let eye = Tensor::<f32>::from_fn(&[3, 3], |i| if i / 3 == i % 3 { 1.0 } else { 0.0 });
        let mut rng = crate::rng::Rng::new(2);
        let a = Tensor::<f32>::rand_uniform(&[3, 3], &mut rng, -1.0, 1.0);
        let y = matmul(&eye, &a).unwrap();
        assert_eq!(y, a);
    }

    #[test]
    fn one_by_one_product() {
        let a = Tensor::<f32>::new(vec![1, 1], vec![2.0]).unwrap();
        let b = Tensor::<f32>::new(vec![1, 1], vec![3.0]).unwrap();
        assert_eq!(matmul(&a, &b).unwrap().data(), &[6.0]);
    }

    #[test]
    fn mismatched_inner_extent_rejected() {
        let a = Tensor::<f32>::zeros(&[2, 3]);
        let b = Tensor::<f32>::zeros(&[4, 2]);
        assert!(matmul(&a, &b).is_err());
    }

    #[test]
    fn permute_roundtrip() {
        let mut rng = crate::rng::Rng::new(4);
        let x = Tensor::<f32>::rand_uniform(&[2, 3, 4, 5], &mut rng, -1.0, 1.0);
        let p = permute(&x, &[0, 2, 1, 3]).unwrap();
        assert_eq!(p.shape(), &[2, 4, 3, 5]);
        let back = permute(&p, &inverse_perm(&[0, 2, 1, 3])).unwrap();
        assert_eq!(back, x);
    }

    #[test]
    fn concat_then_slice_roundtrip() {
        let mut rng = crate::rng::Rng::new(9);
        let a = Tensor::<f32>::rand_uniform(&[1, 2, 3, 3], &mut rng, -1.0, 1.0);
        let b = Tensor::<f32>::rand_uniform(&[1, 4, 3, 3], &mut rng, -1.0, 1.0);
        let cat = concat_channels(&[&a, &b]).unwrap();
        assert_eq!(cat.shape(), &[1, 6, 3, 3]);
    }

    #[test]
    fn broadcast_mul_channel_gate() {
        let x = Tensor::<f32>::full(&[1, 2, 2, 2], 3.0);
        let gate = Tensor::<f32>::new(vec![1, 2, 1, 1], vec![0.5, 2.0]).unwrap();
        let y = mul_broadcast(&x, &gate).unwrap();
        assert_eq!(&y.data()[..4], &[1.5; 4]);
        assert_eq!(&y.data()[4..], &[6.0; 4]);
    }

    #[test]
    fn reduce_to_shape_sums_broadcast_axes() {
        let g = Tensor::<f32>::full(&[2, 3, 2, 2], 1.0);
        let r = reduce_to_shape(&g, &[2, 3, 1, 1]).unwrap();
        assert!(r.data().iter().all(|&v| v == 4.0));
        let r2 = reduce_to_shape(&g, &[2, 1, 2, 2]).unwrap();
        assert!(r2.data().iter().all(|&v| v == 3.0));
    }
}
