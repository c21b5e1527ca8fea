//! Bicubic resampling and horizontal flipping as explicit linear operators on
//! vectorized square patches.
//!
//! Patches are vectorized row-major (row index outermost). Resampling uses the
//! Keys cubic kernel with `a = -0.5`, the align-centers grid (output pixel `i`
//! samples input coordinate `(i + 0.5) * in / out - 0.5`) and clamp-to-edge
//! boundaries, so every operator row sums to one.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::{DMatrix, DVector};

use crate::error::{shape_err, Error, Result};
use crate::tensor::{Scalar, Tensor};

const KEYS_A: f64 = -0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OperatorKind {
    Resample,
    HorizontalFlip,
    Identity,
}

/// A linear map from vectorized `in_size x in_size` patches to vectorized
/// `out_size x out_size` patches.
#[derive(Debug, Clone)]
pub struct ScalingOperator {
    pub in_size: usize,
    pub out_size: usize,
    /// Shape `(out_size^2, in_size^2)`.
    pub matrix: DMatrix<f64>,
    pub kind: OperatorKind,
}

/// Keys cubic convolution kernel.
pub fn keys_kernel(x: f64) -> f64 {
    let x = x.abs();
    if x <= 1.0 {
        (KEYS_A + 2.0) * x * x * x - (KEYS_A + 3.0) * x * x + 1.0
    } else if x < 2.0 {
        KEYS_A * x * x * x - 5.0 * KEYS_A * x * x + 8.0 * KEYS_A * x - 4.0 * KEYS_A
    } else {
        0.0
    }
}

/// One-dimensional bicubic weights, shape `(out_len, in_len)`.
pub fn resample_weights_1d(in_len: usize, out_len: usize) -> Result<DMatrix<f64>> {
    if in_len == 0 || out_len == 0 {
        return Err(Error::InvalidArgument(format!(
            "resample sizes must be positive, got {in_len}->{out_len}"
        )));
    }
    if in_len == out_len {
        return Ok(DMatrix::identity(out_len, in_len));
    }
    let ratio = in_len as f64 / out_len as f64;
    let last = in_len as isize - 1;
    let mut w = DMatrix::zeros(out_len, in_len);
    for i in 0..out_len {
        let x = (i as f64 + 0.5) * ratio - 0.5;
        let base = x.floor();
        let t = x - base;
        let base = base as isize;
        for tap in -1..=2isize {
            let weight = keys_kernel(t - tap as f64);
            let src = (base + tap).clamp(0, last) as usize;
            w[(i, src)] += weight;
        }
    }
    Ok(w)
}

pub fn build_resample_matrix(in_size: usize, out_size: usize) -> Result<ScalingOperator> {
    if in_size == 0 || out_size == 0 {
        return Err(Error::InvalidArgument(format!(
            "patch sizes must be positive, got {in_size}->{out_size}"
        )));
    }
    if in_size == out_size {
        return Ok(ScalingOperator {
            in_size,
            out_size,
            matrix: DMatrix::identity(in_size * in_size, in_size * in_size),
            kind: OperatorKind::Identity,
        });
    }
    let w = resample_weights_1d(in_size, out_size)?;
    Ok(ScalingOperator {
        in_size,
        out_size,
        matrix: w.kronecker(&w),
        kind: OperatorKind::Resample,
    })
}

/// Horizontal mirror of a `size x size` patch as a permutation matrix.
pub fn build_flip_matrix(size: usize) -> Result<ScalingOperator> {
    if size == 0 {
        return Err(Error::InvalidArgument("flip size must be positive".into()));
    }
    let n = size * size;
    let mut m = DMatrix::zeros(n, n);
    for r in 0..size {
        for c in 0..size {
            m[(r * size + c, r * size + (size - 1 - c))] = 1.0;
        }
    }
    Ok(ScalingOperator {
        in_size: size,
        out_size: size,
        matrix: m,
        kind: OperatorKind::HorizontalFlip,
    })
}

type OperatorCache = Mutex<HashMap<(usize, usize), Arc<ScalingOperator>>>;

fn cache() -> &'static OperatorCache {
    static CACHE: OnceLock<OperatorCache> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Cached [`build_resample_matrix`].
pub fn resample_operator(in_size: usize, out_size: usize) -> Result<Arc<ScalingOperator>> {
    if let Some(op) = cache().lock().unwrap().get(&(in_size, out_size)) {
        return Ok(Arc::clone(op));
    }
    let op = Arc::new(build_resample_matrix(in_size, out_size)?);
    let mut guard = cache().lock().unwrap();
    Ok(Arc::clone(guard.entry((in_size, out_size)).or_insert(op)))
}

pub fn vectorize<T: Scalar>(patch: &[T]) -> DVector<f64> {
    DVector::from_iterator(patch.len(), patch.iter().map(|x| x.as_f64()))
}

/// Inverse of [`vectorize`] for an `side x side` patch.
pub fn devectorize<T: Scalar>(v: &DVector<f64>, side: usize) -> Result<Tensor<T>> {
    if v.len() != side * side {
        return shape_err(format!("vector of length {} is not {side}x{side}", v.len()));
    }
    Ok(Tensor::from_fn(&[side, side], |i| T::lit(v[i])))
}

/// Applies `op` independently to every channel of a `(c, s, s)` patch.
pub fn apply_operator<T: Scalar>(op: &ScalingOperator, patch: &Tensor<T>) -> Result<Tensor<T>> {
    let (c, h, w) = match *patch.shape() {
        [c, h, w] => (c, h, w),
        _ => return shape_err(format!("expected (c, s, s) patch, got {:?}", patch.shape())),
    };
    if h != op.in_size || w != op.in_size {
        return shape_err(format!(
            "patch side {h}x{w} does not match operator input side {}",
            op.in_size
        ));
    }
    let (n_in, n_out) = (h * w, op.out_size * op.out_size);
    let mut out = Vec::with_capacity(c * n_out);
    for ch in 0..c {
        let v = vectorize(&patch.data()[ch * n_in..(ch + 1) * n_in]);
        let r = &op.matrix * v;
        out.extend(r.iter().map(|&x| T::lit(x)));
    }
    Tensor::from_vec(&[c, op.out_size, op.out_size], out)
}

/// Separable bicubic resampling of a `(c, h, w)` image.
pub fn resample_image<T: Scalar>(image: &Tensor<T>, new_h: usize, new_w: usize) -> Result<Tensor<T>> {
    let (c, h, w) = match *image.shape() {
        [c, h, w] => (c, h, w),
        _ => return shape_err(format!("expected (c, h, w) image, got {:?}", image.shape())),
    };
    let wy = resample_weights_1d(h, new_h)?;
    let wx = resample_weights_1d(w, new_w)?;
    let mut out = vec![T::zero(); c * new_h * new_w];
    let mut rows = vec![0.0f64; h * new_w];
    for ch in 0..c {
        let src = &image.data()[ch * h * w..(ch + 1) * h * w];
        for y in 0..h {
            for j in 0..new_w {
                let mut acc = 0.0;
                for q in 0..w {
                    let wt = wx[(j, q)];
                    if wt != 0.0 {
                        acc += wt * src[y * w + q].as_f64();
                    }
                }
                rows[y * new_w + j] = acc;
            }
        }
        let dst = &mut out[ch * new_h * new_w..(ch + 1) * new_h * new_w];
        for i in 0..new_h {
            for j in 0..new_w {
                let mut acc = 0.0;
                for p in 0..h {
                    let wt = wy[(i, p)];
                    if wt != 0.0 {
                        acc += wt * rows[p * new_w + j];
                    }
                }
                dst[i * new_w + j] = T::lit(acc);
            }
        }
    }
    Tensor::from_vec(&[c, new_h, new_w], out)
}

/// Horizontal mirror of every channel of a `(.., h, w)` tensor.
pub fn flip_horizontal<T: Scalar>(t: &Tensor<T>) -> Tensor<T> {
    let w = *t.shape().last().unwrap();
    let mut out = t.clone();
    for row in out.data_mut().chunks_mut(w) {
        row.reverse();
    }
    out
}
