//! Per-column filter transformations `f_t = Q f_c` and their adjoints.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use nalgebra::DMatrix;

use crate::error::{shape_err, Error, Result};
use crate::scaling::{build_flip_matrix, resample_operator};
use crate::tensor::{gemm, Scalar, Tensor, Trans};

/// Condition number of `S^T S` above which the scale-up solve is refused.
pub const MAX_CONDITION: f64 = 1e12;

#[derive(Debug, Clone)]
pub struct ColumnTransform {
    /// Shape `(target_size^2, canonical_size^2)`.
    pub q_matrix: DMatrix<f64>,
    pub canonical_size: usize,
    pub target_size: usize,
    pub flipped: bool,
    q_row_major: Vec<f64>,
}

impl ColumnTransform {
    fn new(q_matrix: DMatrix<f64>, canonical_size: usize, target_size: usize, flipped: bool) -> Self {
        debug_assert_eq!(
            q_matrix.shape(),
            (target_size * target_size, canonical_size * canonical_size)
        );
        let q_row_major = q_matrix.transpose().as_slice().to_vec();
        ColumnTransform {
            q_matrix,
            canonical_size,
            target_size,
            flipped,
            q_row_major,
        }
    }

    pub fn identity(size: usize) -> Self {
        Self::new(DMatrix::identity(size * size, size * size), size, size, false)
    }

    /// Dispatches on the size relation and composes a flip when requested.
    pub fn for_column(canonical_size: usize, target_size: usize, flipped: bool) -> Result<Self> {
        if flipped {
            make_flip_transform(canonical_size, target_size)
        } else {
            unflipped(canonical_size, target_size)
        }
    }

    pub fn is_identity(&self) -> bool {
        !self.flipped && self.canonical_size == self.target_size
    }

    /// Applies `Q` to one vectorized `c x c` filter.
    pub fn apply(&self, filter: &[f64]) -> Vec<f64> {
        let (t2, c2) = self.q_matrix.shape();
        let mut out = vec![0.0; t2];
        gemm(Trans::No, Trans::No, t2, c2, 1, 1.0, &self.q_row_major, filter, 0.0, &mut out);
        out
    }
}

fn unflipped(canonical_size: usize, target_size: usize) -> Result<ColumnTransform> {
    use std::cmp::Ordering::*;
    if canonical_size == 0 || target_size == 0 {
        return Err(Error::InvalidArgument("filter sides must be positive".into()));
    }
    match target_size.cmp(&canonical_size) {
        Equal => Ok(ColumnTransform::identity(canonical_size)),
        Greater => make_scale_up_transform(canonical_size, target_size),
        Less => make_scale_down_transform(canonical_size, target_size),
    }
}

/// Minimum-norm transform `Q = S (S^T S)^{-1}` with `S` the `c -> t` resampler.
pub fn make_scale_up_transform(canonical_size: usize, target_size: usize) -> Result<ColumnTransform> {
    if target_size <= canonical_size || canonical_size == 0 {
        return Err(Error::InvalidArgument(format!(
            "scale-up needs target > canonical, got {canonical_size}->{target_size}"
        )));
    }
    let s = &resample_operator(canonical_size, target_size)?.matrix;
    let construction_err = |reason: String| Error::OperatorConstruction {
        from: canonical_size,
        to: target_size,
        reason,
    };

    let sv = s.clone().singular_values();
    let (max, min) = sv
        .iter()
        .fold((0.0f64, f64::INFINITY), |(hi, lo), &x| (hi.max(x), lo.min(x)));
    let cond = (max / min).powi(2);
    if !cond.is_finite() || cond > MAX_CONDITION {
        return Err(construction_err(format!("S^T S condition estimate {cond:e}")));
    }

    let sts = s.transpose() * s;
    // (S^T S) Y = S^T, then Q = Y^T since S^T S is symmetric.
    let y = sts
        .full_piv_lu()
        .solve(&s.transpose())
        .ok_or_else(|| construction_err("S^T S is singular".into()))?;
    Ok(ColumnTransform::new(y.transpose(), canonical_size, target_size, false))
}

/// Adjoint-of-upsampler transform `Q = S~^T` with `S~` the `t -> c` resampler.
pub fn make_scale_down_transform(canonical_size: usize, target_size: usize) -> Result<ColumnTransform> {
    if target_size >= canonical_size || target_size == 0 {
        return Err(Error::InvalidArgument(format!(
            "scale-down needs 0 < target < canonical, got {canonical_size}->{target_size}"
        )));
    }
    let s_rev = &resample_operator(target_size, canonical_size)?.matrix;
    Ok(ColumnTransform::new(
        s_rev.transpose(),
        canonical_size,
        target_size,
        false,
    ))
}

/// `Q = F_t Q_scale`: the scale transform for the size pair followed by a mirror.
pub fn make_flip_transform(canonical_size: usize, target_size: usize) -> Result<ColumnTransform> {
    let scale = unflipped(canonical_size, target_size)?;
    let flip = build_flip_matrix(target_size)?;
    Ok(ColumnTransform::new(
        flip.matrix * scale.q_matrix,
        canonical_size,
        target_size,
        true,
    ))
}

type TransformCache = Mutex<HashMap<(usize, usize, bool), Arc<ColumnTransform>>>;

/// Cached [`ColumnTransform::for_column`]; each size pair is factored once.
pub fn column_transform(canonical_size: usize, target_size: usize, flipped: bool) -> Result<Arc<ColumnTransform>> {
    static CACHE: OnceLock<TransformCache> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let key = (canonical_size, target_size, flipped);
    if let Some(q) = cache.lock().unwrap().get(&key) {
        return Ok(Arc::clone(q));
    }
    let q = Arc::new(ColumnTransform::for_column(canonical_size, target_size, flipped)?);
    Ok(Arc::clone(cache.lock().unwrap().entry(key).or_insert(q)))
}

fn bank_dims<T: Scalar>(bank: &Tensor<T>, side: usize, what: &str) -> Result<(usize, usize)> {
    match *bank.shape() {
        [o, i, h, w] if h == side && w == side => Ok((o, i)),
        _ => shape_err(format!(
            "{what}: expected (n_out, n_in, {side}, {side}), got {:?}",
            bank.shape()
        )),
    }
}

/// Applies `Q` to every spatial slice of a `(n_out, n_in, c, c)` bank.
pub fn transform_filter_bank<T: Scalar>(q: &ColumnTransform, bank: &Tensor<T>) -> Result<Tensor<T>> {
    let (o, i) = bank_dims(bank, q.canonical_size, "filter bank")?;
    let (c2, t2) = (q.canonical_size.pow(2), q.target_size.pow(2));
    let rows = o * i;
    let src: Vec<f64> = bank.data().iter().map(|x| x.as_f64()).collect();
    let mut dst = vec![0.0; rows * t2];
    gemm(Trans::No, Trans::Yes, rows, c2, t2, 1.0, &src, &q.q_row_major, 0.0, &mut dst);
    Tensor::from_vec(
        &[o, i, q.target_size, q.target_size],
        dst.into_iter().map(T::lit).collect(),
    )
}

/// Applies `Q^T` to every spatial slice: the adjoint of [`transform_filter_bank`].
pub fn gather_gradient<T: Scalar>(q: &ColumnTransform, grad_t: &Tensor<T>) -> Result<Tensor<T>> {
    let (o, i) = bank_dims(grad_t, q.target_size, "gradient bank")?;
    let (c2, t2) = (q.canonical_size.pow(2), q.target_size.pow(2));
    let rows = o * i;
    let src: Vec<f64> = grad_t.data().iter().map(|x| x.as_f64()).collect();
    let mut dst = vec![0.0; rows * c2];
    gemm(Trans::No, Trans::No, rows, t2, c2, 1.0, &src, &q.q_row_major, 0.0, &mut dst);
    Tensor::from_vec(
        &[o, i, q.canonical_size, q.canonical_size],
        dst.into_iter().map(T::lit).collect(),
    )
}
