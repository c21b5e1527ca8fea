//! Max and average pooling over square windows without padding.

use crate::error::{shape_err, Result};
use crate::tensor::{Scalar, Tensor};

fn out_dims(h: usize, w: usize, side: usize, stride: usize) -> Result<(usize, usize)> {
    if side == 0 || stride == 0 {
        return shape_err("pool side and stride must be at least 1");
    }
    if side > h || side > w {
        return shape_err(format!("pool window {side} does not fit {h}x{w}"));
    }
    Ok(((h - side) / stride + 1, (w - side) / stride + 1))
}

/// Returns the pooled tensor and, per output element, the flat index of the
/// winning input element. Ties go to the lowest flat index.
pub fn maxpool_forward<T: Scalar>(
    input: &Tensor<T>,
    side: usize,
    stride: usize,
) -> Result<(Tensor<T>, Vec<u32>)> {
    let (n, c, h, w) = input.dims4()?;
    let (oh, ow) = out_dims(h, w, side, stride)?;
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut arg = Vec::with_capacity(n * c * oh * ow);
    let x = input.data();
    for plane in 0..n * c {
        let base = plane * h * w;
        for i in 0..oh {
            for j in 0..ow {
                let mut best = base + i * stride * w + j * stride;
                for u in 0..side {
                    let row = base + (i * stride + u) * w + j * stride;
                    for idx in row..row + side {
                        if x[idx] > x[best] {
                            best = idx;
                        }
                    }
                }
                out.push(x[best]);
                arg.push(best as u32);
            }
        }
    }
    Ok((Tensor::from_vec(&[n, c, oh, ow], out)?, arg))
}

pub fn maxpool_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    argmax: &[u32],
    input_shape: &[usize],
) -> Result<Tensor<T>> {
    if grad_out.len() != argmax.len() {
        return shape_err("max-pool gradient does not match recorded argmax");
    }
    let mut dx = Tensor::zeros(input_shape);
    for (&g, &idx) in grad_out.data().iter().zip(argmax) {
        dx[idx as usize] += g;
    }
    Ok(dx)
}

pub fn avgpool_forward<T: Scalar>(input: &Tensor<T>, side: usize, stride: usize) -> Result<Tensor<T>> {
    let (n, c, h, w) = input.dims4()?;
    let (oh, ow) = out_dims(h, w, side, stride)?;
    let scale = T::one() / T::lit((side * side) as f64);
    let x = input.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let base = plane * h * w;
        for i in 0..oh {
            for j in 0..ow {
                let mut acc = T::zero();
                for u in 0..side {
                    let row = base + (i * stride + u) * w + j * stride;
                    acc += x[row..row + side].iter().copied().sum::<T>();
                }
                out.push(acc * scale);
            }
        }
    }
    Tensor::from_vec(&[n, c, oh, ow], out)
}

pub fn avgpool_backward<T: Scalar>(
    grad_out: &Tensor<T>,
    input_shape: &[usize],
    side: usize,
    stride: usize,
) -> Result<Tensor<T>> {
    let (n, c, h, w) = match *input_shape {
        [n, c, h, w] => (n, c, h, w),
        _ => return shape_err(format!("expected rank-4 input shape, got {input_shape:?}")),
    };
    let (oh, ow) = out_dims(h, w, side, stride)?;
    if grad_out.shape() != [n, c, oh, ow] {
        return shape_err(format!(
            "avg-pool gradient {:?} does not match {:?}",
            grad_out.shape(),
            [n, c, oh, ow]
        ));
    }
    let scale = T::one() / T::lit((side * side) as f64);
    let mut dx = Tensor::zeros(input_shape);
    let g = grad_out.data();
    for plane in 0..n * c {
        let base = plane * h * w;
        for i in 0..oh {
            for j in 0..ow {
                let share = g[(plane * oh + i) * ow + j] * scale;
                for u in 0..side {
                    let row = base + (i * stride + u) * w + j * stride;
                    for v in dx.data_mut()[row..row + side].iter_mut() {
                        *v += share;
                    }
                }
            }
        }
    }
    Ok(dx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{check_gradient, random_tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn max_of_two_by_two() {
        let x = Tensor::<f64>::from_vec(&[1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let (y, arg) = maxpool_forward(&x, 2, 2).unwrap();
        assert_eq!(y.data(), &[4.0]);
        assert_eq!(arg, vec![3]);
    }

    #[test]
    fn ties_pick_lowest_index() {
        let x = Tensor::<f64>::full(&[1, 1, 3, 3], 1.0);
        let (_, arg) = maxpool_forward(&x, 2, 1).unwrap();
        assert_eq!(arg, vec![0, 1, 3, 4]);
    }

    #[test]
    fn constant_image_survives_both_pools() {
        let x = Tensor::<f64>::full(&[2, 3, 9, 9], -0.4);
        let (m, _) = maxpool_forward(&x, 3, 2).unwrap();
        let a = avgpool_forward(&x, 3, 2).unwrap();
        assert_eq!(m.shape(), &[2, 3, 4, 4]);
        assert!(m.data().iter().all(|&v| v == -0.4));
        assert!(a.data().iter().all(|&v| (v + 0.4).abs() < 1e-12));
    }

    #[test]
    fn window_must_fit() {
        let x = Tensor::<f32>::zeros(&[1, 1, 2, 2]);
        assert!(maxpool_forward(&x, 3, 1).is_err());
        assert!(avgpool_forward(&x, 3, 1).is_err());
        assert!(avgpool_backward(&Tensor::<f32>::zeros(&[1, 1, 2, 2]), &[1, 1, 2, 2], 2, 1).is_err());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        // continuous random values are tie-free with probability one
        let x = random_tensor(&mut rng, &[2, 2, 7, 7]);
        let probe = random_tensor(&mut rng, &[2, 2, 3, 3]);
        let (_, arg) = maxpool_forward(&x, 3, 2).unwrap();
        let dmax = maxpool_backward(&probe, &arg, x.shape()).unwrap();
        check_gradient(&x, &dmax, |t| maxpool_forward(t, 3, 2).unwrap().0.dot(&probe), 1e-5);
        let davg = avgpool_backward(&probe, x.shape(), 3, 2).unwrap();
        check_gradient(&x, &davg, |t| avgpool_forward(t, 3, 2).unwrap().dot(&probe), 1e-5);
    }
}
