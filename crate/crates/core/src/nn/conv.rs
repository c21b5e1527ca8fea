//! 2-D cross-correlation with zero padding, lowered to gemm through im2col.

use crate::error::{shape_err, Result};
use crate::tensor::{gemm, Scalar, Tensor, Trans};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub side: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeometry {
    pub fn out_height(&self) -> usize {
        (self.height + 2 * self.pad - self.side) / self.stride + 1
    }

    pub fn out_width(&self) -> usize {
        (self.width + 2 * self.pad - self.side) / self.stride + 1
    }

    fn col_rows(&self) -> usize {
        self.channels * self.side * self.side
    }

    fn col_cols(&self) -> usize {
        self.out_height() * self.out_width()
    }
}

fn check_shapes<T: Scalar>(
    input: &Tensor<T>,
    filters: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<ConvGeometry> {
    let (_, c, h, w) = input.dims4()?;
    let (_, fc, fh, fw) = filters.dims4()?;
    if fc != c || fh != fw {
        return shape_err(format!(
            "filters {:?} incompatible with input {:?}",
            filters.shape(),
            input.shape()
        ));
    }
    if stride == 0 {
        return shape_err("stride must be at least 1");
    }
    if fh > h + 2 * pad || fw > w + 2 * pad {
        return shape_err(format!(
            "filter side {fh} exceeds padded input {}x{}",
            h + 2 * pad,
            w + 2 * pad
        ));
    }
    Ok(ConvGeometry {
        channels: c,
        height: h,
        width: w,
        side: fh,
        stride,
        pad,
    })
}

/// Unfolds one `(c, h, w)` image into a `(c*s*s, h'*w')` matrix.
pub fn im2col<T: Scalar>(img: &[T], g: &ConvGeometry, col: &mut [T]) {
    let (oh, ow) = (g.out_height(), g.out_width());
    let (h, w, s) = (g.height as isize, g.width as isize, g.side);
    let mut row = 0;
    for ch in 0..g.channels {
        let plane = &img[ch * g.height * g.width..(ch + 1) * g.height * g.width];
        for u in 0..s {
            for v in 0..s {
                let dst = &mut col[row * oh * ow..(row + 1) * oh * ow];
                for i in 0..oh {
                    let y = (i * g.stride + u) as isize - g.pad as isize;
                    let line = &mut dst[i * ow..(i + 1) * ow];
                    if y < 0 || y >= h {
                        line.fill(T::zero());
                        continue;
                    }
                    let src = &plane[y as usize * g.width..(y as usize + 1) * g.width];
                    for (j, out) in line.iter_mut().enumerate() {
                        let x = (j * g.stride + v) as isize - g.pad as isize;
                        *out = if x < 0 || x >= w { T::zero() } else { src[x as usize] };
                    }
                }
                row += 1;
            }
        }
    }
}

/// Adjoint of [`im2col`]: accumulates columns back into an image.
pub fn col2im<T: Scalar>(col: &[T], g: &ConvGeometry, img: &mut [T]) {
    let (oh, ow) = (g.out_height(), g.out_width());
    let (h, w, s) = (g.height as isize, g.width as isize, g.side);
    img.fill(T::zero());
    let mut row = 0;
    for ch in 0..g.channels {
        let plane = &mut img[ch * g.height * g.width..(ch + 1) * g.height * g.width];
        for u in 0..s {
            for v in 0..s {
                let src = &col[row * oh * ow..(row + 1) * oh * ow];
                for i in 0..oh {
                    let y = (i * g.stride + u) as isize - g.pad as isize;
                    if y < 0 || y >= h {
                        continue;
                    }
                    for j in 0..ow {
                        let x = (j * g.stride + v) as isize - g.pad as isize;
                        if x >= 0 && x < w {
                            plane[y as usize * g.width + x as usize] += src[i * ow + j];
                        }
                    }
                }
                row += 1;
            }
        }
    }
}

pub fn conv_forward<T: Scalar>(
    input: &Tensor<T>,
    filters: &Tensor<T>,
    bias: &Tensor<T>,
    stride: usize,
    pad: usize,
) -> Result<Tensor<T>> {
    let g = check_shapes(input, filters, stride, pad)?;
    let (n, ..) = input.dims4()?;
    let k = filters.shape()[0];
    if bias.len() != k {
        return shape_err(format!("bias length {} != filter count {k}", bias.len()));
    }
    let (rows, cols) = (g.col_rows(), g.col_cols());
    let in_len = g.channels * g.height * g.width;
    let mut col = vec![T::zero(); rows * cols];
    let mut out = vec![T::zero(); n * k * cols];
    for b in 0..n {
        im2col(&input.data()[b * in_len..(b + 1) * in_len], &g, &mut col);
        let dst = &mut out[b * k * cols..(b + 1) * k * cols];
        for (kk, chunk) in dst.chunks_mut(cols).enumerate() {
            chunk.fill(bias[kk]);
        }
        gemm(Trans::No, Trans::No, k, rows, cols, T::one(), filters.data(), &col, T::one(), dst);
    }
    Tensor::from_vec(&[n, k, g.out_height(), g.out_width()], out)
}

#[derive(Debug, Clone)]
pub struct ConvGrads<T: Scalar> {
    /// `None` when the caller did not ask for it.
    pub input: Option<Tensor<T>>,
    pub filters: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn conv_backward<T: Scalar>(
    input: &Tensor<T>,
    filters: &Tensor<T>,
    grad_out: &Tensor<T>,
    stride: usize,
    pad: usize,
    need_input_grad: bool,
) -> Result<ConvGrads<T>> {
    let g = check_shapes(input, filters, stride, pad)?;
    let (n, ..) = input.dims4()?;
    let k = filters.shape()[0];
    let expect = [n, k, g.out_height(), g.out_width()];
    if grad_out.shape() != expect {
        return shape_err(format!(
            "output gradient {:?} does not match {expect:?}",
            grad_out.shape()
        ));
    }
    let (rows, cols) = (g.col_rows(), g.col_cols());
    let in_len = g.channels * g.height * g.width;
    let mut col = vec![T::zero(); rows * cols];
    let mut dcol = vec![T::zero(); rows * cols];
    let mut d_filters = vec![T::zero(); k * rows];
    let mut d_bias = vec![T::zero(); k];
    let mut d_input = need_input_grad.then(|| vec![T::zero(); n * in_len]);
    for b in 0..n {
        let dy = &grad_out.data()[b * k * cols..(b + 1) * k * cols];
        for (kk, chunk) in dy.chunks(cols).enumerate() {
            d_bias[kk] += chunk.iter().copied().sum();
        }
        im2col(&input.data()[b * in_len..(b + 1) * in_len], &g, &mut col);
        gemm(Trans::No, Trans::Yes, k, cols, rows, T::one(), dy, &col, T::one(), &mut d_filters);
        if let Some(dx) = d_input.as_mut() {
            gemm(Trans::Yes, Trans::No, rows, k, cols, T::one(), filters.data(), dy, T::zero(), &mut dcol);
            col2im(&dcol, &g, &mut dx[b * in_len..(b + 1) * in_len]);
        }
    }
    Ok(ConvGrads {
        input: d_input.map(|d| Tensor::from_vec(input.shape(), d)).transpose()?,
        filters: Tensor::from_vec(filters.shape(), d_filters)?,
        bias: Tensor::from_vec(&[k], d_bias)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{check_gradient, random_tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn naive_conv(
        input: &Tensor<f64>,
        filt: &Tensor<f64>,
        bias: &Tensor<f64>,
        stride: usize,
        pad: usize,
    ) -> Tensor<f64> {
        let (n, c, h, w) = input.dims4().unwrap();
        let (k, _, s, _) = filt.dims4().unwrap();
        let oh = (h + 2 * pad - s) / stride + 1;
        let ow = (w + 2 * pad - s) / stride + 1;
        let mut out = Tensor::zeros(&[n, k, oh, ow]);
        for b in 0..n {
            for kk in 0..k {
                for i in 0..oh {
                    for j in 0..ow {
                        let mut acc = bias[kk];
                        for ch in 0..c {
                            for u in 0..s {
                                for v in 0..s {
                                    let y = (i * stride + u) as isize - pad as isize;
                                    let x = (j * stride + v) as isize - pad as isize;
                                    if y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w {
                                        acc += input[((b * c + ch) * h + y as usize) * w + x as usize]
                                            * filt[((kk * c + ch) * s + u) * s + v];
                                    }
                                }
                            }
                        }
                        out[((b * k + kk) * oh + i) * ow + j] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn unit_filter_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let x = random_tensor(&mut rng, &[2, 1, 5, 4]);
        let f = Tensor::full(&[1, 1, 1, 1], 1.0);
        let y = conv_forward(&x, &f, &Tensor::zeros(&[1]), 1, 0).unwrap();
        assert_eq!(y, x);
    }

    #[test]
    fn ones_filter_on_constant_image() {
        let v = 0.25;
        let x = Tensor::<f64>::full(&[1, 3, 6, 6], v);
        let f = Tensor::full(&[2, 3, 3, 3], 1.0);
        let y = conv_forward(&x, &f, &Tensor::zeros(&[2]), 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 2, 4, 4]);
        assert!(y.data().iter().all(|&o| (o - 27.0 * v).abs() < 1e-12));
    }

    #[test]
    fn matches_naive_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for (stride, pad, side) in [(1, 1, 3), (2, 0, 3), (1, 3, 7), (3, 2, 5)] {
            let x = random_tensor(&mut rng, &[2, 2, 9, 8]);
            let f = random_tensor(&mut rng, &[3, 2, side, side]);
            let b = random_tensor(&mut rng, &[3]);
            let fast = conv_forward(&x, &f, &b, stride, pad).unwrap();
            let slow = naive_conv(&x, &f, &b, stride, pad);
            assert_eq!(fast.shape(), slow.shape());
            for (a, e) in fast.data().iter().zip(slow.data()) {
                assert!((a - e).abs() < 1e-6);
            }
        }
        let x = random_tensor(&mut rng, &[1, 1, 4, 4]);
        let f = random_tensor(&mut rng, &[1, 1, 3, 3]);
        let b = random_tensor(&mut rng, &[1]);
        let fast = conv_forward(&x, &f, &b, 1, 1).unwrap();
        let slow = naive_conv(&x, &f, &b, 1, 1);
        assert!(fast.data().iter().zip(slow.data()).all(|(a, e)| (a - e).abs() < 1e-6));
    }

    #[test]
    fn shape_errors() {
        let x = Tensor::<f32>::zeros(&[1, 2, 4, 4]);
        assert!(conv_forward(&x, &Tensor::zeros(&[1, 3, 3, 3]), &Tensor::zeros(&[1]), 1, 0).is_err());
        assert!(conv_forward(&x, &Tensor::zeros(&[1, 2, 5, 5]), &Tensor::zeros(&[1]), 1, 0).is_err());
        assert!(conv_forward(&x, &Tensor::zeros(&[1, 2, 3, 3]), &Tensor::zeros(&[2]), 1, 0).is_err());
        let bad_grad = Tensor::zeros(&[1, 1, 3, 3]);
        assert!(conv_backward(&x, &Tensor::zeros(&[1, 2, 3, 3]), &bad_grad, 1, 0, true).is_err());
    }

    #[test]
    fn shift_equivariance() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let big = random_tensor(&mut rng, &[1, 2, 14, 14]);
        let f = random_tensor(&mut rng, &[2, 2, 3, 3]);
        let b = Tensor::zeros(&[2]);
        let crop = |dy: usize, dx: usize| {
            Tensor::from_fn(&[1, 2, 10, 10], |i| {
                let (ch, r, c) = (i / 100, (i / 10) % 10, i % 10);
                big[(ch * 14 + r + dy) * 14 + c + dx]
            })
        };
        let (dy, dx) = (2, 3);
        let y0 = conv_forward(&crop(0, 0), &f, &b, 1, 0).unwrap();
        let y1 = conv_forward(&crop(dy, dx), &f, &b, 1, 0).unwrap();
        // y1[i][j] == y0[i+dy][j+dx] on the overlap
        for k in 0..2 {
            for i in 0..8 - dy {
                for j in 0..8 - dx {
                    assert_eq!(y1[(k * 8 + i) * 8 + j], y0[(k * 8 + i + dy) * 8 + j + dx]);
                }
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = random_tensor(&mut rng, &[2, 2, 6, 6]);
        let f = random_tensor(&mut rng, &[3, 2, 3, 3]);
        let b = random_tensor(&mut rng, &[3]);
        let (stride, pad) = (1, 1);
        let probe = random_tensor(&mut rng, &[2, 3, 6, 6]);
        let loss = |x: &Tensor<f64>, f: &Tensor<f64>, b: &Tensor<f64>| {
            conv_forward(x, f, b, stride, pad).unwrap().dot(&probe)
        };
        let g = conv_backward(&x, &f, &probe, stride, pad, true).unwrap();
        check_gradient(&x, g.input.as_ref().unwrap(), |t| loss(t, &f, &b), 1e-5);
        check_gradient(&f, &g.filters, |t| loss(&x, t, &b), 1e-5);
        check_gradient(&b, &g.bias, |t| loss(&x, &f, t), 1e-5);
    }

    #[test]
    fn strided_gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let x = random_tensor(&mut rng, &[1, 2, 7, 7]);
        let f = random_tensor(&mut rng, &[2, 2, 3, 3]);
        let b = random_tensor(&mut rng, &[2]);
        let probe = random_tensor(&mut rng, &[1, 2, 4, 4]);
        let g = conv_backward(&x, &f, &probe, 2, 1, true).unwrap();
        let loss = |x: &Tensor<f64>, f: &Tensor<f64>| conv_forward(x, f, &b, 2, 1).unwrap().dot(&probe);
        check_gradient(&x, g.input.as_ref().unwrap(), |t| loss(t, &f), 1e-5);
        check_gradient(&f, &g.filters, |t| loss(&x, t), 1e-5);
    }

    #[test]
    fn zero_and_linear_output_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let x = random_tensor(&mut rng, &[2, 2, 5, 5]);
        let f = random_tensor(&mut rng, &[2, 2, 3, 3]);
        let zero = Tensor::zeros(&[2, 2, 3, 3]);
        let g = conv_backward(&x, &f, &zero, 1, 0, true).unwrap();
        assert_eq!(g.input.unwrap().max_abs(), 0.0);
        assert_eq!(g.filters.max_abs(), 0.0);
        assert_eq!(g.bias.max_abs(), 0.0);

        let d1 = random_tensor(&mut rng, &[2, 2, 3, 3]);
        let d2 = random_tensor(&mut rng, &[2, 2, 3, 3]);
        let mut d12 = d1.clone();
        d12.add_scaled(-2.0, &d2);
        let g1 = conv_backward(&x, &f, &d1, 1, 0, true).unwrap();
        let g2 = conv_backward(&x, &f, &d2, 1, 0, true).unwrap();
        let g12 = conv_backward(&x, &f, &d12, 1, 0, true).unwrap();
        let mut want = g1.filters.clone();
        want.add_scaled(-2.0, &g2.filters);
        for (a, b) in g12.filters.data().iter().zip(want.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}
