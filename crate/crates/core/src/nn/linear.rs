use crate::error::{shape_err, Result};
use crate::tensor::{gemm, Scalar, Tensor, Trans};

/// `y = x W^T + b` with `x: (n, features)`, `W: (classes, features)`.
pub fn linear_forward<T: Scalar>(x: &Tensor<T>, weights: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, f) = x.dims2()?;
    let (classes, wf) = weights.dims2()?;
    if wf != f || bias.len() != classes {
        return shape_err(format!(
            "linear layer {:?}/{:?} incompatible with input {:?}",
            weights.shape(),
            bias.shape(),
            x.shape()
        ));
    }
    let mut y = vec![T::zero(); n * classes];
    for row in y.chunks_mut(classes) {
        row.copy_from_slice(bias.data());
    }
    gemm(Trans::No, Trans::Yes, n, f, classes, T::one(), x.data(), weights.data(), T::one(), &mut y);
    Tensor::from_vec(&[n, classes], y)
}

#[derive(Debug, Clone)]
pub struct LinearGrads<T: Scalar> {
    pub input: Tensor<T>,
    pub weights: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn linear_backward<T: Scalar>(
    x: &Tensor<T>,
    weights: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<LinearGrads<T>> {
    let (n, f) = x.dims2()?;
    let (classes, _) = weights.dims2()?;
    if grad_out.shape() != [n, classes] {
        return shape_err(format!(
            "linear gradient {:?} does not match ({n}, {classes})",
            grad_out.shape()
        ));
    }
    let mut dx = vec![T::zero(); n * f];
    gemm(Trans::No, Trans::No, n, classes, f, T::one(), grad_out.data(), weights.data(), T::zero(), &mut dx);
    let mut dw = vec![T::zero(); classes * f];
    gemm(Trans::Yes, Trans::No, classes, n, f, T::one(), grad_out.data(), x.data(), T::zero(), &mut dw);
    let mut db = vec![T::zero(); classes];
    for row in grad_out.data().chunks(classes) {
        for (d, &g) in db.iter_mut().zip(row) {
            *d += g;
        }
    }
    Ok(LinearGrads {
        input: Tensor::from_vec(x.shape(), dx)?,
        weights: Tensor::from_vec(weights.shape(), dw)?,
        bias: Tensor::from_vec(&[classes], db)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{check_gradient, random_tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_and_zero_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let x = random_tensor(&mut rng, &[3, 4]);
        let eye = Tensor::from_fn(&[4, 4], |i| if i / 4 == i % 4 { 1.0 } else { 0.0 });
        assert_eq!(linear_forward(&x, &eye, &Tensor::zeros(&[4])).unwrap(), x);
        let b = random_tensor(&mut rng, &[4]);
        let y = linear_forward(&Tensor::zeros(&[2, 4]), &eye, &b).unwrap();
        assert_eq!(&y.data()[..4], b.data());
        assert_eq!(&y.data()[4..], b.data());
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let x = random_tensor(&mut rng, &[3, 5]);
        let w = random_tensor(&mut rng, &[4, 5]);
        let b = random_tensor(&mut rng, &[4]);
        let probe = random_tensor(&mut rng, &[3, 4]);
        let g = linear_backward(&x, &w, &probe).unwrap();
        check_gradient(&x, &g.input, |t| linear_forward(t, &w, &b).unwrap().dot(&probe), 1e-5);
        check_gradient(&w, &g.weights, |t| linear_forward(&x, t, &b).unwrap().dot(&probe), 1e-5);
        check_gradient(&b, &g.bias, |t| linear_forward(&x, &w, t).unwrap().dot(&probe), 1e-5);
    }
}
