use crate::error::{shape_err, Result};
use crate::tensor::{Scalar, Tensor};

/// Row-wise softmax with max subtraction.
pub fn softmax<T: Scalar>(logits: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, classes) = logits.dims2()?;
    let mut out = logits.clone();
    for row in out.data_mut().chunks_mut(classes) {
        let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let mut total = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
        for v in row.iter_mut() {
            *v = *v / total;
        }
    }
    Ok(out)
}

/// Mean cross-entropy over the batch and its gradient `(softmax - onehot) / n`.
pub fn softmax_xent<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<(f64, Tensor<T>)> {
    let (n, classes) = logits.dims2()?;
    if labels.len() != n {
        return shape_err(format!("{} labels for {n} logits rows", labels.len()));
    }
    if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
        return shape_err(format!("label {bad} outside 0..{classes}"));
    }
    let mut grad = softmax(logits)?;
    let mut loss = 0.0;
    let inv_n = T::one() / T::lit(n as f64);
    for (b, &label) in labels.iter().enumerate() {
        let row = &logits.data()[b * classes..(b + 1) * classes];
        let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v.as_f64()));
        let lse = max + row.iter().map(|&v| (v.as_f64() - max).exp()).sum::<f64>().ln();
        loss += lse - row[label].as_f64();
        let g = &mut grad.data_mut()[b * classes..(b + 1) * classes];
        g[label] -= T::one();
        g.iter_mut().for_each(|v| *v *= inv_n);
    }
    Ok((loss / n as f64, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck::{check_gradient, random_tensor};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn uniform_logits_give_ln_classes() {
        let logits = Tensor::<f64>::zeros(&[4, 10]);
        let (loss, _) = softmax_xent(&logits, &[0, 3, 9, 5]).unwrap();
        assert!((loss - 10f64.ln()).abs() < 1e-12);
        assert!((loss - 2.302585).abs() < 1e-6);
    }

    #[test]
    fn large_logit_is_stable() {
        let mut logits = Tensor::<f32>::zeros(&[1, 10]);
        logits[4] = 1000.0;
        let (loss, grad) = softmax_xent(&logits, &[4]).unwrap();
        assert!(loss.abs() < 1e-6);
        assert!(grad.all_finite());
    }

    #[test]
    fn gradient_rows_sum_to_zero() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let logits = random_tensor(&mut rng, &[5, 10]);
        let (_, grad) = softmax_xent(&logits, &[1, 2, 3, 4, 5]).unwrap();
        for row in grad.data().chunks(10) {
            assert!(row.iter().sum::<f64>().abs() < 1e-7);
        }
        check_gradient(&logits, &grad, |t| softmax_xent(t, &[1, 2, 3, 4, 5]).unwrap().0, 1e-5);
    }

    #[test]
    fn bad_labels_rejected() {
        let logits = Tensor::<f32>::zeros(&[2, 3]);
        assert!(softmax_xent(&logits, &[0]).is_err());
        assert!(softmax_xent(&logits, &[0, 3]).is_err());
    }
}
