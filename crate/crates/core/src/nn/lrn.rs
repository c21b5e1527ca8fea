//! Cross-channel local response normalization:
//! `y[c] = x[c] / (k + alpha/n * sum_{|c'-c| <= r} x[c']^2)^beta`, `n = 2r + 1`.

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LrnParams {
    pub depth_radius: usize,
    /// Divided by the window size `2 * depth_radius + 1` before use.
    pub alpha: f64,
    pub beta: f64,
    pub k: f64,
}

impl Default for LrnParams {
    fn default() -> Self {
        LrnParams {
            depth_radius: 2,
            alpha: 1e-4,
            beta: 0.75,
            k: 1.0,
        }
    }
}

impl LrnParams {
    fn alpha_per_element(&self) -> f64 {
        self.alpha / (2 * self.depth_radius + 1) as f64
    }
}

/// Returns the normalized tensor and the per-element denominator base
/// `k + alpha/n * sum x^2`, which the backward pass reuses.
pub fn lrn_forward<T: Scalar>(x: &Tensor<T>, p: &LrnParams) -> Result<(Tensor<T>, Tensor<T>)> {
    let (n, c, h, w) = x.dims4()?;
    let plane = h * w;
    let a = T::lit(p.alpha_per_element());
    let k = T::lit(p.k);
    let beta = T::lit(p.beta);
    let r = p.depth_radius;
    let mut scale = Tensor::zeros(x.shape());
    let mut y = Tensor::zeros(x.shape());
    let xd = x.data();
    for b in 0..n {
        let off = b * c * plane;
        for ch in 0..c {
            let lo = ch.saturating_sub(r);
            let hi = (ch + r).min(c - 1);
            for s in 0..plane {
                let mut acc = T::zero();
                for cc in lo..=hi {
                    let v = xd[off + cc * plane + s];
                    acc += v * v;
                }
                let idx = off + ch * plane + s;
                let d = k + a * acc;
                scale[idx] = d;
                y[idx] = xd[idx] * d.powf(-beta);
            }
        }
    }
    Ok((y, scale))
}

pub fn lrn_backward<T: Scalar>(
    x: &Tensor<T>,
    scale: &Tensor<T>,
    grad_out: &Tensor<T>,
    p: &LrnParams,
) -> Result<Tensor<T>> {
    if x.shape() != scale.shape() || x.shape() != grad_out.shape() {
        return shape_err(format!(
            "lrn backward shapes disagree: {:?}, {:?}, {:?}",
            x.shape(),
            scale.shape(),
            grad_out.shape()
        ));
    }
    let (n, c, h, w) = x.dims4()?;
    let plane = h * w;
    let beta = T::lit(p.beta);
    let coef = T::lit(2.0 * p.beta * p.alpha_per_element());
    let r = p.depth_radius;
    let (xd, sd, gd) = (x.data(), scale.data(), grad_out.data());
    // t[i] = g[i] * x[i] * d[i]^(-beta-1)
    let t: Vec<T> = (0..x.len())
        .map(|i| gd[i] * xd[i] * sd[i].powf(-beta - T::one()))
        .collect();
    let mut dx = Tensor::zeros(x.shape());
    for b in 0..n {
        let off = b * c * plane;
        for ch in 0..c {
            let lo = ch.saturating_sub(r);
            let hi = (ch + r).min(c - 1);
            for s in 0..plane {
                let idx = off + ch * plane + s;
                let mut acc = T::zero();
                for cc in lo..=hi {
                    acc += t[off + cc * plane + s];
                }
                dx[idx] = gd[idx] * sd[idx].powf(-beta) - coef * xd[idx] * acc;
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
    fn zero_input_gives_zero() {
        let x = Tensor::<f64>::zeros(&[1, 4, 3, 3]);
        let (y, _) = lrn_forward(&x, &LrnParams::default()).unwrap();
        assert_eq!(y.max_abs(), 0.0);
    }

    #[test]
    fn closed_form_single_channel() {
        let p = LrnParams {
            depth_radius: 0,
            alpha: 1.0,
            beta: 0.5,
            k: 1.0,
        };
        let x = Tensor::<f64>::full(&[1, 1, 1, 1], 1.0);
        let (y, _) = lrn_forward(&x, &p).unwrap();
        assert!((y[0] - 1.0 / 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        // strong parameters so the cross-channel term matters numerically
        for p in [
            LrnParams { depth_radius: 2, alpha: 0.8, beta: 0.75, k: 1.0 },
            LrnParams { depth_radius: 1, alpha: 2.0, beta: 0.5, k: 2.0 },
            LrnParams::default(),
        ] {
            let x = random_tensor(&mut rng, &[2, 6, 3, 3]);
            let probe = random_tensor(&mut rng, &[2, 6, 3, 3]);
            let (_, scale) = lrn_forward(&x, &p).unwrap();
            let dx = lrn_backward(&x, &scale, &probe, &p).unwrap();
            check_gradient(&x, &dx, |t| lrn_forward(t, &p).unwrap().0.dot(&probe), 1e-5);
        }
    }
}
