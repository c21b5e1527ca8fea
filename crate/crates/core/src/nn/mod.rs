//! Layer kernels with hand-derived backward passes.

pub mod activation;
pub mod conv;
pub mod linear;
pub mod loss;
pub mod lrn;
pub mod pool;

pub use activation::{relu_backward, relu_forward};
pub use conv::{conv_backward, conv_forward, ConvGrads};
pub use linear::{linear_backward, linear_forward, LinearGrads};
pub use loss::{softmax, softmax_xent};
pub use lrn::{lrn_backward, lrn_forward, LrnParams};
pub use pool::{avgpool_backward, avgpool_forward, maxpool_backward, maxpool_forward};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One stage of a column's layer stack.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum LayerSpec {
    /// Convolution whose filters come from tied layer `layer`.
    Conv {
        layer: usize,
        side: usize,
        stride: usize,
        pad: usize,
        in_channels: usize,
        out_channels: usize,
    },
    MaxPool { side: usize, stride: usize },
    AvgPool { side: usize, stride: usize },
    ReLU,
    LRN(LrnParams),
    Softmax,
}

impl LayerSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(format!("{self:?}: {msg}")));
        match *self {
            LayerSpec::Conv { side, stride, in_channels, out_channels, .. } => {
                if side == 0 || stride == 0 {
                    return bad("side and stride must be at least 1");
                }
                if in_channels == 0 || out_channels == 0 {
                    return bad("channel counts must be at least 1");
                }
            }
            LayerSpec::MaxPool { side, stride } | LayerSpec::AvgPool { side, stride } => {
                if side == 0 || stride == 0 {
                    return bad("side and stride must be at least 1");
                }
            }
            LayerSpec::LRN(p) => {
                if !(p.k > 0.0 && p.alpha >= 0.0 && p.beta >= 0.0) {
                    return bad("lrn needs k > 0, alpha >= 0, beta >= 0");
                }
            }
            LayerSpec::ReLU | LayerSpec::Softmax => {}
        }
        Ok(())
    }

    /// Output `(channels, height, width)` for a given input, or a config error
    /// when the spatial size underflows.
    pub fn output_dims(&self, (c, h, w): (usize, usize, usize)) -> Result<(usize, usize, usize)> {
        self.validate()?;
        match *self {
            LayerSpec::Conv { side, stride, pad, in_channels, out_channels, .. } => {
                if in_channels != c {
                    return Err(Error::Config(format!(
                        "{self:?}: expects {in_channels} input channels, got {c}"
                    )));
                }
                if side > h + 2 * pad || side > w + 2 * pad {
                    return Err(Error::Config(format!("{self:?}: input {h}x{w} too small")));
                }
                Ok((
                    out_channels,
                    (h + 2 * pad - side) / stride + 1,
                    (w + 2 * pad - side) / stride + 1,
                ))
            }
            LayerSpec::MaxPool { side, stride } | LayerSpec::AvgPool { side, stride } => {
                if side > h || side > w {
                    return Err(Error::Config(format!("{self:?}: input {h}x{w} too small")));
                }
                Ok((c, (h - side) / stride + 1, (w - side) / stride + 1))
            }
            _ => Ok((c, h, w)),
        }
    }
}

#[cfg(test)]
pub(crate) mod gradcheck {
    //! Central finite differences used as the oracle for every backward pass.

    use crate::tensor::Tensor;
    use rand::Rng;

    pub fn random_tensor(rng: &mut impl Rng, shape: &[usize]) -> Tensor<f64> {
        Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    pub fn numeric_gradient(x: &Tensor<f64>, f: impl Fn(&Tensor<f64>) -> f64, eps: f64) -> Tensor<f64> {
        let mut probe = x.clone();
        Tensor::from_fn(x.shape(), |i| {
            let orig = probe[i];
            probe[i] = orig + eps;
            let up = f(&probe);
            probe[i] = orig - eps;
            let down = f(&probe);
            probe[i] = orig;
            (up - down) / (2.0 * eps)
        })
    }

    /// Asserts `max_i |a_i - n_i| / max(|a_i|, |n_i|, 1e-3) < tol`.
    pub fn check_gradient(x: &Tensor<f64>, analytic: &Tensor<f64>, f: impl Fn(&Tensor<f64>) -> f64, tol: f64) {
        assert_eq!(x.shape(), analytic.shape());
        let numeric = numeric_gradient(x, f, 1e-4);
        for (i, (&a, &n)) in analytic.data().iter().zip(numeric.data()).enumerate() {
            let rel = (a - n).abs() / a.abs().max(n.abs()).max(1e-3);
            assert!(rel < tol, "element {i}: analytic {a}, numeric {n}, rel {rel}");
        }
    }
}
