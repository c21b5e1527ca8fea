use crate::error::{shape_err, Result};
use crate::tensor::{Scalar, Tensor};

pub fn relu_forward<T: Scalar>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Gates `grad_out` by `output > 0`; the gradient at zero is zero.
pub fn relu_backward<T: Scalar>(output: &Tensor<T>, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    if output.shape() != grad_out.shape() {
        return shape_err(format!(
            "relu gradient {:?} vs activation {:?}",
            grad_out.shape(),
            output.shape()
        ));
    }
    let data = output
        .data()
        .iter()
        .zip(grad_out.data())
        .map(|(&y, &g)| if y > T::zero() { g } else { T::zero() })
        .collect();
    Tensor::from_vec(output.shape(), data)
}
