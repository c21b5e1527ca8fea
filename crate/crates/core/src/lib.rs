pub mod analysis;
pub mod data;
pub mod error;
pub mod model;
pub mod nn;
pub mod scaling;
pub mod tensor;
pub mod train;
pub mod transform;

pub use error::{Error, Result};
pub use model::{Model, NetworkConfig};
pub use tensor::{Scalar, Tensor};
