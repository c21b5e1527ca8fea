use std::sync::Arc;

use crate::error::Result;
use crate::tensor::{Scalar, Tensor};
use crate::transform::{column_transform, transform_filter_bank, ColumnTransform};

/// A column's view of a tied layer: its fixed `Q` and the filters `Q f_c`.
#[derive(Debug, Clone)]
pub struct MaterializedColumn<T: Scalar> {
    pub transform: Arc<ColumnTransform>,
    pub filters: Tensor<T>,
}

/// Canonical filters and biases of one conv layer plus every column's
/// transformed copy. Only the canonical tensors are free parameters.
#[derive(Debug, Clone)]
pub struct TiedConvLayer<T: Scalar> {
    pub canonical_filters: Tensor<T>,
    pub canonical_bias: Tensor<T>,
    pub columns: Vec<MaterializedColumn<T>>,
}

impl<T: Scalar> TiedConvLayer<T> {
    /// `column_sides[i]` and `flipped[i]` describe column `i`'s filter for this layer.
    pub fn new(
        canonical_filters: Tensor<T>,
        canonical_bias: Tensor<T>,
        column_sides: &[(usize, bool)],
    ) -> Result<Self> {
        let canonical_side = canonical_filters.shape()[2];
        let columns = column_sides
            .iter()
            .map(|&(side, flipped)| {
                let transform = column_transform(canonical_side, side, flipped)?;
                let filters = transform_filter_bank(&transform, &canonical_filters)?;
                Ok(MaterializedColumn { transform, filters })
            })
            .collect::<Result<_>>()?;
        Ok(TiedConvLayer {
            canonical_filters,
            canonical_bias,
            columns,
        })
    }

    /// Recomputes every column's filters from the canonical filters.
    pub fn sync(&mut self) -> Result<()> {
        for col in &mut self.columns {
            col.filters = if col.transform.is_identity() {
                self.canonical_filters.clone()
            } else {
                transform_filter_bank(&col.transform, &self.canonical_filters)?
            };
        }
        Ok(())
    }

    pub fn free_params(&self) -> usize {
        self.canonical_filters.len() + self.canonical_bias.len()
    }
}
