//! Central crops resized back to full size: the three-scale test mixture and
//! object-size series.

use super::{DatasetSplit, ScaleTag, IMAGE_SIDE};
use crate::error::{shape_err, Error, Result};
use crate::scaling::resample_image;
use crate::tensor::{Scalar, Tensor};

/// Central `side x side` window of a `(c, h, w)` image.
pub fn central_crop<T: Scalar>(image: &Tensor<T>, side: usize) -> Result<Tensor<T>> {
    let (c, h, w) = match *image.shape() {
        [c, h, w] => (c, h, w),
        _ => return shape_err(format!("expected (c, h, w), got {:?}", image.shape())),
    };
    if side == 0 || side > h || side > w {
        return shape_err(format!("crop {side} does not fit {h}x{w}"));
    }
    let (top, left) = ((h - side) / 2, (w - side) / 2);
    Ok(Tensor::from_fn(&[c, side, side], |i| {
        let (ch, r, col) = (i / (side * side), (i / side) % side, i % side);
        image[(ch * h + top + r) * w + left + col]
    }))
}

/// Crop the center and resize it back to the original side.
pub fn crop_zoom<T: Scalar>(image: &Tensor<T>, crop: usize) -> Result<Tensor<T>> {
    let side = image.shape()[1];
    if crop == side {
        return Ok(image.clone());
    }
    resample_image(&central_crop(image, crop)?, side, side)
}

/// `3n` samples: originals tagged `Small`, central 28x28 zoomed to 32 tagged
/// `Middle`, central 24x24 zoomed to 32 tagged `Large`; block-ordered, so
/// sample `i` of block `b` has index `b * n + i`.
pub fn make_scaled_test_set(test: &DatasetSplit) -> Result<DatasetSplit> {
    let (n, c, h, w) = test.images.dims4()?;
    if h != IMAGE_SIDE || w != IMAGE_SIDE {
        return shape_err(format!("scaled set needs 32x32 images, got {h}x{w}"));
    }
    let mut parts = Vec::with_capacity(3);
    for (crop, tag) in [(32, ScaleTag::Small), (28, ScaleTag::Middle), (24, ScaleTag::Large)] {
        let mut data = Vec::with_capacity(n * c * h * w);
        for i in 0..n {
            data.extend_from_slice(crop_zoom(&test.image(i), crop)?.data());
        }
        parts.push(DatasetSplit::new(
            Tensor::from_vec(&[n, c, h, w], data)?,
            test.labels.clone(),
            vec![tag; n],
        )?);
    }
    DatasetSplit::concat(&parts.iter().collect::<Vec<_>>())
}

/// Central crops shrinking by `step` pixels from full size down to
/// `side / max_zoom`, each resized to full size. Returns `(zoom, image)` with
/// `zoom = side / crop`.
pub fn make_object_size_series<T: Scalar>(
    image: &Tensor<T>,
    max_zoom: f64,
    step: usize,
) -> Result<Vec<(f64, Tensor<T>)>> {
    let side = image.shape().get(1).copied().unwrap_or(0);
    if !(max_zoom >= 1.0) || step == 0 {
        return Err(Error::InvalidArgument(format!(
            "need max_zoom >= 1 and step >= 1, got {max_zoom} / {step}"
        )));
    }
    let smallest = (side as f64 / max_zoom).round() as usize;
    let mut out = Vec::new();
    let mut crop = side;
    while crop >= smallest.max(1) {
        out.push((side as f64 / crop as f64, crop_zoom(image, crop)?));
        if crop < step {
            break;
        }
        crop -= step;
    }
    Ok(out)
}
