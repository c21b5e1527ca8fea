//! Invariance-by-scaling measurements and column-specialization probes.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{make_object_size_series, DatasetSplit, BatchIter};
use crate::error::{shape_err, Error, Result};
use crate::model::Model;
use crate::nn;
use crate::scaling::resample_image;
use crate::tensor::Tensor;
use crate::transform::{column_transform, transform_filter_bank};

/// Relative L2 error `|x - y| / |x|`.
pub fn diff(x: &Tensor<f64>, y: &Tensor<f64>) -> Result<f64> {
    if x.shape() != y.shape() {
        return shape_err(format!("diff of {:?} and {:?}", x.shape(), y.shape()));
    }
    let reference = x.norm_l2();
    if !(reference > 0.0) {
        return Err(Error::UndefinedMetric("reference tensor has zero norm".into()));
    }
    let d: f64 = x.data().iter().zip(y.data()).map(|(a, b)| (a - b).powi(2)).sum();
    Ok(d.sqrt() / reference)
}

/// Bicubic resample of a square filter to `target`, rescaled to the original
/// L1 mass.
pub fn sample_scale_filter(f: &Tensor<f64>, target: usize) -> Result<Tensor<f64>> {
    let s = match *f.shape() {
        [h, w] if h == w => h,
        _ => return shape_err(format!("expected a square filter, got {:?}", f.shape())),
    };
    let l1 = |t: &Tensor<f64>| t.data().iter().map(|v| v.abs()).sum::<f64>();
    let mut out = resample_image(&f.clone().reshape(&[1, s, s])?, target, target)?.reshape(&[target, target])?;
    let mass = l1(&out);
    if !(mass > 0.0) {
        return Err(Error::UndefinedMetric("resampled filter has zero L1 norm".into()));
    }
    out.scale(l1(f) / mass);
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    ScaleUp,
    ScaleDown,
}

impl Direction {
    /// (image side, filter side) after scaling a 32x32 image and 5x5 filter.
    pub fn sizes(self) -> (usize, usize) {
        match self {
            Direction::ScaleUp => (64, 9),
            Direction::ScaleDown => (16, 3),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    /// The filter is used unchanged.
    Identity,
    /// Bicubic resample with L1 renormalization.
    Sampled,
    /// The column transformation `Q`.
    Transformed,
}

/// A named set of 5x5 single-channel filters.
#[derive(Debug, Clone)]
pub struct FilterSet {
    pub name: String,
    /// `(k, 1, 5, 5)`.
    pub filters: Tensor<f64>,
}

impl FilterSet {
    /// Taps drawn i.i.d. from `U[0, 1)`, the default uniform filler of the
    /// usual CNN toolkits.
    pub fn random(count: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        FilterSet {
            name: "random".into(),
            filters: Tensor::from_fn(&[count, 1, 5, 5], |_| rng.random_range(0.0..1.0)),
        }
    }

    /// First-layer canonical filters of `model`, each summed over its input
    /// channels: on a gray image replicated into every channel that sum is
    /// exactly the filter the image sees.
    pub fn from_model(name: &str, model: &Model<f32>) -> Result<Self> {
        let bank = &model.layers[0].canonical_filters;
        let (k, c, h, w) = bank.dims4()?;
        if (h, w) != (5, 5) {
            return shape_err(format!("first-layer filters are {h}x{w}, expected 5x5"));
        }
        let mut out = Tensor::<f64>::zeros(&[k, 1, 5, 5]);
        for o in 0..k {
            for ch in 0..c {
                for p in 0..25 {
                    out[o * 25 + p] += bank[(o * c + ch) * 25 + p] as f64;
                }
            }
        }
        Ok(FilterSet { name: name.into(), filters: out })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvarianceRow {
    pub source: String,
    pub filters: usize,
    pub identity: f64,
    pub sampled: f64,
    pub transformed: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvarianceReport {
    pub direction: Direction,
    pub n_images: usize,
    pub rows: Vec<InvarianceRow>,
    /// 2x2 non-overlapping max pooling treated as a filter.
    pub pooling: f64,
}

/// Channel-mean grayscale of each `(3, h, w)` image, as `(n, 1, h, w)`.
pub fn grayscale(images: &Tensor<f32>) -> Result<Tensor<f64>> {
    let (n, c, h, w) = images.dims4()?;
    let plane = h * w;
    Ok(Tensor::from_fn(&[n, 1, h, w], |i| {
        let (img, p) = (i / plane, i % plane);
        (0..c).map(|ch| images[(img * c + ch) * plane + p] as f64).sum::<f64>() / c as f64
    }))
}

fn center_crop_maps(t: &Tensor<f64>, side: usize) -> Result<Tensor<f64>> {
    let (n, c, h, w) = t.dims4()?;
    if side > h || side > w || (h - side) % 2 != 0 || (w - side) % 2 != 0 {
        return shape_err(format!("cannot center {side} inside {h}x{w}"));
    }
    let (top, left) = ((h - side) / 2, (w - side) / 2);
    Ok(Tensor::from_fn(&[n, c, side, side], |i| {
        let (m, r, col) = (i / (side * side), (i / side) % side, i % side);
        t[(m * h + top + r) * w + left + col]
    }))
}

/// Brings two stacks of maps to a common side by cropping the center of the
/// larger. Valid convolutions on align-centered grids place the extra border
/// of the larger map symmetrically, so this aligns them exactly.
fn align(x: Tensor<f64>, y: Tensor<f64>) -> Result<(Tensor<f64>, Tensor<f64>)> {
    let (sx, sy) = (x.shape()[2], y.shape()[2]);
    Ok(match sx.cmp(&sy) {
        std::cmp::Ordering::Equal => (x, y),
        std::cmp::Ordering::Greater => (center_crop_maps(&x, sy)?, y),
        std::cmp::Ordering::Less => (x, center_crop_maps(&y, sx)?),
    })
}

fn transformed_bank(filters: &Tensor<f64>, method: Method, target: usize) -> Result<Tensor<f64>> {
    match method {
        Method::Identity => Ok(filters.clone()),
        Method::Transformed => transform_filter_bank(&*column_transform(5, target, false)?, filters),
        Method::Sampled => {
            let k = filters.shape()[0];
            let mut data = Vec::with_capacity(k * target * target);
            for o in 0..k {
                let f = Tensor::from_vec(&[5, 5], filters.data()[o * 25..(o + 1) * 25].to_vec())?;
                data.extend_from_slice(sample_scale_filter(&f, target)?.data());
            }
            Tensor::from_vec(&[k, 1, target, target], data)
        }
    }
}

/// Mean diff between `S(conv(I, f))` and `conv(S(I), T(f))` over every
/// image/filter pair, with `T` given by `method`.
pub fn mean_invariance_diff(gray: &Tensor<f64>, set: &FilterSet, direction: Direction, method: Method) -> Result<f64> {
    let (n, _, side, _) = gray.dims4()?;
    let (big, fside) = direction.sizes();
    let k = set.filters.shape()[0];
    let bank = transformed_bank(&set.filters, method, fside)?;
    let zeros = Tensor::zeros(&[k]);
    let mut total = 0.0;
    for i in 0..n {
        let img = gray.slice_outer(i, i + 1);
        let conv = nn::conv_forward(&img, &set.filters, &zeros, 1, 0)?;
        let out_side = conv.shape()[2] * big / side;
        let (_, _, h, w) = conv.dims4()?;
        let x = resample_image(&conv.reshape(&[k, h, w])?, out_side, out_side)?.reshape(&[1, k, out_side, out_side])?;
        let scaled = resample_image(&img.reshape(&[1, side, side])?, big, big)?.reshape(&[1, 1, big, big])?;
        let y = nn::conv_forward(&scaled, &bank, &zeros, 1, 0)?;
        let (x, y) = align(x, y)?;
        for o in 0..k {
            let plane = x.shape()[2] * x.shape()[3];
            let xo = Tensor::from_vec(&[plane], x.data()[o * plane..(o + 1) * plane].to_vec())?;
            let yo = Tensor::from_vec(&[plane], y.data()[o * plane..(o + 1) * plane].to_vec())?;
            total += diff(&xo, &yo)?;
        }
    }
    Ok(total / (n * k) as f64)
}

/// Mean `diff(S(pool(I)), pool(S(I)))` for 2x2 non-overlapping max pooling.
pub fn pooling_invariance_diff(gray: &Tensor<f64>, direction: Direction) -> Result<f64> {
    let (n, _, side, _) = gray.dims4()?;
    let big = direction.sizes().0;
    let mut total = 0.0;
    for i in 0..n {
        let img = gray.slice_outer(i, i + 1);
        let pooled = nn::maxpool_forward(&img, 2, 2)?.0;
        let ps = pooled.shape()[2];
        let x = resample_image(&pooled.reshape(&[1, ps, ps])?, big / 2, big / 2)?;
        let scaled = resample_image(&img.reshape(&[1, side, side])?, big, big)?.reshape(&[1, 1, big, big])?;
        let y = nn::maxpool_forward(&scaled, 2, 2)?.0;
        let len = y.len();
        total += diff(&x.reshape(&[len])?, &y.reshape(&[len])?)?;
    }
    Ok(total / n as f64)
}

/// The invariance table for one direction: a row per filter set and the
/// pooling baseline. Images are `(n, 3, 32, 32)` in `[0, 1]`.
pub fn invariance_study(images: &Tensor<f32>, sets: &[FilterSet], direction: Direction) -> Result<InvarianceReport> {
    let gray = grayscale(images)?;
    let rows = sets
        .iter()
        .map(|set| {
            Ok(InvarianceRow {
                source: set.name.clone(),
                filters: set.filters.shape()[0],
                identity: mean_invariance_diff(&gray, set, direction, Method::Identity)?,
                sampled: mean_invariance_diff(&gray, set, direction, Method::Sampled)?,
                transformed: mean_invariance_diff(&gray, set, direction, Method::Transformed)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(InvarianceReport {
        direction,
        n_images: gray.shape()[0],
        rows,
        pooling: pooling_invariance_diff(&gray, direction)?,
    })
}

/// Max spatial activation of every channel of conv block `block`'s pooled
/// output, per column: `result[col]` is `(n, channels)`.
pub fn max_activations(model: &Model<f32>, split: &DatasetSplit, block: usize, batch: usize) -> Result<Vec<Tensor<f32>>> {
    let cols = model.config().columns.len();
    let mut per_col: Vec<Vec<f32>> = vec![Vec::new(); cols];
    let mut channels = 0;
    for (x, _) in BatchIter::sequential(split, batch.max(1)) {
        for (col, acc) in per_col.iter_mut().enumerate() {
            let y = model.column_pool_output(&x, col, block)?;
            let (_, c, h, w) = y.dims4()?;
            channels = c;
            for map in y.data().chunks(h * w) {
                acc.push(map.iter().copied().fold(f32::NEG_INFINITY, f32::max));
            }
        }
    }
    per_col
        .into_iter()
        .map(|v| Tensor::from_vec(&[split.len(), channels], v))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnTop {
    pub column: String,
    pub ids: Vec<usize>,
    pub values: Vec<f32>,
    /// Scale tags of the top 100 (or all, if fewer).
    pub tag_histogram: BTreeMap<String, usize>,
}

/// Sample ids by descending activation; equal values keep ascending id order.
pub fn rank_samples(values: &[f32]) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..values.len()).collect();
    ids.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    ids
}

/// Top-k samples of one feature per column, from precomputed activations.
pub fn top_from_activations(
    model: &Model<f32>,
    split: &DatasetSplit,
    activations: &[Tensor<f32>],
    feature: usize,
    k: usize,
) -> Result<Vec<ColumnTop>> {
    activations
        .iter()
        .zip(&model.config().columns)
        .map(|(act, spec)| {
            let (n, c) = act.dims2()?;
            if feature >= c {
                return Err(Error::InvalidArgument(format!("feature {feature} of {c}")));
            }
            let values: Vec<f32> = (0..n).map(|i| act[i * c + feature]).collect();
            let ranked = rank_samples(&values);
            let mut tag_histogram = BTreeMap::new();
            for &i in ranked.iter().take(100) {
                *tag_histogram.entry(split.tags[i].name().to_string()).or_insert(0) += 1;
            }
            let ids: Vec<usize> = ranked.into_iter().take(k).collect();
            Ok(ColumnTop {
                column: spec.token(),
                values: ids.iter().map(|&i| values[i]).collect(),
                ids,
                tag_histogram,
            })
        })
        .collect()
}

pub fn top_activations(
    model: &Model<f32>,
    split: &DatasetSplit,
    block: usize,
    feature: usize,
    k: usize,
) -> Result<Vec<ColumnTop>> {
    let act = max_activations(model, split, block, 250)?;
    top_from_activations(model, split, &act, feature, k)
}

/// Binary PPM (P6) mosaic of the chosen samples, `per_row` tiles wide with a
/// one-pixel black gutter.
pub fn write_ppm_grid(path: &Path, split: &DatasetSplit, ids: &[usize], per_row: usize) -> Result<()> {
    let (_, c, h, w) = split.images.dims4()?;
    if c != 3 || per_row == 0 {
        return Err(Error::InvalidArgument("PPM grid needs RGB images and per_row > 0".into()));
    }
    let rows = ids.len().div_ceil(per_row).max(1);
    let (gw, gh) = (per_row * (w + 1) + 1, rows * (h + 1) + 1);
    let mut pixels = vec![0u8; gw * gh * 3];
    for (slot, &id) in ids.iter().enumerate() {
        let (oy, ox) = ((slot / per_row) * (h + 1) + 1, (slot % per_row) * (w + 1) + 1);
        let img = split.image(id);
        for y in 0..h {
            for x in 0..w {
                for ch in 0..3 {
                    let v = img[(ch * h + y) * w + x];
                    pixels[((oy + y) * gw + ox + x) * 3 + ch] = (v * 255.0).round().clamp(0.0, 255.0) as u8;
                }
            }
        }
    }
    let mut out = format!("P6\n{gw} {gh}\n255\n").into_bytes();
    out.extend_from_slice(&pixels);
    std::fs::write(path, out)?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub column: String,
    pub zoom: f64,
    pub value: f64,
}

fn zoom_batch(image: &Tensor<f32>, max_zoom: f64, step: usize) -> Result<(Vec<f64>, Tensor<f32>)> {
    let series = make_object_size_series(image, max_zoom, step)?;
    let zooms = series.iter().map(|s| s.0).collect();
    let mut shape = vec![series.len()];
    shape.extend_from_slice(image.shape());
    let data = series.into_iter().flat_map(|s| s.1.into_data()).collect();
    Ok((zooms, Tensor::from_vec(&shape, data)?))
}

/// Per column, the max activation of last-layer `feature` as the object is
/// zoomed from 1x to 2x in 4-pixel crop steps.
pub fn response_curve(model: &Model<f32>, image: &Tensor<f32>, feature: usize) -> Result<Vec<CurvePoint>> {
    let (zooms, batch) = zoom_batch(image, 2.0, 4)?;
    let last = model.config().conv_layers() - 1;
    let mut points = Vec::new();
    for (col, spec) in model.config().columns.iter().enumerate() {
        let y = model.column_pool_output(&batch, col, last)?;
        let (n, c, h, w) = y.dims4()?;
        if feature >= c {
            return Err(Error::InvalidArgument(format!("feature {feature} of {c}")));
        }
        for (i, &zoom) in zooms.iter().enumerate().take(n) {
            let map = &y.data()[(i * c + feature) * h * w..][..h * w];
            let value = map.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
            points.push(CurvePoint { column: spec.token(), zoom, value });
        }
    }
    Ok(points)
}

/// Softmax probability of `label` at each zoom of the object-size series.
pub fn probability_curve(model: &Model<f32>, image: &Tensor<f32>, label: usize) -> Result<Vec<(f64, f64)>> {
    let (zooms, batch) = zoom_batch(image, 2.0, 4)?;
    let probs = nn::softmax(&model.predict(&batch)?.logits)?;
    let classes = probs.shape()[1];
    if label >= classes {
        return Err(Error::InvalidArgument(format!("label {label} of {classes} classes")));
    }
    Ok(zooms.into_iter().enumerate().map(|(i, z)| (z, probs[i * classes + label] as f64)).collect())
}

pub fn response_csv(points: &[CurvePoint]) -> String {
    let mut s = String::from("column,zoom,max_activation\n");
    for p in points {
        let _ = writeln!(s, "{},{},{}", p.column, p.zoom, p.value);
    }
    s
}

pub fn probability_csv(points: &[(f64, f64)]) -> String {
    let mut s = String::from("zoom,p_correct\n");
    for (z, p) in points {
        let _ = writeln!(s, "{z},{p}");
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ColumnSpec, NetworkConfig};

    fn t(shape: &[usize], v: Vec<f64>) -> Tensor<f64> {
        Tensor::from_vec(shape, v).unwrap()
    }

    #[test]
    fn diff_examples() {
        let x = t(&[2], vec![3.0, 4.0]);
        assert_eq!(diff(&x, &x).unwrap(), 0.0);
        assert!((diff(&x, &t(&[2], vec![6.0, 8.0])).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(diff(&x, &t(&[2], vec![0.0, 0.0])).unwrap(), 1.0);
        assert!(matches!(diff(&t(&[2], vec![0.0, 0.0]), &x), Err(Error::UndefinedMetric(_))));
        assert!(diff(&x, &t(&[3], vec![0.0; 3])).is_err());
    }

    #[test]
    fn sampled_filter_keeps_l1_mass() {
        let c = Tensor::full(&[5, 5], 0.3);
        let up = sample_scale_filter(&c, 9).unwrap();
        let v0 = up[0];
        assert!(up.data().iter().all(|v| (v - v0).abs() < 1e-12));
        assert!((up.data().iter().sum::<f64>() - 7.5).abs() < 1e-9);

        let f = Tensor::from_fn(&[5, 5], |i| ((i * 7) % 11) as f64 - 5.0);
        for target in [3, 7, 9] {
            let g = sample_scale_filter(&f, target).unwrap();
            let l1 = |t: &Tensor<f64>| t.data().iter().map(|v| v.abs()).sum::<f64>();
            assert!((l1(&g) - l1(&f)).abs() < 1e-9);
        }
        assert!(matches!(sample_scale_filter(&Tensor::zeros(&[5, 5]), 3), Err(Error::UndefinedMetric(_))));
    }

    #[test]
    fn delta_filter_scaled_down_is_a_centered_bump() {
        let mut delta = Tensor::zeros(&[5, 5]);
        delta[12] = 1.0;
        let g = sample_scale_filter(&delta, 3).unwrap();
        // Direct evaluation on the align-centers grid: output 1 lands exactly
        // on input 2 (weight 1), outputs 0 and 2 sit 5/3 pixels away from it.
        let edge = crate::scaling::keys_kernel(5.0 / 3.0);
        let mass = 1.0 + 4.0 * edge.abs() + 4.0 * edge * edge;
        let want = [edge * edge, edge, edge * edge, edge, 1.0, edge, edge * edge, edge, edge * edge];
        for (got, w) in g.data().iter().zip(want) {
            assert!((got - w / mass).abs() < 1e-12);
        }
        // The Keys kernel's negative lobe leaves small negative side taps;
        // the center carries almost all of the mass.
        assert!(g[4] > 0.85 && g.data().iter().all(|v| v.abs() <= g[4]));
        assert!((g.data().iter().map(|v| v.abs()).sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constant_image_is_a_fixed_point_for_the_transform() {
        let images = Tensor::full(&[2, 3, 32, 32], 0.4f32);
        let gray = grayscale(&images).unwrap();
        let set = FilterSet::random(4, 1);
        for dir in [Direction::ScaleUp, Direction::ScaleDown] {
            let d = mean_invariance_diff(&gray, &set, dir, Method::Transformed).unwrap();
            assert!(d < 1e-6, "{dir:?}: {d}");
        }
        assert!(pooling_invariance_diff(&gray, Direction::ScaleUp).unwrap() < 1e-12);
    }

    #[test]
    fn center_crop_alignment_is_exact_for_linear_ramps() {
        // Bicubic resampling reproduces linear functions away from the
        // borders, so both sides of the comparison agree on a ramp whenever
        // the maps are aligned; an off-by-one crop would show a constant gap.
        let ramp = Tensor::from_fn(&[1, 3, 32, 32], |i| ((i % 32) as f32 + 2.0 * ((i / 32) % 32) as f32) / 100.0);
        let gray = grayscale(&ramp).unwrap();
        let mut delta = Tensor::zeros(&[1, 1, 5, 5]);
        delta[12] = 1.0;
        let set = FilterSet { name: "delta".into(), filters: delta };
        let g = gray;
        for dir in [Direction::ScaleUp, Direction::ScaleDown] {
            let d = mean_invariance_diff(&g, &set, dir, Method::Identity).unwrap();
            // A one-pixel misalignment would cost about 1e-2 here; the
            // residual left is border clamping in the scale-up path.
            assert!(d < 4e-3, "{dir:?}: {d}");
        }
    }

    #[test]
    fn ranking_breaks_ties_by_id() {
        assert_eq!(rank_samples(&[1.0, 3.0, 3.0, 2.0]), vec![1, 2, 3, 0]);
    }

    fn probe_model() -> Model<f32> {
        let mut cfg = NetworkConfig::baseline();
        cfg.conv_channels = vec![3, 3, 4];
        cfg.columns = ["3", "5", "7"].iter().map(|t| ColumnSpec::parse(t, 3).unwrap()).collect();
        Model::build(cfg, 1).unwrap()
    }

    #[test]
    fn top_activations_with_large_k_returns_everything() {
        let model = probe_model();
        let split = crate::data::synth::generate_split(12, 4);
        let tops = top_activations(&model, &split, 2, 1, 50).unwrap();
        assert_eq!(tops.len(), 3);
        for top in &tops {
            assert_eq!(top.ids.len(), 12);
            assert!(top.values.windows(2).all(|w| w[0] >= w[1]));
            assert_eq!(top.tag_histogram.get("original"), Some(&12));
        }
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("grid.ppm");
        write_ppm_grid(&path, &split, &tops[0].ids[..5], 4).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        let header = b"P6\n133 67\n255\n";
        assert_eq!(&bytes[..header.len()], header);
        assert_eq!(bytes.len(), header.len() + 133 * 67 * 3);
    }

    #[test]
    fn duplicate_images_rank_by_id() {
        let model = probe_model();
        let one = crate::data::synth::generate_split(1, 4);
        let split = DatasetSplit::concat(&[&one, &one, &one]).unwrap();
        let tops = top_activations(&model, &split, 0, 0, 3).unwrap();
        assert_eq!(tops[0].ids, vec![0, 1, 2]);
    }

    #[test]
    fn curves_on_constant_images_are_flat() {
        let model = probe_model();
        let image = Tensor::full(&[3, 32, 32], 0.5f32);
        let pts = response_curve(&model, &image, 0).unwrap();
        assert_eq!(pts.len(), 15);
        for col in ["3", "5", "7"] {
            let vals: Vec<f64> = pts.iter().filter(|p| p.column == col).map(|p| p.value).collect();
            assert_eq!(vals.len(), 5);
            assert!(vals.iter().all(|v| (v - vals[0]).abs() < 1e-5));
        }
        assert!(response_csv(&pts).starts_with("column,zoom,max_activation\n3,1,"));
    }

    #[test]
    fn probability_curve_starts_at_plain_inference() {
        let model = probe_model();
        let image = crate::data::synth::generate_split(1, 9).image(0);
        let curve = probability_curve(&model, &image, 2).unwrap();
        assert_eq!(curve.len(), 5);
        let logits = model.predict(&image.clone().reshape(&[1, 3, 32, 32]).unwrap()).unwrap().logits;
        let p = nn::softmax(&logits).unwrap();
        assert_eq!(curve[0], (1.0, p[2] as f64));

        let mut uniform = probe_model();
        uniform.fc_weights = Tensor::zeros(uniform.fc_weights.shape());
        for (_, p) in probability_curve(&uniform, &image, 2).unwrap() {
            assert!((p - 0.1).abs() < 1e-6);
        }
        assert!(probability_csv(&curve).starts_with("zoom,p_correct\n1,"));
    }
}
