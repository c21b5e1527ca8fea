//! Multi-column network with tied conv layers and a single softmax classifier.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::config::NetworkConfig;
use super::tied::TiedConvLayer;
use crate::error::{shape_err, Error, Result};
use crate::nn::{self, LayerSpec};
use crate::tensor::{Scalar, Tensor};
use crate::transform::gather_gradient;

/// Free parameters (or a gradient / velocity shaped like them).
#[derive(Debug, Clone, PartialEq)]
pub struct Params<T: Scalar> {
    pub conv_filters: Vec<Tensor<T>>,
    pub conv_bias: Vec<Tensor<T>>,
    pub fc_weights: Tensor<T>,
    pub fc_bias: Tensor<T>,
}

pub type CanonicalGradients<T> = Params<T>;

impl<T: Scalar> Params<T> {
    pub fn zeros_like(other: &Params<T>) -> Self {
        Params {
            conv_filters: other.conv_filters.iter().map(|t| Tensor::zeros(t.shape())).collect(),
            conv_bias: other.conv_bias.iter().map(|t| Tensor::zeros(t.shape())).collect(),
            fc_weights: Tensor::zeros(other.fc_weights.shape()),
            fc_bias: Tensor::zeros(other.fc_bias.shape()),
        }
    }

    pub fn tensors(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.conv_filters
            .iter()
            .chain(&self.conv_bias)
            .chain([&self.fc_weights, &self.fc_bias])
    }

    pub fn max_abs(&self) -> T {
        self.tensors().fold(T::zero(), |m, t| m.max(t.max_abs()))
    }
}

#[derive(Debug, Clone)]
pub struct ForwardOutput<T: Scalar> {
    pub logits: Tensor<T>,
    /// Final `(n, c, h, w)` map of every column, in column order.
    pub column_features: Vec<Tensor<T>>,
}

#[derive(Debug, Clone)]
enum StageCache<T: Scalar> {
    Conv { input: Tensor<T> },
    Relu { output: Tensor<T> },
    MaxPool { argmax: Vec<u32>, input_shape: Vec<usize> },
    AvgPool { input_shape: Vec<usize> },
    Lrn { input: Tensor<T>, scale: Tensor<T> },
}

#[derive(Debug, Clone)]
struct ForwardCache<T: Scalar> {
    features: Tensor<T>,
    columns: Vec<Vec<StageCache<T>>>,
    column_shapes: Vec<Vec<usize>>,
}

/// Which parameters an update touches.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UpdateScope {
    All,
    /// Conv parameters frozen; only the classifier moves.
    ClassifierOnly,
}

#[derive(Debug, Clone)]
pub struct Model<T: Scalar = f32> {
    config: NetworkConfig,
    pub layers: Vec<TiedConvLayer<T>>,
    pub fc_weights: Tensor<T>,
    pub fc_bias: Tensor<T>,
    pub(crate) velocity: Params<T>,
    pub(crate) input_mean: Option<Tensor<T>>,
    pub(crate) epochs_done: usize,
    synced: bool,
    cache: Option<ForwardCache<T>>,
}

impl<T: Scalar> Model<T> {
    /// Gaussian-initialized network; biases start at zero.
    pub fn build(config: NetworkConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut gaussian = |shape: &[usize], std: f64| -> Result<Tensor<T>> {
            let dist = Normal::new(0.0, std)
                .map_err(|e| Error::Config(format!("init std {std}: {e}")))?;
            Ok(Tensor::from_fn(shape, |_| T::lit(dist.sample(&mut rng))))
        };
        let mut canonical = Vec::new();
        for l in 0..config.conv_layers() {
            let (k, c, s) = (config.conv_channels[l], config.conv_in_channels(l), config.canonical_side);
            canonical.push((gaussian(&[k, c, s, s], config.init_std_conv)?, Tensor::zeros(&[k])));
        }
        let features = config.feature_len()?;
        let fc_weights = gaussian(&[config.classes, features], config.init_std_fc)?;
        let fc_bias = Tensor::zeros(&[config.classes]);
        Self::from_parts(config, canonical, fc_weights, fc_bias)
    }

    /// Assembles a model from canonical parameters; columns are materialized.
    pub fn from_parts(
        config: NetworkConfig,
        canonical: Vec<(Tensor<T>, Tensor<T>)>,
        fc_weights: Tensor<T>,
        fc_bias: Tensor<T>,
    ) -> Result<Self> {
        config.validate()?;
        if canonical.len() != config.conv_layers() {
            return Err(Error::Config(format!(
                "{} canonical layers for {} conv layers",
                canonical.len(),
                config.conv_layers()
            )));
        }
        let mut layers = Vec::with_capacity(canonical.len());
        for (l, (filters, bias)) in canonical.into_iter().enumerate() {
            let (k, c, s) = (config.conv_channels[l], config.conv_in_channels(l), config.canonical_side);
            if filters.shape() != [k, c, s, s] || bias.shape() != [k] {
                return Err(Error::Config(format!(
                    "conv layer {l}: filters {:?} / bias {:?}, expected [{k}, {c}, {s}, {s}] / [{k}]",
                    filters.shape(),
                    bias.shape()
                )));
            }
            let sides: Vec<(usize, bool)> = config
                .columns
                .iter()
                .map(|col| (col.filter_sides[l], col.flipped))
                .collect();
            layers.push(TiedConvLayer::new(filters, bias, &sides)?);
        }
        let features = config.feature_len()?;
        if fc_weights.shape() != [config.classes, features] || fc_bias.shape() != [config.classes] {
            return Err(Error::Config(format!(
                "classifier {:?} / {:?}, expected [{}, {features}] / [{}]",
                fc_weights.shape(),
                fc_bias.shape(),
                config.classes,
                config.classes
            )));
        }
        let mut model = Model {
            config,
            layers,
            fc_weights,
            fc_bias,
            velocity: Params {
                conv_filters: vec![],
                conv_bias: vec![],
                fc_weights: Tensor::zeros(&[1]),
                fc_bias: Tensor::zeros(&[1]),
            },
            input_mean: None,
            epochs_done: 0,
            synced: true,
            cache: None,
        };
        model.velocity = Params::zeros_like(&model.params());
        Ok(model)
    }

    /// Adopts a trained single-column model's canonical filters into the
    /// column set of `config`. The classifier block of every canonical column
    /// copies the source classifier; other blocks start at zero.
    pub fn expand_from(source: &Model<T>, config: NetworkConfig) -> Result<Self> {
        let src = source.config();
        let same_trunk = src.input_channels == config.input_channels
            && src.input_size == config.input_size
            && src.classes == config.classes
            && src.canonical_side == config.canonical_side
            && src.conv_channels == config.conv_channels;
        if !same_trunk {
            return Err(Error::Config(
                "expansion needs identical input, classes and conv channels".into(),
            ));
        }
        let canonical: Vec<_> = source
            .layers
            .iter()
            .map(|l| (l.canonical_filters.clone(), l.canonical_bias.clone()))
            .collect();
        let src_canonical = src
            .columns
            .iter()
            .position(|c| c.is_canonical(src.canonical_side))
            .ok_or_else(|| Error::Config("source model has no canonical column".into()))?;
        let src_offset: usize = (0..src_canonical)
            .map(|c| src.column_feature_len(c))
            .sum::<Result<usize>>()?;
        let block = src.column_feature_len(src_canonical)?;
        let features = config.feature_len()?;
        let mut fc_weights = Tensor::zeros(&[config.classes, features]);
        let mut offset = 0;
        for c in 0..config.columns.len() {
            let len = config.column_feature_len(c)?;
            if config.columns[c].is_canonical(config.canonical_side) && len == block {
                for k in 0..config.classes {
                    let from = &source.fc_weights.data()[k * src.feature_len()? + src_offset..][..block];
                    fc_weights.data_mut()[k * features + offset..][..block].copy_from_slice(from);
                }
            }
            offset += len;
        }
        let mut model = Self::from_parts(config, canonical, fc_weights, source.fc_bias.clone())?;
        model.input_mean = source.input_mean.clone();
        Ok(model)
    }

    pub fn config(&self) -> &NetworkConfig {
        &self.config
    }

    pub fn epochs_done(&self) -> usize {
        self.epochs_done
    }

    pub fn set_epochs_done(&mut self, epochs: usize) {
        self.epochs_done = epochs;
    }

    pub fn input_mean(&self) -> Option<&Tensor<T>> {
        self.input_mean.as_ref()
    }

    /// Per-pixel mean subtracted from every input before the first layer.
    pub fn set_input_mean(&mut self, mean: Option<Tensor<T>>) -> Result<()> {
        if let Some(m) = &mean {
            let c = &self.config;
            if m.shape() != [c.input_channels, c.input_size, c.input_size] {
                return shape_err(format!("input mean shape {:?}", m.shape()));
            }
        }
        self.input_mean = mean;
        Ok(())
    }

    pub fn velocity(&self) -> &Params<T> {
        &self.velocity
    }

    pub fn conv_free_params(&self) -> usize {
        self.layers.iter().map(TiedConvLayer::free_params).sum()
    }

    pub fn params(&self) -> Params<T> {
        Params {
            conv_filters: self.layers.iter().map(|l| l.canonical_filters.clone()).collect(),
            conv_bias: self.layers.iter().map(|l| l.canonical_bias.clone()).collect(),
            fc_weights: self.fc_weights.clone(),
            fc_bias: self.fc_bias.clone(),
        }
    }

    /// Mutable canonical filters of layer `l`; the model is unsynced until [`Model::sync`].
    pub fn canonical_filters_mut(&mut self, l: usize) -> &mut Tensor<T> {
        self.synced = false;
        self.cache = None;
        &mut self.layers[l].canonical_filters
    }

    pub fn canonical_bias_mut(&mut self, l: usize) -> &mut Tensor<T> {
        self.cache = None;
        &mut self.layers[l].canonical_bias
    }

    pub fn is_synced(&self) -> bool {
        self.synced
    }

    pub fn sync(&mut self) -> Result<()> {
        for layer in &mut self.layers {
            layer.sync()?;
        }
        self.synced = true;
        Ok(())
    }

    fn check_batch(&self, batch: &Tensor<T>) -> Result<usize> {
        let (n, c, h, w) = batch.dims4()?;
        let cfg = &self.config;
        if c != cfg.input_channels || h != cfg.input_size || w != cfg.input_size {
            return shape_err(format!(
                "batch {:?} does not match input ({}, {}, {})",
                batch.shape(),
                cfg.input_channels,
                cfg.input_size,
                cfg.input_size
            ));
        }
        if !self.synced {
            return Err(Error::State(
                "column filters are stale; call sync() after editing canonical filters".into(),
            ));
        }
        Ok(n)
    }

    fn preprocess(&self, batch: &Tensor<T>) -> Tensor<T> {
        let mut x = batch.clone();
        if let Some(mean) = &self.input_mean {
            for sample in x.data_mut().chunks_mut(mean.len()) {
                for (v, &m) in sample.iter_mut().zip(mean.data()) {
                    *v -= m;
                }
            }
        }
        x
    }

    /// Runs column `col` over stages `0..=last_stage`.
    fn run_column(
        &self,
        col: usize,
        mut x: Tensor<T>,
        last_stage: usize,
        mut record: Option<&mut Vec<StageCache<T>>>,
    ) -> Result<Tensor<T>> {
        for spec in self.config.column_layers(col).into_iter().take(last_stage + 1) {
            let (y, entry) = match spec {
                LayerSpec::Conv { layer, stride, pad, .. } => {
                    let tied = &self.layers[layer];
                    let y = nn::conv_forward(&x, &tied.columns[col].filters, &tied.canonical_bias, stride, pad)?;
                    (y, StageCache::Conv { input: x })
                }
                LayerSpec::ReLU => {
                    let y = nn::relu_forward(&x);
                    let output = if record.is_some() { y.clone() } else { Tensor::zeros(&[1]) };
                    (y, StageCache::Relu { output })
                }
                LayerSpec::MaxPool { side, stride } => {
                    let (y, argmax) = nn::maxpool_forward(&x, side, stride)?;
                    (y, StageCache::MaxPool { argmax, input_shape: x.shape().to_vec() })
                }
                LayerSpec::AvgPool { side, stride } => {
                    let y = nn::avgpool_forward(&x, side, stride)?;
                    (y, StageCache::AvgPool { input_shape: x.shape().to_vec() })
                }
                LayerSpec::LRN(p) => {
                    let (y, scale) = nn::lrn_forward(&x, &p)?;
                    (y, StageCache::Lrn { input: x, scale })
                }
                LayerSpec::Softmax => {
                    return Err(Error::Config("softmax inside a column stack".into()));
                }
            };
            if let Some(r) = record.as_deref_mut() {
                r.push(entry);
            }
            x = y;
        }
        Ok(x)
    }

    fn run(&self, batch: &Tensor<T>, record: bool) -> Result<(ForwardOutput<T>, Option<ForwardCache<T>>)> {
        let n = self.check_batch(batch)?;
        let x = self.preprocess(batch);
        let last = 4 * self.config.conv_layers() - 1;
        let mut column_features = Vec::with_capacity(self.config.columns.len());
        let mut caches = Vec::new();
        for col in 0..self.config.columns.len() {
            let mut cache = Vec::new();
            let out = self.run_column(col, x.clone(), last, record.then_some(&mut cache))?;
            column_features.push(out);
            caches.push(cache);
        }
        let features = concat_features(&column_features, n)?;
        let logits = nn::linear_forward(&features, &self.fc_weights, &self.fc_bias)?;
        let cache = record.then(|| ForwardCache {
            features,
            column_shapes: column_features.iter().map(|t| t.shape().to_vec()).collect(),
            columns: caches,
        });
        Ok((ForwardOutput { logits, column_features }, cache))
    }

    /// Training forward pass; caches what [`Model::backward`] needs.
    pub fn forward(&mut self, batch: &Tensor<T>) -> Result<ForwardOutput<T>> {
        self.cache = None;
        let (out, cache) = self.run(batch, true)?;
        self.cache = cache;
        Ok(out)
    }

    /// Read-only inference.
    pub fn predict(&self, batch: &Tensor<T>) -> Result<ForwardOutput<T>> {
        Ok(self.run(batch, false)?.0)
    }

    /// Concatenated per-sample column features `(n, feature_len)`, the input
    /// of the classifier.
    pub fn features(&self, batch: &Tensor<T>) -> Result<Tensor<T>> {
        let n = self.check_batch(batch)?;
        let x = self.preprocess(batch);
        let last = 4 * self.config.conv_layers() - 1;
        let cols = (0..self.config.columns.len())
            .map(|col| self.run_column(col, x.clone(), last, None))
            .collect::<Result<Vec<_>>>()?;
        concat_features(&cols, n)
    }

    /// Output of conv block `block`'s pooling stage in column `col`.
    pub fn column_pool_output(&self, batch: &Tensor<T>, col: usize, block: usize) -> Result<Tensor<T>> {
        self.check_batch(batch)?;
        if col >= self.config.columns.len() || block >= self.config.conv_layers() {
            return Err(Error::InvalidArgument(format!("no column {col} / block {block}")));
        }
        self.run_column(col, self.preprocess(batch), 4 * block + 2, None)
    }

    /// Back-propagates through the classifier and every column, then gathers
    /// each column's filter gradient into the canonical filters with `Q^T`.
    pub fn backward(&mut self, grad_logits: &Tensor<T>) -> Result<CanonicalGradients<T>> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::State("backward called without a cached forward pass".into()))?;
        let fc = nn::linear_backward(&cache.features, &self.fc_weights, grad_logits)?;
        let mut grads = Params {
            conv_filters: self.layers.iter().map(|l| Tensor::zeros(l.canonical_filters.shape())).collect(),
            conv_bias: self.layers.iter().map(|l| Tensor::zeros(l.canonical_bias.shape())).collect(),
            fc_weights: fc.weights,
            fc_bias: fc.bias,
        };
        let column_grads = split_features(&fc.input, &cache.column_shapes)?;
        for (col, (stages, mut g)) in cache.columns.into_iter().zip(column_grads).enumerate() {
            let specs = self.config.column_layers(col);
            for (stage, (spec, entry)) in specs.iter().zip(stages).enumerate().rev() {
                g = match (spec, entry) {
                    (&LayerSpec::Conv { layer, stride, pad, .. }, StageCache::Conv { input }) => {
                        let tied = &self.layers[layer];
                        let mat = &tied.columns[col];
                        let cg = nn::conv_backward(&input, &mat.filters, &g, stride, pad, stage > 0)?;
                        let gathered = if mat.transform.is_identity() {
                            cg.filters
                        } else {
                            gather_gradient(&mat.transform, &cg.filters)?
                        };
                        grads.conv_filters[layer].add_scaled(T::one(), &gathered);
                        grads.conv_bias[layer].add_scaled(T::one(), &cg.bias);
                        match cg.input {
                            Some(dx) => dx,
                            None => break,
                        }
                    }
                    (LayerSpec::ReLU, StageCache::Relu { output }) => nn::relu_backward(&output, &g)?,
                    (LayerSpec::MaxPool { .. }, StageCache::MaxPool { argmax, input_shape }) => {
                        nn::maxpool_backward(&g, &argmax, &input_shape)?
                    }
                    (&LayerSpec::AvgPool { side, stride }, StageCache::AvgPool { input_shape }) => {
                        nn::avgpool_backward(&g, &input_shape, side, stride)?
                    }
                    (LayerSpec::LRN(p), StageCache::Lrn { input, scale }) => nn::lrn_backward(&input, &scale, &g, p)?,
                    _ => return Err(Error::State("forward cache does not match layer stack".into())),
                };
            }
        }
        Ok(grads)
    }

    /// Momentum SGD on the free parameters, then re-materializes every column.
    ///
    /// `v <- momentum * v - lr * (g + weight_decay * w)`, `w <- w + v`; biases
    /// are not decayed. Under [`UpdateScope::ClassifierOnly`] conv parameters
    /// and their velocities are left untouched.
    pub fn apply_update(
        &mut self,
        grads: &CanonicalGradients<T>,
        lr: f64,
        momentum: f64,
        weight_decay: f64,
        scope: UpdateScope,
    ) -> Result<()> {
        let (lr, mu, wd) = (T::lit(lr), T::lit(momentum), T::lit(weight_decay));
        let step = |w: &mut Tensor<T>, v: &mut Tensor<T>, g: &Tensor<T>, decay: T| -> Result<()> {
            if w.shape() != g.shape() {
                return shape_err(format!("gradient {:?} for parameter {:?}", g.shape(), w.shape()));
            }
            for ((w, v), &g) in w.data_mut().iter_mut().zip(v.data_mut()).zip(g.data()) {
                *v = mu * *v - lr * (g + decay * *w);
                *w += *v;
            }
            Ok(())
        };
        if scope == UpdateScope::All {
            for (l, layer) in self.layers.iter_mut().enumerate() {
                step(&mut layer.canonical_filters, &mut self.velocity.conv_filters[l], &grads.conv_filters[l], wd)?;
                step(&mut layer.canonical_bias, &mut self.velocity.conv_bias[l], &grads.conv_bias[l], T::zero())?;
            }
        }
        step(&mut self.fc_weights, &mut self.velocity.fc_weights, &grads.fc_weights, wd)?;
        step(&mut self.fc_bias, &mut self.velocity.fc_bias, &grads.fc_bias, T::zero())?;
        self.cache = None;
        if scope == UpdateScope::All {
            self.sync()?;
        }
        Ok(())
    }

    /// Same architecture and parameters in another precision.
    pub fn cast<U: Scalar>(&self) -> Model<U> {
        let cast_params = |p: &Params<T>| Params {
            conv_filters: p.conv_filters.iter().map(Tensor::cast).collect(),
            conv_bias: p.conv_bias.iter().map(Tensor::cast).collect(),
            fc_weights: p.fc_weights.cast(),
            fc_bias: p.fc_bias.cast(),
        };
        let canonical = self
            .layers
            .iter()
            .map(|l| (l.canonical_filters.cast(), l.canonical_bias.cast()))
            .collect();
        let mut m = Model::from_parts(self.config.clone(), canonical, self.fc_weights.cast(), self.fc_bias.cast())
            .expect("a valid model casts to a valid model");
        m.velocity = cast_params(&self.velocity);
        m.input_mean = self.input_mean.as_ref().map(Tensor::cast);
        m.epochs_done = self.epochs_done;
        m
    }
}

/// Flattens each column's maps and lays them side by side per sample.
fn concat_features<T: Scalar>(columns: &[Tensor<T>], n: usize) -> Result<Tensor<T>> {
    let lens: Vec<usize> = columns.iter().map(|t| t.len() / n.max(1)).collect();
    let total: usize = lens.iter().sum();
    let mut out = Vec::with_capacity(n * total);
    for b in 0..n {
        for (t, &len) in columns.iter().zip(&lens) {
            out.extend_from_slice(&t.data()[b * len..(b + 1) * len]);
        }
    }
    Tensor::from_vec(&[n, total], out)
}

fn split_features<T: Scalar>(features: &Tensor<T>, shapes: &[Vec<usize>]) -> Result<Vec<Tensor<T>>> {
    let (n, total) = features.dims2()?;
    let lens: Vec<usize> = shapes.iter().map(|s| s[1..].iter().product()).collect();
    let mut parts: Vec<Vec<T>> = lens.iter().map(|&l| Vec::with_capacity(n * l)).collect();
    for row in features.data().chunks(total) {
        let mut off = 0;
        for (p, &len) in parts.iter_mut().zip(&lens) {
            p.extend_from_slice(&row[off..off + len]);
            off += len;
        }
    }
    parts
        .into_iter()
        .zip(shapes)
        .map(|(p, s)| Tensor::from_vec(s, p))
        .collect()
}
