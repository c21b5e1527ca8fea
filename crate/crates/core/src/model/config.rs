//! Network description and its plain `key=value` text form.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{LayerSpec, LrnParams};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum PoolKind {
    Max,
    Avg,
}

/// Filter sides of one column, one per conv layer, and whether it mirrors.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub filter_sides: Vec<usize>,
    pub flipped: bool,
    pub pad_per_layer: Vec<usize>,
}

impl ColumnSpec {
    /// Same-padded column using `side` in every one of `layers` conv layers.
    pub fn uniform(side: usize, layers: usize, flipped: bool) -> Self {
        Self::with_sides(vec![side; layers], flipped)
    }

    pub fn with_sides(filter_sides: Vec<usize>, flipped: bool) -> Self {
        let pad_per_layer = filter_sides.iter().map(|s| s.saturating_sub(1) / 2).collect();
        ColumnSpec {
            filter_sides,
            flipped,
            pad_per_layer,
        }
    }

    /// Text token: sides joined by `:` with an `f` suffix when flipped, e.g. `7f`.
    pub fn token(&self) -> String {
        let sides: Vec<String> = self.filter_sides.iter().map(|s| s.to_string()).collect();
        let mut t = if sides.iter().all(|s| s == &sides[0]) {
            sides[0].clone()
        } else {
            sides.join(":")
        };
        if self.flipped {
            t.push('f');
        }
        t
    }

    pub fn parse(token: &str, layers: usize) -> Result<Self> {
        let token = token.trim();
        let (body, flipped) = match token.strip_suffix('f') {
            Some(b) => (b, true),
            None => (token, false),
        };
        let sides: Vec<usize> = body
            .split(':')
            .map(|s| {
                s.parse()
                    .map_err(|_| Error::Config(format!("bad column token `{token}`")))
            })
            .collect::<Result<_>>()?;
        let sides = match sides.len() {
            1 => vec![sides[0]; layers],
            n if n == layers => sides,
            n => {
                return Err(Error::Config(format!(
                    "column `{token}` lists {n} sides for {layers} layers"
                )))
            }
        };
        Ok(Self::with_sides(sides, flipped))
    }

    /// The canonical column: canonical side everywhere, not flipped.
    pub fn is_canonical(&self, canonical_side: usize) -> bool {
        !self.flipped && self.filter_sides.iter().all(|&s| s == canonical_side)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkConfig {
    pub input_channels: usize,
    pub input_size: usize,
    pub classes: usize,
    pub canonical_side: usize,
    pub conv_stride: usize,
    /// Output channels of each tied conv layer.
    pub conv_channels: Vec<usize>,
    /// Pool kind following each conv layer.
    pub pools: Vec<PoolKind>,
    pub pool_side: usize,
    pub pool_stride: usize,
    pub lrn: LrnParams,
    pub columns: Vec<ColumnSpec>,
    pub init_std_conv: f64,
    pub init_std_fc: f64,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        Self::sicnn6()
    }
}

impl NetworkConfig {
    /// One canonical 5x5 column.
    pub fn baseline() -> Self {
        NetworkConfig {
            input_channels: 3,
            input_size: 32,
            classes: 10,
            canonical_side: 5,
            conv_stride: 1,
            conv_channels: vec![32, 32, 64],
            pools: vec![PoolKind::Max, PoolKind::Avg, PoolKind::Avg],
            pool_side: 3,
            pool_stride: 2,
            lrn: LrnParams::default(),
            columns: vec![ColumnSpec::uniform(5, 3, false)],
            init_std_conv: 0.01,
            init_std_fc: 0.01,
            lr: 0.001,
            momentum: 0.9,
            weight_decay: 0.004,
            batch_size: 128,
        }
    }

    /// Columns 3, 5, 7 and their mirrored twins, tied to the 5x5 column.
    pub fn sicnn6() -> Self {
        Self::baseline().with_columns(&[3, 5, 7], true)
    }

    /// Replaces the column set with `sides`, optionally followed by flipped twins.
    pub fn with_columns(mut self, sides: &[usize], add_flipped: bool) -> Self {
        let layers = self.conv_channels.len();
        let mut cols: Vec<ColumnSpec> = sides
            .iter()
            .map(|&s| ColumnSpec::uniform(s, layers, false))
            .collect();
        if add_flipped {
            cols.extend(sides.iter().map(|&s| ColumnSpec::uniform(s, layers, true)));
        }
        self.columns = cols;
        self
    }

    pub fn conv_layers(&self) -> usize {
        self.conv_channels.len()
    }

    /// Input channels of tied conv layer `l`.
    pub fn conv_in_channels(&self, l: usize) -> usize {
        if l == 0 {
            self.input_channels
        } else {
            self.conv_channels[l - 1]
        }
    }

    /// Layer stack of column `col`: conv, ReLU, pool, LRN per tied layer.
    pub fn column_layers(&self, col: usize) -> Vec<LayerSpec> {
        let spec = &self.columns[col];
        let mut out = Vec::with_capacity(4 * self.conv_layers());
        for l in 0..self.conv_layers() {
            out.push(LayerSpec::Conv {
                layer: l,
                side: spec.filter_sides[l],
                stride: self.conv_stride,
                pad: spec.pad_per_layer[l],
                in_channels: self.conv_in_channels(l),
                out_channels: self.conv_channels[l],
            });
            out.push(LayerSpec::ReLU);
            out.push(match self.pools[l] {
                PoolKind::Max => LayerSpec::MaxPool {
                    side: self.pool_side,
                    stride: self.pool_stride,
                },
                PoolKind::Avg => LayerSpec::AvgPool {
                    side: self.pool_side,
                    stride: self.pool_stride,
                },
            });
            out.push(LayerSpec::LRN(self.lrn));
        }
        out
    }

    /// Final map shape `(channels, h, w)` of column `col`.
    pub fn column_output_dims(&self, col: usize) -> Result<(usize, usize, usize)> {
        let mut dims = (self.input_channels, self.input_size, self.input_size);
        for (i, layer) in self.column_layers(col).iter().enumerate() {
            dims = layer.output_dims(dims).map_err(|e| {
                Error::Config(format!("column {col} stage {i} (conv layer {}): {e}", i / 4))
            })?;
        }
        Ok(dims)
    }

    pub fn column_feature_len(&self, col: usize) -> Result<usize> {
        let (c, h, w) = self.column_output_dims(col)?;
        Ok(c * h * w)
    }

    pub fn feature_len(&self) -> Result<usize> {
        (0..self.columns.len()).map(|c| self.column_feature_len(c)).sum()
    }

    /// Free conv parameters: canonical filters plus one bias per filter.
    pub fn conv_free_params(&self) -> usize {
        (0..self.conv_layers())
            .map(|l| {
                let k = self.conv_channels[l];
                k * self.conv_in_channels(l) * self.canonical_side.pow(2) + k
            })
            .sum()
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.input_channels == 0 || self.input_size == 0 || self.classes == 0 {
            return err("input channels, input size and classes must be positive".into());
        }
        if self.conv_channels.is_empty() || self.conv_channels.contains(&0) {
            return err("every conv layer needs at least one channel".into());
        }
        if self.pools.len() != self.conv_layers() {
            return err(format!(
                "{} pool kinds for {} conv layers",
                self.pools.len(),
                self.conv_layers()
            ));
        }
        if self.canonical_side == 0 || self.canonical_side % 2 == 0 {
            return err(format!("canonical side {} must be odd", self.canonical_side));
        }
        if self.columns.is_empty() {
            return err("at least one column is required".into());
        }
        for (i, col) in self.columns.iter().enumerate() {
            if col.filter_sides.len() != self.conv_layers()
                || col.pad_per_layer.len() != self.conv_layers()
            {
                return err(format!("column {i} does not list one side per conv layer"));
            }
            for (l, (&s, &p)) in col.filter_sides.iter().zip(&col.pad_per_layer).enumerate() {
                if s == 0 || s % 2 == 0 {
                    return err(format!("column {i} layer {l}: filter side {s} must be odd"));
                }
                if p != (s - 1) / 2 {
                    return err(format!("column {i} layer {l}: pad {p} is not same-padding"));
                }
            }
            self.column_output_dims(i)?;
        }
        if !(self.momentum >= 0.0 && self.momentum < 1.0) {
            return err(format!("momentum {} outside [0, 1)", self.momentum));
        }
        if self.batch_size == 0 {
            return err("batch size must be positive".into());
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let list = |v: &[usize]| {
            v.iter()
                .map(|x| x.to_string())
                .collect::<Vec<_>>()
                .join(",")
        };
        let pools: Vec<&str> = self
            .pools
            .iter()
            .map(|p| match p {
                PoolKind::Max => "max",
                PoolKind::Avg => "avg",
            })
            .collect();
        let cols: Vec<String> = self.columns.iter().map(ColumnSpec::token).collect();
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k}={v}");
        };
        kv("input_channels", self.input_channels.to_string());
        kv("input_size", self.input_size.to_string());
        kv("classes", self.classes.to_string());
        kv("canonical_side", self.canonical_side.to_string());
        kv("conv_stride", self.conv_stride.to_string());
        kv("conv_channels", list(&self.conv_channels));
        kv("pools", pools.join(","));
        kv("pool_side", self.pool_side.to_string());
        kv("pool_stride", self.pool_stride.to_string());
        kv("lrn_depth_radius", self.lrn.depth_radius.to_string());
        kv("lrn_alpha", format!("{:?}", self.lrn.alpha));
        kv("lrn_beta", format!("{:?}", self.lrn.beta));
        kv("lrn_k", format!("{:?}", self.lrn.k));
        kv("columns", cols.join(","));
        kv("init_std_conv", format!("{:?}", self.init_std_conv));
        kv("init_std_fc", format!("{:?}", self.init_std_fc));
        kv("lr", format!("{:?}", self.lr));
        kv("momentum", format!("{:?}", self.momentum));
        kv("weight_decay", format!("{:?}", self.weight_decay));
        kv("batch_size", self.batch_size.to_string());
        s
    }

    /// Parses `key=value` lines over the baseline defaults. Blank lines and
    /// `#` comments are ignored; unknown keys are errors.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = Self::baseline();
        let mut columns: Option<String> = None;
        for (no, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key=value", no + 1)))?;
            let (key, value) = (key.trim(), value.trim());
            if key == "columns" {
                columns = Some(value.to_string());
            } else {
                cfg.set(key, value)?;
            }
        }
        // columns depend on the layer count, so they are parsed last
        if let Some(c) = columns {
            cfg.set("columns", &c)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Sets one field from its text form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.parse()
                .map_err(|_| Error::Config(format!("`{key}`: cannot parse `{v}`")))
        }
        let list = |v: &str| -> Result<Vec<usize>> { v.split(',').map(|x| num(key, x.trim())).collect() };
        match key {
            "input_channels" => self.input_channels = num(key, value)?,
            "input_size" => self.input_size = num(key, value)?,
            "classes" => self.classes = num(key, value)?,
            "canonical_side" => self.canonical_side = num(key, value)?,
            "conv_stride" => self.conv_stride = num(key, value)?,
            "conv_channels" => self.conv_channels = list(value)?,
            "pools" => {
                self.pools = value
                    .split(',')
                    .map(|p| match p.trim() {
                        "max" => Ok(PoolKind::Max),
                        "avg" => Ok(PoolKind::Avg),
                        other => Err(Error::Config(format!("unknown pool kind `{other}`"))),
                    })
                    .collect::<Result<_>>()?
            }
            "pool_side" => self.pool_side = num(key, value)?,
            "pool_stride" => self.pool_stride = num(key, value)?,
            "lrn_depth_radius" => self.lrn.depth_radius = num(key, value)?,
            "lrn_alpha" => self.lrn.alpha = num(key, value)?,
            "lrn_beta" => self.lrn.beta = num(key, value)?,
            "lrn_k" => self.lrn.k = num(key, value)?,
            "columns" => {
                let layers = self.conv_layers();
                self.columns = value
                    .split(',')
                    .map(|t| ColumnSpec::parse(t, layers))
                    .collect::<Result<_>>()?
            }
            "init_std_conv" => self.init_std_conv = num(key, value)?,
            "init_std_fc" => self.init_std_fc = num(key, value)?,
            "lr" => self.lr = num(key, value)?,
            "momentum" => self.momentum = num(key, value)?,
            "weight_decay" => self.weight_decay = num(key, value)?,
            "batch_size" => self.batch_size = num(key, value)?,
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }
}
