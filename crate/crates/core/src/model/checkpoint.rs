//! Binary checkpoints.
//!
//! Layout (all integers u32 little-endian):
//! `"SICN"`, version, config text length + UTF-8 `key=value` text, record
//! count, then per record: name length + UTF-8 name, rank, dims, and
//! `prod(dims)` f32 values little-endian.

use std::fs;
use std::path::Path;

use super::config::NetworkConfig;
use super::network::{Model, Params};
use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

pub const MAGIC: &[u8; 4] = b"SICN";
pub const FORMAT_VERSION: u32 = 1;

struct Record {
    name: String,
    shape: Vec<usize>,
    data: Vec<f32>,
}

fn record<T: Scalar>(name: impl Into<String>, t: &Tensor<T>) -> Record {
    Record {
        name: name.into(),
        shape: t.shape().to_vec(),
        data: t.data().iter().map(|x| x.as_f64() as f32).collect(),
    }
}

fn put_u32(buf: &mut Vec<u8>, v: usize) {
    buf.extend_from_slice(&(v as u32).to_le_bytes());
}

pub fn encode<T: Scalar>(model: &Model<T>) -> Vec<u8> {
    let mut records = Vec::new();
    let params = model.params();
    let vel = model.velocity();
    for (prefix, p) in [("", &params), ("vel.", vel)] {
        for (l, (w, b)) in p.conv_filters.iter().zip(&p.conv_bias).enumerate() {
            records.push(record(format!("{prefix}conv{l}.weight"), w));
            records.push(record(format!("{prefix}conv{l}.bias"), b));
        }
        records.push(record(format!("{prefix}fc.weight"), &p.fc_weights));
        records.push(record(format!("{prefix}fc.bias"), &p.fc_bias));
    }
    if let Some(mean) = model.input_mean() {
        records.push(record("input.mean", mean));
    }
    records.push(Record {
        name: "state.epochs_done".into(),
        shape: vec![1],
        data: vec![model.epochs_done() as f32],
    });

    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    put_u32(&mut buf, FORMAT_VERSION as usize);
    let text = model.config().to_text();
    put_u32(&mut buf, text.len());
    buf.extend_from_slice(text.as_bytes());
    put_u32(&mut buf, records.len());
    for r in &records {
        put_u32(&mut buf, r.name.len());
        buf.extend_from_slice(r.name.as_bytes());
        put_u32(&mut buf, r.shape.len());
        for &d in &r.shape {
            put_u32(&mut buf, d);
        }
        for v in &r.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, field: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Checkpoint {
                field: field.into(),
                reason: format!("truncated: need {n} bytes at offset {}", self.pos),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self, field: &str) -> Result<usize> {
        let b = self.take(4, field)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as usize)
    }

    fn string(&mut self, field: &str) -> Result<String> {
        let n = self.u32(field)?;
        let b = self.take(n, field)?;
        String::from_utf8(b.to_vec()).map_err(|_| Error::Checkpoint {
            field: field.into(),
            reason: "not UTF-8".into(),
        })
    }
}

fn decode_records(bytes: &[u8]) -> Result<(NetworkConfig, Vec<Record>)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::Checkpoint {
            field: "magic".into(),
            reason: "not a SICN checkpoint".into(),
        });
    }
    let version = r.u32("version")?;
    if version != FORMAT_VERSION as usize {
        return Err(Error::Checkpoint {
            field: "version".into(),
            reason: format!("unsupported version {version}"),
        });
    }
    let text = r.string("config")?;
    let config = NetworkConfig::from_text(&text).map_err(|e| Error::Checkpoint {
        field: "config".into(),
        reason: e.to_string(),
    })?;
    let count = r.u32("record count")?;
    let mut records = Vec::with_capacity(count);
    for i in 0..count {
        let name = r.string(&format!("record {i} name"))?;
        let rank = r.u32(&name)?;
        let shape = (0..rank).map(|_| r.u32(&name)).collect::<Result<Vec<_>>>()?;
        let len: usize = shape.iter().product();
        let raw = r.take(len * 4, &name)?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        records.push(Record { name, shape, data });
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint {
            field: "trailer".into(),
            reason: format!("{} unexpected trailing bytes", bytes.len() - r.pos),
        });
    }
    Ok((config, records))
}

fn find<T: Scalar>(records: &[Record], name: &str, shape: Option<&[usize]>) -> Result<Tensor<T>> {
    let r = records
        .iter()
        .find(|r| r.name == name)
        .ok_or_else(|| Error::Checkpoint {
            field: name.into(),
            reason: "missing".into(),
        })?;
    if let Some(want) = shape {
        if r.shape != want {
            return Err(Error::Checkpoint {
                field: name.into(),
                reason: format!("shape {:?}, expected {want:?}", r.shape),
            });
        }
    }
    Tensor::from_vec(&r.shape, r.data.iter().map(|&x| T::lit(x as f64)).collect()).map_err(|e| {
        Error::Checkpoint {
            field: name.into(),
            reason: e.to_string(),
        }
    })
}

pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<Model<T>> {
    let (config, records) = decode_records(bytes)?;
    let shell: Model<T> = Model::from_parts(
        config.clone(),
        (0..config.conv_layers())
            .map(|l| {
                let (k, c, s) = (config.conv_channels[l], config.conv_in_channels(l), config.canonical_side);
                (Tensor::zeros(&[k, c, s, s]), Tensor::zeros(&[k]))
            })
            .collect(),
        Tensor::zeros(&[config.classes, config.feature_len()?]),
        Tensor::zeros(&[config.classes]),
    )?;
    let template = shell.params();
    let read = |prefix: &str| -> Result<Params<T>> {
        Ok(Params {
            conv_filters: template
                .conv_filters
                .iter()
                .enumerate()
                .map(|(l, t)| find(&records, &format!("{prefix}conv{l}.weight"), Some(t.shape())))
                .collect::<Result<_>>()?,
            conv_bias: template
                .conv_bias
                .iter()
                .enumerate()
                .map(|(l, t)| find(&records, &format!("{prefix}conv{l}.bias"), Some(t.shape())))
                .collect::<Result<_>>()?,
            fc_weights: find(&records, &format!("{prefix}fc.weight"), Some(template.fc_weights.shape()))?,
            fc_bias: find(&records, &format!("{prefix}fc.bias"), Some(template.fc_bias.shape()))?,
        })
    };
    let params = read("")?;
    let velocity = read("vel.")?;
    let mut model = Model::from_parts(
        config.clone(),
        params.conv_filters.into_iter().zip(params.conv_bias).collect(),
        params.fc_weights,
        params.fc_bias,
    )?;
    model.velocity = velocity;
    if records.iter().any(|r| r.name == "input.mean") {
        let shape = [config.input_channels, config.input_size, config.input_size];
        model.input_mean = Some(find(&records, "input.mean", Some(&shape))?);
    }
    let epochs: Tensor<f64> = find(&records, "state.epochs_done", Some(&[1]))?;
    model.epochs_done = epochs[0] as usize;
    Ok(model)
}

pub fn save_checkpoint<T: Scalar>(model: &Model<T>, path: &Path) -> Result<()> {
    fs::write(path, encode(model))?;
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(path: &Path) -> Result<Model<T>> {
    decode(&fs::read(path)?)
}

/// Loads a checkpoint into `config`'s column set. A checkpoint with the same
/// configuration loads as-is; otherwise its canonical filters are adopted
/// through [`Model::expand_from`].
pub fn load_into_config<T: Scalar>(path: &Path, config: NetworkConfig) -> Result<Model<T>> {
    let model: Model<T> = load_checkpoint(path)?;
    if model.config() == &config {
        return Ok(model);
    }
    Model::expand_from(&model, config)
}
