use std::fs;
use std::path::Path;

use super::model::{Architecture, LayerParams, LayerSpec, ModelConfig, Network, ParamSet};
use super::{init_params, NnError, Padding, Result, Tensor};
use crate::features::FeatureKind;

const MAGIC: &[u8; 4] = b"CPDM";
pub const MODEL_VERSION: u16 = 1;

fn corrupt(reason: impl Into<String>) -> NnError {
    NnError::CorruptModel(reason.into())
}

fn layer_record(l: &LayerSpec) -> (u8, [u32; 4]) {
    match *l {
        LayerSpec::Conv {
            filters,
            kernel,
            stride,
            padding,
        } => {
            let pad = match padding {
                Padding::Valid => 0,
                Padding::Same => 1,
            };
            (0, [filters as u32, kernel as u32, stride as u32, pad])
        }
        LayerSpec::Relu => (1, [0; 4]),
        LayerSpec::MaxPool { size } => (2, [size as u32, 0, 0, 0]),
        LayerSpec::Dropout { rate } => {
            let bits = rate.to_bits();
            (3, [bits as u32, (bits >> 32) as u32, 0, 0])
        }
        LayerSpec::BatchNorm => (4, [0; 4]),
        LayerSpec::GlobalAvgPool => (5, [0; 4]),
        LayerSpec::Flatten => (6, [0; 4]),
        LayerSpec::Dense { units } => (7, [units as u32, 0, 0, 0]),
        LayerSpec::Standardize { mean, std } => {
            let (m, s) = (mean.to_bits(), std.to_bits());
            (8, [m as u32, (m >> 32) as u32, s as u32, (s >> 32) as u32])
        }
    }
}

fn layer_from_record(tag: u8, f: [u32; 4]) -> Result<LayerSpec> {
    Ok(match tag {
        0 => LayerSpec::Conv {
            filters: f[0] as usize,
            kernel: f[1] as usize,
            stride: f[2] as usize,
            padding: match f[3] {
                0 => Padding::Valid,
                1 => Padding::Same,
                p => return Err(corrupt(format!("unknown padding code {p}"))),
            },
        },
        1 => LayerSpec::Relu,
        2 => LayerSpec::MaxPool { size: f[0] as usize },
        3 => LayerSpec::Dropout {
            rate: f64::from_bits(f[0] as u64 | (f[1] as u64) << 32),
        },
        4 => LayerSpec::BatchNorm,
        5 => LayerSpec::GlobalAvgPool,
        6 => LayerSpec::Flatten,
        7 => LayerSpec::Dense { units: f[0] as usize },
        8 => LayerSpec::Standardize {
            mean: f64::from_bits(f[0] as u64 | (f[1] as u64) << 32),
            std: f64::from_bits(f[2] as u64 | (f[3] as u64) << 32),
        },
        t => return Err(corrupt(format!("unknown layer tag {t}"))),
    })
}

/// Serialize a model and the feature kind it was trained on.
///
/// Layout (little endian): magic, u16 version, u8 architecture, u8 feature
/// kind, u32 x3 input shape, u32 classes, u32 layer count, then one
/// `u8 tag + 4 x u32` record per layer, then u32 tensor count and for each
/// tensor a u8 rank, u32 dims, and f32 values.
pub fn encode_model(net: &Network<f32>, kind: FeatureKind) -> Vec<u8> {
    let c = &net.config;
    let mut buf = Vec::new();
    let put = |buf: &mut Vec<u8>, v: u32| buf.extend_from_slice(&v.to_le_bytes());
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&MODEL_VERSION.to_le_bytes());
    buf.push(c.architecture.code());
    buf.push(kind.code());
    for d in c.input {
        put(&mut buf, d as u32);
    }
    put(&mut buf, c.classes as u32);
    put(&mut buf, c.layers.len() as u32);
    for l in &c.layers {
        let (tag, fields) = layer_record(l);
        buf.push(tag);
        for f in fields {
            put(&mut buf, f);
        }
    }
    let tensors = net.params.all_tensors();
    put(&mut buf, tensors.len() as u32);
    for t in tensors {
        buf.push(t.shape().len() as u8);
        for &d in t.shape() {
            put(&mut buf, d as u32);
        }
        for v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| corrupt(format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}

pub fn decode_model(bytes: &[u8]) -> Result<(Network<f32>, FeatureKind)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(corrupt("bad magic"));
    }
    let version = u16::from_le_bytes(r.take(2)?.try_into().unwrap());
    if version != MODEL_VERSION {
        return Err(NnError::VersionMismatch {
            found: version,
            expected: MODEL_VERSION,
        });
    }
    let arch = r.u8()?;
    let architecture =
        Architecture::from_code(arch).ok_or_else(|| corrupt(format!("unknown architecture {arch}")))?;
    let k = r.u8()?;
    let kind = FeatureKind::from_code(k).ok_or_else(|| corrupt(format!("unknown feature kind {k}")))?;
    let input = [r.u32()? as usize, r.u32()? as usize, r.u32()? as usize];
    let classes = r.u32()? as usize;
    let n_layers = r.u32()? as usize;
    let mut layers = Vec::new();
    for _ in 0..n_layers {
        let tag = r.u8()?;
        let fields = [r.u32()?, r.u32()?, r.u32()?, r.u32()?];
        layers.push(layer_from_record(tag, fields)?);
    }
    let config = ModelConfig {
        architecture,
        input,
        classes,
        layers,
    };
    let count = config.parameter_count().map_err(|e| corrupt(e.to_string()))?;
    if count.saturating_mul(4) > bytes.len() - r.pos {
        return Err(corrupt(format!("payload too short for {count} parameters")));
    }
    // The template fixes the expected tensor shapes; stored tensors must match it.
    let template: ParamSet<f32> = init_params(&config, 0).map_err(|e| corrupt(e.to_string()))?;
    let n_tensors = r.u32()? as usize;
    let expected = template.all_tensors().len();
    if n_tensors != expected {
        return Err(corrupt(format!(
            "{n_tensors} tensors, architecture needs {expected}"
        )));
    }
    let mut loaded = Vec::with_capacity(n_tensors);
    for want in template.all_tensors() {
        let rank = r.u8()? as usize;
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(r.u32()? as usize);
        }
        if shape != want.shape() {
            return Err(corrupt(format!(
                "tensor shape {shape:?}, expected {:?}",
                want.shape()
            )));
        }
        let data = r
            .take(want.len() * 4)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        loaded.push(Tensor::from_vec(&shape, data)?);
    }
    if r.pos != bytes.len() {
        return Err(corrupt(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    let mut it = loaded.into_iter();
    let mut next = || it.next().expect("count checked");
    let layers = template
        .layers
        .iter()
        .map(|l| match l {
            LayerParams::None => LayerParams::None,
            LayerParams::Conv { .. } => LayerParams::Conv { w: next(), b: next() },
            LayerParams::Dense { .. } => LayerParams::Dense { w: next(), b: next() },
            LayerParams::BatchNorm { .. } => LayerParams::BatchNorm {
                gamma: next(),
                beta: next(),
                running_mean: next(),
                running_var: next(),
            },
        })
        .collect();
    Ok((
        Network {
            config,
            params: ParamSet { layers },
        },
        kind,
    ))
}

/// Write atomically through a temporary sibling.
pub fn save_model(net: &Network<f32>, kind: FeatureKind, path: &Path) -> Result<()> {
    let io = |e| NnError::Io {
        path: path.to_path_buf(),
        source: e,
    };
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io)?;
    }
    let tmp = path.with_extension(format!("tmp.{}", std::process::id()));
    fs::write(&tmp, encode_model(net, kind)).map_err(io)?;
    fs::rename(&tmp, path).map_err(io)
}

pub fn load_model(path: &Path) -> Result<(Network<f32>, FeatureKind)> {
    let bytes = fs::read(path).map_err(|e| NnError::Io {
        path: path.to_path_buf(),
        source: e,
    })?;
    decode_model(&bytes)
}
