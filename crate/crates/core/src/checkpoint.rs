//! The `ZNET` checkpoint format.
//!
//! ```text
//! "ZNET" | version u32 | count u32 | count x tensor
//! tensor = name_len u16 | name (UTF-8) | dtype u8 (0 f32, 1 f64) | rank u8 | dims u32 x rank | data
//! ```
//!
//! All integers and data are little-endian. Besides every named model tensor
//! (BN running statistics included), a checkpoint stores `meta.*` tensors
//! describing the architecture so a model can be rebuilt without a config.

use std::path::Path;

use crate::error::{Error, Result};
use crate::nnops::SppConfig;
use crate::tensor::{DType, Scalar, Tensor};
use crate::zhunet::{ActivationMode, ModelConfig, ZhuNet};

pub const MAGIC: &[u8; 4] = b"ZNET";
pub const VERSION: u32 = 1;

/// One serialized tensor with its raw little-endian payload.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TensorRecord {
    pub name: String,
    pub dtype: DType,
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

impl TensorRecord {
    pub fn from_tensor<T: Scalar>(name: impl Into<String>, tensor: &Tensor<T>) -> Self {
        let mut data = Vec::with_capacity(tensor.len() * T::DTYPE.size());
        for &v in tensor.data() {
            v.write_le(&mut data);
        }
        Self { name: name.into(), dtype: T::DTYPE, dims: tensor.shape().to_vec(), data }
    }

    fn from_f64(name: &str, values: &[f64]) -> Self {
        Self::from_tensor(name, &Tensor::<f64>::from_data(&[values.len()], values.to_vec()).expect("1-D shape"))
    }

    /// Decodes the payload, converting between float widths when the stored
    /// dtype differs from `T`.
    pub fn to_tensor<T: Scalar>(&self) -> Result<Tensor<T>> {
        let size = self.dtype.size();
        let data = if self.dtype == T::DTYPE {
            self.data.chunks_exact(size).map(T::read_le).collect()
        } else {
            self.data
                .chunks_exact(size)
                .map(|c| match self.dtype {
                    DType::F32 => T::from_f64_lossy(f32::read_le(c) as f64),
                    DType::F64 => T::from_f64_lossy(f64::read_le(c)),
                })
                .collect()
        };
        Tensor::from_data(&self.dims, data)
    }
}

pub fn encode(records: &[TensorRecord]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&u32::try_from(records.len()).map_err(|_| too_big("tensor count"))?.to_le_bytes());
    for r in records {
        let name = r.name.as_bytes();
        out.extend_from_slice(&u16::try_from(name.len()).map_err(|_| too_big("tensor name"))?.to_le_bytes());
        out.extend_from_slice(name);
        out.push(r.dtype.code());
        out.push(u8::try_from(r.dims.len()).map_err(|_| too_big("tensor rank"))?);
        for &d in &r.dims {
            out.extend_from_slice(&u32::try_from(d).map_err(|_| too_big("tensor dimension"))?.to_le_bytes());
        }
        let expected = r.dims.iter().product::<usize>() * r.dtype.size();
        if r.data.len() != expected {
            return Err(Error::InvalidShape(format!(
                "tensor `{}` holds {} bytes, dims {:?} need {expected}",
                r.name,
                r.data.len(),
                r.dims
            )));
        }
        out.extend_from_slice(&r.data);
    }
    Ok(out)
}

fn too_big(what: &str) -> Error {
    Error::InvalidShape(format!("{what} does not fit the checkpoint format"))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::format(self.pos, format!("truncated checkpoint: {what} needs {n} bytes"))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<Vec<TensorRecord>> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::format(0, "bad magic, expected `ZNET`"));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(Error::format(4, format!("unsupported checkpoint version {version}")));
    }
    let count = r.u32("tensor count")?;
    let mut records = Vec::new();
    for _ in 0..count {
        let at = r.pos;
        let len = r.u16("name length")? as usize;
        let name = std::str::from_utf8(r.take(len, "name")?)
            .map_err(|_| Error::format(at + 2, "tensor name is not UTF-8"))?
            .to_string();
        let code_at = r.pos;
        let dtype = DType::from_code(r.u8("dtype")?)
            .ok_or_else(|| Error::format(code_at, format!("tensor `{name}` has an unknown dtype code")))?;
        let rank = r.u8("rank")? as usize;
        let dims = (0..rank).map(|_| r.u32("dims").map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n = dims
            .iter()
            .try_fold(dtype.size(), |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::format(at, format!("tensor `{name}` is too large")))?;
        let data = r.take(n, &format!("tensor `{name}` data"))?.to_vec();
        records.push(TensorRecord { name, dtype, dims, data });
    }
    if r.pos != bytes.len() {
        return Err(Error::format(r.pos, "trailing bytes after the last tensor"));
    }
    Ok(records)
}

fn split_seed(seed: u64) -> [f64; 2] {
    [(seed >> 32) as f64, (seed & 0xffff_ffff) as f64]
}

/// Serializes a model: `meta.*` records first, then every named tensor.
pub fn to_bytes<T: Scalar>(model: &ZhuNet<T>) -> Result<Vec<u8>> {
    let c = &model.config;
    let to_f = |v: &[usize]| v.iter().map(|&x| x as f64).collect::<Vec<_>>();
    let mut records = vec![
        TensorRecord::from_f64("meta.activation", &[c.activation.code() as f64]),
        TensorRecord::from_f64("meta.trainable_srm", &[model.preprocessing.trainable as u8 as f64]),
        TensorRecord::from_f64("meta.spp_levels", &to_f(&c.spp.levels)),
        TensorRecord::from_f64("meta.block_channels", &to_f(&c.block_channels)),
        TensorRecord::from_f64("meta.fc_hidden", &[c.fc_hidden as f64]),
        TensorRecord::from_f64("meta.seed", &split_seed(c.seed)),
    ];
    records.extend(model.named_tensors().into_iter().map(|(name, _, t)| TensorRecord::from_tensor(name, t)));
    encode(&records)
}

fn meta(records: &[TensorRecord], name: &str) -> Result<Vec<usize>> {
    let r = records
        .iter()
        .find(|r| r.name == name)
        .ok_or_else(|| Error::InvalidConfig(format!("checkpoint lacks `{name}`")))?;
    r.to_tensor::<f64>()?
        .data()
        .iter()
        .map(|&v| {
            (v >= 0.0 && v.fract() == 0.0 && v <= u32::MAX as f64)
                .then_some(v as usize)
                .ok_or_else(|| Error::InvalidConfig(format!("`{name}` holds non-integer value {v}")))
        })
        .collect()
}

fn meta_scalar(records: &[TensorRecord], name: &str) -> Result<usize> {
    match meta(records, name)?[..] {
        [v] => Ok(v),
        _ => Err(Error::InvalidConfig(format!("`{name}` must hold exactly one value"))),
    }
}

pub fn from_bytes<T: Scalar>(bytes: &[u8]) -> Result<ZhuNet<T>> {
    let records = decode(bytes)?;
    let activation = u8::try_from(meta_scalar(&records, "meta.activation")?)
        .ok()
        .and_then(ActivationMode::from_code)
        .ok_or_else(|| Error::InvalidConfig("unknown activation code in checkpoint".into()))?;
    let block_channels: [usize; 4] = meta(&records, "meta.block_channels")?
        .try_into()
        .map_err(|_| Error::InvalidConfig("`meta.block_channels` must hold 4 values".into()))?;
    let seed = match meta(&records, "meta.seed")?[..] {
        [hi, lo] => ((hi as u64) << 32) | lo as u64,
        _ => return Err(Error::InvalidConfig("`meta.seed` must hold 2 values".into())),
    };
    let config = ModelConfig {
        block_channels,
        fc_hidden: meta_scalar(&records, "meta.fc_hidden")?,
        spp: SppConfig { levels: meta(&records, "meta.spp_levels")? },
        activation,
        trainable_srm: meta_scalar(&records, "meta.trainable_srm")? != 0,
        seed,
    };
    let mut model = ZhuNet::new(config)?;
    let mut slots = model.named_tensors_mut();
    let mut filled = vec![false; slots.len()];
    for r in records.iter().filter(|r| !r.name.starts_with("meta.")) {
        let i = slots
            .iter()
            .position(|(name, _, _)| *name == r.name)
            .ok_or_else(|| Error::InvalidConfig(format!("checkpoint has unexpected tensor `{}`", r.name)))?;
        let t = r.to_tensor::<T>()?;
        if t.shape() != slots[i].2.shape() {
            return Err(Error::InvalidShape(format!(
                "tensor `{}` is {:?} in the checkpoint but {:?} in the model",
                r.name,
                t.shape(),
                slots[i].2.shape()
            )));
        }
        *slots[i].2 = t;
        filled[i] = true;
    }
    if let Some(i) = filled.iter().position(|f| !f) {
        return Err(Error::InvalidConfig(format!("checkpoint lacks tensor `{}`", slots[i].0)));
    }
    Ok(model)
}

pub fn save<T: Scalar>(path: impl AsRef<Path>, model: &ZhuNet<T>) -> Result<()> {
    Ok(std::fs::write(path, to_bytes(model)?)?)
}

pub fn load<T: Scalar>(path: impl AsRef<Path>) -> Result<ZhuNet<T>> {
    from_bytes(&std::fs::read(path)?)
}
