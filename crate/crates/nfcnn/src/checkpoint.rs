//! Binary checkpoint format.
//!
//! All integers and floats are little-endian.
//!
//! ```text
//! magic        4 bytes  "NFCK"
//! version      u32
//! config       u32 byte length, then the model config block
//! tensors      u32 count, then per tensor:
//!                u16 name length, UTF-8 name, u8 dtype code, u8 rank,
//!                rank x u32 dims, raw values
//! optimizer    u8 present flag; if 1:
//!                u64 step, f64 beta1, f64 beta2, f64 eps,
//!                a tensor table of moments named `adam.m.<param>` / `adam.v.<param>`
//! ```
//!
//! The config block is: u32 stages, u32 image channels, u32 width count,
//! widths as u32, u32 fusion width, f64 slope, f64 element dropout, f64
//! channel dropout, u8 fusion flag, f64 norm eps, f64 norm momentum.

use std::fs;
use std::path::Path;

use nfcnn_core::model::{ModelConfig, Parameters};
use nfcnn_core::ops::BatchNormConfig;
use nfcnn_core::optim::{AdamConfig, AdamState};
use nfcnn_core::{DType, Scalar, Tensor};

pub const MAGIC: [u8; 4] = *b"NFCK";
pub const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("not a checkpoint: bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported checkpoint version {0} (this build reads version {VERSION})")]
    UnsupportedVersion(u32),
    #[error("checkpoint truncated while reading {0}")]
    Truncated(&'static str),
    #[error("unknown dtype code {0}")]
    UnknownDType(u8),
    #[error("tensor name is not UTF-8")]
    BadName,
    #[error("checkpoint is missing tensor {0}")]
    MissingTensor(String),
    #[error("checkpoint has unexpected tensor {0}")]
    UnexpectedTensor(String),
    #[error("tensor {name}: stored shape {stored:?} does not match model shape {expected:?}")]
    ShapeMismatch {
        name: String,
        stored: Vec<usize>,
        expected: Vec<usize>,
    },
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("{0} trailing bytes after checkpoint")]
    TrailingBytes(usize),
    #[error("checkpoint IO on {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

type Result<T> = std::result::Result<T, CheckpointError>;

/// One entry of a tensor table, kept in stored precision.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredTensor {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
    /// Raw little-endian values.
    pub bytes: Vec<u8>,
}

impl StoredTensor {
    fn from_tensor<T: Scalar>(name: String, t: &Tensor<T>) -> Self {
        let mut bytes = Vec::with_capacity(t.numel() * T::DTYPE.size());
        for &v in t.data() {
            v.to_le_bytes_vec(&mut bytes);
        }
        StoredTensor {
            name,
            dtype: T::DTYPE,
            shape: t.shape().to_vec(),
            bytes,
        }
    }

    /// Values converted to `T`; identical bits when the dtypes agree.
    pub fn to_tensor<T: Scalar>(&self) -> Tensor<T> {
        let size = self.dtype.size();
        let data = self
            .bytes
            .chunks_exact(size)
            .map(|c| match self.dtype {
                d if d == T::DTYPE => T::from_le_slice(c),
                DType::F32 => T::from_f64_lossy(f64::from(f32::from_le_slice(c))),
                DType::F64 => T::from_f64_lossy(f64::from_le_slice(c)),
            })
            .collect();
        Tensor::from_vec(&self.shape, data).expect("value count checked at decode")
    }
}

/// Parsed checkpoint contents before they are bound to a model.
#[derive(Debug, Clone, PartialEq)]
pub struct RawCheckpoint {
    pub version: u32,
    pub config: ModelConfig,
    pub tensors: Vec<StoredTensor>,
    pub optimizer: Option<RawOptimizer>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawOptimizer {
    pub step: u64,
    pub config: AdamConfig,
    pub moments: Vec<StoredTensor>,
}

/// A checkpoint bound to a model: parameters plus optional optimizer state.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub params: Parameters<T>,
    pub optimizer: Option<AdamState<T>>,
}

pub fn encode<T: Scalar>(params: &Parameters<T>, optimizer: Option<&AdamState<T>>) -> Vec<u8> {
    encode_raw(&to_raw(params, optimizer))
}

/// Stored form of a model and optional optimizer state.
pub fn to_raw<T: Scalar>(params: &Parameters<T>, optimizer: Option<&AdamState<T>>) -> RawCheckpoint {
    let tensors = params
        .named_tensors()
        .into_iter()
        .map(|(name, t)| StoredTensor::from_tensor(name, t))
        .collect();
    let optimizer = optimizer.map(|adam| {
        let names = learnable_names(params);
        let mut moments = Vec::with_capacity(2 * names.len());
        for (name, m) in names.iter().zip(&adam.first) {
            moments.push(StoredTensor::from_tensor(format!("adam.m.{name}"), m));
        }
        for (name, v) in names.iter().zip(&adam.second) {
            moments.push(StoredTensor::from_tensor(format!("adam.v.{name}"), v));
        }
        RawOptimizer {
            step: adam.step,
            config: adam.config,
            moments,
        }
    });
    RawCheckpoint {
        version: VERSION,
        config: params.config.clone(),
        tensors,
        optimizer,
    }
}

/// Serializes `raw` as is; its `version` field is written verbatim.
pub fn encode_raw(raw: &RawCheckpoint) -> Vec<u8> {
    let mut w = Writer::default();
    w.bytes(&MAGIC);
    w.u32(raw.version);
    let config = encode_config(&raw.config);
    w.u32(config.len() as u32);
    w.bytes(&config);
    w.table(&raw.tensors);
    match &raw.optimizer {
        None => w.u8(0),
        Some(opt) => {
            w.u8(1);
            w.u64(opt.step);
            w.f64(opt.config.beta1);
            w.f64(opt.config.beta2);
            w.f64(opt.config.eps);
            w.table(&opt.moments);
        }
    }
    w.buf
}

pub fn decode_raw(bytes: &[u8]) -> Result<RawCheckpoint> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let magic: [u8; 4] = r.take(4, "magic")?.try_into().expect("four bytes");
    if magic != MAGIC {
        return Err(CheckpointError::BadMagic(magic));
    }
    let version = r.u32("version")?;
    if version != VERSION {
        return Err(CheckpointError::UnsupportedVersion(version));
    }
    let len = r.u32("config length")? as usize;
    let config = decode_config(r.take(len, "config")?)?;
    let tensors = r.table()?;
    let optimizer = match r.u8("optimizer flag")? {
        0 => None,
        _ => {
            let step = r.u64("optimizer step")?;
            let config = AdamConfig {
                beta1: r.f64("beta1")?,
                beta2: r.f64("beta2")?,
                eps: r.f64("eps")?,
            };
            let moments = r.table()?;
            Some(RawOptimizer { step, config, moments })
        }
    };
    if r.pos != bytes.len() {
        return Err(CheckpointError::TrailingBytes(bytes.len() - r.pos));
    }
    Ok(RawCheckpoint {
        version,
        config,
        tensors,
        optimizer,
    })
}

pub fn decode<T: Scalar>(bytes: &[u8]) -> Result<Checkpoint<T>> {
    from_raw(&decode_raw(bytes)?)
}

/// Binds stored tensors to a freshly built model of the stored config. Every
/// model tensor must be present with its exact shape, and nothing else.
pub fn from_raw<T: Scalar>(raw: &RawCheckpoint) -> Result<Checkpoint<T>> {
    let mut params =
        Parameters::<T>::from_seed(raw.config.clone(), 0).map_err(|e| CheckpointError::InvalidConfig(e.to_string()))?;
    {
        let mut slots = params.named_tensors_mut();
        fill(&mut slots, &raw.tensors)?;
    }
    params.mark_statistics_initialized();

    let optimizer = match &raw.optimizer {
        None => None,
        Some(opt) => {
            let mut adam = AdamState::new(params.learnables(), opt.config);
            adam.step = opt.step;
            let names = learnable_names(&params);
            let mut slots: Vec<(String, &mut Tensor<T>)> = names
                .iter()
                .map(|n| format!("adam.m.{n}"))
                .zip(adam.first.iter_mut())
                .chain(names.iter().map(|n| format!("adam.v.{n}")).zip(adam.second.iter_mut()))
                .collect();
            fill(&mut slots, &opt.moments)?;
            Some(adam)
        }
    };
    Ok(Checkpoint { params, optimizer })
}

pub fn save<T: Scalar>(path: &Path, params: &Parameters<T>, optimizer: Option<&AdamState<T>>) -> Result<()> {
    fs::write(path, encode(params, optimizer)).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load<T: Scalar>(path: &Path) -> Result<Checkpoint<T>> {
    decode(&read(path)?)
}

pub fn load_raw(path: &Path) -> Result<RawCheckpoint> {
    decode_raw(&read(path)?)
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Names of the learnable tensors, in optimizer order.
fn learnable_names<T: Scalar>(params: &Parameters<T>) -> Vec<String> {
    params
        .named_tensors()
        .into_iter()
        .map(|(n, _)| n)
        .filter(|n| !n.ends_with(".run_mean") && !n.ends_with(".run_var"))
        .collect()
}

fn fill<T: Scalar>(slots: &mut [(String, &mut Tensor<T>)], stored: &[StoredTensor]) -> Result<()> {
    let mut used = vec![false; stored.len()];
    for (name, slot) in slots.iter_mut() {
        let idx = stored
            .iter()
            .position(|s| &s.name == name)
            .ok_or_else(|| CheckpointError::MissingTensor(name.clone()))?;
        let s = &stored[idx];
        if s.shape != slot.shape() {
            return Err(CheckpointError::ShapeMismatch {
                name: name.clone(),
                stored: s.shape.clone(),
                expected: slot.shape().to_vec(),
            });
        }
        **slot = s.to_tensor();
        used[idx] = true;
    }
    match used.iter().position(|u| !u) {
        Some(i) => Err(CheckpointError::UnexpectedTensor(stored[i].name.clone())),
        None => Ok(()),
    }
}

fn encode_config(c: &ModelConfig) -> Vec<u8> {
    let mut w = Writer::default();
    w.u32(c.stages as u32);
    w.u32(c.image_channels as u32);
    w.u32(c.branch_widths.len() as u32);
    for &width in &c.branch_widths {
        w.u32(width as u32);
    }
    w.u32(c.fusion_width as u32);
    w.f64(c.slope);
    w.f64(c.dropout_elem_p);
    w.f64(c.dropout_chan_p);
    w.u8(u8::from(c.fusion_enabled));
    w.f64(c.bn.eps);
    w.f64(c.bn.momentum);
    w.buf
}

fn decode_config(bytes: &[u8]) -> Result<ModelConfig> {
    let mut r = Reader { buf: bytes, pos: 0 };
    let stages = r.u32("stages")? as usize;
    let image_channels = r.u32("image channels")? as usize;
    let n = r.u32("width count")? as usize;
    if n > bytes.len() / 4 {
        return Err(CheckpointError::Truncated("branch widths"));
    }
    let branch_widths = (0..n).map(|_| r.u32("branch width").map(|v| v as usize)).collect::<Result<_>>()?;
    let config = ModelConfig {
        stages,
        image_channels,
        branch_widths,
        fusion_width: r.u32("fusion width")? as usize,
        slope: r.f64("slope")?,
        dropout_elem_p: r.f64("dropout")?,
        dropout_chan_p: r.f64("dropout")?,
        fusion_enabled: r.u8("fusion flag")? != 0,
        bn: BatchNormConfig {
            eps: r.f64("norm eps")?,
            momentum: r.f64("norm momentum")?,
        },
    };
    if r.pos != bytes.len() {
        return Err(CheckpointError::InvalidConfig("config block has trailing bytes".into()));
    }
    config.validate().map_err(|e| CheckpointError::InvalidConfig(e.to_string()))?;
    Ok(config)
}

#[derive(Default)]
struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn bytes(&mut self, b: &[u8]) {
        self.buf.extend_from_slice(b);
    }
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.bytes(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.bytes(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.bytes(&v.to_le_bytes());
    }
    fn table(&mut self, tensors: &[StoredTensor]) {
        self.u32(tensors.len() as u32);
        for t in tensors {
            self.bytes(&(t.name.len() as u16).to_le_bytes());
            self.bytes(t.name.as_bytes());
            self.u8(t.dtype as u8);
            self.u8(t.shape.len() as u8);
            for &d in &t.shape {
                self.u32(d as u32);
            }
            self.bytes(&t.bytes);
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or(CheckpointError::Truncated(what))?;
        let out = self.buf.get(self.pos..end).ok_or(CheckpointError::Truncated(what))?;
        self.pos = end;
        Ok(out)
    }
    fn u8(&mut self, what: &'static str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }
    fn u16(&mut self, what: &'static str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().expect("two bytes")))
    }
    fn u32(&mut self, what: &'static str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("four bytes")))
    }
    fn u64(&mut self, what: &'static str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("eight bytes")))
    }
    fn f64(&mut self, what: &'static str) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8, what)?.try_into().expect("eight bytes")))
    }
    fn table(&mut self) -> Result<Vec<StoredTensor>> {
        let count = self.u32("tensor count")? as usize;
        let mut out = Vec::new();
        for _ in 0..count {
            let len = self.u16("name length")? as usize;
            let name = std::str::from_utf8(self.take(len, "tensor name")?)
                .map_err(|_| CheckpointError::BadName)?
                .to_string();
            let code = self.u8("dtype")?;
            let dtype = DType::from_code(code).ok_or(CheckpointError::UnknownDType(code))?;
            let rank = self.u8("rank")? as usize;
            let shape = (0..rank)
                .map(|_| self.u32("dims").map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let numel = shape
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .and_then(|n| n.checked_mul(dtype.size()))
                .ok_or(CheckpointError::Truncated("tensor values"))?;
            let bytes = self.take(numel, "tensor values")?.to_vec();
            out.push(StoredTensor {
                name,
                dtype,
                shape,
                bytes,
            });
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> Parameters<f32> {
        Parameters::from_seed(ModelConfig::reduced(2), 5).unwrap()
    }

    #[test]
    fn header_layout() {
        let bytes = encode(&tiny(), None);
        assert_eq!(&bytes[..4], b"NFCK");
        assert_eq!(u32::from_le_bytes(bytes[4..8].try_into().unwrap()), VERSION);
    }

    #[test]
    fn rejects_bad_magic_and_version() {
        let mut bytes = encode(&tiny(), None);
        bytes[0] = b'X';
        assert!(matches!(decode_raw(&bytes), Err(CheckpointError::BadMagic(_))));
        let mut bytes = encode(&tiny(), None);
        bytes[4] = 9;
        assert!(matches!(decode_raw(&bytes), Err(CheckpointError::UnsupportedVersion(9))));
    }

    #[test]
    fn rejects_truncation_anywhere() {
        let bytes = encode(&tiny(), None);
        for cut in [0, 3, 7, 20, bytes.len() / 2, bytes.len() - 1] {
            assert!(decode_raw(&bytes[..cut]).is_err(), "cut at {cut}");
        }
    }

    #[test]
    fn round_trip_with_optimizer() {
        let params = tiny();
        let mut adam = AdamState::new(params.learnables(), AdamConfig::default());
        adam.step = 17;
        adam.first[0].data_mut()[0] = 0.25;
        adam.second[1].data_mut()[0] = 3.5;
        let ck: Checkpoint<f32> = decode(&encode(&params, Some(&adam))).unwrap();
        assert_eq!(ck.params, params);
        assert_eq!(ck.optimizer.as_ref(), Some(&adam));
    }
}
