//! Dense tensors and the `TTM1` binary wire format.
//!
//! Layout of an encoded tensor:
//!
//! ```text
//! offset  size        field
//! 0       4           magic "TTM1"
//! 4       1           dtype code (0 = f32, 1 = u8)
//! 5       1           ndim (1..=8)
//! 6       4 * ndim    dims, u32 little-endian, row-major order
//! ..      n * width   values, little-endian
//! ```
//!
//! A `u8` tensor carrying probabilities is read as `value / 255`.

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"TTM1";
pub const MAX_NDIM: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32,
    U8,
}

impl DType {
    pub fn code(self) -> u8 {
        match self {
            DType::F32 => 0,
            DType::U8 => 1,
        }
    }

    pub fn from_code(code: u8) -> Result<Self> {
        match code {
            0 => Ok(DType::F32),
            1 => Ok(DType::U8),
            other => Err(Error::WireFormat(format!("unknown dtype code {other}"))),
        }
    }

    pub fn width(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::U8 => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    U8(Vec<u8>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::U8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> DType {
        match self {
            TensorData::F32(_) => DType::F32,
            TensorData::U8(_) => DType::U8,
        }
    }
}

/// Row-major dense tensor. Construction validates shape and finiteness, so
/// every `Tensor` in circulation satisfies its invariants.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    dims: Vec<usize>,
    data: TensorData,
}

fn element_count(dims: &[usize]) -> Result<usize> {
    if dims.is_empty() {
        return Err(Error::WireFormat("tensor needs at least one dim".into()));
    }
    if dims.len() > MAX_NDIM {
        return Err(Error::WireFormat(format!(
            "ndim {} exceeds {MAX_NDIM}",
            dims.len()
        )));
    }
    dims.iter().try_fold(1usize, |acc, &d| {
        if d == 0 {
            return Err(Error::WireFormat("zero-sized dim".into()));
        }
        if u32::try_from(d).is_err() {
            return Err(Error::WireFormat(format!("dim {d} overflows u32")));
        }
        acc.checked_mul(d)
            .ok_or_else(|| Error::WireFormat("element count overflows".into()))
    })
}

impl Tensor {
    pub fn new(dims: Vec<usize>, data: TensorData) -> Result<Self> {
        let count = element_count(&dims)?;
        if count != data.len() {
            return Err(Error::WireFormat(format!(
                "dims {dims:?} imply {count} values, got {}",
                data.len()
            )));
        }
        if let TensorData::F32(values) = &data {
            if let Some(i) = values.iter().position(|v| !v.is_finite()) {
                return Err(Error::WireFormat(format!("non-finite value at index {i}")));
            }
        }
        Ok(Tensor { dims, data })
    }

    pub fn from_f32(dims: Vec<usize>, values: Vec<f32>) -> Result<Self> {
        Tensor::new(dims, TensorData::F32(values))
    }

    pub fn from_u8(dims: Vec<usize>, values: Vec<u8>) -> Result<Self> {
        Tensor::new(dims, TensorData::U8(values))
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn dtype(&self) -> DType {
        self.data.dtype()
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Values as f32, dequantizing `u8` as `v / 255`.
    pub fn to_f32_probs(&self) -> Vec<f32> {
        match &self.data {
            TensorData::F32(v) => v.clone(),
            TensorData::U8(v) => v.iter().map(|&b| f32::from(b) / 255.0).collect(),
        }
    }

    pub fn encode(&self) -> Vec<u8> {
        encode_tensor(self)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        decode_tensor(bytes)
    }
}

pub fn encode_tensor(t: &Tensor) -> Vec<u8> {
    let header = 6 + 4 * t.dims.len();
    let mut out = Vec::with_capacity(header + t.len() * t.dtype().width());
    out.extend_from_slice(MAGIC);
    out.push(t.dtype().code());
    out.push(t.dims.len() as u8);
    for &d in &t.dims {
        // checked at construction
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    match &t.data {
        TensorData::F32(values) => {
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        TensorData::U8(values) => out.extend_from_slice(values),
    }
    out
}

pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor> {
    if bytes.len() < 6 {
        return Err(Error::WireFormat(format!(
            "{} bytes is shorter than the fixed header",
            bytes.len()
        )));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::WireFormat(format!("bad magic {:?}", &bytes[..4])));
    }
    let dtype = DType::from_code(bytes[4])?;
    let ndim = bytes[5] as usize;
    if ndim == 0 || ndim > MAX_NDIM {
        return Err(Error::WireFormat(format!("ndim {ndim} out of range 1..={MAX_NDIM}")));
    }
    let dims_end = 6 + 4 * ndim;
    let dim_bytes = bytes
        .get(6..dims_end)
        .ok_or_else(|| Error::WireFormat("truncated dims".into()))?;
    let dims: Vec<usize> = dim_bytes
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    let count = element_count(&dims)?;
    let payload = &bytes[dims_end..];
    let expected = count
        .checked_mul(dtype.width())
        .ok_or_else(|| Error::WireFormat("payload size overflows".into()))?;
    if payload.len() != expected {
        return Err(Error::WireFormat(format!(
            "expected {expected} data bytes for dims {dims:?}, found {}",
            payload.len()
        )));
    }
    let data = match dtype {
        DType::F32 => TensorData::F32(
            payload
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect(),
        ),
        DType::U8 => TensorData::U8(payload.to_vec()),
    };
    Tensor::new(dims, data)
}
