//! SALT: a minimal little-endian tensor container.
//!
//! ```text
//! offset 0   "SALT"              magic
//! offset 4   0x01                version
//! offset 5   dtype               0x01 = float32, 0x02 = uint8
//! offset 6   ndim                u8
//! offset 7   dims                ndim x u32 LE
//! ...        payload             row-major, LE, no padding
//! ```
//!
//! There is no checksum; the transport is trusted for integrity.

use thiserror::Error;

use crate::salience::{PatchStack, SalienceError};

pub const MAGIC: &[u8; 4] = b"SALT";
pub const VERSION: u8 = 0x01;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
#[repr(u8)]
pub enum Dtype {
    F32 = 0x01,
    U8 = 0x02,
}

impl Dtype {
    fn from_code(code: u8) -> Option<Self> {
        match code {
            0x01 => Some(Self::F32),
            0x02 => Some(Self::U8),
            _ => None,
        }
    }

    pub fn size(self) -> usize {
        match self {
            Self::F32 => 4,
            Self::U8 => 1,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum SaltError {
    #[error("bad magic at offset 0: expected \"SALT\", found {found:?}")]
    BadMagic { found: Vec<u8> },
    #[error("unsupported version {version:#04x} at offset 4 (expected 0x01)")]
    BadVersion { version: u8 },
    #[error("unknown dtype {code:#04x} at offset 5")]
    BadDtype { code: u8 },
    #[error("truncated input at offset {offset}: need {needed} more bytes, {available} available")]
    Truncated {
        offset: usize,
        needed: usize,
        available: usize,
    },
    #[error("{extra} trailing bytes after payload at offset {offset}")]
    TrailingBytes { offset: usize, extra: usize },
    #[error("tensor has {0} dimensions, at most 255 are supported")]
    TooManyDims(usize),
    #[error("dimension {0} does not fit in u32")]
    DimTooLarge(usize),
    #[error("element count overflows")]
    Overflow,
    #[error("data length {len} does not match dims {dims:?}")]
    LengthMismatch { len: usize, dims: Vec<u32> },
    #[error("expected a {expected}, found dtype {dtype:?} with dims {dims:?}")]
    UnexpectedLayout {
        expected: &'static str,
        dtype: Dtype,
        dims: Vec<u32>,
    },
    #[error("invalid stack: {0}")]
    Stack(String),
}

#[derive(Clone, Debug, PartialEq)]
pub enum SaltData {
    F32(Vec<f32>),
    U8(Vec<u8>),
}

impl SaltData {
    pub fn dtype(&self) -> Dtype {
        match self {
            Self::F32(_) => Dtype::F32,
            Self::U8(_) => Dtype::U8,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Self::F32(v) => v.len(),
            Self::U8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SaltTensor {
    dims: Vec<u32>,
    data: SaltData,
}

fn element_count(dims: &[u32]) -> Option<usize> {
    dims.iter().try_fold(1usize, |acc, d| acc.checked_mul(*d as usize))
}

impl SaltTensor {
    pub fn new(dims: Vec<usize>, data: SaltData) -> Result<Self, SaltError> {
        if dims.len() > 255 {
            return Err(SaltError::TooManyDims(dims.len()));
        }
        let dims = dims
            .into_iter()
            .map(|d| u32::try_from(d).map_err(|_| SaltError::DimTooLarge(d)))
            .collect::<Result<Vec<_>, _>>()?;
        let count = element_count(&dims).ok_or(SaltError::Overflow)?;
        if count != data.len() {
            return Err(SaltError::LengthMismatch { len: data.len(), dims });
        }
        Ok(Self { dims, data })
    }

    pub fn dims(&self) -> &[u32] {
        &self.dims
    }

    pub fn data(&self) -> &SaltData {
        &self.data
    }

    pub fn dtype(&self) -> Dtype {
        self.data.dtype()
    }

    pub fn encode(&self) -> Vec<u8> {
        let payload = self.data.len() * self.dtype().size();
        let mut out = Vec::with_capacity(7 + 4 * self.dims.len() + payload);
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.push(self.dtype() as u8);
        out.push(self.dims.len() as u8);
        for d in &self.dims {
            out.extend_from_slice(&d.to_le_bytes());
        }
        match &self.data {
            SaltData::F32(v) => {
                for x in v {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
            SaltData::U8(v) => out.extend_from_slice(v),
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, SaltError> {
        let mut cursor = Cursor { bytes, offset: 0 };
        let magic = cursor.take(4)?;
        if magic != MAGIC {
            return Err(SaltError::BadMagic { found: magic.to_vec() });
        }
        let version = cursor.take(1)?[0];
        if version != VERSION {
            return Err(SaltError::BadVersion { version });
        }
        let code = cursor.take(1)?[0];
        let dtype = Dtype::from_code(code).ok_or(SaltError::BadDtype { code })?;
        let ndim = cursor.take(1)?[0] as usize;
        let mut dims = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            let b = cursor.take(4)?;
            dims.push(u32::from_le_bytes([b[0], b[1], b[2], b[3]]));
        }
        let count = element_count(&dims).ok_or(SaltError::Overflow)?;
        let size = count.checked_mul(dtype.size()).ok_or(SaltError::Overflow)?;
        let payload = cursor.take(size)?;
        let data = match dtype {
            Dtype::F32 => SaltData::F32(
                payload
                    .chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect(),
            ),
            Dtype::U8 => SaltData::U8(payload.to_vec()),
        };
        if cursor.offset != bytes.len() {
            return Err(SaltError::TrailingBytes {
                offset: cursor.offset,
                extra: bytes.len() - cursor.offset,
            });
        }
        Ok(Self { dims, data })
    }

    /// `K x P x P` float32 tensor from a patch stack.
    pub fn from_stack(stack: &PatchStack) -> Self {
        let (k, p) = stack.shape();
        Self::new(vec![k, p, p], SaltData::F32(stack.values().to_vec())).expect("stack shape")
    }

    pub fn into_stack(self) -> Result<PatchStack, SaltError> {
        match (&self.data, self.dims.as_slice()) {
            (SaltData::F32(_), [k, p, q]) if p == q => {
                let (k, p) = (*k as usize, *p as usize);
                let SaltData::F32(values) = self.data else {
                    unreachable!()
                };
                PatchStack::new(k, p, values).map_err(|e: SalienceError| SaltError::Stack(e.to_string()))
            }
            _ => Err(SaltError::UnexpectedLayout {
                expected: "float32 K x P x P stack",
                dtype: self.dtype(),
                dims: self.dims,
            }),
        }
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    offset: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], SaltError> {
        let available = self.bytes.len() - self.offset;
        if n > available {
            return Err(SaltError::Truncated {
                offset: self.offset,
                needed: n,
                available,
            });
        }
        let out = &self.bytes[self.offset..self.offset + n];
        self.offset += n;
        Ok(out)
    }
}
