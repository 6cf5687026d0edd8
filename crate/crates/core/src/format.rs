//! The `MLMT` tensor file format.
//!
//! ```text
//! offset  size      field
//! 0       4         magic "MLMT"
//! 4       1         version (1)
//! 5       1         dtype code (0 = f32, 1 = f64)
//! 6       1         rank r
//! 7       4·r       dims, u32 little-endian
//! 7+4r    n·width   elements, little-endian, row-major
//! ```
//!
//! A rank-0 file has no dims and exactly one element.

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::tensor::{DType, Element, Tensor};

pub const MAGIC: [u8; 4] = *b"MLMT";
pub const VERSION: u8 = 1;

/// A tensor read from a file whose dtype is only known at run time.
#[derive(Debug, Clone, PartialEq)]
pub enum AnyTensor {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl AnyTensor {
    pub fn dtype(&self) -> DType {
        match self {
            AnyTensor::F32(_) => DType::F32,
            AnyTensor::F64(_) => DType::F64,
        }
    }

    pub fn shape(&self) -> &[usize] {
        match self {
            AnyTensor::F32(t) => t.shape(),
            AnyTensor::F64(t) => t.shape(),
        }
    }

    /// Values widened to f64, for reporting.
    pub fn values_f64(&self) -> Vec<f64> {
        match self {
            AnyTensor::F32(t) => t.data().iter().map(|&v| v as f64).collect(),
            AnyTensor::F64(t) => t.data().to_vec(),
        }
    }

    pub fn into_f64(self) -> Result<Tensor<f64>> {
        match self {
            AnyTensor::F64(t) => Ok(t),
            AnyTensor::F32(_) => Err(Error::DtypeMismatch {
                expected: "f64",
                found: "f32",
            }),
        }
    }

    pub fn into_f32(self) -> Result<Tensor<f32>> {
        match self {
            AnyTensor::F32(t) => Ok(t),
            AnyTensor::F64(_) => Err(Error::DtypeMismatch {
                expected: "f32",
                found: "f64",
            }),
        }
    }
}

impl From<Tensor<f32>> for AnyTensor {
    fn from(t: Tensor<f32>) -> Self {
        AnyTensor::F32(t)
    }
}

impl From<Tensor<f64>> for AnyTensor {
    fn from(t: Tensor<f64>) -> Self {
        AnyTensor::F64(t)
    }
}

pub fn encode<T: Element>(t: &Tensor<T>) -> Result<Vec<u8>> {
    if t.rank() > u8::MAX as usize {
        return Err(Error::domain(format!("rank {} does not fit the header", t.rank())));
    }
    let mut out = Vec::with_capacity(7 + 4 * t.rank() + t.len() * T::DTYPE.size());
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(T::DTYPE.code());
    out.push(t.rank() as u8);
    for &d in t.shape() {
        let d = u32::try_from(d).map_err(|_| Error::domain(format!("dimension {d} exceeds u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    for &v in t.data() {
        v.write_le(&mut out);
    }
    Ok(out)
}

/// Writes `t` and returns the number of bytes written.
pub fn write_tensor<T: Element, W: Write>(t: &Tensor<T>, mut sink: W) -> Result<usize> {
    let bytes = encode(t)?;
    sink.write_all(&bytes)?;
    Ok(bytes.len())
}

fn read_exact_or_truncated<R: Read>(source: &mut R, buf: &mut [u8], what: &'static str) -> Result<()> {
    let mut filled = 0;
    while filled < buf.len() {
        match source.read(&mut buf[filled..]) {
            Ok(0) => {
                return Err(Error::Truncated {
                    what,
                    expected: buf.len(),
                    got: filled,
                })
            }
            Ok(n) => filled += n,
            Err(e) if e.kind() == std::io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e.into()),
        }
    }
    Ok(())
}

pub fn read_tensor<R: Read>(mut source: R) -> Result<AnyTensor> {
    let mut magic = [0u8; 4];
    read_exact_or_truncated(&mut source, &mut magic, "magic")?;
    if magic != MAGIC {
        return Err(Error::BadMagic(magic));
    }
    let mut head = [0u8; 3];
    read_exact_or_truncated(&mut source, &mut head, "header")?;
    let [version, dtype_code, rank] = head;
    if version != VERSION {
        return Err(Error::UnsupportedVersion(version));
    }
    let dtype = DType::from_code(dtype_code)?;

    let mut dim_bytes = vec![0u8; 4 * rank as usize];
    read_exact_or_truncated(&mut source, &mut dim_bytes, "dims")?;
    let shape: Vec<usize> = dim_bytes
        .chunks_exact(4)
        .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect();
    let count = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .and_then(|n| n.checked_mul(dtype.size()).map(|_| n))
        .ok_or_else(|| Error::domain(format!("tensor of shape {shape:?} is too large")))?;

    // Read through `take` so a lying header cannot force a huge allocation up front.
    let want = count * dtype.size();
    let mut payload = Vec::new();
    source.take(want as u64).read_to_end(&mut payload)?;
    if payload.len() != want {
        return Err(Error::Truncated {
            what: "payload",
            expected: want,
            got: payload.len(),
        });
    }

    Ok(match dtype {
        DType::F32 => AnyTensor::F32(decode_payload(shape, &payload)?),
        DType::F64 => AnyTensor::F64(decode_payload(shape, &payload)?),
    })
}

fn decode_payload<T: Element>(shape: Vec<usize>, payload: &[u8]) -> Result<Tensor<T>> {
    let data = payload.chunks_exact(T::DTYPE.size()).map(T::read_le).collect();
    Tensor::new(shape, data)
}

pub fn save<T: Element>(t: &Tensor<T>, path: impl AsRef<std::path::Path>) -> Result<usize> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    let n = write_tensor(t, &mut w)?;
    w.flush()?;
    Ok(n)
}

pub fn load(path: impl AsRef<std::path::Path>) -> Result<AnyTensor> {
    let file = std::fs::File::open(path)?;
    read_tensor(std::io::BufReader::new(file))
}
