//! Binary tensor files.
//!
//! ```text
//! offset  size        field
//! 0       4           magic "DAST"
//! 4       4           format version (u32, currently 1)
//! 8       1           dtype (1 = f32, 2 = f64, 3 = u8)
//! 9       4           ndim (u32)
//! 13      8 * ndim    dims (u64 each)
//! ..      n * size    payload, row-major
//! ```
//!
//! All integers and floats are little-endian. Decoding rejects trailing
//! bytes, so a file is valid only if its length is exactly header + payload.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"DAST";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DType {
    F32 = 1,
    F64 = 2,
    U8 = 3,
}

impl DType {
    pub fn size(self) -> usize {
        match self {
            DType::F32 => 4,
            DType::F64 => 8,
            DType::U8 => 1,
        }
    }

    fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(DType::F32),
            2 => Some(DType::F64),
            3 => Some(DType::U8),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    U8(Vec<u8>),
}

impl TensorData {
    pub fn dtype(&self) -> DType {
        match self {
            TensorData::F32(_) => DType::F32,
            TensorData::F64(_) => DType::F64,
            TensorData::U8(_) => DType::U8,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
            TensorData::U8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// A typed n-dimensional array as stored on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct TensorFile {
    dims: Vec<usize>,
    data: TensorData,
}

impl TensorFile {
    pub fn new(dims: &[usize], data: TensorData) -> Result<Self> {
        let n: usize = dims.iter().product();
        if n != data.len() {
            return Err(Error::Shape(format!(
                "{} values cannot fill shape {dims:?}",
                data.len()
            )));
        }
        Ok(Self { dims: dims.to_vec(), data })
    }

    pub fn f64(dims: &[usize], data: Vec<f64>) -> Result<Self> {
        Self::new(dims, TensorData::F64(data))
    }

    pub fn u8(dims: &[usize], data: Vec<u8>) -> Result<Self> {
        Self::new(dims, TensorData::U8(data))
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn data(&self) -> &TensorData {
        &self.data
    }

    pub fn dtype(&self) -> DType {
        self.data.dtype()
    }

    /// Values as `f64`; exact for every dtype.
    pub fn to_f64(&self) -> Vec<f64> {
        match &self.data {
            TensorData::F32(v) => v.iter().map(|&x| f64::from(x)).collect(),
            TensorData::F64(v) => v.clone(),
            TensorData::U8(v) => v.iter().map(|&x| f64::from(x)).collect(),
        }
    }

    pub fn into_f64(self) -> Vec<f64> {
        match self.data {
            TensorData::F64(v) => v,
            _ => self.to_f64(),
        }
    }

    pub fn to_tensor(&self) -> Result<Tensor> {
        Tensor::from_vec(&self.dims, self.to_f64())
    }

    pub fn encoded_len(&self) -> usize {
        13 + 8 * self.dims.len() + self.data.len() * self.dtype().size()
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.push(self.dtype() as u8);
        out.extend_from_slice(&(self.dims.len() as u32).to_le_bytes());
        for &d in &self.dims {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        match &self.data {
            TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            TensorData::U8(v) => out.extend_from_slice(v),
        }
        out
    }

    /// Decodes a complete file image; `path` only labels errors.
    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut r = Reader::new(bytes, path);
        let (t, end) = Self::decode_at(&mut r)?;
        if end != bytes.len() {
            return Err(r.error(end as u64, format!("{} trailing bytes", bytes.len() - end)));
        }
        Ok(t)
    }

    /// Decodes one tensor starting at the reader position; returns the
    /// tensor and the offset just past it.
    pub(crate) fn decode_at(r: &mut Reader<'_>) -> Result<(Self, usize)> {
        let start = r.pos;
        if r.take(4, "magic")? != MAGIC {
            return Err(r.error(start as u64, "bad magic, expected \"DAST\"".into()));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(r.error(start as u64 + 4, format!("unsupported version {version}")));
        }
        let code = r.u8("dtype")?;
        let dtype = DType::from_code(code)
            .ok_or_else(|| r.error(start as u64 + 8, format!("unknown dtype code {code}")))?;
        let ndim = r.u32("ndim")? as usize;
        let mut dims = Vec::with_capacity(ndim.min(64));
        for _ in 0..ndim {
            let at = r.pos;
            let d = r.u64("dimension")?;
            let d = usize::try_from(d).map_err(|_| r.error(at as u64, format!("dimension {d} too large")))?;
            dims.push(d);
        }
        let payload_at = r.pos;
        let n = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .and_then(|n| n.checked_mul(dtype.size()).map(|b| (n, b)))
            .ok_or_else(|| r.error(payload_at as u64, "payload size overflows".into()))?;
        let (count, bytes) = n;
        let raw = r.take(bytes, "payload")?;
        let data = match dtype {
            DType::F32 => TensorData::F32(
                raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect(),
            ),
            DType::F64 => TensorData::F64(
                raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
            ),
            DType::U8 => TensorData::U8(raw.to_vec()),
        };
        debug_assert_eq!(data.len(), count);
        Ok((Self { dims, data }, r.pos))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.encode())?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::decode(&fs::read(path)?, path)
    }
}

impl From<&Tensor> for TensorFile {
    fn from(t: &Tensor) -> Self {
        Self { dims: t.dims().to_vec(), data: TensorData::F64(t.data().to_vec()) }
    }
}

/// Bounds-checked little-endian cursor that reports byte offsets.
pub(crate) struct Reader<'a> {
    bytes: &'a [u8],
    path: &'a Path,
    pub(crate) pos: usize,
}

impl<'a> Reader<'a> {
    pub(crate) fn new(bytes: &'a [u8], path: &'a Path) -> Self {
        Self { bytes, path, pos: 0 }
    }

    pub(crate) fn error(&self, offset: u64, reason: String) -> Error {
        Error::Format { path: self.path.to_path_buf(), offset, reason }
    }

    pub(crate) fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }

    pub(crate) fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.remaining() < n {
            return Err(self.error(
                self.pos as u64,
                format!("truncated {what}: need {n} bytes, {} left", self.remaining()),
            ));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub(crate) fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    pub(crate) fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    pub(crate) fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn p() -> &'static Path {
        Path::new("mem")
    }

    #[test]
    fn header_layout() {
        let t = TensorFile::u8(&[2, 3], vec![1, 2, 3, 4, 5, 6]).unwrap();
        let b = t.encode();
        assert_eq!(&b[..4], b"DAST");
        assert_eq!(u32::from_le_bytes(b[4..8].try_into().unwrap()), 1);
        assert_eq!(b[8], 3);
        assert_eq!(u32::from_le_bytes(b[9..13].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(b[13..21].try_into().unwrap()), 2);
        assert_eq!(u64::from_le_bytes(b[21..29].try_into().unwrap()), 3);
        assert_eq!(&b[29..], &[1, 2, 3, 4, 5, 6]);
    }

    #[test]
    fn corrupt_files_report_offsets() {
        let good = TensorFile::f64(&[2], vec![1.0, 2.0]).unwrap().encode();
        let mut bad = good.clone();
        bad[0] = b'X';
        assert!(matches!(TensorFile::decode(&bad, p()), Err(Error::Format { offset: 0, .. })));
        let mut bad = good.clone();
        bad[8] = 9;
        assert!(matches!(TensorFile::decode(&bad, p()), Err(Error::Format { offset: 8, .. })));
        assert!(matches!(
            TensorFile::decode(&good[..good.len() - 1], p()),
            Err(Error::Format { offset: 21, .. })
        ));
        let mut long = good.clone();
        long.push(0);
        assert!(TensorFile::decode(&long, p()).is_err());
    }

    fn dims() -> impl Strategy<Value = Vec<usize>> {
        prop::collection::vec(0usize..5, 0..=4)
    }

    proptest! {
        #[test]
        fn round_trip_f64(d in dims(), seed in any::<u64>()) {
            let n: usize = d.iter().product();
            let mut s = seed;
            let v: Vec<f64> = (0..n).map(|_| { s = s.wrapping_mul(6364136223846793005).wrapping_add(1); f64::from_bits(s) }).collect();
            let t = TensorFile::f64(&d, v).unwrap();
            let back = TensorFile::decode(&t.encode(), p()).unwrap();
            prop_assert_eq!(back.dims(), t.dims());
            let (TensorData::F64(a), TensorData::F64(b)) = (back.data(), t.data()) else { unreachable!() };
            prop_assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
        }

        #[test]
        fn round_trip_f32_u8(d in dims(), seed in any::<u32>()) {
            let n: usize = d.iter().product();
            let f: Vec<f32> = (0..n as u32).map(|i| f32::from_bits(seed.wrapping_mul(i + 7))).collect();
            let t = TensorFile::new(&d, TensorData::F32(f)).unwrap();
            let back = TensorFile::decode(&t.encode(), p()).unwrap();
            let (TensorData::F32(a), TensorData::F32(b)) = (back.data(), t.data()) else { unreachable!() };
            prop_assert!(a.iter().zip(b).all(|(x, y)| x.to_bits() == y.to_bits()));
            let u = TensorFile::u8(&d, (0..n).map(|i| (i as u32 ^ seed) as u8).collect()).unwrap();
            prop_assert_eq!(TensorFile::decode(&u.encode(), p()).unwrap(), u);
        }
    }
}
