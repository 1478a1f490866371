//! The EMB1 binary embedding format.
//!
//! ```text
//! offset  size  field
//! 0       4     magic "EMB1"
//! 4       1     version (1)
//! 5       1     dtype code (1 = float32)
//! 6       2     reserved, zero
//! 8       4     count (u32 LE)
//! 12      4     dim   (u32 LE)
//! 16      ...   count * dim float32 LE, row-major
//! ```
//!
//! There is no footer. The payload must be exactly `count * dim * 4` bytes.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"EMB1";
const VERSION: u8 = 1;
const DTYPE_F32: u8 = 1;
pub const HEADER_LEN: usize = 16;

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EmbeddingMeta {
    pub encoder_name: String,
    pub label: String,
}

/// An immutable `count x dim` matrix of finite 32-bit floats.
#[derive(Debug, Clone)]
pub struct EmbeddingSet {
    dim: usize,
    data: Vec<f32>,
    meta: EmbeddingMeta,
}

impl PartialEq for EmbeddingSet {
    /// Bitwise equality of the matrix; metadata is ignored.
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim
            && self.data.len() == other.data.len()
            && self
                .data
                .iter()
                .zip(&other.data)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}

impl EmbeddingSet {
    pub fn new(dim: usize, data: Vec<f32>, meta: EmbeddingMeta) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Data("embedding dim must be positive".into()));
        }
        if dim > u32::MAX as usize {
            return Err(Error::Size(format!("dim {dim} exceeds u32")));
        }
        if data.len() % dim != 0 {
            return Err(Error::Data(format!(
                "{} values do not form rows of length {dim}",
                data.len()
            )));
        }
        let count = data.len() / dim;
        if count > u32::MAX as usize {
            return Err(Error::Size(format!("count {count} exceeds u32")));
        }
        if let Some(pos) = data.iter().position(|x| !x.is_finite()) {
            return Err(Error::Data(format!(
                "non-finite value {} at row {}, column {}",
                data[pos],
                pos / dim,
                pos % dim
            )));
        }
        Ok(Self { dim, data, meta })
    }

    pub fn empty(dim: usize) -> Result<Self> {
        Self::new(dim, Vec::new(), EmbeddingMeta::default())
    }

    /// Builds a set from rows that must all share one length.
    pub fn from_rows<R: AsRef<[f32]>>(rows: &[R]) -> Result<Self> {
        let dim = rows
            .first()
            .map(|r| r.as_ref().len())
            .ok_or_else(|| Error::Data("cannot infer dim from zero rows".into()))?;
        let mut data = Vec::with_capacity(dim * rows.len());
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != dim {
                return Err(Error::Dimension(format!(
                    "row {i} has {} entries, expected {dim}",
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        Self::new(dim, data, EmbeddingMeta::default())
    }

    pub fn with_meta(mut self, meta: EmbeddingMeta) -> Self {
        self.meta = meta;
        self
    }

    pub fn count(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn meta(&self) -> &EmbeddingMeta {
        &self.meta
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    /// Row `i` widened to f64, the precision all computation runs at.
    pub fn row_f64(&self, i: usize) -> Vec<f64> {
        self.row(i).iter().map(|&x| f64::from(x)).collect()
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f32]> + '_ {
        self.data.chunks_exact(self.dim)
    }

    /// New set made of the given rows, in the given order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.dim);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        Self {
            dim: self.dim,
            data,
            meta: self.meta.clone(),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(HEADER_LEN + self.data.len() * 4);
        out.extend_from_slice(MAGIC);
        out.push(VERSION);
        out.push(DTYPE_F32);
        out.extend_from_slice(&[0, 0]);
        out.extend_from_slice(&(self.count() as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for x in &self.data {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < HEADER_LEN {
            return Err(Error::Format(format!(
                "header needs {HEADER_LEN} bytes, got {}",
                bytes.len()
            )));
        }
        if &bytes[0..4] != MAGIC {
            return Err(Error::Format(format!("bad magic {:?}", &bytes[0..4])));
        }
        if bytes[4] != VERSION {
            return Err(Error::Format(format!("unsupported version {}", bytes[4])));
        }
        if bytes[5] != DTYPE_F32 {
            return Err(Error::Format(format!("unsupported dtype code {}", bytes[5])));
        }
        if bytes[6] != 0 || bytes[7] != 0 {
            return Err(Error::Format("reserved bytes are not zero".into()));
        }
        let count = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        let dim = u32::from_le_bytes(bytes[12..16].try_into().unwrap());
        if dim == 0 {
            return Err(Error::Format("dim is zero".into()));
        }
        let expected = u64::from(count)
            .checked_mul(u64::from(dim))
            .and_then(|n| n.checked_mul(4))
            .and_then(|n| usize::try_from(n).ok())
            .ok_or_else(|| Error::Size(format!("count {count} x dim {dim} overflows")))?;
        let payload = &bytes[HEADER_LEN..];
        if payload.len() != expected {
            return Err(Error::Corrupt(format!(
                "payload is {} bytes, header declares {expected}",
                payload.len()
            )));
        }
        let data: Vec<f32> = payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Self::new(dim as usize, data, EmbeddingMeta::default())
    }
}

pub fn read_embedding_file(path: impl AsRef<Path>) -> Result<EmbeddingSet> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let set = EmbeddingSet::from_bytes(&bytes).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", path.display())),
        Error::Corrupt(m) => Error::Corrupt(format!("{}: {m}", path.display())),
        Error::Size(m) => Error::Size(format!("{}: {m}", path.display())),
        Error::Data(m) => Error::Data(format!("{}: {m}", path.display())),
        other => other,
    })?;
    let label = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    Ok(set.with_meta(EmbeddingMeta {
        encoder_name: String::new(),
        label,
    }))
}

pub fn write_embedding_file(set: &EmbeddingSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, set.to_bytes()).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn header(count: u32, dim: u32) -> Vec<u8> {
        let mut b = b"EMB1".to_vec();
        b.extend_from_slice(&[1, 1, 0, 0]);
        b.extend_from_slice(&count.to_le_bytes());
        b.extend_from_slice(&dim.to_le_bytes());
        b
    }

    #[test]
    fn reads_two_by_three() {
        let mut b = header(2, 3);
        for x in [1.0f32, 2.0, 3.0, 4.0, 5.0, 6.0] {
            b.extend_from_slice(&x.to_le_bytes());
        }
        let set = EmbeddingSet::from_bytes(&b).unwrap();
        assert_eq!(set.count(), 2);
        assert_eq!(set.dim(), 3);
        assert_eq!(set.row(0), &[1.0, 2.0, 3.0]);
        assert_eq!(set.row(1), &[4.0, 5.0, 6.0]);
    }

    #[test]
    fn empty_set_keeps_dim() {
        let set = EmbeddingSet::from_bytes(&header(0, 512)).unwrap();
        assert_eq!(set.count(), 0);
        assert_eq!(set.dim(), 512);
        assert!(set.is_empty());
    }

    #[test]
    fn zero_row_layout() {
        let set = EmbeddingSet::from_rows(&[[0.0f32, 0.0]]).unwrap();
        let bytes = set.to_bytes();
        assert_eq!(bytes.len(), 24);
        assert_eq!(&bytes[..4], b"EMB1");
        assert_eq!(&bytes[4..8], &[1, 1, 0, 0]);
        assert_eq!(&bytes[8..16], &[1, 0, 0, 0, 2, 0, 0, 0]);
        assert!(bytes[16..].iter().all(|&b| b == 0));
        assert_eq!(bytes, set.to_bytes());
    }

    #[test]
    fn rejects_bad_magic_and_version() {
        let mut b = header(0, 4);
        b[0] = b'X';
        assert!(matches!(EmbeddingSet::from_bytes(&b), Err(Error::Format(_))));
        let mut b = header(0, 4);
        b[4] = 2;
        assert!(matches!(EmbeddingSet::from_bytes(&b), Err(Error::Format(_))));
        assert!(matches!(EmbeddingSet::from_bytes(b"EMB1"), Err(Error::Format(_))));
    }

    #[test]
    fn rejects_truncated_and_oversized_payloads() {
        let mut b = header(2, 2);
        b.extend_from_slice(&[0u8; 12]);
        assert!(matches!(EmbeddingSet::from_bytes(&b), Err(Error::Corrupt(_))));
        b.extend_from_slice(&[0u8; 8]);
        assert!(matches!(EmbeddingSet::from_bytes(&b), Err(Error::Corrupt(_))));
    }

    #[test]
    fn rejects_non_finite() {
        let mut b = header(1, 2);
        b.extend_from_slice(&1.0f32.to_le_bytes());
        b.extend_from_slice(&f32::NAN.to_le_bytes());
        assert!(matches!(EmbeddingSet::from_bytes(&b), Err(Error::Data(_))));
        let mut b = header(1, 1);
        b.extend_from_slice(&f32::INFINITY.to_le_bytes());
        assert!(matches!(EmbeddingSet::from_bytes(&b), Err(Error::Data(_))));
    }

    #[test]
    fn huge_shape_is_not_silently_truncated() {
        let b = header(u32::MAX, u32::MAX);
        assert!(EmbeddingSet::from_bytes(&b).is_err());
    }

    #[test]
    fn file_round_trip_records_label() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("night.emb");
        let set = EmbeddingSet::from_rows(&[[1.5f32, -2.0], [0.25, 8.0]]).unwrap();
        write_embedding_file(&set, &path).unwrap();
        let back = read_embedding_file(&path).unwrap();
        assert_eq!(back, set);
        assert_eq!(back.meta().label, "night");
    }

    #[test]
    fn missing_file_reports_path() {
        let err = read_embedding_file("/nonexistent/x.emb").unwrap_err();
        assert!(err.to_string().contains("/nonexistent/x.emb"));
    }

    proptest! {
        #[test]
        fn bytes_round_trip(dim in 1usize..9, rows in 0usize..12, seed in any::<u32>()) {
            let data: Vec<f32> = (0..dim * rows)
                .map(|i| f32::from_bits((seed.wrapping_add(i as u32).wrapping_mul(2654435761)) & 0x7f7f_ffff))
                .collect();
            let set = EmbeddingSet::new(dim, data, EmbeddingMeta::default()).unwrap();
            let bytes = set.to_bytes();
            let back = EmbeddingSet::from_bytes(&bytes).unwrap();
            prop_assert_eq!(&back, &set);
            prop_assert_eq!(back.to_bytes(), bytes);
        }
    }
}
