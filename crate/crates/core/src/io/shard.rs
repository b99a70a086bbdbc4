//! The `CACT` activation-shard format.
//!
//! A shard stores a `rows × cols` matrix of representations (one row per
//! token or sample) and, optionally, the `vocab × cols` unembedding table of
//! the model that produced them. Layout, all integers little-endian:
//!
//! ```text
//! offset  size  field
//!      0     4  magic "CACT"
//!      4     4  u32 version (= 1)
//!      8     4  u32 flags (bit 0: unembedding block present)
//!     12     4  u32 reserved (= 0)
//!     16     8  u64 rows
//!     24     8  u64 cols
//!     32     8  u64 vocab (0 when no unembedding)
//!     40     8  u64 meta_len
//!     48     8  u64 payload_len = (rows + vocab) * cols * 4
//!     56     *  meta: meta_len bytes of UTF-8 JSON
//!      *     *  data: rows * cols f32, row-major
//!      *     *  unembedding: vocab * cols f32, row-major
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use nalgebra::DMatrix;

use crate::error::{Error, Result};

pub const SHARD_MAGIC: [u8; 4] = *b"CACT";
pub const SHARD_VERSION: u32 = 1;
const HEADER_LEN: usize = 56;
const FLAG_UNEMBEDDING: u32 = 1;

/// Default upper bound on `meta_len + payload_len` accepted by the reader (16 GiB).
pub const DEFAULT_MAX_BYTES: u64 = 16 << 30;

/// A matrix of stored activations, optionally carrying the unembedding table.
///
/// Values are held as `f32` exactly as on disk; numerical code converts to
/// `f64` through [`ActivationShard::to_matrix`].
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationShard {
    rows: usize,
    cols: usize,
    data: Vec<f32>,
    unembedding: Option<Unembedding>,
    pub meta: String,
}

#[derive(Debug, Clone, PartialEq)]
struct Unembedding {
    vocab: usize,
    data: Vec<f32>,
}

impl ActivationShard {
    /// Builds a shard from a row-major `f32` buffer.
    pub fn new(rows: usize, cols: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::Dimension(format!("shard data has {} values, expected {rows}x{cols}", data.len())));
        }
        check_finite("shard data", &data)?;
        Ok(Self { rows, cols, data, unembedding: None, meta: String::from("{}") })
    }

    /// Rounds an `f64` matrix to `f32` storage.
    pub fn from_matrix(m: &DMatrix<f64>) -> Result<Self> {
        let mut data = Vec::with_capacity(m.len());
        for r in 0..m.nrows() {
            for c in 0..m.ncols() {
                data.push(m[(r, c)] as f32);
            }
        }
        Self::new(m.nrows(), m.ncols(), data)
    }

    pub fn with_unembedding(mut self, table: &DMatrix<f64>) -> Result<Self> {
        if table.ncols() != self.cols {
            return Err(Error::Dimension(format!(
                "unembedding has {} columns, shard has {}",
                table.ncols(),
                self.cols
            )));
        }
        let mut data = Vec::with_capacity(table.len());
        for r in 0..table.nrows() {
            for c in 0..table.ncols() {
                data.push(table[(r, c)] as f32);
            }
        }
        check_finite("unembedding", &data)?;
        self.unembedding = Some(Unembedding { vocab: table.nrows(), data });
        Ok(self)
    }

    pub fn with_meta(mut self, meta: impl Into<String>) -> Self {
        self.meta = meta.into();
        self
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[f32] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn has_unembedding(&self) -> bool {
        self.unembedding.is_some()
    }

    pub fn vocab(&self) -> Option<usize> {
        self.unembedding.as_ref().map(|u| u.vocab)
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_iterator(self.rows, self.cols, self.data.iter().map(|&v| v as f64))
    }

    /// Selected rows as an `f64` matrix, in the order given.
    pub fn select_rows(&self, indices: &[usize]) -> Result<DMatrix<f64>> {
        if let Some(&bad) = indices.iter().find(|&&i| i >= self.rows) {
            return Err(Error::InvalidArgument(format!("row {bad} out of range for shard with {} rows", self.rows)));
        }
        Ok(DMatrix::from_row_iterator(
            indices.len(),
            self.cols,
            indices.iter().flat_map(|&i| self.row(i).iter().map(|&v| v as f64)),
        ))
    }

    pub fn unembedding_matrix(&self) -> Option<DMatrix<f64>> {
        self.unembedding
            .as_ref()
            .map(|u| DMatrix::from_row_iterator(u.vocab, self.cols, u.data.iter().map(|&v| v as f64)))
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        let vocab = self.vocab().unwrap_or(0) as u64;
        let flags = if self.unembedding.is_some() { FLAG_UNEMBEDDING } else { 0 };
        let payload = (self.rows as u64 + vocab) * self.cols as u64 * 4;
        w.write_all(&SHARD_MAGIC)?;
        w.write_all(&SHARD_VERSION.to_le_bytes())?;
        w.write_all(&flags.to_le_bytes())?;
        w.write_all(&0u32.to_le_bytes())?;
        w.write_all(&(self.rows as u64).to_le_bytes())?;
        w.write_all(&(self.cols as u64).to_le_bytes())?;
        w.write_all(&vocab.to_le_bytes())?;
        w.write_all(&(self.meta.len() as u64).to_le_bytes())?;
        w.write_all(&payload.to_le_bytes())?;
        w.write_all(self.meta.as_bytes())?;
        for v in &self.data {
            w.write_all(&v.to_le_bytes())?;
        }
        if let Some(u) = &self.unembedding {
            for v in &u.data {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()
    }

    pub fn read_from<R: Read>(r: R) -> Result<Self> {
        Self::read_from_capped(r, DEFAULT_MAX_BYTES)
    }

    /// Reads a shard, refusing headers that declare more than `max_bytes`
    /// of meta plus payload. Nothing beyond the declared size is allocated.
    pub fn read_from_capped<R: Read>(mut r: R, max_bytes: u64) -> Result<Self> {
        let mut header = [0u8; HEADER_LEN];
        read_exact(&mut r, &mut header, "header")?;
        let magic: [u8; 4] = header[0..4].try_into().unwrap();
        if magic != SHARD_MAGIC {
            return Err(Error::BadMagic { expected: SHARD_MAGIC, found: magic });
        }
        let u32_at = |o: usize| u32::from_le_bytes(header[o..o + 4].try_into().unwrap());
        let u64_at = |o: usize| u64::from_le_bytes(header[o..o + 8].try_into().unwrap());
        let version = u32_at(4);
        if version != SHARD_VERSION {
            return Err(Error::UnsupportedVersion(version));
        }
        let flags = u32_at(8);
        if flags & !FLAG_UNEMBEDDING != 0 {
            return Err(Error::Malformed(format!("unknown flag bits {flags:#x}")));
        }
        let (rows, cols, vocab, meta_len, payload_len) = (u64_at(16), u64_at(24), u64_at(32), u64_at(40), u64_at(48));
        let has_unembedding = flags & FLAG_UNEMBEDDING != 0;
        if !has_unembedding && vocab != 0 {
            return Err(Error::Malformed("vocab set without unembedding flag".into()));
        }
        let expected = rows
            .checked_add(vocab)
            .and_then(|n| n.checked_mul(cols))
            .and_then(|n| n.checked_mul(4))
            .ok_or_else(|| Error::Malformed("declared dimensions overflow".into()))?;
        if expected != payload_len {
            return Err(Error::Malformed(format!("declared payload {payload_len} bytes, dimensions imply {expected}")));
        }
        let declared = meta_len.saturating_add(payload_len);
        if declared > max_bytes {
            return Err(Error::TooLarge { declared, cap: max_bytes });
        }

        let mut meta = vec![0u8; meta_len as usize];
        read_exact(&mut r, &mut meta, "meta block")?;
        let meta = String::from_utf8(meta).map_err(|_| Error::Malformed("meta is not UTF-8".into()))?;

        let (rows, cols, vocab) = (rows as usize, cols as usize, vocab as usize);
        let data = read_f32_block(&mut r, rows * cols, "data block")?;
        check_finite("shard data", &data)?;
        let unembedding = if has_unembedding {
            let u = read_f32_block(&mut r, vocab * cols, "unembedding block")?;
            check_finite("unembedding", &u)?;
            Some(Unembedding { vocab, data: u })
        } else {
            None
        };
        Ok(Self { rows, cols, data, unembedding, meta })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let f = File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_to(BufWriter::new(f)).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(BufReader::new(f))
    }
}

fn read_exact<R: Read>(r: &mut R, buf: &mut [u8], what: &str) -> Result<()> {
    r.read_exact(buf).map_err(|e| match e.kind() {
        std::io::ErrorKind::UnexpectedEof => Error::Truncated(format!("{what} ended early")),
        _ => Error::io("<stream>", e),
    })
}

fn read_f32_block<R: Read>(r: &mut R, count: usize, what: &str) -> Result<Vec<f32>> {
    let mut bytes = vec![0u8; count * 4];
    read_exact(r, &mut bytes, what)?;
    Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
}

fn check_finite(what: &str, values: &[f32]) -> Result<()> {
    match values.iter().position(|v| !v.is_finite()) {
        Some(index) => Err(Error::NonFinite { what: what.to_string(), index }),
        None => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> ActivationShard {
        let m = DMatrix::from_fn(3, 4, |r, c| r as f64 * 0.5 - c as f64 * 1.25);
        let u = DMatrix::from_fn(5, 4, |r, c| (r * 4 + c) as f64 / 7.0);
        ActivationShard::from_matrix(&m).unwrap().with_unembedding(&u).unwrap().with_meta(r#"{"source":"test"}"#)
    }

    fn encode(s: &ActivationShard) -> Vec<u8> {
        let mut buf = Vec::new();
        s.write_to(&mut buf).unwrap();
        buf
    }

    #[test]
    fn round_trip_is_bit_identical() {
        let s = sample();
        let buf = encode(&s);
        let back = ActivationShard::read_from(&buf[..]).unwrap();
        assert_eq!(back, s);
        assert_eq!(encode(&back), buf);
    }

    #[test]
    fn truncated_file_is_rejected() {
        let buf = encode(&sample());
        for cut in [3, 20, HEADER_LEN + 2, buf.len() - 1] {
            let err = ActivationShard::read_from(&buf[..cut]).unwrap_err();
            assert!(matches!(err, Error::Truncated(_)), "cut {cut}: {err}");
        }
    }

    #[test]
    fn bad_magic_is_rejected() {
        let mut buf = encode(&sample());
        buf[0] = b'X';
        assert!(matches!(ActivationShard::read_from(&buf[..]), Err(Error::BadMagic { .. })));
    }

    #[test]
    fn non_finite_payload_is_rejected() {
        let s = sample();
        let mut buf = encode(&s);
        let off = HEADER_LEN + s.meta.len() + 4;
        buf[off..off + 4].copy_from_slice(&f32::NAN.to_le_bytes());
        let err = ActivationShard::read_from(&buf[..]).unwrap_err();
        assert!(matches!(err, Error::NonFinite { index: 1, .. }), "{err}");
    }

    #[test]
    fn absurd_declared_size_is_rejected_before_allocation() {
        let mut buf = encode(&sample());
        let huge: u64 = 1 << 40;
        buf[16..24].copy_from_slice(&huge.to_le_bytes());
        let payload = (huge + 5) * 4 * 4;
        buf[48..56].copy_from_slice(&payload.to_le_bytes());
        let err = ActivationShard::read_from_capped(&buf[..], 1 << 20).unwrap_err();
        assert!(matches!(err, Error::TooLarge { .. }), "{err}");
    }

    #[test]
    fn inconsistent_payload_length_is_malformed() {
        let mut buf = encode(&sample());
        buf[48..56].copy_from_slice(&12u64.to_le_bytes());
        assert!(matches!(ActivationShard::read_from(&buf[..]), Err(Error::Malformed(_))));
    }

    #[test]
    fn constructor_rejects_nan() {
        assert!(ActivationShard::new(1, 2, vec![0.0, f32::INFINITY]).is_err());
    }
}
