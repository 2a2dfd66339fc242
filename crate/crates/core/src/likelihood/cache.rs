//! On-disk cache of a design matrix.
//!
//! Little-endian layout:
//!
//! ```text
//! magic    b"CLDM"
//! version  u32      (1)
//! dataset  u64      short content hash of the dataset
//! omega    f64      kernel decay
//! n_rows   u64
//! n_coords u64
//! nnz      u64
//! row_ptr  (n_rows + 1) × u64
//! cols     nnz × u32
//! vals     nnz × f64
//! scores   n_rows × f64
//! ```

use std::fs;
use std::path::Path;

use super::design::DesignMatrix;
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"CLDM";
const VERSION: u32 = 1;
const HEADER_LEN: usize = 4 + 4 + 8 + 8 + 8 + 8 + 8;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CacheKey {
    pub dataset_hash: u64,
    pub omega: f64,
}

pub fn encode_design(x: &DesignMatrix, key: CacheKey) -> Vec<u8> {
    let n_rows = x.n_rows();
    let nnz = x.nnz();
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * (n_rows + 1) + 12 * nnz + 8 * n_rows);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&key.dataset_hash.to_le_bytes());
    out.extend_from_slice(&key.omega.to_le_bytes());
    out.extend_from_slice(&(n_rows as u64).to_le_bytes());
    out.extend_from_slice(&(x.n_coords() as u64).to_le_bytes());
    out.extend_from_slice(&(nnz as u64).to_le_bytes());
    for &p in &x.row_ptr {
        out.extend_from_slice(&(p as u64).to_le_bytes());
    }
    for &c in &x.cols {
        out.extend_from_slice(&c.to_le_bytes());
    }
    for &v in &x.vals {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for &s in &x.scores {
        out.extend_from_slice(&s.to_le_bytes());
    }
    out
}

struct Reader<'a> {
    buf: &'a [u8],
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() < n {
            return Err(Error::Cache("truncated".into()));
        }
        let (head, tail) = self.buf.split_at(n);
        self.buf = tail;
        Ok(head)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn len(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Cache("length overflows".into()))
    }
}

/// Decode and fully check a cache blob.
pub fn decode_design(bytes: &[u8]) -> Result<(CacheKey, DesignMatrix)> {
    let mut r = Reader { buf: bytes };
    if r.take(4)? != MAGIC {
        return Err(Error::Cache("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Cache(format!("unsupported version {version}")));
    }
    let key = CacheKey {
        dataset_hash: r.u64()?,
        omega: r.f64()?,
    };
    let n_rows = r.len()?;
    let n_coords = r.len()?;
    let nnz = r.len()?;
    if n_coords > u32::MAX as usize + 1 || n_rows > u32::MAX as usize {
        return Err(Error::Cache("dimensions exceed u32 indices".into()));
    }
    // Pruning leaves no coordinate without an entry in its column.
    if n_coords > nnz {
        return Err(Error::Cache(format!("{n_coords} coordinates but only {nnz} entries")));
    }
    let body = (n_rows as u128 + 1) * 8 + nnz as u128 * 12 + n_rows as u128 * 8;
    if body != r.buf.len() as u128 {
        return Err(Error::Cache(format!(
            "body is {} bytes, header implies {body}",
            r.buf.len()
        )));
    }

    let mut row_ptr = Vec::with_capacity(n_rows + 1);
    for _ in 0..=n_rows {
        row_ptr.push(r.len()?);
    }
    if row_ptr[0] != 0 || row_ptr[n_rows] != nnz || row_ptr.windows(2).any(|w| w[0] > w[1]) {
        return Err(Error::Cache("row pointers are not a partition of the entries".into()));
    }
    let mut cols = Vec::with_capacity(nnz);
    for _ in 0..nnz {
        let c = r.u32()?;
        if c as usize >= n_coords {
            return Err(Error::Cache(format!("column {c} out of range")));
        }
        cols.push(c);
    }
    for w in row_ptr.windows(2) {
        if cols[w[0]..w[1]].windows(2).any(|p| p[0] >= p[1]) {
            return Err(Error::Cache("columns within a row must increase".into()));
        }
    }
    let mut vals = Vec::with_capacity(nnz);
    for _ in 0..nnz {
        let v = r.f64()?;
        if !(v.is_finite() && v >= 0.0) {
            return Err(Error::Cache(format!("coefficient {v} is not finite and nonnegative")));
        }
        vals.push(v);
    }
    let mut scores = Vec::with_capacity(n_rows);
    for _ in 0..n_rows {
        let s = r.f64()?;
        if !(s.is_finite() && s >= 0.0) {
            return Err(Error::Cache(format!("score {s} is not finite and nonnegative")));
        }
        scores.push(s);
    }
    Ok((key, DesignMatrix::from_csr(n_coords, row_ptr, cols, vals, scores)))
}

pub fn save_cached_design(path: &Path, x: &DesignMatrix, key: CacheKey) -> Result<()> {
    fs::write(path, encode_design(x, key)).map_err(|e| Error::io(path, e))
}

/// Load a cached design if the file exists and matches `key` exactly.
pub fn load_cached_design(path: &Path, key: CacheKey) -> Result<Option<DesignMatrix>> {
    if !path.exists() {
        return Ok(None);
    }
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let (found, x) = decode_design(&bytes)?;
    if found.dataset_hash == key.dataset_hash && found.omega.to_bits() == key.omega.to_bits() {
        Ok(Some(x))
    } else {
        Ok(None)
    }
}
