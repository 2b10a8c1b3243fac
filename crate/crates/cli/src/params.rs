//! Unrolled-network parameter files: the magic `UMXP`, then little-endian
//! `u32` version, `K`, `R`, `L`, then for each layer `W` (row-major
//! `R × L`), `B` (row-major `R × R`), `θ` and `η`, all as `f64`.

use std::path::Path;

use nalgebra::DMatrix;
use unmix_core::unroll::{UnrollLayer, UnrollParams};

use crate::error::FormatError;

pub const PARAMS_MAGIC: &[u8; 4] = b"UMXP";
pub const PARAMS_VERSION: u32 = 1;
const HEADER_BYTES: usize = 20;

pub fn params_to_bytes(params: &UnrollParams) -> Vec<u8> {
    let (k, r, l) = (params.depth(), params.endmember_count(), params.band_count());
    let mut out = Vec::with_capacity(HEADER_BYTES + k * (r * l + r * r + 2) * 8);
    out.extend_from_slice(PARAMS_MAGIC);
    for v in [PARAMS_VERSION, k as u32, r as u32, l as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for layer in params.layers() {
        for m in [&layer.w, &layer.b] {
            for row in m.row_iter() {
                for v in row.iter() {
                    out.extend_from_slice(&v.to_le_bytes());
                }
            }
        }
        out.extend_from_slice(&layer.theta.to_le_bytes());
        out.extend_from_slice(&layer.eta.to_le_bytes());
    }
    out
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Cursor<'_> {
    fn take<const N: usize>(&mut self) -> Result<[u8; N], FormatError> {
        let chunk = self.bytes.get(self.pos..self.pos + N).ok_or_else(|| FormatError::Parse {
            offset: self.pos as u64,
            message: format!("file truncated: needed {N} more bytes, {} left", self.bytes.len() - self.pos),
        })?;
        self.pos += N;
        Ok(chunk.try_into().unwrap())
    }

    fn u32(&mut self) -> Result<u32, FormatError> {
        self.take::<4>().map(u32::from_le_bytes)
    }

    fn f64(&mut self) -> Result<f64, FormatError> {
        self.take::<8>().map(f64::from_le_bytes)
    }

    fn matrix(&mut self, rows: usize, cols: usize) -> Result<DMatrix<f64>, FormatError> {
        let mut values = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            values.push(self.f64()?);
        }
        Ok(DMatrix::from_row_slice(rows, cols, &values))
    }
}

pub fn params_from_bytes(bytes: &[u8]) -> Result<UnrollParams, FormatError> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic = cur.take::<4>()?;
    if &magic != PARAMS_MAGIC {
        return Err(FormatError::Parse { offset: 0, message: format!("bad magic {magic:?}") });
    }
    let version = cur.u32()?;
    if version != PARAMS_VERSION {
        return Err(FormatError::Parse { offset: 4, message: format!("unsupported version {version}") });
    }
    let (k, r, l) = (cur.u32()? as usize, cur.u32()? as usize, cur.u32()? as usize);
    if k == 0 || r == 0 || l == 0 {
        return Err(FormatError::Parse { offset: 8, message: format!("zero dimension in K={k}, R={r}, L={l}") });
    }
    let expected = (r * l + r * r + 2)
        .checked_mul(k)
        .and_then(|n| n.checked_mul(8))
        .and_then(|n| n.checked_add(HEADER_BYTES));
    match expected {
        None => {
            return Err(FormatError::Parse { offset: 8, message: "dimensions overflow".into() });
        }
        Some(n) if bytes.len() > n => {
            return Err(FormatError::Parse { offset: n as u64, message: "trailing bytes after last layer".into() });
        }
        _ => {}
    }
    let mut layers = Vec::with_capacity(k);
    for _ in 0..k {
        let w = cur.matrix(r, l)?;
        let b = cur.matrix(r, r)?;
        let theta = cur.f64()?;
        let eta = cur.f64()?;
        layers.push(UnrollLayer { w, b, theta, eta });
    }
    UnrollParams::new(layers).map_err(|e| FormatError::Invalid(e.to_string()))
}

pub fn read_params(path: &Path) -> Result<UnrollParams, FormatError> {
    let bytes = std::fs::read(path).map_err(|e| FormatError::io(path, e))?;
    params_from_bytes(&bytes).map_err(|e| e.in_file(path))
}

pub fn write_params(params: &UnrollParams, path: &Path) -> Result<(), FormatError> {
    std::fs::write(path, params_to_bytes(params)).map_err(|e| FormatError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> UnrollParams {
        let layer = |s: f64| UnrollLayer {
            w: DMatrix::from_fn(2, 3, |i, j| s * (i as f64 - 0.3 * j as f64)),
            b: DMatrix::from_fn(2, 2, |i, j| s + i as f64 * 0.1 - j as f64),
            theta: 0.01 * s,
            eta: 0.9 / s,
        };
        UnrollParams::new(vec![layer(1.0), layer(1.7)]).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let p = sample();
        let bytes = params_to_bytes(&p);
        assert_eq!(bytes.len(), 20 + 2 * (6 + 4 + 2) * 8);
        assert_eq!(params_from_bytes(&bytes).unwrap(), p);
    }

    #[test]
    fn layout_is_row_major() {
        let bytes = params_to_bytes(&sample());
        let second = f64::from_le_bytes(bytes[28..36].try_into().unwrap());
        assert_eq!(second, sample().layers()[0].w[(0, 1)]);
    }

    #[test]
    fn corrupt_files_report_offsets() {
        let bytes = params_to_bytes(&sample());
        match params_from_bytes(&bytes[..bytes.len() - 3]).unwrap_err() {
            FormatError::Parse { offset, .. } => assert_eq!(offset as usize, bytes.len() - 8),
            e => panic!("{e}"),
        }
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(params_from_bytes(&bad), Err(FormatError::Parse { offset: 0, .. })));
        let mut long = bytes;
        long.push(0);
        assert!(params_from_bytes(&long).is_err());
    }
}
