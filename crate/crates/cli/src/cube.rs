//! Cube files: one JSON header line terminated by `\n`, followed by the
//! samples in band-interleaved-by-pixel order (all bands of pixel 0, then
//! pixel 1, ...), pixels in row-major raster order.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use unmix_core::{AbundanceMatrix, HyperCube};

use crate::error::FormatError;

pub const CUBE_MAGIC: &str = "UMXC";
pub const CUBE_VERSION: u32 = 1;
/// Longest header the reader will scan for the terminating newline.
const MAX_HEADER_BYTES: usize = 1 << 24;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Dtype {
    F32Le,
    #[default]
    F64Le,
}

impl Dtype {
    pub fn name(self) -> &'static str {
        match self {
            Dtype::F32Le => "f32le",
            Dtype::F64Le => "f64le",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "f32le" => Some(Dtype::F32Le),
            "f64le" => Some(Dtype::F64Le),
            _ => None,
        }
    }

    pub fn size(self) -> usize {
        match self {
            Dtype::F32Le => 4,
            Dtype::F64Le => 8,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    magic: String,
    version: u32,
    height: u64,
    width: u64,
    bands: u64,
    dtype: String,
    layout: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    wavelengths: Option<Vec<f64>>,
}

fn parse_error(offset: usize, message: impl Into<String>) -> FormatError {
    FormatError::Parse {
        offset: offset as u64,
        message: message.into(),
    }
}

/// Byte offset of `needle` inside the header, or 0.
fn locate(header: &str, needle: &str) -> usize {
    header.find(needle).unwrap_or(0)
}

pub fn cube_to_bytes(cube: &HyperCube, dtype: Dtype) -> Vec<u8> {
    let header = Header {
        magic: CUBE_MAGIC.into(),
        version: CUBE_VERSION,
        height: cube.height() as u64,
        width: cube.width() as u64,
        bands: cube.band_count() as u64,
        dtype: dtype.name().into(),
        layout: "bip".into(),
        wavelengths: cube.wavelengths().map(|w| w.to_vec()),
    };
    let mut out = serde_json::to_vec(&header).expect("header serializes");
    out.push(b'\n');
    // Column-major bands × pixels storage is already BIP.
    let data = cube.data();
    out.reserve(data.len() * dtype.size());
    for &v in data.iter() {
        match dtype {
            Dtype::F32Le => out.extend_from_slice(&(v as f32).to_le_bytes()),
            Dtype::F64Le => out.extend_from_slice(&v.to_le_bytes()),
        }
    }
    out
}

pub fn cube_from_bytes(bytes: &[u8]) -> Result<HyperCube, FormatError> {
    let scan = &bytes[..bytes.len().min(MAX_HEADER_BYTES)];
    let newline = scan
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| parse_error(scan.len(), "header line is not terminated by a newline"))?;
    let header_text = std::str::from_utf8(&bytes[..newline]).map_err(|e| {
        parse_error(e.valid_up_to(), "header is not valid UTF-8")
    })?;
    let header: Header = serde_json::from_str(header_text).map_err(|e| {
        // The header is a single line, so the column is the byte offset + 1.
        parse_error(e.column().saturating_sub(1), format!("bad header: {e}"))
    })?;
    if header.magic != CUBE_MAGIC {
        return Err(parse_error(
            locate(header_text, &format!("\"{}\"", header.magic)),
            format!("bad magic {:?}, expected {CUBE_MAGIC:?}", header.magic),
        ));
    }
    if header.version != CUBE_VERSION {
        return Err(parse_error(
            locate(header_text, "\"version\""),
            format!("unsupported version {}", header.version),
        ));
    }
    let dtype = Dtype::parse(&header.dtype).ok_or_else(|| {
        parse_error(
            locate(header_text, "\"dtype\""),
            format!("unsupported dtype {:?}", header.dtype),
        )
    })?;
    if header.layout != "bip" {
        return Err(parse_error(
            locate(header_text, "\"layout\""),
            format!("unsupported layout {:?}", header.layout),
        ));
    }
    let payload_start = newline + 1;
    let count = header
        .height
        .checked_mul(header.width)
        .and_then(|n| n.checked_mul(header.bands))
        .and_then(|n| usize::try_from(n).ok());
    let expected = count.and_then(|n| n.checked_mul(dtype.size()));
    let (Some(count), Some(expected)) = (count, expected) else {
        return Err(parse_error(payload_start, "cube dimensions overflow"));
    };
    if count == 0 {
        return Err(parse_error(locate(header_text, "\"height\""), "cube has a zero dimension"));
    }
    if let Some(w) = &header.wavelengths {
        if w.len() as u64 != header.bands {
            return Err(parse_error(
                locate(header_text, "\"wavelengths\""),
                format!("{} wavelengths for {} bands", w.len(), header.bands),
            ));
        }
    }
    let payload = &bytes[payload_start..];
    if payload.len() < expected {
        let whole = payload.len() / dtype.size() * dtype.size();
        return Err(parse_error(
            payload_start + whole,
            format!(
                "payload truncated: expected {expected} bytes, found {}",
                payload.len()
            ),
        ));
    }
    if payload.len() > expected {
        return Err(parse_error(
            payload_start + expected,
            format!("{} trailing bytes after payload", payload.len() - expected),
        ));
    }
    let values: Vec<f64> = match dtype {
        Dtype::F32Le => payload
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect(),
        Dtype::F64Le => payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect(),
    };
    let (h, w, b) = (header.height as usize, header.width as usize, header.bands as usize);
    let data = nalgebra::DMatrix::from_vec(b, h * w, values);
    let cube = HyperCube::new(data, h, w).map_err(|e| parse_error(payload_start, e.to_string()))?;
    match header.wavelengths {
        Some(wl) => cube
            .with_wavelengths(wl)
            .map_err(|e| parse_error(locate(header_text, "\"wavelengths\""), e.to_string())),
        None => Ok(cube),
    }
}

pub fn read_cube(path: &Path) -> Result<HyperCube, FormatError> {
    let bytes = fs::read(path).map_err(|e| FormatError::io(path, e))?;
    cube_from_bytes(&bytes).map_err(|e| e.in_file(path))
}

pub fn write_cube(cube: &HyperCube, path: &Path, dtype: Dtype) -> Result<(), FormatError> {
    fs::write(path, cube_to_bytes(cube, dtype)).map_err(|e| FormatError::io(path, e))
}

/// Abundance maps are stored as cubes with one band per endmember.
pub fn abundances_to_cube(a: &AbundanceMatrix, height: usize, width: usize) -> Result<HyperCube, FormatError> {
    HyperCube::new(a.data().clone(), height, width).map_err(|e| FormatError::Invalid(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::DMatrix;

    fn sample(h: usize, w: usize, b: usize) -> HyperCube {
        let data = DMatrix::from_fn(b, h * w, |i, j| ((i * 131 + j * 17) as f64 * 0.37).sin() / 3.0);
        HyperCube::new(data, h, w).unwrap()
    }

    fn offset(e: FormatError) -> u64 {
        match e {
            FormatError::Parse { offset, .. } => offset,
            other => panic!("expected a parse error, got {other}"),
        }
    }

    #[test]
    fn f64_round_trip_is_bit_exact() {
        let cube = sample(4, 4, 8).with_wavelengths((0..8).map(|k| 400.0 + 10.1 * k as f64).collect()).unwrap();
        let back = cube_from_bytes(&cube_to_bytes(&cube, Dtype::F64Le)).unwrap();
        assert_eq!(back, cube);
        for (a, b) in back.data().iter().zip(cube.data().iter()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn f32_round_trip_of_representable_values() {
        let cube = sample(3, 5, 4);
        let cube = cube.with_data(cube.data().map(|v| v as f32 as f64)).unwrap();
        let bytes = cube_to_bytes(&cube, Dtype::F32Le);
        assert_eq!(cube_from_bytes(&bytes).unwrap(), cube);
        let header_len = bytes.iter().position(|&b| b == b'\n').unwrap() + 1;
        assert_eq!(bytes.len() - header_len, 3 * 5 * 4 * 4);
    }

    #[test]
    fn truncated_payload_reports_offset() {
        let header = br#"{"magic":"UMXC","version":1,"height":2,"width":3,"bands":8,"dtype":"f32le","layout":"bip"}"#;
        let mut bytes = header.to_vec();
        bytes.push(b'\n');
        bytes.extend(std::iter::repeat_n(0u8, 2 * 3 * 7 * 4));
        let expect = (header.len() + 1 + 2 * 3 * 7 * 4) as u64;
        assert_eq!(offset(cube_from_bytes(&bytes).unwrap_err()), expect);
        // A partial trailing sample does not move the offset past the last
        // complete one.
        bytes.push(0);
        assert_eq!(offset(cube_from_bytes(&bytes).unwrap_err()), expect);
    }

    #[test]
    fn header_errors_carry_offsets() {
        let good = cube_to_bytes(&sample(1, 2, 3), Dtype::F64Le);
        let text = String::from_utf8_lossy(&good).into_owned();

        let bad_magic = text.replacen("UMXC", "ENVI", 1);
        let e = cube_from_bytes(&bad_magic.into_bytes()[..good.len()]).unwrap_err();
        assert_eq!(offset(e), 9);

        let overflow = br#"{"magic":"UMXC","version":1,"height":4294967296,"width":4294967296,"bands":2,"dtype":"f64le","layout":"bip"}"#;
        let mut bytes = overflow.to_vec();
        bytes.push(b'\n');
        assert_eq!(offset(cube_from_bytes(&bytes).unwrap_err()), overflow.len() as u64 + 1);

        assert!(cube_from_bytes(b"{\"magic\":").is_err());
        let garbage = b"{\"magic\": nope}\n";
        // `n` may still begin `null`; the first impossible byte is the `o`.
        assert_eq!(offset(cube_from_bytes(garbage).unwrap_err()), 11);

        let mut extra = good.clone();
        extra.extend_from_slice(&[0; 8]);
        assert_eq!(offset(cube_from_bytes(&extra).unwrap_err()), good.len() as u64);
    }

    #[test]
    fn unknown_header_keys_and_layouts_are_rejected() {
        let bytes = br#"{"magic":"UMXC","version":1,"height":1,"width":1,"bands":1,"dtype":"f64le","layout":"bsq"}
00000000"#;
        assert!(cube_from_bytes(bytes).is_err());
        let bytes = br#"{"magic":"UMXC","version":1,"height":1,"width":1,"bands":1,"dtype":"f64le","layout":"bip","units":"nm"}
00000000"#;
        assert!(cube_from_bytes(bytes).is_err());
    }
}
