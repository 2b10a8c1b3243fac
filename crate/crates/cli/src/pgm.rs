//! Grayscale PGM export of abundance planes, for inspection only.

use std::path::Path;

use crate::error::FormatError;

/// Binary 8-bit PGM; values are clamped to `[0, 1]` and scaled to `0..=255`.
pub fn plane_to_pgm(plane: &[f64], height: usize, width: usize) -> Vec<u8> {
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(plane.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    out
}

pub fn write_pgm(plane: &[f64], height: usize, width: usize, path: &Path) -> Result<(), FormatError> {
    std::fs::write(path, plane_to_pgm(plane, height, width)).map_err(|e| FormatError::io(path, e))
}
