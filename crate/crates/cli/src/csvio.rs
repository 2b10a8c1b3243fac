//! Endmember matrices as CSV: one row per band, one column per endmember,
//! `.` as decimal separator, optionally preceded by a single header row.

use std::path::Path;

use nalgebra::DMatrix;
use unmix_core::{EndmemberMatrix, SpectralDomain, Validate, Violation};

use crate::error::FormatError;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CsvOptions {
    /// Skip one header row.
    pub header: bool,
    /// Load matrices that fail validation, returning the violation.
    pub allow_invalid: bool,
}

pub fn parse_endmembers(text: &str, opts: CsvOptions) -> Result<(EndmemberMatrix, Option<Violation>), FormatError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(opts.header)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            FormatError::Csv { line, column: 0, message: e.to_string() }
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let row = record
            .iter()
            .enumerate()
            .map(|(c, cell)| {
                cell.parse::<f64>().map_err(|_| FormatError::Csv {
                    line,
                    column: c + 1,
                    message: format!("{cell:?} is not a number"),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(row);
    }
    let (l, r) = (rows.len(), rows.first().map_or(0, Vec::len));
    if l == 0 || r == 0 {
        return Err(FormatError::Invalid("endmember CSV holds no values".into()));
    }
    let m = DMatrix::from_fn(l, r, |i, j| rows[i][j]);
    let m = EndmemberMatrix::new_unchecked(m, SpectralDomain::Reflectance);
    match m.validate() {
        Ok(()) => Ok((m, None)),
        Err(v) if opts.allow_invalid => Ok((m, Some(v))),
        Err(v) => Err(FormatError::Invalid(format!("endmember matrix rejected: {v}"))),
    }
}

pub fn read_endmembers(path: &Path, opts: CsvOptions) -> Result<(EndmemberMatrix, Option<Violation>), FormatError> {
    let text = std::fs::read_to_string(path).map_err(|e| FormatError::io(path, e))?;
    parse_endmembers(&text, opts).map_err(|e| e.in_file(path))
}

/// Shortest representation that parses back to the same `f64`.
pub fn format_endmembers(m: &DMatrix<f64>) -> String {
    let mut writer = csv::Writer::from_writer(Vec::new());
    for row in m.row_iter() {
        writer
            .write_record(row.iter().map(|v| v.to_string()))
            .expect("writing to memory");
    }
    String::from_utf8(writer.into_inner().expect("flush to memory")).expect("ASCII output")
}

pub fn write_endmembers(m: &DMatrix<f64>, path: &Path) -> Result<(), FormatError> {
    std::fs::write(path, format_endmembers(m)).map_err(|e| FormatError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_csv() {
        let (m, warn) = parse_endmembers("1,0\n0,1\n", CsvOptions::default()).unwrap();
        assert_eq!(m.data(), &DMatrix::identity(2, 2));
        assert!(warn.is_none());
    }

    #[test]
    fn header_row_is_opt_in() {
        let text = "soil,water\n0.5,0.1\n0.6,0.2\n";
        assert!(parse_endmembers(text, CsvOptions::default()).is_err());
        let opts = CsvOptions { header: true, ..Default::default() };
        let (m, _) = parse_endmembers(text, opts).unwrap();
        assert_eq!(m.data().shape(), (2, 2));
    }

    #[test]
    fn negative_entry_needs_allow_invalid() {
        let text = "0.5,-0.1\n0.6,0.2\n";
        let e = parse_endmembers(text, CsvOptions::default()).unwrap_err();
        assert!(e.to_string().contains("rejected"));
        let opts = CsvOptions { allow_invalid: true, ..Default::default() };
        let (m, warn) = parse_endmembers(text, opts).unwrap();
        assert!(matches!(warn, Some(Violation::Enc { row: 0, col: 1, .. })));
        assert_eq!(m.data()[(0, 1)], -0.1);
    }

    #[test]
    fn ragged_and_non_numeric_rows_fail_with_position() {
        match parse_endmembers("0.1,0.2\n0.3\n", CsvOptions::default()).unwrap_err() {
            FormatError::Csv { line, .. } => assert_eq!(line, 2),
            e => panic!("{e}"),
        }
        match parse_endmembers("0.1,0.2\n0.3,abc\n", CsvOptions::default()).unwrap_err() {
            FormatError::Csv { line, column, .. } => assert_eq!((line, column), (2, 2)),
            e => panic!("{e}"),
        }
    }

    #[test]
    fn random_matrix_round_trips() {
        let m = DMatrix::from_fn(50, 4, |i, j| (((i * 4 + j) as f64 * 0.731).sin().abs() + 1e-3) / 7.0);
        let (back, _) = parse_endmembers(&format_endmembers(&m), CsvOptions::default()).unwrap();
        assert!((back.data() - &m).amax() <= 1e-15);
        assert_eq!(back.data(), &m);
    }
}
