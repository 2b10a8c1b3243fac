//! Domain types shared by every solver and their feasibility checks.
//!
//! Storage convention: every matrix keeps one pixel (or one endmember) per
//! column, so a per-pixel solve reads a contiguous slice of the
//! column-major buffer. The cube is therefore held as `bands × pixels`
//! even though it is conceptually the `N × L` matrix of stacked spectra.

use std::fmt;
use std::time::Instant;

use nalgebra::{DMatrix, DVectorView};

use crate::error::{Result, UnmixError};

/// Tolerance on the column sums of a stored [`AbundanceMatrix`].
pub const ASC_TOLERANCE: f64 = 1e-9;

/// The first invariant a value fails, with its location and magnitude.
#[derive(Debug, Clone, PartialEq)]
pub enum Violation {
    Empty { what: &'static str },
    ShapeMismatch { expected: usize, actual: usize },
    NonFinite { row: usize, col: usize },
    WavelengthsNotIncreasing { index: usize },
    /// Abundance nonnegativity.
    Anc { row: usize, col: usize, value: f64 },
    /// Abundance sum-to-one; `excess` is the signed column sum minus one.
    Asc { col: usize, excess: f64 },
    /// Endmember nonnegativity.
    Enc { row: usize, col: usize, value: f64 },
    DuplicateEndmember { first: usize, second: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Empty { what } => write!(f, "{what} has an empty dimension"),
            Violation::ShapeMismatch { expected, actual } => {
                write!(f, "height*width = {expected} but the data holds {actual} pixels")
            }
            Violation::NonFinite { row, col } => write!(f, "non-finite entry at ({row}, {col})"),
            Violation::WavelengthsNotIncreasing { index } => {
                write!(f, "wavelengths not strictly increasing at index {index}")
            }
            Violation::Anc { row, col, value } => {
                write!(f, "ANC violated at ({row}, {col}): value {value:e}")
            }
            Violation::Asc { col, excess } => {
                write!(f, "ASC violated in column {col}: excess {excess:e}")
            }
            Violation::Enc { row, col, value } => {
                write!(f, "ENC violated at ({row}, {col}): value {value:e}")
            }
            Violation::DuplicateEndmember { first, second } => {
                write!(f, "endmember columns {first} and {second} are identical")
            }
        }
    }
}

/// Feasibility check returning the first violated invariant.
pub trait Validate {
    fn validate(&self) -> std::result::Result<(), Violation>;
}

fn first_non_finite(m: &DMatrix<f64>) -> Option<Violation> {
    for (col, column) in m.column_iter().enumerate() {
        if let Some(row) = column.iter().position(|x| !x.is_finite()) {
            return Some(Violation::NonFinite { row, col });
        }
    }
    None
}

/// Observed spectra, one pixel per column (`bands × pixels`).
#[derive(Debug, Clone, PartialEq)]
pub struct HyperCube {
    data: DMatrix<f64>,
    height: usize,
    width: usize,
    wavelengths: Option<Vec<f64>>,
}

impl HyperCube {
    /// Wraps a `bands × pixels` matrix whose pixels are in row-major
    /// raster order (`pixel = row * width + col`).
    pub fn new(data: DMatrix<f64>, height: usize, width: usize) -> Result<Self> {
        let cube = Self {
            data,
            height,
            width,
            wavelengths: None,
        };
        cube.validate().map_err(UnmixError::Violation)?;
        Ok(cube)
    }

    /// A single-row cube (`height = 1`).
    pub fn from_columns(data: DMatrix<f64>) -> Result<Self> {
        let n = data.ncols();
        Self::new(data, 1, n)
    }

    pub fn with_wavelengths(mut self, wavelengths: Vec<f64>) -> Result<Self> {
        self.wavelengths = Some(wavelengths);
        self.validate().map_err(UnmixError::Violation)?;
        Ok(self)
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn into_data(self) -> DMatrix<f64> {
        self.data
    }

    pub fn pixel(&self, i: usize) -> DVectorView<'_, f64> {
        self.data.column(i)
    }

    pub fn pixel_count(&self) -> usize {
        self.data.ncols()
    }

    pub fn band_count(&self) -> usize {
        self.data.nrows()
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn wavelengths(&self) -> Option<&[f64]> {
        self.wavelengths.as_deref()
    }

    /// Same geometry and wavelengths, new spectra.
    pub fn with_data(&self, data: DMatrix<f64>) -> Result<Self> {
        if data.shape() != self.data.shape() {
            return Err(UnmixError::mismatch(
                "HyperCube::with_data",
                format!("{:?}", self.data.shape()),
                format!("{:?}", data.shape()),
            ));
        }
        let mut out = Self::new(data, self.height, self.width)?;
        out.wavelengths = self.wavelengths.clone();
        Ok(out)
    }
}

impl Validate for HyperCube {
    fn validate(&self) -> std::result::Result<(), Violation> {
        if self.data.nrows() == 0 || self.data.ncols() == 0 {
            return Err(Violation::Empty { what: "cube" });
        }
        if self.height * self.width != self.data.ncols() {
            return Err(Violation::ShapeMismatch {
                expected: self.height * self.width,
                actual: self.data.ncols(),
            });
        }
        if let Some(v) = first_non_finite(&self.data) {
            return Err(v);
        }
        if let Some(wl) = &self.wavelengths {
            if wl.len() != self.data.nrows() {
                return Err(Violation::ShapeMismatch {
                    expected: self.data.nrows(),
                    actual: wl.len(),
                });
            }
            if let Some(index) = wl.windows(2).position(|w| !(w[1] > w[0])) {
                return Err(Violation::WavelengthsNotIncreasing { index: index + 1 });
            }
        }
        Ok(())
    }
}

/// Which physical quantity the endmember spectra hold.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SpectralDomain {
    #[default]
    Reflectance,
    /// Single-scattering albedo.
    Ssa,
}

/// Pure spectra, one endmember per column (`bands × R`).
#[derive(Debug, Clone, PartialEq)]
pub struct EndmemberMatrix {
    data: DMatrix<f64>,
    domain: SpectralDomain,
}

impl EndmemberMatrix {
    pub fn new(data: DMatrix<f64>, domain: SpectralDomain) -> Result<Self> {
        let m = Self { data, domain };
        m.validate().map_err(UnmixError::Violation)?;
        Ok(m)
    }

    pub fn reflectance(data: DMatrix<f64>) -> Result<Self> {
        Self::new(data, SpectralDomain::Reflectance)
    }

    /// Skips validation; used when loading files with `--allow-invalid`.
    pub fn new_unchecked(data: DMatrix<f64>, domain: SpectralDomain) -> Self {
        Self { data, domain }
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn into_data(self) -> DMatrix<f64> {
        self.data
    }

    pub fn domain(&self) -> SpectralDomain {
        self.domain
    }

    pub fn band_count(&self) -> usize {
        self.data.nrows()
    }

    pub fn endmember_count(&self) -> usize {
        self.data.ncols()
    }
}

impl Validate for EndmemberMatrix {
    fn validate(&self) -> std::result::Result<(), Violation> {
        if self.data.nrows() == 0 || self.data.ncols() == 0 {
            return Err(Violation::Empty { what: "endmembers" });
        }
        if let Some(v) = first_non_finite(&self.data) {
            return Err(v);
        }
        for (col, column) in self.data.column_iter().enumerate() {
            if let Some(row) = column.iter().position(|&x| x < 0.0) {
                return Err(Violation::Enc {
                    row,
                    col,
                    value: column[row],
                });
            }
        }
        let r = self.data.ncols();
        for i in 0..r {
            for j in i + 1..r {
                if self.data.column(i) == self.data.column(j) {
                    return Err(Violation::DuplicateEndmember { first: i, second: j });
                }
            }
        }
        Ok(())
    }
}

/// Fractions, one pixel per column (`R × pixels`), each column on the
/// unit simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct AbundanceMatrix {
    data: DMatrix<f64>,
}

impl AbundanceMatrix {
    pub fn new(data: DMatrix<f64>) -> Result<Self> {
        let a = Self { data };
        a.validate().map_err(UnmixError::Violation)?;
        Ok(a)
    }

    pub fn new_unchecked(data: DMatrix<f64>) -> Self {
        Self { data }
    }

    pub fn data(&self) -> &DMatrix<f64> {
        &self.data
    }

    pub fn into_data(self) -> DMatrix<f64> {
        self.data
    }

    pub fn endmember_count(&self) -> usize {
        self.data.nrows()
    }

    pub fn pixel_count(&self) -> usize {
        self.data.ncols()
    }
}

impl Validate for AbundanceMatrix {
    fn validate(&self) -> std::result::Result<(), Violation> {
        if self.data.nrows() == 0 || self.data.ncols() == 0 {
            return Err(Violation::Empty { what: "abundances" });
        }
        if let Some(v) = first_non_finite(&self.data) {
            return Err(v);
        }
        for (col, column) in self.data.column_iter().enumerate() {
            if let Some(row) = column.iter().position(|&x| x < 0.0) {
                return Err(Violation::Anc {
                    row,
                    col,
                    value: column[row],
                });
            }
            let excess = column.sum() - 1.0;
            if excess.abs() > ASC_TOLERANCE {
                return Err(Violation::Asc { col, excess });
            }
        }
        Ok(())
    }
}

/// Convergence record returned by every iterative solver.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SolverReport {
    pub iterations: usize,
    pub objective_trace: Vec<f64>,
    pub converged: bool,
    /// Seconds.
    pub wall_time: f64,
}

impl SolverReport {
    pub(crate) fn finish(objective_trace: Vec<f64>, converged: bool, started: Instant) -> Self {
        Self {
            iterations: objective_trace.len(),
            objective_trace,
            converged,
            wall_time: started.elapsed().as_secs_f64(),
        }
    }

    pub fn final_objective(&self) -> Option<f64> {
        self.objective_trace.last().copied()
    }
}
