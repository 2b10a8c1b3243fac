//! Plug-and-play ADMM unmixing with a known endmember matrix.
//!
//! For the split `A = Z` with scaled dual `V`, each outer iteration runs
//!
//! ```text
//!     A ← argmin_{a_i ∈ Δ} ‖y_i − M a_i‖² + (ρ/2)‖a_i − z_i + v_i‖²   (per pixel)
//!     Z ← D(A + V)                                                  (per plane)
//!     V ← V + A − Z
//! ```
//!
//! where `D` is any denoiser acting on the `R` abundance planes. With
//! `D = soft_threshold(λ)` this is exact ADMM for `‖Y − MA‖² + λρ‖A‖₁`,
//! which [`admm_l1_oracle`] implements independently.

mod denoise;

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Result, UnmixError};
use crate::qp::{AdmmSettings, SimplexQp};
use crate::types::{AbundanceMatrix, EndmemberMatrix, HyperCube, SolverReport};

pub use denoise::{
    apply_denoiser, gaussian_blur, soft_threshold, tv_prox, Denoiser, DenoiserSpec,
    DEFAULT_TV_ITERS, TV_DUAL_STEP,
};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PnpOptions {
    pub rho: f64,
    pub max_iters: usize,
    /// Bound on `‖A − Z‖_F / ‖A‖_F`.
    pub primal_tol: f64,
    /// Bound on `ρ‖Z − Z_prev‖_F / ‖A‖_F`.
    pub dual_tol: f64,
    /// Only the known-endmember variant is implemented.
    pub known_m: bool,
}

impl Default for PnpOptions {
    fn default() -> Self {
        Self {
            rho: 1.0,
            max_iters: 200,
            primal_tol: 1e-6,
            dual_tol: 1e-6,
            known_m: true,
        }
    }
}

impl PnpOptions {
    pub fn check(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(UnmixError::InvalidArgument(format!(
                "PnP penalty must be positive, got {}",
                self.rho
            )));
        }
        if !self.known_m {
            return Err(UnmixError::InvalidArgument(
                "PnP requires known endmembers (known_m = true)".into(),
            ));
        }
        if !(self.primal_tol >= 0.0 && self.dual_tol >= 0.0) {
            return Err(UnmixError::InvalidArgument("PnP tolerances must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct PnpReport {
    /// Objective trace holds `‖Y − MA‖²_F` per iteration.
    pub solver: SolverReport,
    /// Final denoised iterate.
    pub z: DMatrix<f64>,
    /// Final scaled dual.
    pub v: DMatrix<f64>,
    /// `max |V|` after each iteration.
    pub v_max_abs: Vec<f64>,
    /// `max |A − Z|` after each iteration.
    pub a_minus_z_max_abs: Vec<f64>,
    pub primal_residual: Vec<f64>,
    pub dual_residual: Vec<f64>,
}

/// PnP ADMM with one of the built-in denoisers.
pub fn pnp_unmix(
    cube: &HyperCube,
    m: &EndmemberMatrix,
    denoiser: &DenoiserSpec,
    opts: &PnpOptions,
) -> Result<(AbundanceMatrix, PnpReport)> {
    denoiser.check()?;
    pnp_unmix_with(cube, m, denoiser, opts)
}

/// PnP ADMM with an arbitrary plane denoiser. Planes take the cube's
/// `height × width` shape.
pub fn pnp_unmix_with(
    cube: &HyperCube,
    m: &EndmemberMatrix,
    denoiser: &dyn Denoiser,
    opts: &PnpOptions,
) -> Result<(AbundanceMatrix, PnpReport)> {
    let started = Instant::now();
    opts.check()?;
    if cube.band_count() != m.band_count() {
        return Err(UnmixError::mismatch("pnp_unmix bands", m.band_count(), cube.band_count()));
    }
    let (r, n) = (m.endmember_count(), cube.pixel_count());
    let (h, w) = (cube.height(), cube.width());
    let md = m.data();
    let y = cube.data();
    let rho = opts.rho;

    let hessian = md.tr_mul(md) * 2.0 + DMatrix::identity(r, r) * rho;
    let qp = SimplexQp::new(hessian, AdmmSettings::default())?;
    let data_term = md.tr_mul(y) * 2.0;

    let mut a = DMatrix::<f64>::zeros(r, n);
    let mut z = DMatrix::<f64>::zeros(r, n);
    let mut v = DMatrix::<f64>::zeros(r, n);
    let mut trace = Vec::new();
    let mut report = PnpReport {
        solver: SolverReport::default(),
        z: DMatrix::zeros(0, 0),
        v: DMatrix::zeros(0, 0),
        v_max_abs: Vec::new(),
        a_minus_z_max_abs: Vec::new(),
        primal_residual: Vec::new(),
        dual_residual: Vec::new(),
    };
    let mut converged = false;
    for iter in 0..opts.max_iters {
        let first = iter == 0;
        let columns: Vec<DVector<f64>> = (0..n)
            .into_par_iter()
            .map(|i| {
                let linear = data_term.column(i) + (z.column(i) - v.column(i)) * rho;
                let warm = (!first).then(|| a.column(i).clone_owned());
                qp.solve(&linear, warm.as_ref(), None)
                    .map(|s| s.x)
                    .map_err(|e| UnmixError::Pixel { pixel: i, source: Box::new(e) })
            })
            .collect::<Result<_>>()?;
        for (i, col) in columns.iter().enumerate() {
            a.column_mut(i).copy_from(col);
        }

        let shifted = &a + &v;
        let z_prev = std::mem::replace(&mut z, apply_denoiser(&shifted, h, w, denoiser)?);
        if z.iter().any(|x| !x.is_finite()) {
            return Err(UnmixError::NonFinite(format!("PnP Z iterate at iteration {}", iter + 1)));
        }
        v = &shifted - &z;

        let a_norm = a.norm().max(f64::MIN_POSITIVE);
        let gap = &a - &z;
        let primal = gap.norm() / a_norm;
        let dual = rho * (&z - &z_prev).norm() / a_norm;
        trace.push((y - md * &a).norm_squared());
        report.v_max_abs.push(v.amax());
        report.a_minus_z_max_abs.push(gap.amax());
        report.primal_residual.push(primal);
        report.dual_residual.push(dual);
        if primal < opts.primal_tol && dual < opts.dual_tol {
            converged = true;
            break;
        }
    }
    report.solver = SolverReport::finish(trace, converged, started);
    report.z = z;
    report.v = v;
    Ok((AbundanceMatrix::new_unchecked(a), report))
}

#[derive(Debug, Clone)]
pub struct L1AdmmRun {
    pub abundances: AbundanceMatrix,
    pub z: DMatrix<f64>,
    /// `‖Y − MA‖²_F + λ‖A‖₁` per iteration.
    pub objective_trace: Vec<f64>,
}

/// Exact ADMM for `min ‖Y − MA‖²_F + λ‖A‖₁` subject to every column of `A`
/// on the simplex, with the ℓ1 term on the split variable. Starts from
/// `Z = V = 0` and runs exactly `iters` iterations. The A-step enumerates
/// faces of the simplex, so it is exact but exponential in `R`.
pub fn admm_l1_oracle(
    cube: &HyperCube,
    m: &EndmemberMatrix,
    lambda: f64,
    rho: f64,
    iters: usize,
) -> Result<L1AdmmRun> {
    if cube.band_count() != m.band_count() {
        return Err(UnmixError::mismatch("admm_l1_oracle bands", m.band_count(), cube.band_count()));
    }
    if !(lambda >= 0.0 && rho > 0.0) {
        return Err(UnmixError::InvalidArgument("need lambda >= 0 and rho > 0".into()));
    }
    let r = m.endmember_count();
    if r > 16 {
        return Err(UnmixError::InvalidArgument("face enumeration needs R <= 16".into()));
    }
    let md = m.data();
    let y = cube.data();
    let n = cube.pixel_count();
    let hessian = md.tr_mul(md) * 2.0 + DMatrix::identity(r, r) * rho;
    let faces = FaceTable::new(&hessian)?;

    let mut a = DMatrix::zeros(r, n);
    let mut z = DMatrix::zeros(r, n);
    let mut v = DMatrix::zeros(r, n);
    let mut trace = Vec::with_capacity(iters);
    for _ in 0..iters {
        for i in 0..n {
            let b = md.tr_mul(&y.column(i)) * 2.0 + (z.column(i) - v.column(i)) * rho;
            a.set_column(i, &faces.minimize(&hessian, &b));
        }
        let threshold = lambda / rho;
        z = (&a + &v).map(|x| soft_threshold(x, threshold));
        v += &a - &z;
        trace.push((y - md * &a).norm_squared() + lambda * a.iter().map(|x| x.abs()).sum::<f64>());
    }
    Ok(L1AdmmRun {
        abundances: AbundanceMatrix::new_unchecked(a),
        z,
        objective_trace: trace,
    })
}

/// Pre-factored KKT systems of every face of the simplex for a fixed
/// Hessian.
struct FaceTable {
    faces: Vec<(Vec<usize>, nalgebra::LU<f64, nalgebra::Dyn, nalgebra::Dyn>)>,
}

impl FaceTable {
    fn new(hessian: &DMatrix<f64>) -> Result<Self> {
        let r = hessian.nrows();
        let mut faces = Vec::with_capacity((1 << r) - 1);
        for mask in 1u32..(1 << r) {
            let support: Vec<usize> = (0..r).filter(|&i| mask >> i & 1 == 1).collect();
            let k = support.len();
            let kkt = DMatrix::from_fn(k + 1, k + 1, |p, q| match (p < k, q < k) {
                (true, true) => hessian[(support[p], support[q])],
                (false, false) => 0.0,
                _ => 1.0,
            });
            let lu = kkt.lu();
            if !lu.is_invertible() {
                return Err(UnmixError::Singular("face KKT system".into()));
            }
            faces.push((support, lu));
        }
        Ok(Self { faces })
    }

    /// The best feasible face minimizer of `½aᵀHa − bᵀa`.
    fn minimize(&self, hessian: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
        let r = b.len();
        let mut best: Option<(f64, DVector<f64>)> = None;
        for (support, lu) in &self.faces {
            let k = support.len();
            let mut rhs = DVector::zeros(k + 1);
            for (p, &i) in support.iter().enumerate() {
                rhs[p] = b[i];
            }
            rhs[k] = 1.0;
            let Some(sol) = lu.solve(&rhs) else { continue };
            if sol.rows(0, k).iter().any(|&x| x < 0.0) {
                continue;
            }
            let mut x = DVector::zeros(r);
            for (p, &i) in support.iter().enumerate() {
                x[i] = sol[p];
            }
            let f = 0.5 * x.dot(&(hessian * &x)) - b.dot(&x);
            if best.as_ref().is_none_or(|(fb, _)| f < *fb) {
                best = Some((f, x));
            }
        }
        best.expect("a vertex face is always feasible").1
    }
}
