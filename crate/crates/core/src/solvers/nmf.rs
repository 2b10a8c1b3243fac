//! Blind unmixing by regularized NMF:
//!
//! ```text
//!     ‖Y − MA‖²_F + λ_vol·vol(M) + λ_sp·Σ‖a_i‖₁,   M ≥ 0, a_i on the simplex,
//! ```
//!
//! minimized by alternating projected gradient steps with backtracking. A
//! step is only accepted if it does not increase the objective, so the
//! objective trace is non-increasing.

use std::time::Instant;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Result, UnmixError};
use crate::simplex::project_in_place;
use crate::solvers::fcls::{fcls_batch, FclsOptions};
use crate::solvers::vca::vca_init;
use crate::types::{AbundanceMatrix, EndmemberMatrix, HyperCube, SolverReport, SpectralDomain};

const MAX_BACKTRACKS: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NmfOptions {
    pub volume_weight: f64,
    pub sparsity_weight: f64,
    pub max_iters: usize,
    /// Backtracking factor in `(0, 1)`.
    pub step_shrink: f64,
    pub rel_obj_tol: f64,
    /// Seed for the VCA initializer when no initial endmembers are given.
    pub init_seed: u64,
}

impl Default for NmfOptions {
    fn default() -> Self {
        Self {
            volume_weight: 0.0,
            sparsity_weight: 0.0,
            max_iters: 500,
            step_shrink: 0.5,
            rel_obj_tol: 1e-9,
            init_seed: 0,
        }
    }
}

impl NmfOptions {
    fn check(&self) -> Result<()> {
        if !(self.volume_weight >= 0.0 && self.sparsity_weight >= 0.0) {
            return Err(UnmixError::InvalidArgument(
                "NMF regularization weights must be >= 0".into(),
            ));
        }
        if !(self.step_shrink > 0.0 && self.step_shrink < 1.0) {
            return Err(UnmixError::InvalidArgument(format!(
                "step_shrink {} must lie in (0, 1)",
                self.step_shrink
            )));
        }
        if !(self.rel_obj_tol >= 0.0) {
            return Err(UnmixError::InvalidArgument("rel_obj_tol must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct NmfOutput {
    pub endmembers: EndmemberMatrix,
    pub abundances: AbundanceMatrix,
    pub report: SolverReport,
}

/// Differences to the first endmember, `[m_2 − m_1, …, m_R − m_1]`.
fn edge_matrix(m: &DMatrix<f64>) -> DMatrix<f64> {
    let r = m.ncols();
    DMatrix::from_fn(m.nrows(), r.saturating_sub(1), |l, k| m[(l, k + 1)] - m[(l, 0)])
}

/// Simplex-volume surrogate `det(DᵀD)` with `D` the edge matrix; zero for
/// a single endmember.
pub fn min_volume(m: &DMatrix<f64>) -> f64 {
    if m.ncols() < 2 {
        return 0.0;
    }
    let d = edge_matrix(m);
    d.tr_mul(&d).determinant()
}

fn adjugate(g: &DMatrix<f64>) -> DMatrix<f64> {
    let k = g.nrows();
    if k == 1 {
        return DMatrix::from_element(1, 1, 1.0);
    }
    DMatrix::from_fn(k, k, |i, j| {
        let minor = g.clone().remove_row(j).remove_column(i);
        let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
        sign * minor.determinant()
    })
}

/// Gradient of [`min_volume`] through `∂det(G)/∂D = 2 D adj(G)`.
fn min_volume_gradient(m: &DMatrix<f64>) -> DMatrix<f64> {
    let (l, r) = m.shape();
    let mut grad = DMatrix::zeros(l, r);
    if r < 2 {
        return grad;
    }
    let d = edge_matrix(m);
    let gd = (&d * adjugate(&d.tr_mul(&d))) * 2.0;
    for k in 0..r - 1 {
        grad.column_mut(k + 1).copy_from(&gd.column(k));
        let mut first = grad.column_mut(0);
        first -= gd.column(k);
    }
    grad
}

/// Full NMF objective.
pub fn nmf_objective(
    y: &DMatrix<f64>,
    m: &DMatrix<f64>,
    a: &DMatrix<f64>,
    opts: &NmfOptions,
) -> f64 {
    let mut f = (y - m * a).norm_squared();
    if opts.volume_weight > 0.0 {
        f += opts.volume_weight * min_volume(m);
    }
    if opts.sparsity_weight > 0.0 {
        f += opts.sparsity_weight * a.iter().map(|v| v.abs()).sum::<f64>();
    }
    f
}

fn spectral_norm_sym(g: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(g.clone())
        .eigenvalues
        .iter()
        .fold(0.0f64, |acc, v| acc.max(v.abs()))
}

fn project_columns(a: &mut DMatrix<f64>) {
    for mut col in a.column_iter_mut() {
        project_in_place(col.as_mut_slice());
    }
}

/// Runs the blind unmixing. Without `m0`, endmembers start from VCA and
/// abundances from FCLS on those endmembers.
pub fn nmf_unmix(
    cube: &HyperCube,
    r: usize,
    opts: &NmfOptions,
    m0: Option<&EndmemberMatrix>,
) -> Result<NmfOutput> {
    let started = Instant::now();
    opts.check()?;
    let (l, n) = (cube.band_count(), cube.pixel_count());
    if r == 0 || r > l.min(n) {
        return Err(UnmixError::InvalidArgument(format!(
            "need 1 <= R <= min(L, N); got R={r}, L={l}, N={n}"
        )));
    }
    let init = match m0 {
        Some(m) => {
            if m.data().shape() != (l, r) {
                return Err(UnmixError::mismatch(
                    "nmf_unmix initial endmembers",
                    format!("({l}, {r})"),
                    format!("{:?}", m.data().shape()),
                ));
            }
            if let Some(v) = m.data().iter().find(|v| !(**v >= 0.0)) {
                return Err(UnmixError::InvalidArgument(format!(
                    "initial endmembers must be nonnegative (found {v})"
                )));
            }
            m.clone()
        }
        None => vca_init(cube, r, opts.init_seed)?,
    };
    let y = cube.data();
    let mut m = init.data().map(|v| v.max(0.0));
    let (a0, _) = fcls_batch(
        &EndmemberMatrix::new_unchecked(m.clone(), SpectralDomain::Reflectance),
        cube,
        &FclsOptions::default(),
    )?;
    let mut a = a0.into_data();

    let mut f = nmf_objective(y, &m, &a, opts);
    if !f.is_finite() {
        return Err(UnmixError::NonFinite("initial NMF objective".into()));
    }
    let mut trace = Vec::new();
    let mut converged = false;
    for iter in 0..opts.max_iters {
        let f_start = f;

        // Abundance step.
        let residual = &m * &a - y;
        let mut grad_a = m.tr_mul(&residual) * 2.0;
        if opts.sparsity_weight > 0.0 {
            grad_a.add_scalar_mut(opts.sparsity_weight);
        }
        let lip_a = 2.0 * spectral_norm_sym(&m.tr_mul(&m));
        let mut step = if lip_a > 0.0 { 1.0 / lip_a } else { 1.0 };
        for _ in 0..MAX_BACKTRACKS {
            let mut trial = &a - &grad_a * step;
            project_columns(&mut trial);
            let f_trial = nmf_objective(y, &m, &trial, opts);
            if f_trial <= f {
                a = trial;
                f = f_trial;
                break;
            }
            step *= opts.step_shrink;
        }

        // Endmember step.
        let residual = &m * &a - y;
        let mut grad_m = (&residual * a.transpose()) * 2.0;
        if opts.volume_weight > 0.0 {
            grad_m += min_volume_gradient(&m) * opts.volume_weight;
        }
        let lip_m = 2.0 * spectral_norm_sym(&(&a * a.transpose()));
        let mut step = if lip_m > 0.0 { 1.0 / lip_m } else { 1.0 };
        for _ in 0..MAX_BACKTRACKS {
            let trial = (&m - &grad_m * step).map(|v| v.max(0.0));
            let f_trial = nmf_objective(y, &trial, &a, opts);
            if f_trial <= f {
                m = trial;
                f = f_trial;
                break;
            }
            step *= opts.step_shrink;
        }

        if !f.is_finite() {
            return Err(UnmixError::NonFinite(format!(
                "NMF objective diverged at iteration {iter}"
            )));
        }
        trace.push(f);
        if f_start - f <= opts.rel_obj_tol * f_start {
            converged = true;
            break;
        }
    }

    Ok(NmfOutput {
        endmembers: EndmemberMatrix::new_unchecked(m, SpectralDomain::Reflectance),
        abundances: AbundanceMatrix::new_unchecked(a),
        report: SolverReport::finish(trace, converged, started),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mixmodels::{add_noise, gen_scene, MixtureModel, NoiseSpec, SceneSpec};
    use crate::types::Validate;

    #[test]
    fn volume_gradient_matches_finite_differences() {
        let m = crate::mixmodels::random_endmembers(4, 7, 3).unwrap();
        let g = min_volume_gradient(&m);
        let h = 1e-6;
        for l in 0..7 {
            for k in 0..4 {
                let mut up = m.clone();
                up[(l, k)] += h;
                let mut dn = m.clone();
                dn[(l, k)] -= h;
                let fd = (min_volume(&up) - min_volume(&dn)) / (2.0 * h);
                assert!((fd - g[(l, k)]).abs() <= 1e-6 * (1.0 + fd.abs()), "{fd} vs {}", g[(l, k)]);
            }
        }
    }

    #[test]
    fn volume_of_two_endmembers_is_squared_distance() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 4.0, 2.0, 6.0]);
        assert!((min_volume(&m) - 25.0).abs() < 1e-12);
        assert_eq!(min_volume(&DMatrix::from_element(3, 1, 0.5)), 0.0);
    }

    #[test]
    fn exact_factorization_is_a_fixed_point() {
        let scene = gen_scene(&SceneSpec::strip(3, 20, 60, MixtureModel::Lmm, 6)).unwrap();
        let opts = NmfOptions::default();
        let a0 = fcls_batch(&scene.endmembers, &scene.cube, &FclsOptions::default()).unwrap().0;
        assert!(nmf_objective(scene.cube.data(), scene.endmembers.data(), a0.data(), &opts) <= 1e-20);
        let out = nmf_unmix(&scene.cube, 3, &opts, Some(&scene.endmembers)).unwrap();
        assert!((out.endmembers.data() - scene.endmembers.data()).amax() < 1e-8);
        assert!((out.abundances.data() - scene.abundances.data()).amax() < 1e-8);
    }

    #[test]
    fn trace_is_monotone_with_regularizers() {
        let scene = gen_scene(&SceneSpec::strip(3, 25, 80, MixtureModel::Lmm, 2)).unwrap();
        let cube = add_noise(&scene.cube, &NoiseSpec { snr_db: 25.0, seed: 2 }).unwrap();
        let opts = NmfOptions {
            volume_weight: 0.05,
            sparsity_weight: 0.01,
            max_iters: 100,
            ..Default::default()
        };
        let out = nmf_unmix(&cube, 3, &opts, None).unwrap();
        let t = &out.report.objective_trace;
        assert_eq!(t.len(), out.report.iterations);
        assert!(t.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        assert_eq!(out.abundances.validate(), Ok(()));
        assert!(out.endmembers.data().iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn argument_checks() {
        let scene = gen_scene(&SceneSpec::strip(2, 5, 10, MixtureModel::Lmm, 0)).unwrap();
        assert!(nmf_unmix(&scene.cube, 6, &NmfOptions::default(), None).is_err());
        let bad = NmfOptions {
            step_shrink: 1.5,
            ..Default::default()
        };
        assert!(nmf_unmix(&scene.cube, 2, &bad, None).is_err());
        let neg = EndmemberMatrix::new_unchecked(DMatrix::from_element(5, 2, -0.1), SpectralDomain::Reflectance);
        assert!(nmf_unmix(&scene.cube, 2, &NmfOptions::default(), Some(&neg)).is_err());
    }
}
