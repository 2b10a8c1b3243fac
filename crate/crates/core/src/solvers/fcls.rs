use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Result, UnmixError};
use crate::qp::{AdmmSettings, SimplexQp};
use crate::types::{AbundanceMatrix, EndmemberMatrix, HyperCube, SolverReport};

/// Fully constrained least squares options.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FclsOptions {
    pub rho: f64,
    pub max_iters: usize,
    pub primal_tol: f64,
    pub dual_tol: f64,
}

impl Default for FclsOptions {
    fn default() -> Self {
        Self {
            rho: 1.0,
            max_iters: 500,
            primal_tol: 1e-8,
            dual_tol: 1e-8,
        }
    }
}

impl From<FclsOptions> for AdmmSettings {
    fn from(o: FclsOptions) -> Self {
        AdmmSettings {
            rho: o.rho,
            max_iters: o.max_iters,
            primal_tol: o.primal_tol,
            dual_tol: o.dual_tol,
        }
    }
}

/// FCLS for a fixed endmember matrix: `(MᵀM + ρI)` is factored once and
/// shared read-only by every pixel.
#[derive(Debug, Clone)]
pub struct FclsSolver {
    m: DMatrix<f64>,
    qp: SimplexQp,
}

impl FclsSolver {
    pub fn new(m: &EndmemberMatrix, opts: FclsOptions) -> Result<Self> {
        let md = m.data().clone();
        if md.iter().any(|v| !v.is_finite()) {
            return Err(UnmixError::NonFinite("endmember matrix".into()));
        }
        let gram = md.tr_mul(&md);
        let qp = SimplexQp::new(gram, opts.into())?;
        Ok(Self { m: md, qp })
    }

    /// Minimizes `‖y − Ma‖²` over the simplex. Non-convergence is reported,
    /// not raised.
    pub fn solve(&self, y: &[f64]) -> Result<(Vec<f64>, SolverReport)> {
        let started = Instant::now();
        if y.len() != self.m.nrows() {
            return Err(UnmixError::mismatch("fcls_solve", self.m.nrows(), y.len()));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(UnmixError::NonFinite("pixel spectrum".into()));
        }
        let y = DVector::from_column_slice(y);
        let linear = self.m.tr_mul(&y);
        let m = &self.m;
        let mut residual = |a: &DVector<f64>| (&y - m * a).norm_squared();
        let sol = self.qp.solve(&linear, None, Some(&mut residual))?;
        let report = SolverReport::finish(sol.trace, sol.converged, started);
        Ok((sol.x.as_slice().to_vec(), report))
    }

    fn solve_quiet(&self, y: &[f64]) -> Result<(DVector<f64>, bool)> {
        if y.iter().any(|v| !v.is_finite()) {
            return Err(UnmixError::NonFinite("pixel spectrum".into()));
        }
        let linear = self.m.tr_mul(&DVector::from_column_slice(y));
        let sol = self.qp.solve(&linear, None, None)?;
        Ok((sol.x, sol.converged))
    }
}

/// Single-pixel FCLS.
pub fn fcls_solve(
    m: &EndmemberMatrix,
    y: &[f64],
    opts: &FclsOptions,
) -> Result<(Vec<f64>, SolverReport)> {
    FclsSolver::new(m, *opts)?.solve(y)
}

/// Per-pixel FCLS over a cube. Pixels are solved independently (in
/// parallel); the result does not depend on the thread count.
pub fn fcls_batch(
    m: &EndmemberMatrix,
    cube: &HyperCube,
    opts: &FclsOptions,
) -> Result<(AbundanceMatrix, SolverReport)> {
    let started = Instant::now();
    if cube.band_count() != m.band_count() {
        return Err(UnmixError::mismatch(
            "fcls_batch bands",
            m.band_count(),
            cube.band_count(),
        ));
    }
    let solver = FclsSolver::new(m, *opts)?;
    let y = cube.data();
    let columns: Vec<(DVector<f64>, bool)> = (0..cube.pixel_count())
        .into_par_iter()
        .map(|i| {
            solver.solve_quiet(y.column(i).as_slice()).map_err(|e| UnmixError::Pixel {
                pixel: i,
                source: Box::new(e),
            })
        })
        .collect::<Result<_>>()?;
    let r = m.endmember_count();
    let mut a = DMatrix::zeros(r, columns.len());
    let mut converged = true;
    for (i, (col, ok)) in columns.iter().enumerate() {
        a.column_mut(i).copy_from(col);
        converged &= ok;
    }
    let objective = (y - m.data() * &a).norm_squared();
    let report = SolverReport::finish(vec![objective], converged, started);
    Ok((AbundanceMatrix::new_unchecked(a), report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mixmodels::{dirichlet_abundances, random_endmembers};
    use crate::qp::kkt_residual;
    use crate::simplex::project_to_simplex;
    use crate::types::Validate;

    fn identity2() -> EndmemberMatrix {
        EndmemberMatrix::reflectance(DMatrix::identity(2, 2)).unwrap()
    }

    #[test]
    fn feasible_image_is_recovered() {
        let (a, report) = fcls_solve(&identity2(), &[0.3, 0.7], &FclsOptions::default()).unwrap();
        assert!((a[0] - 0.3).abs() < 1e-12 && (a[1] - 0.7).abs() < 1e-12);
        assert!(report.converged);
        assert_eq!(report.objective_trace.len(), report.iterations);
    }

    #[test]
    fn infeasible_image_hits_vertex() {
        // Grid search (step 1e-4) puts the minimizer at [1, 0].
        let (a, _) = fcls_solve(&identity2(), &[2.0, 0.0], &FclsOptions::default()).unwrap();
        assert!((a[0] - 1.0).abs() < 1e-12 && a[1].abs() < 1e-12);
    }

    #[test]
    fn noiseless_mixture_is_recovered() {
        let m = EndmemberMatrix::reflectance(random_endmembers(3, 20, 5).unwrap()).unwrap();
        let a_true = dirichlet_abundances(3, 1, 5);
        let y = m.data() * a_true.data();
        let (a, _) = fcls_solve(&m, y.as_slice(), &FclsOptions::default()).unwrap();
        for j in 0..3 {
            assert!((a[j] - a_true.data()[(j, 0)]).abs() < 1e-6);
        }
    }

    #[test]
    fn rejects_non_finite_and_mismatch() {
        let m = identity2();
        assert!(fcls_solve(&m, &[f64::NAN, 0.0], &FclsOptions::default()).is_err());
        assert!(fcls_solve(&m, &[0.1, 0.2, 0.3], &FclsOptions::default()).is_err());
    }

    #[test]
    fn iteration_cap_reports_non_convergence() {
        let m = EndmemberMatrix::reflectance(random_endmembers(4, 10, 8).unwrap()).unwrap();
        let y = vec![0.3; 10];
        let opts = FclsOptions {
            max_iters: 1,
            ..Default::default()
        };
        let solver = FclsSolver::new(&m, opts).unwrap();
        let (a, report) = solver.solve(&y).unwrap();
        assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        // Either the polish certified the optimum or the run is flagged.
        if !report.converged {
            assert_eq!(report.iterations, 1);
        }
    }

    #[test]
    fn kkt_and_projection_heuristic() {
        for seed in 0..30 {
            let m = EndmemberMatrix::reflectance(random_endmembers(3, 12, seed).unwrap()).unwrap();
            let y: Vec<f64> = (0..12).map(|l| 0.2 + 0.05 * ((l as u64 * 7 + seed) % 5) as f64).collect();
            let (a, _) = fcls_solve(&m, &y, &FclsOptions::default()).unwrap();
            let a = DVector::from_vec(a);
            let yv = DVector::from_vec(y);
            let md = m.data();
            let obj = (&yv - md * &a).norm_squared();

            // Unconstrained least squares followed by simplex projection.
            let ls = md.clone().svd(true, true).solve(&yv, 1e-14).unwrap();
            let heuristic = DVector::from_vec(project_to_simplex(ls.as_slice()).unwrap());
            assert!(obj <= (&yv - md * &heuristic).norm_squared() + 1e-12);

            let h = md.tr_mul(md);
            let b = md.tr_mul(&yv);
            assert!(kkt_residual(&h, &b, &a) < 1e-10);
        }
    }

    #[test]
    fn batch_matches_single_pixel_and_duplicates() {
        let m = EndmemberMatrix::reflectance(random_endmembers(3, 15, 2).unwrap()).unwrap();
        let mut y = m.data() * dirichlet_abundances(3, 4, 2).data();
        let dup = y.column(1).clone_owned();
        y.column_mut(3).copy_from(&dup);
        let cube = HyperCube::from_columns(y.clone()).unwrap();
        let (a, _) = fcls_batch(&m, &cube, &FclsOptions::default()).unwrap();
        assert_eq!(a.validate(), Ok(()));
        assert_eq!(a.data().column(1), a.data().column(3));
        let (single, _) = fcls_solve(&m, y.column(0).as_slice(), &FclsOptions::default()).unwrap();
        assert_eq!(a.data().column(0).as_slice(), single.as_slice());
    }

    #[test]
    fn batch_is_thread_count_independent() {
        let m = EndmemberMatrix::reflectance(random_endmembers(4, 20, 3).unwrap()).unwrap();
        let y = m.data() * dirichlet_abundances(4, 64, 3).data();
        let y = y.map(|v| v + 0.01 * (v * 1e3).sin());
        let cube = HyperCube::from_columns(y).unwrap();
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| fcls_batch(&m, &cube, &FclsOptions::default()).unwrap().0)
        };
        let sequential: Vec<f64> = (0..64)
            .flat_map(|i| fcls_solve(&m, cube.pixel(i).as_slice(), &FclsOptions::default()).unwrap().0)
            .collect();
        assert_eq!(run(1).data().as_slice(), sequential.as_slice());
        assert_eq!(run(4).data().as_slice(), sequential.as_slice());
    }

    #[test]
    fn batch_error_names_pixel() {
        let m = identity2();
        let cube = HyperCube::from_columns(DMatrix::from_element(3, 2, 0.5)).unwrap();
        assert!(matches!(
            fcls_batch(&m, &cube, &FclsOptions::default()),
            Err(UnmixError::DimensionMismatch { .. })
        ));
    }
}
