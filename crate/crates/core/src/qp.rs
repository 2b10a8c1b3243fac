//! Strictly-convex quadratic programs over the unit simplex,
//!
//! ```text
//!     minimize  ½ xᵀHx − bᵀx   subject to  x ≥ 0, 1ᵀx = 1,
//! ```
//!
//! solved by ADMM on the split `x = z` (quadratic step through a cached
//! Cholesky factor of `H + ρI`, `z` step by simplex projection), followed by
//! an active-set polish that certifies the KKT conditions exactly. FCLS,
//! the K-Hype abundance block and the plug-and-play A-step all run through
//! this engine.

use nalgebra::{DMatrix, DVector, Dyn, Cholesky};

use crate::error::{Result, UnmixError};
use crate::simplex::{project_in_place, project_to_simplex};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdmmSettings {
    pub rho: f64,
    pub max_iters: usize,
    pub primal_tol: f64,
    pub dual_tol: f64,
}

impl Default for AdmmSettings {
    fn default() -> Self {
        Self {
            rho: 1.0,
            max_iters: 500,
            primal_tol: 1e-8,
            dual_tol: 1e-8,
        }
    }
}

impl AdmmSettings {
    pub fn check(&self) -> Result<()> {
        if !(self.rho > 0.0 && self.rho.is_finite()) {
            return Err(UnmixError::InvalidArgument(format!(
                "ADMM penalty must be positive, got {}",
                self.rho
            )));
        }
        if !(self.primal_tol > 0.0 && self.dual_tol > 0.0) {
            return Err(UnmixError::InvalidArgument(
                "ADMM tolerances must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub iterations: usize,
    /// One entry per iteration when an objective callback was supplied.
    pub trace: Vec<f64>,
    pub converged: bool,
    /// The returned point passed the exact KKT check.
    pub certified: bool,
}

/// A simplex-constrained QP with a fixed Hessian, reusable across many
/// linear terms.
#[derive(Debug, Clone)]
pub struct SimplexQp {
    hessian: DMatrix<f64>,
    factor: Cholesky<f64, Dyn>,
    settings: AdmmSettings,
}

impl SimplexQp {
    pub fn new(hessian: DMatrix<f64>, settings: AdmmSettings) -> Result<Self> {
        settings.check()?;
        if !hessian.is_square() || hessian.nrows() == 0 {
            return Err(UnmixError::mismatch(
                "SimplexQp::new",
                "non-empty square Hessian",
                format!("{:?}", hessian.shape()),
            ));
        }
        if hessian.iter().any(|x| !x.is_finite()) {
            return Err(UnmixError::NonFinite("QP Hessian".into()));
        }
        let n = hessian.nrows();
        let shifted = &hessian + DMatrix::<f64>::identity(n, n) * settings.rho;
        let factor = Cholesky::new(shifted)
            .ok_or_else(|| UnmixError::Singular("H + rho*I is not positive definite".into()))?;
        Ok(Self {
            hessian,
            factor,
            settings,
        })
    }

    pub fn dim(&self) -> usize {
        self.hessian.nrows()
    }

    pub fn hessian(&self) -> &DMatrix<f64> {
        &self.hessian
    }

    pub fn settings(&self) -> &AdmmSettings {
        &self.settings
    }

    /// `½ xᵀHx − bᵀx`.
    pub fn objective(&self, linear: &DVector<f64>, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.hessian * x)) - linear.dot(x)
    }

    /// Solves for the given linear term. A warm start is tried first through
    /// the active-set polish; when it certifies, no ADMM iteration runs.
    pub fn solve(
        &self,
        linear: &DVector<f64>,
        warm_start: Option<&DVector<f64>>,
        mut objective: Option<&mut dyn FnMut(&DVector<f64>) -> f64>,
    ) -> Result<QpSolution> {
        let n = self.dim();
        if linear.len() != n {
            return Err(UnmixError::mismatch("SimplexQp::solve", n, linear.len()));
        }
        if linear.iter().any(|x| !x.is_finite()) {
            return Err(UnmixError::NonFinite("QP linear term".into()));
        }

        let mut z = match warm_start {
            Some(w) => DVector::from_vec(project_to_simplex(w.as_slice())?),
            None => DVector::from_element(n, 1.0 / n as f64),
        };
        if warm_start.is_some() {
            if let Some(x) = self.polish(linear, &z) {
                return Ok(QpSolution {
                    x,
                    iterations: 0,
                    trace: Vec::new(),
                    converged: true,
                    certified: true,
                });
            }
        }

        let AdmmSettings {
            rho,
            max_iters,
            primal_tol,
            dual_tol,
        } = self.settings;
        let mut u = DVector::zeros(n);
        let mut trace = Vec::new();
        let mut converged = false;
        let mut iterations = 0;
        while iterations < max_iters {
            iterations += 1;
            let rhs = linear + (&z - &u) * rho;
            let x = self.factor.solve(&rhs);
            let z_prev = z.clone();
            z = &x + &u;
            project_in_place(z.as_mut_slice());
            u += &x - &z;
            if let Some(f) = objective.as_mut() {
                trace.push(f(&z));
            }
            if z.iter().any(|v| !v.is_finite()) {
                return Err(UnmixError::NonFinite(format!(
                    "ADMM iterate at iteration {iterations}"
                )));
            }
            let primal = (&x - &z).norm();
            let dual = rho * (&z - &z_prev).norm();
            if primal <= primal_tol && dual <= dual_tol {
                converged = true;
                break;
            }
        }

        let mut certified = false;
        if let Some(x) = self.polish(linear, &z) {
            let scale = 1.0 + self.objective(linear, &z).abs();
            if self.objective(linear, &x) <= self.objective(linear, &z) + 1e-12 * scale {
                z = x;
                certified = true;
                converged = true;
                iterations += 1;
                if let Some(f) = objective.as_mut() {
                    trace.push(f(&z));
                }
            }
        }
        Ok(QpSolution {
            x: z,
            iterations,
            trace,
            converged,
            certified,
        })
    }

    /// Active-set refinement seeded with the support of `start`. Returns a
    /// point satisfying the KKT conditions to rounding accuracy, or `None`.
    fn polish(&self, linear: &DVector<f64>, start: &DVector<f64>) -> Option<DVector<f64>> {
        let n = self.dim();
        let mut active: Vec<bool> = start.iter().map(|&v| v > 0.0).collect();
        let scale = 1.0 + self.hessian.amax() + linear.amax();
        let tol = 1e-11 * scale;
        for _ in 0..(2 * n + 2) {
            let support: Vec<usize> = (0..n).filter(|&i| active[i]).collect();
            if support.is_empty() {
                return None;
            }
            let (x_s, nu) = self.solve_face(linear, &support)?;
            if let Some((k, _)) = x_s
                .iter()
                .enumerate()
                .filter(|(_, &v)| v < 0.0)
                .min_by(|a, b| a.1.total_cmp(b.1))
            {
                active[support[k]] = false;
                continue;
            }
            let mut x = DVector::zeros(n);
            for (k, &i) in support.iter().enumerate() {
                x[i] = x_s[k];
            }
            let grad = &self.hessian * &x - linear;
            // Multipliers of the inactive bounds must be nonnegative.
            let worst = (0..n)
                .filter(|&i| !active[i])
                .map(|i| (i, grad[i] + nu))
                .min_by(|a, b| a.1.total_cmp(&b.1));
            match worst {
                Some((i, kappa)) if kappa < -tol => active[i] = true,
                _ => {
                    let s: f64 = x.sum();
                    x /= s;
                    return Some(x);
                }
            }
        }
        None
    }

    /// Equality-constrained minimizer on the face spanned by `support`:
    /// `[H_SS 1; 1ᵀ 0][x; ν] = [b_S; 1]`.
    fn solve_face(&self, linear: &DVector<f64>, support: &[usize]) -> Option<(DVector<f64>, f64)> {
        let k = support.len();
        let mut kkt = DMatrix::zeros(k + 1, k + 1);
        let mut rhs = DVector::zeros(k + 1);
        for (p, &i) in support.iter().enumerate() {
            for (q, &j) in support.iter().enumerate() {
                kkt[(p, q)] = self.hessian[(i, j)];
            }
            kkt[(p, k)] = 1.0;
            kkt[(k, p)] = 1.0;
            rhs[p] = linear[i];
        }
        rhs[k] = 1.0;
        let sol = kkt.lu().solve(&rhs)?;
        if sol.iter().any(|v| !v.is_finite()) {
            return None;
        }
        Some((sol.rows(0, k).into_owned(), sol[k]))
    }
}

/// Natural KKT residual `‖x − P(x − (Hx − b))‖∞`; zero exactly at the
/// simplex-constrained minimizer.
pub fn kkt_residual(hessian: &DMatrix<f64>, linear: &DVector<f64>, x: &DVector<f64>) -> f64 {
    let grad = hessian * x - linear;
    let mut step: Vec<f64> = (x - grad).iter().copied().collect();
    project_in_place(&mut step);
    x.iter()
        .zip(&step)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn qp(h: &[f64], n: usize) -> SimplexQp {
        SimplexQp::new(DMatrix::from_row_slice(n, n, h), AdmmSettings::default()).unwrap()
    }

    #[test]
    fn interior_minimizer() {
        // ½‖x − c‖² with c on the simplex.
        let q = qp(&[1.0, 0.0, 0.0, 1.0], 2);
        let b = DVector::from_vec(vec![0.3, 0.7]);
        let s = q.solve(&b, None, None).unwrap();
        assert!(s.certified);
        assert!((s.x[0] - 0.3).abs() < 1e-14);
    }

    #[test]
    fn vertex_minimizer() {
        let q = qp(&[1.0, 0.0, 0.0, 1.0], 2);
        let b = DVector::from_vec(vec![2.0, 0.0]);
        let s = q.solve(&b, None, None).unwrap();
        assert_eq!(s.x.as_slice(), &[1.0, 0.0]);
        assert!(kkt_residual(q.hessian(), &b, &s.x) < 1e-14);
    }

    #[test]
    fn warm_start_at_optimum_skips_iterations() {
        let q = qp(&[2.0, 0.5, 0.5, 1.0], 2);
        let b = DVector::from_vec(vec![1.0, 0.4]);
        let cold = q.solve(&b, None, None).unwrap();
        let warm = q.solve(&b, Some(&cold.x), None).unwrap();
        assert_eq!(warm.iterations, 0);
        assert!((&warm.x - &cold.x).amax() < 1e-14);
    }

    #[test]
    fn rejects_bad_penalty() {
        let s = AdmmSettings {
            rho: 0.0,
            ..Default::default()
        };
        assert!(SimplexQp::new(DMatrix::identity(2, 2), s).is_err());
    }

    #[test]
    fn degenerate_hessian_still_solves() {
        // Rank-one Hessian: whole edge of minimizers, polish may fail but
        // ADMM must return a feasible point with zero KKT residual.
        let q = qp(&[1.0, 1.0, 1.0, 1.0], 2);
        let b = DVector::from_vec(vec![1.0, 1.0]);
        let s = q.solve(&b, None, None).unwrap();
        assert!((s.x.sum() - 1.0).abs() < 1e-12);
        assert!(kkt_residual(q.hessian(), &b, &s.x) < 1e-8);
    }
}
