//! K-Hype: linear mixture plus a nonlinear fluctuation living in an RKHS
//! over the band rows of the endmember matrix,
//!
//! ```text
//!     min_{a ∈ Δ, f ∈ H}  (1/2μ) Σ_ℓ e_ℓ² + ½(‖f‖²_H + ‖a‖²),
//!     e_ℓ = y_ℓ − m_ℓᵀa − f(m_ℓ).
//! ```
//!
//! With `f = Σ_ℓ β_ℓ k(·, m_ℓ)` the optimal `β` for a fixed `a` is
//! `β = (K + μI)⁻¹(y − Ma)`, which leaves a strictly convex QP in `a`:
//!
//! ```text
//!     min_{a ∈ Δ}  ½ aᵀ(MᵀQM + I)a − (MᵀQy)ᵀa,   Q = (K + μI)⁻¹.
//! ```
//!
//! The residual at the optimum satisfies `e = μβ`.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Result, UnmixError};
use crate::qp::{kkt_residual, AdmmSettings, SimplexQp};
use crate::types::{AbundanceMatrix, EndmemberMatrix, HyperCube, SolverReport};

/// Default fit/regularity trade-off.
pub const DEFAULT_MU: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelSpec {
    /// `exp(−‖x − x'‖² / 2σ²)`.
    Gaussian { bandwidth: f64 },
    /// `(xᵀx' + offset)^degree`.
    Polynomial { degree: u32, offset: f64 },
}

impl KernelSpec {
    pub fn gaussian(bandwidth: f64) -> Result<Self> {
        let spec = KernelSpec::Gaussian { bandwidth };
        spec.check()?;
        Ok(spec)
    }

    /// Gaussian kernel whose bandwidth is the median pairwise distance
    /// between the band rows of `m`.
    pub fn median_heuristic(m: &EndmemberMatrix) -> Result<Self> {
        let d = m.data();
        let l = d.nrows();
        let mut dists = Vec::with_capacity(l * (l.saturating_sub(1)) / 2);
        for i in 0..l {
            for j in i + 1..l {
                dists.push((d.row(i) - d.row(j)).norm());
            }
        }
        dists.retain(|&v| v > 0.0);
        if dists.is_empty() {
            return Err(UnmixError::Domain(
                "median heuristic needs at least two distinct band rows".into(),
            ));
        }
        dists.sort_by(f64::total_cmp);
        let mid = dists.len() / 2;
        let median = if dists.len() % 2 == 0 {
            0.5 * (dists[mid - 1] + dists[mid])
        } else {
            dists[mid]
        };
        Self::gaussian(median)
    }

    pub fn check(&self) -> Result<()> {
        match *self {
            KernelSpec::Gaussian { bandwidth } if !(bandwidth > 0.0 && bandwidth.is_finite()) => {
                Err(UnmixError::InvalidArgument(format!(
                    "gaussian bandwidth must be positive, got {bandwidth}"
                )))
            }
            KernelSpec::Polynomial { degree: 0, .. } => Err(UnmixError::InvalidArgument(
                "polynomial degree must be >= 1".into(),
            )),
            _ => Ok(()),
        }
    }

    pub fn eval(&self, x: &[f64], z: &[f64]) -> f64 {
        match *self {
            KernelSpec::Gaussian { bandwidth } => {
                let d2: f64 = x.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum();
                (-d2 / (2.0 * bandwidth * bandwidth)).exp()
            }
            KernelSpec::Polynomial { degree, offset } => {
                let dot: f64 = x.iter().zip(z).map(|(a, b)| a * b).sum();
                (dot + offset).powi(degree as i32)
            }
        }
    }
}

/// `K[ℓ, ℓ'] = k(m_ℓ, m_ℓ')` over the band rows of `m`.
pub fn build_band_kernel(m: &EndmemberMatrix, spec: &KernelSpec) -> Result<DMatrix<f64>> {
    spec.check()?;
    let d = m.data();
    let l = d.nrows();
    let rows: Vec<Vec<f64>> = (0..l).map(|i| d.row(i).iter().copied().collect()).collect();
    let mut k = DMatrix::zeros(l, l);
    for i in 0..l {
        for j in i..l {
            let v = spec.eval(&rows[i], &rows[j]);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    Ok(k)
}

#[derive(Debug, Clone)]
pub struct KHypeSolution {
    pub a: Vec<f64>,
    /// Kernel expansion weights of the fluctuation, one per band.
    pub dual_coefficients: Vec<f64>,
    pub mu: f64,
    /// Max of the abundance-block natural residual and the dual-block
    /// equation residual.
    pub kkt_residual: f64,
    pub report: SolverReport,
}

impl KHypeSolution {
    /// `‖F_add‖_H = sqrt(βᵀKβ)`.
    pub fn fluctuation_norm(&self, kernel: &DMatrix<f64>) -> f64 {
        let b = DVector::from_column_slice(&self.dual_coefficients);
        b.dot(&(kernel * &b)).max(0.0).sqrt()
    }
}

/// K-Hype for a fixed endmember matrix and kernel Gram matrix, reusable
/// across pixels.
#[derive(Debug, Clone)]
pub struct KHypeSolver {
    m: DMatrix<f64>,
    kernel: DMatrix<f64>,
    /// `(K + μI)⁻¹ M`.
    q_m: DMatrix<f64>,
    shifted: nalgebra::Cholesky<f64, nalgebra::Dyn>,
    qp: SimplexQp,
    mu: f64,
}

impl KHypeSolver {
    pub fn new(m: &EndmemberMatrix, spec: &KernelSpec, mu: f64) -> Result<Self> {
        let kernel = build_band_kernel(m, spec)?;
        Self::with_kernel(m, kernel, mu)
    }

    /// Uses a caller-supplied band kernel (any symmetric PSD `L × L`
    /// matrix, including zero).
    pub fn with_kernel(m: &EndmemberMatrix, kernel: DMatrix<f64>, mu: f64) -> Result<Self> {
        Self::with_kernel_settings(m, kernel, mu, AdmmSettings {
            max_iters: 2000,
            ..AdmmSettings::default()
        })
    }

    pub fn with_kernel_settings(
        m: &EndmemberMatrix,
        kernel: DMatrix<f64>,
        mu: f64,
        settings: AdmmSettings,
    ) -> Result<Self> {
        if !(mu > 0.0 && mu.is_finite()) {
            return Err(UnmixError::InvalidArgument(format!("mu must be positive, got {mu}")));
        }
        let l = m.band_count();
        if kernel.shape() != (l, l) {
            return Err(UnmixError::mismatch(
                "K-Hype kernel",
                format!("({l}, {l})"),
                format!("{:?}", kernel.shape()),
            ));
        }
        let shifted = nalgebra::Cholesky::new(&kernel + DMatrix::identity(l, l) * mu)
            .ok_or_else(|| UnmixError::Singular("K + mu*I is not positive definite".into()))?;
        let md = m.data().clone();
        let q_m = shifted.solve(&md);
        let r = md.ncols();
        let hessian = md.tr_mul(&q_m) + DMatrix::identity(r, r);
        let hessian = (&hessian + hessian.transpose()) * 0.5;
        let qp = SimplexQp::new(hessian, settings)?;
        Ok(Self {
            m: md,
            kernel,
            q_m,
            shifted,
            qp,
            mu,
        })
    }

    pub fn kernel(&self) -> &DMatrix<f64> {
        &self.kernel
    }

    pub fn solve(&self, y: &[f64]) -> Result<KHypeSolution> {
        let started = Instant::now();
        if y.len() != self.m.nrows() {
            return Err(UnmixError::mismatch("khype_solve", self.m.nrows(), y.len()));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(UnmixError::NonFinite("pixel spectrum".into()));
        }
        let y = DVector::from_column_slice(y);
        let linear = self.q_m.tr_mul(&y);
        let qp = &self.qp;
        let lin = linear.clone();
        let mut objective = |a: &DVector<f64>| qp.objective(&lin, a);
        let sol = self.qp.solve(&linear, None, Some(&mut objective))?;
        let a = sol.x;
        let residual = &y - &self.m * &a;
        let beta = self.shifted.solve(&residual);

        let abundance_kkt = kkt_residual(self.qp.hessian(), &linear, &a);
        let dual_kkt = ((&self.kernel * &beta) + &beta * self.mu - &residual).amax();
        let report = SolverReport::finish(sol.trace, sol.converged, started);
        Ok(KHypeSolution {
            a: a.as_slice().to_vec(),
            dual_coefficients: beta.as_slice().to_vec(),
            mu: self.mu,
            kkt_residual: abundance_kkt.max(dual_kkt),
            report,
        })
    }

    /// Value of the original objective at `(a, β)`.
    pub fn objective(&self, y: &[f64], a: &[f64], beta: &[f64]) -> f64 {
        let y = DVector::from_column_slice(y);
        let a = DVector::from_column_slice(a);
        let b = DVector::from_column_slice(beta);
        let kb = &self.kernel * &b;
        let e = &y - &self.m * &a - &kb;
        e.norm_squared() / (2.0 * self.mu) + 0.5 * (b.dot(&kb) + a.norm_squared())
    }

    fn reconstruct(&self, sol: &KHypeSolution) -> DVector<f64> {
        let a = DVector::from_column_slice(&sol.a);
        let b = DVector::from_column_slice(&sol.dual_coefficients);
        &self.m * a + &self.kernel * b
    }
}

/// Single-pixel K-Hype.
pub fn khype_solve(
    m: &EndmemberMatrix,
    y: &[f64],
    spec: &KernelSpec,
    mu: f64,
) -> Result<KHypeSolution> {
    KHypeSolver::new(m, spec, mu)?.solve(y)
}

/// `ŷ_ℓ = m_ℓᵀa + Σ_ℓ' β_ℓ' k(m_ℓ, m_ℓ')`.
pub fn khype_reconstruct(
    m: &EndmemberMatrix,
    sol: &KHypeSolution,
    spec: &KernelSpec,
) -> Result<Vec<f64>> {
    let l = m.band_count();
    if sol.dual_coefficients.len() != l || sol.a.len() != m.endmember_count() {
        return Err(UnmixError::mismatch(
            "khype_reconstruct",
            format!("{l} duals and {} abundances", m.endmember_count()),
            format!("{} and {}", sol.dual_coefficients.len(), sol.a.len()),
        ));
    }
    let kernel = build_band_kernel(m, spec)?;
    let a = DVector::from_column_slice(&sol.a);
    let b = DVector::from_column_slice(&sol.dual_coefficients);
    Ok((m.data() * a + kernel * b).as_slice().to_vec())
}

#[derive(Debug, Clone)]
pub struct KHypeBatch {
    pub abundances: AbundanceMatrix,
    /// `bands × pixels` kernel expansion weights.
    pub dual_coefficients: DMatrix<f64>,
    pub reconstruction: DMatrix<f64>,
    pub max_kkt_residual: f64,
    pub report: SolverReport,
}

/// Per-pixel K-Hype over a cube; the kernel is built once and shared.
pub fn khype_batch(
    m: &EndmemberMatrix,
    cube: &HyperCube,
    spec: &KernelSpec,
    mu: f64,
) -> Result<KHypeBatch> {
    let started = Instant::now();
    if cube.band_count() != m.band_count() {
        return Err(UnmixError::mismatch("khype_batch bands", m.band_count(), cube.band_count()));
    }
    let solver = KHypeSolver::new(m, spec, mu)?;
    let sols: Vec<KHypeSolution> = (0..cube.pixel_count())
        .into_par_iter()
        .map(|i| {
            solver.solve(cube.pixel(i).as_slice()).map_err(|e| UnmixError::Pixel {
                pixel: i,
                source: Box::new(e),
            })
        })
        .collect::<Result<_>>()?;
    let (r, l, n) = (m.endmember_count(), m.band_count(), cube.pixel_count());
    let mut a = DMatrix::zeros(r, n);
    let mut beta = DMatrix::zeros(l, n);
    let mut recon = DMatrix::zeros(l, n);
    let mut max_kkt = 0.0f64;
    let mut converged = true;
    for (i, s) in sols.iter().enumerate() {
        a.column_mut(i).copy_from_slice(&s.a);
        beta.column_mut(i).copy_from_slice(&s.dual_coefficients);
        recon.column_mut(i).copy_from(&solver.reconstruct(s));
        max_kkt = max_kkt.max(s.kkt_residual);
        converged &= s.report.converged;
    }
    let objective = (cube.data() - &recon).norm_squared();
    Ok(KHypeBatch {
        abundances: AbundanceMatrix::new_unchecked(a),
        dual_coefficients: beta,
        reconstruction: recon,
        max_kkt_residual: max_kkt,
        report: SolverReport::finish(vec![objective], converged, started),
    })
}
