//! Reconstruction losses and the evaluation used by reports and benches.
//!
//! All matrix arguments hold one spectrum per column.

use itertools::Itertools;
use nalgebra::DMatrix;

use crate::error::{Result, UnmixError};
use crate::types::{AbundanceMatrix, EndmemberMatrix, HyperCube};

/// Floor applied to band-normalized probabilities in [`sid_loss`].
pub const SID_FLOOR: f64 = 1e-12;

/// Largest endmember count matched by exhaustive permutation search.
pub const EXHAUSTIVE_MATCH_LIMIT: usize = 8;

fn same_shape(y: &DMatrix<f64>, y_hat: &DMatrix<f64>, context: &'static str) -> Result<()> {
    if y.shape() != y_hat.shape() {
        return Err(UnmixError::mismatch(
            context,
            format!("{:?}", y.shape()),
            format!("{:?}", y_hat.shape()),
        ));
    }
    Ok(())
}

/// Angle between two spectra in radians, in `[0, π]`.
pub fn spectral_angle(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(UnmixError::mismatch("spectral_angle", a.len(), b.len()));
    }
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return Err(UnmixError::Domain("spectral angle of a zero-norm spectrum".into()));
    }
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    Ok((dot / (na * nb)).clamp(-1.0, 1.0).acos())
}

/// `(1/N) Σ ‖y_i − ŷ_i‖²`.
pub fn mse_loss(y: &DMatrix<f64>, y_hat: &DMatrix<f64>) -> Result<f64> {
    same_shape(y, y_hat, "mse_loss")?;
    let total: f64 = y
        .column_iter()
        .zip(y_hat.column_iter())
        .map(|(a, b)| (a - b).norm_squared())
        .sum();
    Ok(total / y.ncols() as f64)
}

/// Mean spectral angle over pixels, radians.
pub fn sad_loss(y: &DMatrix<f64>, y_hat: &DMatrix<f64>) -> Result<f64> {
    same_shape(y, y_hat, "sad_loss")?;
    let mut total = 0.0;
    for (i, (a, b)) in y.column_iter().zip(y_hat.column_iter()).enumerate() {
        total += spectral_angle(a.as_slice(), b.as_slice()).map_err(|e| UnmixError::Pixel {
            pixel: i,
            source: Box::new(e),
        })?;
    }
    Ok(total / y.ncols() as f64)
}

fn band_distribution(y: &[f64], pixel: usize) -> Result<Vec<f64>> {
    let total: f64 = y.iter().sum();
    if !(total > 0.0) {
        return Err(UnmixError::Domain(format!(
            "pixel {pixel} has nonpositive band sum {total}"
        )));
    }
    y.iter()
        .enumerate()
        .map(|(band, &v)| {
            let p = (v / total).max(SID_FLOOR);
            if p > 0.0 && p.is_finite() {
                Ok(p)
            } else {
                Err(UnmixError::Domain(format!(
                    "pixel {pixel} band {band}: unusable probability {p}"
                )))
            }
        })
        .collect()
}

/// Mean spectral information divergence `Σ_ℓ p_ℓ ln(p_ℓ / p̂_ℓ)`, in nats.
pub fn sid_loss(y: &DMatrix<f64>, y_hat: &DMatrix<f64>) -> Result<f64> {
    same_shape(y, y_hat, "sid_loss")?;
    let mut total = 0.0;
    for (i, (a, b)) in y.column_iter().zip(y_hat.column_iter()).enumerate() {
        let p = band_distribution(a.as_slice(), i)?;
        let q = band_distribution(b.as_slice(), i)?;
        total += p.iter().zip(&q).map(|(p, q)| p * (p / q).ln()).sum::<f64>();
    }
    Ok(total / y.ncols() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalResult {
    /// Root mean squared error over all `R·N` abundance entries.
    pub abundance_rmse: f64,
    /// Per true endmember, degrees.
    pub endmember_sad_deg: Vec<f64>,
    pub reconstruction_mse: f64,
    /// `matching[k]` is the estimated endmember paired with true endmember `k`.
    pub matching: Vec<usize>,
}

impl EvalResult {
    pub fn mean_sad_deg(&self) -> f64 {
        self.endmember_sad_deg.iter().sum::<f64>() / self.endmember_sad_deg.len() as f64
    }
}

/// SAD between every true (row) and estimated (column) endmember, radians.
fn sad_table(truth: &DMatrix<f64>, est: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let r = truth.ncols();
    let mut table = DMatrix::zeros(r, r);
    for k in 0..r {
        for j in 0..r {
            table[(k, j)] = spectral_angle(truth.column(k).as_slice(), est.column(j).as_slice())?;
        }
    }
    Ok(table)
}

/// Minimum-total-angle assignment by brute force over all permutations.
pub fn match_exhaustive(table: &DMatrix<f64>) -> Vec<usize> {
    let r = table.nrows();
    let mut best = (f64::INFINITY, (0..r).collect::<Vec<_>>());
    for perm in (0..r).permutations(r) {
        let cost: f64 = perm.iter().enumerate().map(|(k, &j)| table[(k, j)]).sum();
        if cost < best.0 {
            best = (cost, perm);
        }
    }
    best.1
}

/// Repeatedly pairs the globally closest remaining (true, estimated) couple.
pub fn match_greedy(table: &DMatrix<f64>) -> Vec<usize> {
    let r = table.nrows();
    let mut matching = vec![usize::MAX; r];
    let mut used = vec![false; r];
    for _ in 0..r {
        let mut best = (f64::INFINITY, 0, 0);
        for k in (0..r).filter(|&k| matching[k] == usize::MAX) {
            for j in (0..r).filter(|&j| !used[j]) {
                if table[(k, j)] < best.0 {
                    best = (table[(k, j)], k, j);
                }
            }
        }
        matching[best.1] = best.2;
        used[best.2] = true;
    }
    matching
}

/// Matches estimated to true endmembers, permutes the estimates
/// accordingly, and scores abundances, endmembers and reconstruction.
pub fn evaluate(
    m_est: &EndmemberMatrix,
    a_est: &AbundanceMatrix,
    m_true: &EndmemberMatrix,
    a_true: &AbundanceMatrix,
    cube: &HyperCube,
) -> Result<EvalResult> {
    let r = m_true.endmember_count();
    if m_est.endmember_count() != r
        || a_est.endmember_count() != r
        || a_true.endmember_count() != r
    {
        return Err(UnmixError::mismatch(
            "evaluate endmember count",
            r,
            format!(
                "estimated M has {}, estimated A has {}, true A has {}",
                m_est.endmember_count(),
                a_est.endmember_count(),
                a_true.endmember_count()
            ),
        ));
    }
    same_shape(m_true.data(), m_est.data(), "evaluate endmembers")?;
    same_shape(a_true.data(), a_est.data(), "evaluate abundances")?;

    let table = sad_table(m_true.data(), m_est.data())?;
    let matching = if r <= EXHAUSTIVE_MATCH_LIMIT {
        match_exhaustive(&table)
    } else {
        match_greedy(&table)
    };

    let n = a_true.pixel_count();
    let mut sq = 0.0;
    for (k, &j) in matching.iter().enumerate() {
        for p in 0..n {
            let d = a_est.data()[(j, p)] - a_true.data()[(k, p)];
            sq += d * d;
        }
    }
    let abundance_rmse = (sq / (r * n) as f64).sqrt();
    let endmember_sad_deg = matching
        .iter()
        .enumerate()
        .map(|(k, &j)| table[(k, j)].to_degrees())
        .collect();
    // Reconstruct from the estimates in matched order so the summation order,
    // and hence the result, does not depend on how the estimates were labelled.
    let m_matched = DMatrix::from_fn(m_est.band_count(), r, |l, k| m_est.data()[(l, matching[k])]);
    let a_matched = DMatrix::from_fn(r, n, |k, p| a_est.data()[(matching[k], p)]);
    let recon = m_matched * a_matched;
    let reconstruction_mse = mse_loss(cube.data(), &recon)?;
    Ok(EvalResult {
        abundance_rmse,
        endmember_sad_deg,
        reconstruction_mse,
        matching,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_4};

    fn col(v: &[f64]) -> DMatrix<f64> {
        DMatrix::from_column_slice(v.len(), 1, v)
    }

    #[test]
    fn mse_cases() {
        let y = DMatrix::from_column_slice(2, 2, &[1.0, 0.0, 0.5, 0.5]);
        assert_eq!(mse_loss(&y, &y).unwrap(), 0.0);
        assert_eq!(mse_loss(&col(&[1.0, 0.0]), &col(&[0.0, 0.0])).unwrap(), 1.0);
        // Squared residual norms 0.25 and 0.75.
        let y_hat = DMatrix::from_column_slice(2, 2, &[0.5, 0.0, 0.5, 0.5 + 0.75f64.sqrt()]);
        assert!((mse_loss(&y, &y_hat).unwrap() - 0.5).abs() < 1e-15);
        assert!(mse_loss(&y, &col(&[1.0, 0.0])).is_err());
    }

    #[test]
    fn sad_cases() {
        let y = col(&[0.2, 0.7, 0.1]);
        assert_eq!(sad_loss(&y, &(&y * 3.5)).unwrap(), 0.0);
        assert_eq!(sad_loss(&col(&[1.0, 0.0]), &col(&[0.0, 1.0])).unwrap(), FRAC_PI_2);
        let v = sad_loss(&col(&[1.0, 1.0]), &col(&[1.0, 0.0])).unwrap();
        assert!((v - FRAC_PI_4).abs() < 1e-12);
    }

    #[test]
    fn sad_zero_norm_names_pixel() {
        let y = DMatrix::from_column_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]);
        match sad_loss(&y, &y) {
            Err(UnmixError::Pixel { pixel: 1, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn sid_cases() {
        let y = col(&[0.2, 0.5, 0.3]);
        assert_eq!(sid_loss(&y, &y).unwrap(), 0.0);
        assert!(sid_loss(&y, &(&y * 3.0)).unwrap().abs() < 1e-15);
        let v = sid_loss(&col(&[0.5, 0.5]), &col(&[0.25, 0.75])).unwrap();
        let expect = 0.5 * 2f64.ln() + 0.5 * (2.0f64 / 3.0).ln();
        assert!((v - expect).abs() < 1e-15);
        assert!((v - 0.14384).abs() < 1e-5);
    }

    #[test]
    fn sid_floors_zero_bands_and_rejects_empty_spectra() {
        let v = sid_loss(&col(&[1.0, 0.0]), &col(&[0.5, 0.5])).unwrap();
        assert!(v.is_finite() && v > 0.0);
        assert!(sid_loss(&col(&[0.0, 0.0]), &col(&[0.5, 0.5])).is_err());
    }

    fn unit(deg_y: f64, deg_z: f64) -> Vec<f64> {
        let (y, z) = (deg_y.to_radians(), deg_z.to_radians());
        vec![y.cos() * z.cos(), y.sin() * z.cos(), z.sin()]
    }

    #[test]
    fn exhaustive_beats_greedy_on_crafted_pair() {
        // est0 sits 1 degree from true0, which lures greedy into the pairing
        // (0,0),(1,1) with total ~31 degrees; the crossed pairing costs ~30.
        let truth = [unit(30.0, 0.0), unit(10.0, 0.0)];
        let est = [unit(30.0, 1.0), unit(40.0, 0.0)];
        let t = DMatrix::from_fn(3, 2, |l, k| truth[k][l]);
        let e = DMatrix::from_fn(3, 2, |l, k| est[k][l]);
        let table = sad_table(&t, &e).unwrap();
        let greedy = match_greedy(&table);
        let exhaustive = match_exhaustive(&table);
        assert_eq!(greedy, vec![0, 1]);
        assert_eq!(exhaustive, vec![1, 0]);
        let cost = |m: &[usize]| m.iter().enumerate().map(|(k, &j)| table[(k, j)]).sum::<f64>();
        assert!(cost(&exhaustive) < cost(&greedy));

        // evaluate uses the exhaustive matcher for R = 2.
        let m_est = EndmemberMatrix::reflectance(e).unwrap();
        let m_true = EndmemberMatrix::reflectance(t).unwrap();
        let a = AbundanceMatrix::new(DMatrix::from_column_slice(2, 1, &[0.5, 0.5])).unwrap();
        let cube = HyperCube::from_columns(m_true.data() * a.data()).unwrap();
        let res = evaluate(&m_est, &a, &m_true, &a, &cube).unwrap();
        assert_eq!(res.matching, vec![1, 0]);
    }

    #[test]
    fn evaluate_mismatched_r() {
        let m2 = EndmemberMatrix::reflectance(DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0])).unwrap();
        let m1 = EndmemberMatrix::reflectance(DMatrix::from_row_slice(2, 1, &[1.0, 0.0])).unwrap();
        let a2 = AbundanceMatrix::new(DMatrix::from_column_slice(2, 1, &[0.5, 0.5])).unwrap();
        let a1 = AbundanceMatrix::new(DMatrix::from_column_slice(1, 1, &[1.0])).unwrap();
        let cube = HyperCube::from_columns(DMatrix::from_column_slice(2, 1, &[0.5, 0.5])).unwrap();
        assert!(evaluate(&m1, &a1, &m2, &a2, &cube).is_err());
    }

    mod properties {
        use super::*;
        use proptest::prelude::*;

        fn positive(len: usize) -> impl Strategy<Value = Vec<f64>> {
            prop::collection::vec(0.01f64..1.0, len)
        }

        proptest! {
            #[test]
            fn sad_is_scale_invariant(a in positive(12), b in positive(12), k in -20i32..20) {
                let s = 2f64.powi(k);
                let scaled: Vec<f64> = a.iter().map(|x| x * s).collect();
                prop_assert_eq!(spectral_angle(&scaled, &b).unwrap(), spectral_angle(&a, &b).unwrap());
            }

            #[test]
            fn sid_is_zero_on_equal_and_nonnegative(p in positive(10), q in positive(10)) {
                prop_assert_eq!(sid_loss(&col(&p), &col(&p)).unwrap(), 0.0);
                prop_assert!(sid_loss(&col(&p), &col(&q)).unwrap() >= 0.0);
            }

            #[test]
            fn mse_is_symmetric(a in positive(15), b in positive(15)) {
                prop_assert_eq!(mse_loss(&col(&a), &col(&b)).unwrap(), mse_loss(&col(&b), &col(&a)).unwrap());
            }

            #[test]
            fn evaluate_ignores_estimate_labels(seed in 0u64..500, perm in Just((0..4usize).collect::<Vec<_>>()).prop_shuffle()) {
                use crate::mixmodels::{dirichlet_abundances, random_endmembers};
                use crate::types::EndmemberMatrix;
                let m_true = EndmemberMatrix::reflectance(random_endmembers(4, 16, seed).unwrap()).unwrap();
                let a_true = dirichlet_abundances(4, 20, seed);
                let cube = HyperCube::from_columns(m_true.data() * a_true.data()).unwrap();
                let m_est = EndmemberMatrix::reflectance(m_true.data().map(|x| x * 1.1 + 0.01)).unwrap();
                let a_est = AbundanceMatrix::new_unchecked(a_true.data().map(|x| 0.9 * x + 0.025));
                let m_perm = DMatrix::from_fn(16, 4, |l, j| m_est.data()[(l, perm[j])]);
                let a_perm = DMatrix::from_fn(4, 20, |j, p| a_est.data()[(perm[j], p)]);
                let m_perm = EndmemberMatrix::reflectance(m_perm).unwrap();
                let a_perm = AbundanceMatrix::new_unchecked(a_perm);
                let base = evaluate(&m_est, &a_est, &m_true, &a_true, &cube).unwrap();
                let moved = evaluate(&m_perm, &a_perm, &m_true, &a_true, &cube).unwrap();
                prop_assert_eq!(base.abundance_rmse, moved.abundance_rmse);
                prop_assert_eq!(&base.endmember_sad_deg, &moved.endmember_sad_deg);
                prop_assert_eq!(base.reconstruction_mse, moved.reconstruction_mse);
                let remapped: Vec<usize> = moved.matching.iter().map(|&j| perm[j]).collect();
                prop_assert_eq!(remapped, base.matching);
            }
        }
    }
}
