use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Result, UnmixError};
use crate::rng::{module_rng, TAG_VCA};
use crate::types::{EndmemberMatrix, HyperCube, SpectralDomain};

/// Relative eigenvalue threshold below which a data direction counts as
/// empty when checking the rank of the cube.
const RANK_TOL: f64 = 1e-12;

/// Vertex component analysis: picks `r` extreme pixels by projecting the
/// data onto directions orthogonal to the vertices found so far. Returned
/// columns are pixels of the cube, in selection order. On ties the lowest
/// pixel index wins.
pub fn vca_init(cube: &HyperCube, r: usize, seed: u64) -> Result<EndmemberMatrix> {
    let (l, n) = (cube.band_count(), cube.pixel_count());
    if r == 0 || r > l.min(n) {
        return Err(UnmixError::InvalidArgument(format!(
            "need 1 <= R <= min(L, N); got R={r}, L={l}, N={n}"
        )));
    }
    let y = cube.data();

    // Signal subspace from the correlation matrix.
    let corr = (y * y.transpose()) / n as f64;
    let eig = SymmetricEigen::new(corr);
    let mut order: Vec<usize> = (0..l).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let top = eig.eigenvalues[order[0]].max(0.0);
    let rank = order
        .iter()
        .filter(|&&i| eig.eigenvalues[i] > RANK_TOL * top)
        .count();
    if top == 0.0 || rank < r {
        return Err(UnmixError::RankDeficient { rank, requested: r });
    }
    let basis = DMatrix::from_fn(l, r, |row, k| eig.eigenvectors[(row, order[k])]);
    let x = basis.tr_mul(y);

    // Projective scaling onto the hyperplane {x : xᵀu = 1}.
    let u = x.column_mean();
    let mut yp = x.clone();
    for (i, mut col) in yp.column_iter_mut().enumerate() {
        let d = col.dot(&u);
        if !(d > 0.0) {
            return Err(UnmixError::Domain(format!(
                "pixel {i} does not project onto the positive half-space"
            )));
        }
        col /= d;
    }

    let mut rng = module_rng(seed, TAG_VCA);
    let mut found = DMatrix::<f64>::zeros(r, r);
    found[(r - 1, 0)] = 1.0;
    let mut picked = Vec::with_capacity(r);
    for i in 0..r {
        let w = DVector::from_fn(r, |_, _| StandardNormal.sample(&mut rng));
        let pinv = found
            .clone()
            .pseudo_inverse(1e-12)
            .map_err(|e| UnmixError::Singular(e.to_string()))?;
        let mut f = &w - &found * (pinv * &w);
        let norm = f.norm();
        let scores: Vec<f64> = if norm > 1e-12 {
            f /= norm;
            yp.column_iter().map(|c| c.dot(&f).abs()).collect()
        } else {
            yp.column_iter().map(|c| c.norm()).collect()
        };
        let mut best = 0;
        for (j, &s) in scores.iter().enumerate() {
            if s > scores[best] {
                best = j;
            }
        }
        found.set_column(i, &yp.column(best));
        picked.push(best);
    }

    let m = DMatrix::from_fn(l, r, |row, k| y[(row, picked[k])]);
    Ok(EndmemberMatrix::new_unchecked(m, SpectralDomain::Reflectance))
}
