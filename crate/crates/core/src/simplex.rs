//! Euclidean projection onto the unit simplex `{a : a >= 0, sum(a) = 1}`.
//!
//! Sort-and-threshold: sort descending, find the largest `k` with
//! `u_k - (sum_{j<=k} u_j - 1) / k > 0`, shift by that threshold and clip.

use crate::error::{Result, UnmixError};

/// Points already this close to the simplex are returned unchanged, which
/// makes the projection exactly idempotent.
const ON_SIMPLEX_TOL: f64 = 1e-12;

/// Projects `v` onto the unit simplex.
pub fn project_to_simplex(v: &[f64]) -> Result<Vec<f64>> {
    if v.is_empty() {
        return Err(UnmixError::InvalidArgument(
            "cannot project an empty vector onto the simplex".into(),
        ));
    }
    if let Some(i) = v.iter().position(|x| !x.is_finite()) {
        return Err(UnmixError::InvalidArgument(format!(
            "non-finite entry {} at index {i}",
            v[i]
        )));
    }
    let mut out = v.to_vec();
    project_in_place(&mut out);
    Ok(out)
}

/// In-place variant for hot loops. The caller guarantees finite, non-empty
/// input.
pub fn project_in_place(v: &mut [f64]) {
    debug_assert!(!v.is_empty());
    if is_on_simplex(v) {
        return;
    }
    if v.len() == 1 {
        v[0] = 1.0;
        return;
    }
    let mut sorted = v.to_vec();
    sorted.sort_unstable_by(|a, b| b.total_cmp(a));
    let mut cumulative = 0.0;
    let mut theta = 0.0;
    for (k, &u) in sorted.iter().enumerate() {
        cumulative += u;
        let candidate = (cumulative - 1.0) / (k + 1) as f64;
        if u - candidate > 0.0 {
            theta = candidate;
        } else {
            break;
        }
    }
    for x in v.iter_mut() {
        *x = (*x - theta).max(0.0);
    }
}

fn is_on_simplex(v: &[f64]) -> bool {
    v.iter().all(|&x| x >= 0.0) && (v.iter().sum::<f64>() - 1.0).abs() <= ON_SIMPLEX_TOL
}
