//! Built-in denoisers for the plug-and-play Z-step. A stack of planes is an
//! `R × (height·width)` matrix: row `r` is plane `r` in row-major raster
//! order, which is exactly the layout of an abundance matrix.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Result, UnmixError};

/// Dual step of the TV projection iteration.
pub const TV_DUAL_STEP: f64 = 0.248;
/// Inner iterations used by `tv2d` when the spec string omits `iters`.
pub const DEFAULT_TV_ITERS: usize = 30;

/// Any map from one `height × width` plane to another of the same shape.
pub trait Denoiser: Sync {
    fn denoise_plane(&self, plane: &[f64], height: usize, width: usize) -> Vec<f64>;
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DenoiserSpec {
    Identity,
    SoftThreshold { lambda: f64 },
    Tv2d { lambda: f64, iters: usize },
    GaussianBlur { sigma: f64 },
}

impl DenoiserSpec {
    pub fn check(&self) -> Result<()> {
        let bad = |what: &str| Err(UnmixError::InvalidArgument(what.to_string()));
        match *self {
            DenoiserSpec::Identity => Ok(()),
            DenoiserSpec::SoftThreshold { lambda } | DenoiserSpec::Tv2d { lambda, .. }
                if !(lambda >= 0.0 && lambda.is_finite()) =>
            {
                bad(&format!("denoiser lambda must be >= 0, got {lambda}"))
            }
            DenoiserSpec::Tv2d { iters: 0, .. } => bad("tv2d iters must be >= 1"),
            DenoiserSpec::GaussianBlur { sigma } if !(sigma > 0.0 && sigma.is_finite()) => {
                bad(&format!("gaussian_blur sigma must be > 0, got {sigma}"))
            }
            _ => Ok(()),
        }
    }
}

impl fmt::Display for DenoiserSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DenoiserSpec::Identity => write!(f, "identity"),
            DenoiserSpec::SoftThreshold { lambda } => write!(f, "soft_threshold:lambda={lambda}"),
            DenoiserSpec::Tv2d { lambda, iters } => write!(f, "tv2d:lambda={lambda},iters={iters}"),
            DenoiserSpec::GaussianBlur { sigma } => write!(f, "gaussian_blur:sigma={sigma}"),
        }
    }
}

/// Parses `kind` or `kind:key=val,key=val`.
impl FromStr for DenoiserSpec {
    type Err = UnmixError;

    fn from_str(s: &str) -> Result<Self> {
        let (kind, rest) = match s.trim().split_once(':') {
            Some((k, r)) => (k.trim(), r.trim()),
            None => (s.trim(), ""),
        };
        let mut params: Vec<(&str, &str)> = Vec::new();
        for item in rest.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (k, v) = item.split_once('=').ok_or_else(|| {
                UnmixError::InvalidArgument(format!("denoiser parameter `{item}` is not key=val"))
            })?;
            let k = k.trim();
            if params.iter().any(|(seen, _)| *seen == k) {
                return Err(UnmixError::InvalidArgument(format!("duplicate denoiser key `{k}`")));
            }
            params.push((k, v.trim()));
        }
        let allowed: &[&str] = match kind {
            "identity" => &[],
            "soft_threshold" => &["lambda"],
            "tv2d" => &["lambda", "iters"],
            "gaussian_blur" => &["sigma"],
            other => {
                return Err(UnmixError::InvalidArgument(format!("unknown denoiser kind `{other}`")))
            }
        };
        if let Some((k, _)) = params.iter().find(|(k, _)| !allowed.contains(k)) {
            return Err(UnmixError::InvalidArgument(format!(
                "unknown key `{k}` for denoiser `{kind}`"
            )));
        }
        let get = |key: &str| params.iter().find(|(k, _)| *k == key).map(|(_, v)| *v);
        let real = |key: &str| -> Result<f64> {
            let v = get(key).ok_or_else(|| {
                UnmixError::InvalidArgument(format!("denoiser `{kind}` needs `{key}`"))
            })?;
            v.parse()
                .map_err(|_| UnmixError::InvalidArgument(format!("`{key}={v}` is not a number")))
        };
        let spec = match kind {
            "identity" => DenoiserSpec::Identity,
            "soft_threshold" => DenoiserSpec::SoftThreshold { lambda: real("lambda")? },
            "tv2d" => DenoiserSpec::Tv2d {
                lambda: real("lambda")?,
                iters: match get("iters") {
                    Some(v) => v.parse().map_err(|_| {
                        UnmixError::InvalidArgument(format!("`iters={v}` is not a count"))
                    })?,
                    None => DEFAULT_TV_ITERS,
                },
            },
            _ => DenoiserSpec::GaussianBlur { sigma: real("sigma")? },
        };
        spec.check()?;
        Ok(spec)
    }
}

impl Denoiser for DenoiserSpec {
    fn denoise_plane(&self, plane: &[f64], height: usize, width: usize) -> Vec<f64> {
        match *self {
            DenoiserSpec::Identity => plane.to_vec(),
            DenoiserSpec::SoftThreshold { lambda } => {
                plane.iter().map(|&x| soft_threshold(x, lambda)).collect()
            }
            DenoiserSpec::Tv2d { lambda, iters } => tv_prox(plane, height, width, lambda, iters),
            DenoiserSpec::GaussianBlur { sigma } => gaussian_blur(plane, height, width, sigma),
        }
    }
}

pub fn soft_threshold(x: f64, lambda: f64) -> f64 {
    x.signum() * (x.abs() - lambda).max(0.0)
}

/// Applies `denoiser` to every row of `planes`, each row being one
/// `height × width` plane. Planes are processed independently.
pub fn apply_denoiser(
    planes: &DMatrix<f64>,
    height: usize,
    width: usize,
    denoiser: &dyn Denoiser,
) -> Result<DMatrix<f64>> {
    if planes.ncols() != height * width {
        return Err(UnmixError::mismatch(
            "apply_denoiser plane size",
            format!("{height}x{width} = {}", height * width),
            planes.ncols(),
        ));
    }
    if planes.iter().any(|v| !v.is_finite()) {
        return Err(UnmixError::NonFinite("denoiser input".into()));
    }
    let rows: Vec<Vec<f64>> = (0..planes.nrows())
        .into_par_iter()
        .map(|r| {
            let plane: Vec<f64> = planes.row(r).iter().copied().collect();
            denoiser.denoise_plane(&plane, height, width)
        })
        .collect();
    let mut out = DMatrix::zeros(planes.nrows(), planes.ncols());
    for (r, row) in rows.iter().enumerate() {
        if row.len() != planes.ncols() {
            return Err(UnmixError::mismatch("denoiser output", planes.ncols(), row.len()));
        }
        for (c, &v) in row.iter().enumerate() {
            out[(r, c)] = v;
        }
    }
    Ok(out)
}

/// Forward differences with a zero difference across the last row/column.
fn gradient(u: &[f64], h: usize, w: usize) -> (Vec<f64>, Vec<f64>) {
    let mut gx = vec![0.0; h * w];
    let mut gy = vec![0.0; h * w];
    for i in 0..h {
        for j in 0..w {
            let k = i * w + j;
            if j + 1 < w {
                gx[k] = u[k + 1] - u[k];
            }
            if i + 1 < h {
                gy[k] = u[k + w] - u[k];
            }
        }
    }
    (gx, gy)
}

/// Negative adjoint of [`gradient`].
fn divergence(px: &[f64], py: &[f64], h: usize, w: usize) -> Vec<f64> {
    let mut d = vec![0.0; h * w];
    for i in 0..h {
        for j in 0..w {
            let k = i * w + j;
            let x = if j + 1 < w { px[k] } else { 0.0 } - if j > 0 { px[k - 1] } else { 0.0 };
            let y = if i + 1 < h { py[k] } else { 0.0 } - if i > 0 { py[k - w] } else { 0.0 };
            d[k] = x + y;
        }
    }
    d
}

/// `argmin_u ½‖u − f‖² + λ·TV(u)` with isotropic TV, by Chambolle's dual
/// projection iteration.
pub fn tv_prox(f: &[f64], h: usize, w: usize, lambda: f64, iters: usize) -> Vec<f64> {
    if lambda == 0.0 {
        return f.to_vec();
    }
    let n = h * w;
    let mut px = vec![0.0; n];
    let mut py = vec![0.0; n];
    for _ in 0..iters {
        let div = divergence(&px, &py, h, w);
        let arg: Vec<f64> = div.iter().zip(f).map(|(d, v)| d - v / lambda).collect();
        let (gx, gy) = gradient(&arg, h, w);
        for k in 0..n {
            let norm = (gx[k] * gx[k] + gy[k] * gy[k]).sqrt();
            let denom = 1.0 + TV_DUAL_STEP * norm;
            px[k] = (px[k] + TV_DUAL_STEP * gx[k]) / denom;
            py[k] = (py[k] + TV_DUAL_STEP * gy[k]) / denom;
        }
    }
    let div = divergence(&px, &py, h, w);
    f.iter().zip(&div).map(|(v, d)| v - lambda * d).collect()
}

/// Half-sample symmetric extension: `… b a | a b c … z | z y …`.
fn reflect(i: isize, n: usize) -> usize {
    let period = 2 * n as isize;
    let m = i.rem_euclid(period);
    if m < n as isize {
        m as usize
    } else {
        (period - 1 - m) as usize
    }
}

fn gaussian_taps(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let taps: Vec<f64> = (-radius..=radius)
        .map(|t| (-(t * t) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / total).collect()
}

/// Separable Gaussian convolution with reflect padding, rows then columns.
pub fn gaussian_blur(f: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    let taps = gaussian_taps(sigma);
    let radius = (taps.len() / 2) as isize;
    let mut rows = vec![0.0; h * w];
    for i in 0..h {
        for j in 0..w {
            rows[i * w + j] = taps
                .iter()
                .enumerate()
                .map(|(t, c)| c * f[i * w + reflect(j as isize + t as isize - radius, w)])
                .sum();
        }
    }
    let mut out = vec![0.0; h * w];
    for i in 0..h {
        for j in 0..w {
            out[i * w + j] = taps
                .iter()
                .enumerate()
                .map(|(t, c)| c * rows[reflect(i as isize + t as isize - radius, h) * w + j])
                .sum();
        }
    }
    out
}
