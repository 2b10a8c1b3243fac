//! Unrolled ADMM: `K` layers of
//!
//! ```text
//!     a ← W y + B (z + v)
//!     z ← ReLU(a − v − θ)
//!     v ← v − η (a − z)
//! ```
//!
//! starting from `z = v = 0`, with every `{W, B, θ, η}` learnable. The
//! estimate is `z` after the last layer, projected onto the simplex.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rayon::prelude::*;

use crate::error::{Result, UnmixError};
use crate::rng::{module_rng, TAG_SPLIT, TAG_TRAIN};
use crate::simplex::project_to_simplex;
use crate::types::EndmemberMatrix;

/// One layer's parameters, or the gradient with respect to them.
#[derive(Debug, Clone, PartialEq)]
pub struct UnrollLayer {
    /// `R × L`.
    pub w: DMatrix<f64>,
    /// `R × R`.
    pub b: DMatrix<f64>,
    pub theta: f64,
    pub eta: f64,
}

impl UnrollLayer {
    fn zeros(r: usize, l: usize) -> Self {
        Self {
            w: DMatrix::zeros(r, l),
            b: DMatrix::zeros(r, r),
            theta: 0.0,
            eta: 0.0,
        }
    }

    fn add_assign(&mut self, other: &UnrollLayer) {
        self.w += &other.w;
        self.b += &other.b;
        self.theta += other.theta;
        self.eta += other.eta;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnrollParams {
    layers: Vec<UnrollLayer>,
}

impl UnrollParams {
    /// Checks `K ≥ 1`, consistent shapes, finite entries and `θ ≥ 0`.
    pub fn new(layers: Vec<UnrollLayer>) -> Result<Self> {
        let first = layers
            .first()
            .ok_or_else(|| UnmixError::InvalidArgument("unrolled network needs K >= 1".into()))?;
        let (r, l) = first.w.shape();
        for (k, layer) in layers.iter().enumerate() {
            if layer.w.shape() != (r, l) || layer.b.shape() != (r, r) {
                return Err(UnmixError::mismatch(
                    "unroll layer shapes",
                    format!("W {r}x{l}, B {r}x{r}"),
                    format!("layer {k}: W {:?}, B {:?}", layer.w.shape(), layer.b.shape()),
                ));
            }
            let finite = layer.w.iter().chain(layer.b.iter()).all(|v| v.is_finite())
                && layer.theta.is_finite()
                && layer.eta.is_finite();
            if !finite {
                return Err(UnmixError::NonFinite(format!("unroll layer {k}")));
            }
            if layer.theta < 0.0 {
                return Err(UnmixError::InvalidArgument(format!(
                    "layer {k} threshold must be >= 0, got {}",
                    layer.theta
                )));
            }
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[UnrollLayer] {
        &self.layers
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn endmember_count(&self) -> usize {
        self.layers[0].w.nrows()
    }

    pub fn band_count(&self) -> usize {
        self.layers[0].w.ncols()
    }

    /// `params ← params − lr·grad`, clamping thresholds at zero.
    fn descend(&mut self, grad: &[UnrollLayer], lr: f64) {
        for (p, g) in self.layers.iter_mut().zip(grad) {
            p.w -= &g.w * lr;
            p.b -= &g.b * lr;
            p.theta = (p.theta - lr * g.theta).max(0.0);
            p.eta -= lr * g.eta;
        }
    }
}

/// Every layer gets `W = (MᵀM + μI)⁻¹Mᵀ`, `B = ρ(MᵀM + μI)⁻¹`, `θ = λ/ρ`
/// and the given `η`.
pub fn init_params_from_model(
    m: &EndmemberMatrix,
    mu: f64,
    rho: f64,
    lambda: f64,
    eta: f64,
    depth: usize,
) -> Result<UnrollParams> {
    if !(mu >= 0.0 && rho > 0.0 && lambda >= 0.0 && eta.is_finite()) {
        return Err(UnmixError::InvalidArgument(format!(
            "need mu >= 0, rho > 0, lambda >= 0 and finite eta; got mu={mu}, rho={rho}, lambda={lambda}, eta={eta}"
        )));
    }
    let md = m.data();
    let r = md.ncols();
    let gram = md.tr_mul(md) + DMatrix::identity(r, r) * mu;
    let lu = gram.lu();
    let w = lu
        .solve(&md.transpose())
        .filter(|w| w.iter().all(|v| v.is_finite()))
        .ok_or_else(|| UnmixError::Singular("MᵀM + μI is singular".into()))?;
    let inv = lu
        .try_inverse()
        .ok_or_else(|| UnmixError::Singular("MᵀM + μI is singular".into()))?;
    let layer = UnrollLayer {
        w,
        b: inv * rho,
        theta: lambda / rho,
        eta,
    };
    UnrollParams::new(vec![layer; depth])
}

/// Per-layer iterates, index `k` holding the state after layer `k + 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct UnrollTrace {
    pub a: Vec<DVector<f64>>,
    pub z: Vec<DVector<f64>>,
    pub v: Vec<DVector<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnrollOutput {
    /// `z` after the last layer projected onto the simplex.
    pub estimate: Vec<f64>,
    /// `z` after the last layer, before projection.
    pub raw: Vec<f64>,
    pub trace: Option<UnrollTrace>,
}

fn run_layers(params: &UnrollParams, y: &DVector<f64>) -> UnrollTrace {
    let r = params.endmember_count();
    let k = params.depth();
    let mut trace = UnrollTrace {
        a: Vec::with_capacity(k),
        z: Vec::with_capacity(k),
        v: Vec::with_capacity(k),
    };
    let mut z = DVector::zeros(r);
    let mut v = DVector::zeros(r);
    for layer in &params.layers {
        let a = &layer.w * y + &layer.b * (&z + &v);
        let z_next = (&a - &v).map(|x| (x - layer.theta).max(0.0));
        v = &v - (&a - &z_next) * layer.eta;
        z = z_next;
        trace.a.push(a);
        trace.z.push(z.clone());
        trace.v.push(v.clone());
    }
    trace
}

pub fn unroll_forward(params: &UnrollParams, y: &[f64], return_trace: bool) -> Result<UnrollOutput> {
    if y.len() != params.band_count() {
        return Err(UnmixError::mismatch("unroll_forward", params.band_count(), y.len()));
    }
    let trace = run_layers(params, &DVector::from_column_slice(y));
    let raw = trace.z.last().expect("K >= 1").as_slice().to_vec();
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(UnmixError::NonFinite("unrolled network output".into()));
    }
    Ok(UnrollOutput {
        estimate: project_to_simplex(&raw)?,
        raw,
        trace: return_trace.then_some(trace),
    })
}

/// Forward pass over every column of `ys`.
pub fn unroll_batch(params: &UnrollParams, ys: &DMatrix<f64>) -> Result<Vec<UnrollOutput>> {
    (0..ys.ncols())
        .into_par_iter()
        .map(|i| unroll_forward(params, ys.column(i).as_slice(), false))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct UnrollGradient {
    /// Mean over the batch of `‖z_K − a*‖²`.
    pub loss: f64,
    pub layers: Vec<UnrollLayer>,
}

/// Loss and gradient for one sample, scaled by `weight`.
fn sample_gradient(
    params: &UnrollParams,
    y: &DVector<f64>,
    target: &DVector<f64>,
    weight: f64,
) -> (f64, Vec<UnrollLayer>) {
    let (r, l) = (params.endmember_count(), params.band_count());
    let trace = run_layers(params, y);
    let k = params.depth();
    let err = &trace.z[k - 1] - target;
    let loss = err.norm_squared() * weight;

    let zero = DVector::zeros(r);
    let mut gz = err * (2.0 * weight);
    let mut gv = DVector::zeros(r);
    let mut grads = vec![UnrollLayer::zeros(r, l); k];
    for idx in (0..k).rev() {
        let layer = &params.layers[idx];
        let (z_prev, v_prev) = if idx == 0 {
            (&zero, &zero)
        } else {
            (&trace.z[idx - 1], &trace.v[idx - 1])
        };
        let a = &trace.a[idx];
        let z = &trace.z[idx];
        let pre = a - v_prev;
        let gz_total = &gz + &gv * layer.eta;
        let gpre = DVector::from_fn(r, |i, _| {
            if pre[i] - layer.theta > 0.0 {
                gz_total[i]
            } else {
                0.0
            }
        });
        let ga = &gpre - &gv * layer.eta;
        let g = &mut grads[idx];
        g.eta = -gv.dot(&(a - z));
        g.theta = -gpre.sum();
        g.w = &ga * y.transpose();
        g.b = &ga * (z_prev + v_prev).transpose();
        let back = layer.b.tr_mul(&ga);
        gv = &gv - &gpre + &back;
        gz = back;
    }
    (loss, grads)
}

/// Exact gradient of the batch-mean of `‖z_K − a*‖²` (before projection)
/// through every layer; the ReLU derivative at the kink is 0. Per-sample
/// gradients are accumulated in ascending sample order.
pub fn unroll_backward(
    params: &UnrollParams,
    ys: &DMatrix<f64>,
    targets: &DMatrix<f64>,
) -> Result<UnrollGradient> {
    let (r, l) = (params.endmember_count(), params.band_count());
    let n = ys.ncols();
    if n == 0 {
        return Err(UnmixError::InvalidArgument("empty training batch".into()));
    }
    if ys.nrows() != l || targets.shape() != (r, n) {
        return Err(UnmixError::mismatch(
            "unroll_backward",
            format!("y {l}x{n}, targets {r}x{n}"),
            format!("y {:?}, targets {:?}", ys.shape(), targets.shape()),
        ));
    }
    let weight = 1.0 / n as f64;
    let parts: Vec<(f64, Vec<UnrollLayer>)> = (0..n)
        .into_par_iter()
        .map(|i| {
            sample_gradient(
                params,
                &ys.column(i).clone_owned(),
                &targets.column(i).clone_owned(),
                weight,
            )
        })
        .collect();
    let mut total = UnrollGradient {
        loss: 0.0,
        layers: vec![UnrollLayer::zeros(r, l); params.depth()],
    };
    for (loss, layers) in &parts {
        total.loss += loss;
        for (acc, g) in total.layers.iter_mut().zip(layers) {
            acc.add_assign(g);
        }
    }
    Ok(total)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub validation_fraction: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-2,
            epochs: 50,
            batch_size: 64,
            seed: 0,
            validation_fraction: 0.2,
        }
    }
}

impl TrainConfig {
    pub fn check(&self) -> Result<()> {
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(UnmixError::InvalidArgument(format!(
                "learning rate must be >= 0, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(UnmixError::InvalidArgument("batch size must be >= 1".into()));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(UnmixError::InvalidArgument(format!(
                "validation fraction must lie in (0, 1), got {}",
                self.validation_fraction
            )));
        }
        Ok(())
    }
}

/// Per-epoch losses; index 0 is the starting point, index `e` is after
/// epoch `e`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    /// Training objective over the whole training split.
    pub train_loss: Vec<f64>,
    /// Training objective over the validation split.
    pub validation_loss: Vec<f64>,
    /// Mean squared entry error of the projected estimates on the
    /// validation split.
    pub validation_mse: Vec<f64>,
    pub train_indices: Vec<usize>,
    pub validation_indices: Vec<usize>,
    pub wall_time: f64,
}

fn columns(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), idx.len(), |r, c| m[(r, idx[c])])
}

/// Mean of `‖z_K − a*‖²` and mean squared entry error after projection.
fn split_losses(params: &UnrollParams, ys: &DMatrix<f64>, targets: &DMatrix<f64>) -> Result<(f64, f64)> {
    let outs = unroll_batch(params, ys)?;
    let n = ys.ncols() as f64;
    let r = targets.nrows() as f64;
    let mut raw = 0.0;
    let mut projected = 0.0;
    for (i, out) in outs.iter().enumerate() {
        let t = targets.column(i);
        raw += out.raw.iter().zip(t.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        projected += out.estimate.iter().zip(t.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
    }
    Ok((raw / n, projected / (n * r)))
}

/// Plain mini-batch gradient descent. The labelled pixels (`ys` columns
/// with matching `targets` columns) are split once into training and
/// validation sets; each epoch visits the training set in a fresh order.
pub fn train_unroll(
    ys: &DMatrix<f64>,
    targets: &DMatrix<f64>,
    config: &TrainConfig,
    params0: &UnrollParams,
) -> Result<(UnrollParams, TrainReport)> {
    let started = Instant::now();
    config.check()?;
    let n = ys.ncols();
    if n < 2 {
        return Err(UnmixError::InvalidArgument("need at least two labelled pixels".into()));
    }
    if ys.nrows() != params0.band_count() || targets.shape() != (params0.endmember_count(), n) {
        return Err(UnmixError::mismatch(
            "train_unroll",
            format!("y {}x{n}, targets {}x{n}", params0.band_count(), params0.endmember_count()),
            format!("y {:?}, targets {:?}", ys.shape(), targets.shape()),
        ));
    }
    for (i, col) in targets.column_iter().enumerate() {
        let sum: f64 = col.sum();
        if col.iter().any(|&v| v < 0.0) || (sum - 1.0).abs() > crate::types::ASC_TOLERANCE {
            return Err(UnmixError::InvalidArgument(format!("label {i} is not on the simplex")));
        }
    }

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut module_rng(config.seed, TAG_SPLIT));
    let n_val = ((n as f64 * config.validation_fraction).round() as usize).clamp(1, n - 1);
    let (val_idx, train_idx) = order.split_at(n_val);
    let mut train_idx = train_idx.to_vec();
    let val_idx = val_idx.to_vec();
    let (val_y, val_t) = (columns(ys, &val_idx), columns(targets, &val_idx));
    let (tr_y, tr_t) = (columns(ys, &train_idx), columns(targets, &train_idx));

    let mut params = params0.clone();
    let mut report = TrainReport {
        train_indices: train_idx.clone(),
        validation_indices: val_idx,
        ..Default::default()
    };
    let record = |params: &UnrollParams, report: &mut TrainReport, epoch: usize| -> Result<()> {
        let (train, _) = split_losses(params, &tr_y, &tr_t)?;
        let (val, val_mse) = split_losses(params, &val_y, &val_t)?;
        if !(train.is_finite() && val.is_finite()) {
            return Err(UnmixError::NonFinite(format!("training loss at epoch {epoch}")));
        }
        report.train_loss.push(train);
        report.validation_loss.push(val);
        report.validation_mse.push(val_mse);
        Ok(())
    };
    record(&params, &mut report, 0)?;

    let mut rng = module_rng(config.seed, TAG_TRAIN);
    for epoch in 1..=config.epochs {
        train_idx.shuffle(&mut rng);
        for batch in train_idx.chunks(config.batch_size) {
            let grad = unroll_backward(&params, &columns(ys, batch), &columns(targets, batch))?;
            if !grad.loss.is_finite() {
                return Err(UnmixError::NonFinite(format!("training loss at epoch {epoch}")));
            }
            if config.learning_rate > 0.0 {
                params.descend(&grad.layers, config.learning_rate);
            }
        }
        record(&params, &mut report, epoch)?;
    }
    report.wall_time = started.elapsed().as_secs_f64();
    Ok((params, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mixmodels::{dirichlet_abundances, random_endmembers};

    fn endmembers(r: usize, l: usize, seed: u64) -> EndmemberMatrix {
        EndmemberMatrix::reflectance(random_endmembers(r, l, seed).unwrap()).unwrap()
    }

    /// The ADMM recursion written directly, with a fresh linear solve per
    /// iteration.
    fn reference(m: &DMatrix<f64>, y: &DVector<f64>, mu: f64, rho: f64, lambda: f64, eta: f64, k: usize) -> DVector<f64> {
        let r = m.ncols();
        let gram = m.transpose() * m + DMatrix::identity(r, r) * mu;
        let mty = m.transpose() * y;
        let mut z = DVector::zeros(r);
        let mut v = DVector::zeros(r);
        for _ in 0..k {
            let a = gram.clone().lu().solve(&(&mty + (&z + &v) * rho)).unwrap();
            let znew = (&a - &v).map(|x| (x - lambda / rho).max(0.0));
            v = &v - (&a - &znew) * eta;
            z = znew;
        }
        z
    }

    #[test]
    fn orthonormal_model_gives_transpose_and_identity() {
        let mut q = DMatrix::zeros(4, 2);
        q[(0, 0)] = 1.0;
        q[(2, 1)] = 1.0;
        let m = EndmemberMatrix::new_unchecked(q.clone(), Default::default());
        let p = init_params_from_model(&m, 0.0, 1.0, 0.0, 1.0, 3).unwrap();
        for layer in p.layers() {
            assert!((&layer.w - q.transpose()).amax() < 1e-15);
            assert!((&layer.b - DMatrix::identity(2, 2)).amax() < 1e-15);
            assert_eq!(layer.theta, 0.0);
        }
    }

    #[test]
    fn init_solves_the_regularized_system() {
        let m = endmembers(4, 20, 3);
        let p = init_params_from_model(&m, 0.1, 2.0, 0.4, 0.5, 2).unwrap();
        let md = m.data();
        let gram = md.tr_mul(md) + DMatrix::identity(4, 4) * 0.1;
        let w = &p.layers()[0].w;
        assert!((&gram * w - md.transpose()).amax() < 1e-10);
        assert!((&gram * &p.layers()[0].b - DMatrix::identity(4, 4) * 2.0).amax() < 1e-10);
        assert_eq!(p.layers()[1].theta, 0.2);
    }

    #[test]
    fn single_layer_and_dead_zone() {
        let m = endmembers(3, 10, 1);
        let y = m.data() * dirichlet_abundances(3, 1, 1).data().column(0);
        let p = init_params_from_model(&m, 0.1, 1.0, 0.2, 1.0, 1).unwrap();
        let out = unroll_forward(&p, y.as_slice(), true).unwrap();
        let wy = &p.layers()[0].w * &y;
        let tr = out.trace.unwrap();
        assert!((&tr.a[0] - &wy).amax() < 1e-15);
        for i in 0..3 {
            assert_eq!(out.raw[i], (wy[i] - 0.2).max(0.0));
        }
        let dead = init_params_from_model(&m, 0.1, 1.0, 1e3, 1.0, 1).unwrap();
        let out = unroll_forward(&dead, y.as_slice(), false).unwrap();
        assert!(out.raw.iter().all(|&v| v == 0.0));
        assert!(out.trace.is_none());
    }

    #[test]
    fn analytic_init_reproduces_recursion() {
        let m = endmembers(3, 20, 7);
        let y = m.data() * dirichlet_abundances(3, 1, 7).data().column(0);
        let y = y.map(|v| v + 0.01 * (v * 50.0).sin());
        for k in [1, 10, 50, 100] {
            let p = init_params_from_model(&m, 0.05, 0.5, 0.01, 0.8, k).unwrap();
            let out = unroll_forward(&p, y.as_slice(), false).unwrap();
            let expect = reference(m.data(), &y, 0.05, 0.5, 0.01, 0.8, k);
            for i in 0..3 {
                assert!((out.raw[i] - expect[i]).abs() <= 1e-10, "K={k}");
            }
        }
    }

    #[test]
    fn hand_derived_scalar_gradient() {
        let (w, theta, y, target) = (0.8, 0.1, 1.5, 0.3);
        let layer = UnrollLayer {
            w: DMatrix::from_element(1, 1, w),
            b: DMatrix::from_element(1, 1, 0.7),
            theta,
            eta: 0.9,
        };
        let p = UnrollParams::new(vec![layer]).unwrap();
        let g = unroll_backward(&p, &DMatrix::from_element(1, 1, y), &DMatrix::from_element(1, 1, target)).unwrap();
        // z = w y − θ > 0, L = (z − t)².
        let z = w * y - theta;
        assert!((g.loss - (z - target).powi(2)).abs() < 1e-12);
        assert!((g.layers[0].w[(0, 0)] - 2.0 * (z - target) * y).abs() < 1e-12);
        assert!((g.layers[0].theta + 2.0 * (z - target)).abs() < 1e-12);
        assert_eq!(g.layers[0].b[(0, 0)], 0.0);
        assert_eq!(g.layers[0].eta, 0.0);
    }

    #[test]
    fn zero_loss_gives_zero_gradient() {
        let m = endmembers(3, 10, 2);
        let p = init_params_from_model(&m, 0.1, 1.0, 0.0, 1.0, 4).unwrap();
        let ys = m.data() * dirichlet_abundances(3, 5, 2).data();
        let targets = DMatrix::from_fn(3, 5, |r, c| {
            unroll_forward(&p, ys.column(c).as_slice(), false).unwrap().raw[r]
        });
        let g = unroll_backward(&p, &ys, &targets).unwrap();
        assert_eq!(g.loss, 0.0);
        for layer in &g.layers {
            assert!(layer.w.iter().chain(layer.b.iter()).all(|&v| v == 0.0));
            assert_eq!((layer.theta, layer.eta), (0.0, 0.0));
        }
    }

    #[test]
    fn zero_learning_rate_keeps_params() {
        let m = endmembers(3, 10, 4);
        let p = init_params_from_model(&m, 0.1, 1.0, 0.01, 1.0, 3).unwrap();
        let a = dirichlet_abundances(3, 40, 4);
        let ys = m.data() * a.data();
        let cfg = TrainConfig { learning_rate: 0.0, epochs: 3, batch_size: 8, ..Default::default() };
        let (trained, report) = train_unroll(&ys, a.data(), &cfg, &p).unwrap();
        assert_eq!(trained, p);
        assert_eq!(report.train_loss.len(), 4);
        assert_eq!(report.validation_indices.len(), 8);
    }

    #[test]
    fn rejects_invalid_inputs() {
        assert!(UnrollParams::new(Vec::new()).is_err());
        let bad = UnrollLayer { theta: -1.0, ..UnrollLayer::zeros(2, 3) };
        assert!(UnrollParams::new(vec![bad]).is_err());
        let m = endmembers(2, 5, 0);
        let p = init_params_from_model(&m, 0.1, 1.0, 0.0, 1.0, 2).unwrap();
        assert!(unroll_forward(&p, &[0.1; 4], false).is_err());
        assert!(init_params_from_model(&m, 0.1, 0.0, 0.0, 1.0, 2).is_err());
        let ys = DMatrix::from_element(5, 4, 0.3);
        let off_simplex = DMatrix::from_element(2, 4, 0.7);
        assert!(train_unroll(&ys, &off_simplex, &TrainConfig::default(), &p).is_err());
    }
}
