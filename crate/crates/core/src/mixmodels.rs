//! Forward mixture mechanisms, noise injection and synthetic scenes.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};

use crate::error::{Result, UnmixError};
use crate::metrics::spectral_angle;
use crate::rng::{module_rng, TAG_ABUNDANCES, TAG_ENDMEMBERS, TAG_NOISE};
use crate::types::{AbundanceMatrix, EndmemberMatrix, HyperCube, SpectralDomain};

fn check_product(m: &DMatrix<f64>, a: &DMatrix<f64>, context: &'static str) -> Result<()> {
    if m.ncols() != a.nrows() {
        return Err(UnmixError::mismatch(
            context,
            format!("{} abundance rows", m.ncols()),
            a.nrows(),
        ));
    }
    Ok(())
}

/// `Y = M A`.
pub fn lmm_forward(m: &EndmemberMatrix, a: &AbundanceMatrix) -> Result<HyperCube> {
    check_product(m.data(), a.data(), "lmm_forward")?;
    HyperCube::from_columns(m.data() * a.data())
}

/// Pairwise interaction strengths of the generalized bilinear model.
#[derive(Debug, Clone, PartialEq)]
pub struct BilinearCoupling {
    beta: DMatrix<f64>,
}

impl BilinearCoupling {
    pub fn new(beta: DMatrix<f64>) -> Result<Self> {
        if !beta.is_square() {
            return Err(UnmixError::mismatch(
                "BilinearCoupling",
                "square matrix",
                format!("{:?}", beta.shape()),
            ));
        }
        let r = beta.nrows();
        for i in 0..r {
            if beta[(i, i)] != 0.0 {
                return Err(UnmixError::InvalidArgument(format!(
                    "beta[{i}][{i}] must be zero"
                )));
            }
            for j in 0..r {
                let b = beta[(i, j)];
                if !(0.0..=1.0).contains(&b) {
                    return Err(UnmixError::InvalidArgument(format!(
                        "beta[{i}][{j}] = {b} outside [0, 1]"
                    )));
                }
                if b != beta[(j, i)] {
                    return Err(UnmixError::InvalidArgument(format!(
                        "beta is not symmetric at ({i}, {j})"
                    )));
                }
            }
        }
        Ok(Self { beta })
    }

    /// Same strength for every pair.
    pub fn uniform(r: usize, strength: f64) -> Result<Self> {
        let mut beta = DMatrix::from_element(r, r, strength);
        beta.fill_diagonal(0.0);
        Self::new(beta)
    }

    pub fn beta(&self) -> &DMatrix<f64> {
        &self.beta
    }
}

/// `y = M a + Σ_{i<j} β_ij a_i a_j (m_i ⊙ m_j)` per pixel.
pub fn bilinear_forward(
    m: &EndmemberMatrix,
    a: &AbundanceMatrix,
    coupling: &BilinearCoupling,
) -> Result<HyperCube> {
    check_product(m.data(), a.data(), "bilinear_forward")?;
    let r = m.endmember_count();
    if coupling.beta.nrows() != r {
        return Err(UnmixError::mismatch(
            "bilinear_forward coupling",
            r,
            coupling.beta.nrows(),
        ));
    }
    let md = m.data();
    let mut y = md * a.data();
    for i in 0..r {
        for j in i + 1..r {
            let b = coupling.beta[(i, j)];
            if b == 0.0 {
                continue;
            }
            let cross = md.column(i).component_mul(&md.column(j));
            for (p, mut col) in y.column_iter_mut().enumerate() {
                let w = b * a.data()[(i, p)] * a.data()[(j, p)];
                col.axpy(w, &cross, 1.0);
            }
        }
    }
    HyperCube::from_columns(y)
}

/// Cosines of the incidence and emergence angles.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HapkeGeometry {
    mu0: f64,
    mu: f64,
}

impl HapkeGeometry {
    pub fn new(mu0: f64, mu: f64) -> Result<Self> {
        for (name, v) in [("mu0", mu0), ("mu", mu)] {
            if !(v > 0.0 && v <= 1.0) {
                return Err(UnmixError::InvalidArgument(format!(
                    "{name} = {v} must lie in (0, 1]"
                )));
            }
        }
        Ok(Self { mu0, mu })
    }

    /// Normal incidence and emergence.
    pub fn nadir() -> Self {
        Self { mu0: 1.0, mu: 1.0 }
    }

    pub fn mu0(&self) -> f64 {
        self.mu0
    }

    pub fn mu(&self) -> f64 {
        self.mu
    }

    fn reflectance(&self, w: f64) -> f64 {
        let s = (1.0 - w).sqrt();
        w / ((1.0 + 2.0 * self.mu * s) * (1.0 + 2.0 * self.mu0 * s))
    }

    fn albedo(&self, y: f64) -> f64 {
        // t = sqrt(1 - w) solves a t² + b t + c = 0 with c <= 0; the
        // cancellation-free form of the nonnegative root is -2c / (b + sqrt(D)).
        let a = 4.0 * y * self.mu * self.mu0 + 1.0;
        let b = 2.0 * y * (self.mu + self.mu0);
        let c = y - 1.0;
        let disc = b * b - 4.0 * a * c;
        let denom = b + disc.sqrt();
        let t = if denom > 0.0 { -2.0 * c / denom } else { 1.0 };
        1.0 - t.clamp(0.0, 1.0).powi(2)
    }
}

fn check_unit_interval(values: &[f64], what: &str) -> Result<()> {
    if let Some(i) = values.iter().position(|v| !(0.0..=1.0).contains(v)) {
        return Err(UnmixError::Domain(format!(
            "{what} at band {i} is {} (must lie in [0, 1])",
            values[i]
        )));
    }
    Ok(())
}

/// Bidirectional reflectance of isotropic scatterers from single-scattering
/// albedo, band by band.
pub fn hapke_ssa_to_reflectance(w: &[f64], geom: &HapkeGeometry) -> Result<Vec<f64>> {
    check_unit_interval(w, "albedo")?;
    Ok(w.iter().map(|&v| geom.reflectance(v)).collect())
}

/// Inverse of [`hapke_ssa_to_reflectance`].
pub fn hapke_reflectance_to_ssa(y: &[f64], geom: &HapkeGeometry) -> Result<Vec<f64>> {
    check_unit_interval(y, "reflectance")?;
    Ok(y.iter().map(|&v| geom.albedo(v)).collect())
}

/// Intimate mixture: linear in albedo, mapped back to reflectance.
pub fn hapke_mix(w_ssa: &EndmemberMatrix, a: &[f64], geom: &HapkeGeometry) -> Result<Vec<f64>> {
    if w_ssa.domain() != SpectralDomain::Ssa {
        return Err(UnmixError::InvalidArgument(
            "hapke_mix needs endmembers in the albedo domain".into(),
        ));
    }
    if a.len() != w_ssa.endmember_count() {
        return Err(UnmixError::mismatch(
            "hapke_mix",
            w_ssa.endmember_count(),
            a.len(),
        ));
    }
    let w = w_ssa.data() * DVector::from_column_slice(a);
    // Rounding can push a convex combination of ones just past 1.
    let w: Vec<f64> = w.iter().map(|&v| if v > 1.0 && v < 1.0 + 1e-12 { 1.0 } else { v }).collect();
    hapke_ssa_to_reflectance(&w, geom)
}

/// Cube version of [`hapke_mix`].
pub fn hapke_forward(
    w_ssa: &EndmemberMatrix,
    a: &AbundanceMatrix,
    geom: &HapkeGeometry,
) -> Result<HyperCube> {
    check_product(w_ssa.data(), a.data(), "hapke_forward")?;
    let mut y = DMatrix::zeros(w_ssa.band_count(), a.pixel_count());
    for (p, col) in a.data().column_iter().enumerate() {
        let refl = hapke_mix(w_ssa, col.as_slice(), geom)?;
        y.column_mut(p).copy_from_slice(&refl);
    }
    HyperCube::from_columns(y)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PostNonlinearKind {
    Identity,
    /// `g(x) = x + b x²`.
    Quadratic,
    /// `g(x) = tanh(b x) / b`, identity at `b = 0`.
    TanhSaturation,
}

impl std::str::FromStr for PostNonlinearKind {
    type Err = UnmixError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(Self::Identity),
            "quadratic" => Ok(Self::Quadratic),
            "tanh" | "tanh-saturation" | "tanh_saturation" => Ok(Self::TanhSaturation),
            other => Err(UnmixError::InvalidArgument(format!(
                "unknown post-nonlinearity '{other}'"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PostNonlinearity {
    kind: PostNonlinearKind,
    strength: f64,
}

impl PostNonlinearity {
    pub fn new(kind: PostNonlinearKind, strength: f64) -> Result<Self> {
        if !(strength >= 0.0 && strength.is_finite()) {
            return Err(UnmixError::InvalidArgument(format!(
                "post-nonlinearity strength {strength} must be finite and >= 0"
            )));
        }
        Ok(Self { kind, strength })
    }

    pub fn kind(&self) -> PostNonlinearKind {
        self.kind
    }

    pub fn strength(&self) -> f64 {
        self.strength
    }

    pub fn apply(&self, x: f64) -> f64 {
        let b = self.strength;
        match self.kind {
            PostNonlinearKind::Identity => x,
            PostNonlinearKind::Quadratic => x + b * x * x,
            PostNonlinearKind::TanhSaturation if b == 0.0 => x,
            PostNonlinearKind::TanhSaturation => (b * x).tanh() / b,
        }
    }
}

/// `y = g(M a)` elementwise.
pub fn post_nonlinear_forward(
    m: &EndmemberMatrix,
    a: &AbundanceMatrix,
    g: &PostNonlinearity,
) -> Result<HyperCube> {
    let linear = lmm_forward(m, a)?;
    if g.kind == PostNonlinearKind::Identity {
        return Ok(linear);
    }
    HyperCube::from_columns(linear.data().map(|x| g.apply(x)))
}

/// Additive white Gaussian noise at a prescribed SNR.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    /// `f64::INFINITY` disables noise.
    pub snr_db: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn noiseless() -> Self {
        Self {
            snr_db: f64::INFINITY,
            seed: 0,
        }
    }
}

/// Adds i.i.d. `N(0, σ²)` noise with `σ² = ‖Y‖²_F / (N L 10^(snr/10))`.
pub fn add_noise(cube: &HyperCube, spec: &NoiseSpec) -> Result<HyperCube> {
    if spec.snr_db.is_nan() || spec.snr_db == f64::NEG_INFINITY {
        return Err(UnmixError::InvalidArgument(format!(
            "SNR {} dB is not usable",
            spec.snr_db
        )));
    }
    if spec.snr_db == f64::INFINITY {
        return Ok(cube.clone());
    }
    let y = cube.data();
    let power = y.norm_squared() / y.len() as f64;
    let sigma = (power / 10f64.powf(spec.snr_db / 10.0)).sqrt();
    let mut rng = module_rng(spec.seed, TAG_NOISE);
    let noisy = y.map(|v| {
        let e: f64 = StandardNormal.sample(&mut rng);
        v + sigma * e
    });
    cube.with_data(noisy)
}

/// Forward model used to synthesize a scene.
#[derive(Debug, Clone, PartialEq)]
pub enum MixtureModel {
    Lmm,
    Bilinear(BilinearCoupling),
    /// Endmembers are generated as albedo spectra.
    Hapke(HapkeGeometry),
    PostNonlinear(PostNonlinearity),
}

impl MixtureModel {
    pub fn forward(&self, m: &EndmemberMatrix, a: &AbundanceMatrix) -> Result<HyperCube> {
        match self {
            MixtureModel::Lmm => lmm_forward(m, a),
            MixtureModel::Bilinear(c) => bilinear_forward(m, a, c),
            MixtureModel::Hapke(g) => hapke_forward(m, a, g),
            MixtureModel::PostNonlinear(g) => post_nonlinear_forward(m, a, g),
        }
    }

    fn domain(&self) -> SpectralDomain {
        match self {
            MixtureModel::Hapke(_) => SpectralDomain::Ssa,
            _ => SpectralDomain::Reflectance,
        }
    }
}

/// How ground-truth abundances are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AbundanceLayout {
    /// Independent flat-Dirichlet pixels.
    #[default]
    Dirichlet,
    /// Constant over `block × block` tiles.
    Piecewise { block: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub endmembers: usize,
    pub bands: usize,
    pub height: usize,
    pub width: usize,
    pub model: MixtureModel,
    pub layout: AbundanceLayout,
    pub seed: u64,
}

impl SceneSpec {
    /// A `1 × pixels` scene.
    pub fn strip(endmembers: usize, bands: usize, pixels: usize, model: MixtureModel, seed: u64) -> Self {
        Self {
            endmembers,
            bands,
            height: 1,
            width: pixels,
            model,
            layout: AbundanceLayout::Dirichlet,
            seed,
        }
    }

    pub fn pixels(&self) -> usize {
        self.height * self.width
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub endmembers: EndmemberMatrix,
    pub abundances: AbundanceMatrix,
    /// Noise-free observation.
    pub cube: HyperCube,
}

/// Minimum pairwise spectral angle between generated endmembers.
pub const MIN_ENDMEMBER_SEPARATION_DEG: f64 = 5.0;
const MAX_GENERATION_RETRIES: usize = 100;

/// Smoothed positive random spectra with pairwise angles of at least
/// [`MIN_ENDMEMBER_SEPARATION_DEG`]. Values lie in `[0.05, 0.95]`.
pub fn random_endmembers(r: usize, bands: usize, seed: u64) -> Result<DMatrix<f64>> {
    if r == 0 || bands == 0 {
        return Err(UnmixError::InvalidArgument(
            "need at least one endmember and one band".into(),
        ));
    }
    let mut rng = module_rng(seed, TAG_ENDMEMBERS);
    let window = (bands / 10).max(1);
    let min_angle = MIN_ENDMEMBER_SEPARATION_DEG.to_radians();
    let mut columns: Vec<Vec<f64>> = Vec::with_capacity(r);
    let mut rejections = 0;
    while columns.len() < r {
        let raw: Vec<f64> = (0..bands + window - 1).map(|_| rng.random::<f64>()).collect();
        let smooth: Vec<f64> = raw
            .windows(window)
            .map(|w| w.iter().sum::<f64>() / window as f64)
            .collect();
        let (lo, hi) = smooth
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
        let floor = rng.random_range(0.05..0.3);
        let ceil = rng.random_range(0.6..0.95);
        let span = hi - lo;
        let spectrum: Vec<f64> = smooth
            .iter()
            .map(|&v| {
                if span > 0.0 {
                    floor + (ceil - floor) * (v - lo) / span
                } else {
                    0.5 * (floor + ceil)
                }
            })
            .collect();
        let separated = columns
            .iter()
            .all(|c| spectral_angle(c, &spectrum).is_ok_and(|ang| ang >= min_angle));
        if separated {
            columns.push(spectrum);
        } else {
            rejections += 1;
            if rejections >= MAX_GENERATION_RETRIES {
                return Err(UnmixError::Generation(format!(
                    "could not separate {r} endmembers by {MIN_ENDMEMBER_SEPARATION_DEG} degrees \
                     over {bands} bands after {MAX_GENERATION_RETRIES} retries"
                )));
            }
        }
    }
    Ok(DMatrix::from_fn(bands, r, |l, j| columns[j][l]))
}

/// Abundances drawn uniformly on the simplex (Dirichlet with unit
/// concentration).
pub fn dirichlet_abundances(r: usize, pixels: usize, seed: u64) -> AbundanceMatrix {
    let mut rng = module_rng(seed, TAG_ABUNDANCES);
    AbundanceMatrix::new_unchecked(dirichlet_columns(r, pixels, &mut rng))
}

fn dirichlet_columns(r: usize, pixels: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(r, pixels);
    for mut col in a.column_iter_mut() {
        for v in col.iter_mut() {
            *v = Exp1.sample(rng);
        }
        let s = col.sum();
        col /= s;
    }
    a
}

/// Piecewise-constant abundance maps: the `height × width` grid is tiled by
/// `block × block` squares, each holding one Dirichlet draw.
pub fn piecewise_abundances(
    r: usize,
    height: usize,
    width: usize,
    block: usize,
    seed: u64,
) -> Result<AbundanceMatrix> {
    if block == 0 {
        return Err(UnmixError::InvalidArgument("block size must be positive".into()));
    }
    let mut rng = module_rng(seed, TAG_ABUNDANCES);
    let by = height.div_ceil(block);
    let bx = width.div_ceil(block);
    let tiles = dirichlet_columns(r, by * bx, &mut rng);
    let mut a = DMatrix::zeros(r, height * width);
    for row in 0..height {
        for col in 0..width {
            let tile = (row / block) * bx + col / block;
            a.column_mut(row * width + col).copy_from(&tiles.column(tile));
        }
    }
    Ok(AbundanceMatrix::new_unchecked(a))
}

/// Draws endmembers and abundances and pushes them through the model.
pub fn gen_scene(spec: &SceneSpec) -> Result<Scene> {
    let n = spec.pixels();
    let r = spec.endmembers;
    if r == 0 || r > spec.bands.min(n) {
        return Err(UnmixError::InvalidArgument(format!(
            "need 1 <= R <= min(L, N); got R={r}, L={}, N={n}",
            spec.bands
        )));
    }
    let m = EndmemberMatrix::new(random_endmembers(r, spec.bands, spec.seed)?, spec.model.domain())?;
    let a = match spec.layout {
        AbundanceLayout::Dirichlet => dirichlet_abundances(r, n, spec.seed),
        AbundanceLayout::Piecewise { block } => {
            piecewise_abundances(r, spec.height, spec.width, block, spec.seed)?
        }
    };
    let cube = spec.model.forward(&m, &a)?;
    let cube = HyperCube::new(cube.into_data(), spec.height, spec.width)?;
    Ok(Scene {
        endmembers: m,
        abundances: a,
        cube,
    })
}
