//! Run configuration (TOML). Every key has a default and unknown keys are
//! rejected.
//!
//! ```toml
//! [scene]
//! endmembers = 3
//! bands = 50
//! model = "bilinear"
//! snr_db = 30.0
//!
//! [solver.pnp]
//! rho = 1.0
//!
//! denoiser = "tv2d:lambda=0.05,iters=30"   # or [denoiser] spec = "..."
//! ```

use std::path::{Path, PathBuf};

use serde::Deserialize;
use unmix_core::kernel::{KernelSpec, DEFAULT_MU};
use unmix_core::mixmodels::{
    AbundanceLayout, BilinearCoupling, HapkeGeometry, MixtureModel, NoiseSpec, PostNonlinearKind,
    PostNonlinearity, SceneSpec,
};
use unmix_core::pnp::{DenoiserSpec, PnpOptions};
use unmix_core::solvers::{FclsOptions, NmfOptions};
use unmix_core::unroll::TrainConfig;
use unmix_core::EndmemberMatrix;

use crate::cube::Dtype;
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub scene: SceneConfig,
    pub solver: SolverConfig,
    pub denoiser: DenoiserConfig,
    pub unroll: UnrollConfig,
    pub output: OutputConfig,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    #[default]
    Lmm,
    Bilinear,
    Hapke,
    PostNonlinear,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AbundanceKind {
    #[default]
    Dirichlet,
    Piecewise,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    pub endmembers: usize,
    pub bands: usize,
    pub height: usize,
    pub width: usize,
    pub model: ModelKind,
    /// Off-diagonal interaction coefficient of the bilinear model.
    pub bilinear_strength: f64,
    pub hapke_mu0: f64,
    pub hapke_mu: f64,
    pub nonlinearity: String,
    pub nonlinearity_strength: f64,
    pub abundances: AbundanceKind,
    /// Tile size for piecewise-constant abundances.
    pub block: usize,
    /// Omit for a noiseless scene.
    pub snr_db: Option<f64>,
    pub seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            endmembers: 3,
            bands: 50,
            height: 10,
            width: 10,
            model: ModelKind::Lmm,
            bilinear_strength: 1.0,
            hapke_mu0: 1.0,
            hapke_mu: 1.0,
            nonlinearity: "quadratic".into(),
            nonlinearity_strength: 0.1,
            abundances: AbundanceKind::Dirichlet,
            block: 8,
            snr_db: None,
            seed: 0,
        }
    }
}

impl SceneConfig {
    pub fn scene_spec(&self) -> CliResult<SceneSpec> {
        let model = match self.model {
            ModelKind::Lmm => MixtureModel::Lmm,
            ModelKind::Bilinear => {
                MixtureModel::Bilinear(BilinearCoupling::uniform(self.endmembers, self.bilinear_strength)?)
            }
            ModelKind::Hapke => MixtureModel::Hapke(HapkeGeometry::new(self.hapke_mu0, self.hapke_mu)?),
            ModelKind::PostNonlinear => {
                let kind: PostNonlinearKind = self.nonlinearity.parse()?;
                MixtureModel::PostNonlinear(PostNonlinearity::new(kind, self.nonlinearity_strength)?)
            }
        };
        let layout = match self.abundances {
            AbundanceKind::Dirichlet => AbundanceLayout::Dirichlet,
            AbundanceKind::Piecewise => AbundanceLayout::Piecewise { block: self.block },
        };
        Ok(SceneSpec {
            endmembers: self.endmembers,
            bands: self.bands,
            height: self.height,
            width: self.width,
            model,
            layout,
            seed: self.seed,
        })
    }

    pub fn noise(&self) -> NoiseSpec {
        NoiseSpec {
            snr_db: self.snr_db.unwrap_or(f64::INFINITY),
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverConfig {
    pub fcls: FclsConfig,
    pub nmf: NmfConfig,
    pub khype: KhypeConfig,
    pub pnp: PnpConfig,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FclsConfig {
    pub rho: f64,
    pub max_iters: usize,
    pub primal_tol: f64,
    pub dual_tol: f64,
}

impl Default for FclsConfig {
    fn default() -> Self {
        let d = FclsOptions::default();
        Self {
            rho: d.rho,
            max_iters: d.max_iters,
            primal_tol: d.primal_tol,
            dual_tol: d.dual_tol,
        }
    }
}

impl FclsConfig {
    pub fn options(&self) -> FclsOptions {
        FclsOptions {
            rho: self.rho,
            max_iters: self.max_iters,
            primal_tol: self.primal_tol,
            dual_tol: self.dual_tol,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NmfConfig {
    /// Number of endmembers to extract.
    pub endmembers: usize,
    pub volume_weight: f64,
    pub sparsity_weight: f64,
    pub max_iters: usize,
    pub step_shrink: f64,
    pub rel_obj_tol: f64,
    pub init_seed: u64,
}

impl Default for NmfConfig {
    fn default() -> Self {
        let d = NmfOptions::default();
        Self {
            endmembers: 3,
            volume_weight: d.volume_weight,
            sparsity_weight: d.sparsity_weight,
            max_iters: d.max_iters,
            step_shrink: d.step_shrink,
            rel_obj_tol: d.rel_obj_tol,
            init_seed: d.init_seed,
        }
    }
}

impl NmfConfig {
    pub fn options(&self) -> NmfOptions {
        NmfOptions {
            volume_weight: self.volume_weight,
            sparsity_weight: self.sparsity_weight,
            max_iters: self.max_iters,
            step_shrink: self.step_shrink,
            rel_obj_tol: self.rel_obj_tol,
            init_seed: self.init_seed,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelKind {
    #[default]
    Gaussian,
    Polynomial,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KhypeConfig {
    pub mu: f64,
    pub kernel: KernelKind,
    /// Gaussian bandwidth; the median heuristic is used when omitted.
    pub bandwidth: Option<f64>,
    pub degree: u32,
    pub offset: f64,
}

impl Default for KhypeConfig {
    fn default() -> Self {
        Self {
            mu: DEFAULT_MU,
            kernel: KernelKind::Gaussian,
            bandwidth: None,
            degree: 2,
            offset: 1.0,
        }
    }
}

impl KhypeConfig {
    pub fn kernel_spec(&self, m: &EndmemberMatrix) -> CliResult<KernelSpec> {
        let spec = match (self.kernel, self.bandwidth) {
            (KernelKind::Gaussian, Some(bw)) => KernelSpec::gaussian(bw)?,
            (KernelKind::Gaussian, None) => KernelSpec::median_heuristic(m)?,
            (KernelKind::Polynomial, _) => {
                let spec = KernelSpec::Polynomial { degree: self.degree, offset: self.offset };
                spec.check()?;
                spec
            }
        };
        Ok(spec)
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PnpConfig {
    pub rho: f64,
    pub max_iters: usize,
    pub primal_tol: f64,
    pub dual_tol: f64,
}

impl Default for PnpConfig {
    fn default() -> Self {
        let d = PnpOptions::default();
        Self {
            rho: d.rho,
            max_iters: d.max_iters,
            primal_tol: d.primal_tol,
            dual_tol: d.dual_tol,
        }
    }
}

impl PnpConfig {
    pub fn options(&self) -> PnpOptions {
        PnpOptions {
            rho: self.rho,
            max_iters: self.max_iters,
            primal_tol: self.primal_tol,
            dual_tol: self.dual_tol,
            known_m: true,
        }
    }
}

/// Either `denoiser = "kind:key=val"` or a `[denoiser]` table with `spec`.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum DenoiserConfig {
    Inline(String),
    Table(DenoiserTable),
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DenoiserTable {
    pub spec: String,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        DenoiserConfig::Inline("identity".into())
    }
}

impl DenoiserConfig {
    pub fn spec(&self) -> CliResult<DenoiserSpec> {
        let text = match self {
            DenoiserConfig::Inline(s) => s,
            DenoiserConfig::Table(t) => &t.spec,
        };
        Ok(text.parse()?)
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UnrollConfig {
    pub layers: usize,
    pub mu: f64,
    pub rho: f64,
    pub lambda: f64,
    pub eta: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub validation_fraction: f64,
    /// Endmember CSV used for the analytic initialization in
    /// `train-unroll`.
    pub endmembers: Option<PathBuf>,
    /// Trained parameter file used by `unmix --method unroll`; without it
    /// the analytic initialization is used.
    pub params: Option<PathBuf>,
}

impl Default for UnrollConfig {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            layers: 10,
            mu: 0.1,
            rho: 0.1,
            lambda: 0.0,
            eta: 1.0,
            learning_rate: t.learning_rate,
            epochs: t.epochs,
            batch_size: t.batch_size,
            seed: t.seed,
            validation_fraction: t.validation_fraction,
            endmembers: None,
            params: None,
        }
    }
}

impl UnrollConfig {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed: self.seed,
            validation_fraction: self.validation_fraction,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputConfig {
    /// Also write each abundance plane as a PGM image.
    pub pgm: bool,
    /// Sample type of written cubes, `f64le` or `f32le`.
    pub dtype: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            pgm: false,
            dtype: Dtype::default().name().into(),
        }
    }
}

impl OutputConfig {
    pub fn dtype(&self) -> CliResult<Dtype> {
        Dtype::parse(&self.dtype)
            .ok_or_else(|| CliError::Validation(format!("output.dtype: unknown sample type {:?}", self.dtype)))
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        let config: RunConfig = toml::from_str(text).map_err(|e| CliError::Validation(format!("config: {e}")))?;
        config.denoiser.spec()?;
        config.output.dtype()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            CliError::Validation(msg) => CliError::Validation(format!("{}: {msg}", path.display())),
            other => other,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_config_uses_defaults() {
        let c = RunConfig::from_toml("").unwrap();
        assert_eq!(c, RunConfig::default());
        assert_eq!(c.solver.fcls.options(), FclsOptions::default());
        assert_eq!(c.solver.pnp.options(), PnpOptions::default());
        assert_eq!(c.denoiser.spec().unwrap(), DenoiserSpec::Identity);
    }

    #[test]
    fn full_config_parses() {
        let c = RunConfig::from_toml(
            r#"
            denoiser = "tv2d:lambda=0.05,iters=30"
            [scene]
            model = "bilinear"
            abundances = "piecewise"
            snr_db = 25.0
            seed = 4
            [solver.nmf]
            volume_weight = 0.3
            [solver.khype]
            kernel = "polynomial"
            degree = 3
            [unroll]
            layers = 5
            endmembers = "m.csv"
            [output]
            pgm = true
            dtype = "f32le"
            "#,
        )
        .unwrap();
        assert_eq!(c.denoiser.spec().unwrap(), DenoiserSpec::Tv2d { lambda: 0.05, iters: 30 });
        let spec = c.scene.scene_spec().unwrap();
        assert_eq!(spec.layout, AbundanceLayout::Piecewise { block: 8 });
        assert_eq!(c.scene.noise().snr_db, 25.0);
        assert_eq!(c.output.dtype().unwrap(), Dtype::F32Le);
        assert_eq!(c.unroll.endmembers.as_deref(), Some(Path::new("m.csv")));
    }

    #[test]
    fn denoiser_table_form() {
        let c = RunConfig::from_toml("[denoiser]\nspec = \"soft_threshold:lambda=0.1\"\n").unwrap();
        assert_eq!(c.denoiser.spec().unwrap(), DenoiserSpec::SoftThreshold { lambda: 0.1 });
    }

    #[test]
    fn unknown_keys_fail_fast() {
        for text in [
            "[scene]\nendmemebers = 3\n",
            "[solver.fcls]\nrho = 1.0\ntolerance = 1e-3\n",
            "[solver.lasso]\n",
            "[sceen]\n",
            "[denoiser]\nspec = \"identity\"\nextra = 1\n",
            "denoiser = \"median:size=3\"\n",
            "[output]\ndtype = \"f16\"\n",
        ] {
            let e = RunConfig::from_toml(text).unwrap_err();
            assert_eq!(e.exit_code(), 2, "{text}");
        }
    }
}
