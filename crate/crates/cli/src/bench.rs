//! Frozen benchmark scenes run end to end. Reports hold only metrics and
//! flags (never timings), so a suite run is reproducible byte for byte.

use std::fmt::Display;
use std::path::Path;

use unmix_core::kernel::{khype_batch, KernelSpec, DEFAULT_MU};
use unmix_core::metrics::{evaluate, mse_loss};
use unmix_core::mixmodels::{
    add_noise, gen_scene, AbundanceLayout, BilinearCoupling, MixtureModel, NoiseSpec, Scene, SceneSpec,
};
use unmix_core::pnp::{pnp_unmix, DenoiserSpec, PnpOptions};
use unmix_core::solvers::{fcls_batch, nmf_unmix, FclsOptions, NmfOptions};
use unmix_core::unroll::{init_params_from_model, train_unroll, unroll_batch, TrainConfig};
use unmix_core::{AbundanceMatrix, HyperCube};

use crate::cube::{cube_from_bytes, cube_to_bytes, Dtype};
use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    /// Small scenes touching every solver; runs in seconds.
    Smoke,
    /// The desk-scale acceptance scenes, five seeds starting at `--seed`.
    Acceptance,
}

impl Suite {
    pub fn parse(name: &str) -> CliResult<Self> {
        match name {
            "smoke" => Ok(Suite::Smoke),
            "acceptance" => Ok(Suite::Acceptance),
            other => Err(CliError::Usage(format!(
                "unknown bench suite {other:?}; expected smoke or acceptance"
            ))),
        }
    }
}

/// Ordered `key=value` lines.
#[derive(Debug, Default, Clone, PartialEq)]
pub struct Report {
    lines: Vec<(String, String)>,
}

impl Report {
    fn put(&mut self, key: impl Into<String>, value: impl Display) {
        self.lines.push((key.into(), value.to_string()));
    }

    /// Floats use the shortest exponent form that parses back exactly.
    fn num(&mut self, key: impl Into<String>, value: f64) {
        self.lines.push((key.into(), format!("{value:e}")));
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.lines.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn render(&self) -> String {
        self.lines.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }
}

fn rmse(a: &AbundanceMatrix, b: &AbundanceMatrix) -> f64 {
    ((a.data() - b.data()).norm_squared() / a.data().len() as f64).sqrt()
}

fn noisy(scene: &Scene, snr_db: f64, seed: u64) -> CliResult<HyperCube> {
    Ok(add_noise(&scene.cube, &NoiseSpec { snr_db, seed })?)
}

fn scene(r: usize, l: usize, h: usize, w: usize, model: MixtureModel, layout: AbundanceLayout, seed: u64) -> CliResult<Scene> {
    Ok(gen_scene(&SceneSpec {
        endmembers: r,
        bands: l,
        height: h,
        width: w,
        model,
        layout,
        seed,
    })?)
}

fn bilinear() -> CliResult<MixtureModel> {
    Ok(MixtureModel::Bilinear(BilinearCoupling::uniform(3, 1.0)?))
}

fn smoke(seed: u64) -> CliResult<Report> {
    let mut rep = Report::default();
    rep.put("suite", "smoke");
    rep.put("seed", seed);

    let lmm = scene(3, 20, 8, 8, MixtureModel::Lmm, AbundanceLayout::Dirichlet, seed)?;
    let m = &lmm.endmembers;
    let (a, report) = fcls_batch(m, &lmm.cube, &FclsOptions::default())?;
    rep.num("fcls.abundance_rmse", rmse(&a, &lmm.abundances));
    rep.put("fcls.converged", report.converged);

    let bytes = cube_to_bytes(&lmm.cube, Dtype::F64Le);
    let back = cube_from_bytes(&bytes)?;
    let exact = back.data().iter().zip(lmm.cube.data().iter()).all(|(x, y)| x.to_bits() == y.to_bits());
    rep.put("cube.round_trip_exact", exact);

    let cube = noisy(&lmm, 30.0, seed)?;
    let (a_tv, pnp) = pnp_unmix(&cube, m, &DenoiserSpec::Tv2d { lambda: 0.05, iters: 30 }, &PnpOptions::default())?;
    rep.num("pnp_tv2d.abundance_rmse", rmse(&a_tv, &lmm.abundances));
    rep.put("pnp_tv2d.iterations", pnp.solver.iterations);

    let bil = scene(3, 20, 1, 64, bilinear()?, AbundanceLayout::Dirichlet, seed)?;
    let kh = khype_batch(&bil.endmembers, &bil.cube, &KernelSpec::median_heuristic(&bil.endmembers)?, DEFAULT_MU)?;
    let (a_fc, _) = fcls_batch(&bil.endmembers, &bil.cube, &FclsOptions::default())?;
    rep.num("khype.reconstruction_mse", mse_loss(bil.cube.data(), &kh.reconstruction)?);
    rep.num("khype.fcls_reconstruction_mse", mse_loss(bil.cube.data(), &(bil.endmembers.data() * a_fc.data()))?);
    rep.num("khype.max_kkt_residual", kh.max_kkt_residual);

    let opts = NmfOptions { volume_weight: 0.3, max_iters: 200, init_seed: seed, ..Default::default() };
    let nmf = nmf_unmix(&cube, 3, &opts, None)?;
    let ev = evaluate(&nmf.endmembers, &nmf.abundances, m, &lmm.abundances, &cube)?;
    rep.num("nmf.mean_sad_deg", ev.mean_sad_deg());
    rep.num("nmf.abundance_rmse", ev.abundance_rmse);
    rep.put("nmf.iterations", nmf.report.iterations);

    let params = init_params_from_model(m, 0.1, 0.1, 0.0, 1.0, 10)?;
    let outs = unroll_batch(&params, cube.data())?;
    let est = nalgebra::DMatrix::from_fn(3, outs.len(), |k, i| outs[i].estimate[k]);
    rep.num("unroll.abundance_rmse", rmse(&AbundanceMatrix::new_unchecked(est), &lmm.abundances));
    let config = TrainConfig { epochs: 5, batch_size: 16, seed, learning_rate: 1e-3, validation_fraction: 0.25 };
    let (_, train) = train_unroll(cube.data(), lmm.abundances.data(), &config, &params)?;
    rep.num("unroll.validation_mse_initial", train.validation_mse[0]);
    rep.num("unroll.validation_mse_final", train.validation_mse[config.epochs]);
    Ok(rep)
}

fn acceptance(seed: u64) -> CliResult<Report> {
    let mut rep = Report::default();
    rep.put("suite", "acceptance");
    rep.put("seed", seed);
    let seeds = seed..seed + 5;

    let mut worst = 0.0f64;
    for s in seeds.clone() {
        let sc = scene(3, 50, 1, 1000, MixtureModel::Lmm, AbundanceLayout::Dirichlet, s)?;
        let (a, _) = fcls_batch(&sc.endmembers, &sc.cube, &FclsOptions::default())?;
        let e = rmse(&a, &sc.abundances);
        rep.num(format!("fcls.seed{s}.abundance_rmse"), e);
        worst = worst.max(e);
    }
    rep.put("fcls.pass", worst < 1e-6);

    let mut dominates = true;
    let mut kkt = 0.0f64;
    for s in seeds.clone() {
        let sc = scene(3, 50, 1, 500, bilinear()?, AbundanceLayout::Dirichlet, s)?;
        let m = &sc.endmembers;
        let kh = khype_batch(m, &sc.cube, &KernelSpec::median_heuristic(m)?, DEFAULT_MU)?;
        let (a, _) = fcls_batch(m, &sc.cube, &FclsOptions::default())?;
        let kh_mse = mse_loss(sc.cube.data(), &kh.reconstruction)?;
        let fc_mse = mse_loss(sc.cube.data(), &(m.data() * a.data()))?;
        rep.num(format!("khype.seed{s}.reconstruction_mse"), kh_mse);
        rep.num(format!("khype.seed{s}.fcls_reconstruction_mse"), fc_mse);
        dominates &= kh_mse < fc_mse;
        kkt = kkt.max(kh.max_kkt_residual);
    }
    rep.num("khype.max_kkt_residual", kkt);
    rep.put("khype.pass", dominates && kkt <= 1e-6);

    let tv = DenoiserSpec::Tv2d { lambda: 0.05, iters: 30 };
    let mut tv_wins = true;
    for s in seeds.clone() {
        let sc = scene(3, 50, 24, 24, MixtureModel::Lmm, AbundanceLayout::Piecewise { block: 8 }, s)?;
        let cube = noisy(&sc, 25.0, s)?;
        let (a_fc, _) = fcls_batch(&sc.endmembers, &cube, &FclsOptions::default())?;
        let (a_tv, _) = pnp_unmix(&cube, &sc.endmembers, &tv, &PnpOptions::default())?;
        let (e_fc, e_tv) = (rmse(&a_fc, &sc.abundances), rmse(&a_tv, &sc.abundances));
        rep.num(format!("pnp_tv2d.seed{s}.abundance_rmse"), e_tv);
        rep.num(format!("pnp_tv2d.seed{s}.fcls_abundance_rmse"), e_fc);
        tv_wins &= e_tv < e_fc;
    }
    rep.put("pnp_tv2d.pass", tv_wins);

    let mut worst_sad = 0.0f64;
    for s in seeds {
        let sc = scene(3, 50, 1, 500, MixtureModel::Lmm, AbundanceLayout::Dirichlet, s)?;
        let cube = noisy(&sc, 30.0, s)?;
        let opts = NmfOptions { volume_weight: 0.3, init_seed: s, ..Default::default() };
        let out = nmf_unmix(&cube, 3, &opts, None)?;
        let ev = evaluate(&out.endmembers, &out.abundances, &sc.endmembers, &sc.abundances, &cube)?;
        let sad = ev.endmember_sad_deg.iter().copied().fold(0.0, f64::max);
        rep.num(format!("nmf.seed{s}.max_sad_deg"), sad);
        worst_sad = worst_sad.max(sad);
    }
    rep.num("nmf.max_sad_deg", worst_sad);
    Ok(rep)
}

pub fn run_suite(suite: Suite, seed: u64) -> CliResult<Report> {
    match suite {
        Suite::Smoke => smoke(seed),
        Suite::Acceptance => acceptance(seed),
    }
}

pub fn bench(suite: &str, seed: u64, report: &Path) -> CliResult<()> {
    let rep = run_suite(Suite::parse(suite)?, seed)?;
    std::fs::write(report, rep.render()).map_err(|e| CliError::io(report, e))
}
