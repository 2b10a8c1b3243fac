//! Subcommand implementations. Each returns `Ok(())` on success; results
//! of a non-converged solve are written before `NotConverged` is returned.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use unmix_core::kernel::khype_batch;
use unmix_core::metrics::{evaluate, EvalResult};
use unmix_core::mixmodels::{add_noise, gen_scene};
use unmix_core::pnp::pnp_unmix;
use unmix_core::solvers::{fcls_batch, nmf_unmix};
use unmix_core::unroll::{init_params_from_model, train_unroll, unroll_batch, UnrollParams};
use unmix_core::{AbundanceMatrix, EndmemberMatrix, HyperCube};

use crate::config::{RunConfig, UnrollConfig};
use crate::csvio::{read_endmembers, write_endmembers, CsvOptions};
use crate::cube::{abundances_to_cube, read_cube, write_cube};
use crate::error::{CliError, CliResult};
use crate::params::{read_params, write_params};
use crate::pgm::write_pgm;

pub const ENDMEMBERS_FILE: &str = "endmembers.csv";
pub const ABUNDANCES_FILE: &str = "abundances.umxc";
pub const RUN_FILE: &str = "run.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    Fcls,
    Nmf,
    Khype,
    Pnp,
    Unroll,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Fcls => "fcls",
            Method::Nmf => "nmf",
            Method::Khype => "khype",
            Method::Pnp => "pnp",
            Method::Unroll => "unroll",
        }
    }
}

/// Metadata written next to the estimates of every `unmix` run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunRecord {
    pub method: String,
    /// Cube the estimates were computed from, as given on the command line.
    pub cube: PathBuf,
    pub converged: bool,
    pub iterations: usize,
    pub final_objective: Option<f64>,
    /// K-Hype only: largest KKT stationarity residual over the pixels.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_kkt_residual: Option<f64>,
}

fn load_config(path: Option<&Path>) -> CliResult<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn create_dir(dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

fn load_endmembers(path: &Path, csv: CsvOptions) -> CliResult<EndmemberMatrix> {
    let (m, violation) = read_endmembers(path, csv)?;
    if let Some(v) = violation {
        eprintln!("warning: {}: {v}", path.display());
    }
    Ok(m)
}

fn read_abundances(path: &Path) -> CliResult<(AbundanceMatrix, usize, usize)> {
    let cube = read_cube(path)?;
    let (h, w) = (cube.height(), cube.width());
    let a = AbundanceMatrix::new(cube.into_data())
        .map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    Ok((a, h, w))
}

pub fn simulate(config: &Path, out: &Path, truth: &Path) -> CliResult<()> {
    let config = RunConfig::load(config)?;
    let dtype = config.output.dtype()?;
    let scene = gen_scene(&config.scene.scene_spec()?)?;
    let cube = add_noise(&scene.cube, &config.scene.noise())?;
    write_cube(&cube, out, dtype)?;
    create_dir(truth)?;
    write_endmembers(scene.endmembers.data(), &truth.join(ENDMEMBERS_FILE))?;
    let a = abundances_to_cube(&scene.abundances, cube.height(), cube.width())?;
    write_cube(&a, &truth.join(ABUNDANCES_FILE), dtype)?;
    Ok(())
}

pub struct UnmixArgs<'a> {
    pub cube: &'a Path,
    pub method: Method,
    pub endmembers: Option<&'a Path>,
    pub config: Option<&'a Path>,
    pub out: &'a Path,
    pub csv: CsvOptions,
}

fn unroll_params(cfg: &UnrollConfig, m: &EndmemberMatrix) -> CliResult<UnrollParams> {
    let params = match &cfg.params {
        Some(path) => read_params(path)?,
        None => init_params_from_model(m, cfg.mu, cfg.rho, cfg.lambda, cfg.eta, cfg.layers)?,
    };
    if params.band_count() != m.band_count() || params.endmember_count() != m.endmember_count() {
        return Err(CliError::Validation(format!(
            "unrolled parameters are {}×{} (R×L) but the endmembers are {}×{}",
            params.endmember_count(),
            params.band_count(),
            m.endmember_count(),
            m.band_count()
        )));
    }
    Ok(params)
}

fn unroll_cube(params: &UnrollParams, cube: &HyperCube) -> CliResult<AbundanceMatrix> {
    let outs = unroll_batch(params, cube.data())?;
    let r = params.endmember_count();
    let a = DMatrix::from_fn(r, outs.len(), |k, i| outs[i].estimate[k]);
    Ok(AbundanceMatrix::new_unchecked(a))
}

pub fn unmix(args: &UnmixArgs) -> CliResult<()> {
    let endmembers = match (args.method, args.endmembers) {
        (Method::Nmf, Some(_)) => {
            return Err(CliError::Usage(
                "--endmembers is not accepted with --method nmf (endmembers are estimated)".into(),
            ))
        }
        (Method::Nmf, None) => None,
        (m, None) => {
            return Err(CliError::Usage(format!(
                "--endmembers <csv> is required with --method {}",
                m.name()
            )))
        }
        (_, Some(p)) => Some(load_endmembers(p, args.csv)?),
    };
    let config = load_config(args.config)?;
    let dtype = config.output.dtype()?;
    let cube = read_cube(args.cube)?;

    let mut kkt = None;
    let (m, a, report) = match (args.method, endmembers) {
        (Method::Nmf, _) => {
            let nmf = &config.solver.nmf;
            let out = nmf_unmix(&cube, nmf.endmembers, &nmf.options(), None)?;
            (out.endmembers, out.abundances, out.report)
        }
        (method, Some(m)) => match method {
            Method::Fcls => {
                let (a, report) = fcls_batch(&m, &cube, &config.solver.fcls.options())?;
                (m, a, report)
            }
            Method::Khype => {
                let spec = config.solver.khype.kernel_spec(&m)?;
                let out = khype_batch(&m, &cube, &spec, config.solver.khype.mu)?;
                kkt = Some(out.max_kkt_residual);
                (m, out.abundances, out.report)
            }
            Method::Pnp => {
                let denoiser = config.denoiser.spec()?;
                let (a, report) = pnp_unmix(&cube, &m, &denoiser, &config.solver.pnp.options())?;
                (m, a, report.solver)
            }
            Method::Unroll => {
                let params = unroll_params(&config.unroll, &m)?;
                let a = unroll_cube(&params, &cube)?;
                let report = unmix_core::SolverReport {
                    iterations: params.depth(),
                    converged: true,
                    ..Default::default()
                };
                (m, a, report)
            }
            Method::Nmf => unreachable!("handled above"),
        },
        (_, None) => unreachable!("endmembers checked above"),
    };

    create_dir(args.out)?;
    let (h, w) = (cube.height(), cube.width());
    write_cube(&abundances_to_cube(&a, h, w)?, &args.out.join(ABUNDANCES_FILE), dtype)?;
    write_endmembers(m.data(), &args.out.join(ENDMEMBERS_FILE))?;
    if config.output.pgm {
        for k in 0..a.endmember_count() {
            let plane: Vec<f64> = a.data().row(k).iter().copied().collect();
            write_pgm(&plane, h, w, &args.out.join(format!("abundance_{k}.pgm")))?;
        }
    }
    let record = RunRecord {
        method: args.method.name().into(),
        cube: args.cube.to_path_buf(),
        converged: report.converged,
        iterations: report.iterations,
        final_objective: report.final_objective(),
        max_kkt_residual: kkt,
    };
    let run_path = args.out.join(RUN_FILE);
    let text = serde_json::to_string_pretty(&record).expect("run record serializes");
    fs::write(&run_path, text + "\n").map_err(|e| CliError::io(&run_path, e))?;
    if !report.converged {
        return Err(CliError::NotConverged(format!(
            "{} stopped after {} iterations; results in {} are flagged converged=false",
            args.method.name(),
            report.iterations,
            args.out.display()
        )));
    }
    Ok(())
}

pub fn train(train_cube: &Path, train_abund: &Path, config: &Path, out: &Path) -> CliResult<()> {
    let config = RunConfig::load(config)?;
    let cfg = &config.unroll;
    let cube = read_cube(train_cube)?;
    let (targets, _, _) = read_abundances(train_abund)?;
    if targets.pixel_count() != cube.pixel_count() {
        return Err(CliError::Validation(format!(
            "training cube has {} pixels but the abundances have {}",
            cube.pixel_count(),
            targets.pixel_count()
        )));
    }
    let params0 = match (&cfg.params, &cfg.endmembers) {
        (Some(p), _) => read_params(p)?,
        (None, Some(p)) => {
            let m = load_endmembers(p, CsvOptions::default())?;
            init_params_from_model(&m, cfg.mu, cfg.rho, cfg.lambda, cfg.eta, cfg.layers)?
        }
        (None, None) => {
            return Err(CliError::Validation(
                "train-unroll needs unroll.endmembers (analytic init) or unroll.params in the config".into(),
            ))
        }
    };
    let (params, report) = train_unroll(cube.data(), targets.data(), &cfg.train_config(), &params0)?;
    write_params(&params, out)?;
    if let (Some(first), Some(last)) = (report.validation_mse.first(), report.validation_mse.last()) {
        println!("validation_mse_initial={first}");
        println!("validation_mse_final={last}");
    }
    Ok(())
}

/// Flat `key=value` lines, one per metric.
pub fn eval_text(result: &EvalResult) -> String {
    let mut out = String::new();
    out += &format!("abundance_rmse={:e}\n", result.abundance_rmse);
    out += &format!("reconstruction_mse={:e}\n", result.reconstruction_mse);
    out += &format!("mean_sad_deg={:e}\n", result.mean_sad_deg());
    for (k, sad) in result.endmember_sad_deg.iter().enumerate() {
        out += &format!("sad_deg_{k}={sad:e}\n");
    }
    let matching: Vec<String> = result.matching.iter().map(usize::to_string).collect();
    out += &format!("matching={}\n", matching.join(","));
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub abundance_rmse: f64,
    pub reconstruction_mse: f64,
    pub mean_sad_deg: f64,
    pub endmember_sad_deg: Vec<f64>,
    pub matching: Vec<usize>,
}

impl From<&EvalResult> for EvalReport {
    fn from(r: &EvalResult) -> Self {
        Self {
            abundance_rmse: r.abundance_rmse,
            reconstruction_mse: r.reconstruction_mse,
            mean_sad_deg: r.mean_sad_deg(),
            endmember_sad_deg: r.endmember_sad_deg.clone(),
            matching: r.matching.clone(),
        }
    }
}

/// The structured report sits next to the text one, with `.json` appended.
pub fn json_report_path(report: &Path) -> PathBuf {
    let mut name = report.as_os_str().to_owned();
    name.push(".json");
    PathBuf::from(name)
}

pub fn eval(est: &Path, truth: &Path, report: &Path) -> CliResult<()> {
    let run_path = est.join(RUN_FILE);
    let run_text = fs::read_to_string(&run_path).map_err(|e| CliError::io(&run_path, e))?;
    let run: RunRecord = serde_json::from_str(&run_text)
        .map_err(|e| CliError::Validation(format!("{}: {e}", run_path.display())))?;
    let cube = read_cube(&run.cube)?;
    let m_est = load_endmembers(&est.join(ENDMEMBERS_FILE), CsvOptions { allow_invalid: true, ..Default::default() })?;
    let m_true = load_endmembers(&truth.join(ENDMEMBERS_FILE), CsvOptions { allow_invalid: true, ..Default::default() })?;
    let (a_est, _, _) = read_abundances(&est.join(ABUNDANCES_FILE))?;
    let (a_true, _, _) = read_abundances(&truth.join(ABUNDANCES_FILE))?;
    let result = evaluate(&m_est, &a_est, &m_true, &a_true, &cube)?;
    fs::write(report, eval_text(&result)).map_err(|e| CliError::io(report, e))?;
    let json_path = json_report_path(report);
    let json = serde_json::to_string_pretty(&EvalReport::from(&result)).expect("report serializes");
    fs::write(&json_path, json + "\n").map_err(|e| CliError::io(&json_path, e))?;
    Ok(())
}
