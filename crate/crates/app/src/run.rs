//! Experiment orchestration: one row per `(H, m)` plus Q1 baseline rows for
//! the flat interface, written as CSV tables.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use rayon::prelude::*;

use signms_core::assembly::{assemble_load, solve_dirichlet};
use signms_core::auxspace::build_auxiliary_space;
use signms_core::coarse::{
    assemble_coarse_system, f_sinv_norm, interpolate, q1_coarse_baseline, resolution_ratio, solve_ms, Norms,
    SolveReport,
};
use signms_core::coeffs::{
    contrast_ratio, gaussian_source, nim_slab, random_inclusions, CoefficientField, FlatInterface, InclusionParams,
    SourceField,
};
use signms_core::grid::write_grid;
use signms_core::mesh::TwoScaleMesh;
use signms_core::msbasis::{build_multiscale_basis, BasisContext};

use crate::config::{Experiment, ExperimentConfig};

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error(transparent)]
    Core(#[from] signms_core::Error),
    #[error("cannot write {path}: {source}")]
    Write {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    Multiscale,
    Q1,
}

impl Method {
    fn name(self) -> &'static str {
        match self {
            Method::Multiscale => "cem",
            Method::Q1 => "q1",
        }
    }
}

#[derive(Clone, Debug)]
pub struct RowOutcome {
    pub method: Method,
    pub n_coarse: usize,
    pub layers: Option<usize>,
    pub result: Result<SolveReport, String>,
}

/// Fine problem shared by every row.
pub struct FineProblem {
    pub field: CoefficientField,
    pub source: SourceField,
    pub flat: Option<FlatInterface>,
    /// Fine Q1 reference solution.
    pub u_ref: Vec<f64>,
    /// Nodal interpolant of the exact solution, when one exists.
    pub u_exact: Option<Vec<f64>>,
    pub seconds: f64,
}

/// Reference solves keyed by everything that defines the fine problem.
#[derive(Default)]
pub struct ReferenceCache {
    entries: Mutex<HashMap<String, Arc<FineProblem>>>,
}

impl ReferenceCache {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn problem_key(cfg: &ExperimentConfig) -> String {
    format!(
        "{}|{}|{:?}|{}|{:?}|{:?}|{:?}|{}|{}|{}|{:?}|{:?}|{:?}",
        cfg.experiment,
        cfg.n_fine,
        cfg.k,
        cfg.seed,
        cfg.sigma_plus,
        cfg.sigma_minus,
        cfg.gamma,
        cfg.inclusions,
        cfg.inclusion_min_side,
        cfg.inclusion_max_side,
        cfg.sigma_path,
        cfg.c_path,
        cfg.source_path
    )
}

/// Coefficients and source of the configured experiment on the fine grid.
pub fn build_problem(cfg: &ExperimentConfig) -> signms_core::Result<(CoefficientField, SourceField, Option<FlatInterface>)> {
    let mesh = TwoScaleMesh::new(cfg.n_fine, 1)?;
    Ok(match cfg.experiment {
        Experiment::FlatInterface => {
            let p = FlatInterface {
                sigma_plus: cfg.sigma_plus,
                sigma_minus: cfg.sigma_minus,
                gamma: cfg.gamma,
                k: cfg.k,
            };
            (p.field(&mesh)?, SourceField::from_fn(&mesh, |x, y| p.f(x, y))?, Some(p))
        }
        Experiment::RandomInclusions => {
            let params = InclusionParams {
                seed: cfg.seed,
                sigma_plus: cfg.sigma_plus,
                sigma_minus: cfg.sigma_minus,
                count: cfg.inclusions,
                min_side: cfg.inclusion_min_side,
                max_side: cfg.inclusion_max_side,
            };
            (
                random_inclusions(&mesh, &params)?,
                gaussian_source(&mesh, (0.5, 0.5), 0.05, true)?,
                None,
            )
        }
        Experiment::NimSlab => (nim_slab(&mesh), gaussian_source(&mesh, (0.0, 0.5), 0.05, false)?, None),
        Experiment::Custom => {
            let sigma = cfg.sigma_path.as_deref().expect("validated");
            let field = CoefficientField::load(sigma, cfg.c_path.as_deref())?;
            let source = SourceField::load(cfg.source_path.as_deref().expect("validated"))?;
            field.check_mesh(&mesh)?;
            if source.n_fine() != cfg.n_fine {
                return Err(signms_core::Error::Config(format!(
                    "source grid has n_fine={} but config n_fine={}",
                    source.n_fine(),
                    cfg.n_fine
                )));
            }
            (field, source, None)
        }
    })
}

fn fine_problem(cfg: &ExperimentConfig, cache: &ReferenceCache) -> signms_core::Result<Arc<FineProblem>> {
    let key = problem_key(cfg);
    if let Some(p) = cache.entries.lock().unwrap().get(&key) {
        return Ok(p.clone());
    }
    let start = Instant::now();
    let (field, source, flat) = build_problem(cfg)?;
    let mesh = TwoScaleMesh::new(cfg.n_fine, 1)?;
    let op = signms_core::assembly::helmholtz_operator(&mesh, &field, cfg.k)?;
    let load = assemble_load(&mesh, &source)?;
    let u_ref = solve_dirichlet(&mesh, &op, &load)?.u;
    let u_exact = flat.map(|p| interpolate(&mesh, |x, y| p.u(x, y)));
    let problem = Arc::new(FineProblem {
        field,
        source,
        flat,
        u_ref,
        u_exact,
        seconds: start.elapsed().as_secs_f64(),
    });
    cache.entries.lock().unwrap().insert(key, problem.clone());
    Ok(problem)
}

#[derive(Clone, Copy, Debug, Default)]
pub struct RunOptions {
    /// Run the `m` rows of one `H` concurrently.
    pub parallel: bool,
}

pub struct ExperimentRun {
    pub config: ExperimentConfig,
    pub rows: Vec<RowOutcome>,
}

impl ExperimentRun {
    pub fn failures(&self) -> Vec<&RowOutcome> {
        self.rows.iter().filter(|r| r.result.is_err()).collect()
    }

    pub fn report(&self, method: Method, n_coarse: usize, layers: Option<usize>) -> Option<&SolveReport> {
        self.rows
            .iter()
            .find(|r| r.method == method && r.n_coarse == n_coarse && r.layers == layers)
            .and_then(|r| r.result.as_ref().ok())
    }
}

fn failed_rows(cfg: &ExperimentConfig, msg: &str) -> Vec<RowOutcome> {
    let mut rows = Vec::new();
    for &nc in &cfg.n_coarse {
        if cfg.experiment == Experiment::FlatInterface {
            rows.push(RowOutcome {
                method: Method::Q1,
                n_coarse: nc,
                layers: None,
                result: Err(msg.to_string()),
            });
        }
        for &m in &cfg.m {
            rows.push(RowOutcome {
                method: Method::Multiscale,
                n_coarse: nc,
                layers: Some(m),
                result: Err(msg.to_string()),
            });
        }
    }
    rows
}

/// Run every row of the configured lattice; stage failures are recorded on
/// the affected rows and the remaining rows still run.
pub fn run_experiment(cfg: &ExperimentConfig, opts: RunOptions, cache: &ReferenceCache) -> ExperimentRun {
    let problem = match fine_problem(cfg, cache) {
        Ok(p) => p,
        Err(e) => {
            return ExperimentRun {
                config: cfg.clone(),
                rows: failed_rows(cfg, &format!("fine problem: {e}")),
            }
        }
    };
    let mut rows = Vec::new();
    for &nc in &cfg.n_coarse {
        if let Some(flat) = problem.flat {
            let start = Instant::now();
            let result = q1_coarse_baseline(&flat, nc)
                .map(|(ea, el)| SolveReport {
                    method: "q1".into(),
                    n_fine: nc,
                    n_coarse: nc,
                    k: cfg.k,
                    exact_errors: Some((ea, el)),
                    energy_rel: f64::NAN,
                    l2_rel: f64::NAN,
                    lambda_gap: f64::NAN,
                    upsilon: f64::NAN,
                    resolution_ratio: f64::NAN,
                    f_sinv_norm: f64::NAN,
                    timings: vec![("total", start.elapsed().as_secs_f64())],
                    ..Default::default()
                })
                .map_err(|e| e.to_string());
            rows.push(RowOutcome {
                method: Method::Q1,
                n_coarse: nc,
                layers: None,
                result,
            });
        }
        rows.extend(run_coarse_level(cfg, opts, &problem, nc));
    }
    ExperimentRun {
        config: cfg.clone(),
        rows,
    }
}

fn run_coarse_level(cfg: &ExperimentConfig, opts: RunOptions, problem: &FineProblem, nc: usize) -> Vec<RowOutcome> {
    let fail_all = |msg: String| -> Vec<RowOutcome> {
        cfg.m
            .iter()
            .map(|&m| RowOutcome {
                method: Method::Multiscale,
                n_coarse: nc,
                layers: Some(m),
                result: Err(msg.clone()),
            })
            .collect()
    };
    let mesh = match TwoScaleMesh::new(cfg.n_fine, nc) {
        Ok(m) => m,
        Err(e) => return fail_all(e.to_string()),
    };
    let start = Instant::now();
    let aux = match build_auxiliary_space(&mesh, &problem.field, cfg.l_star, cfg.mu_msh) {
        Ok(a) => a,
        Err(e) => return fail_all(format!("auxiliary space: {e}")),
    };
    let seconds_aux = start.elapsed().as_secs_f64();
    let ctx = match BasisContext::new(&mesh, &problem.field, &aux, cfg.k, cfg.correction_weight) {
        Ok(c) => c,
        Err(e) => return fail_all(e.to_string()),
    };
    let shared = || -> signms_core::Result<(Norms, Vec<f64>, f64)> {
        Ok((
            Norms::new(&mesh, &problem.field)?,
            assemble_load(&mesh, &problem.source)?,
            f_sinv_norm(&problem.source, &problem.field, &mesh, cfg.mu_msh)?,
        ))
    };
    let (norms, load, f_sinv) = match shared() {
        Ok(s) => s,
        Err(e) => return fail_all(e.to_string()),
    };
    let upsilon = contrast_ratio(&problem.field).unwrap_or(f64::NAN);
    let rho = resolution_ratio(cfg.k, mesh.coarse_h(), aux.lambda_gap, cfg.mu_msh);

    let row = |m: usize| -> RowOutcome {
        let result = (|| -> signms_core::Result<SolveReport> {
            let t0 = Instant::now();
            let basis = build_multiscale_basis(&ctx, m)?;
            let t1 = Instant::now();
            let system = assemble_coarse_system(&mesh, &ctx.helmholtz, &basis, &load)?;
            let sol = solve_ms(&mesh, &system, &basis)?;
            let t2 = Instant::now();
            let (energy_rel, l2_rel) = norms.relative_errors(&problem.u_ref, &sol.u)?;
            let exact_errors = match &problem.u_exact {
                Some(u) => Some(norms.relative_errors(u, &sol.u)?),
                None => None,
            };
            if cfg.dump_fields {
                dump_row(cfg, nc, m, &problem.u_ref, &sol.u)?;
            }
            Ok(SolveReport {
                method: "cem".into(),
                n_fine: cfg.n_fine,
                n_coarse: nc,
                layers: Some(m),
                l_star: cfg.l_star,
                k: cfg.k,
                energy_rel,
                l2_rel,
                exact_errors,
                lambda_gap: aux.lambda_gap,
                upsilon,
                resolution_ratio: rho,
                resolution_flag: rho > cfg.rho_threshold,
                f_sinv_norm: f_sinv,
                coarse_residual: sol.coarse_residual,
                basis_residual: basis.max_residual,
                timings: vec![
                    ("aux", seconds_aux),
                    ("basis", (t1 - t0).as_secs_f64()),
                    ("coarse", (t2 - t1).as_secs_f64()),
                    ("reference", problem.seconds),
                    ("total", seconds_aux + t0.elapsed().as_secs_f64()),
                ],
            })
        })()
        .map_err(|e| e.to_string());
        RowOutcome {
            method: Method::Multiscale,
            n_coarse: nc,
            layers: Some(m),
            result,
        }
    };
    if opts.parallel {
        cfg.m.par_iter().map(|&m| row(m)).collect()
    } else {
        cfg.m.iter().map(|&m| row(m)).collect()
    }
}

fn dump_row(cfg: &ExperimentConfig, nc: usize, m: usize, u_ref: &[f64], u_ms: &[f64]) -> signms_core::Result<()> {
    let n = cfg.n_fine + 1;
    let dir = &cfg.output_dir;
    std::fs::create_dir_all(dir).map_err(|source| signms_core::Error::Io {
        path: dir.clone(),
        source,
    })?;
    let diff: Vec<f64> = u_ref.iter().zip(u_ms).map(|(a, b)| (a - b).abs()).collect();
    write_grid(dir.join("u_ref.grid"), n, n, u_ref)?;
    write_grid(dir.join(format!("u_ms_H{nc}_m{m}.grid")), n, n, u_ms)?;
    write_grid(dir.join(format!("abs_diff_H{nc}_m{m}.grid")), n, n, &diff)?;
    Ok(())
}

/// Scientific notation with four significant digits and a two-digit
/// exponent, e.g. `2.604e-03`.
pub fn fmt_sci(v: f64) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let s = format!("{v:.3e}");
    let (mant, exp) = s.split_once('e').unwrap();
    let exp: i32 = exp.parse().unwrap();
    format!("{mant}e{}{:02}", if exp < 0 { '-' } else { '+' }, exp.abs())
}

const ERROR_HEADER: &str =
    "method,H,m,l_star,k,energy_rel,l2_rel,energy_rel_exact,l2_rel_exact,lambda,upsilon,rho,rho_ok,f_sinv,status";

/// Error table; deterministic for a fixed configuration.
pub fn errors_csv(run: &ExperimentRun) -> String {
    let mut out = String::from(ERROR_HEADER);
    out.push('\n');
    for row in &run.rows {
        let h = format!("1/{}", row.n_coarse);
        let m = row.layers.map(|m| m.to_string()).unwrap_or_default();
        match &row.result {
            Ok(r) => {
                let num = |v: f64| if v.is_nan() { String::new() } else { fmt_sci(v) };
                let (ee, le) = r.exact_errors.map(|(a, b)| (fmt_sci(a), fmt_sci(b))).unwrap_or_default();
                let (l_star, rho_ok) = match row.method {
                    Method::Multiscale => (r.l_star.to_string(), (!r.resolution_flag).to_string()),
                    Method::Q1 => (String::new(), String::new()),
                };
                let _ = writeln!(
                    out,
                    "{},{h},{m},{l_star},{},{},{},{ee},{le},{},{},{},{rho_ok},{},ok",
                    row.method.name(),
                    fmt_sci(run.config.k),
                    num(r.energy_rel),
                    num(r.l2_rel),
                    num(r.lambda_gap),
                    num(r.upsilon),
                    num(r.resolution_ratio),
                    num(r.f_sinv_norm),
                );
            }
            Err(_) => {
                let _ = writeln!(
                    out,
                    "{},{h},{m},{},{},,,,,,,,,,failed",
                    row.method.name(),
                    run.config.l_star,
                    fmt_sci(run.config.k)
                );
            }
        }
    }
    out
}

/// Wall-clock seconds per stage; kept apart from the error table so that
/// table stays reproducible byte for byte.
pub fn timings_csv(run: &ExperimentRun) -> String {
    let stages = ["aux", "basis", "coarse", "reference", "total"];
    let mut out = String::from("method,H,m");
    for s in stages {
        let _ = write!(out, ",seconds_{s}");
    }
    out.push('\n');
    for row in &run.rows {
        let _ = write!(
            out,
            "{},1/{},{}",
            row.method.name(),
            row.n_coarse,
            row.layers.map(|m| m.to_string()).unwrap_or_default()
        );
        for s in stages {
            let v = row
                .result
                .as_ref()
                .ok()
                .and_then(|r| r.timings.iter().find(|(k, _)| *k == s))
                .map(|(_, v)| format!("{v:.3}"))
                .unwrap_or_default();
            let _ = write!(out, ",{v}");
        }
        out.push('\n');
    }
    out
}

fn write_file(path: &Path, text: &str) -> Result<(), RunError> {
    std::fs::write(path, text).map_err(|source| RunError::Write {
        path: path.to_path_buf(),
        source,
    })
}

/// Write `errors.csv`, `timings.csv`, `config.resolved` and, when rows
/// failed, `failures.txt` into the configured output directory.
pub fn write_outputs(run: &ExperimentRun) -> Result<(), RunError> {
    let dir = &run.config.output_dir;
    std::fs::create_dir_all(dir).map_err(|source| RunError::Write {
        path: dir.clone(),
        source,
    })?;
    write_file(&dir.join("errors.csv"), &errors_csv(run))?;
    write_file(&dir.join("timings.csv"), &timings_csv(run))?;
    write_file(&dir.join("config.resolved"), &run.config.echo())?;
    let failures = run.failures();
    let path = dir.join("failures.txt");
    if failures.is_empty() {
        if path.exists() {
            std::fs::remove_file(&path).map_err(|source| RunError::Write { path, source })?;
        }
    } else {
        let mut text = String::new();
        for f in failures {
            let _ = writeln!(
                text,
                "{} H=1/{} m={}: {}",
                f.method.name(),
                f.n_coarse,
                f.layers.map(|m| m.to_string()).unwrap_or_else(|| "-".into()),
                f.result.as_ref().err().unwrap()
            );
        }
        write_file(&path, &text)?;
    }
    Ok(())
}
