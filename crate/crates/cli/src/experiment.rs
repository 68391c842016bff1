//! Runs an [`ExperimentSpec`] and writes its CSV and JSON reports.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use augeig::driver::{oracle_fine_solve, solve_with_setup, GammaReport, RunReport, Setup, SolverConfig};
use serde_json::{json, Value};
use thiserror::Error;

use crate::config::{sweep_points, ConfigError, ExperimentSpec, ReferenceMode, Sweep};

pub const EXIT_OK: i32 = 0;
/// Output directory or file could not be written.
pub const EXIT_IO: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

pub const EIGENVALUES_CSV: &str = "eigenvalues.csv";
pub const CONVERGENCE_CSV: &str = "convergence.csv";
pub const ORTHOGONALITY_CSV: &str = "orthogonality.csv";
pub const TIMING_CSV: &str = "timing.csv";
pub const REPORT_JSON: &str = "report.json";

/// Column layouts, shared by the writers and `--help`.
pub const EIGENVALUES_COLUMNS: &[&str] = &["levels", "finest_corrections", "index", "eigenvalue", "reference", "abs_error"];
pub const CONVERGENCE_COLUMNS: &[&str] = &["levels", "finest_corrections", "pair", "level", "iteration", "eigenvalue", "residual"];
pub const ORTHOGONALITY_COLUMNS: &[&str] = &["levels", "finest_corrections", "orthogonality"];
pub const TIMING_COLUMNS: &[&str] = &["levels", "finest_corrections", "pair", "wall_seconds", "matvecs", "matvec_work"];

/// `--help` text describing the output files.
pub const SCHEMAS: &str = "\
Output files (in the output directory; floats use 17 significant digits):
  eigenvalues.csv    levels,finest_corrections,index,eigenvalue,reference,abs_error
                     one row per eigenpair, sorted by eigenvalue; reference and
                     abs_error are empty without a reference
  convergence.csv    levels,finest_corrections,pair,level,iteration,eigenvalue,residual
                     one row per recorded state; iteration 0 is the value on
                     entering a level; residual is ||A u - lambda M u||_2
  orthogonality.csv  levels,finest_corrections,orthogonality
                     max normalized |b(u_i,u_j)| over pairs with distinct eigenvalues
  timing.csv         levels,finest_corrections,pair,wall_seconds,matvecs,matvec_work
  report.json        config echo plus per run: DOF counts, workers, wall time,
                     orthogonality, work, theta (per level) and gamma when
                     diagnostics are on

`pair` is the seeding index of an eigenpair; `index` its rank by eigenvalue.

Exit codes: 0 success, 1 output not writable, 2 configuration error,
3 numerical failure. Partial output files are removed on failure.";

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Solver(augeig::Error),
    #[error("{failed} of {total} eigenpairs failed (levels = {levels}); first: {first}")]
    Failures {
        levels: usize,
        failed: usize,
        total: usize,
        first: augeig::Error,
    },
    #[error("cannot write {}: {source}", path.display())]
    Io { path: PathBuf, source: io::Error },
}

impl ExperimentError {
    pub fn exit_code(&self) -> i32 {
        use augeig::Error as E;
        match self {
            ExperimentError::Config(_) => EXIT_CONFIG,
            ExperimentError::Solver(
                E::InvalidConfig(_)
                | E::MemoryCap { .. }
                | E::DenseCap { .. }
                | E::TooManyEigenpairs { .. }
                | E::InvalidMesh(_)
                | E::InvalidCoefficients(_),
            ) => EXIT_CONFIG,
            ExperimentError::Solver(_) | ExperimentError::Failures { .. } => EXIT_NUMERICAL,
            ExperimentError::Io { .. } => EXIT_IO,
        }
    }
}

impl From<augeig::Error> for ExperimentError {
    fn from(e: augeig::Error) -> Self {
        ExperimentError::Solver(e)
    }
}

/// One solver run of a sweep.
#[derive(Debug, Clone)]
pub struct RunResult {
    pub levels: usize,
    pub finest_corrections: usize,
    pub report: RunReport<f64>,
    /// Reference eigenvalues aligned with `report.pairs`, when requested.
    pub reference: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub runs: Vec<RunResult>,
    pub files: Vec<PathBuf>,
}

/// 17 significant digits, enough to round-trip an `f64`.
pub fn fmt_f64(x: f64) -> String {
    if x.is_finite() {
        format!("{x:.16e}")
    } else {
        format!("{x}")
    }
}

fn run_one(spec: &ExperimentSpec, levels: usize, finest_corrections: usize) -> Result<RunResult, ExperimentError> {
    let config = SolverConfig {
        levels,
        finest_corrections,
        ..spec.solver.clone()
    };
    let setup = Setup::<f64>::build(&config)?;
    let report = solve_with_setup(&setup, &config)?;
    if let Some(first) = report.pairs.iter().find_map(|p| p.failure.clone()) {
        return Err(ExperimentError::Failures {
            levels,
            failed: report.failures(),
            total: report.pairs.len(),
            first,
        });
    }
    let m = report.pairs.len();
    let reference = match spec.reference {
        ReferenceMode::None => None,
        ReferenceMode::Analytic => Some(
            config
                .problem
                .analytic_eigenvalues(&config.lower, &config.upper, m)
                .ok_or_else(|| ConfigError::Invalid(format!("analytic reference is not available for {}", config.problem)))?,
        ),
        ReferenceMode::Oracle => {
            Some(oracle_fine_solve(&setup.operators, config.finest_level(), m, config.dense_cap)?.eigenvalues)
        }
    };
    Ok(RunResult {
        levels,
        finest_corrections,
        report,
        reference,
    })
}

/// Runs every point of the sweep, then writes the reports into
/// `spec.output`. Nothing is left behind when any step fails.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ExperimentOutcome, ExperimentError> {
    crate::config::validate(spec).map_err(|(_, m)| ConfigError::Invalid(m))?;
    let mut runs = Vec::new();
    for (levels, steps) in sweep_points(spec) {
        runs.push(run_one(spec, levels, steps)?);
    }
    let files = write_reports(spec, &runs)?;
    Ok(ExperimentOutcome { runs, files })
}

fn write_reports(spec: &ExperimentSpec, runs: &[RunResult]) -> Result<Vec<PathBuf>, ExperimentError> {
    let dir = &spec.output;
    let existed = dir.exists();
    fs::create_dir_all(dir).map_err(|source| ExperimentError::Io {
        path: dir.clone(),
        source,
    })?;
    let mut written = Vec::new();
    let result = (|| {
        let outputs: [(&str, Box<dyn Fn(&Path) -> io::Result<()>>); 5] = [
            (EIGENVALUES_CSV, Box::new(|p| write_eigenvalues(p, runs))),
            (CONVERGENCE_CSV, Box::new(|p| write_convergence(p, runs))),
            (ORTHOGONALITY_CSV, Box::new(|p| write_orthogonality(p, runs))),
            (TIMING_CSV, Box::new(|p| write_timing(p, runs))),
            (REPORT_JSON, Box::new(|p| write_json(p, spec, runs))),
        ];
        for (name, write) in outputs.iter() {
            let path = dir.join(name);
            written.push(path.clone());
            write(&path).map_err(|source| ExperimentError::Io { path, source })?;
        }
        Ok(())
    })();
    if let Err(e) = result {
        for p in &written {
            let _ = fs::remove_file(p);
        }
        if !existed {
            let _ = fs::remove_dir(dir);
        }
        return Err(e);
    }
    Ok(written)
}

fn csv_writer(path: &Path, header: &[&str]) -> io::Result<csv::Writer<fs::File>> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    Ok(w)
}

fn write_eigenvalues(path: &Path, runs: &[RunResult]) -> io::Result<()> {
    let mut w = csv_writer(path, EIGENVALUES_COLUMNS)?;
    for r in runs {
        for (i, p) in r.report.pairs.iter().enumerate() {
            let reference = r.reference.as_ref().and_then(|v| v.get(i).copied());
            w.write_record([
                r.levels.to_string(),
                r.finest_corrections.to_string(),
                i.to_string(),
                fmt_f64(p.eigenvalue),
                reference.map(fmt_f64).unwrap_or_default(),
                reference.map(|x| fmt_f64((p.eigenvalue - x).abs())).unwrap_or_default(),
            ])?;
        }
    }
    w.flush()
}

fn write_convergence(path: &Path, runs: &[RunResult]) -> io::Result<()> {
    let mut w = csv_writer(path, CONVERGENCE_COLUMNS)?;
    for r in runs {
        let mut pairs: Vec<_> = r.report.pairs.iter().collect();
        pairs.sort_by_key(|p| p.index);
        for p in pairs {
            for h in &p.history {
                w.write_record([
                    r.levels.to_string(),
                    r.finest_corrections.to_string(),
                    p.index.to_string(),
                    h.level.to_string(),
                    h.iteration.to_string(),
                    fmt_f64(h.eigenvalue),
                    fmt_f64(h.residual),
                ])?;
            }
        }
    }
    w.flush()
}

fn write_orthogonality(path: &Path, runs: &[RunResult]) -> io::Result<()> {
    let mut w = csv_writer(path, ORTHOGONALITY_COLUMNS)?;
    for r in runs {
        w.write_record([
            r.levels.to_string(),
            r.finest_corrections.to_string(),
            fmt_f64(r.report.orthogonality),
        ])?;
    }
    w.flush()
}

fn write_timing(path: &Path, runs: &[RunResult]) -> io::Result<()> {
    let mut w = csv_writer(path, TIMING_COLUMNS)?;
    for r in runs {
        let mut pairs: Vec<_> = r.report.pairs.iter().collect();
        pairs.sort_by_key(|p| p.index);
        for p in pairs {
            w.write_record([
                r.levels.to_string(),
                r.finest_corrections.to_string(),
                p.index.to_string(),
                fmt_f64(p.wall_seconds),
                p.work.matvecs.to_string(),
                p.work.matvec_work.to_string(),
            ])?;
        }
    }
    w.flush()
}

fn gamma_json(g: &GammaReport) -> Value {
    json!({
        "gamma": g.gamma,
        "coarse_corrections": g.coarse_corrections,
        "refinement_index": g.refinement_index,
        "condition_holds": g.condition_holds,
        "pairs": g.pairs.iter().map(|p| json!({
            "pair": p.index,
            "rate": p.rate,
            "errors": p.errors,
        })).collect::<Vec<_>>(),
    })
}

fn config_json(spec: &ExperimentSpec) -> Value {
    let c = &spec.solver;
    json!({
        "problem": c.problem.name(),
        "lower": c.lower,
        "upper": c.upper,
        "divisions": c.divisions,
        "levels": c.levels,
        "initial_level": c.initial_level,
        "eigenpairs": c.eigenpairs,
        "coarse_corrections": c.coarse_corrections,
        "finest_corrections": c.finest_corrections,
        "pre_smooth": c.mg.pre_smooth_steps,
        "post_smooth": c.mg.post_smooth_steps,
        "mg_cycles": c.mg.cycles_per_solve,
        "coarsest_tol": c.mg.coarsest_rel_tol,
        "workers": c.workers,
        "max_dofs": c.max_dofs,
        "dense_cap": c.dense_cap,
        "diagnostics": c.diagnostics,
        "diagnostic_trials": c.diagnostic_trials,
        "gamma_steps": c.gamma_steps,
        "reference": match spec.reference {
            ReferenceMode::Analytic => "analytic",
            ReferenceMode::Oracle => "oracle",
            ReferenceMode::None => "none",
        },
        "sweep": match spec.sweep {
            Sweep::None => "none",
            Sweep::Levels => "levels",
            Sweep::CorrectionSteps => "correction_steps",
        },
        "sweep_from": spec.sweep_from,
        "output": spec.output.display().to_string(),
        "seed": spec.seed,
    })
}

fn write_json(path: &Path, spec: &ExperimentSpec, runs: &[RunResult]) -> io::Result<()> {
    let runs_json: Vec<Value> = runs
        .iter()
        .map(|r| {
            let total = r.report.total_work();
            json!({
                "levels": r.levels,
                "finest_corrections": r.finest_corrections,
                "finest_dofs": r.report.finest_dofs,
                "coarse_dofs": r.report.coarse_dofs,
                "workers": r.report.workers,
                "wall_seconds": r.report.wall_seconds,
                "orthogonality": r.report.orthogonality,
                "matvecs": total.matvecs,
                "matvec_work": total.matvec_work,
                "theta": r.report.theta,
                "gamma": r.report.gamma.as_ref().map(gamma_json),
            })
        })
        .collect();
    let doc = json!({
        "config": config_json(spec),
        "runs": runs_json,
    });
    let text = serde_json::to_string_pretty(&doc).map_err(io::Error::other)?;
    fs::write(path, text + "\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn help_lists_every_column_layout() {
        for cols in [EIGENVALUES_COLUMNS, CONVERGENCE_COLUMNS, ORTHOGONALITY_COLUMNS, TIMING_COLUMNS] {
            assert!(SCHEMAS.contains(&cols.join(",")), "{cols:?}");
        }
    }

    #[test]
    fn floats_round_trip() {
        for x in [0.1, std::f64::consts::PI * 1e-300, 19.739208802178716, -2.5e17, f64::MIN_POSITIVE] {
            let s = fmt_f64(x);
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), x.to_bits(), "{s}");
        }
        assert_eq!(fmt_f64(1.0), "1.0000000000000000e0");
        assert_eq!(fmt_f64(f64::NAN), "NaN");
    }

    #[test]
    fn exit_codes_follow_error_kind() {
        use augeig::Error as E;
        let numerical = ExperimentError::Solver(E::NoConvergence {
            iterations: 10,
            rel_tol: 1e-12,
            achieved: 1e-3,
        });
        assert_eq!(numerical.exit_code(), EXIT_NUMERICAL);
        let failures = ExperimentError::Failures {
            levels: 4,
            failed: 1,
            total: 5,
            first: E::EigenNoConvergence,
        };
        assert_eq!(failures.exit_code(), EXIT_NUMERICAL);
        assert_eq!(ExperimentError::Solver(E::DenseCap { dimension: 9, cap: 4 }).exit_code(), EXIT_CONFIG);
        assert_eq!(ExperimentError::Solver(E::InvalidConfig("x".into())).exit_code(), EXIT_CONFIG);
        let io = ExperimentError::Io {
            path: "out".into(),
            source: io::Error::other("disk full"),
        };
        assert_eq!(io.exit_code(), EXIT_IO);
    }
}
