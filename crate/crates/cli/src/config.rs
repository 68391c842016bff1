//! Line-oriented `key = value` experiment files.

use std::path::PathBuf;
use std::str::FromStr;

use augeig::driver::{ProblemKind, SolverConfig};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReferenceMode {
    Analytic,
    Oracle,
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sweep {
    None,
    /// Finest level count from `sweep_from` up to `levels`.
    Levels,
    /// `ϖ_n` from `sweep_from` up to `finest_corrections`.
    CorrectionSteps,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub solver: SolverConfig,
    pub reference: ReferenceMode,
    pub sweep: Sweep,
    /// First value of the swept variable; `None` picks the smallest valid one.
    pub sweep_from: Option<usize>,
    pub output: PathBuf,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error("{0}")]
    Invalid(String),
}

fn line_err(line: usize, message: impl Into<String>) -> ConfigError {
    ConfigError::Line {
        line,
        message: message.into(),
    }
}

/// Keys accepted by [`parse_config`], in the order `--help` lists them.
pub const KEYS: &[(&str, &str)] = &[
    ("problem", "laplace2d | laplace3d | variable_coeff | harmonic_box"),
    ("lower", "comma-separated lower box corner (default per problem)"),
    ("upper", "comma-separated upper box corner"),
    ("divisions", "cells per axis on the coarse mesh (4)"),
    ("levels", "number of meshes including the coarse one (4)"),
    ("initial_level", "level of the seeding dense solve (1)"),
    ("eigenpairs", "m, number of eigenpairs (1)"),
    ("coarse_corrections", "correction steps per intermediate level (1)"),
    ("finest_corrections", "correction steps on the finest level (1)"),
    ("pre_smooth", "CG pre-smoothing steps per level (2)"),
    ("post_smooth", "CG post-smoothing steps per level (2)"),
    ("mg_cycles", "V-cycles per boundary-value solve (1)"),
    ("coarsest_tol", "relative residual of the coarsest CG solve (1e-12)"),
    ("workers", "worker threads (one per eigenpair, capped by cores)"),
    ("max_dofs", "cap on finest-level DOFs (5000000)"),
    ("dense_cap", "cap on dense eigenproblem size (env AUGEIG_DENSE_CAP, 2500)"),
    ("diagnostics", "true | false: measure multigrid and correction rates (false)"),
    ("diagnostic_trials", "random starts per level for the multigrid rate (5)"),
    ("gamma_steps", "finest-level steps in the correction-rate fit (5)"),
    ("reference", "analytic | oracle | none (none)"),
    ("sweep", "none | levels | correction_steps (none)"),
    ("sweep_from", "first value of the swept variable"),
    ("output", "output directory (results)"),
    ("seed", "seed for the random diagnostic trials (0)"),
];

fn parse_num<T: FromStr>(line: usize, key: &str, value: &str, what: &str) -> Result<T, ConfigError> {
    value
        .parse()
        .map_err(|_| line_err(line, format!("`{key}` expects {what}, got `{value}`")))
}

fn parse_list(line: usize, key: &str, value: &str) -> Result<Vec<f64>, ConfigError> {
    value
        .split(',')
        .map(|s| parse_num::<f64>(line, key, s.trim(), "comma-separated numbers"))
        .collect()
}

fn parse_bool(line: usize, key: &str, value: &str) -> Result<bool, ConfigError> {
    match value {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(line_err(line, format!("`{key}` expects true or false, got `{value}`"))),
    }
}

/// Parses and validates an experiment file. Defaults follow
/// [`SolverConfig::new`]; unknown keys are rejected.
pub fn parse_config(text: &str) -> Result<ExperimentSpec, ConfigError> {
    let mut pairs: Vec<(String, String, usize)> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let (key, value) = content
            .split_once('=')
            .ok_or_else(|| line_err(line, format!("expected `key = value`, got `{content}`")))?;
        let (key, value) = (key.trim(), value.trim());
        if !KEYS.iter().any(|(k, _)| *k == key) {
            return Err(line_err(line, format!("unknown key `{key}`")));
        }
        if let Some((_, _, first)) = pairs.iter().find(|(k, _, _)| k.as_str() == key) {
            return Err(line_err(line, format!("duplicate key `{key}` (first set on line {first})")));
        }
        pairs.push((key.to_string(), value.to_string(), line));
    }

    // The problem decides the default box, so it goes first.
    let problem = match pairs.iter().find(|(k, _, _)| k == "problem") {
        Some((_, v, line)) => ProblemKind::from_str(v).map_err(|e| line_err(*line, e.to_string()))?,
        None => ProblemKind::Laplace2d,
    };
    let mut solver = SolverConfig::new(problem);
    let mut spec = ExperimentSpec {
        solver: SolverConfig::new(problem),
        reference: ReferenceMode::None,
        sweep: Sweep::None,
        sweep_from: None,
        output: PathBuf::from("results"),
        seed: 0,
    };
    let mut line_of = std::collections::HashMap::new();
    for (key, value, line) in &pairs {
        let (line, v) = (*line, value.as_str());
        line_of.insert(key.as_str(), line);
        let count = "a non-negative integer";
        match key.as_str() {
            "problem" => {}
            "lower" => solver.lower = parse_list(line, key, v)?,
            "upper" => solver.upper = parse_list(line, key, v)?,
            "divisions" => solver.divisions = parse_num(line, key, v, count)?,
            "levels" => solver.levels = parse_num(line, key, v, count)?,
            "initial_level" => solver.initial_level = parse_num(line, key, v, count)?,
            "eigenpairs" => solver.eigenpairs = parse_num(line, key, v, count)?,
            "coarse_corrections" => solver.coarse_corrections = parse_num(line, key, v, count)?,
            "finest_corrections" => solver.finest_corrections = parse_num(line, key, v, count)?,
            "pre_smooth" => solver.mg.pre_smooth_steps = parse_num(line, key, v, count)?,
            "post_smooth" => solver.mg.post_smooth_steps = parse_num(line, key, v, count)?,
            "mg_cycles" => solver.mg.cycles_per_solve = parse_num(line, key, v, count)?,
            "coarsest_tol" => solver.mg.coarsest_rel_tol = parse_num(line, key, v, "a number")?,
            "workers" => solver.workers = Some(parse_num(line, key, v, count)?),
            "max_dofs" => solver.max_dofs = parse_num(line, key, v, count)?,
            "dense_cap" => solver.dense_cap = parse_num(line, key, v, count)?,
            "diagnostics" => solver.diagnostics = parse_bool(line, key, v)?,
            "diagnostic_trials" => solver.diagnostic_trials = parse_num(line, key, v, count)?,
            "gamma_steps" => solver.gamma_steps = parse_num(line, key, v, count)?,
            "reference" => {
                spec.reference = match v {
                    "analytic" => ReferenceMode::Analytic,
                    "oracle" => ReferenceMode::Oracle,
                    "none" => ReferenceMode::None,
                    _ => return Err(line_err(line, format!("`reference` expects analytic, oracle or none, got `{v}`"))),
                }
            }
            "sweep" => {
                spec.sweep = match v {
                    "none" => Sweep::None,
                    "levels" => Sweep::Levels,
                    "correction_steps" => Sweep::CorrectionSteps,
                    _ => {
                        return Err(line_err(
                            line,
                            format!("`sweep` expects none, levels or correction_steps, got `{v}`"),
                        ))
                    }
                }
            }
            "sweep_from" => spec.sweep_from = Some(parse_num(line, key, v, count)?),
            "output" => {
                if v.is_empty() {
                    return Err(line_err(line, "`output` must not be empty"));
                }
                spec.output = PathBuf::from(v);
            }
            "seed" => spec.seed = parse_num(line, key, v, count)?,
            _ => unreachable!("key list and match arms agree"),
        }
    }
    solver.seed = spec.seed;
    spec.solver = solver;

    // Invariant violations are reported against the line that set the
    // offending key when there is one.
    validate(&spec).map_err(|(key, message)| match key.and_then(|k| line_of.get(k)) {
        Some(&line) => line_err(line, message),
        None => ConfigError::Invalid(message),
    })?;
    Ok(spec)
}

/// Runs that a spec expands to, as `(levels, finest_corrections)`.
pub fn sweep_points(spec: &ExperimentSpec) -> Vec<(usize, usize)> {
    let c = &spec.solver;
    match spec.sweep {
        Sweep::None => vec![(c.levels, c.finest_corrections)],
        Sweep::Levels => {
            let from = spec.sweep_from.unwrap_or(c.levels);
            (from..=c.levels).map(|l| (l, c.finest_corrections)).collect()
        }
        Sweep::CorrectionSteps => {
            let from = spec.sweep_from.unwrap_or(1);
            (from..=c.finest_corrections).map(|s| (c.levels, s)).collect()
        }
    }
}

/// Checks every run of the spec; errors name the key to blame.
pub fn validate(spec: &ExperimentSpec) -> Result<(), (Option<&'static str>, String)> {
    let c = &spec.solver;
    match (spec.sweep, spec.sweep_from) {
        (Sweep::Levels, Some(from)) if from == 0 || from > c.levels => {
            return Err((Some("sweep_from"), format!("sweep_from must lie in 1..={} for a levels sweep", c.levels)));
        }
        (Sweep::CorrectionSteps, Some(from)) if from == 0 || from > c.finest_corrections => {
            return Err((
                Some("sweep_from"),
                format!("sweep_from must lie in 1..={} for a correction_steps sweep", c.finest_corrections),
            ));
        }
        (Sweep::None, Some(_)) => return Err((Some("sweep_from"), "sweep_from needs a sweep".into())),
        _ => {}
    }
    for (levels, steps) in sweep_points(spec) {
        let run = SolverConfig {
            levels,
            finest_corrections: steps,
            ..c.clone()
        };
        run.validate().map_err(|e| (blame(&e.to_string()), e.to_string()))?;
        match spec.reference {
            ReferenceMode::Analytic if !c.problem.has_analytic() => {
                return Err((
                    Some("reference"),
                    format!("analytic reference is not available for {}", c.problem),
                ))
            }
            ReferenceMode::Oracle => {
                let n = run.dofs_at(run.finest_level());
                if n > c.dense_cap {
                    return Err((
                        Some("reference"),
                        format!("oracle reference needs the finest level ({n} DOFs) to fit the dense cap {}", c.dense_cap),
                    ));
                }
            }
            _ => {}
        }
    }
    Ok(())
}

fn blame(message: &str) -> Option<&'static str> {
    KEYS.iter()
        .map(|(k, _)| *k)
        .filter(|k| message.contains(k))
        .max_by_key(|k| k.len())
        .or_else(|| {
            if message.contains("box") {
                Some("lower")
            } else if message.contains("DOFs") {
                Some("levels")
            } else {
                None
            }
        })
}
