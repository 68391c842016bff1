//! Experiment files, sweeps and report writers behind the `augeig` binary.

pub mod config;
pub mod experiment;

pub use config::{parse_config, ConfigError, ExperimentSpec, ReferenceMode, Sweep};
pub use experiment::{run_experiment, ExperimentError, ExperimentOutcome};

use augeig::driver::{ProblemKind, SolverConfig};

/// The `--quick` preset: laplace2d, 4 coarse divisions, 4 levels, 10
/// eigenpairs, analytic reference and diagnostics on.
pub fn apply_quick(spec: &mut ExperimentSpec) {
    let base = SolverConfig::new(ProblemKind::Laplace2d);
    let c = &mut spec.solver;
    c.problem = base.problem;
    c.lower = base.lower;
    c.upper = base.upper;
    c.divisions = 4;
    c.levels = 4;
    c.eigenpairs = 10;
    c.diagnostics = true;
    spec.reference = ReferenceMode::Analytic;
}
