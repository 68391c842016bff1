//! The eigenwise parallel scheme: a dense solve on `V_{h_1}` seeds `m`
//! eigenpairs, then every eigenpair climbs the hierarchy on its own worker,
//! running correction steps against the shared coarse space.

use std::fmt;
use std::str::FromStr;
use std::time::Instant;

use crate::assembly::{LevelOperators, ProblemCoefficients};
use crate::augmented::{correction_step, CoarseSpace, EigenPairState, HistoryEntry};
use crate::error::{Error, Result};
use crate::linalg::{solve_gevp_sparse, DenseEigenResult, WorkCounter};
use crate::mesh::{BoxDomain, MeshHierarchy};
use crate::multigrid::{energy_norm, measure_contraction, MgConfig};
use crate::scalar::{dot, scale, Scalar};

/// Largest dense eigenproblem solved unless overridden.
pub const DEFAULT_DENSE_CAP: usize = 2500;
/// Environment variable overriding [`DEFAULT_DENSE_CAP`].
pub const DENSE_CAP_ENV: &str = "AUGEIG_DENSE_CAP";
pub const DEFAULT_MAX_DOFS: usize = 5_000_000;
/// Eigenvalues closer than this (relative) count as one cluster.
pub const CLUSTER_TOL: f64 = 1e-6;

/// Dense cap from [`DENSE_CAP_ENV`], falling back to the default.
pub fn dense_cap_from_env() -> usize {
    std::env::var(DENSE_CAP_ENV)
        .ok()
        .and_then(|s| s.trim().parse().ok())
        .unwrap_or(DEFAULT_DENSE_CAP)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ProblemKind {
    Laplace2d,
    Laplace3d,
    /// `−∇·((I + ccᵀ)∇u) + exp(Π cᵢ) u` with `c = x − ½`.
    VariableCoeff,
    /// `−½Δu + ½|x|²u`, truncated to a box with `u = 0` on its boundary.
    HarmonicBox,
}

impl ProblemKind {
    pub fn name(self) -> &'static str {
        match self {
            ProblemKind::Laplace2d => "laplace2d",
            ProblemKind::Laplace3d => "laplace3d",
            ProblemKind::VariableCoeff => "variable_coeff",
            ProblemKind::HarmonicBox => "harmonic_box",
        }
    }

    /// Dimension forced by the problem, if any.
    pub fn fixed_dim(self) -> Option<usize> {
        match self {
            ProblemKind::Laplace2d => Some(2),
            ProblemKind::Laplace3d => Some(3),
            _ => None,
        }
    }

    pub fn default_box(self) -> (Vec<f64>, Vec<f64>) {
        match self {
            ProblemKind::Laplace2d | ProblemKind::VariableCoeff => (vec![0.0; 2], vec![1.0; 2]),
            ProblemKind::Laplace3d => (vec![0.0; 3], vec![1.0; 3]),
            ProblemKind::HarmonicBox => (vec![-4.0; 3], vec![4.0; 3]),
        }
    }

    pub fn coefficients<T: Scalar>(self) -> ProblemCoefficients<T> {
        match self {
            ProblemKind::Laplace2d | ProblemKind::Laplace3d => ProblemCoefficients::laplace(),
            ProblemKind::VariableCoeff => ProblemCoefficients::variable(),
            ProblemKind::HarmonicBox => ProblemCoefficients::harmonic_oscillator(),
        }
    }

    pub fn has_analytic(self) -> bool {
        !matches!(self, ProblemKind::VariableCoeff)
    }

    /// The `m` smallest eigenvalues of the continuous problem, with
    /// multiplicity. For the oscillator these are the whole-space values
    /// `Σ (nᵢ + ½)`, ignoring the truncation.
    pub fn analytic_eigenvalues(self, lower: &[f64], upper: &[f64], m: usize) -> Option<Vec<f64>> {
        let extents: Vec<f64> = lower.iter().zip(upper).map(|(l, u)| u - l).collect();
        let pi2 = std::f64::consts::PI * std::f64::consts::PI;
        match self {
            ProblemKind::Laplace2d | ProblemKind::Laplace3d => Some(smallest_separable(m, extents.len(), |axis, p| {
                let q = (p + 1) as f64 / extents[axis];
                pi2 * q * q
            })),
            ProblemKind::HarmonicBox => Some(smallest_separable(m, extents.len(), |_, p| p as f64 + 0.5)),
            ProblemKind::VariableCoeff => None,
        }
    }
}

/// `m` smallest sums `Σ_a f(a, p_a)` over multi-indices `p_a ≥ 0`, for `f`
/// increasing in `p`.
fn smallest_separable(m: usize, dim: usize, f: impl Fn(usize, usize) -> f64) -> Vec<f64> {
    if m == 0 {
        return Vec::new();
    }
    let mut k = 4;
    loop {
        let mut values = Vec::new();
        let mut idx = vec![0usize; dim];
        loop {
            values.push((0..dim).map(|a| f(a, idx[a])).sum::<f64>());
            let mut a = 0;
            while a < dim {
                idx[a] += 1;
                if idx[a] < k {
                    break;
                }
                idx[a] = 0;
                a += 1;
            }
            if a == dim {
                break;
            }
        }
        values.sort_by(f64::total_cmp);
        if values.len() >= m {
            let last = values[m - 1];
            // Anything with some index ≥ k is at least this large.
            let floor = (0..dim)
                .map(|a| f(a, k) + (0..dim).filter(|&b| b != a).map(|b| f(b, 0)).sum::<f64>())
                .fold(f64::INFINITY, f64::min);
            if floor >= last {
                values.truncate(m);
                return values;
            }
        }
        k *= 2;
    }
}

impl fmt::Display for ProblemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ProblemKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "laplace2d" => Ok(ProblemKind::Laplace2d),
            "laplace3d" => Ok(ProblemKind::Laplace3d),
            "variable_coeff" => Ok(ProblemKind::VariableCoeff),
            "harmonic_box" => Ok(ProblemKind::HarmonicBox),
            other => Err(Error::InvalidConfig(format!(
                "unknown problem `{other}` (expected laplace2d, laplace3d, variable_coeff or harmonic_box)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    pub problem: ProblemKind,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Cells per axis on `V_H`.
    pub divisions: usize,
    /// Number of meshes, `V_H` included. Level `levels − 1` is the finest.
    pub levels: usize,
    /// Level of `V_{h_1}`, where the seeding dense solve runs.
    pub initial_level: usize,
    pub eigenpairs: usize,
    /// `ϖ`: corrections on each intermediate level.
    pub coarse_corrections: usize,
    /// `ϖ_n`: corrections on the finest level.
    pub finest_corrections: usize,
    pub mg: MgConfig,
    /// `None` means one worker per eigenpair, capped by the hardware.
    pub workers: Option<usize>,
    pub max_dofs: usize,
    pub dense_cap: usize,
    /// Reserved: shift-invert for the small eigenproblem is not implemented.
    pub shift_invert: bool,
    /// Measure `θ̂` and `γ̂` after the run.
    pub diagnostics: bool,
    pub diagnostic_trials: usize,
    pub gamma_steps: usize,
    pub seed: u64,
    /// Poisons the given eigenpair (by seed index) with a NaN on its first
    /// transfer. Test hook for failure isolation.
    #[doc(hidden)]
    pub inject_failure: Option<usize>,
}

impl SolverConfig {
    pub fn new(problem: ProblemKind) -> Self {
        let (lower, upper) = problem.default_box();
        Self {
            problem,
            lower,
            upper,
            divisions: 4,
            levels: 4,
            initial_level: 1,
            eigenpairs: 1,
            coarse_corrections: 1,
            finest_corrections: 1,
            mg: MgConfig::default(),
            workers: None,
            max_dofs: DEFAULT_MAX_DOFS,
            dense_cap: dense_cap_from_env(),
            shift_invert: false,
            diagnostics: false,
            diagnostic_trials: 5,
            gamma_steps: 5,
            seed: 0,
            inject_failure: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    /// Level of `V_{h_1}` actually used.
    pub fn seed_level(&self) -> usize {
        self.initial_level.min(self.levels.saturating_sub(1))
    }

    pub fn finest_level(&self) -> usize {
        self.levels.saturating_sub(1)
    }

    /// Interior DOFs on level `k` of the box hierarchy.
    pub fn dofs_at(&self, k: usize) -> usize {
        let per_axis = (self.divisions << k).saturating_sub(1);
        per_axis.saturating_pow(self.dim() as u32)
    }

    pub fn domain<T: Scalar>(&self) -> Result<BoxDomain<T>> {
        BoxDomain::new(
            self.lower.iter().map(|&x| T::lit(x)).collect(),
            self.upper.iter().map(|&x| T::lit(x)).collect(),
        )
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.lower.len() != self.upper.len() || !(2..=3).contains(&self.lower.len()) {
            return bad(format!(
                "box needs 2 or 3 axes, got lower {:?} upper {:?}",
                self.lower, self.upper
            ));
        }
        if let Some(d) = self.problem.fixed_dim() {
            if self.dim() != d {
                return bad(format!("{} needs a {d}-dimensional box, got {}", self.problem, self.dim()));
            }
        }
        if self.lower.iter().zip(&self.upper).any(|(l, u)| !(l.is_finite() && u.is_finite() && u > l)) {
            return bad(format!("box must have finite lower < upper, got {:?} {:?}", self.lower, self.upper));
        }
        if self.divisions == 0 {
            return bad("divisions must be at least 1".into());
        }
        if self.levels == 0 {
            return bad("levels must be at least 1".into());
        }
        if self.eigenpairs == 0 {
            return bad("eigenpairs must satisfy m >= 1".into());
        }
        let seed_dofs = self.dofs_at(self.seed_level());
        if self.eigenpairs > seed_dofs {
            return bad(format!(
                "eigenpairs must satisfy m <= {seed_dofs}, the DOF count of the initial level"
            ));
        }
        if self.coarse_corrections == 0 {
            return bad("coarse_corrections must be at least 1".into());
        }
        if self.finest_corrections == 0 {
            return bad("finest_corrections must be at least 1".into());
        }
        if self.mg.cycles_per_solve == 0 {
            return bad("mg cycles per solve must be at least 1".into());
        }
        self.mg.validate()?;
        if self.workers == Some(0) {
            return bad("workers must be at least 1".into());
        }
        if self.shift_invert {
            return bad("shift_invert is not supported; the small eigenproblem is always solved densely".into());
        }
        if self.diagnostics && (self.diagnostic_trials == 0 || self.gamma_steps == 0) {
            return bad("diagnostic_trials and gamma_steps must be at least 1".into());
        }
        let finest = self.dofs_at(self.finest_level());
        if finest > self.max_dofs {
            return Err(Error::MemoryCap {
                dofs: finest,
                cap: self.max_dofs,
            });
        }
        for dim in [self.dofs_at(0) + 1, seed_dofs] {
            if dim > self.dense_cap {
                return Err(Error::DenseCap {
                    dimension: dim,
                    cap: self.dense_cap,
                });
            }
        }
        Ok(())
    }

    fn worker_count(&self) -> usize {
        match self.workers {
            Some(w) => w,
            None => {
                let hw = std::thread::available_parallelism().map_or(1, |n| n.get());
                self.eigenpairs.min(hw)
            }
        }
    }
}

/// Hierarchy, operators and coarse space, shared read-only by all workers.
#[derive(Debug, Clone)]
pub struct Setup<T> {
    pub hierarchy: MeshHierarchy<T>,
    pub operators: LevelOperators<T>,
    pub coarse: CoarseSpace<T>,
}

impl<T: Scalar> Setup<T> {
    pub fn build(config: &SolverConfig) -> Result<Self> {
        config.validate()?;
        let hierarchy = MeshHierarchy::build(&config.domain()?, config.divisions, config.levels, config.max_dofs)?;
        let operators = LevelOperators::assemble(&hierarchy, &config.problem.coefficients())?;
        let coarse = CoarseSpace::new(&operators, config.dense_cap)?;
        Ok(Self {
            hierarchy,
            operators,
            coarse,
        })
    }
}

/// The schedule every worker follows.
#[derive(Debug, Clone, Copy)]
pub struct CorrectionPlan<'a, T> {
    pub operators: &'a LevelOperators<T>,
    pub coarse: &'a CoarseSpace<T>,
    pub mg: MgConfig,
    pub finest_level: usize,
    pub coarse_corrections: usize,
    pub finest_corrections: usize,
    pub inject_failure: Option<usize>,
}

impl<'a, T: Scalar> CorrectionPlan<'a, T> {
    pub fn new(setup: &'a Setup<T>, config: &SolverConfig) -> Self {
        Self {
            operators: &setup.operators,
            coarse: &setup.coarse,
            mg: config.mg,
            finest_level: config.finest_level(),
            coarse_corrections: config.coarse_corrections,
            finest_corrections: config.finest_corrections,
            inject_failure: config.inject_failure,
        }
    }
}

/// What one worker hands back for one eigenpair.
#[derive(Debug, Clone, PartialEq)]
pub struct PairOutcome<T> {
    /// Position in the seeding order.
    pub index: usize,
    /// Last successfully computed state.
    pub state: EigenPairState<T>,
    pub work: WorkCounter,
    pub wall_seconds: f64,
    pub failure: Option<Error>,
}

/// Prolongs `state` one level up and restores `uᵀAu = 1`. The eigenvalue is
/// carried over unchanged.
fn transfer<T: Scalar>(ops: &LevelOperators<T>, state: &EigenPairState<T>, work: &mut WorkCounter) -> Result<EigenPairState<T>> {
    let k = state.level + 1;
    let mut u = vec![T::zero(); ops.dofs(k)];
    ops.prolongation(k).spmv_counted(&state.vector, &mut u, work)?;
    let mut au = vec![T::zero(); u.len()];
    ops.stiffness(k).spmv_counted(&u, &mut au, work)?;
    let energy = dot(&u, &au);
    if !(energy > T::zero() && energy.is_finite()) {
        return Err(Error::NonFinite("prolonged eigenvector energy"));
    }
    scale(T::one() / energy.sqrt(), &mut u);
    Ok(EigenPairState {
        level: k,
        eigenvalue: state.eigenvalue,
        vector: u,
        history: state.history.clone(),
    })
}

/// Runs levels `state.level + 1 ..= stop` of the plan. `finest` corrections
/// apply on `plan.finest_level`, `plan.coarse_corrections` elsewhere.
fn climb<T: Scalar>(
    plan: &CorrectionPlan<'_, T>,
    index: usize,
    state: &mut EigenPairState<T>,
    stop: usize,
    finest: usize,
    work: &mut WorkCounter,
) -> Result<()> {
    let ops = plan.operators;
    while state.level < stop {
        let mut next = transfer(ops, state, work)?;
        if plan.inject_failure == Some(index) {
            next.vector[0] = T::nan();
        }
        next.record(ops, 0).or_else(|e| match e {
            // A poisoned vector still gets its history row; the correction
            // step reports the failure.
            Error::NonFinite(_) => Ok(()),
            e => Err(e),
        })?;
        let steps = if next.level == plan.finest_level { finest } else { plan.coarse_corrections };
        for _ in 0..steps {
            next = correction_step(ops, plan.coarse, &next, &plan.mg, work)?;
        }
        *state = next;
    }
    Ok(())
}

fn run_one<T: Scalar>(plan: &CorrectionPlan<'_, T>, index: usize, seed: EigenPairState<T>) -> PairOutcome<T> {
    let start = Instant::now();
    let mut work = WorkCounter::default();
    let mut state = seed;
    let failure = climb(plan, index, &mut state, plan.finest_level, plan.finest_corrections, &mut work).err();
    PairOutcome {
        index,
        state,
        work,
        wall_seconds: start.elapsed().as_secs_f64(),
        failure,
    }
}

/// Runs every eigenpair's schedule, assigning eigenpair `i` to worker
/// `i mod workers`. Outcomes come back in input order and do not depend on
/// the worker count.
pub fn run_workers<T: Scalar>(
    plan: &CorrectionPlan<'_, T>,
    states: Vec<EigenPairState<T>>,
    workers: usize,
) -> Vec<PairOutcome<T>> {
    let m = states.len();
    let workers = workers.clamp(1, m.max(1));
    if workers == 1 {
        return states.into_iter().enumerate().map(|(i, s)| run_one(plan, i, s)).collect();
    }
    let mut buckets: Vec<Vec<(usize, EigenPairState<T>)>> = (0..workers).map(|_| Vec::new()).collect();
    for (i, s) in states.into_iter().enumerate() {
        buckets[i % workers].push((i, s));
    }
    let mut out: Vec<Option<PairOutcome<T>>> = (0..m).map(|_| None).collect();
    std::thread::scope(|scope| {
        let handles: Vec<_> = buckets
            .into_iter()
            .map(|bucket| {
                scope.spawn(move || bucket.into_iter().map(|(i, s)| run_one(plan, i, s)).collect::<Vec<_>>())
            })
            .collect();
        for h in handles {
            for o in h.join().expect("eigenpair worker panicked") {
                let i = o.index;
                out[i] = Some(o);
            }
        }
    });
    out.into_iter().map(|o| o.expect("every eigenpair returns")).collect()
}

/// Maximum of `|b(uᵢ,uⱼ)| / (‖uᵢ‖_b ‖uⱼ‖_b)` over pairs whose eigenvalues
/// differ by more than [`CLUSTER_TOL`] relative. Zero when there is no
/// such pair.
pub fn orthogonality_report<T: Scalar>(
    ops: &LevelOperators<T>,
    k: usize,
    eigenvalues: &[T],
    vectors: &[Vec<T>],
) -> Result<T> {
    if eigenvalues.len() != vectors.len() {
        return Err(Error::DimensionMismatch(format!(
            "{} eigenvalues for {} vectors",
            eigenvalues.len(),
            vectors.len()
        )));
    }
    let m = ops.mass(k);
    let mv: Vec<Vec<T>> = vectors.iter().map(|v| m.spmv(v)).collect::<Result<_>>()?;
    let norms: Vec<T> = vectors.iter().zip(&mv).map(|(v, w)| dot(v, w).sqrt()).collect();
    let mut worst = T::zero();
    for i in 0..vectors.len() {
        for j in i + 1..vectors.len() {
            let scale = eigenvalues[i].abs().max(eigenvalues[j].abs());
            if (eigenvalues[i] - eigenvalues[j]).abs() <= T::lit(CLUSTER_TOL) * scale {
                continue;
            }
            let c = dot(&vectors[i], &mv[j]).abs() / (norms[i] * norms[j]);
            worst = worst.max(c);
        }
    }
    Ok(worst)
}

/// Dense reference eigenpairs of level `k`. Never used by the scheme itself.
pub fn oracle_fine_solve<T: Scalar>(
    ops: &LevelOperators<T>,
    k: usize,
    m: usize,
    dense_cap: usize,
) -> Result<DenseEigenResult<T>> {
    let n = ops.dofs(k);
    if n > dense_cap {
        return Err(Error::DenseCap {
            dimension: n,
            cap: dense_cap,
        });
    }
    solve_gevp_sparse(ops.stiffness(k), ops.mass(k), m)
}

/// Relative gap below which neighbouring oracle eigenvalues are measured as
/// one eigenspace by [`measure_gamma`]. Eigenvalues that coincide for the
/// continuous problem are split by the mesh at roughly this scale, and the
/// fixed coarse space cannot tell the members apart.
pub const GAMMA_CLUSTER_TOL: f64 = 1e-2;

/// Energy distance from `u` to the span of the oracle eigenvectors in the
/// cluster around the eigenvalue nearest `lambda`.
fn eigenspace_distance<T: Scalar>(ops: &LevelOperators<T>, k: usize, oracle: &DenseEigenResult<T>, lambda: T, u: &[T]) -> Result<T> {
    let vals = &oracle.eigenvalues;
    let nearest = (0..vals.len())
        .min_by(|&a, &b| {
            (vals[a] - lambda)
                .abs()
                .partial_cmp(&(vals[b] - lambda).abs())
                .unwrap_or(std::cmp::Ordering::Equal)
        })
        .ok_or_else(|| Error::InvalidConfig("empty oracle".into()))?;
    let close = |i: usize, j: usize| (vals[j] - vals[i]).abs() <= T::lit(GAMMA_CLUSTER_TOL) * vals[j].abs();
    let mut lo = nearest;
    while lo > 0 && close(lo - 1, lo) {
        lo -= 1;
    }
    let mut hi = nearest;
    while hi + 1 < vals.len() && close(hi, hi + 1) {
        hi += 1;
    }
    let a = ops.stiffness(k);
    let au = a.spmv(u)?;
    let mut rest = u.to_vec();
    for j in lo..=hi {
        let v = oracle.vector(j);
        // Oracle vectors are A-orthonormal.
        let c = dot(&v, &au);
        for (r, x) in rest.iter_mut().zip(&v) {
            *r -= c * *x;
        }
    }
    energy_norm(a, &rest)
}

/// Geometric decay rate of one eigenpair's energy error over repeated
/// finest-level corrections.
#[derive(Debug, Clone, PartialEq)]
pub struct GammaEstimate {
    /// Seeding index of the eigenpair.
    pub index: usize,
    /// `‖ū − u⁽ˡ⁾‖_A` for `l = 0, 1, …`; `l = 0` is the multilevel initial guess.
    pub errors: Vec<f64>,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GammaReport {
    pub pairs: Vec<GammaEstimate>,
    /// Worst rate over the eigenpairs.
    pub gamma: f64,
    pub coarse_corrections: usize,
    pub refinement_index: usize,
    /// `γ̂^ϖ · β < 1`
    pub condition_holds: bool,
    /// Smallest finest-level eigenvalues from the dense oracle, ascending.
    pub oracle_eigenvalues: Vec<f64>,
}

/// Errors below this are treated as converged and left out of the fit.
const GAMMA_FLOOR: f64 = 1e-11;

/// Least-squares slope of `log e` against the step index, as a rate.
fn fit_rate(errors: &[f64]) -> f64 {
    let pts: Vec<(f64, f64)> = errors
        .iter()
        .enumerate()
        .take_while(|(_, &e)| e > GAMMA_FLOOR)
        .map(|(i, &e)| (i as f64, e.ln()))
        .collect();
    if pts.len() < 2 {
        return 0.0;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    (sxy / sxx).exp()
}

fn seed_states<T: Scalar>(setup: &Setup<T>, config: &SolverConfig) -> Result<Vec<EigenPairState<T>>> {
    let k = config.seed_level();
    let ops = &setup.operators;
    let eig = solve_gevp_sparse(ops.stiffness(k), ops.mass(k), config.eigenpairs)?;
    let mut states = Vec::with_capacity(eig.len());
    for i in 0..eig.len() {
        let mut s = EigenPairState::new(k, eig.eigenvalues[i], eig.vector(i));
        s.record(ops, 0)?;
        states.push(s);
    }
    Ok(states)
}

fn gamma_from_setup<T: Scalar>(
    setup: &Setup<T>,
    config: &SolverConfig,
    seeds: Vec<EigenPairState<T>>,
) -> Result<GammaReport> {
    let ops = &setup.operators;
    let k = config.finest_level();
    let wanted = (2 * config.eigenpairs).max(config.eigenpairs + 10);
    let oracle = oracle_fine_solve(ops, k, wanted.min(ops.dofs(k)), config.dense_cap)?;
    let plan = CorrectionPlan {
        inject_failure: None,
        ..CorrectionPlan::new(setup, config)
    };
    let mut pairs = Vec::with_capacity(seeds.len());
    for (index, mut state) in seeds.into_iter().enumerate() {
        let mut work = WorkCounter::default();
        climb(&plan, index, &mut state, k, 0, &mut work)?;
        let mut errors = vec![eigenspace_distance(ops, k, &oracle, state.eigenvalue, &state.vector)?.as_f64()];
        for _ in 0..config.gamma_steps {
            state = correction_step(ops, plan.coarse, &state, &plan.mg, &mut work)?;
            errors.push(eigenspace_distance(ops, k, &oracle, state.eigenvalue, &state.vector)?.as_f64());
        }
        pairs.push(GammaEstimate {
            index,
            rate: fit_rate(&errors),
            errors,
        });
    }
    let gamma = pairs.iter().map(|p| p.rate).fold(0.0, f64::max);
    let beta = crate::mesh::REFINEMENT_INDEX as f64;
    Ok(GammaReport {
        condition_holds: gamma.powi(config.coarse_corrections as i32) * beta < 1.0,
        pairs,
        gamma,
        coarse_corrections: config.coarse_corrections,
        refinement_index: crate::mesh::REFINEMENT_INDEX,
        oracle_eigenvalues: oracle.eigenvalues.iter().map(|x| x.as_f64()).collect(),
    })
}

/// Fits `γ̂` per eigenpair against the dense oracle on the finest level.
/// Requires the finest level to fit under the dense cap.
pub fn measure_gamma<T: Scalar>(config: &SolverConfig) -> Result<GammaReport> {
    let setup = Setup::<T>::build(config)?;
    let seeds = seed_states(&setup, config)?;
    gamma_from_setup(&setup, config, seeds)
}

/// `θ̂` on levels `1..levels`; level 0 is solved to tolerance and omitted.
pub fn measure_theta<T: Scalar>(ops: &LevelOperators<T>, mg: &MgConfig, trials: usize, seed: u64) -> Result<Vec<f64>> {
    (1..ops.num_levels())
        .map(|k| measure_contraction(ops, k, mg, trials, seed.wrapping_add(k as u64)).map(|t| t.as_f64()))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct EigenPairReport<T> {
    /// Position in the seeding order.
    pub index: usize,
    pub eigenvalue: T,
    /// `‖A u − λ M u‖₂` on the level reached.
    pub residual: T,
    pub level: usize,
    pub history: Vec<HistoryEntry<T>>,
    pub wall_seconds: f64,
    pub work: WorkCounter,
    pub vector: Vec<T>,
    pub failure: Option<Error>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunReport<T> {
    /// Sorted by eigenvalue; failed eigenpairs last.
    pub pairs: Vec<EigenPairReport<T>>,
    pub finest_level: usize,
    pub finest_dofs: usize,
    pub coarse_dofs: usize,
    pub workers: usize,
    /// See [`orthogonality_report`]; successful eigenpairs only.
    pub orthogonality: T,
    /// Per level `1..levels`, when diagnostics were requested.
    pub theta: Option<Vec<f64>>,
    /// When diagnostics were requested and the oracle fits.
    pub gamma: Option<GammaReport>,
    pub wall_seconds: f64,
}

impl<T: Scalar> RunReport<T> {
    pub fn eigenvalues(&self) -> Vec<T> {
        self.pairs.iter().map(|p| p.eigenvalue).collect()
    }

    pub fn failures(&self) -> usize {
        self.pairs.iter().filter(|p| p.failure.is_some()).count()
    }

    pub fn total_work(&self) -> WorkCounter {
        let mut w = WorkCounter::default();
        for p in &self.pairs {
            w.merge(&p.work);
        }
        w
    }
}

pub fn solve<T: Scalar>(config: &SolverConfig) -> Result<RunReport<T>> {
    let start = Instant::now();
    let setup = Setup::<T>::build(config)?;
    solve_with_setup(&setup, config).map(|mut r| {
        r.wall_seconds = start.elapsed().as_secs_f64();
        r
    })
}

/// [`solve`] against a prebuilt [`Setup`], which must match `config`.
pub fn solve_with_setup<T: Scalar>(setup: &Setup<T>, config: &SolverConfig) -> Result<RunReport<T>> {
    config.validate()?;
    if setup.operators.num_levels() != config.levels {
        return Err(Error::InvalidConfig(format!(
            "setup has {} levels, config asks for {}",
            setup.operators.num_levels(),
            config.levels
        )));
    }
    let start = Instant::now();
    let ops = &setup.operators;
    let seeds = seed_states(setup, config)?;
    let workers = config.worker_count();
    let plan = CorrectionPlan::new(setup, config);
    let outcomes = run_workers(&plan, seeds.clone(), workers);

    let mut pairs = Vec::with_capacity(outcomes.len());
    for o in outcomes {
        let residual = crate::augmented::algebraic_residual(ops, o.state.level, o.state.eigenvalue, &o.state.vector)
            .unwrap_or_else(|_| T::nan());
        pairs.push(EigenPairReport {
            index: o.index,
            eigenvalue: o.state.eigenvalue,
            residual,
            level: o.state.level,
            history: o.state.history,
            wall_seconds: o.wall_seconds,
            work: o.work,
            vector: o.state.vector,
            failure: o.failure,
        });
    }
    pairs.sort_by(|a, b| {
        a.failure
            .is_some()
            .cmp(&b.failure.is_some())
            .then(a.eigenvalue.partial_cmp(&b.eigenvalue).unwrap_or(std::cmp::Ordering::Equal))
            .then(a.index.cmp(&b.index))
    });

    let finest = config.finest_level();
    let ok: Vec<&EigenPairReport<T>> = pairs.iter().filter(|p| p.failure.is_none() && p.level == finest).collect();
    let orthogonality = orthogonality_report(
        ops,
        finest,
        &ok.iter().map(|p| p.eigenvalue).collect::<Vec<_>>(),
        &ok.iter().map(|p| p.vector.clone()).collect::<Vec<_>>(),
    )?;

    let (theta, gamma) = if config.diagnostics {
        let theta = measure_theta(ops, &config.mg, config.diagnostic_trials, config.seed)?;
        let gamma = if ops.dofs(finest) <= config.dense_cap {
            Some(gamma_from_setup(setup, config, seeds)?)
        } else {
            None
        };
        (Some(theta), gamma)
    } else {
        (None, None)
    };

    Ok(RunReport {
        pairs,
        finest_level: finest,
        finest_dofs: ops.dofs(finest),
        coarse_dofs: ops.dofs(0),
        workers,
        orthogonality,
        theta,
        gamma,
        wall_seconds: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn laplace(levels: usize, m: usize) -> SolverConfig {
        SolverConfig {
            levels,
            eigenpairs: m,
            ..SolverConfig::new(ProblemKind::Laplace2d)
        }
    }

    #[test]
    fn analytic_spectra() {
        let (lo, hi) = ProblemKind::Laplace2d.default_box();
        let got = ProblemKind::Laplace2d.analytic_eigenvalues(&lo, &hi, 6).unwrap();
        let want = [2.0, 5.0, 5.0, 8.0, 10.0, 10.0].map(|c| c * PI * PI);
        for (g, w) in got.iter().zip(want) {
            assert!((g - w).abs() < 1e-12 * w);
        }
        let (lo, hi) = ProblemKind::Laplace3d.default_box();
        let got = ProblemKind::Laplace3d.analytic_eigenvalues(&lo, &hi, 4).unwrap();
        assert!((got[0] - 3.0 * PI * PI).abs() < 1e-12);
        assert!(got[1..4].iter().all(|v| (v - 6.0 * PI * PI).abs() < 1e-12));
        let got = ProblemKind::HarmonicBox.analytic_eigenvalues(&[-4.0; 2], &[4.0; 2], 6).unwrap();
        assert_eq!(got, vec![1.0, 2.0, 2.0, 3.0, 3.0, 3.0]);
        let got = ProblemKind::HarmonicBox.analytic_eigenvalues(&[-4.0; 3], &[4.0; 3], 4).unwrap();
        assert_eq!(got, vec![1.5, 2.5, 2.5, 2.5]);
        // Anisotropic box: (1/2)² spacing on the long axis.
        let got = ProblemKind::Laplace2d.analytic_eigenvalues(&[0.0, 0.0], &[2.0, 1.0], 3).unwrap();
        let want = [1.25, 2.0, 3.25].map(|c| c * PI * PI);
        for (g, w) in got.iter().zip(want) {
            assert!((g - w).abs() < 1e-12 * w, "{got:?}");
        }
        assert!(ProblemKind::VariableCoeff.analytic_eigenvalues(&lo, &hi, 3).is_none());
    }

    #[test]
    fn validation() {
        assert!(laplace(4, 5).validate().is_ok());
        let mut c = laplace(4, 0);
        assert!(c.validate().unwrap_err().to_string().contains("m >= 1"));
        c.eigenpairs = 50;
        assert!(c.validate().is_err());
        c.eigenpairs = 49;
        assert!(c.validate().is_ok());
        c.finest_corrections = 0;
        assert!(c.validate().is_err());
        let c = SolverConfig {
            shift_invert: true,
            ..laplace(3, 1)
        };
        assert!(c.validate().is_err());
        let c = SolverConfig {
            lower: vec![0.0; 3],
            upper: vec![1.0; 3],
            ..laplace(3, 1)
        };
        assert!(c.validate().is_err());
        let c = SolverConfig {
            dense_cap: 20,
            ..laplace(3, 1)
        };
        assert!(matches!(c.validate(), Err(Error::DenseCap { dimension: 49, .. })));
        let c = SolverConfig {
            max_dofs: 100,
            ..laplace(4, 1)
        };
        assert!(matches!(c.validate(), Err(Error::MemoryCap { dofs: 961, .. })));
    }

    #[test]
    fn first_eigenvalue_converges() {
        let mut errors = Vec::new();
        for levels in 3..=5 {
            let r = solve::<f64>(&laplace(levels, 1)).unwrap();
            assert_eq!(r.failures(), 0);
            let err = r.pairs[0].eigenvalue - 2.0 * PI * PI;
            assert!(err > 0.0);
            errors.push(err);
        }
        for w in errors.windows(2) {
            let ratio = w[0] / w[1];
            assert!((3.0..5.0).contains(&ratio), "{errors:?}");
        }
    }

    #[test]
    fn five_pairs_are_ordered() {
        let r = solve::<f64>(&laplace(4, 5)).unwrap();
        let want = [2.0, 5.0, 5.0, 8.0, 10.0].map(|c| c * PI * PI);
        for (p, w) in r.pairs.iter().zip(want) {
            assert!(p.eigenvalue >= w && p.eigenvalue < 1.05 * w, "{} vs {w}", p.eigenvalue);
        }
        assert!(r.eigenvalues().windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn single_level_matches_seed_solve() {
        let c = SolverConfig {
            levels: 1,
            eigenpairs: 3,
            ..SolverConfig::new(ProblemKind::Laplace2d)
        };
        let setup = Setup::<f64>::build(&c).unwrap();
        let r = solve_with_setup(&setup, &c).unwrap();
        let oracle = oracle_fine_solve(&setup.operators, 0, 3, c.dense_cap).unwrap();
        assert_eq!(r.eigenvalues(), oracle.eigenvalues);
        assert_eq!(r.pairs[0].vector, oracle.vector(0));
    }

    #[test]
    fn worker_count_does_not_change_results() {
        let base = solve::<f64>(&SolverConfig {
            workers: Some(1),
            ..laplace(4, 6)
        })
        .unwrap();
        for w in [2, 4, 6, 9] {
            let r = solve::<f64>(&SolverConfig {
                workers: Some(w),
                ..laplace(4, 6)
            })
            .unwrap();
            assert_eq!(r.eigenvalues(), base.eigenvalues());
            for (a, b) in r.pairs.iter().zip(&base.pairs) {
                assert_eq!(a.vector, b.vector);
                assert_eq!(a.work, b.work);
            }
        }
    }

    #[test]
    fn injected_failure_is_isolated() {
        let clean = solve::<f64>(&laplace(3, 2)).unwrap();
        let broken = solve::<f64>(&SolverConfig {
            inject_failure: Some(0),
            ..laplace(3, 2)
        })
        .unwrap();
        assert_eq!(broken.failures(), 1);
        let last = broken.pairs.last().unwrap();
        assert_eq!(last.index, 0);
        assert!(matches!(last.failure, Some(Error::NonFinite(_))));
        let good = &broken.pairs[0];
        let reference = clean.pairs.iter().find(|p| p.index == 1).unwrap();
        assert_eq!(good.eigenvalue, reference.eigenvalue);
        assert_eq!(good.vector, reference.vector);
    }

    #[test]
    fn oracle_vectors_are_orthogonal() {
        let setup = Setup::<f64>::build(&laplace(3, 1)).unwrap();
        let oracle = oracle_fine_solve(&setup.operators, 2, 8, DEFAULT_DENSE_CAP).unwrap();
        let vectors: Vec<Vec<f64>> = (0..8).map(|i| oracle.vector(i)).collect();
        let o = orthogonality_report(&setup.operators, 2, &oracle.eigenvalues, &vectors).unwrap();
        assert!(o <= 1e-9, "{o}");
        let single = orthogonality_report(&setup.operators, 2, &oracle.eigenvalues[..1], &vectors[..1]).unwrap();
        assert_eq!(single, 0.0);
        assert!(matches!(
            oracle_fine_solve(&setup.operators, 2, 1, 100),
            Err(Error::DenseCap { .. })
        ));
    }

    #[test]
    fn oracle_is_upper_bound() {
        let setup = Setup::<f64>::build(&laplace(3, 1)).unwrap();
        let oracle = oracle_fine_solve(&setup.operators, 2, 10, DEFAULT_DENSE_CAP).unwrap();
        let exact = ProblemKind::Laplace2d.analytic_eigenvalues(&[0.0; 2], &[1.0; 2], 10).unwrap();
        for (o, e) in oracle.eigenvalues.iter().zip(&exact) {
            assert!(o >= e);
        }
    }

    #[test]
    fn gamma_below_one_and_smaller_with_exact_solves() {
        let c = laplace(4, 3);
        let g = measure_gamma::<f64>(&c).unwrap();
        assert!(g.gamma < 1.0, "{g:?}");
        let exact = SolverConfig {
            mg: MgConfig {
                cycles_per_solve: 30,
                ..MgConfig::default()
            },
            ..laplace(4, 1)
        };
        let ge = measure_gamma::<f64>(&exact).unwrap();
        assert!(ge.pairs[0].rate < g.pairs[0].rate, "{} vs {}", ge.pairs[0].rate, g.pairs[0].rate);
    }

    #[test]
    fn fit_rate_recovers_geometric_sequence() {
        let e: Vec<f64> = (0..6).map(|i| 0.3f64.powi(i)).collect();
        assert!((fit_rate(&e) - 0.3).abs() < 1e-12);
        assert_eq!(fit_rate(&[1e-13, 1e-14]), 0.0);
    }

    #[test]
    fn f32_runs() {
        let r = solve::<f32>(&laplace(3, 2)).unwrap();
        assert_eq!(r.failures(), 0);
        assert!((r.pairs[0].eigenvalue - 2.0 * std::f32::consts::PI.powi(2)).abs() < 0.5);
    }
}
