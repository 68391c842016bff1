//! Geometric multigrid V-cycle on the stiffness hierarchy with raw CG
//! smoothing. This is the inexact solver of the correction step.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::assembly::LevelOperators;
use crate::error::{Error, Result};
use crate::linalg::{cg_solve, cg_steps, CsrMatrix, WorkCounter};
use crate::scalar::{all_finite, axpy, dot, Scalar};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MgConfig {
    pub pre_smooth_steps: usize,
    pub post_smooth_steps: usize,
    pub cycles_per_solve: usize,
    /// Relative residual target of the CG solve on level 0.
    pub coarsest_rel_tol: f64,
}

impl Default for MgConfig {
    fn default() -> Self {
        Self {
            pre_smooth_steps: 2,
            post_smooth_steps: 2,
            cycles_per_solve: 1,
            coarsest_rel_tol: 1e-12,
        }
    }
}

impl MgConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.coarsest_rel_tol > 0.0 && self.coarsest_rel_tol < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "coarsest_rel_tol must lie in (0, 1), got {}",
                self.coarsest_rel_tol
            )));
        }
        Ok(())
    }
}

fn coarsest_max_iter(n: usize) -> usize {
    10 * n + 100
}

/// One V-cycle for `A_k x = rhs` starting from `x0`.
pub fn v_cycle<T: Scalar>(
    ops: &LevelOperators<T>,
    k: usize,
    rhs: &[T],
    x0: &[T],
    config: &MgConfig,
    work: &mut WorkCounter,
) -> Result<Vec<T>> {
    let a = ops.stiffness(k);
    if rhs.len() != a.nrows() || x0.len() != a.nrows() {
        return Err(Error::DimensionMismatch(format!(
            "v_cycle level {k}: {} DOFs, rhs {}, x0 {}",
            a.nrows(),
            rhs.len(),
            x0.len()
        )));
    }
    if k == 0 {
        let (x, _) = cg_solve(
            a,
            rhs,
            x0,
            T::lit(config.coarsest_rel_tol),
            coarsest_max_iter(a.nrows()),
            work,
        )?;
        return Ok(x);
    }
    let mut x = cg_steps(a, rhs, x0, config.pre_smooth_steps, work)?;

    let mut residual = vec![T::zero(); x.len()];
    a.spmv_counted(&x, &mut residual, work)?;
    for (r, b) in residual.iter_mut().zip(rhs) {
        *r = *b - *r;
    }
    let restrict = ops.restriction(k);
    let mut coarse_rhs = vec![T::zero(); restrict.nrows()];
    restrict.spmv_counted(&residual, &mut coarse_rhs, work)?;
    let zero = vec![T::zero(); coarse_rhs.len()];
    let correction = v_cycle(ops, k - 1, &coarse_rhs, &zero, config, work)?;
    let mut fine_corr = residual;
    ops.prolongation(k).spmv_counted(&correction, &mut fine_corr, work)?;
    axpy(T::one(), &fine_corr, &mut x);

    let x = cg_steps(a, rhs, &x, config.post_smooth_steps, work)?;
    if !all_finite(&x) {
        return Err(Error::NonFinite("multigrid iterate"));
    }
    Ok(x)
}

/// `cycles_per_solve` V-cycles from `x0`.
pub fn mg_solve<T: Scalar>(
    ops: &LevelOperators<T>,
    k: usize,
    rhs: &[T],
    x0: &[T],
    config: &MgConfig,
    work: &mut WorkCounter,
) -> Result<Vec<T>> {
    let mut x = x0.to_vec();
    for _ in 0..config.cycles_per_solve {
        x = v_cycle(ops, k, rhs, &x, config, work)?;
    }
    Ok(x)
}

pub(crate) fn energy_norm<T: Scalar>(a: &CsrMatrix<T>, v: &[T]) -> Result<T> {
    Ok(dot(v, &a.spmv(v)?).max(T::zero()).sqrt())
}

/// Oracle solve by CG to a tight tolerance, independent of multigrid.
pub(crate) fn oracle_linear_solve<T: Scalar>(a: &CsrMatrix<T>, rhs: &[T]) -> Result<Vec<T>> {
    let mut scratch = WorkCounter::default();
    let zero = vec![T::zero(); rhs.len()];
    let (x, _) = cg_solve(a, rhs, &zero, T::tol(1e-13), 20 * rhs.len() + 1000, &mut scratch)?;
    Ok(x)
}

/// Estimates the energy-norm contraction `θ̂` of [`mg_solve`] on level `k`:
/// the worst ratio `‖x* − x₁‖_A / ‖x* − x₀‖_A` over random right-hand sides
/// and starting vectors.
pub fn measure_contraction<T: Scalar>(
    ops: &LevelOperators<T>,
    k: usize,
    config: &MgConfig,
    trials: usize,
    seed: u64,
) -> Result<T> {
    if trials == 0 {
        return Err(Error::InvalidConfig("measure_contraction needs at least one trial".into()));
    }
    let a = ops.stiffness(k);
    let n = a.nrows();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = T::zero();
    for _ in 0..trials {
        let rhs: Vec<T> = (0..n).map(|_| T::lit(rng.gen_range(-1.0..1.0))).collect();
        let x0: Vec<T> = (0..n).map(|_| T::lit(rng.gen_range(-1.0..1.0))).collect();
        let exact = oracle_linear_solve(a, &rhs)?;
        let mut work = WorkCounter::default();
        let x1 = mg_solve(ops, k, &rhs, &x0, config, &mut work)?;
        let e0: Vec<T> = exact.iter().zip(&x0).map(|(p, q)| *p - *q).collect();
        let e1: Vec<T> = exact.iter().zip(&x1).map(|(p, q)| *p - *q).collect();
        let ratio = energy_norm(a, &e1)? / energy_norm(a, &e0)?;
        worst = worst.max(ratio);
    }
    Ok(worst)
}
