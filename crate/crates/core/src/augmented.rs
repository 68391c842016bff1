//! One correction step: an inexact multigrid solve of `A u' = λ M u`
//! followed by a small eigenproblem on the coarse space augmented with the
//! solve's result.
//!
//! With the coarse basis embedded into level `k` by the composite
//! prolongation `E`, a function `E u_H + α ũ` of the augmented space leads to
//! the bordered pencil
//!
//! ```text
//! [ A_H   Eᵀ A ũ ] [u_H]     [ M_H   Eᵀ M ũ ] [u_H]
//! [ ·     ũᵀ A ũ ] [ α ] = λ [ ·     ũᵀ M ũ ] [ α ]
//! ```
//!
//! whose blocks are formed by fine matvecs followed by restriction, never by
//! cross-level integration.

use std::sync::OnceLock;

use crate::assembly::LevelOperators;
use crate::error::{Error, Result};
use crate::linalg::{
    cholesky, reverse_cuthill_mckee, solve_gevp_dense, CsrMatrix, DenseEigenResult, DenseMatrix,
    PencilEigen, WorkCounter,
};
use crate::multigrid::{mg_solve, MgConfig};
use crate::scalar::{all_finite, dot, norm2, scale, Scalar};

/// One row of an eigenpair's convergence history.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct HistoryEntry<T> {
    pub level: usize,
    /// 0 for the value on entering a level, then one per correction step.
    pub iteration: usize,
    pub eigenvalue: T,
    /// `‖A u − λ M u‖₂`
    pub residual: T,
}

/// An eigenpair approximation owned by exactly one worker.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenPairState<T> {
    pub level: usize,
    pub eigenvalue: T,
    /// Interior nodal values at `level`, with `uᵀ A u = 1`.
    pub vector: Vec<T>,
    pub history: Vec<HistoryEntry<T>>,
}

impl<T: Scalar> EigenPairState<T> {
    pub fn new(level: usize, eigenvalue: T, vector: Vec<T>) -> Self {
        Self {
            level,
            eigenvalue,
            vector,
            history: Vec::new(),
        }
    }

    pub(crate) fn record(&mut self, ops: &LevelOperators<T>, iteration: usize) -> Result<()> {
        let residual = algebraic_residual(ops, self.level, self.eigenvalue, &self.vector)?;
        self.history.push(HistoryEntry {
            level: self.level,
            iteration,
            eigenvalue: self.eigenvalue,
            residual,
        });
        Ok(())
    }
}

/// Shared, immutable coarse-space data: dense `A_H`, `M_H` and the
/// embedding of `V_H` into every level.
///
/// Coarse coordinates use a bandwidth-reducing renumbering of the level-0
/// DOFs (see [`CoarseSpace::order`]), which keeps the Cholesky factor of
/// the bordered mass matrix sparse.
#[derive(Debug, Clone)]
pub struct CoarseSpace<T> {
    a_h: DenseMatrix<T>,
    m_h: DenseMatrix<T>,
    order: Vec<usize>,
    /// `embed[k]` maps coarse coordinates to level-`k` DOFs.
    embed: Vec<CsrMatrix<T>>,
    embed_t: Vec<CsrMatrix<T>>,
    /// Eigenpairs of `(A_H, M_H)`, computed on first use.
    plain: OnceLock<DenseEigenResult<T>>,
}

impl<T: Scalar> CoarseSpace<T> {
    pub fn new(ops: &LevelOperators<T>, dense_cap: usize) -> Result<Self> {
        let n_h = ops.dofs(0);
        if n_h + 1 > dense_cap {
            return Err(Error::DenseCap {
                dimension: n_h + 1,
                cap: dense_cap,
            });
        }
        let order = reverse_cuthill_mckee(ops.stiffness(0), ops.mass(0));
        let renumber = CsrMatrix::from_triplets(
            n_h,
            n_h,
            &order.iter().enumerate().map(|(new, &old)| (old, new, T::one())).collect::<Vec<_>>(),
        )?;
        let mut embed = Vec::with_capacity(ops.num_levels());
        let mut embed_t = Vec::with_capacity(ops.num_levels());
        for k in 0..ops.num_levels() {
            let e = ops.composite_prolongation(0, k)?.matmul(&renumber)?;
            embed_t.push(e.transpose());
            embed.push(e);
        }
        let dense = |s: &CsrMatrix<T>| {
            let mut d = DenseMatrix::zeros(n_h, n_h);
            for (i, &oi) in order.iter().enumerate() {
                for (j, &oj) in order.iter().enumerate() {
                    d[(i, j)] = s.get(oi, oj);
                }
            }
            d
        };
        Ok(Self {
            a_h: dense(ops.stiffness(0)),
            m_h: dense(ops.mass(0)),
            order,
            embed,
            embed_t,
            plain: OnceLock::new(),
        })
    }

    pub fn dim(&self) -> usize {
        self.a_h.nrows()
    }

    /// `order[i]` is the level-0 DOF behind coarse coordinate `i`.
    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn embedding(&self, k: usize) -> &CsrMatrix<T> {
        &self.embed[k]
    }

    fn plain_eigen(&self) -> Result<&DenseEigenResult<T>> {
        if let Some(e) = self.plain.get() {
            return Ok(e);
        }
        let e = solve_gevp_dense(&self.a_h, &self.m_h, self.dim())?;
        Ok(self.plain.get_or_init(|| e))
    }
}

/// Dense blocks of the bordered augmented pencil.
#[derive(Debug, Clone, PartialEq)]
pub struct BorderedSystem<T> {
    /// `b_vec[j] = a(φ_j^H, ũ)`
    pub b_vec: Vec<T>,
    pub beta_scalar: T,
    /// `c_vec[j] = b(φ_j^H, ũ)`
    pub c_vec: Vec<T>,
    pub zeta_scalar: T,
}

impl<T: Scalar> BorderedSystem<T> {
    fn build(
        ops: &LevelOperators<T>,
        coarse: &CoarseSpace<T>,
        k: usize,
        u_tilde: &[T],
        work: &mut WorkCounter,
    ) -> Result<Self> {
        let n = u_tilde.len();
        let mut au = vec![T::zero(); n];
        let mut mu = vec![T::zero(); n];
        ops.stiffness(k).spmv_counted(u_tilde, &mut au, work)?;
        ops.mass(k).spmv_counted(u_tilde, &mut mu, work)?;
        let mut b_vec = vec![T::zero(); coarse.dim()];
        let mut c_vec = vec![T::zero(); coarse.dim()];
        coarse.embed_t[k].spmv_counted(&au, &mut b_vec, work)?;
        coarse.embed_t[k].spmv_counted(&mu, &mut c_vec, work)?;
        Ok(Self {
            b_vec,
            beta_scalar: dot(u_tilde, &au),
            c_vec,
            zeta_scalar: dot(u_tilde, &mu),
        })
    }

    /// The `(N_H+1)`-dimensional stiffness and mass matrices.
    pub fn matrices(&self, coarse: &CoarseSpace<T>) -> (DenseMatrix<T>, DenseMatrix<T>) {
        let n = coarse.dim();
        let mut a = DenseMatrix::zeros(n + 1, n + 1);
        let mut m = DenseMatrix::zeros(n + 1, n + 1);
        for i in 0..n {
            for j in 0..n {
                a[(i, j)] = coarse.a_h[(i, j)];
                m[(i, j)] = coarse.m_h[(i, j)];
            }
            a[(i, n)] = self.b_vec[i];
            a[(n, i)] = self.b_vec[i];
            m[(i, n)] = self.c_vec[i];
            m[(n, i)] = self.c_vec[i];
        }
        a[(n, n)] = self.beta_scalar;
        m[(n, n)] = self.zeta_scalar;
        (a, m)
    }
}

/// Index of the candidate with the largest `|b(candidate, ũ)|`, computed as
/// `|u_H · c_vec + α ζ|`. Candidates without the trailing `α` entry (the
/// plain coarse space) score `|u_H · c_vec|`. Ties go to the smaller
/// eigenvalue, then the smaller index.
pub fn select_tracked<T: Scalar>(candidates: &DenseEigenResult<T>, c_vec: &[T], zeta: T) -> usize {
    let n_h = c_vec.len();
    let dim = candidates.eigenvectors.nrows();
    let v = &candidates.eigenvectors;
    let scores: Vec<T> = (0..candidates.len())
        .map(|i| {
            let mut s = T::zero();
            for (j, c) in c_vec.iter().enumerate() {
                s += v[(j, i)] * *c;
            }
            if dim > n_h {
                s += v[(n_h, i)] * zeta;
            }
            s
        })
        .collect();
    pick_tracked(&candidates.eigenvalues, &scores)
}

/// Argmax of `|scores|`; ties go to the smaller eigenvalue, then the
/// smaller index.
fn pick_tracked<T: Scalar>(eigenvalues: &[T], scores: &[T]) -> usize {
    let mut best: Option<(usize, T)> = None;
    for (i, s) in scores.iter().enumerate() {
        let score = s.abs();
        best = match best {
            None => Some((i, score)),
            Some((b, bs)) => {
                let better = score > bs || (score == bs && eigenvalues[i] < eigenvalues[b]);
                if better {
                    Some((i, score))
                } else {
                    Some((b, bs))
                }
            }
        };
    }
    best.map(|(i, _)| i).expect("at least one candidate")
}

/// `‖A_k u − λ M_k u‖₂`
pub fn algebraic_residual<T: Scalar>(ops: &LevelOperators<T>, k: usize, lambda: T, u: &[T]) -> Result<T> {
    let au = ops.stiffness(k).spmv(u)?;
    let mu = ops.mass(k).spmv(u)?;
    let r: Vec<T> = au.iter().zip(&mu).map(|(a, m)| *a - lambda * *m).collect();
    Ok(norm2(&r))
}

/// Pivot threshold relative to the bordered mass trace below which the
/// augmented space counts as degenerate.
const DEGENERATE_PIVOT: f64 = 1e-14;

/// Returns the improved eigenpair; `state` is left untouched.
pub fn correction_step<T: Scalar>(
    ops: &LevelOperators<T>,
    coarse: &CoarseSpace<T>,
    state: &EigenPairState<T>,
    mg: &MgConfig,
    work: &mut WorkCounter,
) -> Result<EigenPairState<T>> {
    let k = state.level;
    let u = &state.vector;
    let n = ops.dofs(k);
    if u.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "eigenvector of length {} at level {k} with {n} DOFs",
            u.len()
        )));
    }
    if !state.eigenvalue.is_finite() || !all_finite(u) {
        return Err(Error::NonFinite("incoming eigenpair"));
    }

    // Step 1: A ũ ≈ λ M u by multigrid, started from u.
    let mut mu = vec![T::zero(); n];
    ops.mass(k).spmv_counted(u, &mut mu, work)?;
    let rhs: Vec<T> = mu.iter().map(|v| state.eigenvalue * *v).collect();
    let u_tilde = mg_solve(ops, k, &rhs, u, mg, work)?;

    // Step 2: eigenproblem on V_H + span{ũ}.
    let (lambda_next, mut next) = if k == 0 {
        // ũ already lies in V_H: the augmented space is V_H itself.
        let eigen = coarse.plain_eigen()?;
        let mut m_tilde = vec![T::zero(); n];
        ops.mass(0).spmv_counted(&u_tilde, &mut m_tilde, work)?;
        let mut c_vec = vec![T::zero(); coarse.dim()];
        coarse.embed_t[0].spmv_counted(&m_tilde, &mut c_vec, work)?;
        let chosen = select_tracked(eigen, &c_vec, T::zero());
        let mut next = vec![T::zero(); n];
        coarse.embed[0].spmv_counted(&eigen.vector(chosen), &mut next, work)?;
        (eigen.eigenvalues[chosen], next)
    } else {
        let bordered = BorderedSystem::build(ops, coarse, k, &u_tilde, work)?;
        let (a, m) = bordered.matrices(coarse);
        let l = match cholesky(&m) {
            Ok(l) => l,
            Err(Error::NotSpd { pivot, .. }) => {
                return Err(Error::DegenerateAugmentedSpace {
                    pivot,
                    threshold: DEGENERATE_PIVOT * m.trace().as_f64(),
                })
            }
            Err(e) => return Err(e),
        };
        let threshold = T::tol(DEGENERATE_PIVOT) * m.trace();
        let min_pivot = (0..m.nrows())
            .map(|i| l[(i, i)] * l[(i, i)])
            .fold(T::infinity(), |p, q| p.min(q));
        if min_pivot < threshold {
            return Err(Error::DegenerateAugmentedSpace {
                pivot: min_pivot.as_f64(),
                threshold: threshold.as_f64(),
            });
        }
        // All candidates are scored in factored form; only the tracked one
        // is expanded. The score is the last column of the bordered mass.
        let pencil = PencilEigen::new(&a, &l, a.nrows())?;
        let mut e_last = vec![T::zero(); a.nrows()];
        e_last[coarse.dim()] = T::one();
        let scores = pencil.m_products(&e_last);
        let chosen = pick_tracked(pencil.eigenvalues(), &scores);
        let lambda = pencil.eigenvalues()[chosen];
        let coeffs = pencil.vector(chosen);
        let n_h = coarse.dim();
        let mut next = vec![T::zero(); n];
        coarse.embed[k].spmv_counted(&coeffs[..n_h], &mut next, work)?;
        let alpha = coeffs[n_h];
        for (x, ut) in next.iter_mut().zip(&u_tilde) {
            *x += alpha * *ut;
        }
        (lambda, next)
    };

    let mut anext = vec![T::zero(); n];
    ops.stiffness(k).spmv_counted(&next, &mut anext, work)?;
    let energy = dot(&next, &anext);
    if !(energy > T::zero()) || !energy.is_finite() {
        return Err(Error::NonFinite("corrected eigenvector energy"));
    }
    let mut factor = T::one() / energy.sqrt();
    if dot(&next, &mu) < T::zero() {
        factor = -factor;
    }
    scale(factor, &mut next);

    let mut out = EigenPairState {
        level: k,
        eigenvalue: lambda_next,
        vector: next,
        history: state.history.clone(),
    };
    let iteration = state
        .history
        .last()
        .filter(|h| h.level == k)
        .map_or(1, |h| h.iteration + 1);
    out.record(ops, iteration)?;
    Ok(out)
}
