//! Sparse kernels, conjugate gradients and the dense symmetric generalized
//! eigensolver.
//!
//! Every reduction runs left to right in a fixed order, so identical inputs
//! give bit-identical outputs no matter which thread calls in.

use crate::error::{Error, Result};
use crate::scalar::{axpy, dot, norm2, Scalar};

/// Work performed by one caller. Each worker owns its own counter.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct WorkCounter {
    /// Sparse matrix-vector products.
    pub matvecs: u64,
    /// Stored entries touched by those products.
    pub matvec_work: u64,
    /// CG iterations, smoothing and coarsest solves together.
    pub cg_steps: u64,
}

impl WorkCounter {
    pub fn merge(&mut self, other: &WorkCounter) {
        self.matvecs += other.matvecs;
        self.matvec_work += other.matvec_work;
        self.cg_steps += other.cg_steps;
    }
}

/// Compressed sparse row matrix with strictly increasing column indices per
/// row.
#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix<T> {
    nrows: usize,
    ncols: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<T>,
}

impl<T: Scalar> CsrMatrix<T> {
    /// Builds from `(row, col, value)` triplets; duplicates are summed in
    /// input order.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, T)]) -> Result<Self> {
        let mut order: Vec<usize> = (0..triplets.len()).collect();
        for &(r, c, _) in triplets {
            if r >= nrows || c >= ncols {
                return Err(Error::DimensionMismatch(format!(
                    "triplet ({r}, {c}) outside {nrows}x{ncols}"
                )));
            }
        }
        order.sort_by_key(|&t| (triplets[t].0, triplets[t].1));
        let mut row_ptr = vec![0usize; nrows + 1];
        let mut col_idx = Vec::with_capacity(triplets.len());
        let mut values: Vec<T> = Vec::with_capacity(triplets.len());
        let mut last: Option<(usize, usize)> = None;
        for t in order {
            let (r, c, v) = triplets[t];
            if last == Some((r, c)) {
                *values.last_mut().expect("entry exists") += v;
            } else {
                col_idx.push(c);
                values.push(v);
                row_ptr[r + 1] += 1;
                last = Some((r, c));
            }
        }
        for r in 0..nrows {
            row_ptr[r + 1] += row_ptr[r];
        }
        Ok(Self {
            nrows,
            ncols,
            row_ptr,
            col_idx,
            values,
        })
    }

    /// Zero-valued matrix with the given sorted, deduplicated row patterns.
    pub fn from_pattern(ncols: usize, rows: &[Vec<usize>]) -> Self {
        let mut row_ptr = Vec::with_capacity(rows.len() + 1);
        row_ptr.push(0);
        let mut col_idx = Vec::new();
        for row in rows {
            debug_assert!(row.windows(2).all(|w| w[0] < w[1]));
            col_idx.extend_from_slice(row);
            row_ptr.push(col_idx.len());
        }
        let values = vec![T::zero(); col_idx.len()];
        Self {
            nrows: rows.len(),
            ncols,
            row_ptr,
            col_idx,
            values,
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            nrows: n,
            ncols: n,
            row_ptr: (0..=n).collect(),
            col_idx: (0..n).collect(),
            values: vec![T::one(); n],
        }
    }

    pub fn from_dense(a: &DenseMatrix<T>) -> Self {
        let mut trip = Vec::new();
        for i in 0..a.nrows() {
            for j in 0..a.ncols() {
                if a[(i, j)] != T::zero() {
                    trip.push((i, j, a[(i, j)]));
                }
            }
        }
        Self::from_triplets(a.nrows(), a.ncols(), &trip).expect("indices in range")
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, r: usize) -> (&[usize], &[T]) {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        (&self.col_idx[span.clone()], &self.values[span])
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        let (cols, vals) = self.row(r);
        match cols.binary_search(&c) {
            Ok(i) => vals[i],
            Err(_) => T::zero(),
        }
    }

    /// Adds `v` to an entry that is part of the pattern.
    pub fn add_to(&mut self, r: usize, c: usize, v: T) {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        let i = self.col_idx[span.clone()]
            .binary_search(&c)
            .expect("entry in sparsity pattern");
        self.values[span.start + i] += v;
    }

    pub fn spmv_into(&self, x: &[T], y: &mut [T]) -> Result<()> {
        if x.len() != self.ncols || y.len() != self.nrows {
            return Err(Error::DimensionMismatch(format!(
                "spmv: {}x{} matrix, x of length {}, y of length {}",
                self.nrows,
                self.ncols,
                x.len(),
                y.len()
            )));
        }
        for (r, yr) in y.iter_mut().enumerate() {
            let mut acc = T::zero();
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            *yr = acc;
        }
        Ok(())
    }

    /// `y = A x`
    pub fn spmv(&self, x: &[T]) -> Result<Vec<T>> {
        let mut y = vec![T::zero(); self.nrows];
        self.spmv_into(x, &mut y)?;
        Ok(y)
    }

    pub(crate) fn spmv_counted(&self, x: &[T], y: &mut [T], work: &mut WorkCounter) -> Result<()> {
        work.matvecs += 1;
        work.matvec_work += self.nnz() as u64;
        self.spmv_into(x, y)
    }

    /// `y = Aᵀ x`, scattering rows in ascending order.
    pub fn spmv_transpose(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.nrows {
            return Err(Error::DimensionMismatch(format!(
                "spmv_transpose: {}x{} matrix, x of length {}",
                self.nrows,
                self.ncols,
                x.len()
            )));
        }
        let mut y = vec![T::zero(); self.ncols];
        for (r, xr) in x.iter().enumerate() {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                y[self.col_idx[k]] += self.values[k] * *xr;
            }
        }
        Ok(y)
    }

    pub fn transpose(&self) -> Self {
        let mut counts = vec![0usize; self.ncols + 1];
        for &c in &self.col_idx {
            counts[c + 1] += 1;
        }
        for c in 0..self.ncols {
            counts[c + 1] += counts[c];
        }
        let mut next = counts.clone();
        let mut col_idx = vec![0usize; self.nnz()];
        let mut values = vec![T::zero(); self.nnz()];
        for r in 0..self.nrows {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                let c = self.col_idx[k];
                col_idx[next[c]] = r;
                values[next[c]] = self.values[k];
                next[c] += 1;
            }
        }
        Self {
            nrows: self.ncols,
            ncols: self.nrows,
            row_ptr: counts,
            col_idx,
            values,
        }
    }

    /// Sparse product `self · rhs`.
    pub fn matmul(&self, rhs: &CsrMatrix<T>) -> Result<Self> {
        if self.ncols != rhs.nrows {
            return Err(Error::DimensionMismatch(format!(
                "matmul: {}x{} times {}x{}",
                self.nrows, self.ncols, rhs.nrows, rhs.ncols
            )));
        }
        let mut acc = vec![T::zero(); rhs.ncols];
        let mut touched = vec![false; rhs.ncols];
        let mut cols: Vec<usize> = Vec::new();
        let mut row_ptr = vec![0usize];
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        for r in 0..self.nrows {
            for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                let a = self.values[k];
                let (rc, rv) = rhs.row(self.col_idx[k]);
                for (c, b) in rc.iter().zip(rv) {
                    if !touched[*c] {
                        touched[*c] = true;
                        cols.push(*c);
                    }
                    acc[*c] += a * *b;
                }
            }
            cols.sort_unstable();
            for &c in &cols {
                col_idx.push(c);
                values.push(acc[c]);
                acc[c] = T::zero();
                touched[c] = false;
            }
            cols.clear();
            row_ptr.push(col_idx.len());
        }
        Ok(Self {
            nrows: self.nrows,
            ncols: rhs.ncols,
            row_ptr,
            col_idx,
            values,
        })
    }

    pub fn to_dense(&self) -> DenseMatrix<T> {
        let mut d = DenseMatrix::zeros(self.nrows, self.ncols);
        for r in 0..self.nrows {
            let (cols, vals) = self.row(r);
            for (c, v) in cols.iter().zip(vals) {
                d[(r, *c)] = *v;
            }
        }
        d
    }

    /// Largest `|a_ij - a_ji|` relative to the largest entry magnitude.
    pub fn symmetry_defect(&self) -> T {
        let mut scale = T::zero();
        let mut defect = T::zero();
        for r in 0..self.nrows {
            let (cols, vals) = self.row(r);
            for (c, v) in cols.iter().zip(vals) {
                scale = scale.max(v.abs());
                defect = defect.max((*v - self.get(*c, r)).abs());
            }
        }
        if scale > T::zero() {
            defect / scale
        } else {
            T::zero()
        }
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseMatrix<T> {
    nrows: usize,
    ncols: usize,
    data: Vec<T>,
}

impl<T: Scalar> DenseMatrix<T> {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            data: vec![T::zero(); nrows * ncols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = T::one();
        }
        m
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Self {
        let nrows = rows.len();
        let ncols = rows.first().map_or(0, |r| r.len());
        let mut data = Vec::with_capacity(nrows * ncols);
        for r in rows {
            assert_eq!(r.len(), ncols, "ragged rows");
            data.extend_from_slice(r);
        }
        Self { nrows, ncols, data }
    }

    pub fn from_diagonal(diag: &[T]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, d) in diag.iter().enumerate() {
            m[(i, i)] = *d;
        }
        m
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.ncols..(r + 1) * self.ncols]
    }

    pub fn matvec(&self, x: &[T]) -> Vec<T> {
        (0..self.nrows).map(|r| dot(self.row(r), x)).collect()
    }

    pub fn frobenius_norm(&self) -> T {
        norm2(&self.data)
    }

    pub fn trace(&self) -> T {
        (0..self.nrows.min(self.ncols)).map(|i| self[(i, i)]).sum()
    }

    /// Column `c` as an owned vector.
    pub fn column(&self, c: usize) -> Vec<T> {
        (0..self.nrows).map(|r| self[(r, c)]).collect()
    }
}

impl<T> std::ops::Index<(usize, usize)> for DenseMatrix<T> {
    type Output = T;
    #[inline]
    fn index(&self, (r, c): (usize, usize)) -> &T {
        &self.data[r * self.ncols + c]
    }
}

impl<T> std::ops::IndexMut<(usize, usize)> for DenseMatrix<T> {
    #[inline]
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut T {
        &mut self.data[r * self.ncols + c]
    }
}

/// Exactly `steps` CG iterations on `A x = rhs` from `x0` (the multigrid
/// smoother). Stops early only if the residual becomes exactly zero.
pub fn cg_steps<T: Scalar>(
    a: &CsrMatrix<T>,
    rhs: &[T],
    x0: &[T],
    steps: usize,
    work: &mut WorkCounter,
) -> Result<Vec<T>> {
    let mut x = x0.to_vec();
    if steps == 0 {
        return Ok(x);
    }
    let n = x.len();
    let mut r = vec![T::zero(); n];
    a.spmv_counted(&x, &mut r, work)?;
    for (ri, bi) in r.iter_mut().zip(rhs) {
        *ri = *bi - *ri;
    }
    let mut p = r.clone();
    let mut ap = vec![T::zero(); n];
    let mut rr = dot(&r, &r);
    if !rr.is_finite() {
        return Err(Error::NonFinite("CG residual"));
    }
    for _ in 0..steps {
        if rr == T::zero() {
            break;
        }
        a.spmv_counted(&p, &mut ap, work)?;
        work.cg_steps += 1;
        let pap = dot(&p, &ap);
        if !pap.is_finite() || pap <= T::zero() {
            return Err(Error::NonFinite("CG curvature (matrix not SPD?)"));
        }
        let alpha = rr / pap;
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &ap, &mut r);
        let rr_next = dot(&r, &r);
        if !rr_next.is_finite() {
            return Err(Error::NonFinite("CG residual"));
        }
        let beta = rr_next / rr;
        for (pi, ri) in p.iter_mut().zip(&r) {
            *pi = *ri + beta * *pi;
        }
        rr = rr_next;
    }
    Ok(x)
}

/// CG until `‖rhs − A x‖₂ ≤ rel_tol · ‖rhs‖₂`. Returns the iterate and the
/// number of iterations taken.
pub fn cg_solve<T: Scalar>(
    a: &CsrMatrix<T>,
    rhs: &[T],
    x0: &[T],
    rel_tol: T,
    max_iter: usize,
    work: &mut WorkCounter,
) -> Result<(Vec<T>, usize)> {
    let n = x0.len();
    let rhs_norm = norm2(rhs);
    if !rhs_norm.is_finite() || !crate::scalar::all_finite(x0) {
        return Err(Error::NonFinite("CG input"));
    }
    if rhs_norm == T::zero() {
        return Ok((vec![T::zero(); n], 0));
    }
    let target = rel_tol * rhs_norm;
    let mut x = x0.to_vec();
    let mut r = vec![T::zero(); n];
    a.spmv_counted(&x, &mut r, work)?;
    for (ri, bi) in r.iter_mut().zip(rhs) {
        *ri = *bi - *ri;
    }
    let mut p = r.clone();
    let mut ap = vec![T::zero(); n];
    let mut rr = dot(&r, &r);
    for it in 0..max_iter {
        if rr.sqrt() <= target {
            return Ok((x, it));
        }
        a.spmv_counted(&p, &mut ap, work)?;
        work.cg_steps += 1;
        let pap = dot(&p, &ap);
        if !pap.is_finite() || pap <= T::zero() {
            return Err(Error::NonFinite("CG curvature (matrix not SPD?)"));
        }
        let alpha = rr / pap;
        axpy(alpha, &p, &mut x);
        axpy(-alpha, &ap, &mut r);
        let rr_next = dot(&r, &r);
        let beta = rr_next / rr;
        for (pi, ri) in p.iter_mut().zip(&r) {
            *pi = *ri + beta * *pi;
        }
        rr = rr_next;
    }
    if rr.sqrt() <= target {
        return Ok((x, max_iter));
    }
    Err(Error::NoConvergence {
        iterations: max_iter,
        rel_tol: rel_tol.as_f64(),
        achieved: (rr.sqrt() / rhs_norm).as_f64(),
    })
}

/// Index of the first nonzero entry of each row's lower part. Cholesky fill
/// stays inside this envelope.
fn lower_envelope<T: Scalar>(m: &DenseMatrix<T>) -> Vec<usize> {
    (0..m.nrows())
        .map(|i| m.row(i)[..i].iter().position(|x| *x != T::zero()).unwrap_or(i))
        .collect()
}

/// Lower Cholesky factor `L` with `M = L Lᵀ`.
pub fn cholesky<T: Scalar>(m: &DenseMatrix<T>) -> Result<DenseMatrix<T>> {
    let n = m.nrows();
    if m.ncols() != n {
        return Err(Error::DimensionMismatch("cholesky of a non-square matrix".into()));
    }
    let first = lower_envelope(m);
    let mut l = DenseMatrix::zeros(n, n);
    for i in 0..n {
        for j in first[i]..=i {
            let lo = first[i].max(first[j]);
            let mut s = m[(i, j)];
            for k in lo..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            if j == i {
                if !(s > T::zero()) || !s.is_finite() {
                    return Err(Error::NotSpd {
                        column: i,
                        pivot: s.as_f64(),
                    });
                }
                l[(i, i)] = s.sqrt();
            } else {
                l[(i, j)] = s / l[(j, j)];
            }
        }
    }
    Ok(l)
}

/// Eigenpairs of a dense symmetric-definite pencil, ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseEigenResult<T> {
    pub eigenvalues: Vec<T>,
    /// One column per eigenvalue, scaled so that `xᵀ A x = 1` whenever the
    /// eigenvalue is positive (otherwise `xᵀ M x = 1`).
    pub eigenvectors: DenseMatrix<T>,
}

impl<T: Scalar> DenseEigenResult<T> {
    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    pub fn vector(&self, i: usize) -> Vec<T> {
        self.eigenvectors.column(i)
    }
}

/// Smallest `count` eigenpairs of `A x = λ M x` via the Cholesky reduction
/// `L⁻¹ A L⁻ᵀ y = λ y`, `x = L⁻ᵀ y`.
///
/// All eigenvalues are computed, and eigenvector `i` depends only on
/// eigenvalues `≤ λᵢ`, so the returned pairs do not depend on `count` at
/// the bit level.
pub fn solve_gevp_dense<T: Scalar>(
    a: &DenseMatrix<T>,
    m: &DenseMatrix<T>,
    count: usize,
) -> Result<DenseEigenResult<T>> {
    let l = cholesky(m)?;
    solve_gevp_with_factor(a, &l, count)
}

/// Reverse Cuthill-McKee ordering of the symmetric pattern of `a + b`.
/// `order[new] = old`.
pub fn reverse_cuthill_mckee<T: Scalar>(a: &CsrMatrix<T>, b: &CsrMatrix<T>) -> Vec<usize> {
    let n = a.nrows();
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for mat in [a, b] {
        for (r, list) in adj.iter_mut().enumerate() {
            list.extend(mat.row(r).0.iter().copied().filter(|&c| c != r && c < n));
        }
    }
    for list in adj.iter_mut() {
        list.sort_unstable();
        list.dedup();
    }
    let degree: Vec<usize> = adj.iter().map(Vec::len).collect();
    let mut seen = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut queue = std::collections::VecDeque::new();
    while order.len() < n {
        let start = (0..n)
            .filter(|&v| !seen[v])
            .min_by_key(|&v| (degree[v], v))
            .expect("unvisited vertex");
        seen[start] = true;
        queue.push_back(start);
        while let Some(v) = queue.pop_front() {
            order.push(v);
            let mut next: Vec<usize> = adj[v].iter().copied().filter(|&u| !seen[u]).collect();
            next.sort_by_key(|&u| (degree[u], u));
            for u in next {
                seen[u] = true;
                queue.push_back(u);
            }
        }
    }
    order.reverse();
    order
}

/// [`solve_gevp_dense`] for sparse matrices, after a bandwidth-reducing
/// reordering so that the Cholesky factor stays inside a narrow envelope.
pub fn solve_gevp_sparse<T: Scalar>(
    a: &CsrMatrix<T>,
    m: &CsrMatrix<T>,
    count: usize,
) -> Result<DenseEigenResult<T>> {
    let n = a.nrows();
    if a.ncols() != n || m.nrows() != n || m.ncols() != n {
        return Err(Error::DimensionMismatch(format!(
            "GEVP: A is {}x{}, M is {}x{}",
            a.nrows(),
            a.ncols(),
            m.nrows(),
            m.ncols()
        )));
    }
    let order = reverse_cuthill_mckee(a, m);
    let mut position = vec![0; n];
    for (new, &old) in order.iter().enumerate() {
        position[old] = new;
    }
    let permuted = |s: &CsrMatrix<T>| {
        let mut d = DenseMatrix::zeros(n, n);
        for (new, &old) in order.iter().enumerate() {
            let (cols, vals) = s.row(old);
            for (c, v) in cols.iter().zip(vals) {
                d[(new, position[*c])] = *v;
            }
        }
        d
    };
    let r = solve_gevp_dense(&permuted(a), &permuted(m), count)?;
    let mut vectors = DenseMatrix::zeros(n, r.len());
    for (new, &old) in order.iter().enumerate() {
        vectors.data[old * r.len()..(old + 1) * r.len()].copy_from_slice(r.eigenvectors.row(new));
    }
    Ok(DenseEigenResult {
        eigenvalues: r.eigenvalues,
        eigenvectors: vectors,
    })
}

pub(crate) fn solve_gevp_with_factor<T: Scalar>(
    a: &DenseMatrix<T>,
    l: &DenseMatrix<T>,
    count: usize,
) -> Result<DenseEigenResult<T>> {
    let pencil = PencilEigen::new(a, l, count)?;
    let mut vectors = DenseMatrix::zeros(a.nrows(), count);
    for col in 0..count {
        for (i, x) in pencil.vector(col).into_iter().enumerate() {
            vectors[(i, col)] = x;
        }
    }
    Ok(DenseEigenResult {
        eigenvalues: pencil.eigenvalues()[..count].to_vec(),
        eigenvectors: vectors,
    })
}

/// All eigenvalues of `A x = λ M x` given `M = L Lᵀ`, with the `count`
/// smallest eigenvectors kept in tridiagonal form and expanded on request.
pub(crate) struct PencilEigen<'l, T> {
    l: &'l DenseMatrix<T>,
    first: Vec<usize>,
    /// Last row touching each column of `L`.
    last: Vec<usize>,
    eig: SymmetricEigen<T>,
}

impl<'l, T: Scalar> PencilEigen<'l, T> {
    pub(crate) fn new(a: &DenseMatrix<T>, l: &'l DenseMatrix<T>, count: usize) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n || l.nrows() != n {
            return Err(Error::DimensionMismatch(format!(
                "GEVP: A is {}x{}, M is {}x{}",
                a.nrows(),
                a.ncols(),
                l.nrows(),
                l.ncols()
            )));
        }
        if count > n {
            return Err(Error::TooManyEigenpairs {
                requested: count,
                dimension: n,
            });
        }
        let first = lower_envelope(l);
        // W = L⁻¹ A by forward substitution on whole rows.
        let mut w = a.clone();
        for i in 0..n {
            let (done, rest) = w.data.split_at_mut(i * n);
            let wi = &mut rest[..n];
            for k in first[i]..i {
                let lik = l[(i, k)];
                for (x, y) in wi.iter_mut().zip(&done[k * n..(k + 1) * n]) {
                    *x -= lik * *y;
                }
            }
            let lii = l[(i, i)];
            for x in wi.iter_mut() {
                *x /= lii;
            }
        }
        // C = W L⁻ᵀ, i.e. Cᵀ = L⁻¹ Wᵀ; solve on rows of W.
        let mut c = DenseMatrix::zeros(n, n);
        for r in 0..n {
            for j in 0..n {
                let mut s = w[(r, j)];
                for k in first[j]..j {
                    s -= l[(j, k)] * c[(r, k)];
                }
                c[(r, j)] = s / l[(j, j)];
            }
        }
        let half = T::lit(0.5);
        for i in 0..n {
            for j in i + 1..n {
                let s = (c[(i, j)] + c[(j, i)]) * half;
                c[(i, j)] = s;
                c[(j, i)] = s;
            }
        }
        let eig = SymmetricEigen::new(c, count)?;
        let mut last = (0..n).collect::<Vec<_>>();
        for (i, &f) in first.iter().enumerate() {
            for lj in last.iter_mut().take(i).skip(f) {
                *lj = i;
            }
        }
        Ok(Self { l, first, last, eig })
    }

    pub(crate) fn eigenvalues(&self) -> &[T] {
        &self.eig.values
    }

    fn scale(&self, i: usize) -> T {
        let lambda = self.eig.values[i];
        if lambda > T::zero() {
            T::one() / lambda.sqrt()
        } else {
            T::one()
        }
    }

    /// Eigenvector `i`, scaled as in [`DenseEigenResult`].
    pub(crate) fn vector(&self, i: usize) -> Vec<T> {
        let y = self.eig.vector(i);
        let l = self.l;
        let n = y.len();
        // Back substitution Lᵀ x = y.
        let mut x = vec![T::zero(); n];
        for i in (0..n).rev() {
            let mut s = y[i];
            for k in i + 1..=self.last[i] {
                s -= l[(k, i)] * x[k];
            }
            x[i] = s / l[(i, i)];
        }
        let f = self.scale(i);
        x.iter_mut().for_each(|v| *v *= f);
        x
    }

    /// `xᵢᵀ M w` for every kept eigenvector `xᵢ`, without expanding them.
    /// Signs may differ from [`PencilEigen::vector`].
    pub(crate) fn m_products(&self, w: &[T]) -> Vec<T> {
        // xᵀ M w = yᵀ Lᵀ w · scale
        let n = w.len();
        let mut ltw = vec![T::zero(); n];
        for (i, wi) in w.iter().enumerate() {
            for (k, v) in ltw.iter_mut().enumerate().take(i + 1).skip(self.first[i]) {
                *v += self.l[(i, k)] * *wi;
            }
        }
        let g = self.eig.project(&ltw);
        (0..self.eig.kept())
            .map(|i| self.eig.tridiagonal_dot(i, &g) * self.scale(i))
            .collect()
    }
}

/// Eigenvalues (ascending, all `n`) of a symmetric matrix, and unit
/// eigenvectors for the `count` smallest as consecutive rows of a flat
/// buffer. Each eigenvector's largest-magnitude entry is positive.
pub fn symmetric_eigen<T: Scalar>(a: DenseMatrix<T>, count: usize) -> Result<(Vec<T>, Vec<T>)> {
    let eig = SymmetricEigen::new(a, count)?;
    let mut vectors = Vec::with_capacity(count * eig.n);
    for i in 0..count {
        vectors.extend(eig.vector(i));
    }
    Ok((eig.values, vectors))
}

/// `Q T Qᵀ` factorization of a symmetric matrix with the tridiagonal
/// eigenvectors of the smallest eigenvalues.
struct SymmetricEigen<T> {
    n: usize,
    values: Vec<T>,
    /// Householder vectors, row `k` holding reflector `k` from column `k+1`.
    h: Vec<T>,
    tau: Vec<T>,
    /// `(offset, z)`: eigenvector of one unreduced block starting at `offset`.
    z: Vec<(usize, Vec<T>)>,
}

impl<T: Scalar> SymmetricEigen<T> {
    fn new(a: DenseMatrix<T>, count: usize) -> Result<Self> {
        let n = a.nrows();
        if count > n {
            return Err(Error::TooManyEigenpairs {
                requested: count,
                dimension: n,
            });
        }
        if a.data.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("dense eigensolver input"));
        }
        let mut h = a.data;
        let mut d = vec![T::zero(); n];
        let mut e = vec![T::zero(); n];
        let mut tau = vec![T::zero(); n];
        tridiagonalize(n, &mut h, &mut d, &mut e, &mut tau);

        // Split into unreduced blocks and take each block's eigenvalues.
        let eps = T::epsilon();
        let mut blocks = Vec::new();
        let mut start = 0;
        for i in 0..n {
            let split = i + 1 == n || e[i].abs() <= eps * (d[i].abs() + d[i + 1].abs());
            if split {
                blocks.push((start, i + 1));
                start = i + 1;
            }
        }
        // (eigenvalue, block, local index)
        let mut all = Vec::with_capacity(n);
        for (b, &(lo, hi)) in blocks.iter().enumerate() {
            let mut bd = d[lo..hi].to_vec();
            let mut be = e[lo..hi].to_vec();
            if let Some(x) = be.last_mut() {
                *x = T::zero();
            }
            tridiagonal_eigenvalues(&mut bd, &mut be)?;
            bd.sort_by(|p, q| p.partial_cmp(q).unwrap_or(std::cmp::Ordering::Equal));
            all.extend(bd.into_iter().enumerate().map(|(j, v)| (v, b, j)));
        }
        all.sort_by(|p, q| {
            p.0.partial_cmp(&q.0)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(p.1.cmp(&q.1))
                .then(p.2.cmp(&q.2))
        });
        let values: Vec<T> = all.iter().map(|p| p.0).collect();

        let tnorm = (0..n)
            .map(|i| d[i].abs() + e[i].abs() + if i > 0 { e[i - 1].abs() } else { T::zero() })
            .fold(T::zero(), T::max);
        let mut z = Vec::with_capacity(count);
        // Indices into `z` already computed, per block.
        let mut done: Vec<Vec<(T, usize)>> = vec![Vec::new(); blocks.len()];
        for &(lambda, b, local) in all.iter().take(count) {
            let (lo, hi) = blocks[b];
            let earlier: Vec<(T, &[T])> = done[b].iter().map(|&(mu, r)| (mu, z_slice(&z, r))).collect();
            let v = block_eigenvector(&d[lo..hi], &e[lo..hi - 1], lambda, local, tnorm, &earlier)?;
            done[b].push((lambda, z.len()));
            z.push((lo, v));
        }
        Ok(Self {
            n,
            values,
            h,
            tau,
            z,
        })
    }

    fn kept(&self) -> usize {
        self.z.len()
    }

    /// `Q zᵢ`, with its largest-magnitude entry made positive.
    fn vector(&self, i: usize) -> Vec<T> {
        let n = self.n;
        let (lo, z) = &self.z[i];
        let mut out = vec![T::zero(); n];
        out[*lo..lo + z.len()].copy_from_slice(z);
        // x = H₀ H₁ ⋯ z
        for k in (0..n.saturating_sub(2)).rev() {
            if self.tau[k] == T::zero() {
                continue;
            }
            let v = &self.h[k * n + k + 1..(k + 1) * n];
            let tail = &mut out[k + 1..];
            let s = self.tau[k] * dot(v, tail);
            axpy(-s, v, tail);
        }
        let big = out.iter().fold(T::zero(), |m, x| if x.abs() > m.abs() { *x } else { m });
        if big < T::zero() {
            out.iter_mut().for_each(|x| *x = -*x);
        }
        out
    }

    /// `Qᵀ g`
    fn project(&self, g: &[T]) -> Vec<T> {
        let n = self.n;
        let mut out = g.to_vec();
        for k in 0..n.saturating_sub(2) {
            if self.tau[k] == T::zero() {
                continue;
            }
            let v = &self.h[k * n + k + 1..(k + 1) * n];
            let tail = &mut out[k + 1..];
            let s = self.tau[k] * dot(v, tail);
            axpy(-s, v, tail);
        }
        out
    }

    /// `(Q zᵢ)ᵀ g` given `projected = Qᵀ g`, before the sign normalization
    /// of [`SymmetricEigen::vector`].
    fn tridiagonal_dot(&self, i: usize, projected: &[T]) -> T {
        let (lo, z) = &self.z[i];
        dot(z, &projected[*lo..lo + z.len()])
    }
}

fn z_slice<T>(z: &[(usize, Vec<T>)], r: usize) -> &[T] {
    &z[r].1
}

/// Turns `x` into a Householder vector with leading 1 so that
/// `(I − τ v vᵀ) x = β e₁`; returns `(τ, β)`.
fn householder<T: Scalar>(x: &mut [T]) -> (T, T) {
    let alpha = x[0];
    let xnorm = norm2(&x[1..]);
    x[0] = T::one();
    if xnorm == T::zero() {
        return (T::zero(), alpha);
    }
    let mut beta = alpha.hypot(xnorm);
    if alpha > T::zero() {
        beta = -beta;
    }
    let inv = T::one() / (alpha - beta);
    for xi in x[1..].iter_mut() {
        *xi *= inv;
    }
    ((beta - alpha) / beta, beta)
}

/// Householder reduction of the symmetric row-major matrix `a` to
/// tridiagonal form using only its upper triangle. Reflector `k` ends up in
/// row `k` (entries `k+1..`, leading entry 1) with scalar `tau[k]`; `d` is
/// the diagonal and `e[k]` couples `k` and `k+1`.
///
/// The rank-2 update of step `k` and the product `A v` of step `k+1` share
/// one sweep over the trailing rows.
fn tridiagonalize<T: Scalar>(n: usize, a: &mut [T], d: &mut [T], e: &mut [T], tau: &mut [T]) {
    if n == 0 {
        return;
    }
    d[0] = a[0];
    if n == 1 {
        return;
    }
    let mut p = vec![T::zero(); n];
    let mut w = vec![T::zero(); n];
    let (t0, b0) = householder(&mut a[1..n]);
    tau[0] = t0;
    e[0] = b0;
    if t0 != T::zero() {
        let (head, trail) = a.split_at_mut(n);
        symv_upper(n, trail, 1, &head[1..], &mut p[1..]);
        p[1..].iter_mut().for_each(|x| *x *= t0);
    }
    let half = T::lit(0.5);
    for k in 0..n - 1 {
        let t = tau[k];
        let (head, trail) = a.split_at_mut((k + 1) * n);
        let v = &head[k * n + k + 1..];
        if t != T::zero() {
            let kk = -half * t * dot(&p[k + 1..], v);
            for ((wi, pi), vi) in w[k + 1..].iter_mut().zip(&p[k + 1..]).zip(v) {
                *wi = *pi + kk * *vi;
            }
        }
        let w = &w[k + 1..];
        // First trailing row: update, then it becomes the next reflector.
        let (row1, rest) = trail.split_at_mut(n);
        let row1 = &mut row1[k + 1..];
        if t != T::zero() {
            rank2_row(row1, v, w, 0);
        }
        d[k + 1] = row1[0];
        if k + 2 >= n {
            break;
        }
        let (tn, bn) = householder(&mut row1[1..]);
        tau[k + 1] = tn;
        e[k + 1] = bn;
        let vn: &[T] = &row1[1..];
        let pn = &mut p[k + 2..];
        pn.iter_mut().for_each(|x| *x = T::zero());
        for (r, i) in (k + 2..n).enumerate() {
            let row = &mut rest[r * n + i..(r + 1) * n];
            if t != T::zero() {
                rank2_row(row, v, w, i - k - 1);
            }
            if tn != T::zero() {
                let li = i - k - 2;
                let mut s = row[0] * vn[li];
                for (aij, vj) in row[1..].iter().zip(&vn[li + 1..]) {
                    s += *aij * *vj;
                }
                pn[li] += s;
                axpy(vn[li], &row[1..], &mut pn[li + 1..]);
            }
        }
        pn.iter_mut().for_each(|x| *x *= tn);
    }
}

/// `row −= v_i w[i..] + w_i v[i..]` for the upper part of trailing row `i`.
fn rank2_row<T: Scalar>(row: &mut [T], v: &[T], w: &[T], i: usize) {
    let (vi, wi) = (v[i], w[i]);
    for ((aij, vj), wj) in row.iter_mut().zip(&v[i..]).zip(&w[i..]) {
        *aij -= vi * *wj + wi * *vj;
    }
}

/// `p = A[s.., s..] v` from the upper triangle of the rows in `rows`
/// (row `r` of `rows` is matrix row `s + r`).
fn symv_upper<T: Scalar>(n: usize, rows: &[T], s: usize, v: &[T], p: &mut [T]) {
    let m = n - s;
    for i in 0..m {
        let row = &rows[i * n + s + i..(i + 1) * n];
        let mut acc = row[0] * v[i];
        for (aij, vj) in row[1..].iter().zip(&v[i + 1..]) {
            acc += *aij * *vj;
        }
        p[i] += acc;
        axpy(v[i], &row[1..], &mut p[i + 1..]);
    }
}

/// Eigenvalues of the symmetric tridiagonal `(d, e)` by implicit QL, with
/// `e[i]` coupling `i` and `i+1`. `d` is overwritten, unordered.
fn tridiagonal_eigenvalues<T: Scalar>(d: &mut [T], e: &mut [T]) -> Result<()> {
    let n = d.len();
    if n == 0 {
        return Ok(());
    }
    e[n - 1] = T::zero();
    let mut f = T::zero();
    let mut tst1 = T::zero();
    let eps = T::epsilon();
    let max_sweeps = 60 * n;
    let two = T::lit(2.0);
    for l in 0..n {
        tst1 = tst1.max(d[l].abs() + e[l].abs());
        let mut m = l;
        while m < n {
            if e[m].abs() <= eps * tst1 {
                break;
            }
            m += 1;
        }
        if m > l {
            let mut sweeps = 0;
            loop {
                sweeps += 1;
                if sweeps > max_sweeps {
                    return Err(Error::EigenNoConvergence);
                }
                let mut g = d[l];
                let mut p = (d[l + 1] - g) / (two * e[l]);
                let mut r = p.hypot(T::one());
                if p < T::zero() {
                    r = -r;
                }
                d[l] = e[l] / (p + r);
                d[l + 1] = e[l] * (p + r);
                let dl1 = d[l + 1];
                let mut h = g - d[l];
                for di in d.iter_mut().skip(l + 2) {
                    *di -= h;
                }
                f += h;

                p = d[m];
                let mut c = T::one();
                let mut c2 = c;
                let mut c3 = c;
                let el1 = e[l + 1];
                let mut s = T::zero();
                let mut s2 = T::zero();
                for i in (l..m).rev() {
                    c3 = c2;
                    c2 = c;
                    s2 = s;
                    g = c * e[i];
                    h = c * p;
                    r = p.hypot(e[i]);
                    e[i + 1] = s * r;
                    s = e[i] / r;
                    c = p / r;
                    p = c * d[i] - s * g;
                    d[i + 1] = h + s * (c * g + s * d[i]);
                }
                p = -s * s2 * c3 * el1 * e[l] / dl1;
                e[l] = s * p;
                d[l] = c * p;
                if e[l].abs() <= eps * tst1 {
                    break;
                }
            }
        }
        d[l] += f;
        e[l] = T::zero();
    }
    if d.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("dense eigensolver"));
    }
    Ok(())
}

/// Unit eigenvector of the unreduced tridiagonal block `(d, e)` for the
/// eigenvalue `lambda`, by inverse iteration. Earlier vectors of the same
/// block with nearby eigenvalues are projected out on every sweep.
fn block_eigenvector<T: Scalar>(
    d: &[T],
    e: &[T],
    lambda: T,
    local: usize,
    tnorm: T,
    done: &[(T, &[T])],
) -> Result<Vec<T>> {
    let m = d.len();
    if m == 1 {
        return Ok(vec![T::one()]);
    }
    let eps = T::epsilon();
    let tiny = eps * tnorm.max(T::min_positive_value());
    let cluster_gap = T::lit(1e-3) * tnorm;
    let close: Vec<&[T]> = done
        .iter()
        .filter(|(mu, _)| (lambda - *mu).abs() <= cluster_gap)
        .map(|&(_, q)| q)
        .collect();

    // LU of T − λI with partial pivoting: U has diagonals u0, u1, u2.
    let mut u0 = vec![T::zero(); m];
    let mut u1 = vec![T::zero(); m];
    let mut u2 = vec![T::zero(); m];
    let mut mult = vec![T::zero(); m];
    let mut swapped = vec![false; m];
    let mut diag = d[0] - lambda;
    let mut sup = e[0];
    for i in 0..m - 1 {
        let sub = e[i];
        let next_diag = d[i + 1] - lambda;
        let next_sup = if i + 2 < m { e[i + 1] } else { T::zero() };
        if diag.abs() >= sub.abs() {
            let piv = if diag.abs() < tiny { tiny } else { diag };
            u0[i] = piv;
            u1[i] = sup;
            u2[i] = T::zero();
            mult[i] = sub / piv;
            diag = next_diag - mult[i] * sup;
            sup = next_sup;
        } else {
            swapped[i] = true;
            u0[i] = sub;
            u1[i] = next_diag;
            u2[i] = next_sup;
            mult[i] = diag / sub;
            diag = sup - mult[i] * next_diag;
            sup = -mult[i] * next_sup;
        }
    }
    u0[m - 1] = if diag.abs() < tiny { tiny } else { diag };

    // Deterministic start vector, different per eigenvalue.
    let mut state = 0x9E37_79B9_7F4A_7C15u64 ^ (local as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    let mut x: Vec<T> = (0..m)
        .map(|_| {
            state ^= state << 13;
            state ^= state >> 7;
            state ^= state << 17;
            T::lit(0.5 + (state >> 11) as f64 / (1u64 << 53) as f64)
        })
        .collect();
    let threshold = T::lit((0.1 / m as f64).sqrt());
    let mut extra = 0;
    for _ in 0..8 {
        // Scale the right-hand side to the size of the perturbation in T.
        let s1: T = x.iter().map(|v| v.abs()).sum();
        let scl = T::from_count(m) * tnorm.max(tiny) * eps.max(u0[m - 1].abs()) / s1;
        x.iter_mut().for_each(|v| *v *= scl);
        // Forward: apply the row operations.
        for i in 0..m - 1 {
            if swapped[i] {
                x.swap(i, i + 1);
            }
            let xi = x[i];
            x[i + 1] -= mult[i] * xi;
        }
        // Back substitution with U.
        for i in (0..m).rev() {
            let mut s = x[i];
            if i + 1 < m {
                s -= u1[i] * x[i + 1];
            }
            if i + 2 < m {
                s -= u2[i] * x[i + 2];
            }
            x[i] = s / u0[i];
        }
        for q in &close {
            let c = dot(q, &x);
            axpy(-c, q, &mut x);
        }
        let big = x.iter().fold(T::zero(), |a, v| a.max(v.abs()));
        if !big.is_finite() {
            return Err(Error::NonFinite("inverse iteration"));
        }
        let inv = T::one() / big;
        x.iter_mut().for_each(|v| *v *= inv);
        if big >= threshold {
            extra += 1;
            if extra > 2 {
                break;
            }
        }
    }
    let nrm = norm2(&x);
    x.iter_mut().for_each(|v| *v /= nrm);
    Ok(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_spd(n: usize, rng: &mut ChaCha8Rng) -> DenseMatrix<f64> {
        let b: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
            .collect();
        let mut a = DenseMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                a[(i, j)] = (0..n).map(|k| b[i][k] * b[j][k]).sum::<f64>();
            }
            a[(i, i)] += n as f64 * 0.1;
        }
        a
    }

    /// Gaussian elimination with partial pivoting; an oracle independent of
    /// CG and Cholesky.
    fn dense_solve(a: &DenseMatrix<f64>, b: &[f64]) -> Vec<f64> {
        let n = b.len();
        let mut m: Vec<Vec<f64>> = (0..n)
            .map(|i| {
                let mut r = a.row(i).to_vec();
                r.push(b[i]);
                r
            })
            .collect();
        for col in 0..n {
            let piv = (col..n)
                .max_by(|&i, &j| m[i][col].abs().partial_cmp(&m[j][col].abs()).unwrap())
                .unwrap();
            m.swap(col, piv);
            for r in col + 1..n {
                let f = m[r][col] / m[col][col];
                for c in col..=n {
                    m[r][c] -= f * m[col][c];
                }
            }
        }
        let mut x = vec![0.0; n];
        for i in (0..n).rev() {
            let s: f64 = (i + 1..n).map(|k| m[i][k] * x[k]).sum();
            x[i] = (m[i][n] - s) / m[i][i];
        }
        x
    }

    #[test]
    fn spmv_examples() {
        let id = CsrMatrix::<f64>::identity(3);
        assert_eq!(id.spmv(&[1.0, -2.0, 3.5]).unwrap(), vec![1.0, -2.0, 3.5]);
        let a = CsrMatrix::from_triplets(2, 2, &[(0, 0, 2.0), (0, 1, 1.0), (1, 0, 1.0), (1, 1, 3.0)]).unwrap();
        assert_eq!(a.spmv(&[1.0, 1.0]).unwrap(), vec![3.0, 4.0]);
        assert!(a.spmv(&[1.0]).is_err());
    }

    #[test]
    fn spmv_symmetric_bilinear() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 50;
        let mut trip = Vec::new();
        for i in 0..n {
            for j in 0..=i {
                if rng.gen_bool(0.2) || i == j {
                    let v: f64 = rng.gen_range(-1.0..1.0);
                    trip.push((i, j, v));
                    if i != j {
                        trip.push((j, i, v));
                    }
                }
            }
        }
        let a = CsrMatrix::from_triplets(n, n, &trip).unwrap();
        let x: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let y: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let dense = a.to_dense();
        let xay: f64 = (0..n).map(|i| x[i] * (0..n).map(|j| dense[(i, j)] * y[j]).sum::<f64>()).sum();
        let lhs = dot(&x, &a.spmv(&y).unwrap());
        let rhs = dot(&y, &a.spmv(&x).unwrap());
        assert!((lhs - rhs).abs() < 1e-12);
        assert!((lhs - xay).abs() < 1e-12);
    }

    #[test]
    fn triplets_sum_duplicates_and_sort() {
        let a = CsrMatrix::from_triplets(2, 3, &[(1, 2, 1.0), (0, 1, 2.0), (1, 0, 4.0), (1, 2, 0.5)]).unwrap();
        assert_eq!(a.nnz(), 3);
        assert_eq!(a.get(1, 2), 1.5);
        assert_eq!(a.row(1).0, &[0, 2]);
        assert!(CsrMatrix::from_triplets(2, 2, &[(2, 0, 1.0)]).is_err());
    }

    #[test]
    fn transpose_and_matmul_match_dense() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut ta = Vec::new();
        let mut tb = Vec::new();
        for _ in 0..40 {
            ta.push((rng.gen_range(0..6), rng.gen_range(0..5), rng.gen_range(-1.0..1.0)));
            tb.push((rng.gen_range(0..5), rng.gen_range(0..4), rng.gen_range(-1.0..1.0)));
        }
        let a = CsrMatrix::from_triplets(6, 5, &ta).unwrap();
        let b = CsrMatrix::from_triplets(5, 4, &tb).unwrap();
        let (da, db) = (a.to_dense(), b.to_dense());
        let ab = a.matmul(&b).unwrap().to_dense();
        for i in 0..6 {
            for j in 0..4 {
                let e: f64 = (0..5).map(|k| da[(i, k)] * db[(k, j)]).sum();
                assert!((ab[(i, j)] - e).abs() < 1e-14);
            }
        }
        let at = a.transpose();
        for i in 0..6 {
            for j in 0..5 {
                assert_eq!(at.get(j, i), a.get(i, j));
            }
        }
        let x: Vec<f64> = (0..6).map(|i| i as f64 - 2.0).collect();
        let y1 = a.spmv_transpose(&x).unwrap();
        let y2 = at.spmv(&x).unwrap();
        for (p, q) in y1.iter().zip(&y2) {
            assert!((p - q).abs() < 1e-14);
        }
    }

    #[test]
    fn cg_steps_examples() {
        let mut w = WorkCounter::default();
        let id = CsrMatrix::<f64>::identity(4);
        let rhs = [1.0, 2.0, -3.0, 0.5];
        let x = cg_steps(&id, &rhs, &[0.0; 4], 1, &mut w).unwrap();
        assert_eq!(x, rhs.to_vec());

        let a = CsrMatrix::<f64>::from_triplets(2, 2, &[(0, 0, 1.0), (1, 1, 2.0)]).unwrap();
        let x = cg_steps(&a, &[1.0, 2.0], &[0.0, 0.0], 2, &mut w).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-15 && (x[1] - 1.0).abs() < 1e-15);

        let x = cg_steps(&a, &[1.0, 2.0], &[0.3, 0.7], 0, &mut w).unwrap();
        assert_eq!(x, vec![0.3, 0.7]);
    }

    #[test]
    fn cg_steps_detects_nan() {
        let mut w = WorkCounter::default();
        let a = CsrMatrix::<f64>::identity(2);
        let err = cg_steps(&a, &[1.0, f64::NAN], &[0.0, 0.0], 2, &mut w).unwrap_err();
        assert!(matches!(err, Error::NonFinite(_)));
    }

    #[test]
    fn cg_energy_error_monotone() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 30;
        let dense = random_spd(n, &mut rng);
        let a = CsrMatrix::from_dense(&dense);
        let rhs: Vec<f64> = (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let exact = dense_solve(&dense, &rhs);
        let energy = |x: &[f64]| {
            let e: Vec<f64> = x.iter().zip(&exact).map(|(a, b)| a - b).collect();
            dot(&e, &dense.matvec(&e)).sqrt()
        };
        let mut prev = energy(&vec![0.0; n]);
        for steps in 1..=n {
            let mut w = WorkCounter::default();
            let x = cg_steps(&a, &rhs, &vec![0.0; n], steps, &mut w).unwrap();
            let cur = energy(&x);
            assert!(cur <= prev * (1.0 + 1e-10) + 1e-14, "step {steps}: {cur} > {prev}");
            prev = cur;
        }
    }

    #[test]
    fn cg_solve_examples() {
        let mut w = WorkCounter::default();
        let a = CsrMatrix::<f64>::from_triplets(2, 2, &[(0, 0, 1.0), (1, 1, 2.0)]).unwrap();
        let (x, it) = cg_solve(&a, &[0.0, 0.0], &[0.0, 0.0], 1e-12, 10, &mut w).unwrap();
        assert_eq!((x, it), (vec![0.0, 0.0], 0));
        let (x, _) = cg_solve(&a, &[1.0, 2.0], &[0.0, 0.0], 1e-12, 10, &mut w).unwrap();
        assert!((x[0] - 1.0).abs() < 1e-12 && (x[1] - 1.0).abs() < 1e-12);

        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let dense = random_spd(40, &mut rng);
        let a = CsrMatrix::from_dense(&dense);
        let rhs: Vec<f64> = (0..40).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let err = cg_solve(&a, &rhs, &vec![0.0; 40], 1e-14, 2, &mut w).unwrap_err();
        assert!(matches!(err, Error::NoConvergence { iterations: 2, .. }));
    }

    #[test]
    fn gevp_diagonal() {
        let a = DenseMatrix::<f64>::from_diagonal(&[2.0, 6.0]);
        let m = DenseMatrix::from_diagonal(&[1.0, 2.0]);
        let r = solve_gevp_dense(&a, &m, 2).unwrap();
        assert!((r.eigenvalues[0] - 2.0).abs() < 1e-14);
        assert!((r.eigenvalues[1] - 3.0).abs() < 1e-14);
        let x = r.vector(0);
        assert!((x[0].abs() - 1.0 / 2f64.sqrt()).abs() < 1e-14);
        assert!(x[1].abs() < 1e-14);
    }

    #[test]
    fn gevp_identity_pencil() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = random_spd(12, &mut rng);
        let r = solve_gevp_dense(&m, &m, 12).unwrap();
        for l in r.eigenvalues {
            assert!((l - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn gevp_residual_and_orthonormality() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let n = 25;
        let a = random_spd(n, &mut rng);
        let m = random_spd(n, &mut rng);
        let r = solve_gevp_dense(&a, &m, n).unwrap();
        let scale = a.frobenius_norm();
        for i in 0..n {
            let x = r.vector(i);
            let ax = a.matvec(&x);
            let mx = m.matvec(&x);
            let res: Vec<f64> = ax.iter().zip(&mx).map(|(p, q)| p - r.eigenvalues[i] * q).collect();
            assert!(norm2(&res) <= 1e-10 * (scale + r.eigenvalues[i].abs() * m.frobenius_norm()));
            for j in 0..n {
                let aij = dot(&r.vector(j), &ax);
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((aij - expect).abs() < 1e-10, "({i},{j}) {aij}");
            }
            if i > 0 {
                assert!(r.eigenvalues[i] >= r.eigenvalues[i - 1]);
            }
        }
    }

    #[test]
    fn gevp_errors() {
        let a = DenseMatrix::<f64>::from_diagonal(&[1.0, 1.0]);
        let m = DenseMatrix::from_diagonal(&[1.0, -1.0]);
        assert!(matches!(solve_gevp_dense(&a, &m, 1), Err(Error::NotSpd { column: 1, .. })));
        let m = DenseMatrix::identity(2);
        assert!(matches!(
            solve_gevp_dense(&a, &m, 3),
            Err(Error::TooManyEigenpairs { requested: 3, dimension: 2 })
        ));
    }

    #[test]
    fn gevp_prefix_is_bit_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let a = random_spd(15, &mut rng);
        let m = random_spd(15, &mut rng);
        let all = solve_gevp_dense(&a, &m, 15).unwrap();
        let few = solve_gevp_dense(&a, &m, 4).unwrap();
        for i in 0..4 {
            assert_eq!(all.eigenvalues[i].to_bits(), few.eigenvalues[i].to_bits());
            assert_eq!(all.vector(i), few.vector(i));
        }
    }

    #[test]
    fn gevp_f32() {
        let a = DenseMatrix::<f32>::from_diagonal(&[2.0, 6.0, 1.0]);
        let m = DenseMatrix::<f32>::from_diagonal(&[1.0, 2.0, 1.0]);
        let r = solve_gevp_dense(&a, &m, 3).unwrap();
        assert!((r.eigenvalues[0] - 1.0).abs() < 1e-6);
        assert!((r.eigenvalues[2] - 3.0).abs() < 1e-6);
    }

    #[test]
    fn symmetric_eigen_handles_repeated_eigenvalues() {
        // Kronecker sum of two path Laplacians: many exact double eigenvalues.
        let k = 9;
        let n = k * k;
        let mut a = DenseMatrix::<f64>::zeros(n, n);
        for i in 0..k {
            for j in 0..k {
                let r = i * k + j;
                a[(r, r)] = 4.0;
                if i + 1 < k {
                    a[(r, r + k)] = -1.0;
                    a[(r + k, r)] = -1.0;
                }
                if j + 1 < k {
                    a[(r, r + 1)] = -1.0;
                    a[(r + 1, r)] = -1.0;
                }
            }
        }
        let (values, vt) = symmetric_eigen(a.clone(), n).unwrap();
        let mut exact: Vec<f64> = (1..=k)
            .flat_map(|p| (1..=k).map(move |q| (p, q)))
            .map(|(p, q)| {
                let s = |t: usize| 2.0 - 2.0 * (t as f64 * std::f64::consts::PI / (k + 1) as f64).cos();
                s(p) + s(q)
            })
            .collect();
        exact.sort_by(|x, y| x.partial_cmp(y).unwrap());
        for (v, x) in values.iter().zip(&exact) {
            assert!((v - x).abs() < 1e-12);
        }
        for p in 0..n {
            let x = &vt[p * n..(p + 1) * n];
            let ax = (0..n).map(|i| dot(a.row(i), x)).collect::<Vec<_>>();
            for i in 0..n {
                assert!((ax[i] - values[p] * x[i]).abs() < 1e-12);
            }
            for q in 0..n {
                let g = dot(x, &vt[q * n..(q + 1) * n]);
                assert!((g - if p == q { 1.0 } else { 0.0 }).abs() < 1e-12, "{p} {q} {g}");
            }
        }
    }

    #[test]
    fn factored_products_match_expanded_vectors() {
        let n = 12;
        let mut a = DenseMatrix::<f64>::zeros(n, n);
        let mut m = DenseMatrix::<f64>::zeros(n, n);
        for i in 0..n {
            a[(i, i)] = 2.0 + i as f64 * 0.1;
            m[(i, i)] = 4.0;
            if i + 1 < n {
                a[(i, i + 1)] = -1.0;
                a[(i + 1, i)] = -1.0;
                m[(i, i + 1)] = 1.0;
                m[(i + 1, i)] = 1.0;
            }
        }
        // Dense border, as in the augmented systems.
        for i in 0..n - 1 {
            a[(i, n - 1)] = 0.05 * i as f64;
            a[(n - 1, i)] = 0.05 * i as f64;
        }
        let l = cholesky(&m).unwrap();
        let pencil = PencilEigen::new(&a, &l, n).unwrap();
        let w: Vec<f64> = (0..n).map(|i| (i as f64 * 0.7).sin()).collect();
        let mw = m.matvec(&w);
        for (i, p) in pencil.m_products(&w).iter().enumerate() {
            let x = pencil.vector(i);
            let direct = dot(&x, &mw);
            assert!((p.abs() - direct.abs()).abs() < 1e-12, "{i}: {p} vs {direct}");
        }
    }
}
