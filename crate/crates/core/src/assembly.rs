//! P1 finite element assembly of the stiffness form
//! `a(u,v) = ∫ s·𝒜∇u·∇v + φuv` and the mass form `b(u,v) = ∫ uv` over the
//! interior vertices of each level, plus the nested-space prolongations.

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::linalg::CsrMatrix;
use crate::mesh::{Mesh, MeshHierarchy, VertexParent};
use crate::scalar::Scalar;

/// Writes the `d×d` diffusion tensor at a point, row-major, into the buffer.
pub type DiffusionFn<T> = Arc<dyn Fn(&[T], &mut [T]) + Send + Sync>;
pub type PotentialFn<T> = Arc<dyn Fn(&[T]) -> T + Send + Sync>;

/// Coefficients of `−s·∇·(𝒜∇u) + φu = λu`.
#[derive(Clone)]
pub struct ProblemCoefficients<T> {
    /// `None` means the identity tensor.
    diffusion: Option<DiffusionFn<T>>,
    /// `None` means `φ = 0`.
    potential: Option<PotentialFn<T>>,
    laplace_scale: T,
}

impl<T: Scalar> fmt::Debug for ProblemCoefficients<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ProblemCoefficients")
            .field("diffusion", &self.diffusion.as_ref().map(|_| "fn"))
            .field("potential", &self.potential.as_ref().map(|_| "fn"))
            .field("laplace_scale", &self.laplace_scale)
            .finish()
    }
}

impl<T: Scalar> ProblemCoefficients<T> {
    /// `−Δu = λu`
    pub fn laplace() -> Self {
        Self {
            diffusion: None,
            potential: None,
            laplace_scale: T::one(),
        }
    }

    pub fn new(diffusion: Option<DiffusionFn<T>>, potential: Option<PotentialFn<T>>, laplace_scale: T) -> Self {
        Self {
            diffusion,
            potential,
            laplace_scale,
        }
    }

    /// `𝒜 = I + (x−½)(x−½)ᵀ`, `φ = exp(Π(x_i−½))` on any dimension.
    pub fn variable() -> Self {
        let half = T::lit(0.5);
        let diffusion: DiffusionFn<T> = Arc::new(move |x: &[T], out: &mut [T]| {
            let d = x.len();
            for a in 0..d {
                for b in 0..d {
                    let mut v = (x[a] - half) * (x[b] - half);
                    if a == b {
                        v += T::one();
                    }
                    out[a * d + b] = v;
                }
            }
        });
        let potential: PotentialFn<T> =
            Arc::new(move |x: &[T]| x.iter().fold(T::one(), |p, xi| p * (*xi - half)).exp());
        Self::new(Some(diffusion), Some(potential), T::one())
    }

    /// `−½Δu + ½|x|²u = λu`
    pub fn harmonic_oscillator() -> Self {
        let half = T::lit(0.5);
        let potential: PotentialFn<T> =
            Arc::new(move |x: &[T]| half * x.iter().map(|xi| *xi * *xi).sum::<T>());
        Self::new(None, Some(potential), half)
    }

    pub fn laplace_scale(&self) -> T {
        self.laplace_scale
    }
}

// Quadrature in barycentric coordinates, exact for degree-2 polynomials.
const TRI_QUAD: [[f64; 3]; 3] = [[0.5, 0.5, 0.0], [0.0, 0.5, 0.5], [0.5, 0.0, 0.5]];
const TET_A: f64 = 0.585_410_196_624_968_5;
const TET_B: f64 = 0.138_196_601_125_010_5;
const TET_QUAD: [[f64; 4]; 4] = [
    [TET_A, TET_B, TET_B, TET_B],
    [TET_B, TET_A, TET_B, TET_B],
    [TET_B, TET_B, TET_A, TET_B],
    [TET_B, TET_B, TET_B, TET_A],
];

/// Element stiffness and mass matrices of one simplex, `(d+1)×(d+1)`
/// row-major. Fails on a nonpositive volume or invalid coefficients.
pub fn local_matrices<T: Scalar>(
    pts: &[&[T]],
    coeffs: &ProblemCoefficients<T>,
) -> Result<(Vec<T>, Vec<T>)> {
    let d = pts.len() - 1;
    let nloc = d + 1;
    let vol = crate::mesh::simplex_signed_volume(pts);
    if !(vol > T::zero()) {
        return Err(Error::InvalidMesh(format!("cell with nonpositive volume {vol}")));
    }
    let grads = barycentric_gradients(pts);

    let mut stiff = vec![T::zero(); nloc * nloc];
    let mut mass = vec![T::zero(); nloc * nloc];

    let mass_scale = vol / T::from_count((d + 1) * (d + 2));
    for i in 0..nloc {
        for j in 0..nloc {
            mass[i * nloc + j] = if i == j { mass_scale * T::lit(2.0) } else { mass_scale };
        }
    }

    let quad: Vec<&[f64]> = if d == 2 {
        TRI_QUAD.iter().map(|q| &q[..]).collect()
    } else {
        TET_QUAD.iter().map(|q| &q[..]).collect()
    };
    let weight = vol / T::from_count(quad.len());
    let needs_points = coeffs.diffusion.is_some() || coeffs.potential.is_some();
    let mut tensor = vec![T::zero(); d * d];
    let mut x = vec![T::zero(); d];

    if coeffs.diffusion.is_none() {
        for i in 0..nloc {
            for j in 0..nloc {
                let g: T = (0..d).map(|a| grads[i][a] * grads[j][a]).sum();
                stiff[i * nloc + j] = coeffs.laplace_scale * vol * g;
            }
        }
    }

    if needs_points {
        for q in &quad {
            for (a, xa) in x.iter_mut().enumerate() {
                *xa = (0..nloc).map(|v| T::lit(q[v]) * pts[v][a]).sum();
            }
            if let Some(diff) = &coeffs.diffusion {
                diff(&x, &mut tensor);
                check_symmetric(&tensor, d)?;
                for i in 0..nloc {
                    for j in 0..nloc {
                        let mut g = T::zero();
                        for a in 0..d {
                            let row: T = (0..d).map(|b| tensor[a * d + b] * grads[j][b]).sum();
                            g += grads[i][a] * row;
                        }
                        stiff[i * nloc + j] += coeffs.laplace_scale * weight * g;
                    }
                }
            }
            if let Some(pot) = &coeffs.potential {
                let phi = pot(&x);
                if !(phi >= T::zero()) {
                    return Err(Error::InvalidCoefficients(format!(
                        "potential {phi} is negative or not finite at {x:?}"
                    )));
                }
                for i in 0..nloc {
                    for j in 0..nloc {
                        stiff[i * nloc + j] += weight * phi * T::lit(q[i] * q[j]);
                    }
                }
            }
        }
    }
    Ok((stiff, mass))
}

fn check_symmetric<T: Scalar>(tensor: &[T], d: usize) -> Result<()> {
    let scale = tensor.iter().fold(T::zero(), |m, v| m.max(v.abs()));
    if !scale.is_finite() {
        return Err(Error::InvalidCoefficients("diffusion tensor not finite".into()));
    }
    for a in 0..d {
        for b in a + 1..d {
            if (tensor[a * d + b] - tensor[b * d + a]).abs() > T::tol(1e-12) * scale {
                return Err(Error::InvalidCoefficients(format!(
                    "diffusion tensor not symmetric at entry ({a},{b})"
                )));
            }
        }
    }
    Ok(())
}

/// Gradients of the barycentric coordinates, one `d`-vector per vertex.
fn barycentric_gradients<T: Scalar>(pts: &[&[T]]) -> Vec<Vec<T>> {
    let d = pts.len() - 1;
    // Columns of J are the edge vectors x_i − x_0; ∇λ_i (i ≥ 1) are rows of J⁻¹.
    let j = |a: usize, i: usize| pts[i + 1][a] - pts[0][a];
    let inv: Vec<Vec<T>> = if d == 2 {
        let det = j(0, 0) * j(1, 1) - j(0, 1) * j(1, 0);
        vec![
            vec![j(1, 1) / det, -j(0, 1) / det],
            vec![-j(1, 0) / det, j(0, 0) / det],
        ]
    } else {
        let m = |r: usize, c: usize| j(r, c);
        let cof = |r: usize, c: usize| {
            let (r1, r2) = ((r + 1) % 3, (r + 2) % 3);
            let (c1, c2) = ((c + 1) % 3, (c + 2) % 3);
            m(r1, c1) * m(r2, c2) - m(r1, c2) * m(r2, c1)
        };
        let det = m(0, 0) * cof(0, 0) + m(0, 1) * cof(0, 1) + m(0, 2) * cof(0, 2);
        // (J⁻¹)_{i,a} = cof(a,i)/det
        (0..3)
            .map(|i| (0..3).map(|a| cof(a, i) / det).collect())
            .collect()
    };
    let mut grads = Vec::with_capacity(d + 1);
    let g0: Vec<T> = (0..d).map(|a| -(0..d).map(|i| inv[i][a]).sum::<T>()).collect();
    grads.push(g0);
    grads.extend(inv);
    grads
}

/// Assembles `(A, M)` over the DOFs selected by `dof_of`.
fn assemble_with<T: Scalar>(
    mesh: &Mesh<T>,
    coeffs: &ProblemCoefficients<T>,
    ndofs: usize,
    dof_of: impl Fn(usize) -> Option<usize>,
) -> Result<(CsrMatrix<T>, CsrMatrix<T>)> {
    let nloc = mesh.dim() + 1;
    let mut rows: Vec<Vec<usize>> = vec![Vec::new(); ndofs];
    for cell in mesh.cells() {
        for &vi in cell {
            if let Some(i) = dof_of(vi) {
                rows[i].extend(cell.iter().filter_map(|&vj| dof_of(vj)));
            }
        }
    }
    for row in rows.iter_mut() {
        row.sort_unstable();
        row.dedup();
    }
    let mut a = CsrMatrix::from_pattern(ndofs, &rows);
    let mut m = CsrMatrix::from_pattern(ndofs, &rows);
    drop(rows);

    let mut dofs = vec![None; nloc];
    for cell in mesh.cells() {
        for (slot, &v) in dofs.iter_mut().zip(cell) {
            *slot = dof_of(v);
        }
        if dofs.iter().all(Option::is_none) {
            continue;
        }
        let pts: Vec<&[T]> = cell.iter().map(|&v| mesh.vertex(v)).collect();
        let (ks, ms) = local_matrices(&pts, coeffs)?;
        for i in 0..nloc {
            let Some(gi) = dofs[i] else { continue };
            for j in 0..nloc {
                let Some(gj) = dofs[j] else { continue };
                a.add_to(gi, gj, ks[i * nloc + j]);
                m.add_to(gi, gj, ms[i * nloc + j]);
            }
        }
    }
    Ok((a, m))
}

/// Stiffness and mass over interior DOFs (homogeneous Dirichlet boundary by
/// elimination).
pub fn assemble_level<T: Scalar>(
    mesh: &Mesh<T>,
    coeffs: &ProblemCoefficients<T>,
) -> Result<(CsrMatrix<T>, CsrMatrix<T>)> {
    assemble_with(mesh, coeffs, mesh.num_interior(), |v| mesh.interior_index(v))
}

/// Stiffness and mass over all vertices, no boundary elimination.
pub fn assemble_unconstrained<T: Scalar>(
    mesh: &Mesh<T>,
    coeffs: &ProblemCoefficients<T>,
) -> Result<(CsrMatrix<T>, CsrMatrix<T>)> {
    assemble_with(mesh, coeffs, mesh.num_vertices(), Some)
}

/// P1 interpolation from level `k−1` interior DOFs to level `k` interior
/// DOFs. Boundary parents contribute zero.
pub fn build_prolongation<T: Scalar>(hierarchy: &MeshHierarchy<T>, k: usize) -> Result<CsrMatrix<T>> {
    if k == 0 || k >= hierarchy.num_levels() {
        return Err(Error::InvalidMesh(format!(
            "prolongation level {k} outside 1..{}",
            hierarchy.num_levels()
        )));
    }
    let fine = hierarchy.level(k);
    let coarse = hierarchy.level(k - 1);
    let parents = hierarchy.parents(k);
    let half = T::lit(0.5);
    let mut trip = Vec::with_capacity(fine.num_interior() * 2);
    for (i, &v) in fine.interior_vertices().iter().enumerate() {
        match parents[v] {
            VertexParent::Vertex(p) => {
                if let Some(j) = coarse.interior_index(p) {
                    trip.push((i, j, T::one()));
                }
            }
            VertexParent::Edge(a, b) => {
                for p in [a, b] {
                    if let Some(j) = coarse.interior_index(p) {
                        trip.push((i, j, half));
                    }
                }
            }
        }
    }
    CsrMatrix::from_triplets(fine.num_interior(), coarse.num_interior(), &trip)
}

/// `P_k ⋯ P_{j+1}`, mapping level `j` to level `k`; identity when `j = k`.
pub fn composite_prolongation<T: Scalar>(
    hierarchy: &MeshHierarchy<T>,
    from: usize,
    to: usize,
) -> Result<CsrMatrix<T>> {
    if from > to || to >= hierarchy.num_levels() {
        return Err(Error::InvalidMesh(format!("composite prolongation {from} -> {to}")));
    }
    let mut p = CsrMatrix::identity(hierarchy.level(from).num_interior());
    for k in from + 1..=to {
        p = build_prolongation(hierarchy, k)?.matmul(&p)?;
    }
    Ok(p)
}

/// Per-level operators over interior DOFs.
#[derive(Debug, Clone)]
pub struct LevelOperators<T> {
    stiffness: Vec<CsrMatrix<T>>,
    mass: Vec<CsrMatrix<T>>,
    /// `prolongation[k-1]` maps level `k−1` to level `k`.
    prolongation: Vec<CsrMatrix<T>>,
    restriction: Vec<CsrMatrix<T>>,
}

impl<T: Scalar> LevelOperators<T> {
    pub fn assemble(hierarchy: &MeshHierarchy<T>, coeffs: &ProblemCoefficients<T>) -> Result<Self> {
        let mut stiffness = Vec::with_capacity(hierarchy.num_levels());
        let mut mass = Vec::with_capacity(hierarchy.num_levels());
        for mesh in hierarchy.levels() {
            let (a, m) = assemble_level(mesh, coeffs)?;
            stiffness.push(a);
            mass.push(m);
        }
        let mut prolongation = Vec::new();
        let mut restriction = Vec::new();
        for k in 1..hierarchy.num_levels() {
            let p = build_prolongation(hierarchy, k)?;
            restriction.push(p.transpose());
            prolongation.push(p);
        }
        Ok(Self {
            stiffness,
            mass,
            prolongation,
            restriction,
        })
    }

    pub fn num_levels(&self) -> usize {
        self.stiffness.len()
    }

    pub fn dofs(&self, k: usize) -> usize {
        self.stiffness[k].nrows()
    }

    pub fn stiffness(&self, k: usize) -> &CsrMatrix<T> {
        &self.stiffness[k]
    }

    pub fn mass(&self, k: usize) -> &CsrMatrix<T> {
        &self.mass[k]
    }

    /// Level `k−1` → level `k`, for `k ≥ 1`.
    pub fn prolongation(&self, k: usize) -> &CsrMatrix<T> {
        &self.prolongation[k - 1]
    }

    /// Transpose of [`Self::prolongation`].
    pub fn restriction(&self, k: usize) -> &CsrMatrix<T> {
        &self.restriction[k - 1]
    }

    /// `P_k ⋯ P_{j+1}` from the stored single-level prolongations.
    pub fn composite_prolongation(&self, from: usize, to: usize) -> Result<CsrMatrix<T>> {
        if from > to || to >= self.num_levels() {
            return Err(Error::InvalidMesh(format!("composite prolongation {from} -> {to}")));
        }
        let mut p = CsrMatrix::identity(self.dofs(from));
        for k in from + 1..=to {
            p = self.prolongation(k).matmul(&p)?;
        }
        Ok(p)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::solve_gevp_dense;
    use crate::mesh::{build_coarse_mesh, BoxDomain};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn hierarchy(dim: usize, div: usize, levels: usize) -> MeshHierarchy<f64> {
        MeshHierarchy::build(&BoxDomain::unit(dim).unwrap(), div, levels, usize::MAX).unwrap()
    }

    #[test]
    fn right_triangle_local_stiffness() {
        let p: [&[f64]; 3] = [&[0.0, 0.0], &[1.0, 0.0], &[0.0, 1.0]];
        let (k, m) = local_matrices(&p, &ProblemCoefficients::laplace()).unwrap();
        let expect = [1.0, -0.5, -0.5, -0.5, 0.5, 0.0, -0.5, 0.0, 0.5];
        for (a, b) in k.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15);
        }
        let s = 0.5 / 12.0;
        let expect_m = [2.0, 1.0, 1.0, 1.0, 2.0, 1.0, 1.0, 1.0, 2.0].map(|v| v * s);
        for (a, b) in m.iter().zip(expect_m) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn local_stiffness_matches_quadrature_path() {
        // Identity diffusion through the quadrature branch equals the closed form.
        let p: [&[f64]; 4] = [&[0.1, 0.0, 0.0], &[1.0, 0.2, 0.0], &[0.3, 1.0, 0.1], &[0.2, 0.3, 1.1]];
        let ident: DiffusionFn<f64> = Arc::new(|x: &[f64], out: &mut [f64]| {
            let d = x.len();
            for a in 0..d {
                for b in 0..d {
                    out[a * d + b] = if a == b { 1.0 } else { 0.0 };
                }
            }
        });
        let via_quad = ProblemCoefficients::new(Some(ident), None, 1.0);
        let (k1, _) = local_matrices(&p, &ProblemCoefficients::laplace()).unwrap();
        let (k2, _) = local_matrices(&p, &via_quad).unwrap();
        for (a, b) in k1.iter().zip(&k2) {
            assert!((a - b).abs() < 1e-13);
        }
        // Rows of a P1 stiffness matrix sum to zero (constants are in the kernel).
        for i in 0..4 {
            let s: f64 = k1[i * 4..i * 4 + 4].iter().sum();
            assert!(s.abs() < 1e-13);
        }
    }

    #[test]
    fn rejects_inverted_cell_and_bad_coefficients() {
        let p: [&[f64]; 3] = [&[0.0, 0.0], &[0.0, 1.0], &[1.0, 0.0]];
        assert!(matches!(
            local_matrices(&p, &ProblemCoefficients::laplace()),
            Err(Error::InvalidMesh(_))
        ));
        let q: [&[f64]; 3] = [&[0.0, 0.0], &[1.0, 0.0], &[0.0, 1.0]];
        let skew: DiffusionFn<f64> = Arc::new(|_x: &[f64], out: &mut [f64]| {
            out.copy_from_slice(&[1.0, 0.5, 0.0, 1.0]);
        });
        let c = ProblemCoefficients::new(Some(skew), None, 1.0);
        assert!(matches!(local_matrices(&q, &c), Err(Error::InvalidCoefficients(_))));
        let neg: PotentialFn<f64> = Arc::new(|_x: &[f64]| -1.0);
        let c = ProblemCoefficients::new(None, Some(neg), 1.0);
        assert!(matches!(local_matrices(&q, &c), Err(Error::InvalidCoefficients(_))));
    }

    #[test]
    fn unconstrained_mass_sums_to_volume() {
        for dim in [2, 3] {
            let d = BoxDomain::new(vec![-1.0; dim], vec![1.5; dim]).unwrap();
            let mesh = build_coarse_mesh(&d, 3).unwrap();
            let (_, m) = assemble_unconstrained(&mesh, &ProblemCoefficients::laplace()).unwrap();
            let total: f64 = m.values().iter().sum();
            assert!((total - d.volume()).abs() < 1e-12, "{total}");
        }
    }

    #[test]
    fn level_operators_symmetric_and_mass_spd() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        for (dim, coeffs) in [
            (2, ProblemCoefficients::<f64>::variable()),
            (3, ProblemCoefficients::variable()),
            (2, ProblemCoefficients::harmonic_oscillator()),
        ] {
            let h = hierarchy(dim, 2, 2);
            let ops = LevelOperators::assemble(&h, &coeffs).unwrap();
            for k in 0..ops.num_levels() {
                assert!(ops.stiffness(k).symmetry_defect() <= 1e-12);
                assert!(ops.mass(k).symmetry_defect() <= 1e-12);
                for _ in 0..5 {
                    let v: Vec<f64> = (0..ops.dofs(k)).map(|_| rng.gen_range(-1.0..1.0)).collect();
                    let mv = ops.mass(k).spmv(&v).unwrap();
                    assert!(crate::scalar::dot(&v, &mv) > 0.0);
                }
            }
        }
    }

    fn galerkin_defect(fine: &CsrMatrix<f64>, p: &CsrMatrix<f64>, coarse: &CsrMatrix<f64>) -> f64 {
        let ptap = p.transpose().matmul(&fine.matmul(p).unwrap()).unwrap();
        let scale = coarse.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let mut defect = 0.0f64;
        for i in 0..coarse.nrows() {
            for j in 0..coarse.ncols() {
                defect = defect.max((ptap.get(i, j) - coarse.get(i, j)).abs());
            }
        }
        defect / scale
    }

    #[test]
    fn galerkin_consistency_constant_coefficients() {
        for dim in [2, 3] {
            let h = hierarchy(dim, 2, 3);
            let ops = LevelOperators::assemble(&h, &ProblemCoefficients::laplace()).unwrap();
            for k in 1..ops.num_levels() {
                let p = ops.prolongation(k);
                assert!(galerkin_defect(ops.stiffness(k), p, ops.stiffness(k - 1)) < 1e-10);
                assert!(galerkin_defect(ops.mass(k), p, ops.mass(k - 1)) < 1e-10);
            }
        }
    }

    #[test]
    fn prolongation_of_ones() {
        let h = hierarchy(2, 4, 2);
        let p = build_prolongation(&h, 1).unwrap();
        let fine = h.level(1);
        let ones = vec![1.0; h.level(0).num_interior()];
        let out = p.spmv(&ones).unwrap();
        for (i, &v) in fine.interior_vertices().iter().enumerate() {
            let expect = match h.parents(1)[v] {
                VertexParent::Vertex(_) => 1.0,
                VertexParent::Edge(a, b) => {
                    let interior = [a, b].iter().filter(|&&x| !h.level(0).is_boundary(x)).count();
                    0.5 * interior as f64
                }
            };
            assert_eq!(out[i], expect);
        }
    }

    fn reproduces_linear(h: &MeshHierarchy<f64>, p: &CsrMatrix<f64>, from: usize, to: usize) {
        let f = |x: &[f64]| x.iter().sum::<f64>();
        let coarse = h.level(from);
        let fine = h.level(to);
        let cv: Vec<f64> = coarse.interior_vertices().iter().map(|&v| f(coarse.vertex(v))).collect();
        let fv = p.spmv(&cv).unwrap();
        // Fine vertices whose enclosing coarse cell touches no boundary vertex.
        let embed_all = {
            let mut e = CsrMatrix::identity(coarse.num_vertices());
            let mut level_mesh = coarse;
            for k in from + 1..=to {
                let next = h.level(k);
                let trip: Vec<(usize, usize, f64)> = h
                    .parents(k)
                    .iter()
                    .enumerate()
                    .flat_map(|(i, par)| match *par {
                        VertexParent::Vertex(a) => vec![(i, a, 1.0)],
                        VertexParent::Edge(a, b) => vec![(i, a, 0.5), (i, b, 0.5)],
                    })
                    .collect();
                let pk = CsrMatrix::from_triplets(next.num_vertices(), level_mesh.num_vertices(), &trip).unwrap();
                e = pk.matmul(&e).unwrap();
                level_mesh = next;
            }
            e
        };
        let mut checked = 0;
        for (i, &v) in fine.interior_vertices().iter().enumerate() {
            let (cols, _) = embed_all.row(v);
            if cols.iter().all(|&c| !coarse.is_boundary(c)) {
                assert!((fv[i] - f(fine.vertex(v))).abs() < 1e-13);
                checked += 1;
            }
        }
        assert!(checked > 0);
    }

    #[test]
    fn prolongation_reproduces_linears() {
        let h = hierarchy(2, 4, 4);
        reproduces_linear(&h, &build_prolongation(&h, 1).unwrap(), 0, 1);
        reproduces_linear(&h, &composite_prolongation(&h, 0, 3).unwrap(), 0, 3);
        let h3 = hierarchy(3, 3, 2);
        reproduces_linear(&h3, &build_prolongation(&h3, 1).unwrap(), 0, 1);
    }

    #[test]
    fn mass_norm_of_interpolant_matches_coarse_assembly() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let h = hierarchy(2, 3, 3);
        let ops = LevelOperators::assemble(&h, &ProblemCoefficients::laplace()).unwrap();
        for k in 1..3 {
            let v: Vec<f64> = (0..ops.dofs(k - 1)).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let pv = ops.prolongation(k).spmv(&v).unwrap();
            let fine_norm = crate::scalar::dot(&pv, &ops.mass(k).spmv(&pv).unwrap());
            let coarse_norm = crate::scalar::dot(&v, &ops.mass(k - 1).spmv(&v).unwrap());
            assert!((fine_norm - coarse_norm).abs() <= 1e-10 * coarse_norm);
        }
    }

    #[test]
    fn composite_prolongation_routes_agree() {
        let h = hierarchy(2, 2, 4);
        let ops = LevelOperators::assemble(&h, &ProblemCoefficients::laplace()).unwrap();
        let id = composite_prolongation(&h, 2, 2).unwrap();
        assert_eq!(id, CsrMatrix::identity(h.level(2).num_interior()));
        let direct = composite_prolongation(&h, 0, 3).unwrap();
        let stored = ops.composite_prolongation(0, 3).unwrap();
        let v: Vec<f64> = (0..ops.dofs(0)).map(|i| (i as f64).sin()).collect();
        let mut stepwise = v.clone();
        for k in 1..=3 {
            stepwise = ops.prolongation(k).spmv(&stepwise).unwrap();
        }
        let a = direct.spmv(&v).unwrap();
        let b = stored.spmv(&v).unwrap();
        for i in 0..a.len() {
            assert!((a[i] - stepwise[i]).abs() <= 1e-14);
            assert!((b[i] - stepwise[i]).abs() <= 1e-14);
        }
    }

    #[test]
    fn unit_square_eigenvalue_upper_bound() {
        let mesh = build_coarse_mesh(&BoxDomain::<f64>::unit(2).unwrap(), 16).unwrap();
        let (a, m) = assemble_level(&mesh, &ProblemCoefficients::laplace()).unwrap();
        let r = solve_gevp_dense(&a.to_dense(), &m.to_dense(), 1).unwrap();
        assert!(r.eigenvalues[0] >= 2.0 * PI * PI);
    }
}
