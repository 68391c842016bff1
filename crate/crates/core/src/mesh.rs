//! Structured simplicial meshes on axis-aligned boxes and their nested
//! red-refinement hierarchy.
//!
//! Level 0 is the coarse mesh. Each refinement keeps every old vertex at its
//! old index and appends edge midpoints, so vertex identity across levels is
//! pure index bookkeeping.

use std::collections::HashMap;
use std::io::{self, Write};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Axis-aligned box `[lower_0, upper_0] × … × [lower_{d-1}, upper_{d-1}]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxDomain<T> {
    lower: Vec<T>,
    upper: Vec<T>,
}

impl<T: Scalar> BoxDomain<T> {
    pub fn new(lower: Vec<T>, upper: Vec<T>) -> Result<Self> {
        if lower.len() != upper.len() || !(2..=3).contains(&lower.len()) {
            return Err(Error::InvalidMesh(format!(
                "box must have 2 or 3 axes, got {} lower / {} upper bounds",
                lower.len(),
                upper.len()
            )));
        }
        for (axis, (lo, hi)) in lower.iter().zip(&upper).enumerate() {
            if !(lo.is_finite() && hi.is_finite() && *hi > *lo) {
                return Err(Error::InvalidMesh(format!(
                    "degenerate box extent on axis {axis}: [{lo}, {hi}]"
                )));
            }
        }
        Ok(Self { lower, upper })
    }

    /// `[0,1]^dim`
    pub fn unit(dim: usize) -> Result<Self> {
        Self::cube(T::zero(), T::one(), dim)
    }

    /// `[lo,hi]^dim`
    pub fn cube(lo: T, hi: T, dim: usize) -> Result<Self> {
        Self::new(vec![lo; dim], vec![hi; dim])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[T] {
        &self.lower
    }

    pub fn upper(&self) -> &[T] {
        &self.upper
    }

    pub fn extent(&self, axis: usize) -> T {
        self.upper[axis] - self.lower[axis]
    }

    pub fn volume(&self) -> T {
        (0..self.dim()).map(|a| self.extent(a)).fold(T::one(), |p, e| p * e)
    }
}

/// Origin of a fine vertex relative to the previous level.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VertexParent {
    /// The vertex already existed at the coarser level.
    Vertex(usize),
    /// The vertex is the midpoint of a coarse edge.
    Edge(usize, usize),
}

#[derive(Debug, Clone)]
pub struct Mesh<T> {
    dim: usize,
    coords: Vec<T>,
    cells: Vec<usize>,
    /// Bit `2a` set: vertex on the lower face of axis `a`; bit `2a+1`: upper face.
    face_mask: Vec<u8>,
    interior_index: Vec<Option<usize>>,
    interior_vertices: Vec<usize>,
}

impl<T: Scalar> Mesh<T> {
    fn from_parts(dim: usize, coords: Vec<T>, cells: Vec<usize>, face_mask: Vec<u8>) -> Self {
        let mut interior_index = Vec::with_capacity(face_mask.len());
        let mut interior_vertices = Vec::new();
        for (v, mask) in face_mask.iter().enumerate() {
            if *mask == 0 {
                interior_index.push(Some(interior_vertices.len()));
                interior_vertices.push(v);
            } else {
                interior_index.push(None);
            }
        }
        Self {
            dim,
            coords,
            cells,
            face_mask,
            interior_index,
            interior_vertices,
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_vertices(&self) -> usize {
        self.face_mask.len()
    }

    pub fn num_cells(&self) -> usize {
        self.cells.len() / (self.dim + 1)
    }

    pub fn vertex(&self, v: usize) -> &[T] {
        &self.coords[v * self.dim..(v + 1) * self.dim]
    }

    pub fn cell(&self, c: usize) -> &[usize] {
        let nv = self.dim + 1;
        &self.cells[c * nv..(c + 1) * nv]
    }

    pub fn cells(&self) -> impl Iterator<Item = &[usize]> {
        self.cells.chunks_exact(self.dim + 1)
    }

    pub fn is_boundary(&self, v: usize) -> bool {
        self.face_mask[v] != 0
    }

    pub fn interior_index(&self, v: usize) -> Option<usize> {
        self.interior_index[v]
    }

    /// Interior DOF count `N`.
    pub fn num_interior(&self) -> usize {
        self.interior_vertices.len()
    }

    /// Vertex index of each interior DOF, the inverse of `interior_index`.
    pub fn interior_vertices(&self) -> &[usize] {
        &self.interior_vertices
    }

    /// Signed volume of cell `c` (area in 2D).
    pub fn signed_volume(&self, c: usize) -> T {
        let cell = self.cell(c);
        let pts: Vec<&[T]> = cell.iter().map(|&v| self.vertex(v)).collect();
        simplex_signed_volume(&pts)
    }

    pub fn total_volume(&self) -> T {
        (0..self.num_cells()).map(|c| self.signed_volume(c)).sum()
    }

    /// Longest edge over all cells.
    pub fn mesh_size(&self) -> T {
        let mut h = T::zero();
        for cell in self.cells() {
            for i in 0..cell.len() {
                for j in i + 1..cell.len() {
                    h = h.max(distance(self.vertex(cell[i]), self.vertex(cell[j])));
                }
            }
        }
        h
    }

    /// Checks the structural invariants against the box the mesh discretizes.
    pub fn validate(&self, domain: &BoxDomain<T>) -> Result<()> {
        if domain.dim() != self.dim {
            return Err(Error::InvalidMesh("mesh/box dimension mismatch".into()));
        }
        for c in 0..self.num_cells() {
            let vol = self.signed_volume(c);
            if !(vol > T::zero()) {
                return Err(Error::InvalidMesh(format!(
                    "cell {c} has nonpositive volume {vol}"
                )));
            }
        }
        let tol = T::tol(1e-12);
        for v in 0..self.num_vertices() {
            let x = self.vertex(v);
            for axis in 0..self.dim {
                let scale = domain.extent(axis);
                let on_lo = ((x[axis] - domain.lower[axis]) / scale).abs() <= tol;
                let on_hi = ((x[axis] - domain.upper[axis]) / scale).abs() <= tol;
                let flag_lo = self.face_mask[v] & (1 << (2 * axis)) != 0;
                let flag_hi = self.face_mask[v] & (1 << (2 * axis + 1)) != 0;
                if on_lo != flag_lo || on_hi != flag_hi {
                    return Err(Error::InvalidMesh(format!(
                        "vertex {v} boundary flag inconsistent with coordinates on axis {axis}"
                    )));
                }
            }
        }
        let mut seen = vec![false; self.num_interior()];
        for v in 0..self.num_vertices() {
            match (self.interior_index[v], self.is_boundary(v)) {
                (Some(i), false) if !seen[i] => seen[i] = true,
                (None, true) => {}
                _ => {
                    return Err(Error::InvalidMesh(format!(
                        "interior index map is not a bijection at vertex {v}"
                    )))
                }
            }
        }
        Ok(())
    }

    /// Plain-text dump: header `d nv nc`, then `nv` coordinate lines, then
    /// `nc` lines of vertex indices.
    pub fn write_dump<W: Write>(&self, mut out: W) -> io::Result<()> {
        writeln!(out, "{} {} {}", self.dim, self.num_vertices(), self.num_cells())?;
        for v in 0..self.num_vertices() {
            let line: Vec<String> = self.vertex(v).iter().map(|x| format!("{x:e}")).collect();
            writeln!(out, "{}", line.join(" "))?;
        }
        for cell in self.cells() {
            let line: Vec<String> = cell.iter().map(|v| v.to_string()).collect();
            writeln!(out, "{}", line.join(" "))?;
        }
        Ok(())
    }
}

fn distance<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter()
        .zip(b)
        .map(|(x, y)| (*x - *y) * (*x - *y))
        .sum::<T>()
        .sqrt()
}

/// Signed volume of a simplex given by `d+1` points in `R^d`, `d ∈ {2,3}`.
pub(crate) fn simplex_signed_volume<T: Scalar>(pts: &[&[T]]) -> T {
    let d = pts.len() - 1;
    let e = |i: usize, a: usize| pts[i + 1][a] - pts[0][a];
    match d {
        2 => (e(0, 0) * e(1, 1) - e(0, 1) * e(1, 0)) / T::lit(2.0),
        3 => {
            let det = e(0, 0) * (e(1, 1) * e(2, 2) - e(1, 2) * e(2, 1))
                - e(0, 1) * (e(1, 0) * e(2, 2) - e(1, 2) * e(2, 0))
                + e(0, 2) * (e(1, 0) * e(2, 1) - e(1, 1) * e(2, 0));
            det / T::lit(6.0)
        }
        _ => unreachable!("only triangles and tetrahedra are supported"),
    }
}

/// Tensor grid with `divisions` cells per axis, each square split into two
/// triangles and each cube into the six Kuhn tetrahedra sharing the main
/// diagonal.
pub fn build_coarse_mesh<T: Scalar>(domain: &BoxDomain<T>, divisions: usize) -> Result<Mesh<T>> {
    if divisions == 0 {
        return Err(Error::InvalidMesh("divisions must be at least 1".into()));
    }
    let dim = domain.dim();
    let k1 = divisions + 1;
    let nv = k1.pow(dim as u32);
    let mut coords = Vec::with_capacity(nv * dim);
    let mut face_mask = Vec::with_capacity(nv);
    let step: Vec<T> = (0..dim)
        .map(|a| domain.extent(a) / T::from_count(divisions))
        .collect();
    for lin in 0..nv {
        let mut rest = lin;
        let mut mask = 0u8;
        for axis in 0..dim {
            let i = rest % k1;
            rest /= k1;
            let x = if i == divisions {
                domain.upper[axis]
            } else {
                domain.lower[axis] + T::from_count(i) * step[axis]
            };
            coords.push(x);
            if i == 0 {
                mask |= 1 << (2 * axis);
            }
            if i == divisions {
                mask |= 1 << (2 * axis + 1);
            }
        }
        face_mask.push(mask);
    }

    let index = |ijk: &[usize]| -> usize {
        ijk.iter().rev().fold(0, |acc, &i| acc * k1 + i)
    };
    let perms: &[(&[usize], bool)] = if dim == 2 {
        &[(&[0, 1], true), (&[1, 0], false)]
    } else {
        &[
            (&[0, 1, 2], true),
            (&[0, 2, 1], false),
            (&[1, 0, 2], false),
            (&[1, 2, 0], true),
            (&[2, 0, 1], true),
            (&[2, 1, 0], false),
        ]
    };
    let ncubes = divisions.pow(dim as u32);
    let mut cells = Vec::with_capacity(ncubes * perms.len() * (dim + 1));
    let mut base = vec![0usize; dim];
    for lin in 0..ncubes {
        let mut rest = lin;
        for b in base.iter_mut() {
            *b = rest % divisions;
            rest /= divisions;
        }
        for (perm, even) in perms {
            let mut corner = base.clone();
            let start = cells.len();
            cells.push(index(&corner));
            for &axis in perm.iter() {
                corner[axis] += 1;
                cells.push(index(&corner));
            }
            // The path simplex has the orientation of the axis permutation.
            if !even {
                cells.swap(start + dim - 1, start + dim);
            }
        }
    }
    Ok(Mesh::from_parts(dim, coords, cells, face_mask))
}

/// Red refinement: every triangle into 4, every tetrahedron into 8, with new
/// vertices at edge midpoints. Returns the fine mesh and, for every fine
/// vertex, its origin in the input mesh.
pub fn refine_uniform<T: Scalar>(mesh: &Mesh<T>) -> (Mesh<T>, Vec<VertexParent>) {
    let dim = mesh.dim;
    let nv_old = mesh.num_vertices();
    let mut coords = mesh.coords.clone();
    let mut face_mask = mesh.face_mask.clone();
    let mut parents: Vec<VertexParent> = (0..nv_old).map(VertexParent::Vertex).collect();
    let mut midpoints: HashMap<(usize, usize), usize> = HashMap::new();

    let children_per_cell = if dim == 2 { 4 } else { 8 };
    let mut cells = Vec::with_capacity(mesh.cells.len() * children_per_cell);

    let mut midpoint = |a: usize, b: usize, coords: &mut Vec<T>| -> usize {
        let key = (a.min(b), a.max(b));
        *midpoints.entry(key).or_insert_with(|| {
            let id = face_mask.len();
            for axis in 0..dim {
                let x = (coords[key.0 * dim + axis] + coords[key.1 * dim + axis]) / T::lit(2.0);
                coords.push(x);
            }
            face_mask.push(face_mask[key.0] & face_mask[key.1]);
            parents.push(VertexParent::Edge(key.0, key.1));
            id
        })
    };

    for cell in mesh.cells() {
        let nloc = dim + 1;
        let mut mid = [[0usize; 4]; 4];
        for i in 0..nloc {
            for j in i + 1..nloc {
                let m = midpoint(cell[i], cell[j], &mut coords);
                mid[i][j] = m;
                mid[j][i] = m;
            }
        }
        let children: Vec<Vec<usize>> = if dim == 2 {
            let [a, b, c] = [cell[0], cell[1], cell[2]];
            vec![
                vec![a, mid[0][1], mid[0][2]],
                vec![mid[0][1], b, mid[1][2]],
                vec![mid[0][2], mid[1][2], c],
                vec![mid[0][1], mid[1][2], mid[0][2]],
            ]
        } else {
            tet_children(cell, &mid, &coords)
        };
        for mut child in children {
            let pts: Vec<&[T]> = child
                .iter()
                .map(|&v| &coords[v * dim..(v + 1) * dim])
                .collect();
            if simplex_signed_volume(&pts) < T::zero() {
                child.swap(dim - 1, dim);
            }
            cells.extend_from_slice(&child);
        }
    }
    (Mesh::from_parts(dim, coords, cells, face_mask), parents)
}

fn tet_children<T: Scalar>(cell: &[usize], mid: &[[usize; 4]; 4], coords: &[T]) -> Vec<Vec<usize>> {
    let x = |v: usize| &coords[v * 3..v * 3 + 3];
    let dist2 = |a: usize, b: usize| -> T {
        x(a).iter().zip(x(b)).map(|(p, q)| (*p - *q) * (*p - *q)).sum()
    };
    // Interior diagonal candidates, as pairs of opposite parent edges.
    const OPTIONS: [(usize, usize, usize, usize); 3] = [(0, 2, 1, 3), (0, 1, 2, 3), (0, 3, 1, 2)];
    let diag: Vec<T> = OPTIONS
        .iter()
        .map(|&(p, q, r, s)| dist2(mid[p][q], mid[r][s]))
        .collect();
    let shortest = diag.iter().fold(T::infinity(), |m, d| m.min(*d));
    let tie = shortest * (T::one() + T::tol(1e-8));
    // Among the shortest diagonals prefer the one whose parent edges avoid
    // the longest edge; for Kuhn tetrahedra this is the Freudenthal split and
    // keeps all children similar to the parent.
    let (p, q, r, s) = OPTIONS
        .iter()
        .zip(&diag)
        .filter(|(_, d)| **d <= tie)
        .map(|(o, _)| {
            let (p, q, r, s) = *o;
            let longer = dist2(cell[p], cell[q]).max(dist2(cell[r], cell[s]));
            (o, longer)
        })
        .fold(None::<(&(usize, usize, usize, usize), T)>, |best, cand| match best {
            Some(b) if b.1 <= cand.1 => Some(b),
            _ => Some(cand),
        })
        .map(|(o, _)| *o)
        .expect("at least one diagonal");

    let mut out = Vec::with_capacity(8);
    for i in 0..4 {
        let mut child = vec![cell[i]];
        child.extend((0..4).filter(|&j| j != i).map(|j| mid[i][j]));
        out.push(child);
    }
    let (d0, d1) = (mid[p][q], mid[r][s]);
    let ring = [mid[p][r], mid[p][s], mid[q][s], mid[q][r]];
    for i in 0..4 {
        out.push(vec![d0, d1, ring[i], ring[(i + 1) % 4]]);
    }
    out
}

/// Nested meshes: `levels[0]` is the coarse mesh, `levels[k]` the `k`-fold
/// red refinement. `parents[k-1]` maps level-`k` vertices to level `k-1`.
#[derive(Debug, Clone)]
pub struct MeshHierarchy<T> {
    domain: BoxDomain<T>,
    divisions: usize,
    levels: Vec<Mesh<T>>,
    parents: Vec<Vec<VertexParent>>,
}

/// Refinement factor of the hierarchy.
pub const REFINEMENT_INDEX: usize = 2;

impl<T: Scalar> MeshHierarchy<T> {
    /// Builds `num_levels` nested meshes. Fails before allocating anything if
    /// the finest interior DOF count would exceed `max_dofs`.
    pub fn build(
        domain: &BoxDomain<T>,
        divisions: usize,
        num_levels: usize,
        max_dofs: usize,
    ) -> Result<Self> {
        if num_levels == 0 {
            return Err(Error::InvalidMesh("hierarchy needs at least one level".into()));
        }
        if divisions == 0 {
            return Err(Error::InvalidMesh("divisions must be at least 1".into()));
        }
        let finest_div = divisions
            .checked_mul(1usize << (num_levels - 1).min(60))
            .unwrap_or(usize::MAX);
        let finest_dofs = finest_div
            .saturating_sub(1)
            .checked_pow(domain.dim() as u32)
            .unwrap_or(usize::MAX);
        if finest_dofs > max_dofs {
            return Err(Error::MemoryCap {
                dofs: finest_dofs,
                cap: max_dofs,
            });
        }
        let mut levels = vec![build_coarse_mesh(domain, divisions)?];
        let mut parents = Vec::new();
        for _ in 1..num_levels {
            let (fine, map) = refine_uniform(levels.last().expect("nonempty"));
            levels.push(fine);
            parents.push(map);
        }
        Ok(Self {
            domain: domain.clone(),
            divisions,
            levels,
            parents,
        })
    }

    pub fn domain(&self) -> &BoxDomain<T> {
        &self.domain
    }

    pub fn coarse_divisions(&self) -> usize {
        self.divisions
    }

    pub fn num_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn level(&self, k: usize) -> &Mesh<T> {
        &self.levels[k]
    }

    pub fn levels(&self) -> &[Mesh<T>] {
        &self.levels
    }

    pub fn finest(&self) -> &Mesh<T> {
        self.levels.last().expect("nonempty hierarchy")
    }

    /// Parent map of level `k ≥ 1`.
    pub fn parents(&self, k: usize) -> &[VertexParent] {
        &self.parents[k - 1]
    }

    /// Mesh size `h_k`, the coarse grid spacing halved `k` times (longest
    /// cell edge).
    pub fn mesh_size(&self, k: usize) -> T {
        self.levels[k].mesh_size()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_square() -> BoxDomain<f64> {
        BoxDomain::unit(2).unwrap()
    }

    #[test]
    fn coarse_square_counts() {
        let m = build_coarse_mesh(&unit_square(), 2).unwrap();
        assert_eq!(m.num_vertices(), 9);
        assert_eq!(m.num_cells(), 8);
        assert_eq!(m.num_interior(), 1);
        m.validate(&unit_square()).unwrap();
    }

    #[test]
    fn coarse_cube_counts() {
        let d = BoxDomain::<f64>::unit(3).unwrap();
        let m = build_coarse_mesh(&d, 2).unwrap();
        assert_eq!(m.num_vertices(), 27);
        assert_eq!(m.num_cells(), 48);
        assert_eq!(m.num_interior(), 1);
        m.validate(&d).unwrap();
    }

    #[test]
    fn harmonic_box_kuhn_split_nondegenerate() {
        let d = BoxDomain::<f64>::cube(-4.0, 4.0, 3).unwrap();
        let m = build_coarse_mesh(&d, 8).unwrap();
        assert_eq!(m.num_cells(), 3072);
        for c in 0..m.num_cells() {
            assert!(m.signed_volume(c) > 0.0);
        }
        assert!((m.total_volume() - 512.0).abs() < 1e-10);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(build_coarse_mesh(&unit_square(), 0).is_err());
        assert!(BoxDomain::new(vec![0.0, 1.0], vec![1.0, 1.0]).is_err());
        assert!(BoxDomain::new(vec![0.0], vec![1.0]).is_err());
        assert!(MeshHierarchy::build(&unit_square(), 4, 0, usize::MAX).is_err());
    }

    #[test]
    fn refine_square_counts() {
        let m = build_coarse_mesh(&unit_square(), 2).unwrap();
        let (f, parents) = refine_uniform(&m);
        assert_eq!(f.num_cells(), 32);
        assert_eq!(f.num_vertices(), 25);
        assert_eq!(f.num_interior(), 9);
        assert_eq!(parents.len(), 25);
        f.validate(&unit_square()).unwrap();
        for (v, p) in parents.iter().enumerate().take(m.num_vertices()) {
            assert_eq!(*p, VertexParent::Vertex(v));
            assert_eq!(f.vertex(v), m.vertex(v));
        }
    }

    #[test]
    fn children_partition_parent() {
        for dim in [2, 3] {
            let d = BoxDomain::new(vec![-1.0; dim], vec![2.0; dim]).unwrap();
            let m = build_coarse_mesh(&d, 2).unwrap();
            let (f, _) = refine_uniform(&m);
            let per = if dim == 2 { 4 } else { 8 };
            for c in 0..m.num_cells() {
                let child_sum: f64 = (0..per).map(|i| f.signed_volume(c * per + i)).sum();
                assert!((child_sum - m.signed_volume(c)).abs() < 1e-12);
            }
        }
    }

    fn sorted_points(m: &Mesh<f64>) -> Vec<Vec<f64>> {
        let mut pts: Vec<Vec<f64>> = (0..m.num_vertices()).map(|v| m.vertex(v).to_vec()).collect();
        pts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        pts
    }

    #[test]
    fn twice_refined_matches_structured_grid() {
        let two = build_coarse_mesh(&unit_square(), 2).unwrap();
        let (r1, _) = refine_uniform(&two);
        let (r2, _) = refine_uniform(&r1);
        let direct = build_coarse_mesh(&unit_square(), 8).unwrap();
        assert_eq!(sorted_points(&r2), sorted_points(&direct));
    }

    #[test]
    fn hierarchy_dof_counts() {
        let h = MeshHierarchy::build(&unit_square(), 4, 4, usize::MAX).unwrap();
        let dofs: Vec<usize> = h.levels().iter().map(|m| m.num_interior()).collect();
        assert_eq!(dofs, vec![9, 49, 225, 961]);
        let single = MeshHierarchy::build(&unit_square(), 4, 1, usize::MAX).unwrap();
        assert_eq!(single.num_levels(), 1);
    }

    #[test]
    fn hierarchy_memory_cap() {
        let err = MeshHierarchy::build(&unit_square(), 4, 4, 500).unwrap_err();
        assert_eq!(err, Error::MemoryCap { dofs: 961, cap: 500 });
    }

    #[test]
    fn hierarchy_invariants_3d() {
        let d = BoxDomain::<f64>::unit(3).unwrap();
        let h = MeshHierarchy::build(&d, 2, 3, usize::MAX).unwrap();
        for k in 0..h.num_levels() {
            h.level(k).validate(&d).unwrap();
            assert!((h.level(k).total_volume() - 1.0).abs() < 1e-10);
        }
        for k in 1..h.num_levels() {
            assert_eq!(h.level(k).num_cells(), 8 * h.level(k - 1).num_cells());
            let ratio = h.mesh_size(k - 1) / h.mesh_size(k);
            assert!((ratio - 2.0).abs() < 1e-12, "ratio {ratio}");
        }
    }

    #[test]
    fn kuhn_refinement_keeps_edge_lengths_self_similar() {
        // Every level of a Kuhn mesh on a cube uses only edges of length
        // h, √2 h and √3 h.
        let d = BoxDomain::<f64>::unit(3).unwrap();
        let h = MeshHierarchy::build(&d, 1, 4, usize::MAX).unwrap();
        for k in 0..h.num_levels() {
            let m = h.level(k);
            let step = 1.0 / (1 << k) as f64;
            for cell in m.cells() {
                for i in 0..4 {
                    for j in i + 1..4 {
                        let l = distance(m.vertex(cell[i]), m.vertex(cell[j])) / step;
                        let ok = [1.0, 2f64.sqrt(), 3f64.sqrt()]
                            .iter()
                            .any(|e| (l - e).abs() < 1e-9);
                        assert!(ok, "level {k}: edge ratio {l}");
                    }
                }
            }
        }
    }

    #[test]
    fn conforming_faces() {
        // In a conforming simplicial mesh every interior facet is shared by
        // exactly two cells and boundary facets by one.
        for dim in [2, 3] {
            let d = BoxDomain::<f64>::unit(dim).unwrap();
            let h = MeshHierarchy::build(&d, 2, 3, usize::MAX).unwrap();
            let m = h.finest();
            let mut facets: HashMap<Vec<usize>, usize> = HashMap::new();
            for cell in m.cells() {
                for skip in 0..=dim {
                    let mut f: Vec<usize> = (0..=dim).filter(|&i| i != skip).map(|i| cell[i]).collect();
                    f.sort_unstable();
                    *facets.entry(f).or_default() += 1;
                }
            }
            for (f, count) in facets {
                let on_boundary = {
                    let common = f.iter().fold(0xffu8, |acc, &v| acc & m.face_mask[v]);
                    common != 0
                };
                assert_eq!(count, if on_boundary { 1 } else { 2 }, "facet {f:?}");
            }
        }
    }

    #[test]
    fn generic_over_f32() {
        let d = BoxDomain::<f32>::unit(2).unwrap();
        let h = MeshHierarchy::build(&d, 2, 3, usize::MAX).unwrap();
        assert_eq!(h.finest().num_interior(), 49);
        h.finest().validate(&d).unwrap();
    }

    #[test]
    fn dump_format() {
        let m = build_coarse_mesh(&unit_square(), 1).unwrap();
        let mut buf = Vec::new();
        m.write_dump(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "2 4 2");
        assert_eq!(lines.len(), 1 + 4 + 2);
        assert_eq!(lines[5].split_whitespace().count(), 3);
    }
}
