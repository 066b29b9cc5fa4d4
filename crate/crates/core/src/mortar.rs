//! Mortar coupling of nonconforming surface meshes.
//!
//! The mortar matrix `P[i][j] = ∫ λ_i λ_j` couples P1 functions of a row mesh
//! with those of a column mesh covering the same polyhedral surface. It is
//! computed plane by plane with an advancing front: starting from one
//! intersecting pair, the intersections of a row triangle are found by a walk
//! over the column mesh, and the neighbours of each finished row triangle are
//! seeded with a column triangle that already intersected it.

use std::collections::VecDeque;
use std::io::Write as _;
use std::path::Path;

use rayon::prelude::*;

use crate::dense::DenseMatrix;
use crate::mesh::{tangent_basis, Mesh};
use crate::space::{MassInverse, P1Space};
use crate::sparse::{CooMatrix, CsrMatrix};
use crate::{Error, Result, Vec3, C64};

/// Relative tolerance for clipping and plane matching, scaled by the patch
/// diameter.
pub const EPS_REL: f64 = 1e-10;

/// Orthonormal frame of a plane.
#[derive(Clone, Copy, Debug)]
pub struct PlaneFrame {
    pub origin: Vec3,
    pub e1: Vec3,
    pub e2: Vec3,
    pub normal: Vec3,
}

impl PlaneFrame {
    pub fn new(origin: Vec3, normal: Vec3) -> Self {
        let normal = normal.normalize();
        let (e1, e2) = tangent_basis(&normal);
        // right-handed: e1 × e2 = normal
        let e2 = if e1.cross(&e2).dot(&normal) > 0.0 { e2 } else { -e2 };
        PlaneFrame { origin, e1, e2, normal }
    }

    pub fn project(&self, p: &Vec3) -> [f64; 2] {
        let d = p - self.origin;
        [d.dot(&self.e1), d.dot(&self.e2)]
    }

    pub fn distance(&self, p: &Vec3) -> f64 {
        (p - self.origin).dot(&self.normal)
    }
}

/// Convex intersection polygon in plane coordinates, counter-clockwise.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ClipPolygon {
    pub points: Vec<[f64; 2]>,
}

impl ClipPolygon {
    pub fn area(&self) -> f64 {
        let n = self.points.len();
        if n < 3 {
            return 0.0;
        }
        let mut s = 0.0;
        for i in 0..n {
            let p = self.points[i];
            let q = self.points[(i + 1) % n];
            s += p[0] * q[1] - q[0] * p[1];
        }
        0.5 * s
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }
}

fn cross2(o: &[f64; 2], a: &[f64; 2], b: &[f64; 2]) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

fn ccw(mut t: [[f64; 2]; 3]) -> [[f64; 2]; 3] {
    if cross2(&t[0], &t[1], &t[2]) < 0.0 {
        t.swap(1, 2);
    }
    t
}

/// Successive half-plane clipping of triangle `a` by the edges of `b`, both
/// in plane coordinates. Points within `eps` of an edge count as inside, so
/// touching triangles give a degenerate (zero-area) but non-empty polygon.
pub fn clip_2d(a: &[[f64; 2]; 3], b: &[[f64; 2]; 3], eps: f64) -> ClipPolygon {
    let a = ccw(*a);
    let b = ccw(*b);
    let mut poly: Vec<[f64; 2]> = a.to_vec();
    let mut next = Vec::with_capacity(8);
    for e in 0..3 {
        let p = b[e];
        let q = b[(e + 1) % 3];
        let len = ((q[0] - p[0]).powi(2) + (q[1] - p[1]).powi(2)).sqrt();
        let side = |x: &[f64; 2]| cross2(&p, &q, x) / len;
        next.clear();
        let n = poly.len();
        for i in 0..n {
            let cur = poly[i];
            let nxt = poly[(i + 1) % n];
            let sc = side(&cur);
            let sn = side(&nxt);
            let cin = sc >= -eps;
            let nin = sn >= -eps;
            if cin {
                next.push(cur);
            }
            if cin != nin && (sc.abs() > eps || sn.abs() > eps) {
                let t = sc / (sc - sn);
                if t > 0.0 && t < 1.0 {
                    next.push([cur[0] + t * (nxt[0] - cur[0]), cur[1] + t * (nxt[1] - cur[1])]);
                }
            }
        }
        std::mem::swap(&mut poly, &mut next);
        if poly.is_empty() {
            return ClipPolygon::default();
        }
    }
    // merge coincident consecutive points
    let mut out: Vec<[f64; 2]> = Vec::with_capacity(poly.len());
    for p in poly {
        if out.last().is_none_or(|l: &[f64; 2]| (l[0] - p[0]).abs() > eps || (l[1] - p[1]).abs() > eps) {
            out.push(p);
        }
    }
    while out.len() > 1 {
        let (f, l) = (out[0], out[out.len() - 1]);
        if (f[0] - l[0]).abs() <= eps && (f[1] - l[1]).abs() <= eps {
            out.pop();
        } else {
            break;
        }
    }
    ClipPolygon { points: out }
}

/// Intersection of two coplanar triangles in 3D.
pub fn clip_triangles(ta: &[Vec3; 3], tb: &[Vec3; 3], eps_clip: f64) -> Result<(ClipPolygon, PlaneFrame)> {
    let normal = (ta[1] - ta[0]).cross(&(ta[2] - ta[0]));
    let frame = PlaneFrame::new(ta[0], normal);
    let dist = tb.iter().map(|p| frame.distance(p).abs()).fold(0.0, f64::max);
    if dist > eps_clip {
        return Err(Error::NotCoplanar(dist));
    }
    let a = ta.map(|p| frame.project(&p));
    let b = tb.map(|p| frame.project(&p));
    Ok((clip_2d(&a, &b, eps_clip), frame))
}

/// Affine barycentric coordinates of a planar triangle.
#[derive(Clone, Copy, Debug)]
struct Barycentric {
    origin: [f64; 2],
    inv: [[f64; 2]; 2],
}

impl Barycentric {
    fn new(t: &[[f64; 2]; 3]) -> Self {
        let (a, b, c, d) = (t[1][0] - t[0][0], t[2][0] - t[0][0], t[1][1] - t[0][1], t[2][1] - t[0][1]);
        let det = a * d - b * c;
        Barycentric { origin: t[0], inv: [[d / det, -b / det], [-c / det, a / det]] }
    }

    fn eval(&self, x: &[f64; 2]) -> [f64; 3] {
        let dx = x[0] - self.origin[0];
        let dy = x[1] - self.origin[1];
        let l1 = self.inv[0][0] * dx + self.inv[0][1] * dy;
        let l2 = self.inv[1][0] * dx + self.inv[1][1] * dy;
        [1.0 - l1 - l2, l1, l2]
    }
}

/// `∫_{poly} λ_a,i λ_b,j` by fan triangulation and the edge-midpoint rule,
/// exact for the quadratic integrand.
fn cell_matrix(poly: &ClipPolygon, ba: &Barycentric, bb: &Barycentric) -> [[f64; 3]; 3] {
    let mut m = [[0.0; 3]; 3];
    let p = &poly.points;
    for k in 1..p.len().saturating_sub(1) {
        let t = [p[0], p[k], p[k + 1]];
        let area = 0.5 * cross2(&t[0], &t[1], &t[2]);
        if area <= 0.0 {
            continue;
        }
        for e in 0..3 {
            let u = t[e];
            let v = t[(e + 1) % 3];
            let mid = [0.5 * (u[0] + v[0]), 0.5 * (u[1] + v[1])];
            let la = ba.eval(&mid);
            let lb = bb.eval(&mid);
            for i in 0..3 {
                for j in 0..3 {
                    m[i][j] += area / 3.0 * la[i] * lb[j];
                }
            }
        }
    }
    m
}

/// Local mortar matrix of two coplanar triangles.
pub fn mortar_cell(ta: &[Vec3; 3], tb: &[Vec3; 3], eps_clip: f64) -> Result<[[f64; 3]; 3]> {
    let (poly, frame) = clip_triangles(ta, tb, eps_clip)?;
    let a = ta.map(|p| frame.project(&p));
    let b = tb.map(|p| frame.project(&p));
    Ok(cell_matrix(&poly, &Barycentric::new(&a), &Barycentric::new(&b)))
}

/// Triangles of one mesh lying in a common plane.
struct PlaneGroup {
    frame: PlaneFrame,
    triangles: Vec<usize>,
}

fn plane_groups(mesh: &Mesh, eps_plane: f64) -> Vec<PlaneGroup> {
    let patches = mesh.planar_patches(1e-6);
    let mut groups: Vec<PlaneGroup> = Vec::new();
    for (members, plane) in patches.patches.iter().zip(&patches.planes) {
        let found = groups.iter_mut().find(|g| {
            g.frame.normal.dot(&plane.normal) > 1.0 - 1e-8 && g.frame.distance(&plane.point).abs() < eps_plane
        });
        match found {
            Some(g) => g.triangles.extend(members),
            None => groups.push(PlaneGroup {
                frame: PlaneFrame::new(plane.point, plane.normal),
                triangles: members.clone(),
            }),
        }
    }
    groups
}

/// Diagnostics of a mortar assembly.
#[derive(Clone, Debug, Default, serde::Serialize)]
pub struct MortarStats {
    pub planes: usize,
    /// Triangle pairs with a positive-area intersection.
    pub cells: usize,
    /// Clipping operations performed.
    pub clips: usize,
    /// Number of times the front had to be reseeded.
    pub seeds: usize,
}

/// Sparse mortar matrix between a row space and a column space.
#[derive(Clone, Debug)]
pub struct MortarMatrix {
    pub matrix: CsrMatrix,
    pub stats: MortarStats,
}

impl MortarMatrix {
    /// Writes the nonzeros as `row col value` lines.
    pub fn write_triplets(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        for (i, j, v) in self.matrix.iter() {
            writeln!(f, "{i} {j} {v:.17e}")?;
        }
        Ok(())
    }
}

struct GroupResult {
    coo: CooMatrix,
    stats: MortarStats,
}

/// Assembles `P[i][j] = ∫ λ_i^row λ_j^col` with the advancing front.
pub fn assemble_mortar(row: &P1Space, col: &P1Space) -> Result<MortarMatrix> {
    let mesh_a = row.mesh();
    let mesh_b = col.mesh();
    let diam = mesh_a.bbox_diagonal().max(mesh_b.bbox_diagonal());
    let eps = EPS_REL * diam;
    let groups_a = plane_groups(mesh_a, eps);
    let groups_b = plane_groups(mesh_b, eps);
    let mut pairs = Vec::with_capacity(groups_a.len());
    let mut used_b = vec![false; groups_b.len()];
    for (ia, ga) in groups_a.iter().enumerate() {
        let found = groups_b.iter().position(|gb| {
            gb.frame.normal.dot(&ga.frame.normal) > 1.0 - 1e-8 && ga.frame.distance(&gb.frame.origin).abs() < eps
        });
        match found {
            Some(ib) if !used_b[ib] => {
                used_b[ib] = true;
                pairs.push((ia, ib));
            }
            _ => {
                return Err(Error::PatchPairing(format!(
                    "plane through {:?} with normal {:?} has no partner",
                    ga.frame.origin.as_slice(),
                    ga.frame.normal.as_slice()
                )))
            }
        }
    }
    if let Some(ib) = used_b.iter().position(|u| !u) {
        return Err(Error::PatchPairing(format!("column plane {ib} has no partner")));
    }
    let adj_a = mesh_a.element_adjacency();
    let adj_b = mesh_b.element_adjacency();
    let results: Vec<Result<GroupResult>> = pairs
        .par_iter()
        .enumerate()
        .map(|(plane, &(ia, ib))| {
            advancing_front(row, col, &groups_a[ia], &groups_b[ib], &adj_a, &adj_b, eps, plane)
        })
        .collect();
    let mut coo = CooMatrix::new(row.n_dofs(), col.n_dofs());
    let mut stats = MortarStats { planes: pairs.len(), ..Default::default() };
    for r in results {
        let r = r?;
        stats.cells += r.stats.cells;
        stats.clips += r.stats.clips;
        stats.seeds += r.stats.seeds;
        coo.extend(r.coo);
    }
    Ok(MortarMatrix { matrix: coo.to_csr(), stats })
}

#[allow(clippy::too_many_arguments)]
fn advancing_front(
    row: &P1Space,
    col: &P1Space,
    ga: &PlaneGroup,
    gb: &PlaneGroup,
    adj_a: &[[Option<usize>; 3]],
    adj_b: &[[Option<usize>; 3]],
    eps: f64,
    plane: usize,
) -> Result<GroupResult> {
    let mesh_a = row.mesh();
    let mesh_b = col.mesh();
    let frame = &ga.frame;
    // local numbering inside the group
    let mut local_a = vec![usize::MAX; mesh_a.n_triangles()];
    let mut local_b = vec![usize::MAX; mesh_b.n_triangles()];
    for (k, &t) in ga.triangles.iter().enumerate() {
        local_a[t] = k;
    }
    for (k, &t) in gb.triangles.iter().enumerate() {
        local_b[t] = k;
    }
    let project = |mesh: &Mesh, t: usize| mesh.triangle_points(t).map(|p| frame.project(&p));
    let tri_a: Vec<[[f64; 2]; 3]> = ga.triangles.iter().map(|&t| ccw(project(mesh_a, t))).collect();
    let tri_b: Vec<[[f64; 2]; 3]> = gb.triangles.iter().map(|&t| ccw(project(mesh_b, t))).collect();
    let bary_a: Vec<Barycentric> = ga.triangles.iter().map(|&t| Barycentric::new(&project(mesh_a, t))).collect();
    let bary_b: Vec<Barycentric> = gb.triangles.iter().map(|&t| Barycentric::new(&project(mesh_b, t))).collect();
    let centroid = |t: &[[f64; 2]; 3]| [(t[0][0] + t[1][0] + t[2][0]) / 3.0, (t[0][1] + t[1][1] + t[2][1]) / 3.0];
    let cen_b: Vec<[f64; 2]> = tri_b.iter().map(centroid).collect();
    let min_area = eps * eps;

    let na = tri_a.len();
    let nb = tri_b.len();
    let mut coo = CooMatrix::new(row.n_dofs(), col.n_dofs());
    let mut stats = MortarStats::default();
    let mut queued = vec![false; na];
    let mut covered = vec![0.0; na];
    let mut stamp = vec![usize::MAX; nb];
    let mut queue: VecDeque<(usize, usize)> = VecDeque::new();
    let mut hits: Vec<usize> = Vec::new();

    let clip = |a: usize, b: usize, stats: &mut MortarStats| {
        stats.clips += 1;
        clip_2d(&tri_a[a], &tri_b[b], eps)
    };

    for start in 0..na {
        if queued[start] {
            continue;
        }
        // seed: nearest centroid, then brute force
        let ca = centroid(&tri_a[start]);
        let nearest = (0..nb)
            .min_by(|&x, &y| {
                let dx = (cen_b[x][0] - ca[0]).powi(2) + (cen_b[x][1] - ca[1]).powi(2);
                let dy = (cen_b[y][0] - ca[0]).powi(2) + (cen_b[y][1] - ca[1]).powi(2);
                dx.total_cmp(&dy)
            })
            .ok_or_else(|| Error::PatchPairing(format!("plane {plane} is empty on the column mesh")))?;
        let seed = if clip(start, nearest, &mut stats).area() > min_area {
            Some(nearest)
        } else {
            (0..nb).find(|&b| clip(start, b, &mut stats).area() > min_area)
        };
        let Some(seed) = seed else { continue };
        stats.seeds += 1;
        queued[start] = true;
        queue.push_back((start, seed));

        while let Some((a, seed_b)) = queue.pop_front() {
            // walk over the column mesh collecting intersections with `a`
            hits.clear();
            let mut stack = vec![seed_b];
            stamp[seed_b] = a;
            let dofs_a = row.local_dofs(ga.triangles[a]);
            while let Some(b) = stack.pop() {
                let poly = clip(a, b, &mut stats);
                if poly.is_empty() {
                    continue;
                }
                let area = poly.area();
                if area > min_area {
                    hits.push(b);
                    covered[a] += area;
                    stats.cells += 1;
                    let m = cell_matrix(&poly, &bary_a[a], &bary_b[b]);
                    let dofs_b = col.local_dofs(gb.triangles[b]);
                    for (i, di) in dofs_a.iter().enumerate() {
                        for (j, dj) in dofs_b.iter().enumerate() {
                            if let (Some(r), Some(c)) = (di, dj) {
                                coo.push(*r, *c, m[i][j]);
                            }
                        }
                    }
                }
                for nb_global in adj_b[gb.triangles[b]].iter().flatten() {
                    let nbl = local_b[*nb_global];
                    if nbl != usize::MAX && stamp[nbl] != a {
                        stamp[nbl] = a;
                        stack.push(nbl);
                    }
                }
            }
            // candidate neighbours: seed each unvisited neighbour of `a`
            // with a column triangle that intersected `a` and also meets it
            for na_global in adj_a[ga.triangles[a]].iter().flatten() {
                let next = local_a[*na_global];
                if next == usize::MAX || queued[next] {
                    continue;
                }
                if let Some(&b) = hits.iter().find(|&&b| clip(next, b, &mut stats).area() > min_area) {
                    queued[next] = true;
                    queue.push_back((next, b));
                }
            }
        }
    }

    let mut uncovered = 0.0;
    for (a, &t) in ga.triangles.iter().enumerate() {
        let area = mesh_a.triangle_area(t);
        if (covered[a] - area).abs() > 1e-9 * area.max(1e-300) {
            uncovered += (area - covered[a]).abs();
        }
    }
    if uncovered > 0.0 {
        return Err(Error::FrontStalled { plane, uncovered });
    }
    Ok(GroupResult { coo, stats })
}

/// Defects of the mortar projections in the Frobenius and entrywise maximum
/// norms.
#[derive(Clone, Copy, Debug, Default, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ProjectionError {
    pub int_fro: f64,
    pub int_max: f64,
    pub ext_fro: f64,
    pub ext_max: f64,
}

/// `E_int = I − M_int⁻¹ P M_ext⁻¹ Pᵀ` and `E_ext = I − M_ext⁻¹ Pᵀ M_int⁻¹ P`
/// with `P` of size `N_int × N_ext`.
pub fn projection_error(m_int: &CsrMatrix, m_ext: &CsrMatrix, p: &CsrMatrix) -> Result<ProjectionError> {
    if p.nrows() != m_int.nrows() || p.ncols() != m_ext.nrows() {
        return Err(Error::Dimension(format!(
            "mortar {}x{} against masses {} and {}",
            p.nrows(),
            p.ncols(),
            m_int.nrows(),
            m_ext.nrows()
        )));
    }
    let inv_int = MassInverse::new(m_int)?;
    let inv_ext = MassInverse::new(m_ext)?;
    let pt = p.transpose();
    let e_int = defect(p.nrows(), |x| inv_int.apply(&p.matvec(&inv_ext.apply(&pt.matvec(x)))));
    let e_ext = defect(p.ncols(), |x| inv_ext.apply(&pt.matvec(&inv_int.apply(&p.matvec(x)))));
    Ok(ProjectionError { int_fro: e_int.0, int_max: e_int.1, ext_fro: e_ext.0, ext_max: e_ext.1 })
}

/// Frobenius and max norm of `I − A` for the operator `A`, column by column.
fn defect(n: usize, apply: impl Fn(&[C64]) -> Vec<C64> + Sync) -> (f64, f64) {
    let cols: Vec<(f64, f64)> = (0..n)
        .into_par_iter()
        .map(|j| {
            let mut e = vec![C64::new(0.0, 0.0); n];
            e[j] = C64::new(1.0, 0.0);
            let col = apply(&e);
            let mut fro = 0.0;
            let mut max: f64 = 0.0;
            for (i, v) in col.iter().enumerate() {
                let d = if i == j { 1.0 - v.re } else { -v.re };
                fro += d * d;
                max = max.max(d.abs());
            }
            (fro, max)
        })
        .collect();
    (cols.iter().map(|c| c.0).sum::<f64>().sqrt(), cols.iter().fold(0.0, |m, c| m.max(c.1)))
}

/// Dense copy of a sparse mortar matrix, for small oracle checks.
pub fn to_dense(p: &CsrMatrix) -> DenseMatrix {
    DenseMatrix::from_fn(p.nrows(), p.ncols(), |i, j| C64::new(p.get(i, j), 0.0))
}
