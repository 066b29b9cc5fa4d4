//! Triangular surface meshes.
//!
//! A [`Mesh`] is immutable once built. Closed meshes are outward oriented and
//! watertight; open meshes (screens) carry their boundary edges. The
//! generators reproduce the canonical geometries used by the studies: the unit
//! square, the unit cube, rectangular screens and pyramidal acoustic foam.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::{Error, Result, Vec3};

/// Diagonal layout of structured quadrilateral grids split into triangles.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DiagonalPattern {
    /// Diagonal direction alternates in a checkerboard fashion.
    Alternating,
    /// Every cell is split along the same diagonal.
    Uniform,
}

#[derive(Clone, Debug)]
pub struct Mesh {
    vertices: Vec<Vec3>,
    triangles: Vec<[usize; 3]>,
    boundary_edges: Vec<[usize; 2]>,
}

/// Edge key independent of orientation.
fn edge_key(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

impl Mesh {
    /// Builds a mesh and checks index bounds, degenerate triangles, manifold
    /// edges and orientation consistency.
    pub fn new(vertices: Vec<Vec3>, triangles: Vec<[usize; 3]>) -> Result<Self> {
        if vertices.is_empty() || triangles.is_empty() {
            return Err(Error::InvalidMesh("empty mesh".into()));
        }
        let nv = vertices.len();
        for (t, tri) in triangles.iter().enumerate() {
            if tri.iter().any(|&v| v >= nv) {
                return Err(Error::InvalidMesh(format!("triangle {t} references a missing vertex")));
            }
            if tri[0] == tri[1] || tri[1] == tri[2] || tri[0] == tri[2] {
                return Err(Error::InvalidMesh(format!("triangle {t} repeats a vertex")));
            }
        }
        let mut mesh = Mesh { vertices, triangles, boundary_edges: Vec::new() };
        let diag = mesh.bbox_diagonal();
        let min_area = 1e-14 * diag * diag;
        for t in 0..mesh.triangles.len() {
            if mesh.triangle_area(t) <= min_area {
                return Err(Error::InvalidMesh(format!("triangle {t} is degenerate")));
            }
        }

        let mut edges: HashMap<(usize, usize), Vec<(usize, usize)>> = HashMap::new();
        for tri in &mesh.triangles {
            for e in 0..3 {
                let (a, b) = (tri[e], tri[(e + 1) % 3]);
                edges.entry(edge_key(a, b)).or_default().push((a, b));
            }
        }
        let mut boundary = Vec::new();
        for (key, uses) in &edges {
            match uses.len() {
                1 => boundary.push([uses[0].0, uses[0].1]),
                2 => {
                    if uses[0] == uses[1] {
                        return Err(Error::InvalidMesh(format!(
                            "inconsistent orientation across edge {key:?}"
                        )));
                    }
                }
                n => {
                    return Err(Error::InvalidMesh(format!("edge {key:?} shared by {n} triangles")));
                }
            }
        }
        boundary.sort_unstable();
        mesh.boundary_edges = boundary;
        Ok(mesh)
    }

    pub fn vertices(&self) -> &[Vec3] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    /// Edges used by exactly one triangle, oriented as in that triangle.
    pub fn boundary_edges(&self) -> &[[usize; 2]] {
        &self.boundary_edges
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    pub fn is_closed(&self) -> bool {
        self.boundary_edges.is_empty()
    }

    pub fn triangle_points(&self, t: usize) -> [Vec3; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    /// Non-normalised normal, twice the triangle area in length.
    pub fn triangle_area_normal(&self, t: usize) -> Vec3 {
        let [p0, p1, p2] = self.triangle_points(t);
        (p1 - p0).cross(&(p2 - p0))
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        0.5 * self.triangle_area_normal(t).norm()
    }

    pub fn triangle_normal(&self, t: usize) -> Vec3 {
        self.triangle_area_normal(t).normalize()
    }

    pub fn triangle_centroid(&self, t: usize) -> Vec3 {
        let [p0, p1, p2] = self.triangle_points(t);
        (p0 + p1 + p2) / 3.0
    }

    pub fn area(&self) -> f64 {
        (0..self.n_triangles()).map(|t| self.triangle_area(t)).sum()
    }

    /// Enclosed volume from the divergence theorem; positive for outward
    /// oriented closed meshes.
    pub fn signed_volume(&self) -> f64 {
        (0..self.n_triangles())
            .map(|t| {
                let [p0, p1, p2] = self.triangle_points(t);
                p0.dot(&p1.cross(&p2)) / 6.0
            })
            .sum()
    }

    pub fn bbox(&self) -> (Vec3, Vec3) {
        let mut lo = self.vertices[0];
        let mut hi = self.vertices[0];
        for p in &self.vertices {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        (lo, hi)
    }

    pub fn bbox_diagonal(&self) -> f64 {
        let (lo, hi) = self.bbox();
        (hi - lo).norm()
    }

    /// Mesh width: the longest edge.
    pub fn max_edge_length(&self) -> f64 {
        let mut h: f64 = 0.0;
        for t in 0..self.n_triangles() {
            let p = self.triangle_points(t);
            for e in 0..3 {
                h = h.max((p[(e + 1) % 3] - p[e]).norm());
            }
        }
        h
    }

    /// Checks the closed-surface invariants: watertight, consistently and
    /// outward oriented.
    pub fn check_closed(&self) -> Result<()> {
        if !self.is_closed() {
            return Err(Error::InvalidMesh(format!(
                "{} boundary edges on a closed surface",
                self.boundary_edges.len()
            )));
        }
        let vol = self.signed_volume();
        if vol <= 0.0 {
            return Err(Error::InvalidMesh(format!("inward orientation (volume {vol})")));
        }
        Ok(())
    }

    /// Edge neighbours per triangle. Entry `e` is the triangle across the edge
    /// from local vertex `e` to local vertex `e + 1`.
    pub fn element_adjacency(&self) -> Vec<[Option<usize>; 3]> {
        let mut edges: HashMap<(usize, usize), Vec<(usize, usize)>> = HashMap::new();
        for (t, tri) in self.triangles.iter().enumerate() {
            for e in 0..3 {
                edges.entry(edge_key(tri[e], tri[(e + 1) % 3])).or_default().push((t, e));
            }
        }
        let mut adj = vec![[None; 3]; self.n_triangles()];
        for uses in edges.values() {
            if let [(t0, e0), (t1, e1)] = uses[..] {
                adj[t0][e0] = Some(t1);
                adj[t1][e1] = Some(t0);
            }
        }
        adj
    }

    /// Triangles incident to each vertex.
    pub fn vertex_triangles(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.n_vertices()];
        for (t, tri) in self.triangles.iter().enumerate() {
            for &v in tri {
                out[v].push(t);
            }
        }
        out
    }

    /// Vertices on the boundary of an open mesh.
    pub fn boundary_vertices(&self) -> Vec<bool> {
        let mut on = vec![false; self.n_vertices()];
        for e in &self.boundary_edges {
            on[e[0]] = true;
            on[e[1]] = true;
        }
        on
    }

    /// Maximal edge-connected groups of triangles with parallel normals.
    pub fn planar_patches(&self, angle_tol: f64) -> PlanarPatchSet {
        let cos_tol = angle_tol.cos();
        let adj = self.element_adjacency();
        let normals: Vec<Vec3> = (0..self.n_triangles()).map(|t| self.triangle_normal(t)).collect();
        let mut patch_of = vec![usize::MAX; self.n_triangles()];
        let mut patches = Vec::new();
        let mut planes = Vec::new();
        for seed in 0..self.n_triangles() {
            if patch_of[seed] != usize::MAX {
                continue;
            }
            let id = patches.len();
            let reference = normals[seed];
            let mut members = vec![seed];
            patch_of[seed] = id;
            let mut stack = vec![seed];
            while let Some(t) = stack.pop() {
                for nb in adj[t].iter().flatten() {
                    if patch_of[*nb] == usize::MAX && normals[*nb].dot(&reference) > cos_tol {
                        patch_of[*nb] = id;
                        members.push(*nb);
                        stack.push(*nb);
                    }
                }
            }
            members.sort_unstable();
            let mut normal = Vec3::zeros();
            for &t in &members {
                normal += self.triangle_area_normal(t);
            }
            planes.push(PatchPlane { point: self.vertices[self.triangles[seed][0]], normal: normal.normalize() });
            patches.push(members);
        }
        PlanarPatchSet { patches, planes, patch_of }
    }

    /// Randomly perturbs vertices without changing the covered surface.
    ///
    /// Vertices away from boundary and crease edges move in their tangent
    /// plane, vertices on a straight boundary or crease line move along it and
    /// all other vertices (corners) stay fixed. Each displacement component is
    /// drawn from `N(0, sigma)`; draws that invert or degenerate an incident
    /// triangle are rejected and redrawn.
    pub fn perturb_nodes(&self, sigma: f64, seed: u64) -> Result<Mesh> {
        const MAX_REDRAWS: usize = 100;
        if sigma < 0.0 || !sigma.is_finite() {
            return Err(Error::InvalidParameter(format!("sigma = {sigma}")));
        }
        if sigma == 0.0 {
            return Ok(self.clone());
        }
        let roles = self.node_roles();
        let vtri = self.vertex_triangles();
        let ref_normals: Vec<Vec3> = (0..self.n_triangles()).map(|t| self.triangle_normal(t)).collect();
        let diag = self.bbox_diagonal();
        let min_area = 1e-14 * diag * diag;
        let normal = Normal::new(0.0, sigma).expect("finite sigma");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut vertices = self.vertices.clone();

        for v in 0..vertices.len() {
            let original = vertices[v];
            let (d0, d1) = match roles[v] {
                NodeRole::Fixed => continue,
                NodeRole::Line(dir) => (dir, Vec3::zeros()),
                NodeRole::Plane(a, b) => (a, b),
            };
            let mut accepted = false;
            for _ in 0..MAX_REDRAWS {
                let s0: f64 = normal.sample(&mut rng);
                let s1: f64 = normal.sample(&mut rng);
                vertices[v] = original + d0 * s0 + d1 * s1;
                let ok = vtri[v].iter().all(|&t| {
                    let [a, b, c] = self.triangles[t];
                    let n = (vertices[b] - vertices[a]).cross(&(vertices[c] - vertices[a]));
                    0.5 * n.dot(&ref_normals[t]) > min_area
                });
                if ok {
                    accepted = true;
                    break;
                }
            }
            if !accepted {
                return Err(Error::PerturbationFailed { vertex: v, attempts: MAX_REDRAWS });
            }
        }
        Mesh::new(vertices, self.triangles.clone())
    }

    /// Movement freedom of each vertex derived from boundary and crease edges.
    fn node_roles(&self) -> Vec<NodeRole> {
        let adj = self.element_adjacency();
        let mut feature: Vec<Vec<usize>> = vec![Vec::new(); self.n_vertices()];
        for (t, tri) in self.triangles.iter().enumerate() {
            let n = self.triangle_normal(t);
            for e in 0..3 {
                let (a, b) = (tri[e], tri[(e + 1) % 3]);
                let is_feature = match adj[t][e] {
                    None => true,
                    Some(o) => o > t && n.dot(&self.triangle_normal(o)) < 1.0 - 1e-12,
                };
                if is_feature {
                    feature[a].push(b);
                    feature[b].push(a);
                }
            }
        }
        let vtri = self.vertex_triangles();
        (0..self.n_vertices())
            .map(|v| {
                let p = self.vertices[v];
                match feature[v][..] {
                    [] => {
                        let n = self.triangle_normal(vtri[v][0]);
                        let (a, b) = tangent_basis(&n);
                        NodeRole::Plane(a, b)
                    }
                    [a, b] => {
                        let da = (self.vertices[a] - p).normalize();
                        let db = (self.vertices[b] - p).normalize();
                        if da.dot(&db) < -1.0 + 1e-12 {
                            NodeRole::Line(da)
                        } else {
                            NodeRole::Fixed
                        }
                    }
                    _ => NodeRole::Fixed,
                }
            })
            .collect()
    }

    /// Unit square `[0,1]²` in the plane `z = 0`, `n` cells per side.
    pub fn structured_square(n: usize, pattern: DiagonalPattern) -> Result<Mesh> {
        Self::structured_grid(Vec3::zeros(), Vec3::x(), Vec3::y(), n, n, pattern)
    }

    /// Parallelogram `origin + s·edge_u + t·edge_v`, `s, t ∈ [0,1]`, split into
    /// `nu × nv` cells of two triangles. Normals follow `edge_u × edge_v`.
    pub fn structured_grid(
        origin: Vec3,
        edge_u: Vec3,
        edge_v: Vec3,
        nu: usize,
        nv: usize,
        pattern: DiagonalPattern,
    ) -> Result<Mesh> {
        let mut builder = MeshBuilder::new(1e-9 * (edge_u.norm() + edge_v.norm()));
        builder.add_grid(origin, edge_u, edge_v, nu, nv, pattern)?;
        builder.build()
    }

    /// Surface of the unit cube, `n` cells per edge, outward normals.
    pub fn cube_surface(n: usize) -> Result<Mesh> {
        if n == 0 {
            return Err(Error::InvalidParameter("cube resolution must be positive".into()));
        }
        let x = Vec3::x();
        let y = Vec3::y();
        let z = Vec3::z();
        let faces = [
            (Vec3::zeros(), y, x),
            (z, x, y),
            (Vec3::zeros(), x, z),
            (y, z, x),
            (Vec3::zeros(), z, y),
            (x, y, z),
        ];
        let mut builder = MeshBuilder::new(1e-9);
        for (origin, u, v) in faces {
            builder.add_grid(origin, u, v, n, n, DiagonalPattern::Alternating)?;
        }
        builder.build()
    }

    /// Open rectangular screen with corners listed in cyclic order.
    pub fn screen(corners: [Vec3; 4], n: usize) -> Result<Mesh> {
        Self::screen_with(corners, n, n)
    }

    /// Rectangular screen with `nu` cells along `c1 - c0` and `nv` along
    /// `c3 - c0`.
    pub fn screen_with(corners: [Vec3; 4], nu: usize, nv: usize) -> Result<Mesh> {
        let [c0, c1, c2, c3] = corners;
        let u = c1 - c0;
        let v = c3 - c0;
        let scale = u.norm().max(v.norm());
        if scale == 0.0 {
            return Err(Error::NonPlanarCorners("repeated corner points".into()));
        }
        let tol = 1e-10 * scale;
        for (i, a) in corners.iter().enumerate() {
            for b in &corners[i + 1..] {
                if (a - b).norm() <= tol {
                    return Err(Error::NonPlanarCorners("repeated corner points".into()));
                }
            }
        }
        let n = u.cross(&v);
        if n.norm() <= tol * scale {
            return Err(Error::NonPlanarCorners("collinear corners".into()));
        }
        let off_plane = (c2 - c0).dot(&n.normalize()).abs();
        if off_plane > tol {
            return Err(Error::NonPlanarCorners(format!("corner 2 is {off_plane:e} off the plane")));
        }
        if (c0 + u + v - c2).norm() > tol || u.dot(&v).abs() > tol * scale {
            return Err(Error::NonPlanarCorners("corners do not form a rectangle".into()));
        }
        Self::structured_grid(c0, u, v, nu, nv, DiagonalPattern::Alternating)
    }

    /// Acoustic foam: a base slab carrying `nx × ny` square pyramids.
    /// `resolution` is the number of segments along each pyramid base edge.
    pub fn foam(nx: usize, ny: usize, dims: FoamDims, resolution: usize) -> Result<Mesh> {
        if nx == 0 || ny == 0 || resolution == 0 {
            return Err(Error::InvalidParameter("foam counts must be positive".into()));
        }
        let FoamDims { base_width: w, base_thickness: t, pyramid_height: h } = dims;
        if !(w > 0.0 && t > 0.0 && h > 0.0) {
            return Err(Error::InvalidParameter("foam dimensions must be positive".into()));
        }
        let m = resolution;
        let lx = nx as f64 * w;
        let ly = ny as f64 * w;
        let mz = ((t / (w / m as f64)).round() as usize).max(1);
        let mut builder = MeshBuilder::new(1e-9 * (lx + ly + t + h));
        let x = Vec3::x();
        let y = Vec3::y();
        let z = Vec3::z();
        // bottom, facing -z
        builder.add_grid(Vec3::zeros(), y * ly, x * lx, ny * m, nx * m, DiagonalPattern::Alternating)?;
        // side walls
        builder.add_grid(Vec3::zeros(), x * lx, z * t, nx * m, mz, DiagonalPattern::Alternating)?;
        builder.add_grid(x * lx, y * ly, z * t, ny * m, mz, DiagonalPattern::Alternating)?;
        builder.add_grid(x * lx + y * ly, -x * lx, z * t, nx * m, mz, DiagonalPattern::Alternating)?;
        builder.add_grid(y * ly, -y * ly, z * t, ny * m, mz, DiagonalPattern::Alternating)?;
        for i in 0..nx {
            for j in 0..ny {
                let x0 = i as f64 * w;
                let y0 = j as f64 * w;
                let a = Vec3::new(x0, y0, t);
                let b = Vec3::new(x0 + w, y0, t);
                let c = Vec3::new(x0 + w, y0 + w, t);
                let d = Vec3::new(x0, y0 + w, t);
                let apex = Vec3::new(x0 + 0.5 * w, y0 + 0.5 * w, t + h);
                for (p, q) in [(a, b), (b, c), (c, d), (d, a)] {
                    builder.add_subdivided_triangle(p, q, apex, m);
                }
            }
        }
        builder.build()
    }
}

/// Dimensions of the foam geometry, in metres.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FoamDims {
    pub base_width: f64,
    pub base_thickness: f64,
    pub pyramid_height: f64,
}

impl Default for FoamDims {
    fn default() -> Self {
        FoamDims { base_width: 0.10, base_thickness: 0.02, pyramid_height: 0.07 }
    }
}

#[derive(Clone, Copy, Debug)]
enum NodeRole {
    Fixed,
    Line(Vec3),
    Plane(Vec3, Vec3),
}

/// Orthonormal pair spanning the plane orthogonal to `n`.
pub fn tangent_basis(n: &Vec3) -> (Vec3, Vec3) {
    let helper = if n.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let a = n.cross(&helper).normalize();
    let b = n.cross(&a).normalize();
    (a, b)
}

/// Closest point of triangle `(a, b, c)` to `p`.
pub fn closest_point_on_triangle(p: &Vec3, a: &Vec3, b: &Vec3, c: &Vec3) -> Vec3 {
    let ab = b - a;
    let ac = c - a;
    let ap = p - a;
    let d1 = ab.dot(&ap);
    let d2 = ac.dot(&ap);
    if d1 <= 0.0 && d2 <= 0.0 {
        return *a;
    }
    let bp = p - b;
    let d3 = ab.dot(&bp);
    let d4 = ac.dot(&bp);
    if d3 >= 0.0 && d4 <= d3 {
        return *b;
    }
    let vc = d1 * d4 - d3 * d2;
    if vc <= 0.0 && d1 >= 0.0 && d3 <= 0.0 {
        return a + ab * (d1 / (d1 - d3));
    }
    let cp = p - c;
    let d5 = ab.dot(&cp);
    let d6 = ac.dot(&cp);
    if d6 >= 0.0 && d5 <= d6 {
        return *c;
    }
    let vb = d5 * d2 - d1 * d6;
    if vb <= 0.0 && d2 >= 0.0 && d6 <= 0.0 {
        return a + ac * (d2 / (d2 - d6));
    }
    let va = d3 * d6 - d5 * d4;
    if va <= 0.0 && (d4 - d3) >= 0.0 && (d5 - d6) >= 0.0 {
        return b + (c - b) * ((d4 - d3) / ((d4 - d3) + (d5 - d6)));
    }
    let denom = 1.0 / (va + vb + vc);
    a + ab * (vb * denom) + ac * (vc * denom)
}

pub fn point_triangle_distance(p: &Vec3, tri: &[Vec3; 3]) -> f64 {
    (closest_point_on_triangle(p, &tri[0], &tri[1], &tri[2]) - p).norm()
}

/// Plane of a planar patch.
#[derive(Clone, Copy, Debug)]
pub struct PatchPlane {
    pub point: Vec3,
    pub normal: Vec3,
}

impl PatchPlane {
    pub fn distance(&self, p: &Vec3) -> f64 {
        (p - self.point).dot(&self.normal)
    }
}

/// Partition of the triangles of a mesh into planar patches.
#[derive(Clone, Debug)]
pub struct PlanarPatchSet {
    pub patches: Vec<Vec<usize>>,
    pub planes: Vec<PatchPlane>,
    /// Patch index of every triangle.
    pub patch_of: Vec<usize>,
}

impl PlanarPatchSet {
    pub fn len(&self) -> usize {
        self.patches.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patches.is_empty()
    }
}

/// Incremental construction of meshes from facets with vertex welding.
pub struct MeshBuilder {
    tol: f64,
    vertices: Vec<Vec3>,
    triangles: Vec<[usize; 3]>,
    lookup: HashMap<[i64; 3], Vec<usize>>,
}

impl MeshBuilder {
    /// `tol` is the distance below which two vertices are merged.
    pub fn new(tol: f64) -> Self {
        MeshBuilder { tol, vertices: Vec::new(), triangles: Vec::new(), lookup: HashMap::new() }
    }

    fn cell(&self, p: &Vec3) -> [i64; 3] {
        let s = 4.0 * self.tol;
        [(p.x / s).floor() as i64, (p.y / s).floor() as i64, (p.z / s).floor() as i64]
    }

    pub fn add_vertex(&mut self, p: Vec3) -> usize {
        let c = self.cell(&p);
        for dx in -1..=1 {
            for dy in -1..=1 {
                for dz in -1..=1 {
                    if let Some(ids) = self.lookup.get(&[c[0] + dx, c[1] + dy, c[2] + dz]) {
                        for &id in ids {
                            if (self.vertices[id] - p).norm() <= self.tol {
                                return id;
                            }
                        }
                    }
                }
            }
        }
        let id = self.vertices.len();
        self.vertices.push(p);
        self.lookup.entry(c).or_default().push(id);
        id
    }

    pub fn add_triangle(&mut self, tri: [usize; 3]) {
        self.triangles.push(tri);
    }

    pub fn add_grid(
        &mut self,
        origin: Vec3,
        edge_u: Vec3,
        edge_v: Vec3,
        nu: usize,
        nv: usize,
        pattern: DiagonalPattern,
    ) -> Result<()> {
        if nu == 0 || nv == 0 {
            return Err(Error::InvalidParameter("grid resolution must be positive".into()));
        }
        let mut ids = vec![0usize; (nu + 1) * (nv + 1)];
        for j in 0..=nv {
            for i in 0..=nu {
                let p = origin + edge_u * (i as f64 / nu as f64) + edge_v * (j as f64 / nv as f64);
                ids[j * (nu + 1) + i] = self.add_vertex(p);
            }
        }
        for j in 0..nv {
            for i in 0..nu {
                let a = ids[j * (nu + 1) + i];
                let b = ids[j * (nu + 1) + i + 1];
                let c = ids[(j + 1) * (nu + 1) + i + 1];
                let d = ids[(j + 1) * (nu + 1) + i];
                let along_ac = match pattern {
                    DiagonalPattern::Uniform => true,
                    DiagonalPattern::Alternating => (i + j) % 2 == 0,
                };
                if along_ac {
                    self.add_triangle([a, b, c]);
                    self.add_triangle([a, c, d]);
                } else {
                    self.add_triangle([a, b, d]);
                    self.add_triangle([b, c, d]);
                }
            }
        }
        Ok(())
    }

    /// Uniform subdivision of triangle `(p, q, r)` into `m²` triangles with
    /// the orientation of the input.
    pub fn add_subdivided_triangle(&mut self, p: Vec3, q: Vec3, r: Vec3, m: usize) {
        let mut ids = HashMap::new();
        for i in 0..=m {
            for j in 0..=(m - i) {
                let pt = p + (q - p) * (i as f64 / m as f64) + (r - p) * (j as f64 / m as f64);
                ids.insert((i, j), self.add_vertex(pt));
            }
        }
        for i in 0..m {
            for j in 0..(m - i) {
                self.add_triangle([ids[&(i, j)], ids[&(i + 1, j)], ids[&(i, j + 1)]]);
                if i + j + 1 < m {
                    self.add_triangle([ids[&(i + 1, j)], ids[&(i + 1, j + 1)], ids[&(i, j + 1)]]);
                }
            }
        }
    }

    pub fn build(self) -> Result<Mesh> {
        Mesh::new(self.vertices, self.triangles)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn unit_square_single_cell() {
        let m = Mesh::structured_square(1, DiagonalPattern::Alternating).unwrap();
        assert_eq!(m.n_vertices(), 4);
        assert_eq!(m.n_triangles(), 2);
        assert_relative_eq!(m.area(), 1.0, epsilon = 1e-15);
        assert_eq!(m.boundary_edges().len(), 4);
    }

    #[test]
    fn square_counts_follow_grid_law() {
        let m = Mesh::structured_square(2, DiagonalPattern::Uniform).unwrap();
        assert_eq!(m.n_vertices(), 9);
        assert_eq!(m.n_triangles(), 8);
        for t in 0..8 {
            assert_relative_eq!(m.triangle_area(t), 0.125, epsilon = 1e-15);
        }
        for n in [3, 7, 38] {
            let m = Mesh::structured_square(n, DiagonalPattern::Alternating).unwrap();
            assert_eq!(m.n_vertices(), (n + 1) * (n + 1));
            assert_eq!(m.n_triangles(), 2 * n * n);
            assert_relative_eq!(m.max_edge_length(), 2f64.sqrt() / n as f64, epsilon = 1e-12);
        }
        // 7044 is not a perfect square: the paper's mesh is unstructured.
        assert!((1..200).all(|n| (n + 1) * (n + 1) != 7044));
    }

    #[test]
    fn cube_is_closed_and_outward() {
        let m = Mesh::cube_surface(1).unwrap();
        assert_eq!(m.n_vertices(), 8);
        assert_eq!(m.n_triangles(), 12);
        assert_relative_eq!(m.signed_volume(), 1.0, epsilon = 1e-14);
        m.check_closed().unwrap();

        let m = Mesh::cube_surface(2).unwrap();
        assert_relative_eq!(m.area(), 6.0, epsilon = 1e-12);
        let center = Vec3::new(0.5, 0.5, 0.5);
        for t in 0..m.n_triangles() {
            assert!((m.triangle_centroid(t) - center).dot(&m.triangle_normal(t)) > 0.0);
        }
        let m = Mesh::cube_surface(5).unwrap();
        assert_eq!(m.n_triangles(), 12 * 25);
        assert_relative_eq!(m.area(), 6.0, epsilon = 1e-12);
        assert_relative_eq!(m.signed_volume(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn cube_resolution_for_six_elements_per_wavelength() {
        // lambda = 0.3 / 1 and h = sqrt(2)/n on the faces.
        let n = (1..).find(|&n| 2f64.sqrt() / n as f64 <= 0.3 / 6.0).unwrap();
        assert_eq!(n, 29);
    }

    #[test]
    fn screen_generation() {
        let corners = [Vec3::zeros(), Vec3::x(), Vec3::new(1.0, 1.0, 0.0), Vec3::y()];
        let m = Mesh::screen(corners, 1).unwrap();
        assert_eq!(m.n_triangles(), 2);
        assert_eq!(m.boundary_edges().len(), 4);

        let paper = [
            Vec3::new(-0.25, -1.0, -1.0),
            Vec3::new(0.25, 1.0, -1.0),
            Vec3::new(0.25, 1.0, 1.0),
            Vec3::new(-0.25, -1.0, 1.0),
        ];
        let m = Mesh::screen(paper, 6).unwrap();
        let expected = (0.5f64 * 0.5 + 4.0).sqrt() * 2.0;
        assert_relative_eq!(m.area(), expected, epsilon = 1e-12);
        assert_relative_eq!(expected, 4.1231056, epsilon = 1e-7);
        assert!(!m.boundary_edges().is_empty());

        let degenerate = [Vec3::zeros(), Vec3::zeros(), Vec3::new(1.0, 1.0, 0.0), Vec3::y()];
        assert!(matches!(Mesh::screen(degenerate, 2), Err(Error::NonPlanarCorners(_))));
        let bent = [Vec3::zeros(), Vec3::x(), Vec3::new(1.0, 1.0, 0.3), Vec3::y()];
        assert!(matches!(Mesh::screen(bent, 2), Err(Error::NonPlanarCorners(_))));
    }

    #[test]
    fn foam_volume_and_watertightness() {
        let d = FoamDims::default();
        let single = 0.1 * 0.1 * 0.02 + 0.1 * 0.1 * 0.07 / 3.0;
        for m in [1, 2, 3] {
            let foam = Mesh::foam(1, 1, d, m).unwrap();
            foam.check_closed().unwrap();
            assert_relative_eq!(foam.signed_volume(), single, epsilon = 1e-10);
        }
        let foam = Mesh::foam(2, 2, d, 2).unwrap();
        foam.check_closed().unwrap();
        let expected = 0.2 * 0.2 * 0.02 + 4.0 * 0.1 * 0.1 * 0.07 / 3.0;
        assert_relative_eq!(foam.signed_volume(), expected, epsilon = 1e-10);
        let foam = Mesh::foam(3, 2, d, 2).unwrap();
        foam.check_closed().unwrap();
    }

    #[test]
    fn adjacency_counts() {
        let cube = Mesh::cube_surface(1).unwrap();
        let adj = cube.element_adjacency();
        assert!(adj.iter().all(|a| a.iter().all(Option::is_some)));
        let corners = [Vec3::zeros(), Vec3::x(), Vec3::new(1.0, 1.0, 0.0), Vec3::y()];
        let screen = Mesh::screen(corners, 1).unwrap();
        let adj = screen.element_adjacency();
        for a in adj {
            assert_eq!(a.iter().flatten().count(), 1);
        }
    }

    #[test]
    fn adjacency_matches_brute_force_scan() {
        let foam = Mesh::foam(1, 1, FoamDims::default(), 2).unwrap();
        let adj = foam.element_adjacency();
        let tris = foam.triangles();
        for (t, tri) in tris.iter().enumerate() {
            for e in 0..3 {
                let (a, b) = (tri[e], tri[(e + 1) % 3]);
                let brute: Vec<usize> = (0..tris.len())
                    .filter(|&o| o != t && tris[o].contains(&a) && tris[o].contains(&b))
                    .collect();
                assert_eq!(brute.len(), 1);
                assert_eq!(adj[t][e], Some(brute[0]));
            }
        }
        // symmetry
        for (t, nbs) in adj.iter().enumerate() {
            for nb in nbs.iter().flatten() {
                assert!(adj[*nb].contains(&Some(t)));
            }
        }
    }

    #[test]
    fn patches_of_canonical_shapes() {
        let cube = Mesh::cube_surface(4).unwrap();
        let patches = cube.planar_patches(1e-6);
        assert_eq!(patches.len(), 6);
        assert!(patches.patches.iter().all(|p| p.len() == 32));
        let square = Mesh::structured_square(5, DiagonalPattern::Alternating).unwrap();
        assert_eq!(square.planar_patches(1e-6).len(), 1);
        assert_eq!(Mesh::cube_surface(1).unwrap().planar_patches(1e-6).len(), 6);
    }

    #[test]
    fn foam_patches_match_normal_clustering() {
        let foam = Mesh::foam(1, 1, FoamDims::default(), 2).unwrap();
        let patches = foam.planar_patches(1e-6);
        // brute force: cluster triangles by (normal, plane offset)
        let mut planes: Vec<(Vec3, f64)> = Vec::new();
        for t in 0..foam.n_triangles() {
            let n = foam.triangle_normal(t);
            let d = n.dot(&foam.triangle_centroid(t));
            if !planes.iter().any(|(m, e)| m.dot(&n) > 1.0 - 1e-9 && (e - d).abs() < 1e-9) {
                planes.push((n, d));
            }
        }
        // every facet of a single-pyramid foam is connected
        assert_eq!(patches.len(), planes.len());
        assert_eq!(planes.len(), 9);
        let total: usize = patches.patches.iter().map(Vec::len).sum();
        assert_eq!(total, foam.n_triangles());
    }

    #[test]
    fn patch_count_is_refinement_invariant() {
        for n in [1, 2, 5] {
            assert_eq!(Mesh::cube_surface(n).unwrap().planar_patches(1e-6).len(), 6);
            let corners = [Vec3::zeros(), Vec3::x(), Vec3::new(1.0, 1.0, 0.0), Vec3::y()];
            assert_eq!(Mesh::screen(corners, n).unwrap().planar_patches(1e-6).len(), 1);
        }
    }

    #[test]
    fn perturbation_is_deterministic_and_keeps_domain() {
        let m = Mesh::structured_square(8, DiagonalPattern::Alternating).unwrap();
        let same = m.perturb_nodes(0.0, 3).unwrap();
        assert_eq!(same.vertices(), m.vertices());

        let h = m.max_edge_length();
        let a = m.perturb_nodes(0.1 * h, 42).unwrap();
        let b = m.perturb_nodes(0.1 * h, 42).unwrap();
        assert_eq!(a.vertices(), b.vertices());
        assert_ne!(a.vertices(), m.vertices());
        // union of triangles still covers the unit square
        assert_relative_eq!(a.area(), 1.0, epsilon = 1e-10);
        for (p, q) in a.vertices().iter().zip(m.vertices()) {
            assert_eq!(p.z, 0.0);
            // corners fixed
            if (q.x == 0.0 || q.x == 1.0) && (q.y == 0.0 || q.y == 1.0) {
                assert_eq!(p, q);
            } else if q.x == 0.0 || q.x == 1.0 {
                assert_eq!(p.x, q.x);
            } else if q.y == 0.0 || q.y == 1.0 {
                assert_eq!(p.y, q.y);
            }
        }
    }

    #[test]
    fn perturbed_cube_keeps_faces() {
        let m = Mesh::cube_surface(4).unwrap();
        let p = m.perturb_nodes(0.02, 7).unwrap();
        p.check_closed().unwrap();
        assert_relative_eq!(p.area(), 6.0, epsilon = 1e-10);
        assert_relative_eq!(p.signed_volume(), 1.0, epsilon = 1e-10);
        assert_eq!(p.planar_patches(1e-6).len(), 6);
    }

    #[test]
    fn point_triangle_distances() {
        let t = [Vec3::zeros(), Vec3::x(), Vec3::y()];
        assert_relative_eq!(point_triangle_distance(&Vec3::new(0.2, 0.2, 0.5), &t), 0.5);
        assert_relative_eq!(point_triangle_distance(&Vec3::new(-1.0, -1.0, 0.0), &t), 2f64.sqrt());
        assert_relative_eq!(point_triangle_distance(&Vec3::new(1.0, 1.0, 0.0), &t), 0.5f64.sqrt());
        assert_relative_eq!(point_triangle_distance(&Vec3::new(0.5, -2.0, 0.0), &t), 2.0);
        // brute force over a fine sampling of the triangle
        let p = Vec3::new(0.7, 0.6, -0.3);
        let mut best = f64::MAX;
        for i in 0..=200 {
            for j in 0..=(200 - i) {
                let q = Vec3::new(i as f64 / 200.0, j as f64 / 200.0, 0.0);
                best = best.min((q - p).norm());
            }
        }
        assert!((point_triangle_distance(&p, &t) - best).abs() < 5e-3);
    }

    #[test]
    fn invalid_meshes_are_rejected() {
        let v = vec![Vec3::zeros(), Vec3::x(), Vec3::y()];
        assert!(Mesh::new(v.clone(), vec![[0, 1, 3]]).is_err());
        let v2 = vec![Vec3::zeros(), Vec3::x(), Vec3::x() * 2.0];
        assert!(Mesh::new(v2, vec![[0, 1, 2]]).is_err());
        // same orientation on both sides of a shared edge
        let v3 = vec![Vec3::zeros(), Vec3::x(), Vec3::y(), Vec3::new(1.0, 1.0, 0.0)];
        assert!(Mesh::new(v3, vec![[0, 1, 2], [0, 1, 3]]).is_err());
    }
}
