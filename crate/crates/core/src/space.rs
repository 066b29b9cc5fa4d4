//! Continuous piecewise-linear nodal spaces and their mass matrices.

use std::sync::Arc;

use crate::mesh::Mesh;
use crate::quadrature::TriangleRule;
use crate::sparse::{CooMatrix, CsrMatrix, SparseCholesky};
use crate::{Error, Result, Vec3, C64};

/// Quadrature order used for load vectors.
pub const RHS_ORDER: usize = 6;

/// P1 space on a mesh, optionally with the boundary vertices of an open
/// mesh constrained to zero.
#[derive(Clone, Debug)]
pub struct P1Space {
    mesh: Arc<Mesh>,
    dof_of_vertex: Vec<Option<usize>>,
    vertex_of_dof: Vec<usize>,
}

impl P1Space {
    /// One degree of freedom per vertex.
    pub fn new(mesh: Arc<Mesh>) -> Self {
        let n = mesh.n_vertices();
        P1Space { mesh, dof_of_vertex: (0..n).map(Some).collect(), vertex_of_dof: (0..n).collect() }
    }

    /// Space with the boundary-edge vertices removed.
    pub fn constrained(mesh: Arc<Mesh>) -> Result<Self> {
        let on_boundary = mesh.boundary_vertices();
        let mut dof_of_vertex = vec![None; mesh.n_vertices()];
        let mut vertex_of_dof = Vec::new();
        for (v, &b) in on_boundary.iter().enumerate() {
            if !b {
                dof_of_vertex[v] = Some(vertex_of_dof.len());
                vertex_of_dof.push(v);
            }
        }
        if vertex_of_dof.is_empty() {
            return Err(Error::EmptySpace);
        }
        Ok(P1Space { mesh, dof_of_vertex, vertex_of_dof })
    }

    pub fn mesh(&self) -> &Arc<Mesh> {
        &self.mesh
    }

    pub fn n_dofs(&self) -> usize {
        self.vertex_of_dof.len()
    }

    pub fn is_constrained(&self) -> bool {
        self.vertex_of_dof.len() < self.mesh.n_vertices()
    }

    pub fn dof(&self, vertex: usize) -> Option<usize> {
        self.dof_of_vertex[vertex]
    }

    pub fn vertex(&self, dof: usize) -> usize {
        self.vertex_of_dof[dof]
    }

    /// Map from vertex index to degree of freedom.
    pub fn dof_map(&self) -> &[Option<usize>] {
        &self.dof_of_vertex
    }

    pub fn local_dofs(&self, t: usize) -> [Option<usize>; 3] {
        let [a, b, c] = self.mesh.triangles()[t];
        [self.dof_of_vertex[a], self.dof_of_vertex[b], self.dof_of_vertex[c]]
    }

    pub fn same_mesh(&self, other: &P1Space) -> bool {
        Arc::ptr_eq(&self.mesh, &other.mesh)
    }

    /// Gram matrix `∫ λ_i λ_j`.
    pub fn mass_matrix(&self) -> CsrMatrix {
        let mut coo = CooMatrix::with_capacity(self.n_dofs(), self.n_dofs(), 9 * self.mesh.n_triangles());
        for t in 0..self.mesh.n_triangles() {
            let area = self.mesh.triangle_area(t);
            let dofs = self.local_dofs(t);
            for (i, di) in dofs.iter().enumerate() {
                for (j, dj) in dofs.iter().enumerate() {
                    if let (Some(r), Some(c)) = (di, dj) {
                        let factor = if i == j { 2.0 } else { 1.0 };
                        coo.push(*r, *c, factor * area / 12.0);
                    }
                }
            }
        }
        coo.to_csr()
    }

    pub fn mass_inverse(&self) -> Result<MassInverse> {
        MassInverse::new(&self.mass_matrix())
    }

    /// Load vector `∫ f(x, n(x)) λ_i(x) dx`, with `n` the unit normal.
    pub fn rhs_from_function<F>(&self, f: F) -> Vec<C64>
    where
        F: Fn(&Vec3, &Vec3) -> C64,
    {
        let rule = TriangleRule::new(RHS_ORDER).expect("supported order");
        self.rhs_with_rule(&rule, f)
    }

    pub fn rhs_with_rule<F>(&self, rule: &TriangleRule, f: F) -> Vec<C64>
    where
        F: Fn(&Vec3, &Vec3) -> C64,
    {
        let mut out = vec![C64::new(0.0, 0.0); self.n_dofs()];
        for t in 0..self.mesh.n_triangles() {
            let p = self.mesh.triangle_points(t);
            let jac = 2.0 * self.mesh.triangle_area(t);
            let n = self.mesh.triangle_normal(t);
            let dofs = self.local_dofs(t);
            for q in 0..rule.len() {
                let l = rule.barycentric(q);
                let x = p[0] * l[0] + p[1] * l[1] + p[2] * l[2];
                let value = f(&x, &n) * (rule.weights[q] * jac);
                for (k, d) in dofs.iter().enumerate() {
                    if let Some(d) = d {
                        out[*d] += value * l[k];
                    }
                }
            }
        }
        out
    }

    /// Nodal interpolant.
    pub fn interpolate<F: Fn(&Vec3) -> C64>(&self, f: F) -> Vec<C64> {
        self.vertex_of_dof.iter().map(|&v| f(&self.mesh.vertices()[v])).collect()
    }

    /// Value of a coefficient vector at barycentric coordinates of a triangle.
    pub fn evaluate(&self, coeffs: &[C64], t: usize, bary: &[f64; 3]) -> C64 {
        self.local_dofs(t)
            .iter()
            .zip(bary)
            .filter_map(|(d, l)| d.map(|d| coeffs[d] * *l))
            .sum()
    }
}

/// Factorized mass matrix applying `M⁻¹` to complex vectors.
#[derive(Clone, Debug)]
pub struct MassInverse {
    factor: SparseCholesky,
}

impl MassInverse {
    pub fn new(mass: &CsrMatrix) -> Result<Self> {
        Ok(MassInverse { factor: SparseCholesky::factor(mass)? })
    }

    pub fn dim(&self) -> usize {
        self.factor.dim()
    }

    pub fn apply(&self, v: &[C64]) -> Vec<C64> {
        self.factor.solve(v)
    }
}
