//! Helmholtz boundary integral operators and potentials.
//!
//! Galerkin matrices of the single-layer (V), double-layer (K), adjoint
//! double-layer (K') and hypersingular (W) operators for P1 trial and test
//! functions on one mesh. Normals always point out of the closed surface,
//! whichever side the operator belongs to. The hypersingular operator is
//! assembled in its integrated-by-parts form
//!
//! `⟨Wφ, θ⟩ = ∫∫ G(x,y) [curl θ(x)·curl φ(y) − k² n(x)·n(y) θ(x) φ(y)]`.

use std::f64::consts::PI;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dense::DenseMatrix;
use crate::mesh::point_triangle_distance;
use crate::quadrature::{classify_pair, Adjacency, PairRule, TriangleRule};
use crate::space::P1Space;
use crate::{Error, Result, Vec3, C64};

/// Quadrature order for regular pairs and the base order for singular ones.
pub const DEFAULT_ORDER: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum OperatorKind {
    SingleLayer,
    DoubleLayer,
    AdjointDoubleLayer,
    Hypersingular,
}

impl OperatorKind {
    pub const ALL: [OperatorKind; 4] = [
        OperatorKind::SingleLayer,
        OperatorKind::DoubleLayer,
        OperatorKind::AdjointDoubleLayer,
        OperatorKind::Hypersingular,
    ];

    fn index(self) -> usize {
        self as usize
    }
}

/// Acoustic medium: speed of sound, density and power-law attenuation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Medium {
    pub c: f64,
    pub rho: f64,
    /// Attenuation in Neper per metre at `f_alpha`.
    pub alpha: f64,
    pub f_alpha: f64,
}

impl Medium {
    pub fn new(c: f64, rho: f64) -> Result<Self> {
        Self::with_attenuation(c, rho, 0.0, 1.0)
    }

    pub fn with_attenuation(c: f64, rho: f64, alpha: f64, f_alpha: f64) -> Result<Self> {
        if !(c > 0.0 && rho > 0.0 && alpha >= 0.0 && f_alpha > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "medium c={c}, rho={rho}, alpha={alpha}, f_alpha={f_alpha}"
            )));
        }
        Ok(Medium { c, rho, alpha, f_alpha })
    }

    pub fn wavenumber(&self, frequency: f64) -> C64 {
        wavenumber(frequency, self.c, self.alpha, self.f_alpha)
    }

    pub fn wavelength(&self, frequency: f64) -> f64 {
        self.c / frequency
    }
}

/// `k = 2πf/c + i α f / f_α`.
pub fn wavenumber(frequency: f64, c: f64, alpha: f64, f_alpha: f64) -> C64 {
    C64::new(2.0 * PI * frequency / c, alpha * frequency / f_alpha)
}

/// Free-space Green's function `e^{ik|x−y|} / (4π|x−y|)`.
pub fn green(k: C64, x: &Vec3, y: &Vec3) -> Result<C64> {
    let r = (x - y).norm();
    if r == 0.0 {
        return Err(Error::CoincidentPoints);
    }
    Ok(green_r(k, r))
}

#[inline]
fn green_r(k: C64, r: f64) -> C64 {
    let (sin, cos) = (k.re * r).sin_cos();
    let scale = if k.im == 0.0 { 1.0 } else { (-k.im * r).exp() };
    C64::new(cos, sin) * (scale / (4.0 * PI * r))
}

/// Per-triangle geometric data used by the assembly.
struct TriangleData {
    points: [Vec3; 3],
    vertices: [usize; 3],
    normal: Vec3,
    jacobian: f64,
    curls: [Vec3; 3],
    regular_points: Vec<Vec3>,
}

fn triangle_data(space: &P1Space, rule: &TriangleRule) -> Vec<TriangleData> {
    let mesh = space.mesh();
    (0..mesh.n_triangles())
        .map(|t| {
            let p = mesh.triangle_points(t);
            let area_normal = mesh.triangle_area_normal(t);
            let jacobian = area_normal.norm();
            let normal = area_normal / jacobian;
            let mut curls = [Vec3::zeros(); 3];
            for (a, curl) in curls.iter_mut().enumerate() {
                let grad = normal.cross(&(p[(a + 2) % 3] - p[(a + 1) % 3])) / jacobian;
                *curl = normal.cross(&grad);
            }
            let regular_points = (0..rule.len())
                .map(|q| {
                    let l = rule.barycentric(q);
                    p[0] * l[0] + p[1] * l[1] + p[2] * l[2]
                })
                .collect();
            TriangleData { points: p, vertices: mesh.triangles()[t], normal, jacobian, curls, regular_points }
        })
        .collect()
}

/// Local 3×3 blocks of every requested operator for one triangle pair.
#[derive(Default, Clone, Copy)]
struct LocalBlocks {
    sl: [[C64; 3]; 3],
    dl: [[C64; 3]; 3],
    ad: [[C64; 3]; 3],
    green_sum: C64,
}

#[derive(Clone, Copy)]
struct Wanted {
    sl: bool,
    dl: bool,
    ad: bool,
    hs: bool,
}

/// Accumulates one quadrature point into the local blocks.
#[inline]
#[allow(clippy::too_many_arguments)]
fn accumulate(
    blocks: &mut LocalBlocks,
    wanted: Wanted,
    k: C64,
    x: &Vec3,
    y: &Vec3,
    na: &Vec3,
    nb: &Vec3,
    phi_a: &[f64; 3],
    phi_b: &[f64; 3],
    weight: f64,
) {
    let d = y - x;
    let r = d.norm();
    let g = green_r(k, r) * weight;
    if wanted.sl || wanted.hs {
        for i in 0..3 {
            let gi = g * phi_a[i];
            for j in 0..3 {
                blocks.sl[i][j] += gi * phi_b[j];
            }
        }
        blocks.green_sum += g;
    }
    if wanted.dl || wanted.ad {
        let f = g * (C64::i() * k - 1.0 / r) / r;
        let fdl = f * d.dot(nb);
        let fad = -f * d.dot(na);
        for i in 0..3 {
            for j in 0..3 {
                let s = phi_a[i] * phi_b[j];
                if wanted.dl {
                    blocks.dl[i][j] += fdl * s;
                }
                if wanted.ad {
                    blocks.ad[i][j] += fad * s;
                }
            }
        }
    }
}

struct Assembler {
    k: C64,
    wanted: Wanted,
    regular: TriangleRule,
    regular_phi: Vec<[f64; 3]>,
    singular: [PairRule; 3],
}

impl Assembler {
    fn new(k: C64, kinds: &[OperatorKind], order: usize) -> Result<Self> {
        let regular = TriangleRule::new(order)?;
        let regular_phi = (0..regular.len()).map(|q| regular.barycentric(q)).collect();
        Ok(Assembler {
            k,
            wanted: Wanted {
                sl: kinds.contains(&OperatorKind::SingleLayer),
                // each supplies the transposed block of the other
                dl: kinds.contains(&OperatorKind::DoubleLayer) || kinds.contains(&OperatorKind::AdjointDoubleLayer),
                ad: kinds.contains(&OperatorKind::DoubleLayer) || kinds.contains(&OperatorKind::AdjointDoubleLayer),
                hs: kinds.contains(&OperatorKind::Hypersingular),
            },
            regular,
            regular_phi,
            singular: [
                PairRule::new(Adjacency::Vertex, order)?,
                PairRule::new(Adjacency::Edge, order)?,
                PairRule::new(Adjacency::Coincident, order)?,
            ],
        })
    }

    fn pair(&self, a: &TriangleData, b: &TriangleData) -> LocalBlocks {
        let mut blocks = LocalBlocks::default();
        let jac = a.jacobian * b.jacobian;
        let (class, pa, pb) = classify_pair(&a.vertices, &b.vertices);
        match class {
            Adjacency::Separated => {
                // sums over the trial points for each test point, then an
                // outer product with the test shape functions
                let w = &self.regular.weights;
                let ik = C64::i() * self.k;
                for (qa, x) in a.regular_points.iter().enumerate() {
                    let mut sl = [C64::new(0.0, 0.0); 3];
                    let mut dl = [C64::new(0.0, 0.0); 3];
                    let mut ad = [C64::new(0.0, 0.0); 3];
                    for (qb, y) in b.regular_points.iter().enumerate() {
                        let d = y - x;
                        let r = d.norm();
                        let g = green_r(self.k, r) * (w[qb] * jac);
                        let phi = &self.regular_phi[qb];
                        if self.wanted.sl || self.wanted.hs {
                            for j in 0..3 {
                                sl[j] += g * phi[j];
                            }
                        }
                        if self.wanted.dl {
                            let f = g * (ik - 1.0 / r) / r;
                            let fdl = f * d.dot(&b.normal);
                            let fad = -f * d.dot(&a.normal);
                            for j in 0..3 {
                                dl[j] += fdl * phi[j];
                                ad[j] += fad * phi[j];
                            }
                        }
                    }
                    let phi_a = &self.regular_phi[qa];
                    let wa = w[qa];
                    for i in 0..3 {
                        let s = phi_a[i] * wa;
                        for j in 0..3 {
                            blocks.sl[i][j] += sl[j] * s;
                            blocks.dl[i][j] += dl[j] * s;
                            blocks.ad[i][j] += ad[j] * s;
                        }
                    }
                    blocks.green_sum += (sl[0] + sl[1] + sl[2]) * wa;
                }
            }
            singular => {
                let rule = match singular {
                    Adjacency::Vertex => &self.singular[0],
                    Adjacency::Edge => &self.singular[1],
                    _ => &self.singular[2],
                };
                let ra = [a.points[pa[0]], a.points[pa[1]], a.points[pa[2]]];
                let rb = [b.points[pb[0]], b.points[pb[1]], b.points[pb[2]]];
                for p in &rule.points {
                    let x = ra[0] * p.a[0] + ra[1] * p.a[1] + ra[2] * p.a[2];
                    let y = rb[0] * p.b[0] + rb[1] * p.b[1] + rb[2] * p.b[2];
                    let mut phi_a = [0.0; 3];
                    let mut phi_b = [0.0; 3];
                    for k in 0..3 {
                        phi_a[pa[k]] = p.a[k];
                        phi_b[pb[k]] = p.b[k];
                    }
                    accumulate(
                        &mut blocks,
                        self.wanted,
                        self.k,
                        &x,
                        &y,
                        &a.normal,
                        &b.normal,
                        &phi_a,
                        &phi_b,
                        p.weight * jac,
                    );
                }
            }
        }
        blocks
    }
}

/// Galerkin matrices of several operators sharing one assembly pass.
#[derive(Clone, Debug, Default)]
pub struct OperatorSet {
    pub single_layer: Option<DenseMatrix>,
    pub double_layer: Option<DenseMatrix>,
    pub adjoint_double_layer: Option<DenseMatrix>,
    pub hypersingular: Option<DenseMatrix>,
}

impl OperatorSet {
    pub fn get(&self, kind: OperatorKind) -> Option<&DenseMatrix> {
        match kind {
            OperatorKind::SingleLayer => self.single_layer.as_ref(),
            OperatorKind::DoubleLayer => self.double_layer.as_ref(),
            OperatorKind::AdjointDoubleLayer => self.adjoint_double_layer.as_ref(),
            OperatorKind::Hypersingular => self.hypersingular.as_ref(),
        }
    }

    pub fn take(&mut self, kind: OperatorKind) -> Option<DenseMatrix> {
        match kind {
            OperatorKind::SingleLayer => self.single_layer.take(),
            OperatorKind::DoubleLayer => self.double_layer.take(),
            OperatorKind::AdjointDoubleLayer => self.adjoint_double_layer.take(),
            OperatorKind::Hypersingular => self.hypersingular.take(),
        }
    }
}

/// Assembles the requested operators with test and trial functions from the
/// same space.
pub fn assemble_operators(space: &P1Space, k: C64, kinds: &[OperatorKind]) -> Result<OperatorSet> {
    assemble_between(space, space, k, kinds, DEFAULT_ORDER)
}

pub fn assemble_operator(kind: OperatorKind, test: &P1Space, trial: &P1Space, k: C64) -> Result<DenseMatrix> {
    let mut set = assemble_between(test, trial, k, &[kind], DEFAULT_ORDER)?;
    Ok(set.take(kind).expect("requested operator"))
}

/// Assembly with explicit quadrature order. Test and trial spaces must live
/// on the same mesh; they may differ in their constrained vertices.
pub fn assemble_between(
    test: &P1Space,
    trial: &P1Space,
    k: C64,
    kinds: &[OperatorKind],
    order: usize,
) -> Result<OperatorSet> {
    if !test.same_mesh(trial) {
        return Err(Error::MeshMismatch);
    }
    let assembler = Assembler::new(k, kinds, order)?;
    let data = triangle_data(test, &assembler.regular);
    let n_test = test.n_dofs();
    let n_trial = trial.n_dofs();
    let mut wanted = [false; 4];
    for kind in kinds {
        wanted[kind.index()] = true;
    }
    let mut matrices: Vec<Option<DenseMatrix>> =
        wanted.iter().map(|&w| w.then(|| DenseMatrix::zeros(n_test, n_trial))).collect();
    let trial_dofs: Vec<[Option<usize>; 3]> = (0..data.len()).map(|t| trial.local_dofs(t)).collect();
    let k2 = k * k;

    // With identical test and trial dofs every unordered pair is integrated
    // once and also supplies the transposed block, which makes V and W
    // exactly symmetric and K' the exact transpose of K.
    let symmetric = test.dof_map() == trial.dof_map();
    let zero = C64::new(0.0, 0.0);
    const CHUNK: usize = 64;
    let n_tri = data.len();
    for start in (0..n_tri).step_by(CHUNK) {
        let end = (start + CHUNK).min(n_tri);
        // rows[kind][local * n_trial + trial dof] and, for the symmetric
        // path, cols[kind][local * n_test + test dof]
        let blocks: Vec<(Vec<Vec<C64>>, Vec<Vec<C64>>)> = (start..end)
            .into_par_iter()
            .map(|ta| {
                let a = &data[ta];
                let alloc = |len: usize| -> Vec<Vec<C64>> {
                    wanted.iter().map(|&w| if w { vec![zero; len] } else { Vec::new() }).collect()
                };
                let mut rows = alloc(3 * n_trial);
                let mut cols = if symmetric { alloc(3 * n_test) } else { Vec::new() };
                let first = if symmetric { ta } else { 0 };
                for (tb, b) in data.iter().enumerate().skip(first) {
                    let local = assembler.pair(a, b);
                    let nn = a.normal.dot(&b.normal);
                    let hs = |i: usize, j: usize| local.green_sum * a.curls[i].dot(&b.curls[j]) - k2 * nn * local.sl[i][j];
                    let dofs_b = &trial_dofs[tb];
                    for i in 0..3 {
                        for (j, dof) in dofs_b.iter().enumerate() {
                            let Some(col) = dof else { continue };
                            let idx = i * n_trial + col;
                            if wanted[0] {
                                rows[0][idx] += local.sl[i][j];
                            }
                            if wanted[1] {
                                rows[1][idx] += local.dl[i][j];
                            }
                            if wanted[2] {
                                rows[2][idx] += local.ad[i][j];
                            }
                            if wanted[3] {
                                rows[3][idx] += hs(i, j);
                            }
                            if symmetric && tb != ta {
                                let idx = i * n_test + col;
                                if wanted[0] {
                                    cols[0][idx] += local.sl[i][j];
                                }
                                if wanted[1] {
                                    cols[1][idx] += local.ad[i][j];
                                }
                                if wanted[2] {
                                    cols[2][idx] += local.dl[i][j];
                                }
                                if wanted[3] {
                                    cols[3][idx] += hs(i, j);
                                }
                            }
                        }
                    }
                }
                (rows, cols)
            })
            .collect();
        for (offset, (rows, cols)) in blocks.into_iter().enumerate() {
            let ta = start + offset;
            let test_dofs = test.local_dofs(ta);
            let trial_dofs_a = &trial_dofs[ta];
            for kind in 0..4 {
                let Some(m) = matrices[kind].as_mut() else { continue };
                for (i, dof) in test_dofs.iter().enumerate() {
                    let Some(r) = dof else { continue };
                    let dst = m.row_mut(*r);
                    for (d, s) in dst.iter_mut().zip(&rows[kind][i * n_trial..(i + 1) * n_trial]) {
                        *d += s;
                    }
                }
                if symmetric {
                    for (i, dof) in trial_dofs_a.iter().enumerate() {
                        let Some(c) = dof else { continue };
                        for (r, v) in cols[kind][i * n_test..(i + 1) * n_test].iter().enumerate() {
                            if *v != zero {
                                m[(r, *c)] += v;
                            }
                        }
                    }
                }
            }
        }
    }
    let mut it = matrices.into_iter();
    Ok(OperatorSet {
        single_layer: it.next().flatten(),
        double_layer: it.next().flatten(),
        adjoint_double_layer: it.next().flatten(),
        hypersingular: it.next().flatten(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PotentialKind {
    SingleLayer,
    DoubleLayer,
}

/// Potential values with a flag for points too close to the surface.
#[derive(Clone, Debug)]
pub struct PotentialField {
    pub values: Vec<C64>,
    /// `true` where the point lies on the surface and the value is invalid.
    pub on_surface: Vec<bool>,
}

/// Evaluates the single- or double-layer potential of a P1 density.
///
/// Triangles close to an evaluation point are subdivided before the regular
/// rule is applied, so that points near (but off) the surface are resolved.
pub fn evaluate_potential(
    kind: PotentialKind,
    space: &P1Space,
    coeffs: &[C64],
    k: C64,
    points: &[Vec3],
) -> Result<PotentialField> {
    if coeffs.len() != space.n_dofs() {
        return Err(Error::Dimension(format!("{} coefficients for {} dofs", coeffs.len(), space.n_dofs())));
    }
    let mesh = space.mesh();
    let rule = TriangleRule::new(DEFAULT_ORDER)?;
    let tol = 1e-10 * mesh.bbox_diagonal();
    let tris: Vec<([Vec3; 3], Vec3, [C64; 3], f64)> = (0..mesh.n_triangles())
        .map(|t| {
            let p = mesh.triangle_points(t);
            let dofs = space.local_dofs(t);
            let vals = dofs.map(|d| d.map_or(C64::new(0.0, 0.0), |d| coeffs[d]));
            let diam = (p[0] - p[1]).norm().max((p[1] - p[2]).norm()).max((p[2] - p[0]).norm());
            (p, mesh.triangle_normal(t), vals, diam)
        })
        .collect();

    let results: Vec<(C64, bool)> = points
        .par_iter()
        .map(|x| {
            let mut sum = C64::new(0.0, 0.0);
            for (p, n, vals, diam) in &tris {
                if vals.iter().all(|v| *v == C64::new(0.0, 0.0)) {
                    continue;
                }
                let centroid = (p[0] + p[1] + p[2]) / 3.0;
                if (centroid - x).norm() < 3.0 * diam && point_triangle_distance(x, p) <= tol {
                    return (C64::new(0.0, 0.0), true);
                }
                sum += integrate_near(kind, k, x, p, n, &[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]], vals, *diam, &rule, 0);
            }
            (sum, false)
        })
        .collect();
    Ok(PotentialField {
        values: results.iter().map(|r| r.0).collect(),
        on_surface: results.iter().map(|r| r.1).collect(),
    })
}

/// Integral over the sub-triangle with barycentric corners `corners` of the
/// parent triangle `p`, subdividing while the point is close.
#[allow(clippy::too_many_arguments)]
fn integrate_near(
    kind: PotentialKind,
    k: C64,
    x: &Vec3,
    p: &[Vec3; 3],
    n: &Vec3,
    corners: &[[f64; 3]; 3],
    vals: &[C64; 3],
    diam: f64,
    rule: &TriangleRule,
    depth: usize,
) -> C64 {
    const MAX_DEPTH: usize = 7;
    let at = |l: &[f64; 3]| p[0] * l[0] + p[1] * l[1] + p[2] * l[2];
    let q = [at(&corners[0]), at(&corners[1]), at(&corners[2])];
    let centroid = (q[0] + q[1] + q[2]) / 3.0;
    if depth < MAX_DEPTH && (centroid - x).norm() < 2.0 * diam {
        let mid = |a: &[f64; 3], b: &[f64; 3]| [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1]), 0.5 * (a[2] + b[2])];
        let m01 = mid(&corners[0], &corners[1]);
        let m12 = mid(&corners[1], &corners[2]);
        let m20 = mid(&corners[2], &corners[0]);
        let children = [
            [corners[0], m01, m20],
            [m01, corners[1], m12],
            [m20, m12, corners[2]],
            [m12, m20, m01],
        ];
        return children
            .iter()
            .map(|c| integrate_near(kind, k, x, p, n, c, vals, 0.5 * diam, rule, depth + 1))
            .sum();
    }
    let jac = (q[1] - q[0]).cross(&(q[2] - q[0])).norm();
    let mut sum = C64::new(0.0, 0.0);
    for i in 0..rule.len() {
        let l = rule.barycentric(i);
        // barycentric coordinates in the parent triangle
        let mut lp = [0.0; 3];
        for (c, w) in corners.iter().zip(l) {
            for m in 0..3 {
                lp[m] += c[m] * w;
            }
        }
        let y = at(&lp);
        let density = vals[0] * lp[0] + vals[1] * lp[1] + vals[2] * lp[2];
        let d = y - x;
        let r = d.norm();
        let g = green_r(k, r);
        let kernel = match kind {
            PotentialKind::SingleLayer => g,
            PotentialKind::DoubleLayer => g * (C64::i() * k - 1.0 / r) / r * d.dot(n),
        };
        sum += kernel * density * (rule.weights[i] * jac);
    }
    sum
}
