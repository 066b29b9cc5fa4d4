//! Field evaluation on point grids, error norms and exports.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::formulations::{densities, Discretization, FormulationKind, Densities};
use crate::mesh::{point_triangle_distance, Mesh};
use crate::operators::{evaluate_potential, PotentialKind};
use crate::space::P1Space;
use crate::{Error, Result, Vec3, C64};

/// Position of an evaluation point relative to the closed surface.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PointClass {
    Exterior,
    Interior,
    /// Too close to the surface for a reliable value.
    Excluded,
}

impl PointClass {
    /// Integer code used in CSV exports.
    pub fn code(self) -> u8 {
        match self {
            PointClass::Exterior => 0,
            PointClass::Interior => 1,
            PointClass::Excluded => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(PointClass::Exterior),
            1 => Some(PointClass::Interior),
            2 => Some(PointClass::Excluded),
            _ => None,
        }
    }
}

/// Relative distance to the surface (in units of the bounding-box diagonal)
/// below which points are excluded.
pub const NEAR_SURFACE: f64 = 1e-3;

/// Ray directions for inside tests, with irrational component ratios so that
/// rays do not run along the edges of structured meshes. A ray grazing an
/// edge or vertex is discarded in favour of the next one.
const RAYS: [[f64; 3]; 4] = [
    [0.2628655560595668, 0.3717480344601846, 0.8904781467346798],
    [-0.6154122094026356, 0.4351646001711537, 0.6571064398128627],
    [0.5406980552376733, -0.7071067811865476, 0.4556209117063014],
    [-0.3090169943749474, -0.5590169943749475, -0.7694208842938134],
];

#[derive(Clone, Debug)]
pub struct EvaluationGrid {
    pub points: Vec<Vec3>,
    pub classes: Vec<PointClass>,
}

impl EvaluationGrid {
    /// Lattice `origin + i/(nu−1) u + j/(nv−1) v`, row-major in `j`.
    pub fn plane(origin: Vec3, u: Vec3, v: Vec3, nu: usize, nv: usize) -> Self {
        let step = |n: usize| if n > 1 { 1.0 / (n - 1) as f64 } else { 0.0 };
        let (su, sv) = (step(nu), step(nv));
        let mut points = Vec::with_capacity(nu * nv);
        for j in 0..nv {
            for i in 0..nu {
                points.push(origin + u * (i as f64 * su) + v * (j as f64 * sv));
            }
        }
        Self::from_points(points)
    }

    /// Unclassified points, all treated as exterior.
    pub fn from_points(points: Vec<Vec3>) -> Self {
        let classes = vec![PointClass::Exterior; points.len()];
        EvaluationGrid { points, classes }
    }

    /// Classifies the points against a closed mesh by ray-casting parity.
    pub fn classified(mut self, mesh: &Mesh) -> Self {
        let tol = NEAR_SURFACE * mesh.bbox_diagonal();
        let tris: Vec<[Vec3; 3]> = (0..mesh.n_triangles()).map(|t| mesh.triangle_points(t)).collect();
        self.classes = self
            .points
            .par_iter()
            .map(|p| {
                if tris.iter().any(|t| point_triangle_distance(p, t) < tol) {
                    PointClass::Excluded
                } else if is_inside(&tris, p) {
                    PointClass::Interior
                } else {
                    PointClass::Exterior
                }
            })
            .collect();
        self
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn mask(&self, class: PointClass) -> Vec<bool> {
        self.classes.iter().map(|c| *c == class).collect()
    }
}

enum Hit {
    Miss,
    Hit,
    Grazing,
}

/// Möller–Trumbore ray/triangle test for `t > 0`.
fn ray_hit(origin: &Vec3, dir: &Vec3, tri: &[Vec3; 3]) -> Hit {
    const EPS: f64 = 1e-9;
    let e1 = tri[1] - tri[0];
    let e2 = tri[2] - tri[0];
    let p = dir.cross(&e2);
    let det = e1.dot(&p);
    if det.abs() < 1e-12 * e1.norm() * e2.norm() {
        // ray parallel to the triangle plane
        return Hit::Miss;
    }
    let inv = 1.0 / det;
    let s = origin - tri[0];
    let u = s.dot(&p) * inv;
    let q = s.cross(&e1);
    let v = dir.dot(&q) * inv;
    let t = e2.dot(&q) * inv;
    let w = 1.0 - u - v;
    if t <= 0.0 || u < -EPS || v < -EPS || w < -EPS {
        return Hit::Miss;
    }
    if u < EPS || v < EPS || w < EPS {
        return Hit::Grazing;
    }
    Hit::Hit
}

/// Parity of crossings along `dir`, or `None` if the ray grazes an edge.
fn crossings(tris: &[[Vec3; 3]], p: &Vec3, dir: &Vec3) -> Option<bool> {
    let mut count = 0usize;
    for t in tris {
        match ray_hit(p, dir, t) {
            Hit::Miss => {}
            Hit::Hit => count += 1,
            Hit::Grazing => return None,
        }
    }
    Some(count % 2 == 1)
}

fn is_inside(tris: &[[Vec3; 3]], p: &Vec3) -> bool {
    RAYS.iter()
        .find_map(|d| crossings(tris, p, &Vec3::from(*d)))
        .unwrap_or(false)
}

/// Inside test along one ray direction; `None` when the ray grazes an edge.
pub fn inside_along(mesh: &Mesh, p: &Vec3, dir: &Vec3) -> Option<bool> {
    let tris: Vec<[Vec3; 3]> = (0..mesh.n_triangles()).map(|t| mesh.triangle_points(t)).collect();
    crossings(&tris, p, dir)
}

/// Evaluates `SLP s − DLP d` of one side at the given points.
pub fn evaluate_representation(
    space: &P1Space,
    k: C64,
    single: Option<&[C64]>,
    double: Option<&[C64]>,
    points: &[Vec3],
) -> Result<Vec<C64>> {
    let mut out = vec![C64::new(0.0, 0.0); points.len()];
    if points.is_empty() {
        return Ok(out);
    }
    if let Some(s) = single {
        let f = evaluate_potential(PotentialKind::SingleLayer, space, s, k, points)?;
        out.iter_mut().zip(f.values).for_each(|(o, v)| *o += v);
    }
    if let Some(dd) = double {
        let f = evaluate_potential(PotentialKind::DoubleLayer, space, dd, k, points)?;
        out.iter_mut().zip(f.values).for_each(|(o, v)| *o -= v);
    }
    Ok(out)
}

/// Total field on a grid: the interior representation at interior points and
/// the incident plus scattered field at exterior points. Excluded points
/// carry zero.
#[derive(Clone, Debug)]
pub struct SolutionField {
    pub values: Vec<C64>,
    pub classes: Vec<PointClass>,
}

impl SolutionField {
    pub fn mask(&self, class: PointClass) -> Vec<bool> {
        self.classes.iter().map(|c| *c == class).collect()
    }
}

pub fn evaluate_densities(d: &Discretization, dens: &Densities, grid: &EvaluationGrid) -> Result<SolutionField> {
    let select = |class: PointClass| -> (Vec<usize>, Vec<Vec3>) {
        grid.classes.iter().enumerate().filter(|(_, c)| **c == class).map(|(i, _)| (i, grid.points[i])).unzip()
    };
    let mut values = vec![C64::new(0.0, 0.0); grid.len()];
    let (idx, pts) = select(PointClass::Exterior);
    let sca = evaluate_representation(&d.ext.space, d.ext.k, dens.ext_single.as_deref(), dens.ext_double.as_deref(), &pts)?;
    for ((i, x), s) in idx.iter().zip(&pts).zip(sca) {
        values[*i] = s + d.problem.incident.value(d.ext.k, x);
    }
    let (idx, pts) = select(PointClass::Interior);
    let inner = evaluate_representation(&d.int.space, d.int.k, dens.int_single.as_deref(), dens.int_double.as_deref(), &pts)?;
    for (i, v) in idx.iter().zip(inner) {
        values[*i] = v;
    }
    Ok(SolutionField { values, classes: grid.classes.clone() })
}

/// Total field of a solved formulation.
pub fn evaluate_solution(kind: FormulationKind, d: &Discretization, solution: &[C64], grid: &EvaluationGrid) -> Result<SolutionField> {
    evaluate_densities(d, &densities(kind, d, solution)?, grid)
}

/// `‖f − r‖ / ‖r‖` over the points selected by `include`.
pub fn relative_l2(field: &[C64], reference: &[C64], include: &[bool]) -> Result<f64> {
    if field.len() != reference.len() || field.len() != include.len() {
        return Err(Error::Dimension("field, reference and mask lengths differ".into()));
    }
    let (mut num, mut den, mut any) = (0.0, 0.0, false);
    for ((f, r), &keep) in field.iter().zip(reference).zip(include) {
        if keep {
            any = true;
            num += (f - r).norm_sqr();
            den += r.norm_sqr();
        }
    }
    if !any {
        return Err(Error::AllMasked);
    }
    Ok((num / den).sqrt())
}

/// Writes `x,y,z,re,im,mask` rows with 17 significant digits; `mask` is the
/// point class code (0 exterior, 1 interior, 2 excluded).
pub fn write_csv(path: impl AsRef<Path>, points: &[Vec3], values: &[C64], classes: &[PointClass]) -> Result<()> {
    if points.len() != values.len() || points.len() != classes.len() {
        return Err(Error::Dimension("csv columns differ in length".into()));
    }
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "x,y,z,re,im,mask")?;
    for ((p, v), c) in points.iter().zip(values).zip(classes) {
        writeln!(w, "{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{}", p.x, p.y, p.z, v.re, v.im, c.code())?;
    }
    w.flush()?;
    Ok(())
}

/// Reads a file written by [`write_csv`].
pub fn read_csv(path: impl AsRef<Path>) -> Result<(Vec<Vec3>, Vec<C64>, Vec<PointClass>)> {
    let r = BufReader::new(std::fs::File::open(path)?);
    let (mut points, mut values, mut classes) = (Vec::new(), Vec::new(), Vec::new());
    for (n, line) in r.lines().enumerate() {
        let line = line?;
        if n == 0 || line.trim().is_empty() {
            continue;
        }
        let bad = || Error::InvalidParameter(format!("malformed csv line {}", n + 1));
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() != 6 {
            return Err(bad());
        }
        let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad());
        points.push(Vec3::new(num(cols[0])?, num(cols[1])?, num(cols[2])?));
        values.push(C64::new(num(cols[3])?, num(cols[4])?));
        let code: u8 = cols[5].trim().parse().map_err(|_| bad())?;
        classes.push(PointClass::from_code(code).ok_or_else(bad)?);
    }
    Ok((points, values, classes))
}

/// Solve metadata mirroring the columns of an efficiency table.
#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub formulation: String,
    pub conforming: bool,
    pub n_ext: usize,
    pub n_int: usize,
    pub n_unknowns: usize,
    pub dense_operators: usize,
    pub dense_bytes: usize,
    pub iterations: usize,
    pub converged: bool,
    pub final_residual: f64,
    pub true_residual: f64,
    /// Assembly time of operators and mortar matrix in seconds.
    pub t_matrix: f64,
    pub t_mortar: f64,
    pub t_solve: f64,
    pub t_iter: f64,
}

pub fn write_json<T: Serialize>(path: impl AsRef<Path>, value: &T) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    Ok(())
}
