//! Sound-hard (Neumann) scattering by an open screen.
//!
//! The density `φ` solves `W φ = γN u_inc` in the space of P1 functions
//! vanishing on the screen boundary, and the scattered field is the
//! double-layer potential of `φ`. The hypersingular system is preconditioned
//! from the left either by the inverse mass matrix or by the single-layer
//! operator, assembled on the same mesh or on a coarser one and coupled
//! through mortar matrices.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::formulations::{incident_traces, BlockOperator, IncidentField, LinOp};
use crate::mesh::Mesh;
use crate::mortar::{assemble_mortar, MortarStats};
use crate::operators::{assemble_operator, evaluate_potential, Medium, OperatorKind, PotentialKind};
use crate::solver::{gmres, true_residual, GmresOptions, SolveReport};
use crate::space::P1Space;
use crate::{Error, Result, Vec3, C64};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PreconditionerKind {
    /// `M⁻¹`
    Mass,
    /// `M⁻¹ V M⁻¹` on the screen mesh.
    OoConforming,
    /// `M_f⁻¹ P_fc M_c⁻¹ V_c M_c⁻¹ P_cf M_f⁻¹` with `V_c` on a coarse mesh.
    OoNonconforming,
}

impl PreconditionerKind {
    pub const ALL: [PreconditionerKind; 3] =
        [PreconditionerKind::Mass, PreconditionerKind::OoConforming, PreconditionerKind::OoNonconforming];

    pub fn name(self) -> &'static str {
        match self {
            PreconditionerKind::Mass => "mass",
            PreconditionerKind::OoConforming => "oo_conforming",
            PreconditionerKind::OoNonconforming => "oo_nonconforming",
        }
    }
}

impl fmt::Display for PreconditionerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PreconditionerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s.trim())
            .ok_or_else(|| Error::InvalidParameter(format!("unknown preconditioner `{s}`")))
    }
}

#[derive(Clone, Debug)]
pub struct ScreenProblem {
    pub fine: Arc<Mesh>,
    /// Required by [`PreconditionerKind::OoNonconforming`].
    pub coarse: Option<Arc<Mesh>>,
    pub medium: Medium,
    pub frequency: f64,
    pub incident: IncidentField,
    pub preconditioner: PreconditionerKind,
    /// Wavenumber of the preconditioning single-layer operator. Defaults to
    /// the physical one.
    pub preconditioner_wavenumber: Option<C64>,
    /// Weight `β` of the fine-level term `β h M_f⁻¹` added to the
    /// nonconforming preconditioner; zero keeps the bare coarse round trip.
    pub fine_level_weight: f64,
}

impl ScreenProblem {
    pub fn k(&self) -> C64 {
        self.medium.wavenumber(self.frequency)
    }

    fn validate(&self) -> Result<()> {
        if !(self.frequency > 0.0 && self.frequency.is_finite()) {
            return Err(Error::InvalidParameter(format!("frequency = {}", self.frequency)));
        }
        if self.fine.boundary_edges().is_empty() {
            return Err(Error::InvalidMesh("a screen must have a boundary".into()));
        }
        if self.preconditioner == PreconditionerKind::OoNonconforming && self.coarse.is_none() {
            return Err(Error::InvalidParameter("the nonconforming preconditioner needs a coarse mesh".into()));
        }
        Ok(())
    }
}

/// Rectangle mesh whose longest edge is at most `λ / elements_per_wavelength`,
/// with at least two cells per side so the constrained space is not empty.
pub fn screen_for_wavelength(corners: [Vec3; 4], wavelength: f64, elements_per_wavelength: f64) -> Result<Mesh> {
    if !(wavelength > 0.0 && elements_per_wavelength > 0.0) {
        return Err(Error::InvalidParameter("wavelength and resolution must be positive".into()));
    }
    let h = wavelength / elements_per_wavelength;
    let (lu, lv) = ((corners[1] - corners[0]).norm(), (corners[3] - corners[0]).norm());
    // cells of edge h / √2 keep the diagonal below h
    let cells = |l: f64| ((l * std::f64::consts::SQRT_2 / h).ceil() as usize).max(2);
    Mesh::screen_with(corners, cells(lu), cells(lv))
}

#[derive(Clone, Copy, Debug, Default, Serialize)]
pub struct ScreenTimings {
    #[serde(serialize_with = "crate::solver::as_seconds")]
    pub matrix: Duration,
    #[serde(serialize_with = "crate::solver::as_seconds")]
    pub mortar: Duration,
}

#[derive(Clone, Debug)]
pub struct ScreenSolution {
    pub space: P1Space,
    pub k: C64,
    /// Coefficients of the free (interior) vertices.
    pub density: Vec<C64>,
    pub report: SolveReport,
    /// Recomputed relative residual of the preconditioned system.
    pub true_residual: f64,
    pub timings: ScreenTimings,
    pub coarse_dofs: Option<usize>,
    pub mortar: Option<MortarStats>,
}

impl ScreenSolution {
    /// Density per mesh vertex, zero on the boundary.
    pub fn vertex_density(&self) -> Vec<C64> {
        (0..self.space.mesh().n_vertices())
            .map(|v| self.space.dof(v).map_or(C64::new(0.0, 0.0), |d| self.density[d]))
            .collect()
    }

    pub fn scattered_field(&self, points: &[Vec3]) -> Result<Vec<C64>> {
        Ok(evaluate_potential(PotentialKind::DoubleLayer, &self.space, &self.density, self.k, points)?.values)
    }
}

pub fn solve_screen(problem: &ScreenProblem, opts: &GmresOptions) -> Result<ScreenSolution> {
    problem.validate()?;
    let k = problem.k();
    let k_pre = problem.preconditioner_wavenumber.unwrap_or(k);
    let space = P1Space::constrained(problem.fine.clone())?;
    let mass_inv = Arc::new(space.mass_inverse()?);

    let start = Instant::now();
    let w = Arc::new(assemble_operator(OperatorKind::Hypersingular, &space, &space, k)?);
    let mut timings = ScreenTimings::default();
    let (mut coarse_dofs, mut mortar_stats) = (None, None);
    let fine_inv = LinOp::MassInverse(mass_inv.clone());
    let preconditioner = match problem.preconditioner {
        PreconditionerKind::Mass => fine_inv,
        PreconditionerKind::OoConforming => {
            let v = assemble_operator(OperatorKind::SingleLayer, &space, &space, k_pre)?;
            LinOp::product(vec![fine_inv.clone(), LinOp::Dense(Arc::new(v)), fine_inv])
        }
        PreconditionerKind::OoNonconforming => {
            let coarse_mesh = problem.coarse.clone().expect("validated");
            let coarse = P1Space::constrained(coarse_mesh)?;
            let v = assemble_operator(OperatorKind::SingleLayer, &coarse, &coarse, k_pre)?;
            let coarse_inv = LinOp::MassInverse(Arc::new(coarse.mass_inverse()?));
            let t = Instant::now();
            let p = assemble_mortar(&coarse, &space)?;
            timings.mortar = t.elapsed();
            coarse_dofs = Some(coarse.n_dofs());
            mortar_stats = Some(p.stats.clone());
            let p_cf = Arc::new(p.matrix);
            let p_fc = Arc::new(p_cf.transpose());
            let round_trip = LinOp::product(vec![
                fine_inv.clone(),
                LinOp::Sparse(p_fc),
                coarse_inv.clone(),
                LinOp::Dense(Arc::new(v)),
                coarse_inv,
                LinOp::Sparse(p_cf),
                fine_inv.clone(),
            ]);
            if problem.fine_level_weight > 0.0 {
                let h = problem.fine.max_edge_length();
                LinOp::Sum(vec![round_trip, fine_inv.scaled(problem.fine_level_weight * h)])
            } else {
                round_trip
            }
        }
    };
    timings.matrix = start.elapsed() - timings.mortar;

    let (_, g) = incident_traces(&problem.incident, k, &space)?;
    let rhs = preconditioner.apply(&g);
    let operator = BlockOperator::new(vec![vec![Some(LinOp::Dense(w))]])?.left_multiply(vec![preconditioner])?;
    let (density, report) = gmres(&operator, &rhs, opts);
    let true_residual = true_residual(&operator, &density, &rhs);
    Ok(ScreenSolution { space, k, density, report, true_residual, timings, coarse_dofs, mortar: mortar_stats })
}
