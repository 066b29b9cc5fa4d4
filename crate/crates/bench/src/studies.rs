//! The five desk-scale studies and their artifacts.

use std::path::Path;
use std::sync::Arc;
use std::time::{Duration, Instant};

use ncbem::formulations::{
    build_strong_system, Discretization, FormulationKind, IncidentField, TransmissionProblem,
};
use ncbem::mesh::{DiagonalPattern, FoamDims, Mesh};
use ncbem::mortar::{assemble_mortar, projection_error, ProjectionError};
use ncbem::operators::{assemble_operators, Medium, OperatorKind};
use ncbem::postprocess::{
    evaluate_solution, relative_l2, write_csv, write_json, EvaluationGrid, PointClass, RunReport, SolutionField,
};
use ncbem::screen::{screen_for_wavelength, solve_screen, PreconditionerKind, ScreenProblem, ScreenSolution};
use ncbem::solver::{true_residual, GmresOptions};
use ncbem::space::P1Space;
use ncbem::{Vec3, C64};
use serde::Serialize;

use crate::config::{ConfigError, Study, StudyConfig};

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Solver(#[from] ncbem::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("{what} needs {nodes} nodes, above the cap of {cap}; lower elements_per_wavelength or raise max_ext_nodes")]
    TooLarge { what: String, nodes: usize, cap: usize },
    #[error("no mesh up to resolution {0} reaches the requested element size")]
    Resolution(usize),
}

pub type Result<T> = std::result::Result<T, BenchError>;

/// Largest resolution tried when searching for a mesh size.
const MAX_RESOLUTION: usize = 400;

/// Corners of the rectangular screen, in cyclic order.
pub const SCREEN_CORNERS: [[f64; 3]; 4] = [[-0.25, -1.0, -1.0], [0.25, 1.0, -1.0], [0.25, 1.0, 1.0], [-0.25, -1.0, 1.0]];

/// Largest fine screen handled by the screen study.
pub const MAX_SCREEN_DOFS: usize = 6000;

// ---------------------------------------------------------------------------
// shared setup

pub fn media(cfg: &StudyConfig) -> Result<(Medium, Medium)> {
    let ext = Medium::new(cfg.c_ext, cfg.rho_ext)?;
    let int = Medium::with_attenuation(cfg.c_int, cfg.rho_int, cfg.alpha_int, cfg.f_alpha)?;
    Ok((ext, int))
}

pub fn wavelengths(cfg: &StudyConfig) -> (f64, f64) {
    (cfg.c_ext / cfg.frequency, cfg.c_int / cfg.frequency)
}

/// Smallest resolution whose mesh has no edge longer than `h`.
pub fn resolve(h: f64, make: impl Fn(usize) -> ncbem::Result<Mesh>) -> Result<(usize, Mesh)> {
    for n in 1..=MAX_RESOLUTION {
        let mesh = make(n)?;
        if mesh.max_edge_length() <= h * (1.0 + 1e-12) {
            return Ok((n, mesh));
        }
    }
    Err(BenchError::Resolution(MAX_RESOLUTION))
}

/// Exterior and interior surface meshes of one run.
#[derive(Clone, Debug)]
pub struct MeshPair {
    pub ext: Arc<Mesh>,
    pub int: Arc<Mesh>,
    pub conforming: bool,
}

impl MeshPair {
    pub fn stats(&self) -> MeshStats {
        let n_int = if self.conforming { self.ext.n_vertices() } else { self.int.n_vertices() };
        MeshStats {
            conforming: self.conforming,
            h_ext: self.ext.max_edge_length(),
            n_ext: self.ext.n_vertices(),
            h_int: self.int.max_edge_length(),
            n_int,
            n_nodes: self.ext.n_vertices() + n_int,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct MeshStats {
    pub conforming: bool,
    pub h_ext: f64,
    pub n_ext: usize,
    pub h_int: f64,
    pub n_int: usize,
    pub n_nodes: usize,
}

/// Conforming pairs share one mesh resolving the shorter wavelength;
/// nonconforming pairs resolve each medium with its own wavelength.
pub fn mesh_pair(
    cfg: &StudyConfig,
    epw_ext: f64,
    epw_int: f64,
    conforming: bool,
    make: impl Fn(usize) -> ncbem::Result<Mesh>,
) -> Result<MeshPair> {
    let (l_ext, l_int) = wavelengths(cfg);
    let pair = if conforming {
        let h = (l_ext / epw_ext).min(l_int / epw_int);
        let mesh = Arc::new(resolve(h, &make)?.1);
        MeshPair { ext: mesh.clone(), int: mesh, conforming }
    } else {
        let ext = Arc::new(resolve(l_ext / epw_ext, &make)?.1);
        let int = Arc::new(resolve(l_int / epw_int, &make)?.1);
        MeshPair { ext, int, conforming }
    };
    if pair.ext.n_vertices() > cfg.max_ext_nodes {
        return Err(BenchError::TooLarge { what: "exterior mesh".into(), nodes: pair.ext.n_vertices(), cap: cfg.max_ext_nodes });
    }
    Ok(pair)
}

pub fn cube_pair(cfg: &StudyConfig, epw: f64, conforming: bool) -> Result<MeshPair> {
    let ratio = cfg.int_elements_per_wavelength / cfg.elements_per_wavelength;
    mesh_pair(cfg, epw, epw * ratio, conforming, Mesh::cube_surface)
}

pub fn transmission_problem(cfg: &StudyConfig, pair: &MeshPair, incident: IncidentField) -> Result<TransmissionProblem> {
    let (medium_ext, medium_int) = media(cfg)?;
    Ok(TransmissionProblem {
        mesh_ext: pair.ext.clone(),
        mesh_int: pair.int.clone(),
        medium_ext,
        medium_int,
        frequency: cfg.frequency,
        incident,
    })
}

pub fn plane_wave(cfg: &StudyConfig) -> Result<IncidentField> {
    Ok(IncidentField::plane_wave(Vec3::from(cfg.direction))?)
}

/// Grid on the plane `z = 0.5` over `[-0.5, 1.5]²`, classified against `mesh`.
pub fn cube_grid(cfg: &StudyConfig, mesh: &Mesh) -> EvaluationGrid {
    let n = cfg.grid_points;
    EvaluationGrid::plane(Vec3::new(-0.5, -0.5, 0.5), Vec3::new(2.0, 0.0, 0.0), Vec3::new(0.0, 2.0, 0.0), n, n).classified(mesh)
}

pub fn gmres_options(cfg: &StudyConfig) -> GmresOptions {
    GmresOptions { tol: cfg.tolerance, ..GmresOptions::default() }
}

/// One solve of an assembled discretization.
pub struct Run {
    pub report: RunReport,
    pub solution: Vec<C64>,
}

pub fn solve_formulation(kind: FormulationKind, d: &Discretization, opts: &GmresOptions) -> Result<Run> {
    let system = build_strong_system(kind, d)?;
    let (solution, solve) = system.solve(opts);
    let residual = true_residual(&system.operator, &solution, &system.rhs);
    let bytes: usize = kind
        .dense_operators()
        .iter()
        .map(|(side, op)| {
            let s = if *side == ncbem::formulations::Side::Exterior { &d.ext } else { &d.int };
            s.operator(*op).map_or(0, |m| m.bytes())
        })
        .sum();
    let report = RunReport {
        formulation: kind.name().to_string(),
        conforming: d.is_conforming(),
        n_ext: d.ext.n_dofs(),
        n_int: d.int.n_dofs(),
        n_unknowns: system.n_unknowns(),
        dense_operators: kind.dense_operators().len(),
        dense_bytes: bytes,
        iterations: solve.iterations,
        converged: solve.converged,
        final_residual: solve.final_residual(),
        true_residual: residual,
        t_matrix: d.timings.total().as_secs_f64(),
        t_mortar: d.timings.mortar.as_secs_f64(),
        t_solve: solve.total_time.as_secs_f64(),
        t_iter: solve.matvec_time_per_iteration().as_secs_f64(),
    };
    Ok(Run { report, solution })
}

// ---------------------------------------------------------------------------
// projection error

#[derive(Clone, Debug, Serialize)]
pub struct SigmaRow {
    /// Standard deviation relative to the mesh width.
    pub sigma_rel: f64,
    pub sigma: f64,
    pub errors: ProjectionError,
}

#[derive(Clone, Debug, Serialize)]
pub struct RefinementRow {
    pub n_ext: usize,
    pub h_ext: f64,
    pub errors: ProjectionError,
}

#[derive(Clone, Debug, Serialize)]
pub struct ProjectionStudy {
    pub h_fixed: f64,
    pub sweep: Vec<SigmaRow>,
    pub n_fixed_coarse: usize,
    pub refinement: Vec<RefinementRow>,
}

pub fn pair_projection_error(fixed: &Mesh, partner: &Mesh) -> Result<ProjectionError> {
    let int = P1Space::new(Arc::new(fixed.clone()));
    let ext = P1Space::new(Arc::new(partner.clone()));
    let p = assemble_mortar(&int, &ext)?;
    Ok(projection_error(&int.mass_matrix(), &ext.mass_matrix(), &p.matrix)?)
}

/// The twelve-vertex unit square used as the fixed coarse mesh.
pub fn twelve_vertex_square() -> Result<Mesh> {
    Ok(Mesh::structured_grid(Vec3::zeros(), Vec3::x(), Vec3::y(), 3, 2, DiagonalPattern::Alternating)?)
}

pub fn projection_study(cfg: &StudyConfig) -> Result<ProjectionStudy> {
    let fixed = Mesh::structured_square(cfg.square_n, DiagonalPattern::Alternating)?;
    let h = fixed.max_edge_length();
    let sweep = cfg
        .sigmas
        .iter()
        .map(|&rel| {
            let partner = fixed.perturb_nodes(rel * h, cfg.seed)?;
            Ok(SigmaRow { sigma_rel: rel, sigma: rel * h, errors: pair_projection_error(&fixed, &partner)? })
        })
        .collect::<Result<Vec<_>>>()?;
    let coarse = twelve_vertex_square()?;
    let refinement = cfg
        .ladder
        .iter()
        .map(|&n| {
            let partner = Mesh::structured_square(n, DiagonalPattern::Uniform)?;
            Ok(RefinementRow {
                n_ext: partner.n_vertices(),
                h_ext: partner.max_edge_length(),
                errors: pair_projection_error(&coarse, &partner)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ProjectionStudy { h_fixed: h, sweep, n_fixed_coarse: coarse.n_vertices(), refinement })
}

fn write_projection(study: &ProjectionStudy, out: &Path) -> Result<()> {
    let mut text = String::from("sigma,E_int_fro,E_int_max,E_ext_fro,E_ext_max\n");
    for r in &study.sweep {
        let e = r.errors;
        text += &format!("{:e},{:e},{:e},{:e},{:e}\n", r.sigma, e.int_fro, e.int_max, e.ext_fro, e.ext_max);
    }
    std::fs::write(out.join("projection_sigma.csv"), text)?;
    let mut text = String::from("n_ext,h_ext,E_int_fro,E_int_max,E_ext_fro,E_ext_max\n");
    for r in &study.refinement {
        let e = r.errors;
        text += &format!("{},{:e},{:e},{:e},{:e},{:e}\n", r.n_ext, r.h_ext, e.int_fro, e.int_max, e.ext_fro, e.ext_max);
    }
    std::fs::write(out.join("projection_refinement.csv"), text)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// convergence

#[derive(Clone, Debug, Serialize)]
pub struct ConvergenceRow {
    pub formulation: String,
    pub conforming: bool,
    pub h_ext: f64,
    pub h_int: f64,
    pub n_total: usize,
    pub rel_error: f64,
    pub converged: bool,
}

/// Reference field from a conforming exterior PMCHWT solve on a finer mesh.
pub struct Reference {
    pub grid: EvaluationGrid,
    pub field: SolutionField,
}

pub fn reference_field(cfg: &StudyConfig) -> Result<Reference> {
    let pair = cube_pair(cfg, cfg.reference_elements_per_wavelength, true)?;
    let grid = cube_grid(cfg, &pair.ext);
    let kind = FormulationKind::PmchwtExt;
    let d = Discretization::new(transmission_problem(cfg, &pair, plane_wave(cfg)?)?, &[kind])?;
    let run = solve_formulation(kind, &d, &gmres_options(cfg))?;
    let field = evaluate_solution(kind, &d, &run.solution, &grid)?;
    Ok(Reference { grid, field })
}

fn included(grid: &EvaluationGrid) -> Vec<bool> {
    grid.classes.iter().map(|c| *c != PointClass::Excluded).collect()
}

pub fn convergence_study(cfg: &StudyConfig) -> Result<Vec<ConvergenceRow>> {
    let reference = reference_field(cfg)?;
    let mask = included(&reference.grid);
    let mut rows = Vec::new();
    for &epw in &cfg.levels {
        for conforming in [true, false] {
            let pair = cube_pair(cfg, epw, conforming)?;
            let stats = pair.stats();
            let d = Discretization::new(transmission_problem(cfg, &pair, plane_wave(cfg)?)?, &cfg.formulations)?;
            for &kind in &cfg.formulations {
                let run = solve_formulation(kind, &d, &gmres_options(cfg))?;
                let field = evaluate_solution(kind, &d, &run.solution, &reference.grid)?;
                rows.push(ConvergenceRow {
                    formulation: kind.name().into(),
                    conforming,
                    h_ext: stats.h_ext,
                    h_int: stats.h_int,
                    n_total: stats.n_nodes,
                    rel_error: relative_l2(&field.values, &reference.field.values, &mask)?,
                    converged: run.report.converged,
                });
            }
        }
    }
    Ok(rows)
}

fn write_convergence(rows: &[ConvergenceRow], out: &Path) -> Result<()> {
    let mut text = String::from("formulation,mode,h_ext,h_int,N_total,rel_error\n");
    for r in rows {
        let mode = if r.conforming { "conforming" } else { "nonconforming" };
        text += &format!("{},{},{:e},{:e},{},{:e}\n", r.formulation, mode, r.h_ext, r.h_int, r.n_total, r.rel_error);
    }
    std::fs::write(out.join("convergence.csv"), text)?;
    Ok(())
}

// ---------------------------------------------------------------------------
// efficiency

#[derive(Clone, Debug, Serialize)]
pub struct EfficiencyStudy {
    pub meshes: Vec<MeshStats>,
    /// Operators are assembled once per mesh pair and shared by all
    /// formulations, so `t_matrix` is the same within a mode.
    pub runs: Vec<RunReport>,
}

pub fn efficiency_study(cfg: &StudyConfig) -> Result<EfficiencyStudy> {
    let mut meshes = Vec::new();
    let mut runs = Vec::new();
    for conforming in [true, false] {
        let pair = cube_pair(cfg, cfg.elements_per_wavelength, conforming)?;
        meshes.push(pair.stats());
        let d = Discretization::new(transmission_problem(cfg, &pair, plane_wave(cfg)?)?, &cfg.formulations)?;
        for &kind in &cfg.formulations {
            runs.push(solve_formulation(kind, &d, &gmres_options(cfg))?.report);
        }
    }
    Ok(EfficiencyStudy { meshes, runs })
}

/// Wall-clock assembly of the eight operators of a direct formulation.
#[derive(Clone, Debug, Serialize)]
pub struct AssemblyTiming {
    pub mesh: MeshStats,
    pub operators_ext: f64,
    pub operators_int: f64,
    pub mortar: f64,
    pub total: f64,
}

/// Times the assembly of all eight operators on a mesh pair. Each side's
/// matrices are dropped before the next side is assembled, which keeps the
/// memory footprint at four dense matrices.
pub fn assembly_timing(cfg: &StudyConfig, pair: &MeshPair) -> Result<AssemblyTiming> {
    let (ext, int) = media(cfg)?;
    let time_side = |mesh: &Arc<Mesh>, k: C64| -> Result<Duration> {
        let space = P1Space::new(mesh.clone());
        let start = Instant::now();
        let set = assemble_operators(&space, k, &OperatorKind::ALL)?;
        let elapsed = start.elapsed();
        drop(set);
        Ok(elapsed)
    };
    let operators_ext = time_side(&pair.ext, ext.wavenumber(cfg.frequency))?;
    let operators_int = time_side(&pair.int, int.wavenumber(cfg.frequency))?;
    let mortar = if pair.conforming {
        Duration::ZERO
    } else {
        let start = Instant::now();
        assemble_mortar(&P1Space::new(pair.int.clone()), &P1Space::new(pair.ext.clone()))?;
        start.elapsed()
    };
    let total = operators_ext + operators_int + mortar;
    Ok(AssemblyTiming {
        mesh: pair.stats(),
        operators_ext: operators_ext.as_secs_f64(),
        operators_int: operators_int.as_secs_f64(),
        mortar: mortar.as_secs_f64(),
        total: total.as_secs_f64(),
    })
}

// ---------------------------------------------------------------------------
// screen

#[derive(Clone, Debug, Serialize)]
pub struct ScreenRow {
    pub preconditioner: String,
    pub n_fine: usize,
    pub n_coarse: Option<usize>,
    pub fine_elements_per_wavelength: f64,
    pub iterations: usize,
    pub converged: bool,
    pub true_residual: f64,
    /// Relative difference to the mass-preconditioned density.
    pub density_deviation: f64,
    pub t_bem: f64,
    pub t_matrix: f64,
    pub t_mortar: f64,
    pub t_solve: f64,
    pub t_iter: f64,
}

pub fn screen_problem(cfg: &StudyConfig, kind: PreconditionerKind) -> Result<ScreenProblem> {
    let corners = SCREEN_CORNERS.map(Vec3::from);
    let fine = Mesh::screen(corners, cfg.screen_n)?;
    let dofs = fine.n_vertices() - fine.boundary_vertices().iter().filter(|b| **b).count();
    if dofs > MAX_SCREEN_DOFS {
        return Err(BenchError::TooLarge { what: "fine screen".into(), nodes: dofs, cap: MAX_SCREEN_DOFS });
    }
    let medium = Medium::new(cfg.c_ext, cfg.rho_ext)?;
    let coarse = screen_for_wavelength(corners, medium.wavelength(cfg.frequency), cfg.coarse_elements_per_wavelength)?;
    let k = medium.wavenumber(cfg.frequency);
    Ok(ScreenProblem {
        fine: Arc::new(fine),
        coarse: Some(Arc::new(coarse)),
        medium,
        frequency: cfg.frequency,
        incident: plane_wave(cfg)?,
        preconditioner: kind,
        preconditioner_wavenumber: Some(k * cfg.preconditioner_wavenumber_scale),
        fine_level_weight: cfg.fine_level_weight,
    })
}

pub fn screen_study(cfg: &StudyConfig) -> Result<Vec<ScreenRow>> {
    let mut solutions: Vec<(PreconditionerKind, ScreenSolution, Duration)> = Vec::new();
    for kind in PreconditionerKind::ALL {
        let problem = screen_problem(cfg, kind)?;
        let start = Instant::now();
        let s = solve_screen(&problem, &gmres_options(cfg))?;
        solutions.push((kind, s, start.elapsed()));
    }
    let mass = solutions[0].1.density.clone();
    let wavelength = cfg.c_ext / cfg.frequency;
    Ok(solutions
        .into_iter()
        .map(|(kind, s, total)| ScreenRow {
            preconditioner: kind.name().into(),
            n_fine: s.density.len(),
            n_coarse: s.coarse_dofs,
            fine_elements_per_wavelength: wavelength / s.space.mesh().max_edge_length(),
            iterations: s.report.iterations,
            converged: s.report.converged,
            true_residual: s.true_residual,
            density_deviation: ncbem::dense::relative_error(&s.density, &mass),
            t_bem: total.as_secs_f64(),
            t_matrix: (s.timings.matrix + s.timings.mortar).as_secs_f64(),
            t_mortar: s.timings.mortar.as_secs_f64(),
            t_solve: s.report.total_time.as_secs_f64(),
            t_iter: s.report.matvec_time_per_iteration().as_secs_f64(),
        })
        .collect())
}

// ---------------------------------------------------------------------------
// foam

#[derive(Clone, Debug, Serialize)]
pub struct FoamStudy {
    pub frequency: f64,
    pub meshes: Vec<MeshStats>,
    pub runs: Vec<RunReport>,
}

pub fn foam_source(cfg: &StudyConfig) -> Vec3 {
    let w = FoamDims::default().base_width;
    Vec3::new(0.5 * w * cfg.foam_nx as f64, 0.5 * w * cfg.foam_ny as f64, 0.15)
}

/// Vertical slice through the source, parallel to the `xz` plane.
pub fn foam_grid(cfg: &StudyConfig, mesh: &Mesh) -> EvaluationGrid {
    let dims = FoamDims::default();
    let lx = dims.base_width * cfg.foam_nx as f64;
    let source = foam_source(cfg);
    let n = cfg.grid_points;
    EvaluationGrid::plane(Vec3::new(-0.05, source.y, -0.05), Vec3::new(lx + 0.1, 0.0, 0.0), Vec3::new(0.0, 0.0, 0.3), n, n)
        .classified(mesh)
}

pub fn foam_study(cfg: &StudyConfig, out: Option<&Path>) -> Result<FoamStudy> {
    let (nx, ny) = (cfg.foam_nx, cfg.foam_ny);
    let make = |m: usize| Mesh::foam(nx, ny, FoamDims::default(), m);
    let incident = IncidentField::point_source(foam_source(cfg));
    let mut meshes = Vec::new();
    let mut runs = Vec::new();
    for conforming in [true, false] {
        let pair = mesh_pair(cfg, cfg.elements_per_wavelength, cfg.int_elements_per_wavelength, conforming, make)?;
        meshes.push(pair.stats());
        let d = Discretization::new(transmission_problem(cfg, &pair, incident)?, &cfg.formulations)?;
        for (i, &kind) in cfg.formulations.iter().enumerate() {
            let run = solve_formulation(kind, &d, &gmres_options(cfg))?;
            if let (Some(out), false, 0) = (out, conforming, i) {
                let grid = foam_grid(cfg, &pair.ext);
                let field = evaluate_solution(kind, &d, &run.solution, &grid)?;
                write_csv(out.join("foam_field.csv"), &grid.points, &field.values, &field.classes)?;
            }
            runs.push(run.report);
        }
    }
    Ok(FoamStudy { frequency: cfg.frequency, meshes, runs })
}

// ---------------------------------------------------------------------------
// dispatch

/// Outcome of a study: whether every solve converged.
pub struct StudyOutcome {
    pub converged: bool,
    pub summary: String,
}

pub fn run_study(study: Study, cfg: &StudyConfig, out: &Path) -> Result<StudyOutcome> {
    std::fs::create_dir_all(out)?;
    write_json(out.join("config.json"), cfg)?;
    Ok(match study {
        Study::ProjectionError => {
            let s = projection_study(cfg)?;
            write_projection(&s, out)?;
            write_json(out.join("projection.json"), &s)?;
            StudyOutcome {
                converged: true,
                summary: format!("{} perturbation levels, {} refinement levels", s.sweep.len(), s.refinement.len()),
            }
        }
        Study::Convergence => {
            let rows = convergence_study(cfg)?;
            write_convergence(&rows, out)?;
            StudyOutcome { converged: rows.iter().all(|r| r.converged), summary: format!("{} runs", rows.len()) }
        }
        Study::Efficiency => {
            let s = efficiency_study(cfg)?;
            write_json(out.join("efficiency.json"), &s)?;
            StudyOutcome { converged: s.runs.iter().all(|r| r.converged), summary: format!("{} runs", s.runs.len()) }
        }
        Study::Screen => {
            let rows = screen_study(cfg)?;
            write_json(out.join("screen.json"), &rows)?;
            let summary = rows.iter().map(|r| format!("{}: {} iterations", r.preconditioner, r.iterations)).collect::<Vec<_>>();
            StudyOutcome { converged: rows.iter().all(|r| r.converged), summary: summary.join(", ") }
        }
        Study::Foam => {
            let s = foam_study(cfg, Some(out))?;
            write_json(out.join("foam.json"), &s)?;
            StudyOutcome { converged: s.runs.iter().all(|r| r.converged), summary: format!("{} runs", s.runs.len()) }
        }
    })
}
