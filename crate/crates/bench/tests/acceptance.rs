//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits with a
//! nonzero status if any criterion fails.

use std::f64::consts::PI;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use ncbem::dense::{norm, DenseMatrix};
use ncbem::formulations::{Discretization, FormulationKind};
use ncbem::mesh::{DiagonalPattern, Mesh};
use ncbem::mortar::{assemble_mortar, clip_triangles, projection_error, ProjectionError};
use ncbem::operators::{assemble_operators, OperatorKind};
use ncbem::postprocess::{evaluate_solution, relative_l2, PointClass};
use ncbem::screen::PreconditionerKind;
use ncbem::space::{MassInverse, P1Space};
use ncbem::{Vec3, C64};
use ncbem_bench::config::StudyConfig;
use ncbem_bench::studies::{
    assembly_timing, convergence_study, cube_grid, cube_pair, gmres_options, plane_wave, projection_study, screen_study,
    solve_formulation, transmission_problem, twelve_vertex_square, MeshPair,
};

// tolerances
const IDENTICAL_ENTRY_TOL: f64 = 1e-12;
const IDENTICAL_PROJECTION_TOL: f64 = 1e-10;
const FLAT_LEVEL: f64 = 1e-10;
const MIN_DECREASING_DECADES: usize = 3;
const UNITY_TOL: f64 = 1e-9;
const ZERO_CONTRAST_TOL: f64 = 2e-2;
const CALDERON_TOL: f64 = 5e-2;
const CALDERON_MIN_RATIO: f64 = 1.4;
const AGREEMENT_TOL: f64 = 5e-2;
const AGREEMENT_MAX_EXT_NODES: usize = 3000;
const NODE_RATIO: f64 = 0.15;
const SCREEN_MAX_DOFS: usize = 6000;
const SCREEN_ITERATION_RATIO: usize = 3;
const SCREEN_ITERATION_GAP: usize = 2;
const RESIDUAL_BOUND: f64 = 1.5e-5;

// runtime budgets
const BUDGET_IDENTICAL: Duration = Duration::from_secs(5);
const BUDGET_SIGMA: Duration = Duration::from_secs(30);
const BUDGET_LADDER: Duration = Duration::from_secs(60);
const BUDGET_ZERO_CONTRAST: Duration = Duration::from_secs(120);
const BUDGET_CALDERON: Duration = Duration::from_secs(180);
const BUDGET_AGREEMENT: Duration = Duration::from_secs(20 * 60);
const BUDGET_SCREEN: Duration = Duration::from_secs(10 * 60);

/// Cube resolution of the agreement runs, the finest with at most 3000 nodes.
const AGREEMENT_CUBE_N: usize = 22;

struct Outcome {
    pass: bool,
    detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Outcome { pass, detail: detail.into() }
    }
}

/// Runs that feed the residual criterion: label, converged, true residual.
#[derive(Default)]
struct Suite {
    residuals: Vec<(String, bool, f64)>,
    pairs: Vec<(String, Arc<Mesh>, Arc<Mesh>)>,
}

fn main() -> ExitCode {
    // honour the libtest filter conventions loosely: `cargo test` passes flags
    // such as `--nocapture` that carry no meaning here
    let filter: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let mut suite = Suite::default();
    type Criterion = fn(&mut Suite) -> Outcome;
    let criteria: [(&str, &str, Option<Duration>, Criterion); 11] = [
        ("C1", "mortar conforming limit", Some(BUDGET_IDENTICAL), identical_meshes),
        ("C2", "projection error under perturbation", Some(BUDGET_SIGMA), sigma_sweep),
        ("C3", "projection error along a refinement ladder", Some(BUDGET_LADDER), refinement_ladder),
        ("C5", "zero contrast scatters nothing", Some(BUDGET_ZERO_CONTRAST), zero_contrast),
        ("C6", "interior Calderon residual", Some(BUDGET_CALDERON), calderon),
        ("C7", "cross-formulation agreement", Some(BUDGET_AGREEMENT), agreement),
        ("C8", "convergence trend", None, convergence),
        ("C9", "nonconforming savings", None, savings),
        ("C10", "screen preconditioning", Some(BUDGET_SCREEN), screen),
        ("C4", "mortar partition of unity", None, partition_of_unity),
        ("C11", "true residual contract", None, residual_contract),
    ];
    let mut failed = 0;
    let mut ran = 0;
    for (id, name, budget, run) in criteria {
        if filter.as_ref().is_some_and(|f| !id.eq_ignore_ascii_case(f) && !name.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let mut outcome = run(&mut suite);
        let elapsed = start.elapsed();
        if let Some(b) = budget.filter(|b| elapsed > *b) {
            outcome.pass = false;
            outcome.detail += &format!("; over the {:.0} s budget", b.as_secs_f64());
        }
        let verdict = if outcome.pass { "PASS" } else { "FAIL" };
        println!("{verdict} {id:<4} {name} [{:.1} s]: {}", elapsed.as_secs_f64(), outcome.detail);
        if !outcome.pass {
            failed += 1;
        }
    }
    println!("{} of {ran} criteria passed", ran - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn guard(f: impl FnOnce() -> Result<Outcome, Box<dyn std::error::Error>>) -> Outcome {
    f().unwrap_or_else(|e| Outcome::new(false, format!("error: {e}")))
}

fn standard() -> StudyConfig {
    StudyConfig::preset("standard").unwrap()
}

fn max_error(e: &ProjectionError) -> f64 {
    e.int_fro.max(e.int_max).max(e.ext_fro).max(e.ext_max)
}

// ---------------------------------------------------------------------------

fn identical_meshes(_: &mut Suite) -> Outcome {
    guard(|| {
        let mut worst_entry: f64 = 0.0;
        let mut worst_error: f64 = 0.0;
        for mesh in [Mesh::cube_surface(3)?, Mesh::structured_square(4, DiagonalPattern::Alternating)?] {
            let space = P1Space::new(Arc::new(mesh));
            let p = assemble_mortar(&space, &space)?.matrix;
            let m = space.mass_matrix();
            for i in 0..space.n_dofs() {
                for j in 0..space.n_dofs() {
                    worst_entry = worst_entry.max((p.get(i, j) - m.get(i, j)).abs());
                }
            }
            worst_error = worst_error.max(max_error(&projection_error(&m, &m, &p)?));
        }
        Ok(Outcome::new(
            worst_entry <= IDENTICAL_ENTRY_TOL && worst_error < IDENTICAL_PROJECTION_TOL,
            format!("max |P - M| = {worst_entry:.1e}, max projection error = {worst_error:.1e}"),
        ))
    })
}

/// Length of the strictly decreasing run from the start, ignoring values
/// already below the flat level.
fn decreasing_run(values: &[f64]) -> (usize, bool) {
    let mut run = 0;
    for w in values.windows(2) {
        if w[0] < FLAT_LEVEL {
            break;
        }
        if w[1] < w[0] {
            run += 1;
        } else {
            break;
        }
    }
    let rest_flat = values[run + 1..].iter().all(|v| *v < FLAT_LEVEL);
    (run, rest_flat)
}

fn sigma_sweep(_: &mut Suite) -> Outcome {
    guard(|| {
        let cfg = StudyConfig::preset("unit-square")?;
        let study = projection_study(&cfg)?;
        let column = |f: fn(&ProjectionError) -> f64| study.sweep.iter().map(|r| f(&r.errors)).collect::<Vec<_>>();
        let columns = [column(|e| e.int_fro), column(|e| e.int_max), column(|e| e.ext_fro), column(|e| e.ext_max)];
        let mut pass = study.sweep.windows(2).all(|w| w[1].sigma_rel < w[0].sigma_rel);
        let mut runs = Vec::new();
        for c in &columns {
            let (run, rest_flat) = decreasing_run(c);
            pass &= run >= MIN_DECREASING_DECADES && rest_flat;
            runs.push(run);
        }
        let first = &study.sweep[0].errors;
        let last = &study.sweep[study.sweep.len() - 1].errors;
        Ok(Outcome::new(
            pass,
            format!(
                "decreasing decades {runs:?}; E_int_fro {:.1e} -> {:.1e}, E_ext_fro {:.1e} -> {:.1e}",
                first.int_fro, last.int_fro, first.ext_fro, last.ext_fro
            ),
        ))
    })
}

fn refinement_ladder(_: &mut Suite) -> Outcome {
    guard(|| {
        let cfg = StudyConfig::preset("unit-square")?;
        let study = projection_study(&cfg)?;
        let rows = &study.refinement;
        let mut pass = study.n_fixed_coarse == 12 && rows.len() == 4;
        for w in rows.windows(2) {
            let (a, b) = (&w[0].errors, &w[1].errors);
            pass &= b.int_fro < a.int_fro && b.int_max < a.int_max;
            pass &= b.ext_fro > a.ext_fro && b.ext_max > a.ext_max;
        }
        let int: Vec<String> = rows.iter().map(|r| format!("{:.2e}", r.errors.int_fro)).collect();
        let ext: Vec<String> = rows.iter().map(|r| format!("{:.2e}", r.errors.ext_fro)).collect();
        Ok(Outcome::new(pass, format!("E_int_fro [{}], E_ext_fro [{}]", int.join(", "), ext.join(", "))))
    })
}

// ---------------------------------------------------------------------------

/// Independent check of a mortar pair: row and column sums against the
/// masses, and brute-force clipping of every coplanar triangle pair.
fn unity_defects(row: &Arc<Mesh>, col: &Arc<Mesh>) -> Result<(f64, f64), Box<dyn std::error::Error>> {
    let (rs, cs) = (P1Space::new(row.clone()), P1Space::new(col.clone()));
    let p = assemble_mortar(&rs, &cs)?.matrix;
    let mut sums = 0f64;
    for (a, b) in p.row_sums().iter().zip(rs.mass_matrix().row_sums()) {
        sums = sums.max((a - b).abs());
    }
    for (a, b) in p.transpose().row_sums().iter().zip(cs.mass_matrix().row_sums()) {
        sums = sums.max((a - b).abs());
    }

    let eps = 1e-10 * row.bbox_diagonal().max(col.bbox_diagonal());
    let mut covered_row = vec![0.0; row.n_triangles()];
    let mut covered_col = vec![0.0; col.n_triangles()];
    let boxes = |m: &Mesh| -> Vec<(Vec3, Vec3)> {
        (0..m.n_triangles())
            .map(|t| {
                let p = m.triangle_points(t);
                (p[0].inf(&p[1]).inf(&p[2]), p[0].sup(&p[1]).sup(&p[2]))
            })
            .collect()
    };
    let (box_row, box_col) = (boxes(row), boxes(col));
    for a in 0..row.n_triangles() {
        let (na, ta) = (row.triangle_normal(a), row.triangle_points(a));
        for b in 0..col.n_triangles() {
            let (lo, hi) = (box_row[a].0.sup(&box_col[b].0), box_row[a].1.inf(&box_col[b].1));
            if (0..3).any(|i| lo[i] > hi[i] + eps) || col.triangle_normal(b).dot(&na) < 1.0 - 1e-8 {
                continue;
            }
            if let Ok((poly, _)) = clip_triangles(&ta, &col.triangle_points(b), eps) {
                let area = poly.area();
                covered_row[a] += area;
                covered_col[b] += area;
            }
        }
    }
    let mut tiles = 0f64;
    for (t, c) in covered_row.iter().enumerate() {
        tiles = tiles.max((c - row.triangle_area(t)).abs());
    }
    for (t, c) in covered_col.iter().enumerate() {
        tiles = tiles.max((c - col.triangle_area(t)).abs());
    }
    Ok((sums, tiles))
}

fn partition_of_unity(suite: &mut Suite) -> Outcome {
    guard(|| {
        let mut pairs = std::mem::take(&mut suite.pairs);
        // the projection studies' pairs
        let cfg = StudyConfig::preset("unit-square")?;
        let fixed = Mesh::structured_square(cfg.square_n, DiagonalPattern::Alternating)?;
        let h = fixed.max_edge_length();
        let fixed = Arc::new(fixed);
        for &rel in &cfg.sigmas {
            pairs.push((format!("square sigma {rel:e}"), fixed.clone(), Arc::new(fixed.perturb_nodes(rel * h, cfg.seed)?)));
        }
        let coarse = Arc::new(twelve_vertex_square()?);
        for &n in &cfg.ladder {
            pairs.push((format!("ladder n={n}"), coarse.clone(), Arc::new(Mesh::structured_square(n, DiagonalPattern::Uniform)?)));
        }
        let (mut sums, mut tiles) = (0f64, 0f64);
        let mut worst = String::new();
        for (label, row, col) in &pairs {
            let (s, t) = unity_defects(row, col)?;
            if s.max(t) > sums.max(tiles) {
                worst = label.clone();
            }
            sums = sums.max(s);
            tiles = tiles.max(t);
        }
        Ok(Outcome::new(
            sums <= UNITY_TOL && tiles <= UNITY_TOL,
            format!("{} pairs; row sums {sums:.1e}, tiling {tiles:.1e} (worst: {worst})", pairs.len()),
        ))
    })
}

// ---------------------------------------------------------------------------

fn zero_contrast(suite: &mut Suite) -> Outcome {
    guard(|| {
        let cfg = StudyConfig { c_ext: 1.1, c_int: 1.1, rho_ext: 2.0, rho_int: 2.0, ..standard() };
        let pair = cube_pair(&cfg, 10.0, true)?;
        let kind = FormulationKind::PmchwtExt;
        let d = Discretization::new(transmission_problem(&cfg, &pair, plane_wave(&cfg)?)?, &[kind])?;
        let run = solve_formulation(kind, &d, &gmres_options(&cfg))?;
        suite.residuals.push(("zero contrast".into(), run.report.converged, run.report.true_residual));
        let grid = cube_grid(&cfg, &pair.ext);
        let field = evaluate_solution(kind, &d, &run.solution, &grid)?;
        let incident: Vec<C64> = grid.points.iter().map(|x| d.problem.incident.value(d.ext.k, x)).collect();
        let err = relative_l2(&field.values, &incident, &grid.mask(PointClass::Exterior))?;
        Ok(Outcome::new(err < ZERO_CONTRAST_TOL, format!("{} nodes, relative scattered field {err:.2e}", pair.ext.n_vertices())))
    })
}

// ---------------------------------------------------------------------------

/// `(½ I − C)` applied to the projected plane-wave traces, relative to the
/// traces, with `C = [[-K, V], [W, K']]` in strong form.
fn calderon_residual(n: usize, k: C64) -> Result<f64, Box<dyn std::error::Error>> {
    let space = P1Space::new(Arc::new(Mesh::cube_surface(n)?));
    let mut ops = assemble_operators(&space, k, &OperatorKind::ALL)?;
    let minv: MassInverse = space.mass_inverse()?;
    let mut take = |kind| ops.take(kind).ok_or(format!("{kind:?} not assembled"));
    let v: DenseMatrix = take(OperatorKind::SingleLayer)?;
    let kd = take(OperatorKind::DoubleLayer)?;
    let ka = take(OperatorKind::AdjointDoubleLayer)?;
    let w = take(OperatorKind::Hypersingular)?;
    let d = Vec3::new(1.0, 2.0, 0.5).normalize();
    let u = move |x: &Vec3| (C64::i() * k * d.dot(x)).exp();
    let phi = minv.apply(&space.rhs_from_function(|x, _| u(x)));
    let psi = minv.apply(&space.rhs_from_function(|x, nrm| C64::i() * k * d.dot(nrm) * u(x)));
    let top = minv.apply(&ncbem::dense::sub(&v.matvec(&psi), &kd.matvec(&phi)));
    let bottom: Vec<C64> = w.matvec(&phi).iter().zip(ka.matvec(&psi)).map(|(a, b)| a + b).collect();
    let bottom = minv.apply(&bottom);
    let r1: Vec<C64> = phi.iter().zip(&top).map(|(p, c)| 0.5 * p - c).collect();
    let r2: Vec<C64> = psi.iter().zip(&bottom).map(|(p, c)| 0.5 * p - c).collect();
    let num = norm(&r1).hypot(norm(&r2));
    Ok(num / norm(&phi).hypot(norm(&psi)))
}

fn calderon(_: &mut Suite) -> Outcome {
    guard(|| {
        let n = 6;
        // six elements per wavelength on the coarse mesh
        let k = C64::new(2.0 * PI / (6.0 * 2f64.sqrt() / n as f64), 0.0);
        let coarse = calderon_residual(n, k)?;
        let fine = calderon_residual(2 * n, k)?;
        let ratio = coarse / fine;
        Ok(Outcome::new(
            coarse < CALDERON_TOL && ratio >= CALDERON_MIN_RATIO,
            format!("residual {coarse:.2e} -> {fine:.2e}, ratio {ratio:.2}"),
        ))
    })
}

// ---------------------------------------------------------------------------

fn agreement(suite: &mut Suite) -> Outcome {
    guard(|| {
        let cfg = standard();
        let epw = cfg.c_ext / cfg.frequency / (2f64.sqrt() / AGREEMENT_CUBE_N as f64);
        let mut worst: f64 = 0.0;
        let mut details = Vec::new();
        let mut pass = true;
        for conforming in [true, false] {
            let pair = cube_pair(&cfg, epw, conforming)?;
            pass &= pair.ext.n_vertices() <= AGREEMENT_MAX_EXT_NODES;
            if !conforming {
                suite.pairs.push(("agreement cube".into(), pair.int.clone(), pair.ext.clone()));
            }
            let d = Discretization::new(transmission_problem(&cfg, &pair, plane_wave(&cfg)?)?, &FormulationKind::ALL)?;
            let grid = cube_grid(&cfg, &pair.ext);
            let mask = grid.mask(PointClass::Exterior);
            let mut fields = Vec::new();
            for kind in FormulationKind::ALL {
                let run = solve_formulation(kind, &d, &gmres_options(&cfg))?;
                let mode = if conforming { "conforming" } else { "nonconforming" };
                suite.residuals.push((format!("{kind} {mode}"), run.report.converged, run.report.true_residual));
                pass &= run.report.converged;
                if kind != FormulationKind::HcIntDir {
                    fields.push((kind, evaluate_solution(kind, &d, &run.solution, &grid)?.values));
                }
            }
            let mut mode_worst = (0.0, String::new());
            for (i, a) in fields.iter().enumerate() {
                for b in &fields[i + 1..] {
                    // symmetric in the pair up to the normalisation
                    let e = relative_l2(&a.1, &b.1, &mask)?.max(relative_l2(&b.1, &a.1, &mask)?);
                    if e > mode_worst.0 {
                        mode_worst = (e, format!("{} vs {}", a.0, b.0));
                    }
                }
            }
            worst = worst.max(mode_worst.0);
            let stats = pair.stats();
            let mode = if conforming { "conforming" } else { "nonconforming" };
            details.push(format!("{mode} {}+{} nodes: {:.2e} ({})", stats.n_ext, stats.n_int, mode_worst.0, mode_worst.1));
        }
        pass &= worst < AGREEMENT_TOL;
        Ok(Outcome::new(pass, format!("worst pairwise difference; {}", details.join(", "))))
    })
}

fn convergence(suite: &mut Suite) -> Outcome {
    guard(|| {
        let cfg = StudyConfig::preset("convergence")?;
        for &epw in &cfg.levels {
            let pair = cube_pair(&cfg, epw, false)?;
            suite.pairs.push((format!("convergence {epw} per wavelength"), pair.int, pair.ext));
        }
        let rows = convergence_study(&cfg)?;
        let select = |conforming: bool| rows.iter().filter(|r| r.conforming == conforming).collect::<Vec<_>>();
        let (conf, nonc) = (select(true), select(false));
        let mut pass = conf.len() == 3 && nonc.len() == 3 && rows.iter().all(|r| r.converged);
        for mode in [&conf, &nonc] {
            pass &= mode.windows(2).all(|w| w[1].rel_error < w[0].rel_error && w[1].h_ext < w[0].h_ext);
        }
        for (c, n) in conf.iter().zip(&nonc) {
            pass &= (c.h_ext - n.h_ext).abs() < 1e-12 && c.rel_error <= n.rel_error;
        }
        let fmt = |m: &[&ncbem_bench::studies::ConvergenceRow]| {
            m.iter().map(|r| format!("{:.2e}", r.rel_error)).collect::<Vec<_>>().join(", ")
        };
        Ok(Outcome::new(pass, format!("conforming [{}], nonconforming [{}]", fmt(&conf), fmt(&nonc))))
    })
}

fn savings(suite: &mut Suite) -> Outcome {
    guard(|| {
        // six elements per wavelength needs more exterior nodes than the
        // desk-scale solve cap; only assembly is timed here
        let cfg = StudyConfig { max_ext_nodes: 6000, ..standard() };
        let timings: Vec<_> = [true, false]
            .into_iter()
            .map(|conforming| {
                let pair: MeshPair = cube_pair(&cfg, cfg.elements_per_wavelength, conforming)?;
                if !conforming {
                    suite.pairs.push(("savings cube".into(), pair.int.clone(), pair.ext.clone()));
                }
                assembly_timing(&cfg, &pair)
            })
            .collect::<Result<_, _>>()?;
        let (conf, nonc) = (&timings[0], &timings[1]);
        let ratio = nonc.mesh.n_int as f64 / nonc.mesh.n_ext as f64;
        Ok(Outcome::new(
            ratio < NODE_RATIO && nonc.total < conf.total,
            format!(
                "nodes {} ext / {} int (ratio {ratio:.3}); assembly {:.1} s conforming, {:.1} s nonconforming",
                nonc.mesh.n_ext, nonc.mesh.n_int, conf.total, nonc.total
            ),
        ))
    })
}

fn screen(suite: &mut Suite) -> Outcome {
    guard(|| {
        let cfg = StudyConfig::preset("screen")?;
        let rows = screen_study(&cfg)?;
        let by = |k: PreconditionerKind| rows.iter().find(|r| r.preconditioner == k.name()).expect("all kinds run");
        let (m, c, n) = (by(PreconditionerKind::Mass), by(PreconditionerKind::OoConforming), by(PreconditionerKind::OoNonconforming));
        for r in &rows {
            suite.residuals.push((format!("screen {}", r.preconditioner), r.converged, r.true_residual));
        }
        let pass = rows.iter().all(|r| r.converged)
            && m.n_fine <= SCREEN_MAX_DOFS
            && SCREEN_ITERATION_RATIO * c.iterations <= m.iterations
            && SCREEN_ITERATION_RATIO * n.iterations <= m.iterations
            && c.iterations.abs_diff(n.iterations) <= SCREEN_ITERATION_GAP;
        Ok(Outcome::new(
            pass,
            format!(
                "{} fine dofs, {} coarse; iterations mass {}, conforming {}, nonconforming {}",
                m.n_fine,
                n.n_coarse.unwrap_or(0),
                m.iterations,
                c.iterations,
                n.iterations
            ),
        ))
    })
}

fn residual_contract(suite: &mut Suite) -> Outcome {
    let converged: Vec<_> = suite.residuals.iter().filter(|r| r.1).collect();
    let worst = converged.iter().max_by(|a, b| a.2.total_cmp(&b.2));
    let pass = !converged.is_empty() && converged.iter().all(|r| r.2 <= RESIDUAL_BOUND);
    let detail = match worst {
        Some((label, _, r)) => format!("{} converged runs, worst true residual {r:.2e} ({label})", converged.len()),
        None => "no converged runs recorded".into(),
    };
    Outcome::new(pass, detail)
}
