//! Block systems of the transmission formulations.
//!
//! Unknowns live either on the exterior mesh, the interior mesh or both. A
//! dense operator of one side enters an equation tested on the other side
//! through the mortar transfer `M⁻¹ P`, so that an interior operator seen
//! from the exterior mesh is `P_ei M_i⁻¹ X_i M_i⁻¹ P_ie`. On a conforming
//! pair (both sides share one mesh) the transfers are identities.
//!
//! Sign conventions: `n` points out of the interior domain, the interior
//! field is `SLP ψ − DLP φ` and the scattered field is `SLP ψ_e − DLP φ_e`
//! with `φ_e = −γD⁺ p`, `ψ_e = −γN⁺ p`.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::dense::DenseMatrix;
use crate::mesh::{point_triangle_distance, Mesh};
use crate::mortar::{assemble_mortar, MortarStats};
use crate::operators::{assemble_operators, Medium, OperatorKind};
use crate::solver::{gmres, GmresOptions, LinearMap, SolveReport};
use crate::space::{MassInverse, P1Space};
use crate::sparse::CsrMatrix;
use crate::{Error, Result, Vec3, C64};

// ---------------------------------------------------------------------------
// incident fields

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IncidentField {
    PlaneWave { direction: [f64; 3] },
    /// Unit-strength monopole `e^{ikr} / (4πr)`.
    PointSource { location: [f64; 3] },
}

impl IncidentField {
    pub fn plane_wave(direction: Vec3) -> Result<Self> {
        let n = direction.norm();
        if !(n > 0.0 && n.is_finite()) {
            return Err(Error::InvalidParameter("plane wave direction must be nonzero".into()));
        }
        let d = direction / n;
        Ok(IncidentField::PlaneWave { direction: [d.x, d.y, d.z] })
    }

    pub fn point_source(location: Vec3) -> Self {
        IncidentField::PointSource { location: [location.x, location.y, location.z] }
    }

    pub fn value(&self, k: C64, x: &Vec3) -> C64 {
        self.value_and_gradient(k, x).0
    }

    pub fn value_and_gradient(&self, k: C64, x: &Vec3) -> (C64, [C64; 3]) {
        let i = C64::i();
        match *self {
            IncidentField::PlaneWave { direction } => {
                let d = Vec3::from(direction);
                let u = (i * k * d.dot(x)).exp();
                (u, [i * k * d.x * u, i * k * d.y * u, i * k * d.z * u])
            }
            IncidentField::PointSource { location } => {
                let diff = x - Vec3::from(location);
                let r = diff.norm();
                let g = (i * k * r).exp() / (4.0 * std::f64::consts::PI * r);
                let f = g * (i * k - 1.0 / r) / r;
                (g, [f * diff.x, f * diff.y, f * diff.z])
            }
        }
    }

    /// Normal derivative `∇u · n`.
    pub fn normal_derivative(&self, k: C64, x: &Vec3, n: &Vec3) -> C64 {
        let (_, g) = self.value_and_gradient(k, x);
        g[0] * n.x + g[1] * n.y + g[2] * n.z
    }
}

/// Weak-form Dirichlet and Neumann traces `⟨u_inc, λ_i⟩`, `⟨∂u_inc/∂n, λ_i⟩`.
pub fn incident_traces(incident: &IncidentField, k: C64, space: &P1Space) -> Result<(Vec<C64>, Vec<C64>)> {
    if let IncidentField::PointSource { location } = incident {
        let mesh = space.mesh();
        let x0 = Vec3::from(*location);
        let tol = 1e-8 * mesh.bbox_diagonal();
        if (0..mesh.n_triangles()).any(|t| point_triangle_distance(&x0, &mesh.triangle_points(t)) < tol) {
            return Err(Error::SourceOnSurface);
        }
    }
    let f = space.rhs_from_function(|x, _| incident.value(k, x));
    let g = space.rhs_from_function(|x, n| incident.normal_derivative(k, x, n));
    Ok((f, g))
}

// ---------------------------------------------------------------------------
// lazily composed linear operators

/// A linear operator built from dense and sparse factors.
#[derive(Clone)]
pub enum LinOp {
    Dense(Arc<DenseMatrix>),
    Sparse(Arc<CsrMatrix>),
    MassInverse(Arc<MassInverse>),
    Identity(usize),
    Scaled(C64, Box<LinOp>),
    Sum(Vec<LinOp>),
    /// `[A, B, C]` acts as `A B C`.
    Product(Vec<LinOp>),
}

impl fmt::Debug for LinOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LinOp::Dense(m) => write!(f, "Dense({}x{})", m.nrows(), m.ncols()),
            LinOp::Sparse(m) => write!(f, "Sparse({}x{})", m.nrows(), m.ncols()),
            LinOp::MassInverse(m) => write!(f, "MassInverse({})", m.dim()),
            LinOp::Identity(n) => write!(f, "Identity({n})"),
            LinOp::Scaled(s, op) => write!(f, "{s} * {op:?}"),
            LinOp::Sum(ops) => f.debug_tuple("Sum").field(ops).finish(),
            LinOp::Product(ops) => f.debug_tuple("Product").field(ops).finish(),
        }
    }
}

impl LinOp {
    pub fn scaled(self, s: impl Into<C64>) -> LinOp {
        let s = s.into();
        if s == C64::new(1.0, 0.0) {
            self
        } else {
            LinOp::Scaled(s, Box::new(self))
        }
    }

    /// Product `A B ...`, dropping identities.
    pub fn product(ops: Vec<LinOp>) -> LinOp {
        let mut flat: Vec<LinOp> = Vec::with_capacity(ops.len());
        let mut dim = None;
        for op in ops {
            match op {
                LinOp::Identity(n) => dim = Some(n),
                LinOp::Product(inner) => flat.extend(inner),
                other => flat.push(other),
            }
        }
        match flat.len() {
            0 => LinOp::Identity(dim.unwrap_or(0)),
            1 => flat.pop().expect("one factor"),
            _ => LinOp::Product(flat),
        }
    }

    pub fn nrows(&self) -> usize {
        match self {
            LinOp::Dense(m) => m.nrows(),
            LinOp::Sparse(m) => m.nrows(),
            LinOp::MassInverse(m) => m.dim(),
            LinOp::Identity(n) => *n,
            LinOp::Scaled(_, op) => op.nrows(),
            LinOp::Sum(ops) => ops[0].nrows(),
            LinOp::Product(ops) => ops[0].nrows(),
        }
    }

    pub fn ncols(&self) -> usize {
        match self {
            LinOp::Dense(m) => m.ncols(),
            LinOp::Sparse(m) => m.ncols(),
            LinOp::MassInverse(m) => m.dim(),
            LinOp::Identity(n) => *n,
            LinOp::Scaled(_, op) => op.ncols(),
            LinOp::Sum(ops) => ops[0].ncols(),
            LinOp::Product(ops) => ops[ops.len() - 1].ncols(),
        }
    }

    /// Checks that all factors fit together.
    pub fn validate(&self) -> Result<()> {
        match self {
            LinOp::Scaled(_, op) => op.validate(),
            LinOp::Sum(ops) => {
                for op in ops {
                    op.validate()?;
                    if op.nrows() != ops[0].nrows() || op.ncols() != ops[0].ncols() {
                        return Err(Error::Dimension(format!("sum of {op:?} and {:?}", ops[0])));
                    }
                }
                Ok(())
            }
            LinOp::Product(ops) => {
                for w in ops.windows(2) {
                    if w[0].ncols() != w[1].nrows() {
                        return Err(Error::Dimension(format!("product of {:?} and {:?}", w[0], w[1])));
                    }
                }
                ops.iter().try_for_each(LinOp::validate)
            }
            _ => Ok(()),
        }
    }

    pub fn apply(&self, x: &[C64]) -> Vec<C64> {
        match self {
            LinOp::Dense(m) => m.matvec(x),
            LinOp::Sparse(m) => m.matvec(x),
            LinOp::MassInverse(m) => m.apply(x),
            LinOp::Identity(_) => x.to_vec(),
            LinOp::Scaled(s, op) => {
                let mut y = op.apply(x);
                y.iter_mut().for_each(|v| *v *= s);
                y
            }
            LinOp::Sum(ops) => {
                let mut y = ops[0].apply(x);
                for op in &ops[1..] {
                    y.iter_mut().zip(op.apply(x)).for_each(|(a, b)| *a += b);
                }
                y
            }
            LinOp::Product(ops) => {
                let mut y = ops[ops.len() - 1].apply(x);
                for op in ops[..ops.len() - 1].iter().rev() {
                    y = op.apply(&y);
                }
                y
            }
        }
    }

    fn collect_dense(&self, out: &mut Vec<*const DenseMatrix>) {
        match self {
            LinOp::Dense(m) => {
                let p = Arc::as_ptr(m);
                if !out.contains(&p) {
                    out.push(p);
                }
            }
            LinOp::Scaled(_, op) => op.collect_dense(out),
            LinOp::Sum(ops) | LinOp::Product(ops) => ops.iter().for_each(|op| op.collect_dense(out)),
            _ => {}
        }
    }
}

/// Grid of operators acting on stacked coefficient vectors, with an optional
/// block-diagonal left factor per block row.
#[derive(Clone, Debug)]
pub struct BlockOperator {
    row_sizes: Vec<usize>,
    col_sizes: Vec<usize>,
    blocks: Vec<Vec<Option<LinOp>>>,
    left: Vec<Option<LinOp>>,
}

impl BlockOperator {
    pub fn new(blocks: Vec<Vec<Option<LinOp>>>) -> Result<Self> {
        let nr = blocks.len();
        let nc = blocks.first().map_or(0, Vec::len);
        let mut row_sizes = vec![None; nr];
        let mut col_sizes = vec![None; nc];
        for (i, row) in blocks.iter().enumerate() {
            if row.len() != nc {
                return Err(Error::Dimension("ragged block grid".into()));
            }
            for (j, b) in row.iter().enumerate() {
                if let Some(b) = b {
                    b.validate()?;
                    for (slot, size) in [(&mut row_sizes[i], b.nrows()), (&mut col_sizes[j], b.ncols())] {
                        match slot {
                            Some(s) if *s != size => {
                                return Err(Error::Dimension(format!("block ({i}, {j}) has size {size}, expected {s}")))
                            }
                            _ => *slot = Some(size),
                        }
                    }
                }
            }
        }
        let unwrap = |v: Vec<Option<usize>>| -> Result<Vec<usize>> {
            v.into_iter().map(|s| s.ok_or_else(|| Error::Dimension("empty block row or column".into()))).collect()
        };
        Ok(BlockOperator { row_sizes: unwrap(row_sizes)?, col_sizes: unwrap(col_sizes)?, blocks, left: vec![None; nr] })
    }

    pub fn row_sizes(&self) -> &[usize] {
        &self.row_sizes
    }

    pub fn col_sizes(&self) -> &[usize] {
        &self.col_sizes
    }

    pub fn nrows(&self) -> usize {
        self.row_sizes.iter().sum()
    }

    pub fn ncols(&self) -> usize {
        self.col_sizes.iter().sum()
    }

    pub fn block(&self, i: usize, j: usize) -> Option<&LinOp> {
        self.blocks[i][j].as_ref()
    }

    /// Composes the block rows from the left with `factors`.
    pub fn left_multiply(mut self, factors: Vec<LinOp>) -> Result<Self> {
        if factors.len() != self.row_sizes.len() {
            return Err(Error::Dimension("one left factor per block row".into()));
        }
        for ((slot, f), &size) in self.left.iter_mut().zip(factors).zip(&self.row_sizes) {
            if f.ncols() != size || f.nrows() != size {
                return Err(Error::Dimension(format!("left factor {f:?} on block row of size {size}")));
            }
            *slot = Some(match slot.take() {
                Some(old) => LinOp::product(vec![f, old]),
                None => f,
            });
        }
        Ok(self)
    }

    /// Number of distinct dense matrices referenced.
    pub fn dense_count(&self) -> usize {
        let mut seen = Vec::new();
        for op in self.blocks.iter().flatten().flatten().chain(self.left.iter().flatten()) {
            op.collect_dense(&mut seen);
        }
        seen.len()
    }

    /// Applies the operator to a stacked vector.
    pub fn apply(&self, x: &[C64]) -> Vec<C64> {
        assert_eq!(x.len(), self.ncols(), "block operator dimension");
        let mut offsets = vec![0];
        for s in &self.col_sizes {
            offsets.push(offsets.last().unwrap() + s);
        }
        let mut out = Vec::with_capacity(self.nrows());
        for (i, row) in self.blocks.iter().enumerate() {
            let mut y = vec![C64::new(0.0, 0.0); self.row_sizes[i]];
            for (j, b) in row.iter().enumerate() {
                if let Some(b) = b {
                    let part = b.apply(&x[offsets[j]..offsets[j + 1]]);
                    y.iter_mut().zip(part).for_each(|(a, p)| *a += p);
                }
            }
            if let Some(l) = &self.left[i] {
                y = l.apply(&y);
            }
            out.extend(y);
        }
        out
    }

    /// Dense matrix of the operator, column by column.
    pub fn materialize(&self) -> DenseMatrix {
        let n = self.ncols();
        let mut m = DenseMatrix::zeros(self.nrows(), n);
        let mut e = vec![C64::new(0.0, 0.0); n];
        for j in 0..n {
            e[j] = C64::new(1.0, 0.0);
            for (i, v) in self.apply(&e).into_iter().enumerate() {
                m[(i, j)] = v;
            }
            e[j] = C64::new(0.0, 0.0);
        }
        m
    }
}

impl LinearMap for BlockOperator {
    fn dim(&self) -> usize {
        self.nrows()
    }

    fn apply(&self, x: &[C64]) -> Vec<C64> {
        BlockOperator::apply(self, x)
    }
}

// ---------------------------------------------------------------------------
// formulations

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FormulationKind {
    PmchwtExt,
    PmchwtInt,
    MullerExt,
    MullerInt,
    Mtf,
    HcExtNeu,
    HcExtDir,
    HcIntNeu,
    HcIntDir,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Side {
    Exterior,
    Interior,
}

impl FormulationKind {
    pub const ALL: [FormulationKind; 9] = [
        FormulationKind::PmchwtExt,
        FormulationKind::PmchwtInt,
        FormulationKind::MullerExt,
        FormulationKind::MullerInt,
        FormulationKind::Mtf,
        FormulationKind::HcExtNeu,
        FormulationKind::HcExtDir,
        FormulationKind::HcIntNeu,
        FormulationKind::HcIntDir,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FormulationKind::PmchwtExt => "pmchwt_ext",
            FormulationKind::PmchwtInt => "pmchwt_int",
            FormulationKind::MullerExt => "muller_ext",
            FormulationKind::MullerInt => "muller_int",
            FormulationKind::Mtf => "mtf",
            FormulationKind::HcExtNeu => "hc_ext_neu",
            FormulationKind::HcExtDir => "hc_ext_dir",
            FormulationKind::HcIntNeu => "hc_int_neu",
            FormulationKind::HcIntDir => "hc_int_dir",
        }
    }

    /// Mesh carrying each block of unknowns.
    pub fn unknown_sides(self) -> &'static [Side] {
        use Side::*;
        match self {
            FormulationKind::Mtf => &[Exterior, Exterior, Interior, Interior],
            FormulationKind::PmchwtInt | FormulationKind::MullerInt | FormulationKind::HcIntNeu | FormulationKind::HcIntDir => {
                &[Interior, Interior]
            }
            _ => &[Exterior, Exterior],
        }
    }

    /// Dense boundary operators the block system is built from.
    pub fn dense_operators(self) -> Vec<(Side, OperatorKind)> {
        use OperatorKind::*;
        use Side::*;
        match self {
            FormulationKind::HcExtNeu => vec![(Interior, AdjointDoubleLayer), (Interior, Hypersingular), (Exterior, SingleLayer), (Exterior, AdjointDoubleLayer)],
            FormulationKind::HcExtDir => vec![(Exterior, DoubleLayer), (Exterior, Hypersingular), (Interior, SingleLayer), (Interior, DoubleLayer)],
            FormulationKind::HcIntNeu => vec![(Exterior, AdjointDoubleLayer), (Exterior, Hypersingular), (Interior, SingleLayer), (Interior, AdjointDoubleLayer)],
            FormulationKind::HcIntDir => vec![(Interior, DoubleLayer), (Interior, Hypersingular), (Exterior, SingleLayer), (Exterior, DoubleLayer)],
            _ => [Exterior, Interior].iter().flat_map(|&s| OperatorKind::ALL.map(|k| (s, k))).collect(),
        }
    }
}

impl fmt::Display for FormulationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FormulationKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FormulationKind::ALL
            .into_iter()
            .find(|k| k.name() == s.trim())
            .ok_or_else(|| Error::UnknownFormulation(s.to_string()))
    }
}

/// Acoustic transmission through a homogeneous object.
#[derive(Clone, Debug)]
pub struct TransmissionProblem {
    pub mesh_ext: Arc<Mesh>,
    pub mesh_int: Arc<Mesh>,
    pub medium_ext: Medium,
    pub medium_int: Medium,
    pub frequency: f64,
    pub incident: IncidentField,
}

impl TransmissionProblem {
    /// Both sides on one mesh.
    pub fn conforming(mesh: Arc<Mesh>, medium_ext: Medium, medium_int: Medium, frequency: f64, incident: IncidentField) -> Self {
        TransmissionProblem { mesh_ext: mesh.clone(), mesh_int: mesh, medium_ext, medium_int, frequency, incident }
    }

    pub fn is_conforming(&self) -> bool {
        Arc::ptr_eq(&self.mesh_ext, &self.mesh_int)
    }

    pub fn k_ext(&self) -> C64 {
        self.medium_ext.wavenumber(self.frequency)
    }

    pub fn k_int(&self) -> C64 {
        self.medium_int.wavenumber(self.frequency)
    }

    /// `ρ_int / ρ_ext`.
    pub fn density_ratio(&self) -> f64 {
        self.medium_int.rho / self.medium_ext.rho
    }

    fn validate(&self) -> Result<()> {
        if !(self.frequency > 0.0 && self.frequency.is_finite()) {
            return Err(Error::InvalidParameter(format!("frequency {}", self.frequency)));
        }
        self.mesh_ext.check_closed()?;
        self.mesh_int.check_closed()
    }
}

/// Discrete data of one side of the interface.
#[derive(Clone)]
pub struct SideData {
    pub space: P1Space,
    pub mass: Arc<CsrMatrix>,
    pub mass_inverse: Arc<MassInverse>,
    pub k: C64,
    operators: [Option<Arc<DenseMatrix>>; 4],
}

impl SideData {
    fn new(mesh: Arc<Mesh>, k: C64) -> Result<Self> {
        let space = P1Space::new(mesh);
        let mass = space.mass_matrix();
        let mass_inverse = MassInverse::new(&mass)?;
        Ok(SideData { space, mass: Arc::new(mass), mass_inverse: Arc::new(mass_inverse), k, operators: Default::default() })
    }

    pub fn n_dofs(&self) -> usize {
        self.space.n_dofs()
    }

    pub fn operator(&self, kind: OperatorKind) -> Result<&Arc<DenseMatrix>> {
        self.operators[kind as usize]
            .as_ref()
            .ok_or_else(|| Error::InvalidParameter(format!("{kind:?} was not assembled")))
    }

    fn op(&self, kind: OperatorKind) -> Result<LinOp> {
        Ok(LinOp::Dense(self.operator(kind)?.clone()))
    }

    fn mass_op(&self) -> LinOp {
        LinOp::Sparse(self.mass.clone())
    }

    fn minv(&self) -> LinOp {
        LinOp::MassInverse(self.mass_inverse.clone())
    }

    /// Bytes held by the dense operators.
    pub fn dense_bytes(&self) -> usize {
        self.operators.iter().flatten().map(|m| m.bytes()).sum()
    }

    pub fn dense_count(&self) -> usize {
        self.operators.iter().flatten().count()
    }
}

#[derive(Clone)]
enum Coupling {
    Conforming,
    Mortar { p_ie: Arc<CsrMatrix>, p_ei: Arc<CsrMatrix>, stats: MortarStats },
}

#[derive(Clone, Copy, Debug, Default, Serialize)]
pub struct AssemblyTimings {
    #[serde(serialize_with = "crate::solver::as_seconds")]
    pub operators_ext: Duration,
    #[serde(serialize_with = "crate::solver::as_seconds")]
    pub operators_int: Duration,
    #[serde(serialize_with = "crate::solver::as_seconds")]
    pub mortar: Duration,
}

impl AssemblyTimings {
    pub fn total(&self) -> Duration {
        self.operators_ext + self.operators_int + self.mortar
    }
}

/// Spaces, operators, mortar coupling and incident traces of a problem.
#[derive(Clone)]
pub struct Discretization {
    pub problem: TransmissionProblem,
    pub ext: SideData,
    pub int: SideData,
    coupling: Coupling,
    /// Weak-form incident Dirichlet and Neumann traces on the exterior mesh.
    pub incident_dirichlet: Vec<C64>,
    pub incident_neumann: Vec<C64>,
    pub timings: AssemblyTimings,
}

impl Discretization {
    /// Assembles everything the given formulations need.
    pub fn new(problem: TransmissionProblem, kinds: &[FormulationKind]) -> Result<Self> {
        problem.validate()?;
        let mut ext = SideData::new(problem.mesh_ext.clone(), problem.k_ext())?;
        let mut int = if problem.is_conforming() {
            SideData { k: problem.k_int(), operators: Default::default(), ..ext.clone() }
        } else {
            SideData::new(problem.mesh_int.clone(), problem.k_int())?
        };
        let mut timings = AssemblyTimings::default();
        let t = Instant::now();
        let coupling = if problem.is_conforming() {
            Coupling::Conforming
        } else {
            let p = assemble_mortar(&int.space, &ext.space)?;
            Coupling::Mortar { p_ei: Arc::new(p.matrix.transpose()), p_ie: Arc::new(p.matrix), stats: p.stats }
        };
        timings.mortar = t.elapsed();
        for (side, data, slot) in [(Side::Exterior, &mut ext, &mut timings.operators_ext), (Side::Interior, &mut int, &mut timings.operators_int)] {
            let mut wanted: Vec<OperatorKind> = Vec::new();
            for kind in kinds {
                for (s, op) in kind.dense_operators() {
                    if s == side && !wanted.contains(&op) {
                        wanted.push(op);
                    }
                }
            }
            if wanted.is_empty() {
                continue;
            }
            let t = Instant::now();
            let mut set = assemble_operators(&data.space, data.k, &wanted)?;
            for op in wanted {
                data.operators[op as usize] = set.take(op).map(Arc::new);
            }
            *slot = t.elapsed();
        }
        let (incident_dirichlet, incident_neumann) = incident_traces(&problem.incident, ext.k, &ext.space)?;
        Ok(Discretization { problem, ext, int, coupling, incident_dirichlet, incident_neumann, timings })
    }

    pub fn is_conforming(&self) -> bool {
        matches!(self.coupling, Coupling::Conforming)
    }

    pub fn mortar_stats(&self) -> Option<&MortarStats> {
        match &self.coupling {
            Coupling::Conforming => None,
            Coupling::Mortar { stats, .. } => Some(stats),
        }
    }

    /// Mortar matrix `P_ie` (the interior mass matrix when conforming).
    pub fn mortar_int_ext(&self) -> Arc<CsrMatrix> {
        match &self.coupling {
            Coupling::Conforming => self.int.mass.clone(),
            Coupling::Mortar { p_ie, .. } => p_ie.clone(),
        }
    }

    fn side(&self, side: Side) -> &SideData {
        match side {
            Side::Exterior => &self.ext,
            Side::Interior => &self.int,
        }
    }

    fn n(&self, side: Side) -> usize {
        self.side(side).n_dofs()
    }

    /// Weak-form identity between the two meshes: `P_ie` or `P_ei`.
    fn cross_mass(&self, test: Side) -> LinOp {
        match (&self.coupling, test) {
            (Coupling::Conforming, s) => self.side(s).mass_op(),
            (Coupling::Mortar { p_ie, .. }, Side::Interior) => LinOp::Sparse(p_ie.clone()),
            (Coupling::Mortar { p_ei, .. }, Side::Exterior) => LinOp::Sparse(p_ei.clone()),
        }
    }

    /// Coefficients on the other mesh to coefficients on `to`: `M⁻¹ P`.
    fn transfer(&self, to: Side) -> LinOp {
        match self.coupling {
            Coupling::Conforming => LinOp::Identity(self.n(to)),
            Coupling::Mortar { .. } => LinOp::product(vec![self.side(to).minv(), self.cross_mass(to)]),
        }
    }

    /// Weak-form functionals on the other mesh to weak-form functionals on
    /// `to`: `P M⁻¹`.
    fn weak_transfer(&self, to: Side) -> LinOp {
        let from = other(to);
        match self.coupling {
            Coupling::Conforming => LinOp::Identity(self.n(to)),
            Coupling::Mortar { .. } => LinOp::product(vec![self.cross_mass(to), self.side(from).minv()]),
        }
    }

    /// Operator of side `from` seen from the opposite mesh.
    fn passed(&self, from: Side, kind: OperatorKind) -> Result<LinOp> {
        let to = other(from);
        Ok(LinOp::product(vec![self.weak_transfer(to), self.side(from).op(kind)?, self.transfer(from)]))
    }

    fn transfer_vec(&self, to: Side, v: &[C64]) -> Vec<C64> {
        self.transfer(to).apply(v)
    }

    fn ext_strong(&self, weak: &[C64]) -> Vec<C64> {
        self.ext.mass_inverse.apply(weak)
    }
}

fn other(side: Side) -> Side {
    match side {
        Side::Exterior => Side::Interior,
        Side::Interior => Side::Exterior,
    }
}

fn c(re: f64) -> C64 {
    C64::new(re, 0.0)
}

fn sum(ops: Vec<LinOp>) -> LinOp {
    if ops.len() == 1 {
        ops.into_iter().next().expect("one term")
    } else {
        LinOp::Sum(ops)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Form {
    Weak,
    Strong,
}

/// A block system with its right-hand side.
#[derive(Clone, Debug)]
pub struct System {
    pub kind: FormulationKind,
    pub operator: BlockOperator,
    pub rhs: Vec<C64>,
    pub form: Form,
}

impl System {
    pub fn n_unknowns(&self) -> usize {
        self.rhs.len()
    }

    pub fn solve(&self, opts: &GmresOptions) -> (Vec<C64>, SolveReport) {
        gmres(&self.operator, &self.rhs, opts)
    }
}

/// Weak-form block system and right-hand side of a formulation.
pub fn build_system(kind: FormulationKind, d: &Discretization) -> Result<System> {
    use OperatorKind::*;
    use Side::*;
    let r = d.problem.density_ratio();
    let (e, i) = (&d.ext, &d.int);
    let f = &d.incident_dirichlet;
    let g = &d.incident_neumann;
    let half = c(0.5);
    let (blocks, rhs): (Vec<Vec<Option<LinOp>>>, Vec<C64>) = match kind {
        FormulationKind::PmchwtExt | FormulationKind::MullerExt => {
            // exterior Calderón operator plus (or minus) the scaled interior one
            let s = if kind == FormulationKind::PmchwtExt { 1.0 } else { -1.0 };
            let mut b11 = vec![e.op(DoubleLayer)?.scaled(c(-1.0)), d.passed(Interior, DoubleLayer)?.scaled(c(-s))];
            let b12 = vec![e.op(SingleLayer)?, d.passed(Interior, SingleLayer)?.scaled(c(s * r))];
            let b21 = vec![e.op(Hypersingular)?, d.passed(Interior, Hypersingular)?.scaled(c(s / r))];
            let mut b22 = vec![e.op(AdjointDoubleLayer)?, d.passed(Interior, AdjointDoubleLayer)?.scaled(c(s))];
            if s < 0.0 {
                b11.insert(0, e.mass_op());
                b22.insert(0, e.mass_op());
            }
            let blocks = vec![vec![Some(sum(b11)), Some(sum(b12))], vec![Some(sum(b21)), Some(sum(b22))]];
            (blocks, [f.as_slice(), g.as_slice()].concat())
        }
        FormulationKind::PmchwtInt | FormulationKind::MullerInt => {
            let s = if kind == FormulationKind::PmchwtInt { 1.0 } else { -1.0 };
            let mut b11 = vec![d.passed(Exterior, DoubleLayer)?.scaled(c(-1.0)), i.op(DoubleLayer)?.scaled(c(-s))];
            let b12 = vec![d.passed(Exterior, SingleLayer)?.scaled(c(1.0 / r)), i.op(SingleLayer)?.scaled(c(s))];
            let b21 = vec![d.passed(Exterior, Hypersingular)?.scaled(c(r)), i.op(Hypersingular)?.scaled(c(s))];
            let mut b22 = vec![d.passed(Exterior, AdjointDoubleLayer)?, i.op(AdjointDoubleLayer)?.scaled(c(s))];
            if s < 0.0 {
                b11.insert(0, i.mass_op());
                b22.insert(0, i.mass_op());
            }
            let blocks = vec![vec![Some(sum(b11)), Some(sum(b12))], vec![Some(sum(b21)), Some(sum(b22))]];
            let wt = d.weak_transfer(Interior);
            let rhs = [wt.apply(f), wt.apply(g).into_iter().map(|v| v * r).collect()].concat();
            (blocks, rhs)
        }
        FormulationKind::Mtf => {
            let to_ext = d.cross_mass(Exterior);
            let to_int = d.cross_mass(Interior);
            let blocks = vec![
                vec![Some(e.op(DoubleLayer)?.scaled(c(-1.0))), Some(e.op(SingleLayer)?), Some(to_ext.clone().scaled(c(-0.5))), None],
                vec![Some(e.op(Hypersingular)?), Some(e.op(AdjointDoubleLayer)?), None, Some(to_ext.scaled(c(-0.5 / r)))],
                vec![Some(to_int.clone().scaled(half)), None, Some(i.op(DoubleLayer)?.scaled(c(-1.0))), Some(i.op(SingleLayer)?)],
                vec![None, Some(to_int.scaled(c(0.5 * r))), Some(i.op(Hypersingular)?), Some(i.op(AdjointDoubleLayer)?)],
            ];
            let zero = vec![C64::new(0.0, 0.0); i.n_dofs()];
            let rhs = [f.iter().map(|v| -v).collect::<Vec<_>>(), g.iter().map(|v| -v).collect(), zero.clone(), zero].concat();
            (blocks, rhs)
        }
        FormulationKind::HcExtNeu => {
            let w_hat = d.passed(Interior, Hypersingular)?;
            let blocks = vec![
                vec![
                    Some(sum(vec![e.mass_op().scaled(half), d.passed(Interior, AdjointDoubleLayer)?.scaled(c(-1.0))])),
                    Some(LinOp::product(vec![w_hat.clone(), e.minv(), e.op(SingleLayer)?]).scaled(c(-1.0 / r))),
                ],
                vec![Some(e.mass_op()), Some(sum(vec![e.mass_op().scaled(half), e.op(AdjointDoubleLayer)?.scaled(c(-1.0))]))],
            ];
            let top: Vec<C64> = w_hat.apply(&d.ext_strong(f)).into_iter().map(|v| v / r).collect();
            (blocks, [top, g.clone()].concat())
        }
        FormulationKind::HcExtDir => {
            let v_hat = d.passed(Interior, SingleLayer)?;
            let blocks = vec![
                vec![Some(sum(vec![e.mass_op().scaled(half), e.op(DoubleLayer)?])), Some(e.mass_op())],
                vec![
                    Some(LinOp::product(vec![v_hat.clone(), e.minv(), e.op(Hypersingular)?]).scaled(c(-r))),
                    Some(sum(vec![e.mass_op().scaled(half), d.passed(Interior, DoubleLayer)?])),
                ],
            ];
            let bottom: Vec<C64> = v_hat.apply(&d.ext_strong(g)).into_iter().map(|v| v * r).collect();
            (blocks, [f.clone(), bottom].concat())
        }
        FormulationKind::HcIntNeu => {
            let blocks = vec![
                vec![
                    Some(sum(vec![i.mass_op().scaled(half), d.passed(Exterior, AdjointDoubleLayer)?])),
                    Some(LinOp::product(vec![d.passed(Exterior, Hypersingular)?, i.minv(), i.op(SingleLayer)?]).scaled(c(r))),
                ],
                vec![Some(i.mass_op().scaled(c(-1.0))), Some(sum(vec![i.mass_op().scaled(half), i.op(AdjointDoubleLayer)?]))],
            ];
            // W_e f + (½ + K'_e) g in weak form on the exterior mesh
            let fs = d.ext_strong(f);
            let gs = d.ext_strong(g);
            let we = e.operator(Hypersingular)?.matvec(&fs);
            let ke = e.operator(AdjointDoubleLayer)?.matvec(&gs);
            let ext_weak: Vec<C64> = we.iter().zip(&ke).zip(g).map(|((a, b), gg)| a + b + half * gg).collect();
            let top: Vec<C64> = d.weak_transfer(Interior).apply(&ext_weak).into_iter().map(|v| v * r).collect();
            (blocks, [top, vec![C64::new(0.0, 0.0); i.n_dofs()]].concat())
        }
        FormulationKind::HcIntDir => {
            let blocks = vec![
                vec![Some(sum(vec![i.mass_op().scaled(half), i.op(DoubleLayer)?.scaled(c(-1.0))])), Some(i.mass_op().scaled(c(-1.0)))],
                vec![
                    Some(LinOp::product(vec![d.passed(Exterior, SingleLayer)?, i.minv(), i.op(Hypersingular)?]).scaled(c(1.0 / r))),
                    Some(sum(vec![i.mass_op().scaled(half), d.passed(Exterior, DoubleLayer)?.scaled(c(-1.0))])),
                ],
            ];
            // V_e g + (½ − K_e) f in weak form on the exterior mesh
            let fs = d.ext_strong(f);
            let gs = d.ext_strong(g);
            let ve = e.operator(SingleLayer)?.matvec(&gs);
            let ke = e.operator(DoubleLayer)?.matvec(&fs);
            let ext_weak: Vec<C64> = ve.iter().zip(&ke).zip(f).map(|((a, b), ff)| a - b + half * ff).collect();
            let bottom = d.weak_transfer(Interior).apply(&ext_weak);
            (blocks, [vec![C64::new(0.0, 0.0); i.n_dofs()], bottom].concat())
        }
    };
    let operator = BlockOperator::new(blocks)?;
    let expected = kind.dense_operators().len();
    assert_eq!(operator.dense_count(), expected, "{kind} must reference {expected} dense operators");
    Ok(System { kind, operator, rhs, form: Form::Weak })
}

/// Left-composes the system with the inverse mass matrices of the test
/// spaces, mapping weak-form residuals to coefficients.
pub fn precondition_strong(system: System, d: &Discretization) -> Result<System> {
    let factors: Vec<LinOp> = system.kind.unknown_sides().iter().map(|&s| d.side(s).minv()).collect();
    let mut offset = 0;
    let mut rhs = Vec::with_capacity(system.rhs.len());
    for (f, &size) in factors.iter().zip(system.operator.row_sizes()) {
        rhs.extend(f.apply(&system.rhs[offset..offset + size]));
        offset += size;
    }
    let operator = system.operator.left_multiply(factors)?;
    Ok(System { kind: system.kind, operator, rhs, form: Form::Strong })
}

/// Strong-form system, the default used by the benchmarks.
pub fn build_strong_system(kind: FormulationKind, d: &Discretization) -> Result<System> {
    precondition_strong(build_system(kind, d)?, d)
}

/// Layer densities representing the fields: the scattered field is
/// `SLP_e s_e − DLP_e d_e` outside and the field inside is
/// `SLP_i s_i − DLP_i d_i`. Missing densities are zero.
#[derive(Clone, Debug, Default)]
pub struct Densities {
    pub ext_single: Option<Vec<C64>>,
    pub ext_double: Option<Vec<C64>>,
    pub int_single: Option<Vec<C64>>,
    pub int_double: Option<Vec<C64>>,
}

fn neg(v: Vec<C64>) -> Vec<C64> {
    v.into_iter().map(|x| -x).collect()
}

fn scale(v: Vec<C64>, s: f64) -> Vec<C64> {
    v.into_iter().map(|x| x * s).collect()
}

/// Densities of a solved formulation, transferred between meshes where the
/// representation lives on the other one.
pub fn densities(kind: FormulationKind, d: &Discretization, solution: &[C64]) -> Result<Densities> {
    use OperatorKind::*;
    use Side::*;
    let sizes: Vec<usize> = kind.unknown_sides().iter().map(|&s| d.n(s)).collect();
    if solution.len() != sizes.iter().sum::<usize>() {
        return Err(Error::Dimension(format!("{} coefficients for {kind}", solution.len())));
    }
    let mut parts = Vec::new();
    let mut offset = 0;
    for s in &sizes {
        parts.push(solution[offset..offset + s].to_vec());
        offset += s;
    }
    let r = d.problem.density_ratio();
    let out = match kind {
        FormulationKind::PmchwtExt | FormulationKind::MullerExt => Densities {
            int_double: Some(d.transfer_vec(Interior, &parts[0])),
            int_single: Some(scale(d.transfer_vec(Interior, &parts[1]), r)),
            ext_double: Some(neg(parts[0].clone())),
            ext_single: Some(neg(parts[1].clone())),
        },
        FormulationKind::PmchwtInt | FormulationKind::MullerInt => Densities {
            ext_double: Some(neg(d.transfer_vec(Exterior, &parts[0]))),
            ext_single: Some(scale(neg(d.transfer_vec(Exterior, &parts[1])), 1.0 / r)),
            int_double: Some(parts[0].clone()),
            int_single: Some(parts[1].clone()),
        },
        FormulationKind::Mtf => Densities {
            ext_double: Some(parts[0].clone()),
            ext_single: Some(parts[1].clone()),
            int_double: Some(parts[2].clone()),
            int_single: Some(parts[3].clone()),
        },
        FormulationKind::HcExtNeu => {
            // γD⁺p = f + V_e ψ_e
            let v = d.ext.operator(SingleLayer)?.matvec(&parts[1]);
            let trace: Vec<C64> = d.incident_dirichlet.iter().zip(v).map(|(a, b)| a + b).collect();
            Densities {
                ext_single: Some(parts[1].clone()),
                ext_double: None,
                int_double: Some(d.transfer_vec(Interior, &d.ext_strong(&trace))),
                int_single: Some(scale(d.transfer_vec(Interior, &parts[0]), r)),
            }
        }
        FormulationKind::HcExtDir => {
            // γN⁺p = g + W_e φ_e
            let w = d.ext.operator(Hypersingular)?.matvec(&parts[0]);
            let trace: Vec<C64> = d.incident_neumann.iter().zip(w).map(|(a, b)| a + b).collect();
            Densities {
                ext_single: None,
                ext_double: Some(parts[0].clone()),
                int_double: Some(d.transfer_vec(Interior, &parts[1])),
                int_single: Some(scale(d.transfer_vec(Interior, &d.ext_strong(&trace)), r)),
            }
        }
        FormulationKind::HcIntNeu => {
            // scattered traces: γD = V_i ψ_i − u_inc, γN = (ρe/ρi) γN⁻p − ∂u_inc/∂n
            let v = d.int.mass_inverse.apply(&d.int.operator(SingleLayer)?.matvec(&parts[1]));
            let dir = sub(&d.transfer_vec(Exterior, &v), &d.ext_strong(&d.incident_dirichlet));
            let neu = sub(&scale(d.transfer_vec(Exterior, &parts[0]), 1.0 / r), &d.ext_strong(&d.incident_neumann));
            Densities { ext_double: Some(neg(dir)), ext_single: Some(neg(neu)), int_single: Some(parts[1].clone()), int_double: None }
        }
        FormulationKind::HcIntDir => {
            let w = d.int.mass_inverse.apply(&d.int.operator(Hypersingular)?.matvec(&parts[0]));
            let dir = sub(&d.transfer_vec(Exterior, &parts[1]), &d.ext_strong(&d.incident_dirichlet));
            let neu = sub(&scale(d.transfer_vec(Exterior, &w), 1.0 / r), &d.ext_strong(&d.incident_neumann));
            Densities { ext_double: Some(neg(dir)), ext_single: Some(neg(neu)), int_single: None, int_double: Some(parts[0].clone()) }
        }
    };
    Ok(out)
}

fn sub(a: &[C64], b: &[C64]) -> Vec<C64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}
