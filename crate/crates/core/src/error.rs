use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("non-planar screen corners: {0}")]
    NonPlanarCorners(String),

    #[error("node perturbation failed at vertex {vertex} after {attempts} redraws")]
    PerturbationFailed { vertex: usize, attempts: usize },

    #[error("gmsh: unsupported element type {0}")]
    UnsupportedElement(usize),

    #[error("gmsh: malformed file: {0}")]
    MalformedGmsh(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error("unsupported quadrature order {0}")]
    UnsupportedOrder(usize),

    #[error("unsupported adjacency class with {0} shared vertices")]
    UnsupportedAdjacency(usize),

    #[error("matrix is not positive definite (pivot {pivot} at row {row})")]
    NotPositiveDefinite { row: usize, pivot: f64 },

    #[error("singular mass matrix: space has no degrees of freedom")]
    EmptySpace,

    #[error("spaces live on different meshes")]
    MeshMismatch,

    #[error("coincident points in kernel evaluation")]
    CoincidentPoints,

    #[error("triangles are not coplanar (distance {0:e})")]
    NotCoplanar(f64),

    #[error("mortar patch pairing failed: {0}")]
    PatchPairing(String),

    #[error("advancing front left uncovered area {uncovered:e} on plane {plane}")]
    FrontStalled { plane: usize, uncovered: f64 },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("unknown formulation {0:?}")]
    UnknownFormulation(String),

    #[error("incident point source lies on the surface")]
    SourceOnSurface,

    #[error("every evaluation point is masked")]
    AllMasked,

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}
