//! Galerkin boundary element solver for acoustic Helmholtz transmission
//! problems on independently generated (nonconforming) triangular surface
//! meshes.
//!
//! The interior and exterior boundary integral operators live on their own
//! meshes and are coupled through sparse mortar matrices computed with an
//! advancing-front intersection algorithm. All nine single-trace,
//! multiple-traces and high-contrast formulations are available, together
//! with opposite-order preconditioning of the hypersingular operator for
//! screen problems.

pub mod dense;
pub mod error;
pub mod formulations;
pub mod gmsh;
pub mod mesh;
pub mod mortar;
pub mod operators;
pub mod postprocess;
pub mod quadrature;
pub mod screen;
pub mod solver;
pub mod space;
pub mod sparse;

pub use error::{Error, Result};

/// Complex scalar used throughout the solver.
pub type C64 = num_complex::Complex64;

/// Three-dimensional point or direction.
pub type Vec3 = nalgebra::Vector3<f64>;
