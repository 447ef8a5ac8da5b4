//! Heat-kernel Duhamel operators, pointwise solution bounds, and a
//! verification harness for semilinear parabolic problems
//!
//! ```text
//!     du/dt - Lap(u) + V u^q = f    on  Omega x (0, T]
//! ```
//!
//! on model geometries (real line, intervals, boxes, radial Euclidean and
//! hyperbolic-3 shells). The crate evaluates Dirichlet heat kernels in
//! closed/series form, computes the Duhamel operators `S[g]` and
//! `R[f; u0]` by space-time quadrature, solves the PDE by finite
//! differences, evaluates the pointwise upper/lower bound families and
//! their side conditions, and verifies every inequality against numerical
//! solutions under a fitted discretization-error budget.

pub mod bounds;
pub mod duhamel;
pub mod error;
pub mod expr;
pub mod field;
pub mod grid;
pub mod harness;
pub mod kernel;
pub mod phi;
pub mod scenario;
pub mod solver;

pub use error::{Error, Result};
pub use field::Field;
pub use grid::{c1, Coord, Domain, Face, Grid, Quadrature};
pub use kernel::Kernel;
pub use phi::PhiFamily;
