//! Adaptive finite elements for steady, variably saturated groundwater flow
//! with seepage faces.
//!
//! The pressure head `u` solves `-div(k(u) grad(u + z)) = f` with van
//! Genuchten–Mualem conductivity `k`. On the potential seepage face either
//! `u = 0` (water leaves) or `u <= 0` with no flux. The nonlinearity is
//! handled by Picard iteration with an active-set update of the seepage
//! face; meshes are adapted by a dual-weighted residual estimator for a goal
//! functional such as the seepage outflow or the flux into a well.

pub mod constitutive;
pub mod driver;
pub mod estimator;
pub mod fem;
pub mod geometry;
pub mod io;
pub mod linalg;
pub mod mesh;
pub mod problem;
pub mod solver;

pub use constitutive::{LayeredMedium, SoilModel};
pub use driver::{adaptive_loop, reference_goal, AdaptiveConfig, CycleRecord};
pub use fem::{CoordMode, Discretization, SourceTerm};
pub use mesh::{Mesh, Point};
pub use problem::{benchmark, GoalSpec, ProblemConfig};
pub use solver::{picard_solve, SolverConfig};
