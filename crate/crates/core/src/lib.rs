//! Finite-element kernels and solvers for quasilinear mixed boundary value
//! problems driven by the (p,q)-Laplacian, with executable comparison /
//! monotonicity / convergence checks and distributed optimal control on top.
//!
//! Modules:
//! - [`geometry`]: structured triangulations with the Γ1/Γ2/Γ3 boundary split
//! - [`forms`]: the discrete operators, load, residual, Jacobian and norms
//! - [`linalg`]: symmetric banded LDLᵀ
//! - [`solver`]: damped Newton with Picard fallback for both problems
//! - [`theorems`]: the property-check harness and α-sweep
//! - [`control`]: reduced-space optimal control and α-asymptotics
//! - [`manufactured`]: named configurations with closed-form solutions
//! - [`output`]: deterministic CSV/JSON emission

pub mod control;
pub mod error;
pub mod forms;
pub mod geometry;
pub mod linalg;
pub mod manufactured;
pub mod output;
pub mod solver;
pub mod theorems;

pub use error::{Error, Result};
pub use forms::{BoundaryLaw, Field, PdeParams, SourceData};
pub use geometry::{BoundaryLayout, DirichletSpec, GammaTag, Mesh, ProblemKind, Rect};
pub use solver::{InitialGuess, SolveOptions, SolveReport};
