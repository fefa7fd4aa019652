//! Conservative finite-volume solver for epidemic compartment models whose
//! spatial movement is driven by nonlocal aggregation.
//!
//! Each compartment `u_ξ` evolves by
//!
//! ```text
//! ∂ₜu_ξ = ∇·(u_ξ ∇V_ξ) + εΔu_ξ + g_ξ(u),   V_ξ = Σ_η W_{ξη} ∗ u_η
//! ```
//!
//! on a bounded 1D or 2D box with zero density outside it. See
//! [`solver::Solver`] for the time integrator and [`equilibria`] for the
//! closed-form SIS steady states used to validate it.

pub mod diagnostics;
pub mod equilibria;
pub mod error;
pub mod grid;
pub mod kernels;
pub mod models;
pub mod solver;

pub use error::{Error, Result};
pub use grid::{build_grid, project_function, Field, Grid};
pub use kernels::{eval_gradient, Interaction, KernelMatrix, KernelSpec, Targets};
pub use models::{make_generic, make_sir, make_sis, GenericReaction, ModelSpec, ReactionKind};
pub use solver::{RkScheme, Solver, SolverConfig, State, TimeStep};
