//! Bifurcation analysis for the discretized harvested logistic problem
//! `-u'' = a u - f(u) - c h` on `(0, 1)` with Dirichlet boundary values.

// Negated float comparisons reject NaN on purpose; banded kernels index
// several arrays per loop.
#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod continuation;
pub mod error;
pub mod grid;
pub mod lambda1;
pub mod linalg;
pub mod model;
pub mod solver;
pub mod spectrum;
pub mod verify;

pub use error::{Error, Result};
pub use grid::{Grid, GridFunction};
pub use model::{CompetitionTerm, HarvestTerm, Problem};
pub use solver::{newton_solve, Solution, SolverConfig};
pub use spectrum::SpectrumReport;
