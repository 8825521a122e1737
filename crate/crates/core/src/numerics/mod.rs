//! Dense kernels, reverse-mode tape, linear solvers and the seeded RNG.

mod linalg;
mod matrix;
mod rng;
mod tape;

pub use linalg::{cholesky_solve, finite_difference_jacobian, symmetric_eigenvalues, CholeskySolution, DEFAULT_RIDGE};
pub use matrix::{add, dot, max_abs_diff, norm2, scaled, sub, Matrix};
pub use rng::Rng;
pub use tape::{Gradients, Tape, Var};
