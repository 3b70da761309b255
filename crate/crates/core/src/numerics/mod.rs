//! Complex dense linear algebra and a small reverse-mode differentiation engine.

pub mod cmat;
pub mod gradcheck;
pub mod tape;

pub use cmat::{cholesky, gevd_principal, herm_eig, solve_hpd, CMat, PrincipalGevd};
pub use tape::{Backward, Gradients, Tape, Tensor, Var};
