//! Reverse-mode automatic differentiation.

mod gradcheck;
mod shape;
mod tape;

pub use gradcheck::{finite_diff_grad_check, relative_error};
pub(crate) use gradcheck::check_step;
pub use tape::{Tape, Var};

#[cfg(test)]
mod tests;
