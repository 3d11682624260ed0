//! Reverse-mode differentiation and finite-difference checking.

mod gradcheck;
mod tape;

pub use gradcheck::{gradcheck, relative_error, GradcheckOptions, GradcheckReport, ParamCheck};
pub use tape::{Tape, Var};
