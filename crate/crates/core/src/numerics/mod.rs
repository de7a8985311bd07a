//! Dense matrices, a reverse-mode tape and seeded parameter storage.

mod gradcheck;
mod matrix;
mod params;
mod tape;

pub use gradcheck::finite_difference_check;
pub use matrix::{Lu, Matrix};
pub use params::{Param, ParamId, ParamStore};
pub use tape::{sigmoid, Tape, Var};
