//! Dense batched real arithmetic with reverse-mode differentiation.

mod dual;
mod matrix;
mod params;
mod rng;
mod tape;

pub use dual::Dual;
pub use matrix::Matrix;
pub use params::{ParamId, ParamStore};
pub use rng::{Rng, Stream, StreamRng};
pub use tape::{Gradients, Tape, Var, VjpRule};
