//! Dense tensors with a reverse-mode gradient tape.

mod gradcheck;
pub mod kernels;
mod tape;
mod tensor;

pub use gradcheck::grad_check;
pub use tape::{Gradients, Tape, Var, NORM_EPS};
pub use tensor::{Scalar, Tensor};
