//! Dense reverse-mode numerics with sparse message-passing products.

mod gradcheck;
mod optim;
mod params;
mod sparse;
mod tape;

pub use gradcheck::{grad_check, GradCheckReport};
pub use optim::Adam;
pub(crate) use params::join;
pub use params::{collect_grads, Binder, Checkpoint, Linear, LinearVars, Module, ParamEntry};
pub use sparse::SparseMatrix;
pub use tape::{sigmoid, softmax_rows, CustomOp, Gradients, Matrix, Tape, Var};
