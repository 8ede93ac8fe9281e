//! Dense linear algebra and reverse-mode differentiation.

mod gradcheck;
mod matrix;
mod optim;
mod tape;

pub use gradcheck::grad_check;
pub use matrix::{gemm, Matrix};
pub use optim::{Adam, AdamConfig};
pub use tape::{bce_sum, sigmoid, AttentionSpec, Tape, Var, PROB_CLAMP};
