//! Deterministic numeric substrate: dense tensors, the op set with backward
//! passes, seeded random streams and the finite-difference gradient oracle.

mod gradcheck;
pub mod ops;
mod rng;
mod tensor;

pub use gradcheck::{grad_check, grad_check_coords, grad_check_with, GradCheckReport};
pub use rng::Rng;
pub use tensor::Tensor;
