//! Numerical kernels: tape-based forward/backward ops, pure reference
//! kernels, the Adam optimizer, and the gradient-checking harness.
//! Double precision throughout.

pub mod grad_check;
pub mod ops;
pub mod params;
pub mod tape;

pub use grad_check::grad_check;
pub use params::{ParamStore, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use tape::{GradStore, Matrix, NodeId, Tape};
