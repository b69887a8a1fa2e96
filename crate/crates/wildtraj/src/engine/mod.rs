//! Minimal dense-tensor math with reverse-mode differentiation: exactly
//! the operator set the four sequence models need. Naive loops; desk-scale
//! shapes (batch <= 128, T <= 49, d <= 64) by design.

mod gradcheck;
mod tape;
mod tensor;

pub use gradcheck::{gradcheck, gradcheck_with_skip, GradCheckReport};
pub use tape::{PaddingMode, Tape, Var};
pub use tensor::{Real, Tensor};
