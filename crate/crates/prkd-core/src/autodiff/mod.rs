//! Reverse-mode automatic differentiation over mixed real/complex tensors.
//!
//! The tape is eager: every operation computes its forward value on the spot
//! and records a backward closure. Gradients of complex nodes follow the
//! directional convention g = dL/d(Re z) + i * dL/d(Im z) (twice the conjugate
//! Wirtinger derivative), which is the quantity gradient descent needs for
//! real parameters and composes through the chain rules implemented here.
//! Every rule is validated against central finite differences in the tests.

mod complex_ops;
mod gamma;
mod nn;
mod par;
mod real_ops;
mod tape;

pub use tape::{GradStore, Tape, Value, Var};
