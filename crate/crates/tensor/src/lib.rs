//! Dense row-major tensors with a define-by-run reverse-mode gradient tape.
//!
//! Values live on a [`Tape`]; every op records its output and a backward
//! closure. Long-lived state such as model weights lives in a
//! [`ParamStore`] and enters a forward pass through [`Tape::param`].

mod error;
pub mod gradcheck;
mod ops;
mod params;
mod real;
mod tape;
mod tensor;

pub use error::{Result, TensorError};
pub use ops::{ConvGeometry, NormMode, NormStats, ReduceOp, Unary};
pub use params::{ParamEntry, ParamId, ParamKind, ParamStore};
pub use real::{DType, Real};
pub use tape::{BackwardCtx, BackwardFn, Gradients, Tape, Var};
pub use tensor::{Fill, Tensor, BLOB_MAGIC};
