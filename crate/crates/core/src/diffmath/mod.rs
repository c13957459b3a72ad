//! Reverse-mode differentiation over the small, fixed operation set the
//! sequence-to-set model needs.
//!
//! Values live in [`Array`]s, trainable state in a [`ParamSet`], and a
//! forward pass is recorded on a [`Tape`] that borrows the parameters
//! immutably. [`Tape::backward`] replays the record in reverse and returns
//! per-parameter [`Gradients`]. Everything is generic over [`Real`] so that
//! training runs in `f32` while [`grad_check`] verifies in `f64`.

mod array;
mod gradcheck;
mod params;
mod tape;

pub use array::{softmax, Array, Real};
pub use gradcheck::{grad_check, GradCheck};
pub use params::{Gradients, ParamId, ParamSet};
pub use tape::{LstmCellParams, NodeId, Tape, TapeGrads};
