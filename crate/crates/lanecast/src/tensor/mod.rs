//! Minimal dense-array numeric core with reverse-mode automatic
//! differentiation: just enough machinery for the prediction model.
//!
//! Everything is 64-bit and single-threaded; the same seed always yields the
//! same parameters and the same training run.

mod array;
mod optim;
mod store;
mod tape;

pub use array::Array;
pub use optim::{adam_step, AdamState};
pub use store::{Checkpoint, ParamId, ParamStore, StoreError};
pub use tape::{Gradients, Tape, Var};
