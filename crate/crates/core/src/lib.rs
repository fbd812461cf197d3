//! Linear polar compression for hidden Markov sources over prime fields, and
//! the matching codes for additive Markov channels.
//!
//! The pipeline is: build or load a [`hmm::HiddenMarkovSource`], run
//! [`preprocess::polar_preprocess`] to pick the per-column selection sets,
//! then [`codec::compress`] / [`codec::decompress`]. [`channel`] turns the
//! same sets into a linear channel code via its nullspace.

pub mod channel;
pub mod codec;
pub mod field;
pub mod hmm;
pub mod kernel;
pub mod preprocess;
pub mod util;

pub use field::{FieldError, FieldMatrix, FieldModulus, FieldVector, Symbol};
pub use hmm::{HiddenMarkovSource, HmmError};
pub use kernel::{KernelError, MixingKernel, TensorTransform};
