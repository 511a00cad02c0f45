//! Quantization-aware training toolkit: trainable clipping activations
//! (PACT), statistics-aware weight binning (SAWB), and a small CPU training
//! harness for pre-activation ResNets.

pub mod cli;
pub mod error;
pub mod harness;
pub mod io;
pub mod ops;
pub mod pact;
pub mod rng;
pub mod sawb;
pub mod tensor;

pub use error::{QnnError, Result};
pub use rng::Rng;
pub use tensor::{Param, Tensor};
