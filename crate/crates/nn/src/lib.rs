//! Minimal dense-tensor and reverse-mode autodiff substrate.
//!
//! Everything runs in `f64` on one thread per tape. Reductions use a fixed
//! summation order, so a forward/backward pass is a pure function of its
//! inputs down to the bit.

mod error;
pub mod gradcheck;
pub mod layers;
pub mod optim;
pub mod params;
pub mod rng;
pub mod tape;
pub mod tensor;
pub mod weights;

pub use error::{NnError, Result};
pub use layers::{Encoder, EncoderConfig, EncoderLayer, LayerNorm, Linear, MultiHeadAttention};
pub use optim::{Adam, AdamConfig};
pub use params::{ParamId, ParamStore};
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;
pub use weights::WeightsFile;
