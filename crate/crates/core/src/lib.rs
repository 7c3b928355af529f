//! Two-hand pose refinement engine.

pub mod collision;
pub mod config;
pub mod corpus;
pub mod diffusion;
mod error;
pub mod exec;
pub mod fusion;
pub mod hand;
pub mod metrics;
pub mod pipeline;
pub mod primitives;
pub mod render;
pub mod state;
pub mod synth;

pub use error::{CoreError, Result};
pub use exec::Execution;
