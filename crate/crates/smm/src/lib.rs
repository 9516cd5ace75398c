//! Score-mismatching generative modeling at desk scale.
//!
//! A self-contained laboratory for one-step score-based generation: a small
//! reverse-mode autodiff engine, diffusion noise schedules and corruptions,
//! score/generator networks, the adversarial training loop, numerical
//! oracles for the method's optimality claims, and two-sample metrics.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod error;
pub mod gradcheck;
pub mod metrics;
pub mod nets;
pub mod optim;
pub mod oracle;
pub mod render;
pub mod rng;
pub mod schedule;
pub mod tape;
pub mod tensor;
pub mod trainer;

pub use error::{Result, SmmError};
pub use tensor::Tensor;
