//! Constrained monotonic adaptive response modeling.
//!
//! A small, deterministic stack for incentive-sensitivity modeling:
//! a reverse-mode differentiation engine (`diffcore`), the convex/concave/
//! saturated activation algebra and four-parameter response head
//! (`activations`), monotone-by-construction network layers (`monolayer`),
//! spatio-temporal conditioning modules (`stmodules`), a Lagrangian-dual
//! budget allocator (`allocator`), a synthetic marketing simulator with
//! evaluation metrics (`simkit`), and the training loop (`trainer`).

pub mod activations;
pub mod allocator;
pub mod diffcore;
pub mod error;
pub mod models;
pub mod monolayer;
pub mod simkit;
pub mod stmodules;
pub mod trainer;

pub use error::{Error, Result};
