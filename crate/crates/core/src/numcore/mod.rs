//! Minimal differentiable numeric core.
//!
//! Everything is `f64`. The graph supports exactly the operations the
//! losses and encoders in this crate are built from; it is not a general
//! autodiff engine.

mod gradcheck;
mod graph;
mod ops;
mod optim;
mod spatial;
mod tensor;

pub use gradcheck::{grad_check, GradCheckConfig, GradCheckReport};
pub use graph::{Gradients, Graph, Var};
pub use ops::{cosine_similarity, l1_distance, softmax};
pub use optim::{sgd_momentum_step, OptimState};
pub use spatial::SpatialMap;
pub use tensor::Tensor;

pub(crate) use tensor::hash_into;
