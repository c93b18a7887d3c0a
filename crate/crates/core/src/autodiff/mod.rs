//! Reverse-mode automatic differentiation over dense row-major tensors.
//!
//! Operations are executed eagerly on a [`Graph`]. While the graph is
//! recording, every op whose inputs need gradients pushes a node holding its
//! inputs, output and backward closure; [`Graph::backward`] then walks the
//! nodes in reverse creation order. A non-recording graph keeps nothing, so
//! intermediate activations are freed as soon as their [`Var`] is dropped.

mod conv;
mod gradcheck;
mod graph;
mod linalg;
mod misc;
mod norm;
mod params;
mod pool;
mod real;
mod tensor;

pub use conv::Padding;
pub use gradcheck::{grad_check, grad_check_at, primitive_suite, relative_error, GradCheck};
pub use graph::{Gradients, Graph, Var};
pub use misc::KL_CLAMP;
pub use norm::BatchStats;
pub use norm::{BN_EPS, NORM_EPS};
pub use params::{ParamId, ParamStore, Parameter};
pub use pool::PoolKind;
pub use real::Real;
pub use tensor::Tensor;
