//! Reverse-mode automatic differentiation over dense `f64` tensors.
//!
//! A [`Graph`] records operations as they run; [`Graph::grad_vars`] walks the
//! tape backwards. Backward rules are themselves recorded operations, so
//! gradients of gradients work (`create_graph = true`).

mod adam;
pub mod conv;
mod error;
mod graph;
mod params;
mod tensor;

pub use adam::Adam;
pub use error::{Error, Result};
pub use graph::{Graph, NoGradGuard, Var};
pub use params::{Bound, ParamId, ParamSet};
pub use tensor::{numel, Tensor};
