//! Dense tensors, a reverse-mode tape, Adam, and seeded random streams.

mod adam;
mod gradcheck;
mod graph;
mod params;
mod rng;
mod tensor;

pub use adam::{adam_step, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use gradcheck::{check_gradients, relative_error, GradCheckReport, FD_STEP};
pub use graph::{Graph, PairIndex, Segment, Var, LAYER_NORM_EPS};
pub use params::{Gradients, Param, ParamId, ParamStore};
pub use rng::derive_rng;
pub use tensor::Tensor;
