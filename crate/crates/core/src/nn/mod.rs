//! Small dense neural-network toolkit: parameters, autodiff, optimizers.

pub mod ctc;
pub mod gradcheck;
pub mod graph;
pub mod optim;
pub mod params;

pub use graph::{Graph, Var};
pub use optim::{Adadelta, AdadeltaConfig, Adam, AdamConfig, LrSchedule};
pub use params::{Grads, Mat, ParamId, ParamSet};
pub use gradcheck::{check_gradients, GradCheckReport};
