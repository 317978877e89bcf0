//! Reverse-mode automatic differentiation on a flat tape, plus the parameter
//! store, optimizers, and gradient checking used by every training loop in
//! the crate.

mod check;
mod optim;
mod params;
mod tape;
mod tensor;

pub use check::{grad_check_fn, GradCheckReport};
pub use optim::{Optimizer, OptimizerKind};
pub use params::{ParamEntry, ParamStore};
pub use tape::{NodeId, Tape};
pub use tensor::Tensor;

pub type GradMap = std::collections::BTreeMap<String, Tensor>;
