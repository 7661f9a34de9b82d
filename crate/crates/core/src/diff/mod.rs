//! Reverse-mode automatic differentiation over dense arrays.
//!
//! A [`Registry`] holds named elementwise primitives with their derivative rules. Primitives
//! may carry a surrogate derivative (the step mask uses a sigmoid derivative); those are
//! flagged so gradient checks can exclude them.

mod gradcheck;
mod registry;
mod tape;

pub use gradcheck::{grad_check, GradCheckReport};
pub use registry::{step, step_surrogate, Kernel, Primitive, PrimitiveHandle, Registry, STEP_KAPPA};
pub use tape::{Bindings, Gradients, NodeId, SurrogateMode, Tape, VarId, VarKind};
