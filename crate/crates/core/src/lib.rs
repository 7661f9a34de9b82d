//! Symbolic regression with tiny operator-activated networks whose weights, input features
//! and operators are pruned dynamically during a single training run, then unrolled into
//! closed-form expressions.
//!
//! Numerics are generic over [`Scalar`] (f32 or f64); the `*64` aliases below fix f64,
//! which is what the trainer and CLI use.

pub mod array;
pub mod data;
pub mod diff;
pub mod eql;
pub mod error;
pub mod expr;
pub mod loss;
pub mod net;
pub mod scalar;
pub mod train;

pub use error::{Error, Result};
pub use scalar::Scalar;

pub type Array64 = array::Array<f64>;
pub type Tape64 = diff::Tape<f64>;
pub type Registry64 = diff::Registry<f64>;
pub type Network64 = net::Network<f64>;
pub type Expr64 = expr::Expr<f64>;
pub type Dataset64 = data::Dataset<f64>;

pub type Array32 = array::Array<f32>;
pub type Network32 = net::Network<f32>;
pub type Expr32 = expr::Expr<f32>;
