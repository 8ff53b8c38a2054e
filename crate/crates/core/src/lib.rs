//! Numerical study of a flow with a neutral periodic orbit: local passage
//! dynamics, a hybrid global system, heavy-tailed return times, limit laws of
//! flow Birkhoff sums and twisted transfer operators.
//!
//! The local computations are generic over the scalar type ([`Real`], `f32`
//! or `f64`); the global system and the statistics use `f64`.

pub mod checks;
pub mod error;
pub mod flow_sim;
pub mod io;
pub mod local_dynamics;
pub mod model;
pub mod ode;
pub mod operator;
pub mod quad;
pub mod scalar;
pub mod statistics;

pub use error::{Error, Result};
pub use scalar::Real;

pub type FlowParams64 = model::FlowParams<f64>;
pub type FlowParams32 = model::FlowParams<f32>;
pub type DerivedConstants64 = model::DerivedConstants<f64>;
pub type DerivedConstants32 = model::DerivedConstants<f32>;
pub type LocalSolver64 = local_dynamics::LocalSolver<f64>;
pub type LocalSolver32 = local_dynamics::LocalSolver<f32>;
pub type PassageTable64 = local_dynamics::PassageTable<f64>;
pub type Passage64 = local_dynamics::Passage<f64>;
pub type Passage32 = local_dynamics::Passage<f32>;
