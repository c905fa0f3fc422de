//! Minimal reverse-mode differentiation and the recurrent policy-value
//! network used by both agents.

pub mod checkpoint;
pub mod dist;
pub mod error;
pub mod gradcheck;
pub mod graph;
pub mod net;
pub mod optim;
pub mod params;
pub mod real;

pub use error::NnError;
pub use graph::{Graph, Var};
pub use net::{Architecture, PolicyValueNet, RecurrentState};
pub use params::{Gradients, ParamId, ParamSet};
pub use real::Real;
