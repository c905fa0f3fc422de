//! Simulation core for a two-instrument laparoscopic cholecystectomy task:
//! trocar kinematics, a position-based gallbladder model, collision and
//! visibility queries, and the multi-agent environment built on them.

pub mod collision;
pub mod digest;
pub mod env;
pub mod error;
pub mod geometry;
pub mod kinematics;
pub mod occlusion;
pub mod render;
pub mod scene;
pub mod softbody;

pub use error::SimError;
