//! Session service and command-line plumbing around the simulator,
//! trainer and evaluation harness.

pub mod cli;
pub mod pipeline;
pub mod server;
pub mod session;
pub mod settings;

pub use session::{ClientMessage, InputMessage, ServerMessage, Session, SessionConfig, StateFrame};
