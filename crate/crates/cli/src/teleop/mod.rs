//! Real-time teleoperation over WebSocket.

pub mod server;
pub mod session;
pub mod wire;

pub use server::{serve, ServeOptions, WS_PATH};
pub use session::{SessionOptions, TeleopSession};
pub use wire::{parse_inbound, StateMsg, TeleopMessage};
