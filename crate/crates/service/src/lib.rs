//! Operator-facing service for the manipulation stack: a versioned,
//! length-prefixed JSON protocol, single-controller sessions, change-driven
//! state publication, bandwidth accounting and a WebSocket bridge for
//! browser consoles.

pub mod bandwidth;
pub mod bridge;
pub mod nl;
pub mod protocol;
pub mod server;
pub mod state;

pub use bandwidth::{estimate_bandwidth, BandwidthLedger, Channel, ModeSpec};
pub use protocol::{Kind, Message, Payload, ProtocolError, PROTOCOL_VERSION};
pub use server::{Direction, Inbound, LogEntry, Outbound, Service, ServiceConfig};

/// JSON Schema (draft 2020-12) for message bodies.
pub const MESSAGE_SCHEMA: &str = include_str!("../schemas/message.schema.json");
