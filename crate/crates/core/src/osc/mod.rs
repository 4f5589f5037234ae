//! OSC 1.0 over UDP: codec, the engine's address space and the endpoint.

pub mod address;
pub mod codec;
pub mod endpoint;

pub use address::{AddressError, ClientEvent, Notification};
pub use codec::{decode_message, decode_packet, encode_bundle, encode_message, DecodeError, EncodeError, OscArg, OscMessage};
pub use endpoint::{run_endpoint, Endpoint, EndpointError, Notifier, DEFAULT_LISTEN_PORT, DEFAULT_NOTIFY_PORT};
