//! Head-tracked ambisonic binaural rendering and MUSHRA session runtime.

pub mod analysis;
pub mod arir;
pub mod bridge;
pub mod config;
pub mod dsp;
pub mod engine;
pub mod fixture;
pub mod osc;
pub mod replay;
pub mod router;
pub mod server;
pub mod session;
pub mod telemetry;
pub mod wav;
