//! Real-time signal path: partitioned convolution, SH rotation, binaural
//! decoding, the anchor low-pass and the block renderer tying them together.

pub mod anchor;
pub mod block;
pub mod convolver;
pub mod decoder;
pub mod partition;
pub mod render;
pub mod rotation;

pub use anchor::{design_anchor_filter, AnchorFilter, AnchorFilterError, ANCHOR_CUTOFF_HZ};
pub use block::AudioBlock;
pub use convolver::{make_convolver, Convolver, ConvolverError};
pub use decoder::{binaural_decode, BinauralDecoder, DecoderError, DecoderStage};
pub use render::{
    render_offline, EngineState, OfflineRequest, PreparedIrs, RenderConfig, RenderError, Renderer,
    TrajectoryPoint,
};
pub use rotation::{apply_rotation, sh_rotation_matrix, Orientation, RotationError, ShRotationMatrix};
