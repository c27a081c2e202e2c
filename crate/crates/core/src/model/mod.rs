//! Mini-VGG backbone with either the attention/bilinear head or a plain
//! pooled dense head.

mod attention;
mod network;
mod spec;

pub use attention::{bilinear_pool, channel_attention, spatial_attention};
pub use network::{argmax, forward, forward_on_tape, init_params, predict_proba, ForwardVars, Mode};
pub use spec::{Block, HeadKind, ModelSpec, ParamSlot, INPUT_CHANNELS, SPATIAL_KERNEL};
