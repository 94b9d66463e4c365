//! Network building blocks.

mod conv;
mod decoder;
mod encoder;
mod fusion;

pub use conv::{adconv_forward, dgconv_forward, DGConvLayer};
pub use decoder::{multilevel_decode, upsample_interpolate, DecoderStack};
pub use encoder::{encoder_extract, EncoderLayer};
pub use fusion::{dagfusion_forward, Aggregation, DAGFusion, DAGFusionConfig};
