//! Point clouds, ASCII I/O, block partitioning and synthetic scenes.

mod blocks;
mod cloud;
mod io;
mod synth;

pub use blocks::{
    normalize_block, partition_blocks, sample_block, Block, Normalization, DEFAULT_MIN_COUNT, DEFAULT_N_TARGET,
};
pub use cloud::{ClassMap, PointCloud};
pub use io::{
    parse_points, parse_points_str, points_to_string, predictions_to_string, read_predictions, write_points,
    write_predictions, Column, ColumnSchema,
};
pub use synth::{synth_scene, Primitive, SynthSpec};
