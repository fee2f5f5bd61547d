//! Point clouds, synthetic scenes, blocks, class splits, and support sets.

pub mod block;
pub mod cloud;
pub mod registry;
pub mod support;
pub mod synth;

pub use block::{partition_blocks, sample_block, sample_scene, SampledBlock};
pub use cloud::{load_point_cloud, save_point_cloud, PointCloud};
pub use registry::{split_classes, ClassRegistry};
pub use support::{build_support_set, SupportParams, SupportSet};
pub use synth::{generate_synthetic_scene, SceneSpec};
