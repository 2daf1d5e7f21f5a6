//! Backbones, stage partitions, branch heads and attention fusion.

pub mod attention;
pub mod backbone;
pub mod checkpoint;
pub mod method;
pub mod model;
pub mod partition;

pub use attention::{
    attention_fuse_hard, attention_fuse_soft_perclass, attention_fuse_soft_scalar, AttentionMode, AttentionModule,
};
pub use backbone::BackboneSpec;
pub use checkpoint::{checkpoint_bytes, from_checkpoint_bytes, load_checkpoint, save_checkpoint};
pub use method::{initial_weights, resolve_method_config, Method, MethodConfig};
pub use model::{
    build_deep_backbone, build_vgg16_backbone, AttentionInit, AttentionSpec, BranchHead, InterflowModel, ModelOutput,
    ModelSpec,
};
pub use partition::{deep_partition, even_partition, stage_partition, StagePartition};
