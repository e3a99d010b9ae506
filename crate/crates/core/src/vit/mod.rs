//! CLIP-style vision transformer: geometry, weights, forward pass with
//! activation taps, and the feature-detection trainer.

pub mod augment;
mod config;
pub mod model;
pub mod train;
mod weights;

pub use config::ViTConfig;
pub use model::{
    build_graph, embed_images, forward, forward_batch, patch_embed, pixel_tensor, ActivationRecord,
    BoundParams, ForwardResult, Graph, ImageEmbedding, NeuronId, Taps,
};
pub use train::{train, EpochLog, TrainConfig};
pub use weights::{load_weights, save_weights, ModelWeights, Param};
