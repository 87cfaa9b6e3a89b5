//! Procedural multi-view data: objects, rendering, samplers, augmentation
//! and the dataset file format.

pub mod augment;
pub mod dataset;
pub mod objects;
pub mod render;
pub mod sampler;

pub use augment::AugmentPolicy;
pub use dataset::{generate_dataset, Dataset, GenConfig, MultiViewSample, Split};
pub use sampler::{SamplerKind, ViewPair};
