//! Dataset synthesis, caching, training, evaluation and table export.

pub mod cache;
pub mod config;
pub mod dataset;
pub mod evaluate;
pub mod generate;
pub mod overfit;
pub mod tables;
pub mod train;
pub mod wav;

pub use cache::{build_cache, Cache, CacheManifest, WindowRecord};
pub use config::{CacheConfig, Preset, ProjectConfig, RunConfig};
pub use dataset::{synthesize_dataset, Corpus, DatasetSpec, Performance};
pub use evaluate::{evaluate, Evaluation};
pub use generate::{generate, Generated};
pub use train::{train, train_on, Checkpoint, ModelKind, TrainingData};
