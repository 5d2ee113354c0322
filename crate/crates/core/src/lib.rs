//! Flood segmentation from SAR imagery: synthetic data generation, weak
//! labeling with occurrence-map improvement, a from-scratch segmentation
//! network with manual backpropagation, edge-weighted and distillation
//! losses, the two-stage cross-modal training procedure, and evaluation.

pub mod datagen;
pub mod error;
pub mod eval;
pub mod io;
pub mod labeling;
pub mod losses;
pub mod model;
pub mod num;
pub mod raster;
pub mod trainer;

pub use error::{CoreError, Result};
pub use num::{derive_seed, Scalar};

/// Default single-precision instantiations.
pub type Raster32 = raster::Raster<f32>;
pub type Tile32 = raster::Tile<f32>;
pub type OccurrenceMap32 = labeling::OccurrenceMap<f32>;
pub type WeightMap32 = labeling::WeightMap<f32>;
pub type SceneBundle32 = datagen::SceneBundle<f32>;
pub type SegNet32 = model::SegNet<f32>;
pub type Gradients32 = model::Gradients<f32>;
pub type LossOutput32 = losses::LossOutput<f32>;
pub type LabeledDataset32 = trainer::LabeledDataset<f32>;
pub type DistillDataset32 = trainer::DistillDataset<f32>;
pub type TrainOutcome32 = trainer::TrainOutcome<f32>;
