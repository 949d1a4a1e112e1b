//! Hash-grid radiance fields for circular-field-of-view endoscopic video:
//! COLMAP ingest, masked ray sampling, training, rendering and evaluation.

pub mod checkpoint;
pub mod colmap;
pub mod dataset;
pub mod field;
pub mod geometry;
pub mod imageio;
pub mod metrics;
pub mod procedural;
pub mod rays;
pub mod render;
pub mod synthetic;
pub mod train;

pub use checkpoint::Checkpoint;
pub use colmap::{CameraModel, PoseSE3, SparseModel};
pub use dataset::{CircleMask, DatasetManifest, PrepConfig, Split};
pub use field::{FieldConfig, HashField};
pub use geometry::{Aabb, Vec3};
pub use imageio::ImageRgb;
pub use metrics::{EvalOptions, EvalReport};
pub use rays::TrainingSet;
pub use render::{OccupancyGrid, RadianceField, RenderSettings, SceneField};
pub use train::{TrainConfig, Trainer};
