//! Repair of fractured 3D vessel segmentations.
//!
//! The pipeline thins a binary segmentation to a skeleton, builds vessel
//! trees, scores candidate endpoint pairs by how well a canonical cubic
//! connector continues both vessel ends (touching fit degree), orders the
//! surviving pairs by the area of a minimal surface spanned by the two
//! connectors, and bridges the chosen pairs with fast-marching geodesics
//! filled to vessel radius.

pub mod curve;
pub mod error;
pub mod geodesic;
pub mod labeling;
pub mod metrics;
pub mod morphology;
pub mod nrrd;
pub mod pipeline;
pub mod skeleton;
pub mod surface;
pub mod synth;
pub mod volume;

pub use error::{Error, Result};
pub use volume::{DType, Dims, Spacing, Volume3D, VolumeData};
