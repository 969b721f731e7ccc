//! Synthetic maritime dataset generation: masked sea-background editing,
//! sea-state labelling, object-preservation filtering, and the review and
//! evaluation tooling around it.

pub mod annotations;
pub mod config;
pub mod error;
pub mod eval;
pub mod generation;
pub mod geometry;
pub mod ledger;
pub mod manifest;
pub mod mask;
pub mod model;
pub mod nn;
pub mod pipeline;
pub mod preservation;
pub mod review;
pub mod sea_state;
pub mod stages;
pub mod texture;
pub mod train;

pub use error::{Error, Result};
pub use geometry::BoundingBox;
pub use model::{EditedImage, SeaState, SourceImage};
