//! Training-free, class-agnostic object counting.
//!
//! Given a query image and a few exemplar bounding boxes, the pipeline builds
//! context-aware similarity maps over a segmentation backend's feature grid,
//! turns them into matrix and residual point prompts, and iterates until the
//! mask stack stops producing novel bounding boxes. The count is the size of
//! the deduplicated mask stack.
//!
//! Entry point: [`counter::iterate_count`] with a [`backend::SegmentationBackend`].

pub mod backend;
pub mod counter;
pub mod error;
pub mod eval;
pub mod grid;
pub mod similarity;
pub mod synth;

pub use backend::{ImageEmbedding, MaskRecord, SegmentationBackend, SourceImage};
pub use counter::{iterate_count, CountResult, CountingConfig};
pub use error::{Error, Result};
pub use grid::{BinaryMask, BoundingBox, PointPrompt, RealGrid};
