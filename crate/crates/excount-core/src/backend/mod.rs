//! Segmentation backbone abstraction: image to embedding, prompts to masks.
//!
//! The counting pipeline never touches a concrete model; it talks to a
//! [`SegmentationBackend`]. The [`MockBackend`](mock::MockBackend) gives exact,
//! analyzable behavior on label-map scenes; the
//! [`EmbeddingFileBackend`](embedding_file::EmbeddingFileBackend) runs from
//! precomputed features; the ONNX adapter (feature `onnx`) drives real
//! encoder/decoder model files.

mod embedding_file;
mod io;
mod mock;
#[cfg(feature = "onnx")]
mod onnx;

pub use embedding_file::EmbeddingFileBackend;
pub use io::{
    load_label_map_png, read_embedding_file, save_label_map_png, write_embedding_file,
    write_grid_file,
};
pub use mock::MockBackend;
#[cfg(feature = "onnx")]
pub use onnx::{OnnxBackend, OnnxSidecar};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{BinaryMask, BoundingBox, PointPrompt};

/// Pixel payload of a query image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ImagePayload {
    /// Interleaved RGB, 3 bytes per pixel.
    Rgb8(Vec<u8>),
    /// Per-pixel object label, 0 = background.
    Labels(Vec<u16>),
}

/// A query image plus a stable identifier for reporting.
#[derive(Debug, Clone)]
pub struct SourceImage {
    pub height: usize,
    pub width: usize,
    pub payload: ImagePayload,
    pub id: String,
}

impl SourceImage {
    pub fn new(height: usize, width: usize, payload: ImagePayload, id: impl Into<String>) -> Result<Self> {
        let expected = height * width;
        let actual = match &payload {
            ImagePayload::Rgb8(b) => b.len() / 3,
            ImagePayload::Labels(l) => l.len(),
        };
        if actual != expected {
            return Err(Error::Shape(format!(
                "payload covers {actual} pixels, image is {height}x{width}"
            )));
        }
        Ok(Self { height, width, payload, id: id.into() })
    }

    pub fn from_labels(height: usize, width: usize, labels: Vec<u16>, id: impl Into<String>) -> Result<Self> {
        Self::new(height, width, ImagePayload::Labels(labels), id)
    }

    pub fn label_at(&self, y: usize, x: usize) -> Option<u16> {
        match &self.payload {
            ImagePayload::Labels(l) => Some(l[y * self.width + x]),
            ImagePayload::Rgb8(_) => None,
        }
    }
}

/// Per-cell feature grid produced by a backend encoder.
///
/// Layout is channel-major: `values[c * he * we + y * we + x]`.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageEmbedding {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub values: Vec<f32>,
    pub source_h: usize,
    pub source_w: usize,
}

impl ImageEmbedding {
    pub fn new(
        channels: usize,
        height: usize,
        width: usize,
        values: Vec<f32>,
        source_h: usize,
        source_w: usize,
    ) -> Result<Self> {
        if values.len() != channels * height * width {
            return Err(Error::Shape(format!(
                "embedding {channels}x{height}x{width} expects {} values, got {}",
                channels * height * width,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Shape("embedding contains non-finite values".into()));
        }
        if height > source_h || width > source_w {
            return Err(Error::Shape(
                "embedding grid larger than the source image".into(),
            ));
        }
        Ok(Self { channels, height, width, values, source_h, source_w })
    }

    pub fn at(&self, c: usize, y: usize, x: usize) -> f32 {
        self.values[c * self.height * self.width + y * self.width + x]
    }

    /// Feature vector of one spatial cell.
    pub fn feature(&self, y: usize, x: usize) -> Vec<f32> {
        (0..self.channels).map(|c| self.at(c, y, x)).collect()
    }

    /// Map an embedding cell to the source pixel under its center.
    pub fn cell_to_source(&self, cy: usize, cx: usize) -> (u32, u32) {
        let sy = self.source_h as f64 / self.height as f64;
        let sx = self.source_w as f64 / self.width as f64;
        let y = (((cy as f64 + 0.5) * sy).floor() as usize).min(self.source_h - 1);
        let x = (((cx as f64 + 0.5) * sx).floor() as usize).min(self.source_w - 1);
        (x as u32, y as u32)
    }
}

/// Provenance of a decoded mask.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MaskOrigin {
    Exemplar,
    Matrix,
    Residual,
}

/// One decoded object mask at source-image resolution.
#[derive(Debug, Clone)]
pub struct MaskRecord {
    pub mask: BinaryMask,
    pub origin: MaskOrigin,
    pub round: u32,
    pub score: Option<f64>,
}

/// Result of decoding a batch of point prompts.
#[derive(Debug, Clone, Default)]
pub struct PointDecodeOutcome {
    pub records: Vec<MaskRecord>,
    /// Prompts that landed on background and produced no mask.
    pub dropped: usize,
}

/// The abstract segmentation backbone.
pub trait SegmentationBackend: Sync {
    fn encode(&self, image: &SourceImage) -> Result<ImageEmbedding>;

    /// Segment the object selected by a box prompt.
    fn decode_box(
        &self,
        embedding: &ImageEmbedding,
        image: &SourceImage,
        prompt: &BoundingBox,
    ) -> Result<MaskRecord>;

    /// Segment one object per point prompt; background points are dropped.
    fn decode_points(
        &self,
        embedding: &ImageEmbedding,
        image: &SourceImage,
        points: &[PointPrompt],
    ) -> Result<PointDecodeOutcome>;
}
