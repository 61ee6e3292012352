//! Backend over precomputed embeddings, requiring no inference runtime.
//!
//! Encoding returns the stored feature grid. Decoding has no mask decoder to
//! call, so a prompt is resolved by region growing: the 4-connected set of
//! cells whose cosine similarity to the prompt cell's feature stays above a
//! threshold, upscaled back to source resolution.

use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{BinaryMask, BoundingBox, PointPrompt, PromptKind};

use super::io::read_embedding_file;
use super::{
    ImageEmbedding, MaskOrigin, MaskRecord, PointDecodeOutcome, SegmentationBackend, SourceImage,
};

#[derive(Debug, Clone)]
pub struct EmbeddingFileBackend {
    stored: super::io::StoredEmbedding,
    /// Cosine-similarity cutoff for region growing.
    sim_threshold: f64,
}

impl EmbeddingFileBackend {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(Self { stored: read_embedding_file(path)?, sim_threshold: 0.8 })
    }

    pub fn with_sim_threshold(mut self, t: f64) -> Self {
        self.sim_threshold = t;
        self
    }

    fn cosine(a: &[f32], b: &[f32]) -> f64 {
        let mut dot = 0.0f64;
        let mut na = 0.0f64;
        let mut nb = 0.0f64;
        for (&x, &y) in a.iter().zip(b) {
            dot += x as f64 * y as f64;
            na += x as f64 * x as f64;
            nb += y as f64 * y as f64;
        }
        if na == 0.0 || nb == 0.0 {
            0.0
        } else {
            dot / (na.sqrt() * nb.sqrt())
        }
    }

    /// Grow the 4-connected region around a seed cell whose features match it.
    fn grow_region(&self, embedding: &ImageEmbedding, seed_y: usize, seed_x: usize) -> BinaryMask {
        let (he, we) = (embedding.height, embedding.width);
        let seed = embedding.feature(seed_y, seed_x);
        let mut mask = BinaryMask::empty(he, we);
        if seed.iter().all(|&v| v == 0.0) {
            return mask;
        }
        let mut stack = vec![(seed_y, seed_x)];
        mask.set(seed_y, seed_x, true);
        while let Some((y, x)) = stack.pop() {
            let visit = |ny: usize, nx: usize, mask: &mut BinaryMask, stack: &mut Vec<(usize, usize)>| {
                if !mask.get(ny, nx)
                    && Self::cosine(&embedding.feature(ny, nx), &seed) >= self.sim_threshold
                {
                    mask.set(ny, nx, true);
                    stack.push((ny, nx));
                }
            };
            if y > 0 {
                visit(y - 1, x, &mut mask, &mut stack);
            }
            if y + 1 < he {
                visit(y + 1, x, &mut mask, &mut stack);
            }
            if x > 0 {
                visit(y, x - 1, &mut mask, &mut stack);
            }
            if x + 1 < we {
                visit(y, x + 1, &mut mask, &mut stack);
            }
        }
        mask
    }

    /// Nearest-neighbor upscale from the embedding grid to source resolution.
    fn upscale(mask: &BinaryMask, embedding: &ImageEmbedding) -> BinaryMask {
        let (sh, sw) = (embedding.source_h, embedding.source_w);
        if mask.height() == sh && mask.width() == sw {
            return mask.clone();
        }
        let mut out = BinaryMask::empty(sh, sw);
        for y in 0..sh {
            let cy = (y * mask.height()) / sh;
            for x in 0..sw {
                let cx = (x * mask.width()) / sw;
                if mask.get(cy, cx) {
                    out.set(y, x, true);
                }
            }
        }
        out
    }

    fn source_to_cell(embedding: &ImageEmbedding, x: u32, y: u32) -> (usize, usize) {
        let cy = ((y as usize * embedding.height) / embedding.source_h).min(embedding.height - 1);
        let cx = ((x as usize * embedding.width) / embedding.source_w).min(embedding.width - 1);
        (cy, cx)
    }
}

impl SegmentationBackend for EmbeddingFileBackend {
    fn encode(&self, image: &SourceImage) -> Result<ImageEmbedding> {
        ImageEmbedding::new(
            self.stored.channels,
            self.stored.height,
            self.stored.width,
            self.stored.values.clone(),
            image.height,
            image.width,
        )
        .map_err(|e| Error::Backend(format!("stored embedding does not fit image: {e}")))
    }

    fn decode_box(
        &self,
        embedding: &ImageEmbedding,
        _image: &SourceImage,
        prompt: &BoundingBox,
    ) -> Result<MaskRecord> {
        // Seed from the strongest-feature cell inside the box.
        let (cy1, cx1) = Self::source_to_cell(embedding, prompt.x1, prompt.y1);
        let (cy2, cx2) = Self::source_to_cell(embedding, prompt.x2, prompt.y2);
        let mut best: Option<(f64, usize, usize)> = None;
        for y in cy1..=cy2 {
            for x in cx1..=cx2 {
                let norm: f64 = embedding
                    .feature(y, x)
                    .iter()
                    .map(|&v| v as f64 * v as f64)
                    .sum();
                if best.map_or(true, |(b, _, _)| norm > b) {
                    best = Some((norm, y, x));
                }
            }
        }
        let (norm, sy, sx) = best.unwrap();
        if norm == 0.0 {
            return Err(Error::EmptyExemplar("box covers only zero features".into()));
        }
        let region = self.grow_region(embedding, sy, sx);
        if region.is_empty() {
            return Err(Error::EmptyExemplar("region growing found no cells".into()));
        }
        Ok(MaskRecord {
            mask: Self::upscale(&region, embedding),
            origin: MaskOrigin::Exemplar,
            round: 0,
            score: None,
        })
    }

    fn decode_points(
        &self,
        embedding: &ImageEmbedding,
        _image: &SourceImage,
        points: &[PointPrompt],
    ) -> Result<PointDecodeOutcome> {
        let mut outcome = PointDecodeOutcome::default();
        for p in points {
            let (cy, cx) = Self::source_to_cell(embedding, p.x, p.y);
            let region = self.grow_region(embedding, cy, cx);
            if region.is_empty() {
                outcome.dropped += 1;
                continue;
            }
            outcome.records.push(MaskRecord {
                mask: Self::upscale(&region, embedding),
                origin: match p.kind {
                    PromptKind::Matrix => MaskOrigin::Matrix,
                    PromptKind::Residual => MaskOrigin::Residual,
                },
                round: 0,
                score: None,
            });
        }
        Ok(outcome)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::io::write_embedding_file;
    use tempfile::tempdir;

    /// 4x4 embedding with two orthogonal feature blobs and zero background.
    fn blob_backend(dir: &tempfile::TempDir) -> EmbeddingFileBackend {
        let (c, h, w) = (2usize, 4usize, 4usize);
        let mut values = vec![0.0f32; c * h * w];
        // channel 0 blob: rows 0-1, cols 0-1; channel 1 blob: rows 2-3, cols 2-3
        for y in 0..2 {
            for x in 0..2 {
                values[y * w + x] = 1.0;
                values[h * w + (y + 2) * w + (x + 2)] = 1.0;
            }
        }
        let path = dir.path().join("emb.bin");
        write_embedding_file(&path, c, h, w, &values).unwrap();
        EmbeddingFileBackend::load(&path).unwrap()
    }

    fn image(h: usize, w: usize) -> SourceImage {
        SourceImage::from_labels(h, w, vec![0; h * w], "img").unwrap()
    }

    #[test]
    fn encode_reports_stored_shape() {
        let dir = tempdir().unwrap();
        let backend = blob_backend(&dir);
        let img = image(8, 8);
        let emb = backend.encode(&img).unwrap();
        assert_eq!((emb.channels, emb.height, emb.width), (2, 4, 4));
        assert_eq!((emb.source_h, emb.source_w), (8, 8));
    }

    #[test]
    fn decode_box_grows_the_seeded_blob() {
        let dir = tempdir().unwrap();
        let backend = blob_backend(&dir);
        let img = image(4, 4);
        let emb = backend.encode(&img).unwrap();
        let rec = backend
            .decode_box(&emb, &img, &BoundingBox::new(0, 0, 1, 1).unwrap())
            .unwrap();
        assert_eq!(rec.mask.count_ones(), 4);
        assert!(rec.mask.get(0, 0) && rec.mask.get(1, 1));
        assert!(!rec.mask.get(2, 2));
    }

    #[test]
    fn decode_point_on_zero_feature_is_dropped() {
        let dir = tempdir().unwrap();
        let backend = blob_backend(&dir);
        let img = image(4, 4);
        let emb = backend.encode(&img).unwrap();
        let out = backend
            .decode_points(
                &emb,
                &img,
                &[PointPrompt { x: 0, y: 3, kind: PromptKind::Matrix }],
            )
            .unwrap();
        assert_eq!(out.records.len(), 0);
        assert_eq!(out.dropped, 1);
    }

    #[test]
    fn decode_point_upscales_to_source_resolution() {
        let dir = tempdir().unwrap();
        let backend = blob_backend(&dir);
        let img = image(8, 8);
        let emb = backend.encode(&img).unwrap();
        let out = backend
            .decode_points(
                &emb,
                &img,
                &[PointPrompt { x: 1, y: 1, kind: PromptKind::Matrix }],
            )
            .unwrap();
        assert_eq!(out.records.len(), 1);
        let mask = &out.records[0].mask;
        assert_eq!((mask.height(), mask.width()), (8, 8));
        assert_eq!(mask.count_ones(), 16);
    }
}
