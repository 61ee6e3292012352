//! Deterministic backend over label-map scenes.
//!
//! Pixel features are one-hot basis vectors indexed by `label % channels`, so
//! same-label cells have dot product exactly 1 and distinct labels (below the
//! channel count) are exactly orthogonal. Decoding a prompt returns the full
//! mask of the label under it.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::grid::{BinaryMask, BoundingBox, PointPrompt, PromptKind};

use super::{
    ImageEmbedding, ImagePayload, MaskOrigin, MaskRecord, PointDecodeOutcome,
    SegmentationBackend, SourceImage,
};

#[derive(Debug, Clone)]
pub struct MockBackend {
    channels: usize,
}

impl Default for MockBackend {
    fn default() -> Self {
        Self { channels: 16 }
    }
}

impl MockBackend {
    pub fn new(channels: usize) -> Self {
        assert!(channels > 0, "mock backend needs at least one channel");
        Self { channels }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    fn labels<'a>(image: &'a SourceImage) -> Result<&'a [u16]> {
        match &image.payload {
            ImagePayload::Labels(l) => Ok(l),
            ImagePayload::Rgb8(_) => Err(Error::Backend(
                "mock backend requires a label-map payload".into(),
            )),
        }
    }

    fn label_mask(image: &SourceImage, labels: &[u16], label: u16) -> BinaryMask {
        let mut mask = BinaryMask::empty(image.height, image.width);
        for (idx, &l) in labels.iter().enumerate() {
            if l == label {
                mask.set(idx / image.width, idx % image.width, true);
            }
        }
        mask
    }
}

impl SegmentationBackend for MockBackend {
    fn encode(&self, image: &SourceImage) -> Result<ImageEmbedding> {
        let labels = Self::labels(image)?;
        let cells = image.height * image.width;
        let mut values = vec![0.0f32; self.channels * cells];
        for (idx, &label) in labels.iter().enumerate() {
            let c = label as usize % self.channels;
            values[c * cells + idx] = 1.0;
        }
        ImageEmbedding::new(
            self.channels,
            image.height,
            image.width,
            values,
            image.height,
            image.width,
        )
    }

    fn decode_box(
        &self,
        _embedding: &ImageEmbedding,
        image: &SourceImage,
        prompt: &BoundingBox,
    ) -> Result<MaskRecord> {
        let labels = Self::labels(image)?;
        if prompt.x2 as usize >= image.width || prompt.y2 as usize >= image.height {
            return Err(Error::Backend(format!(
                "box ({},{})-({},{}) exceeds {}x{} image",
                prompt.x1, prompt.y1, prompt.x2, prompt.y2, image.height, image.width
            )));
        }
        // Majority nonzero label inside the box; ties go to the smaller label.
        let mut votes: HashMap<u16, usize> = HashMap::new();
        for y in prompt.y1 as usize..=prompt.y2 as usize {
            for x in prompt.x1 as usize..=prompt.x2 as usize {
                let l = labels[y * image.width + x];
                if l != 0 {
                    *votes.entry(l).or_insert(0) += 1;
                }
            }
        }
        let winner = votes
            .into_iter()
            .max_by(|a, b| a.1.cmp(&b.1).then(b.0.cmp(&a.0)))
            .map(|(l, _)| l)
            .ok_or_else(|| {
                Error::EmptyExemplar(format!(
                    "box ({},{})-({},{}) covers only background",
                    prompt.x1, prompt.y1, prompt.x2, prompt.y2
                ))
            })?;
        Ok(MaskRecord {
            mask: Self::label_mask(image, labels, winner),
            origin: MaskOrigin::Exemplar,
            round: 0,
            score: Some(1.0),
        })
    }

    fn decode_points(
        &self,
        _embedding: &ImageEmbedding,
        image: &SourceImage,
        points: &[PointPrompt],
    ) -> Result<PointDecodeOutcome> {
        let labels = Self::labels(image)?;
        let mut cache: HashMap<u16, BinaryMask> = HashMap::new();
        let mut outcome = PointDecodeOutcome::default();
        for p in points {
            if p.x as usize >= image.width || p.y as usize >= image.height {
                return Err(Error::Backend(format!(
                    "point ({},{}) exceeds {}x{} image",
                    p.x, p.y, image.height, image.width
                )));
            }
            let label = labels[p.y as usize * image.width + p.x as usize];
            if label == 0 {
                outcome.dropped += 1;
                continue;
            }
            let mask = cache
                .entry(label)
                .or_insert_with(|| Self::label_mask(image, labels, label))
                .clone();
            outcome.records.push(MaskRecord {
                mask,
                origin: match p.kind {
                    PromptKind::Matrix => MaskOrigin::Matrix,
                    PromptKind::Residual => MaskOrigin::Residual,
                },
                round: 0,
                score: Some(1.0),
            });
        }
        Ok(outcome)
    }
}
