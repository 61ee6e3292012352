//! Context-aware similarity maps: per-exemplar foreground similarity plus one
//! background similarity map derived from the low-similarity region.

use crate::backend::ImageEmbedding;
use crate::error::{Error, Result};
use crate::grid::{BinaryMask, RealGrid};

/// An embedding with everything outside an exemplar mask zeroed out.
#[derive(Debug, Clone)]
pub struct MaskedEmbedding {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub values: Vec<f32>,
    /// Number of spatial cells the mask kept.
    pub nonzero_cells: usize,
}

impl MaskedEmbedding {
    /// Mean feature vector over the kept cells.
    pub fn mean_feature(&self) -> Vec<f64> {
        let cells = self.height * self.width;
        let mut mean = vec![0.0f64; self.channels];
        for c in 0..self.channels {
            let base = c * cells;
            let mut sum = 0.0f64;
            for idx in 0..cells {
                sum += self.values[base + idx] as f64;
            }
            mean[c] = sum / self.nonzero_cells as f64;
        }
        mean
    }
}

/// Everything the counting module needs from the similarity stage.
#[derive(Debug, Clone)]
pub struct SimilaritySet {
    /// Normalized per-exemplar foreground similarity maps.
    pub fsims: Vec<RealGrid>,
    pub bmask: BinaryMask,
    /// Normalized background similarity map; all zeros when no background.
    pub bsim: RealGrid,
    /// Set when the background mask came out empty and `bsim` is a zero grid.
    pub background_empty: bool,
}

impl SimilaritySet {
    pub fn exemplar_count(&self) -> usize {
        self.fsims.len()
    }
}

/// Zero the embedding outside the mask (cellwise product with the mask bit).
pub fn masked_embedding(embedding: &ImageEmbedding, fmask: &BinaryMask) -> Result<MaskedEmbedding> {
    if fmask.height() != embedding.height || fmask.width() != embedding.width {
        return Err(Error::Shape(format!(
            "mask {}x{} does not match embedding grid {}x{}",
            fmask.height(),
            fmask.width(),
            embedding.height,
            embedding.width
        )));
    }
    let nonzero_cells = fmask.count_ones();
    if nonzero_cells == 0 {
        return Err(Error::EmptyExemplar("exemplar mask has no set bits".into()));
    }
    let cells = embedding.height * embedding.width;
    let mut values = vec![0.0f32; embedding.channels * cells];
    for c in 0..embedding.channels {
        let base = c * cells;
        for idx in 0..cells {
            if fmask.bits()[idx] == 1 {
                values[base + idx] = embedding.values[base + idx];
            }
        }
    }
    Ok(MaskedEmbedding {
        channels: embedding.channels,
        height: embedding.height,
        width: embedding.width,
        values,
        nonzero_cells,
    })
}

/// Raw foreground similarity: at every cell, the dot product of that cell's
/// feature with the mean masked feature vector.
pub fn foreground_similarity_raw(embedding: &ImageEmbedding, masked: &MaskedEmbedding) -> RealGrid {
    let mean = masked.mean_feature();
    let cells = embedding.height * embedding.width;
    let mut values = vec![0.0f64; cells];
    for c in 0..embedding.channels {
        let base = c * cells;
        let m = mean[c];
        if m == 0.0 {
            continue;
        }
        for idx in 0..cells {
            values[idx] += embedding.values[base + idx] as f64 * m;
        }
    }
    RealGrid::new(embedding.height, embedding.width, values).expect("finite by construction")
}

/// Normalized foreground similarity map for one exemplar.
pub fn foreground_similarity(embedding: &ImageEmbedding, masked: &MaskedEmbedding) -> RealGrid {
    foreground_similarity_raw(embedding, masked).normalized()
}

/// Cellwise arithmetic mean over equally shaped maps.
pub fn mean_similarity(fsims: &[RealGrid]) -> Result<RealGrid> {
    let first = fsims
        .first()
        .ok_or_else(|| Error::Config("mean over zero similarity maps".into()))?;
    let mut acc = vec![0.0f64; first.values().len()];
    for g in fsims {
        if !g.same_shape(first) {
            return Err(Error::Shape("similarity maps differ in shape".into()));
        }
        for (a, &v) in acc.iter_mut().zip(g.values()) {
            *a += v;
        }
    }
    let n = fsims.len() as f64;
    for a in &mut acc {
        *a /= n;
    }
    RealGrid::new(first.height(), first.width(), acc)
}

/// Cells with mean exemplar similarity below `t1` are background.
pub fn background_mask(mean_fsim: &RealGrid, t1: f64) -> Result<BinaryMask> {
    if !(0.0..=1.0).contains(&t1) {
        return Err(Error::Config(format!("T1 {t1} outside [0, 1]")));
    }
    let bits = mean_fsim.values().iter().map(|&v| u8::from(v < t1)).collect();
    BinaryMask::new(mean_fsim.height(), mean_fsim.width(), bits)
}

/// Background similarity map; an empty background mask degrades to a zero
/// grid with the flag set.
pub fn background_similarity(
    embedding: &ImageEmbedding,
    bmask: &BinaryMask,
) -> Result<(RealGrid, bool)> {
    match masked_embedding(embedding, bmask) {
        Ok(masked) => Ok((foreground_similarity(embedding, &masked), false)),
        Err(Error::EmptyExemplar(_)) => {
            Ok((RealGrid::zeros(embedding.height, embedding.width), true))
        }
        Err(e) => Err(e),
    }
}

/// Build the full similarity set from exemplar masks at embedding resolution.
pub fn build_similarity_set(
    embedding: &ImageEmbedding,
    fmasks: &[BinaryMask],
    t1: f64,
    with_background: bool,
) -> Result<SimilaritySet> {
    if fmasks.is_empty() {
        return Err(Error::EmptyExemplar("no exemplar masks".into()));
    }
    let mut fsims = Vec::with_capacity(fmasks.len());
    for fmask in fmasks {
        let masked = masked_embedding(embedding, fmask)?;
        fsims.push(foreground_similarity(embedding, &masked));
    }
    let mean = mean_similarity(&fsims)?;
    let bmask = background_mask(&mean, t1)?;
    let (bsim, background_empty) = if with_background {
        background_similarity(embedding, &bmask)?
    } else {
        (RealGrid::zeros(embedding.height, embedding.width), bmask.is_empty())
    };
    Ok(SimilaritySet { fsims, bmask, bsim, background_empty })
}

/// Literal reference definitions, kept deliberately naive so they can serve
/// as an independent check of the fast path.
pub mod reference {
    use super::*;

    /// Quadruple-loop evaluation of the raw similarity definition:
    /// `fsim[x,y] = (1/K) * sum_{u,v} dot(F_I[x,y], F_R[u,v])`.
    pub fn similarity_oracle(embedding: &ImageEmbedding, masked: &MaskedEmbedding) -> RealGrid {
        let (he, we) = (embedding.height, embedding.width);
        let mut out = RealGrid::zeros(he, we);
        for y in 0..he {
            for x in 0..we {
                let mut acc = 0.0f64;
                for v in 0..he {
                    for u in 0..we {
                        for c in 0..embedding.channels {
                            acc += embedding.at(c, y, x) as f64
                                * masked.values[c * he * we + v * we + u] as f64;
                        }
                    }
                }
                out.set(y, x, acc / masked.nonzero_cells as f64);
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::reference::similarity_oracle;
    use super::*;
    use crate::backend::{MockBackend, SegmentationBackend, SourceImage};
    use crate::grid::BinaryMask;

    fn embedding_c1(h: usize, w: usize, values: &[f32]) -> ImageEmbedding {
        ImageEmbedding::new(1, h, w, values.to_vec(), h, w).unwrap()
    }

    #[test]
    fn masked_embedding_identity_under_full_mask() {
        let emb = embedding_c1(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let mask = BinaryMask::new(2, 2, vec![1; 4]).unwrap();
        let m = masked_embedding(&emb, &mask).unwrap();
        assert_eq!(m.values, emb.values);
        assert_eq!(m.nonzero_cells, 4);
    }

    #[test]
    fn masked_embedding_elementwise() {
        let emb = embedding_c1(2, 2, &[2.0, 3.0, 4.0, 5.0]);
        let mask = BinaryMask::new(2, 2, vec![1, 0, 0, 1]).unwrap();
        let m = masked_embedding(&emb, &mask).unwrap();
        assert_eq!(m.values, vec![2.0, 0.0, 0.0, 5.0]);
        assert_eq!(m.nonzero_cells, 2);
    }

    #[test]
    fn masked_embedding_rejects_empty_mask() {
        let emb = embedding_c1(2, 2, &[1.0; 4]);
        let mask = BinaryMask::empty(2, 2);
        assert!(matches!(
            masked_embedding(&emb, &mask),
            Err(Error::EmptyExemplar(_))
        ));
    }

    #[test]
    fn foreground_similarity_matches_hand_case() {
        // C=1 embedding [[1,2],[3,4]] with mask [[1,1],[0,0]]:
        // mean masked scalar 1.5, raw [[1.5,3.0],[4.5,6.0]],
        // normalized [[0, 1/3], [2/3, 1]].
        let emb = embedding_c1(2, 2, &[1.0, 2.0, 3.0, 4.0]);
        let mask = BinaryMask::new(2, 2, vec![1, 1, 0, 0]).unwrap();
        let masked = masked_embedding(&emb, &mask).unwrap();

        let raw = foreground_similarity_raw(&emb, &masked);
        let expect_raw = [1.5, 3.0, 4.5, 6.0];
        for (got, want) in raw.values().iter().zip(expect_raw) {
            assert!((got - want).abs() < 1e-12);
        }
        let oracle = similarity_oracle(&emb, &masked);
        for (got, want) in raw.values().iter().zip(oracle.values()) {
            assert!((got - want).abs() < 1e-9);
        }

        let norm = foreground_similarity(&emb, &masked);
        let expect = [0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0];
        for (got, want) in norm.values().iter().zip(expect) {
            assert!((got - want).abs() < 1e-12);
        }
    }

    #[test]
    fn uniform_embedding_normalizes_to_zero() {
        let emb = embedding_c1(2, 2, &[3.0; 4]);
        let mask = BinaryMask::new(2, 2, vec![1, 0, 1, 0]).unwrap();
        let masked = masked_embedding(&emb, &mask).unwrap();
        assert_eq!(foreground_similarity(&emb, &masked).values(), &[0.0; 4]);
    }

    #[test]
    fn mock_scene_similarity_is_exact() {
        // Orthogonal one-hot features: raw fsim is exactly 1 on the exemplar
        // label's pixels and 0 elsewhere.
        let img = SourceImage::from_labels(2, 3, vec![0, 5, 5, 0, 0, 3], "s").unwrap();
        let backend = MockBackend::default();
        let emb = backend.encode(&img).unwrap();
        let mask = BinaryMask::new(2, 3, vec![0, 1, 1, 0, 0, 0]).unwrap();
        let masked = masked_embedding(&emb, &mask).unwrap();
        let raw = foreground_similarity_raw(&emb, &masked);
        assert_eq!(raw.values(), &[0.0, 1.0, 1.0, 0.0, 0.0, 0.0]);
        let oracle = similarity_oracle(&emb, &masked);
        for (got, want) in raw.values().iter().zip(oracle.values()) {
            assert!((got - want).abs() < 1e-9);
        }
    }

    #[test]
    fn mean_similarity_cases() {
        let a = RealGrid::new(1, 2, vec![0.0, 1.0]).unwrap();
        let b = RealGrid::new(1, 2, vec![1.0, 0.0]).unwrap();
        assert_eq!(mean_similarity(&[a.clone()]).unwrap(), a);
        assert_eq!(
            mean_similarity(&[a.clone(), b]).unwrap().values(),
            &[0.5, 0.5]
        );
        assert_eq!(
            mean_similarity(&[a.clone(), a.clone(), a.clone()]).unwrap(),
            a
        );
        assert!(matches!(mean_similarity(&[]), Err(Error::Config(_))));
    }

    #[test]
    fn background_mask_polarity() {
        let m = RealGrid::new(1, 2, vec![0.1, 0.9]).unwrap();
        assert_eq!(background_mask(&m, 0.35).unwrap().bits(), &[1, 0]);
        assert_eq!(background_mask(&m, 0.0).unwrap().bits(), &[0, 0]);
        let zeros = RealGrid::zeros(1, 2);
        assert_eq!(background_mask(&zeros, 0.35).unwrap().bits(), &[1, 1]);
        assert!(background_mask(&m, 1.5).is_err());
    }

    #[test]
    fn background_mask_complements_threshold() {
        let m = RealGrid::new(1, 5, vec![0.0, 0.2, 0.35, 0.5, 1.0]).unwrap();
        let bmask = background_mask(&m, 0.35).unwrap();
        let fmask = m.threshold(0.35).unwrap();
        for (b, f) in bmask.bits().iter().zip(fmask.bits()) {
            assert_eq!(*b, 1 - *f);
        }
    }

    #[test]
    fn background_similarity_on_mock_scene() {
        let img = SourceImage::from_labels(2, 2, vec![0, 7, 0, 0], "s").unwrap();
        let backend = MockBackend::default();
        let emb = backend.encode(&img).unwrap();
        let bmask = BinaryMask::new(2, 2, vec![1, 0, 1, 1]).unwrap();
        let (bsim, empty) = background_similarity(&emb, &bmask).unwrap();
        assert!(!empty);
        // raw bsim is 1 on background pixels, 0 on the labeled object
        assert_eq!(bsim.values(), &[1.0, 0.0, 1.0, 1.0]);
    }

    #[test]
    fn empty_background_degrades_to_zero_grid() {
        let img = SourceImage::from_labels(1, 2, vec![1, 1], "s").unwrap();
        let backend = MockBackend::default();
        let emb = backend.encode(&img).unwrap();
        let empty_mask = BinaryMask::empty(1, 2);
        let (bsim, empty) = background_similarity(&emb, &empty_mask).unwrap();
        assert!(empty);
        assert_eq!(bsim.values(), &[0.0, 0.0]);
    }
}
