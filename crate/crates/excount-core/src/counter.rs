//! Prompt-aware counting: similarity fusion, the dual point-prompt system,
//! mask deduplication, and the multi-round counting loop.

use serde::{Deserialize, Serialize};

use crate::backend::{
    ImageEmbedding, MaskRecord, SegmentationBackend, SourceImage,
};
use crate::error::{Error, Result};
use crate::grid::{BinaryMask, BoundingBox, PointPrompt, PromptKind, RealGrid, mask_iou};
use crate::similarity::{build_similarity_set, SimilaritySet};

/// How per-exemplar foreground maps are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Fusion {
    #[default]
    Mean,
    Max,
}

/// Sign applied to the background term in the composite map.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum BgSign {
    #[default]
    #[serde(rename = "+")]
    Plus,
    #[serde(rename = "-")]
    Minus,
}

impl BgSign {
    pub fn factor(self) -> f64 {
        match self {
            BgSign::Plus => 1.0,
            BgSign::Minus => -1.0,
        }
    }
}

/// All knobs of the counting pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CountingConfig {
    /// Weight of the background similarity term.
    pub lambda: f64,
    pub bg_sign: BgSign,
    pub fusion: Fusion,
    /// Background binarization threshold on the mean foreground map.
    pub t1: f64,
    /// Foreground binarization threshold on the composite map.
    pub t2: f64,
    /// Background fusion is disabled once the foreground fraction exceeds this.
    pub fg_cutoff: f64,
    /// Iteration cap for multi-round counting.
    pub rounds_cap: u32,
    /// A discovered box is new when its IoU with every prompt box stays below this.
    pub novelty_iou: f64,
    /// Two masks are duplicates at or above this IoU.
    pub dedup_iou: f64,
    /// Lattice stride of the matrix point prompt, in embedding cells.
    pub matrix_stride: usize,
    /// Point prompts per decode call.
    pub batch_size: usize,
    pub enable_background: bool,
    pub enable_multiround: bool,
    pub enable_residual: bool,
}

impl Default for CountingConfig {
    fn default() -> Self {
        Self {
            lambda: 0.5,
            bg_sign: BgSign::Plus,
            fusion: Fusion::Mean,
            t1: 0.35,
            t2: 0.55,
            fg_cutoff: 0.5,
            rounds_cap: 3,
            novelty_iou: 0.5,
            dedup_iou: 0.8,
            matrix_stride: 1,
            batch_size: 64,
            enable_background: true,
            enable_multiround: true,
            enable_residual: true,
        }
    }
}

impl CountingConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("t1", self.t1),
            ("t2", self.t2),
            ("novelty_iou", self.novelty_iou),
            ("dedup_iou", self.dedup_iou),
            ("fg_cutoff", self.fg_cutoff),
        ] {
            if !(0.0..=1.0).contains(&v) {
                return Err(Error::Config(format!("{name} = {v} outside [0, 1]")));
            }
        }
        if self.lambda < 0.0 || !self.lambda.is_finite() {
            return Err(Error::Config(format!("lambda = {} must be >= 0", self.lambda)));
        }
        if self.rounds_cap == 0 {
            return Err(Error::Config("rounds_cap must be at least 1".into()));
        }
        if self.matrix_stride == 0 {
            return Err(Error::Config("matrix_stride must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        Ok(())
    }
}

/// Prompt boxes with their discovery round, self-deduplicated by box IoU.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
pub struct PromptStack {
    entries: Vec<(BoundingBox, u32)>,
}

impl PromptStack {
    /// Insert unless the box overlaps an existing entry at `novelty_iou` or more.
    /// Returns whether the box was kept.
    pub fn push_novel(&mut self, bbox: BoundingBox, round: u32, novelty_iou: f64) -> bool {
        if self.entries.iter().any(|(b, _)| b.iou(&bbox) >= novelty_iou) {
            return false;
        }
        self.entries.push((bbox, round));
        true
    }

    pub fn boxes(&self) -> impl Iterator<Item = &BoundingBox> {
        self.entries.iter().map(|(b, _)| b)
    }

    pub fn entries(&self) -> &[(BoundingBox, u32)] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Final count plus everything needed to audit it.
#[derive(Debug, Clone)]
pub struct CountResult {
    pub count: usize,
    /// Deduplicated mask records, one per counted object.
    pub records: Vec<MaskRecord>,
    pub prompt_boxes: PromptStack,
    pub rounds_run: u32,
    /// Deduplicated masks gained in each round.
    pub per_round_added: Vec<usize>,
    pub dropped_background_points: usize,
}

/// Per-round diagnostics for tracing and the CLI diagnostic bundle.
#[derive(Debug, Clone)]
pub struct RoundTrace {
    pub round: u32,
    pub csim: RealGrid,
    pub csim_binary: BinaryMask,
    pub matrix_points: usize,
    pub residual_points: usize,
    pub background_empty: bool,
    pub pre_dedup_stack: usize,
    pub prompt_stack: usize,
    pub new_boxes: Vec<BoundingBox>,
}

/// Fraction of set bits.
pub fn foreground_fraction(mask: &BinaryMask) -> f64 {
    let total = mask.height() * mask.width();
    if total == 0 {
        0.0
    } else {
        mask.count_ones() as f64 / total as f64
    }
}

fn fuse_foreground(sims: &SimilaritySet, fusion: Fusion) -> Result<RealGrid> {
    let first = sims
        .fsims
        .first()
        .ok_or_else(|| Error::Config("similarity set has no foreground maps".into()))?;
    let mut acc = first.values().to_vec();
    match fusion {
        Fusion::Mean => {
            for g in &sims.fsims[1..] {
                for (a, &v) in acc.iter_mut().zip(g.values()) {
                    *a += v;
                }
            }
            let n = sims.fsims.len() as f64;
            for a in &mut acc {
                *a /= n;
            }
        }
        Fusion::Max => {
            for g in &sims.fsims[1..] {
                for (a, &v) in acc.iter_mut().zip(g.values()) {
                    *a = a.max(v);
                }
            }
        }
    }
    RealGrid::new(first.height(), first.width(), acc)
}

/// Weighted fusion of foreground and background similarity, normalized.
///
/// The background term is dropped when background fusion is disabled or when
/// the thresholded foreground already covers more than `fg_cutoff` of the map.
pub fn composite_similarity(sims: &SimilaritySet, cfg: &CountingConfig) -> Result<RealGrid> {
    let fg = fuse_foreground(sims, cfg.fusion)?;
    let fg_fraction = foreground_fraction(&fg.threshold(cfg.t2)?);
    let background_active =
        cfg.enable_background && cfg.lambda > 0.0 && fg_fraction <= cfg.fg_cutoff;
    if !background_active {
        return Ok(fg.normalized());
    }
    let scale = cfg.bg_sign.factor() * cfg.lambda;
    let values = fg
        .values()
        .iter()
        .zip(sims.bsim.values())
        .map(|(&f, &b)| f + scale * b)
        .collect();
    Ok(RealGrid::new(fg.height(), fg.width(), values)?.normalized())
}

/// Lattice points over the set bits of the binarized composite map, mapped to
/// source-image coordinates.
pub fn matrix_point_prompts(
    binary: &BinaryMask,
    stride: usize,
    embedding: &ImageEmbedding,
) -> Vec<PointPrompt> {
    let mut points = Vec::new();
    let mut y = 0;
    while y < binary.height() {
        let mut x = 0;
        while x < binary.width() {
            if binary.get(y, x) {
                let (sx, sy) = embedding.cell_to_source(y, x);
                points.push(PointPrompt { x: sx, y: sy, kind: PromptKind::Matrix });
            }
            x += stride;
        }
        y += stride;
    }
    points
}

/// One point per 4-connected blob of foreground not yet covered by any mask,
/// placed at the blob cell nearest its centroid.
pub fn residual_point_prompts(
    binary: &BinaryMask,
    covered: &BinaryMask,
    embedding: &ImageEmbedding,
) -> Result<Vec<PointPrompt>> {
    let residual = binary.and_not(covered)?;
    let mut points = Vec::new();
    for component in residual.connected_components() {
        let mut sum_y = 0.0f64;
        let mut sum_x = 0.0f64;
        let mut n = 0usize;
        for y in 0..component.height() {
            for x in 0..component.width() {
                if component.get(y, x) {
                    sum_y += y as f64;
                    sum_x += x as f64;
                    n += 1;
                }
            }
        }
        let (cy, cx) = (sum_y / n as f64, sum_x / n as f64);
        let mut best: Option<(f64, usize, usize)> = None;
        for y in 0..component.height() {
            for x in 0..component.width() {
                if component.get(y, x) {
                    let d = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
                    if best.map_or(true, |(bd, _, _)| d < bd) {
                        best = Some((d, y, x));
                    }
                }
            }
        }
        let (_, y, x) = best.expect("component is nonempty");
        let (sx, sy) = embedding.cell_to_source(y, x);
        points.push(PointPrompt { x: sx, y: sy, kind: PromptKind::Residual });
    }
    Ok(points)
}

/// Greedy stable deduplication: a record survives when its mask IoU with every
/// already-kept record stays below `dedup_iou`.
pub fn dedup_masks(records: &[MaskRecord], dedup_iou: f64) -> Result<Vec<MaskRecord>> {
    let mut kept: Vec<MaskRecord> = Vec::new();
    let mut kept_boxes: Vec<Option<BoundingBox>> = Vec::new();
    for rec in records {
        let bbox = rec.mask.min_bounding_box().ok();
        let mut duplicate = false;
        for (k, kb) in kept.iter().zip(&kept_boxes) {
            // Disjoint bounding boxes cannot overlap at mask level.
            if let (Some(a), Some(b)) = (&bbox, kb) {
                if a.iou(b) == 0.0 {
                    continue;
                }
            }
            if mask_iou(&rec.mask, &k.mask)? >= dedup_iou {
                duplicate = true;
                break;
            }
        }
        if !duplicate {
            kept.push(rec.clone());
            kept_boxes.push(bbox);
        }
    }
    Ok(kept)
}

struct RoundOutcome {
    csim: RealGrid,
    csim_binary: BinaryMask,
    matrix_points: usize,
    residual_points: usize,
    background_empty: bool,
    dropped: usize,
}

/// One pipeline round: exemplar masks, similarity set, composite map, dual
/// point prompts, decode, append to the mask stack.
fn round_once(
    embedding: &ImageEmbedding,
    image: &SourceImage,
    prompts: &PromptStack,
    stack: &mut Vec<MaskRecord>,
    round: u32,
    cfg: &CountingConfig,
    backend: &dyn SegmentationBackend,
) -> Result<RoundOutcome> {
    let mut fmasks = Vec::new();
    let mut exemplar_records = Vec::new();
    for bbox in prompts.boxes() {
        match backend.decode_box(embedding, image, bbox) {
            Ok(mut rec) => {
                rec.round = round;
                let fmask = to_embedding_resolution(&rec.mask, embedding)?;
                fmasks.push(fmask);
                exemplar_records.push(rec);
            }
            Err(Error::EmptyExemplar(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    if fmasks.is_empty() {
        return Err(Error::EmptyExemplar(
            "every prompt box selected only background".into(),
        ));
    }
    stack.extend(exemplar_records);

    let sims = build_similarity_set(embedding, &fmasks, cfg.t1, cfg.enable_background)?;
    let csim = composite_similarity(&sims, cfg)?;
    let csim_binary = csim.threshold(cfg.t2)?;

    let mut dropped = 0usize;
    let matrix = matrix_point_prompts(&csim_binary, cfg.matrix_stride, embedding);
    for chunk in matrix.chunks(cfg.batch_size) {
        let out = backend.decode_points(embedding, image, chunk)?;
        dropped += out.dropped;
        stack.extend(out.records.into_iter().map(|mut r| {
            r.round = round;
            r
        }));
    }

    let mut residual_count = 0usize;
    if cfg.enable_residual {
        let mut covered = BinaryMask::empty(embedding.height, embedding.width);
        for rec in stack.iter() {
            covered.union_with(&to_embedding_resolution(&rec.mask, embedding)?)?;
        }
        let residual = residual_point_prompts(&csim_binary, &covered, embedding)?;
        residual_count = residual.len();
        for chunk in residual.chunks(cfg.batch_size) {
            let out = backend.decode_points(embedding, image, chunk)?;
            dropped += out.dropped;
            stack.extend(out.records.into_iter().map(|mut r| {
                r.round = round;
                r
            }));
        }
    }

    Ok(RoundOutcome {
        csim,
        csim_binary,
        matrix_points: matrix.len(),
        residual_points: residual_count,
        background_empty: sims.background_empty,
        dropped,
    })
}

/// Downsample a source-resolution mask to the embedding grid. A mask so small
/// that area coverage erases it keeps the cell under its centroid.
fn to_embedding_resolution(mask: &BinaryMask, embedding: &ImageEmbedding) -> Result<BinaryMask> {
    let mut down = mask.downsample(embedding.height, embedding.width)?;
    if down.is_empty() && !mask.is_empty() {
        let mut sum_y = 0.0f64;
        let mut sum_x = 0.0f64;
        let mut n = 0usize;
        for y in 0..mask.height() {
            for x in 0..mask.width() {
                if mask.get(y, x) {
                    sum_y += y as f64;
                    sum_x += x as f64;
                    n += 1;
                }
            }
        }
        let cy = ((sum_y / n as f64) * embedding.height as f64 / mask.height() as f64) as usize;
        let cx = ((sum_x / n as f64) * embedding.width as f64 / mask.width() as f64) as usize;
        down.set(cy.min(embedding.height - 1), cx.min(embedding.width - 1), true);
    }
    Ok(down)
}

/// Full multi-round counting over one image.
pub fn iterate_count(
    image: &SourceImage,
    exemplar_boxes: &[BoundingBox],
    cfg: &CountingConfig,
    backend: &dyn SegmentationBackend,
) -> Result<CountResult> {
    iterate_count_traced(image, exemplar_boxes, cfg, backend).map(|(r, _)| r)
}

/// Like [`iterate_count`] but also returns per-round diagnostics.
pub fn iterate_count_traced(
    image: &SourceImage,
    exemplar_boxes: &[BoundingBox],
    cfg: &CountingConfig,
    backend: &dyn SegmentationBackend,
) -> Result<(CountResult, Vec<RoundTrace>)> {
    cfg.validate()?;
    if exemplar_boxes.is_empty() {
        return Err(Error::EmptyExemplar("no exemplar boxes supplied".into()));
    }
    let embedding = backend.encode(image)?;

    let mut prompts = PromptStack::default();
    for bbox in exemplar_boxes {
        prompts.push_novel(*bbox, 0, cfg.novelty_iou);
    }

    let mut stack: Vec<MaskRecord> = Vec::new();
    let mut deduped: Vec<MaskRecord> = Vec::new();
    let mut per_round_added = Vec::new();
    let mut traces = Vec::new();
    let mut dropped_background_points = 0usize;
    let mut rounds_run = 0u32;

    loop {
        let round = rounds_run;
        let outcome = round_once(&embedding, image, &prompts, &mut stack, round, cfg, backend)?;
        dropped_background_points += outcome.dropped;
        rounds_run += 1;

        let before = deduped.len();
        deduped = dedup_masks(&stack, cfg.dedup_iou)?;
        per_round_added.push(deduped.len() - before);

        let mut new_boxes = Vec::new();
        for rec in &deduped {
            let bbox = rec.mask.min_bounding_box()?;
            if prompts.push_novel(bbox, rounds_run, cfg.novelty_iou) {
                new_boxes.push(bbox);
            }
        }

        traces.push(RoundTrace {
            round,
            csim: outcome.csim,
            csim_binary: outcome.csim_binary,
            matrix_points: outcome.matrix_points,
            residual_points: outcome.residual_points,
            background_empty: outcome.background_empty,
            pre_dedup_stack: stack.len(),
            prompt_stack: prompts.len(),
            new_boxes: new_boxes.clone(),
        });

        if !cfg.enable_multiround || new_boxes.is_empty() || rounds_run >= cfg.rounds_cap {
            break;
        }
    }

    let result = CountResult {
        count: deduped.len(),
        records: deduped,
        prompt_boxes: prompts,
        rounds_run,
        per_round_added,
        dropped_background_points,
    };
    Ok((result, traces))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{MaskOrigin, MockBackend};
    use crate::grid::RealGrid;

    fn grid(h: usize, w: usize, v: &[f64]) -> RealGrid {
        RealGrid::new(h, w, v.to_vec()).unwrap()
    }

    fn sims(fsims: Vec<RealGrid>, bsim: RealGrid) -> SimilaritySet {
        let bmask = BinaryMask::empty(bsim.height(), bsim.width());
        SimilaritySet { fsims, bmask, bsim, background_empty: false }
    }

    fn record(mask: BinaryMask) -> MaskRecord {
        MaskRecord { mask, origin: MaskOrigin::Matrix, round: 0, score: None }
    }

    #[test]
    fn foreground_fraction_cases() {
        assert_eq!(foreground_fraction(&BinaryMask::new(1, 2, vec![1, 1]).unwrap()), 1.0);
        assert_eq!(foreground_fraction(&BinaryMask::empty(2, 2)), 0.0);
        assert_eq!(foreground_fraction(&BinaryMask::new(1, 2, vec![1, 0]).unwrap()), 0.5);
    }

    fn composite_pre_norm(sims: &SimilaritySet, cfg: &CountingConfig) -> Vec<f64> {
        // Recover the pre-normalization fusion for hand-checking.
        let fg = fuse_foreground(sims, cfg.fusion).unwrap();
        let fg_fraction = foreground_fraction(&fg.threshold(cfg.t2).unwrap());
        let active = cfg.enable_background && cfg.lambda > 0.0 && fg_fraction <= cfg.fg_cutoff;
        fg.values()
            .iter()
            .zip(sims.bsim.values())
            .map(|(&f, &b)| {
                if active {
                    f + cfg.bg_sign.factor() * cfg.lambda * b
                } else {
                    f
                }
            })
            .collect()
    }

    #[test]
    fn composite_mean_fusion_arithmetic() {
        let s = sims(
            vec![grid(1, 2, &[0.2, 0.4]), grid(1, 2, &[0.6, 0.0])],
            grid(1, 2, &[0.5, 0.5]),
        );
        let cfg = CountingConfig { lambda: 0.5, ..Default::default() };
        let pre = composite_pre_norm(&s, &cfg);
        assert!((pre[0] - 0.65).abs() < 1e-12);
        assert!((pre[1] - 0.45).abs() < 1e-12);
    }

    #[test]
    fn composite_lambda_zero() {
        let s = sims(
            vec![grid(1, 2, &[0.2, 0.4]), grid(1, 2, &[0.6, 0.0])],
            grid(1, 2, &[0.5, 0.5]),
        );
        let cfg = CountingConfig { lambda: 0.0, ..Default::default() };
        let pre = composite_pre_norm(&s, &cfg);
        assert!((pre[0] - 0.4).abs() < 1e-12);
        assert!((pre[1] - 0.2).abs() < 1e-12);
    }

    #[test]
    fn composite_max_fusion_arithmetic() {
        let s = sims(
            vec![grid(1, 2, &[0.2, 0.4]), grid(1, 2, &[0.6, 0.0])],
            grid(1, 2, &[0.5, 0.5]),
        );
        let cfg = CountingConfig { lambda: 0.5, fusion: Fusion::Max, ..Default::default() };
        let pre = composite_pre_norm(&s, &cfg);
        assert!((pre[0] - 0.85).abs() < 1e-12);
        assert!((pre[1] - 0.65).abs() < 1e-12);
    }

    #[test]
    fn composite_background_off_is_pure_foreground() {
        let s = sims(
            vec![grid(1, 2, &[0.2, 0.4]), grid(1, 2, &[0.6, 0.0])],
            grid(1, 2, &[0.5, 0.5]),
        );
        let cfg = CountingConfig { enable_background: false, ..Default::default() };
        let got = composite_similarity(&s, &cfg).unwrap();
        let want = fuse_foreground(&s, Fusion::Mean).unwrap().normalized();
        assert_eq!(got, want);
    }

    fn native_embedding(h: usize, w: usize) -> ImageEmbedding {
        ImageEmbedding::new(1, h, w, vec![0.0; h * w], h, w).unwrap()
    }

    #[test]
    fn matrix_prompts_enumerate_foreground() {
        let emb = native_embedding(2, 2);
        let binary = BinaryMask::new(2, 2, vec![1, 1, 0, 1]).unwrap();
        let pts = matrix_point_prompts(&binary, 1, &emb);
        let coords: Vec<(u32, u32)> = pts.iter().map(|p| (p.x, p.y)).collect();
        assert_eq!(coords, vec![(0, 0), (1, 0), (1, 1)]);
        assert!(pts.iter().all(|p| p.kind == PromptKind::Matrix));
    }

    #[test]
    fn matrix_prompts_empty_foreground() {
        let emb = native_embedding(3, 3);
        assert!(matrix_point_prompts(&BinaryMask::empty(3, 3), 1, &emb).is_empty());
    }

    #[test]
    fn matrix_prompts_stride_lattice() {
        let emb = native_embedding(4, 4);
        let binary = BinaryMask::new(4, 4, vec![1; 16]).unwrap();
        assert_eq!(matrix_point_prompts(&binary, 2, &emb).len(), 4);
    }

    #[test]
    fn residual_prompts_set_difference() {
        let emb = native_embedding(1, 2);
        let binary = BinaryMask::new(1, 2, vec![1, 1]).unwrap();
        let covered = BinaryMask::new(1, 2, vec![1, 0]).unwrap();
        let pts = residual_point_prompts(&binary, &covered, &emb).unwrap();
        assert_eq!(pts.len(), 1);
        assert_eq!((pts[0].x, pts[0].y), (1, 0));
        assert_eq!(pts[0].kind, PromptKind::Residual);
    }

    #[test]
    fn residual_prompts_fully_covered() {
        let emb = native_embedding(2, 2);
        let binary = BinaryMask::new(2, 2, vec![1, 0, 0, 1]).unwrap();
        let covered = BinaryMask::new(2, 2, vec![1, 1, 1, 1]).unwrap();
        assert!(residual_point_prompts(&binary, &covered, &emb).unwrap().is_empty());
    }

    #[test]
    fn residual_prompts_one_per_component() {
        let emb = native_embedding(1, 5);
        let binary = BinaryMask::new(1, 5, vec![1, 1, 0, 1, 1]).unwrap();
        let covered = BinaryMask::empty(1, 5);
        assert_eq!(residual_point_prompts(&binary, &covered, &emb).unwrap().len(), 2);
    }

    #[test]
    fn dedup_identical_masks() {
        let m = BinaryMask::new(1, 3, vec![1, 1, 0]).unwrap();
        let kept = dedup_masks(&[record(m.clone()), record(m)], 0.8).unwrap();
        assert_eq!(kept.len(), 1);
    }

    #[test]
    fn dedup_keeps_disjoint() {
        let a = BinaryMask::new(1, 4, vec![1, 1, 0, 0]).unwrap();
        let b = BinaryMask::new(1, 4, vec![0, 0, 1, 1]).unwrap();
        assert_eq!(dedup_masks(&[record(a), record(b)], 0.8).unwrap().len(), 2);
    }

    #[test]
    fn dedup_is_greedy_and_stable() {
        let a = BinaryMask::new(1, 4, vec![1, 1, 0, 0]).unwrap();
        let c = BinaryMask::new(1, 4, vec![0, 0, 1, 1]).unwrap();
        let kept = dedup_masks(&[record(a.clone()), record(a.clone()), record(c.clone())], 0.8).unwrap();
        assert_eq!(kept.len(), 2);
        assert_eq!(kept[0].mask, a);
        assert_eq!(kept[1].mask, c);
    }

    #[test]
    fn prompt_stack_self_deduplicates() {
        let mut stack = PromptStack::default();
        let a = BoundingBox::new(0, 0, 3, 3).unwrap();
        assert!(stack.push_novel(a, 0, 0.5));
        assert!(!stack.push_novel(a, 0, 0.5));
        let far = BoundingBox::new(10, 10, 12, 12).unwrap();
        assert!(stack.push_novel(far, 1, 0.5));
        assert_eq!(stack.len(), 2);
    }

    // Scene with disjoint labeled rectangles: two 2x2 objects sharing a
    // feature class (labels congruent mod 16) on a 8x8 canvas.
    fn two_object_scene() -> SourceImage {
        let mut labels = vec![0u16; 64];
        for y in 1..3 {
            for x in 1..3 {
                labels[y * 8 + x] = 1;
            }
        }
        for y in 5..7 {
            for x in 5..7 {
                labels[y * 8 + x] = 17;
            }
        }
        SourceImage::from_labels(8, 8, labels, "two").unwrap()
    }

    #[test]
    fn round_once_discovers_same_class_objects() {
        let image = two_object_scene();
        let backend = MockBackend::default();
        let embedding = backend.encode(&image).unwrap();
        let cfg = CountingConfig::default();
        let mut prompts = PromptStack::default();
        prompts.push_novel(BoundingBox::new(1, 1, 2, 2).unwrap(), 0, cfg.novelty_iou);
        let mut stack = Vec::new();
        round_once(&embedding, &image, &prompts, &mut stack, 0, &cfg, &backend).unwrap();
        let deduped = dedup_masks(&stack, cfg.dedup_iou).unwrap();
        assert_eq!(deduped.len(), 2);
    }

    #[test]
    fn round_once_background_prompts_error() {
        let image = two_object_scene();
        let backend = MockBackend::default();
        let embedding = backend.encode(&image).unwrap();
        let cfg = CountingConfig::default();
        let mut prompts = PromptStack::default();
        prompts.push_novel(BoundingBox::new(3, 3, 4, 4).unwrap(), 0, cfg.novelty_iou);
        let mut stack = Vec::new();
        let err = round_once(&embedding, &image, &prompts, &mut stack, 0, &cfg, &backend);
        assert!(matches!(err, Err(Error::EmptyExemplar(_))));
    }

    #[test]
    fn iterate_count_two_objects() {
        let image = two_object_scene();
        let backend = MockBackend::default();
        let cfg = CountingConfig::default();
        let exemplars = [BoundingBox::new(1, 1, 2, 2).unwrap()];
        let result = iterate_count(&image, &exemplars, &cfg, &backend).unwrap();
        assert_eq!(result.count, 2);
        assert!(result.rounds_run <= cfg.rounds_cap);
    }

    #[test]
    fn iterate_count_single_round_toggle() {
        let image = two_object_scene();
        let backend = MockBackend::default();
        let cfg = CountingConfig { enable_multiround: false, ..Default::default() };
        let exemplars = [BoundingBox::new(1, 1, 2, 2).unwrap()];
        let result = iterate_count(&image, &exemplars, &cfg, &backend).unwrap();
        assert_eq!(result.rounds_run, 1);
        assert_eq!(result.count, 2);
    }

    #[test]
    fn iterate_count_requires_exemplars() {
        let image = two_object_scene();
        let backend = MockBackend::default();
        let err = iterate_count(&image, &[], &CountingConfig::default(), &backend);
        assert!(matches!(err, Err(Error::EmptyExemplar(_))));
    }

    #[test]
    fn iterate_count_rejects_bad_config() {
        let image = two_object_scene();
        let backend = MockBackend::default();
        let cfg = CountingConfig { t2: 1.5, ..Default::default() };
        let exemplars = [BoundingBox::new(1, 1, 2, 2).unwrap()];
        assert!(matches!(
            iterate_count(&image, &exemplars, &cfg, &backend),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn iterate_count_is_deterministic() {
        let image = two_object_scene();
        let backend = MockBackend::default();
        let cfg = CountingConfig::default();
        let exemplars = [BoundingBox::new(1, 1, 2, 2).unwrap()];
        let a = iterate_count(&image, &exemplars, &cfg, &backend).unwrap();
        let b = iterate_count(&image, &exemplars, &cfg, &backend).unwrap();
        assert_eq!(a.count, b.count);
        assert_eq!(a.rounds_run, b.rounds_run);
        assert_eq!(a.per_round_added, b.per_round_added);
        assert_eq!(a.prompt_boxes.entries(), b.prompt_boxes.entries());
        let masks_a: Vec<_> = a.records.iter().map(|r| r.mask.clone()).collect();
        let masks_b: Vec<_> = b.records.iter().map(|r| r.mask.clone()).collect();
        assert_eq!(masks_a, masks_b);
    }
}
