//! Synthetic label-map scenes with exact ground truth.
//!
//! Each scene packs disjoint axis-aligned rectangles with a minimum pixel
//! separation. All rectangles get distinct labels that are congruent modulo
//! `class_stride`, so a mock backend sees them as instances of one category
//! while decode still resolves them individually.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::backend::SourceImage;
use crate::error::{Error, Result};
use crate::grid::BoundingBox;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SceneParams {
    pub height: usize,
    pub width: usize,
    /// Inclusive range of object counts per scene.
    pub count_range: (usize, usize),
    /// Inclusive range of rectangle side lengths.
    pub size_range: (usize, usize),
    /// Minimum pixel separation between rectangles.
    pub separation: usize,
    /// Label class of the target category (nonzero).
    pub class_label: u16,
    /// Stride between instance labels; matches the mock backend channel count.
    pub class_stride: u16,
    /// Placement attempts per rectangle before giving up.
    pub max_attempts: usize,
}

impl Default for SceneParams {
    fn default() -> Self {
        Self {
            height: 64,
            width: 64,
            count_range: (1, 30),
            size_range: (2, 5),
            separation: 2,
            class_label: 1,
            class_stride: 16,
            max_attempts: 500,
        }
    }
}

/// A generated scene plus its exact ground truth.
#[derive(Debug, Clone)]
pub struct Scene {
    pub image: SourceImage,
    pub object_boxes: Vec<BoundingBox>,
    /// Up to three exemplar boxes: the largest objects, ties broken by order.
    pub exemplar_boxes: Vec<BoundingBox>,
    /// One centroid per object.
    pub gt_points: Vec<(u32, u32)>,
}

impl Scene {
    pub fn count(&self) -> usize {
        self.object_boxes.len()
    }
}

/// Generate one scene. Deterministic for a fixed seed and parameters.
pub fn generate_scene(params: &SceneParams, seed: u64, id: impl Into<String>) -> Result<Scene> {
    validate(params)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let count = rng.gen_range(params.count_range.0..=params.count_range.1);
    let mut boxes: Vec<BoundingBox> = Vec::with_capacity(count);
    for _ in 0..count {
        let mut placed = false;
        for _ in 0..params.max_attempts {
            let w = rng.gen_range(params.size_range.0..=params.size_range.1);
            let h = rng.gen_range(params.size_range.0..=params.size_range.1);
            if w > params.width || h > params.height {
                continue;
            }
            let x1 = rng.gen_range(0..=params.width - w);
            let y1 = rng.gen_range(0..=params.height - h);
            let candidate =
                BoundingBox::new(x1 as u32, y1 as u32, (x1 + w - 1) as u32, (y1 + h - 1) as u32)?;
            if boxes.iter().all(|b| separated(b, &candidate, params.separation as u32)) {
                boxes.push(candidate);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::Gen(format!(
                "could not place {count} objects of size {:?} in a {}x{} canvas",
                params.size_range, params.height, params.width
            )));
        }
    }

    let mut labels = vec![0u16; params.height * params.width];
    for (i, b) in boxes.iter().enumerate() {
        let label = params.class_label + i as u16 * params.class_stride;
        for y in b.y1..=b.y2 {
            for x in b.x1..=b.x2 {
                labels[y as usize * params.width + x as usize] = label;
            }
        }
    }

    let gt_points = boxes
        .iter()
        .map(|b| ((b.x1 + b.x2) / 2, (b.y1 + b.y2) / 2))
        .collect();

    let mut by_area: Vec<usize> = (0..boxes.len()).collect();
    by_area.sort_by_key(|&i| (std::cmp::Reverse(boxes[i].area()), i));
    let exemplar_boxes = by_area.iter().take(3).map(|&i| boxes[i]).collect();

    Ok(Scene {
        image: SourceImage::from_labels(params.height, params.width, labels, id)?,
        object_boxes: boxes,
        exemplar_boxes,
        gt_points,
    })
}

fn validate(params: &SceneParams) -> Result<()> {
    if params.count_range.0 == 0 || params.count_range.0 > params.count_range.1 {
        return Err(Error::Gen(format!("bad count range {:?}", params.count_range)));
    }
    if params.size_range.0 == 0 || params.size_range.0 > params.size_range.1 {
        return Err(Error::Gen(format!("bad size range {:?}", params.size_range)));
    }
    if params.size_range.1 > params.width || params.size_range.1 > params.height {
        return Err(Error::Gen("objects larger than the canvas".into()));
    }
    if params.class_label == 0 {
        return Err(Error::Gen("class label must be nonzero".into()));
    }
    let max_label =
        params.class_label as u64 + (params.count_range.1 as u64 - 1) * params.class_stride as u64;
    if max_label > u16::MAX as u64 {
        return Err(Error::Gen("label range exceeds 16 bits".into()));
    }
    Ok(())
}

/// True when the boxes are at least `separation` pixels apart on some axis.
fn separated(a: &BoundingBox, b: &BoundingBox, separation: u32) -> bool {
    let gap_x = if a.x2 < b.x1 {
        b.x1 - a.x2 - 1
    } else if b.x2 < a.x1 {
        a.x1 - b.x2 - 1
    } else {
        return gap_y_only(a, b, separation);
    };
    if gap_x >= separation {
        return true;
    }
    gap_y_only(a, b, separation)
}

fn gap_y_only(a: &BoundingBox, b: &BoundingBox, separation: u32) -> bool {
    let gap_y = if a.y2 < b.y1 {
        b.y1 - a.y2 - 1
    } else if b.y2 < a.y1 {
        a.y1 - b.y2 - 1
    } else {
        return false;
    };
    gap_y >= separation
}
