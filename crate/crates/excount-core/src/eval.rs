//! Evaluation harness: annotation ingestion, MAE/RMSE, density buckets, and
//! λ sweeps over a record set.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backend::{load_label_map_png, SegmentationBackend};
use crate::counter::{iterate_count, CountingConfig};
use crate::error::{Error, Result};
use crate::grid::BoundingBox;

/// One annotated image: exemplar boxes plus ground-truth points.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AnnotationRecord {
    pub image_path: PathBuf,
    pub exemplar_boxes: Vec<BoundingBox>,
    pub gt_points: Vec<(u32, u32)>,
}

impl AnnotationRecord {
    pub fn gt_count(&self) -> usize {
        self.gt_points.len()
    }
}

/// Default count-range edges for density bucketing.
pub const DEFAULT_DENSITY_EDGES: [u64; 4] = [0, 10, 30, 70];

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DensityBucket {
    /// Half-open count range `[lo, hi)`; `hi` is absent for the last bucket.
    pub lo: u64,
    pub hi: Option<u64>,
    pub n: usize,
    /// Absent when the bucket holds no images.
    pub mae: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PerImageResult {
    pub id: String,
    pub gt: u64,
    pub pred: u64,
    pub rounds_run: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    pub n: usize,
    pub mae: f64,
    pub rmse: f64,
    pub lambda: f64,
    pub config: CountingConfig,
    pub buckets: Vec<DensityBucket>,
    pub per_image: Vec<PerImageResult>,
    /// Images excluded from the aggregates, with the failure reason.
    pub errors: Vec<(String, String)>,
}

/// Mean absolute error between ground-truth and predicted counts.
pub fn mae(gt: &[u64], pred: &[u64]) -> Result<f64> {
    check_pair(gt, pred)?;
    let sum: f64 = gt
        .iter()
        .zip(pred)
        .map(|(&c, &p)| (c as f64 - p as f64).abs())
        .sum();
    Ok(sum / gt.len() as f64)
}

/// Root mean squared error between ground-truth and predicted counts.
pub fn rmse(gt: &[u64], pred: &[u64]) -> Result<f64> {
    check_pair(gt, pred)?;
    let sum: f64 = gt
        .iter()
        .zip(pred)
        .map(|(&c, &p)| (c as f64 - p as f64).powi(2))
        .sum();
    Ok((sum / gt.len() as f64).sqrt())
}

fn check_pair(gt: &[u64], pred: &[u64]) -> Result<()> {
    if gt.is_empty() {
        return Err(Error::Eval("metric over zero images".into()));
    }
    if gt.len() != pred.len() {
        return Err(Error::Eval(format!(
            "length mismatch: {} ground-truth vs {} predicted",
            gt.len(),
            pred.len()
        )));
    }
    Ok(())
}

#[derive(Debug, Deserialize)]
struct RawAnnotation {
    image: String,
    exemplar_boxes: Vec<[i64; 4]>,
    points: Vec<[i64; 2]>,
}

/// Load the canonical annotation JSON: a list of
/// `{"image": path, "exemplar_boxes": [[x1,y1,x2,y2], ...], "points": [[x,y], ...]}`.
pub fn load_annotations(path: &Path) -> Result<Vec<AnnotationRecord>> {
    let text = std::fs::read_to_string(path)?;
    let raw: Vec<RawAnnotation> = serde_json::from_str(&text).map_err(|e| Error::Parse {
        index: 0,
        message: e.to_string(),
    })?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let mut records = Vec::with_capacity(raw.len());
    for (index, r) in raw.into_iter().enumerate() {
        if r.exemplar_boxes.is_empty() {
            return Err(Error::Parse {
                index,
                message: "record has no exemplar boxes".into(),
            });
        }
        let mut boxes = Vec::with_capacity(r.exemplar_boxes.len());
        for [x1, y1, x2, y2] in r.exemplar_boxes {
            if x1 < 0 || y1 < 0 {
                return Err(Error::Parse {
                    index,
                    message: format!("negative box coordinate ({x1},{y1})"),
                });
            }
            let bbox = BoundingBox::new(x1 as u32, y1 as u32, x2.max(0) as u32, y2.max(0) as u32)
                .map_err(|e| Error::Parse { index, message: e.to_string() })?;
            if x2 < x1 || y2 < y1 {
                return Err(Error::Parse {
                    index,
                    message: format!("inverted box ({x1},{y1})-({x2},{y2})"),
                });
            }
            boxes.push(bbox);
        }
        let mut points = Vec::with_capacity(r.points.len());
        for [x, y] in r.points {
            if x < 0 || y < 0 {
                return Err(Error::Parse {
                    index,
                    message: format!("negative point ({x},{y})"),
                });
            }
            points.push((x as u32, y as u32));
        }
        let image_path = {
            let p = PathBuf::from(&r.image);
            if p.is_absolute() {
                p
            } else {
                base.join(p)
            }
        };
        records.push(AnnotationRecord { image_path, exemplar_boxes: boxes, gt_points: points });
    }
    Ok(records)
}

/// Bucket per-image results by ground-truth count over half-open ranges
/// `[e_i, e_{i+1})`, with the last bucket open-ended.
pub fn density_buckets(per_image: &[PerImageResult], edges: &[u64]) -> Result<Vec<DensityBucket>> {
    if edges.is_empty() {
        return Err(Error::Config("density bucketing needs at least one edge".into()));
    }
    if edges.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::Config("density edges must be strictly increasing".into()));
    }
    let mut buckets: Vec<DensityBucket> = edges
        .iter()
        .enumerate()
        .map(|(i, &lo)| DensityBucket {
            lo,
            hi: edges.get(i + 1).copied(),
            n: 0,
            mae: None,
        })
        .collect();
    let mut abs_err: Vec<f64> = vec![0.0; buckets.len()];
    for r in per_image {
        let idx = match buckets.iter().rposition(|b| r.gt >= b.lo) {
            Some(i) => i,
            None => continue, // below the first edge
        };
        buckets[idx].n += 1;
        abs_err[idx] += (r.gt as f64 - r.pred as f64).abs();
    }
    for (b, err) in buckets.iter_mut().zip(abs_err) {
        if b.n > 0 {
            b.mae = Some(err / b.n as f64);
        }
    }
    Ok(buckets)
}

/// Evaluate every record with the given config. Per-image failures are
/// excluded from the aggregates and listed in the report.
pub fn run_eval(
    records: &[AnnotationRecord],
    cfg: &CountingConfig,
    backend: &dyn SegmentationBackend,
    edges: &[u64],
) -> Result<EvalReport> {
    if records.is_empty() {
        return Err(Error::Eval("no records to evaluate".into()));
    }
    cfg.validate()?;
    let outcomes: Vec<std::result::Result<PerImageResult, (String, String)>> = records
        .par_iter()
        .map(|rec| {
            let id = rec
                .image_path
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| rec.image_path.display().to_string());
            let run = || -> Result<PerImageResult> {
                let image = load_label_map_png(&rec.image_path)?;
                let result = iterate_count(&image, &rec.exemplar_boxes, cfg, backend)?;
                Ok(PerImageResult {
                    id: image.id,
                    gt: rec.gt_count() as u64,
                    pred: result.count as u64,
                    rounds_run: result.rounds_run,
                })
            };
            run().map_err(|e| (id, e.to_string()))
        })
        .collect();

    let mut per_image = Vec::new();
    let mut errors = Vec::new();
    for o in outcomes {
        match o {
            Ok(r) => per_image.push(r),
            Err(e) => errors.push(e),
        }
    }
    if per_image.is_empty() {
        return Err(Error::Eval(format!(
            "every image failed; first error: {}",
            errors.first().map(|(_, m)| m.as_str()).unwrap_or("none")
        )));
    }
    let gt: Vec<u64> = per_image.iter().map(|r| r.gt).collect();
    let pred: Vec<u64> = per_image.iter().map(|r| r.pred).collect();
    Ok(EvalReport {
        n: per_image.len(),
        mae: mae(&gt, &pred)?,
        rmse: rmse(&gt, &pred)?,
        lambda: cfg.lambda,
        config: cfg.clone(),
        buckets: density_buckets(&per_image, edges)?,
        per_image,
        errors,
    })
}

/// Run one evaluation per λ value, keeping everything else fixed.
pub fn run_eval_sweep(
    records: &[AnnotationRecord],
    cfg: &CountingConfig,
    backend: &dyn SegmentationBackend,
    edges: &[u64],
    lambdas: &[f64],
) -> Result<Vec<EvalReport>> {
    lambdas
        .iter()
        .map(|&lambda| {
            let swept = CountingConfig { lambda, ..cfg.clone() };
            run_eval(records, &swept, backend, edges)
        })
        .collect()
}
