//! Grid, mask, and box primitives shared by every stage of the pipeline.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Dense row-major grid of finite reals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealGrid {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl RealGrid {
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != height * width {
            return Err(Error::Shape(format!(
                "grid {}x{} expects {} values, got {}",
                height,
                width,
                height * width,
                values.len()
            )));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Shape("grid contains non-finite values".into()));
        }
        Ok(Self { height, width, values })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self { height, width, values: vec![0.0; height * width] }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, y: usize, x: usize) -> f64 {
        self.values[y * self.width + x]
    }

    pub fn set(&mut self, y: usize, x: usize, v: f64) {
        self.values[y * self.width + x] = v;
    }

    pub fn same_shape(&self, other: &RealGrid) -> bool {
        self.height == other.height && self.width == other.width
    }

    /// Min-max normalization into `[0, 1]`. A constant grid maps to all zeros.
    pub fn normalized(&self) -> RealGrid {
        let min = self.values.iter().cloned().fold(f64::INFINITY, f64::min);
        let max = self.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let values = if max == min {
            vec![0.0; self.values.len()]
        } else {
            let span = max - min;
            self.values.iter().map(|v| (v - min) / span).collect()
        };
        RealGrid { height: self.height, width: self.width, values }
    }

    /// Binarize a `[0, 1]` grid: bit is set where value `>= t`.
    pub fn threshold(&self, t: f64) -> Result<BinaryMask> {
        if !(0.0..=1.0).contains(&t) {
            return Err(Error::Config(format!("threshold {t} outside [0, 1]")));
        }
        let bits = self.values.iter().map(|&v| u8::from(v >= t)).collect();
        Ok(BinaryMask { height: self.height, width: self.width, bits })
    }
}

/// Per-pixel foreground indicator.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    bits: Vec<u8>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, bits: Vec<u8>) -> Result<Self> {
        if bits.len() != height * width {
            return Err(Error::Shape(format!(
                "mask {}x{} expects {} bits, got {}",
                height,
                width,
                height * width,
                bits.len()
            )));
        }
        if bits.iter().any(|&b| b > 1) {
            return Err(Error::Shape("mask bits must be 0 or 1".into()));
        }
        Ok(Self { height, width, bits })
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Self { height, width, bits: vec![0; height * width] }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.bits[y * self.width + x] == 1
    }

    pub fn set(&mut self, y: usize, x: usize, on: bool) {
        self.bits[y * self.width + x] = u8::from(on);
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().map(|&b| b as usize).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.iter().all(|&b| b == 0)
    }

    pub fn same_shape(&self, other: &BinaryMask) -> bool {
        self.height == other.height && self.width == other.width
    }

    /// In-place union with another mask of the same shape.
    pub fn union_with(&mut self, other: &BinaryMask) -> Result<()> {
        if !self.same_shape(other) {
            return Err(Error::Shape("union over mismatched mask shapes".into()));
        }
        for (a, b) in self.bits.iter_mut().zip(&other.bits) {
            *a |= b;
        }
        Ok(())
    }

    /// Bits set here and clear in `other`.
    pub fn and_not(&self, other: &BinaryMask) -> Result<BinaryMask> {
        if !self.same_shape(other) {
            return Err(Error::Shape("and_not over mismatched mask shapes".into()));
        }
        let bits = self
            .bits
            .iter()
            .zip(&other.bits)
            .map(|(&a, &b)| a & (1 - b))
            .collect();
        Ok(BinaryMask { height: self.height, width: self.width, bits })
    }

    /// Tightest inclusive box containing every set bit.
    pub fn min_bounding_box(&self) -> Result<BoundingBox> {
        let mut bounds: Option<(usize, usize, usize, usize)> = None;
        for y in 0..self.height {
            for x in 0..self.width {
                if self.get(y, x) {
                    bounds = Some(match bounds {
                        None => (x, y, x, y),
                        Some((x1, y1, x2, y2)) => {
                            (x1.min(x), y1.min(y), x2.max(x), y2.max(y))
                        }
                    });
                }
            }
        }
        let (x1, y1, x2, y2) = bounds.ok_or(Error::EmptyMask)?;
        Ok(BoundingBox {
            x1: x1 as u32,
            y1: y1 as u32,
            x2: x2 as u32,
            y2: y2 as u32,
        })
    }

    /// 4-connected components, each returned as a full-size mask.
    pub fn connected_components(&self) -> Vec<BinaryMask> {
        let mut seen = vec![false; self.bits.len()];
        let mut components = Vec::new();
        let mut queue = Vec::new();
        for start in 0..self.bits.len() {
            if self.bits[start] == 0 || seen[start] {
                continue;
            }
            let mut component = BinaryMask::empty(self.height, self.width);
            queue.push(start);
            seen[start] = true;
            while let Some(idx) = queue.pop() {
                component.bits[idx] = 1;
                let y = idx / self.width;
                let x = idx % self.width;
                let mut visit = |ny: usize, nx: usize| {
                    let nidx = ny * self.width + nx;
                    if self.bits[nidx] == 1 && !seen[nidx] {
                        seen[nidx] = true;
                        queue.push(nidx);
                    }
                };
                if y > 0 {
                    visit(y - 1, x);
                }
                if y + 1 < self.height {
                    visit(y + 1, x);
                }
                if x > 0 {
                    visit(y, x - 1);
                }
                if x + 1 < self.width {
                    visit(y, x + 1);
                }
            }
            components.push(component);
        }
        components
    }

    /// Area-coverage downsampling: a target bit is set when at least half of
    /// the covered source area is foreground.
    pub fn downsample(&self, target_h: usize, target_w: usize) -> Result<BinaryMask> {
        if target_h == 0 || target_w == 0 || target_h > self.height || target_w > self.width {
            return Err(Error::Shape(format!(
                "cannot downsample {}x{} mask to {}x{}",
                self.height, self.width, target_h, target_w
            )));
        }
        if target_h == self.height && target_w == self.width {
            return Ok(self.clone());
        }
        let sy = self.height as f64 / target_h as f64;
        let sx = self.width as f64 / target_w as f64;
        let mut out = BinaryMask::empty(target_h, target_w);
        for ty in 0..target_h {
            let y0 = ty as f64 * sy;
            let y1 = (ty + 1) as f64 * sy;
            for tx in 0..target_w {
                let x0 = tx as f64 * sx;
                let x1 = (tx + 1) as f64 * sx;
                let mut fg = 0.0;
                let mut total = 0.0;
                for y in y0.floor() as usize..(y1.ceil() as usize).min(self.height) {
                    let hy = (y1.min((y + 1) as f64) - y0.max(y as f64)).max(0.0);
                    for x in x0.floor() as usize..(x1.ceil() as usize).min(self.width) {
                        let hx = (x1.min((x + 1) as f64) - x0.max(x as f64)).max(0.0);
                        let area = hy * hx;
                        total += area;
                        if self.get(y, x) {
                            fg += area;
                        }
                    }
                }
                if total > 0.0 && fg / total >= 0.5 {
                    out.set(ty, tx, true);
                }
            }
        }
        Ok(out)
    }
}

/// Intersection over union of two same-shape masks; 1.0 when both are empty.
pub fn mask_iou(a: &BinaryMask, b: &BinaryMask) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::Shape("mask_iou over mismatched shapes".into()));
    }
    let mut inter = 0usize;
    let mut union = 0usize;
    for (&x, &y) in a.bits.iter().zip(&b.bits) {
        inter += (x & y) as usize;
        union += (x | y) as usize;
    }
    if union == 0 {
        Ok(1.0)
    } else {
        Ok(inter as f64 / union as f64)
    }
}

/// Axis-aligned box with inclusive integer pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x1: u32,
    pub y1: u32,
    pub x2: u32,
    pub y2: u32,
}

impl BoundingBox {
    pub fn new(x1: u32, y1: u32, x2: u32, y2: u32) -> Result<Self> {
        if x2 < x1 || y2 < y1 {
            return Err(Error::Config(format!(
                "degenerate box ({x1},{y1})-({x2},{y2})"
            )));
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    /// Inclusive pixel area: a single-pixel box has area 1.
    pub fn area(&self) -> u64 {
        (self.x2 - self.x1 + 1) as u64 * (self.y2 - self.y1 + 1) as u64
    }

    pub fn iou(&self, other: &BoundingBox) -> f64 {
        let ix1 = self.x1.max(other.x1);
        let iy1 = self.y1.max(other.y1);
        let ix2 = self.x2.min(other.x2);
        let iy2 = self.y2.min(other.y2);
        if ix2 < ix1 || iy2 < iy1 {
            return 0.0;
        }
        let inter = (ix2 - ix1 + 1) as u64 * (iy2 - iy1 + 1) as u64;
        let union = self.area() + other.area() - inter;
        inter as f64 / union as f64
    }
}

/// Role a point prompt plays in the dual prompt system.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptKind {
    /// Lattice point over the binarized composite similarity map.
    Matrix,
    /// Representative of a foreground blob not yet covered by any mask.
    Residual,
}

/// A point prompt in source-image pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PointPrompt {
    pub x: u32,
    pub y: u32,
    pub kind: PromptKind,
}
