//! Raster data model.
//!
//! All rasters are row-major with the origin at the top-left pixel and `y`
//! growing downward; pixel `(x, y)` lives at index `y * width + x`. Every
//! constructor validates the type's invariants, so a value of any of these
//! types is always well formed.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const LABEL_ID: u8 = 0;
pub const LABEL_OOD: u8 = 1;
pub const LABEL_IGNORE: u8 = 255;

fn check_dims(width: usize, height: usize, len: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidDimensions { width, height });
    }
    let expected = width
        .checked_mul(height)
        .ok_or(Error::InvalidDimensions { width, height })?;
    if expected != len {
        return Err(Error::Input(format!(
            "{width}x{height} raster needs {expected} values, got {len}"
        )));
    }
    Ok(())
}

/// Read access to a raster of real-valued scores, widened to `f64`.
pub trait ScoreRaster {
    fn width(&self) -> usize;
    fn height(&self) -> usize;
    fn score(&self, index: usize) -> f64;

    fn dims(&self) -> (usize, usize) {
        (self.width(), self.height())
    }

    fn len(&self) -> usize {
        self.width() * self.height()
    }

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn scores_f64(&self) -> Vec<f64> {
        (0..self.len()).map(|i| self.score(i)).collect()
    }
}

/// Per-pixel anomaly scores; higher means more likely out-of-distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMap {
    width: usize,
    height: usize,
    values: Vec<f32>,
}

impl ScoreMap {
    pub fn new(width: usize, height: usize, values: Vec<f32>) -> Result<Self> {
        check_dims(width, height, values.len())?;
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(ScoreMap {
            width,
            height,
            values,
        })
    }

    /// Narrows `f64` scores to the stored `f32` precision.
    pub fn from_f64(width: usize, height: usize, values: &[f64]) -> Result<Self> {
        Self::new(width, height, values.iter().map(|&v| v as f32).collect())
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Result<Self> {
        let len = width
            .checked_mul(height)
            .ok_or(Error::InvalidDimensions { width, height })?;
        Self::new(width, height, vec![value; len])
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.values[y * self.width + x]
    }

    pub fn into_values(self) -> Vec<f32> {
        self.values
    }

    /// Minimum and maximum score.
    pub fn range(&self) -> (f32, f32) {
        self.values
            .iter()
            .fold((f32::INFINITY, f32::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Applies `f` to every value, rejecting non-finite results.
    pub fn map(&self, mut f: impl FnMut(f32) -> f32) -> Result<Self> {
        Self::new(self.width, self.height, self.values.iter().map(|&v| f(v)).collect())
    }
}

impl ScoreRaster for ScoreMap {
    fn width(&self) -> usize {
        self.width
    }
    fn height(&self) -> usize {
        self.height
    }
    fn score(&self, index: usize) -> f64 {
        f64::from(self.values[index])
    }
}

/// Ternary ground truth: [`LABEL_ID`], [`LABEL_OOD`] or [`LABEL_IGNORE`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMask {
    width: usize,
    height: usize,
    values: Vec<u8>,
}

impl LabelMask {
    pub fn new(width: usize, height: usize, values: Vec<u8>) -> Result<Self> {
        check_dims(width, height, values.len())?;
        if let Some((index, &value)) = values
            .iter()
            .enumerate()
            .find(|(_, &v)| !matches!(v, LABEL_ID | LABEL_OOD | LABEL_IGNORE))
        {
            return Err(Error::InvalidLabel { index, value });
        }
        Ok(LabelMask {
            width,
            height,
            values,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Result<Self> {
        let len = width
            .checked_mul(height)
            .ok_or(Error::InvalidDimensions { width, height })?;
        Self::new(width, height, vec![LABEL_ID; len])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.values[y * self.width + x]
    }

    pub fn is_ood(&self, index: usize) -> bool {
        self.values[index] == LABEL_OOD
    }

    pub fn is_ignored(&self, index: usize) -> bool {
        self.values[index] == LABEL_IGNORE
    }

    pub fn ood_mask(&self) -> BinaryMask {
        BinaryMask {
            width: self.width,
            height: self.height,
            values: self.values.iter().map(|&v| v == LABEL_OOD).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    values: Vec<[u8; 3]>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, values: Vec<[u8; 3]>) -> Result<Self> {
        check_dims(width, height, values.len())?;
        Ok(RgbImage {
            width,
            height,
            values,
        })
    }

    pub fn filled(width: usize, height: usize, color: [u8; 3]) -> Result<Self> {
        let len = width
            .checked_mul(height)
            .ok_or(Error::InvalidDimensions { width, height })?;
        Self::new(width, height, vec![color; len])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn pixels(&self) -> &[[u8; 3]] {
        &self.values
    }

    pub fn get(&self, x: usize, y: usize) -> [u8; 3] {
        self.values[y * self.width + x]
    }

    pub(crate) fn set(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        self.values[y * self.width + x] = rgb;
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    values: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize, values: Vec<bool>) -> Result<Self> {
        check_dims(width, height, values.len())?;
        Ok(BinaryMask {
            width,
            height,
            values,
        })
    }

    pub fn empty(width: usize, height: usize) -> Result<Self> {
        let len = width
            .checked_mul(height)
            .ok_or(Error::InvalidDimensions { width, height })?;
        Self::new(width, height, vec![false; len])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn values(&self) -> &[bool] {
        &self.values
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.values[y * self.width + x]
    }

    pub(crate) fn set_index(&mut self, index: usize, on: bool) {
        self.values[index] = on;
    }

    pub fn count(&self) -> usize {
        self.values.iter().filter(|&&v| v).count()
    }

    pub fn is_clear(&self) -> bool {
        !self.values.contains(&true)
    }
}

/// Class-major logits: value of class `c` at pixel `i` is at `c * H * W + i`.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitStack {
    classes: usize,
    width: usize,
    height: usize,
    values: Vec<f32>,
}

impl LogitStack {
    pub fn new(classes: usize, width: usize, height: usize, values: Vec<f32>) -> Result<Self> {
        if classes < 2 {
            return Err(Error::Input(format!(
                "logit stack needs at least 2 classes, got {classes}"
            )));
        }
        let plane = width
            .checked_mul(height)
            .ok_or(Error::InvalidDimensions { width, height })?;
        check_dims(width, height, plane)?;
        let expected = plane
            .checked_mul(classes)
            .ok_or(Error::InvalidDimensions { width, height })?;
        if expected != values.len() {
            return Err(Error::Input(format!(
                "{classes}x{height}x{width} logits need {expected} values, got {}",
                values.len()
            )));
        }
        if let Some(index) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { index });
        }
        Ok(LogitStack {
            classes,
            width,
            height,
            values,
        })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    /// Logits of every class at one pixel.
    pub fn pixel(&self, index: usize) -> impl Iterator<Item = f64> + '_ {
        let plane = self.width * self.height;
        (0..self.classes).map(move |c| f64::from(self.values[c * plane + index]))
    }
}

/// Axis-aligned box prompt. `x0`/`y0` are inclusive, `x1`/`y1` exclusive.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxPrompt {
    pub x0: usize,
    pub y0: usize,
    pub x1: usize,
    pub y1: usize,
    pub confidence: f64,
}

impl BoxPrompt {
    /// Builds a box and checks it against a `width`x`height` frame.
    pub fn new(
        x0: usize,
        y0: usize,
        x1: usize,
        y1: usize,
        confidence: f64,
        width: usize,
        height: usize,
    ) -> Result<Self> {
        let b = BoxPrompt {
            x0,
            y0,
            x1,
            y1,
            confidence,
        };
        b.validate(width, height)?;
        Ok(b)
    }

    pub fn validate(&self, width: usize, height: usize) -> Result<()> {
        if !(self.x0 < self.x1 && self.x1 <= width && self.y0 < self.y1 && self.y1 <= height) {
            return Err(Error::InvalidBox {
                x0: self.x0 as i64,
                y0: self.y0 as i64,
                x1: self.x1 as i64,
                y1: self.y1 as i64,
                width,
                height,
            });
        }
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(Error::InvalidConfidence(self.confidence));
        }
        Ok(())
    }

    pub fn width(&self) -> usize {
        self.x1 - self.x0
    }

    pub fn height(&self) -> usize {
        self.y1 - self.y0
    }

    pub fn area(&self) -> usize {
        self.width() * self.height()
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        (self.x0..self.x1).contains(&x) && (self.y0..self.y1).contains(&y)
    }

    pub fn intersection_area(&self, other: &BoxPrompt) -> usize {
        let w = self.x1.min(other.x1).saturating_sub(self.x0.max(other.x0));
        let h = self.y1.min(other.y1).saturating_sub(self.y0.max(other.y0));
        w * h
    }

    /// Intersection over union of the two pixel rectangles.
    pub fn iou(&self, other: &BoxPrompt) -> f64 {
        let inter = self.intersection_area(other);
        let union = self.area() + other.area() - inter;
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }

    /// Smallest box covering both; keeps `self`'s confidence.
    pub fn hull(&self, other: &BoxPrompt) -> BoxPrompt {
        BoxPrompt {
            x0: self.x0.min(other.x0),
            y0: self.y0.min(other.y0),
            x1: self.x1.max(other.x1),
            y1: self.y1.max(other.y1),
            confidence: self.confidence,
        }
    }
}

/// Final pipeline output. A value of 0 marks an in-distribution pixel; any
/// positive value is the confidence of the OoD mask covering it.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfidenceMap {
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl ConfidenceMap {
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        check_dims(width, height, values.len())?;
        if let Some(&v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidConfidence(v));
        }
        Ok(ConfidenceMap {
            width,
            height,
            values,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Result<Self> {
        let len = width
            .checked_mul(height)
            .ok_or(Error::InvalidDimensions { width, height })?;
        Self::new(width, height, vec![0.0; len])
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.values[y * self.width + x]
    }

    /// The confidence map stored at score precision.
    pub fn to_score_map(&self) -> ScoreMap {
        ScoreMap {
            width: self.width,
            height: self.height,
            values: self.values.iter().map(|&v| v as f32).collect(),
        }
    }
}

impl ScoreRaster for ConfidenceMap {
    fn width(&self) -> usize {
        self.width
    }
    fn height(&self) -> usize {
        self.height
    }
    fn score(&self, index: usize) -> f64 {
        self.values[index]
    }
}
