//! Masks from box prompts, and their fusion into a confidence map.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::read_binary_mask;
use crate::raster::{BinaryMask, BoxPrompt, ConfidenceMap, ScoreMap, ScoreRaster};
use crate::scoring::normalized_f64;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SegmenterConfig {
    /// Growth level as a fraction of the seed's normalized score.
    pub alpha: f64,
    /// Box expansion per side, as a fraction of the box width and height.
    pub margin: f64,
}

impl Default for SegmenterConfig {
    fn default() -> Self {
        SegmenterConfig {
            alpha: 0.5,
            margin: 0.1,
        }
    }
}

impl SegmenterConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::Config(format!("alpha must be in (0,1], got {}", self.alpha)));
        }
        if !(self.margin >= 0.0 && self.margin.is_finite()) {
            return Err(Error::Config(format!("margin must be >= 0, got {}", self.margin)));
        }
        Ok(())
    }
}

/// A mask produced for one prompt, carrying that prompt's confidence.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptMask {
    pub mask: BinaryMask,
    pub confidence: f64,
}

impl PromptMask {
    pub fn new(mask: BinaryMask, confidence: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&confidence) {
            return Err(Error::InvalidConfidence(confidence));
        }
        Ok(PromptMask { mask, confidence })
    }
}

/// `bbox` grown by `margin` times its size on every side, clamped to the frame.
pub fn expanded_region(bbox: &BoxPrompt, margin: f64, width: usize, height: usize) -> BoxPrompt {
    let dx = margin * bbox.width() as f64;
    let dy = margin * bbox.height() as f64;
    BoxPrompt {
        x0: (bbox.x0 as f64 - dx).floor().max(0.0) as usize,
        y0: (bbox.y0 as f64 - dy).floor().max(0.0) as usize,
        x1: ((bbox.x1 as f64 + dx).ceil() as usize).min(width),
        y1: ((bbox.y1 as f64 + dy).ceil() as usize).min(height),
        confidence: bbox.confidence,
    }
}

/// Region growing on an already normalized score raster.
pub(crate) fn segment_normalized(
    norm: &[f64],
    width: usize,
    height: usize,
    bbox: &BoxPrompt,
    cfg: &SegmenterConfig,
) -> Result<PromptMask> {
    cfg.validate()?;
    bbox.validate(width, height)?;

    // highest score in the original box; ties go to the smallest (y, x)
    let mut seed = bbox.y0 * width + bbox.x0;
    for y in bbox.y0..bbox.y1 {
        for x in bbox.x0..bbox.x1 {
            let i = y * width + x;
            if norm[i] > norm[seed] {
                seed = i;
            }
        }
    }

    let mut mask = BinaryMask::empty(width, height)?;
    mask.set_index(seed, true);
    let seed_score = norm[seed];
    if seed_score > 0.0 {
        let level = cfg.alpha * seed_score;
        let region = expanded_region(bbox, cfg.margin, width, height);
        let mut stack = vec![seed];
        while let Some(i) = stack.pop() {
            let (x, y) = (i % width, i / width);
            let mut visit = |nx: usize, ny: usize| {
                let j = ny * width + nx;
                if region.contains(nx, ny) && !mask.values()[j] && norm[j] >= level {
                    mask.set_index(j, true);
                    stack.push(j);
                }
            };
            if x > 0 {
                visit(x - 1, y);
            }
            if x + 1 < width {
                visit(x + 1, y);
            }
            if y > 0 {
                visit(x, y - 1);
            }
            if y + 1 < height {
                visit(x, y + 1);
            }
        }
    }
    PromptMask::new(mask, bbox.confidence)
}

/// Reference promptable segmentation.
///
/// Starting from the highest-scoring pixel inside `bbox` (per-image
/// normalized scores), grows a 4-connected region over pixels of the
/// margin-expanded box whose normalized score is at least `alpha` times the
/// seed's. A seed with score 0 yields just the seed pixel. The mask inherits
/// the box confidence.
pub fn segment_with_box(
    map: &ScoreMap,
    bbox: &BoxPrompt,
    cfg: &SegmenterConfig,
) -> Result<PromptMask> {
    let norm = normalized_f64(map);
    segment_normalized(&norm, map.width(), map.height(), bbox, cfg)
}

/// Segments every box against the same map.
pub fn segment_all(
    map: &ScoreMap,
    boxes: &[BoxPrompt],
    cfg: &SegmenterConfig,
) -> Result<Vec<PromptMask>> {
    let norm = normalized_f64(map);
    boxes
        .iter()
        .map(|b| segment_normalized(&norm, map.width(), map.height(), b, cfg))
        .collect()
}

/// Union of all mask supports. Each covered pixel takes the lowest
/// confidence among the masks covering it; uncovered pixels are 0.
pub fn fuse_masks(masks: &[PromptMask], width: usize, height: usize) -> Result<ConfidenceMap> {
    let mut values = vec![0.0f64; width * height];
    let mut covered = vec![false; width * height];
    for m in masks {
        if m.mask.dims() != (width, height) {
            return Err(Error::DimensionMismatch {
                expected: (width, height),
                found: m.mask.dims(),
            });
        }
        for (i, _) in m.mask.values().iter().enumerate().filter(|(_, &on)| on) {
            if !covered[i] || m.confidence < values[i] {
                values[i] = m.confidence;
            }
            covered[i] = true;
        }
    }
    ConfidenceMap::new(width, height, values)
}

/// Threshold-free final mask: set exactly where the confidence is positive.
pub fn binarize_confidence(map: &ConfidenceMap) -> BinaryMask {
    BinaryMask::new(
        map.width(),
        map.height(),
        map.values().iter().map(|&v| v > 0.0).collect(),
    )
    .expect("dimensions come from a valid map")
}

#[derive(Deserialize)]
#[serde(untagged)]
enum ConfidenceFile {
    Bare(Vec<f64>),
    Keyed { confidences: Vec<f64> },
}

/// Reads index-aligned confidences: a JSON array, or `{"confidences": [...]}`.
pub fn read_confidences(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let file: ConfidenceFile =
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
    Ok(match file {
        ConfidenceFile::Bare(v) | ConfidenceFile::Keyed { confidences: v } => v,
    })
}

/// Pairs mask images with their confidences. When `dims` is given every mask
/// must have exactly that size; otherwise all masks must agree.
pub fn read_masks(
    paths: &[PathBuf],
    confidences: &[f64],
    dims: Option<(usize, usize)>,
) -> Result<Vec<PromptMask>> {
    if paths.len() != confidences.len() {
        return Err(Error::Input(format!(
            "{} masks but {} confidences",
            paths.len(),
            confidences.len()
        )));
    }
    let mut expected = dims;
    paths
        .iter()
        .zip(confidences)
        .map(|(path, &c)| {
            let mask = read_binary_mask(path)?;
            match expected {
                Some(d) if d != mask.dims() => {
                    return Err(Error::DimensionMismatch {
                        expected: d,
                        found: mask.dims(),
                    }
                    .in_file(path))
                }
                None => expected = Some(mask.dims()),
                _ => {}
            }
            PromptMask::new(mask, c).map_err(|e| e.in_file(path))
        })
        .collect()
}

/// Reads every `.png`/`.pgm` in `dir` (sorted by file name) together with
/// the confidence file.
pub fn read_mask_dir(
    dir: impl AsRef<Path>,
    confidences: impl AsRef<Path>,
    dims: Option<(usize, usize)>,
) -> Result<Vec<PromptMask>> {
    let dir = dir.as_ref();
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            p.extension()
                .and_then(|e| e.to_str())
                .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "pgm"))
        })
        .collect();
    paths.sort();
    read_masks(&paths, &read_confidences(confidences)?, dims)
}
