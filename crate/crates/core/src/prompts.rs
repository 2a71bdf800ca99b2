//! Box prompts from anomaly-score maps.
//!
//! [`generate_prompts`] is a deterministic reference generator: it needs no
//! trained detector and no absolute score threshold. Prompts produced by an
//! external detector enter through [`read_prompts`].

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::components::{self, Connectivity};
use crate::error::{Error, Result};
use crate::raster::{BoxPrompt, ScoreMap, ScoreRaster};
use crate::scoring::normalized_f64;
use crate::synth::image_rng;

/// Upper bound on merge passes; each productive pass removes at least one box.
pub const MAX_MERGE_ROUNDS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PromptGenConfig {
    /// Pixels whose normalized score is strictly above this quantile are foreground.
    pub quantile: f64,
    /// Components with fewer pixels are dropped.
    pub min_area: usize,
    /// Boxes overlapping by more than this IoU are merged.
    pub merge_iou: f64,
    pub connectivity: Connectivity,
}

impl Default for PromptGenConfig {
    fn default() -> Self {
        PromptGenConfig {
            quantile: 0.95,
            min_area: 16,
            merge_iou: 0.5,
            connectivity: Connectivity::Eight,
        }
    }
}

impl PromptGenConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.quantile > 0.0 && self.quantile < 1.0) {
            return Err(Error::Config(format!("quantile must be in (0,1), got {}", self.quantile)));
        }
        if !(0.0..=1.0).contains(&self.merge_iou) {
            return Err(Error::Config(format!("merge_iou must be in [0,1], got {}", self.merge_iou)));
        }
        Ok(())
    }
}

/// Multiplicative score noise: every score is scaled by `1 + u` with
/// `u ~ U(-amplitude, amplitude)` drawn independently per pixel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub amplitude: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(amplitude: f64, seed: u64) -> Result<Self> {
        let spec = NoiseSpec { amplitude, seed };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.amplitude >= 0.0 && self.amplitude < 1.0) {
            return Err(Error::Config(format!(
                "noise amplitude must be in [0,1), got {}",
                self.amplitude
            )));
        }
        Ok(())
    }
}

pub fn perturb_scores(map: &ScoreMap, spec: &NoiseSpec) -> Result<ScoreMap> {
    perturb_scores_with(map, spec.amplitude, &mut image_rng(spec.seed, 0))
}

/// [`perturb_scores`] drawing from a caller-supplied stream, one draw per
/// pixel in raster order.
pub fn perturb_scores_with<R: Rng + ?Sized>(
    map: &ScoreMap,
    amplitude: f64,
    rng: &mut R,
) -> Result<ScoreMap> {
    NoiseSpec { amplitude, seed: 0 }.validate()?;
    if amplitude == 0.0 {
        return Ok(map.clone());
    }
    map.map(|v| {
        let u: f64 = rng.gen_range(-amplitude..=amplitude);
        (f64::from(v) * (1.0 + u)) as f32
    })
}

/// Value at rank `floor(q * (n - 1))` of the ascending order.
fn quantile_value(values: &[f64], q: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let k = (q * (sorted.len() - 1) as f64).floor() as usize;
    sorted[k.min(sorted.len() - 1)]
}

#[derive(Debug, Clone)]
struct Candidate {
    bbox: BoxPrompt,
    score_sum: f64,
    pixels: usize,
}

impl Candidate {
    fn absorb(&mut self, other: Candidate) {
        self.bbox = self.bbox.hull(&other.bbox);
        self.score_sum += other.score_sum;
        self.pixels += other.pixels;
    }
}

/// Repeated passes: each box in turn absorbs every later box whose IoU with
/// it exceeds `threshold`, until a pass merges nothing.
fn merge_overlapping(mut boxes: Vec<Candidate>, threshold: f64) -> Vec<Candidate> {
    for _ in 0..MAX_MERGE_ROUNDS {
        let mut merged = false;
        let mut i = 0;
        while i < boxes.len() {
            let mut j = i + 1;
            while j < boxes.len() {
                if boxes[i].bbox.iou(&boxes[j].bbox) > threshold {
                    let other = boxes.remove(j);
                    boxes[i].absorb(other);
                    merged = true;
                    j = i + 1;
                } else {
                    j += 1;
                }
            }
            i += 1;
        }
        if !merged {
            break;
        }
    }
    boxes
}

/// Reference prompt generator.
///
/// 1. normalize the map to `[0,1]` with its own min and max;
/// 2. mark pixels strictly above the `quantile` of the normalized values;
/// 3. label connected components and drop those smaller than `min_area`;
/// 4. take the minimal box of each, in `(y0, x0)` order, and merge
///    overlapping boxes into their hull until nothing changes;
/// 5. set each box's confidence to the mean normalized score of the
///    component pixels it came from.
///
/// Boxes are returned by descending confidence. Only the ordering of the
/// scores matters for which boxes come out, so any strictly increasing
/// transform of the map yields the same boxes.
pub fn generate_prompts(map: &ScoreMap, cfg: &PromptGenConfig) -> Result<Vec<BoxPrompt>> {
    cfg.validate()?;
    let norm = normalized_f64(map);
    let threshold = quantile_value(&norm, cfg.quantile);
    let fg: Vec<bool> = norm.iter().map(|&v| v > threshold).collect();

    let mut candidates: Vec<Candidate> = components::label(&fg, map.width(), cfg.connectivity)
        .into_iter()
        .filter(|c| c.area() >= cfg.min_area)
        .map(|c| Candidate {
            bbox: BoxPrompt {
                x0: c.x0,
                y0: c.y0,
                x1: c.x1,
                y1: c.y1,
                confidence: 0.0,
            },
            score_sum: c.pixels.iter().map(|&i| norm[i]).sum(),
            pixels: c.area(),
        })
        .collect();
    candidates.sort_by_key(|c| (c.bbox.y0, c.bbox.x0, c.bbox.y1, c.bbox.x1));

    let mut boxes: Vec<BoxPrompt> = merge_overlapping(candidates, cfg.merge_iou)
        .into_iter()
        .map(|c| BoxPrompt {
            confidence: (c.score_sum / c.pixels as f64).clamp(0.0, 1.0),
            ..c.bbox
        })
        .collect();
    boxes.sort_by(|a, b| {
        b.confidence
            .total_cmp(&a.confidence)
            .then((a.y0, a.x0, a.y1, a.x1).cmp(&(b.y0, b.x0, b.y1, b.x1)))
    });
    Ok(boxes)
}

/// Prompt file contents: the frame size plus the boxes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSet {
    pub width: usize,
    pub height: usize,
    pub boxes: Vec<BoxPrompt>,
}

impl PromptSet {
    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidDimensions {
                width: self.width,
                height: self.height,
            });
        }
        self.boxes
            .iter()
            .try_for_each(|b| b.validate(self.width, self.height))
    }
}

pub fn read_prompts(path: impl AsRef<Path>) -> Result<PromptSet> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let set: PromptSet =
        serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))?;
    set.validate().map_err(|e| e.in_file(path))?;
    Ok(set)
}

pub fn write_prompts(set: &PromptSet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    set.validate()?;
    let text = serde_json::to_string_pretty(set).expect("prompt sets always serialize");
    fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn block_map() -> ScoreMap {
        let mut v = vec![0.0f32; 32 * 32];
        for y in 10..18 {
            for x in 5..13 {
                v[y * 32 + x] = 1.0;
            }
        }
        ScoreMap::new(32, 32, v).unwrap()
    }

    #[test]
    fn constant_map_has_no_prompts() {
        let m = ScoreMap::filled(16, 16, -3.0).unwrap();
        assert!(generate_prompts(&m, &PromptGenConfig::default()).unwrap().is_empty());
    }

    #[test]
    fn separable_block() {
        let cfg = PromptGenConfig {
            quantile: 0.9,
            ..PromptGenConfig::default()
        };
        let boxes = generate_prompts(&block_map(), &cfg).unwrap();
        assert_eq!(boxes.len(), 1);
        let b = boxes[0];
        assert_eq!((b.x0, b.y0, b.x1, b.y1, b.confidence), (5, 10, 13, 18, 1.0));
    }

    #[test]
    fn small_components_are_dropped() {
        let cfg = PromptGenConfig {
            quantile: 0.9,
            min_area: 65,
            ..PromptGenConfig::default()
        };
        assert!(generate_prompts(&block_map(), &cfg).unwrap().is_empty());
    }

    #[test]
    fn overlapping_boxes_merge() {
        // two L-shaped components whose boxes overlap heavily
        let mut v = vec![0.0f32; 20 * 20];
        for i in 2..12 {
            v[2 * 20 + i] = 1.0;
            v[i * 20 + 2] = 1.0;
            v[13 * 20 + (i + 1)] = 0.5;
            v[(i + 1) * 20 + 13] = 0.5;
        }
        let m = ScoreMap::new(20, 20, v).unwrap();
        let cfg = PromptGenConfig {
            quantile: 0.5,
            min_area: 4,
            merge_iou: 0.3,
            ..PromptGenConfig::default()
        };
        let boxes = generate_prompts(&m, &cfg).unwrap();
        assert_eq!(boxes.len(), 1);
        assert_eq!((boxes[0].x0, boxes[0].y0, boxes[0].x1, boxes[0].y1), (2, 2, 14, 14));
        // 19 pixels at 1.0 and 20 at 0.5
        assert!((boxes[0].confidence - 29.0 / 39.0).abs() < 1e-12);

        let no_merge = PromptGenConfig { merge_iou: 0.9, ..cfg };
        let boxes = generate_prompts(&m, &no_merge).unwrap();
        assert_eq!(boxes.len(), 2);
        assert!(boxes[0].confidence > boxes[1].confidence);
    }

    #[test]
    fn config_validation() {
        let bad = PromptGenConfig {
            quantile: 1.0,
            ..PromptGenConfig::default()
        };
        assert!(generate_prompts(&block_map(), &bad).is_err());
        assert!(NoiseSpec::new(1.0, 0).is_err());
        assert!(NoiseSpec::new(-0.1, 0).is_err());
    }

    #[test]
    fn noise_examples() {
        let m = ScoreMap::filled(8, 8, 10.0).unwrap();
        assert_eq!(perturb_scores(&m, &NoiseSpec::new(0.0, 1).unwrap()).unwrap(), m);
        let spec = NoiseSpec::new(0.02, 7).unwrap();
        let a = perturb_scores(&m, &spec).unwrap();
        assert!(a.values().iter().all(|&v| (9.8..=10.2).contains(&v)));
        assert_eq!(a, perturb_scores(&m, &spec).unwrap());
        assert_ne!(a, m);
    }

    #[test]
    fn prompt_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("boxes.json");
        let set = PromptSet {
            width: 10,
            height: 8,
            boxes: vec![
                BoxPrompt::new(0, 0, 3, 3, 0.9, 10, 8).unwrap(),
                BoxPrompt::new(4, 1, 10, 8, 0.125, 10, 8).unwrap(),
                BoxPrompt::new(2, 2, 3, 3, 1.0 / 3.0, 10, 8).unwrap(),
            ],
        };
        write_prompts(&set, &path).unwrap();
        assert_eq!(read_prompts(&path).unwrap(), set);
    }

    #[test]
    fn malformed_prompt_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.json");
        let cases = [
            r#"{"width":4,"height":4,"boxes":[{"x0":2,"y0":0,"x1":2,"y1":1,"confidence":0.5}]}"#,
            r#"{"width":4,"height":4,"boxes":[{"x0":0,"y0":0,"x1":2,"y1":1,"confidence":1.3}]}"#,
            r#"{"width":4,"height":4,"boxes":[{"x0":0,"y0":0,"x1":5,"y1":1,"confidence":0.5}]}"#,
            r#"{"width":4,"height":4,"boxes":[{"x0":-1,"y0":0,"x1":2,"y1":1,"confidence":0.5}]}"#,
            r#"{"width":4,"boxes":[]}"#,
            r#"[1,2,3]"#,
        ];
        for case in cases {
            std::fs::write(&path, case).unwrap();
            assert!(read_prompts(&path).is_err(), "{case}");
        }
        std::fs::write(&path, r#"{"width":4,"height":4,"boxes":[]}"#).unwrap();
        assert!(read_prompts(&path).unwrap().boxes.is_empty());
    }

    proptest! {
        #[test]
        fn noise_bound_and_sign(
            values in proptest::collection::vec(-50.0f32..50.0, 1..64),
            p in 0.0f64..0.5,
            seed in any::<u64>(),
        ) {
            let m = ScoreMap::new(values.len(), 1, values.clone()).unwrap();
            let out = perturb_scores(&m, &NoiseSpec::new(p, seed).unwrap()).unwrap();
            for (&v, &o) in values.iter().zip(out.values()) {
                let (v, o) = (f64::from(v), f64::from(o));
                prop_assert!(v * o >= 0.0);
                prop_assert!((o - v).abs() <= p * v.abs() + v.abs() * 1e-7);
            }
        }

        #[test]
        fn boxes_respect_min_area(
            values in proptest::collection::vec(0.0f32..1.0, 144),
            min_area in 1usize..10,
        ) {
            let m = ScoreMap::new(12, 12, values).unwrap();
            let cfg = PromptGenConfig { quantile: 0.6, min_area, ..PromptGenConfig::default() };
            for b in generate_prompts(&m, &cfg).unwrap() {
                prop_assert!(b.area() >= min_area);
                prop_assert!((0.0..=1.0).contains(&b.confidence));
                b.validate(12, 12).unwrap();
            }
        }
    }
}
