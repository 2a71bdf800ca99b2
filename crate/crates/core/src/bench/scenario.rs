//! Synthetic benchmark scenes: textured inlier frames with pasted rectangles
//! and ellipses, plus score maps derived from their labels.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::raster::{LabelMask, RgbImage, ScoreMap, ScoreRaster, LABEL_OOD};
use crate::synth::{image_rng, shapes, synthesize_dataset, OutlierObject, SynthConfig, SynthSample};

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub count: usize,
    pub width: usize,
    pub height: usize,
    /// Number of distinct inlier frames to draw from.
    pub inliers: usize,
    /// Number of distinct outlier shapes to draw from.
    pub objects: usize,
    /// Side-length range of the unscaled shapes, inclusive.
    pub min_size: usize,
    pub max_size: usize,
    pub synth: SynthConfig,
}

impl Default for ScenarioConfig {
    /// Sized so that objects stay under 5% of the frame.
    fn default() -> Self {
        ScenarioConfig {
            count: 50,
            width: 160,
            height: 120,
            inliers: 8,
            objects: 16,
            min_size: 10,
            max_size: 24,
            synth: SynthConfig {
                objects_per_image: 1,
                scale_min: 0.75,
                scale_max: 1.25,
                seed: 0,
            },
        }
    }
}

/// Smooth gradient plus per-pixel jitter.
pub fn textured_inlier(width: usize, height: usize, seed: u64, index: u64) -> Result<RgbImage> {
    let mut rng = image_rng(seed ^ 0x1a11e5, index);
    let base: [f64; 3] = [rng.gen_range(40.0..120.0), rng.gen_range(40.0..120.0), rng.gen_range(40.0..120.0)];
    let mut px = Vec::with_capacity(width * height);
    for y in 0..height {
        for x in 0..width {
            let g = 60.0 * (x as f64 / width as f64) + 40.0 * (y as f64 / height as f64);
            let mut c = [0u8; 3];
            for (k, v) in c.iter_mut().enumerate() {
                *v = (base[k] + g + rng.gen_range(-10.0..10.0)).clamp(0.0, 255.0) as u8;
            }
            px.push(c);
        }
    }
    RgbImage::new(width, height, px)
}

/// Alternating rectangles and ellipses of random size and colour.
pub fn shape_objects(n: usize, min_size: usize, max_size: usize, seed: u64) -> Vec<OutlierObject> {
    let mut rng = image_rng(seed ^ 0x0b1ec7, 0);
    (0..n)
        .map(|i| {
            let w = rng.gen_range(min_size..=max_size);
            let h = rng.gen_range(min_size..=max_size);
            let color = [rng.gen(), rng.gen(), rng.gen()];
            if i % 2 == 0 {
                shapes::rectangle(w, h, color)
            } else {
                shapes::ellipse(w, h, color)
            }
        })
        .collect()
}

pub fn generate(cfg: &ScenarioConfig) -> Result<Vec<SynthSample>> {
    if cfg.min_size == 0 || cfg.min_size > cfg.max_size {
        return Err(Error::Config(format!(
            "object size range {}..={} is empty",
            cfg.min_size, cfg.max_size
        )));
    }
    let seed = cfg.synth.seed;
    let inliers = (0..cfg.inliers.max(1) as u64)
        .into_par_iter()
        .map(|i| textured_inlier(cfg.width, cfg.height, seed, i))
        .collect::<Result<Vec<_>>>()?;
    let objects = shape_objects(cfg.objects.max(1), cfg.min_size, cfg.max_size, seed);
    synthesize_dataset(&inliers, &objects, &cfg.synth, cfg.count)
}

/// Oracle scores: 1 on OoD pixels, 0 elsewhere (ignored pixels included).
pub fn scores_from_labels(label: &LabelMask) -> ScoreMap {
    let (w, h) = label.dims();
    let values = label
        .values()
        .iter()
        .map(|&v| if v == LABEL_OOD { 1.0 } else { 0.0 })
        .collect();
    ScoreMap::new(w, h, values).expect("labels have valid dims")
}

/// Adds independent `N(0, sigma^2)` noise to every pixel.
pub fn add_gaussian_noise<R: Rng + ?Sized>(map: &ScoreMap, sigma: f64, rng: &mut R) -> Result<ScoreMap> {
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::Config(format!("noise sigma must be finite and >= 0, got {sigma}")));
    }
    let normal = Normal::new(0.0, sigma).map_err(|e| Error::Config(e.to_string()))?;
    let values = map
        .values()
        .iter()
        .map(|&v| (f64::from(v) + normal.sample(rng)) as f32)
        .collect();
    ScoreMap::new(map.width(), map.height(), values)
}
