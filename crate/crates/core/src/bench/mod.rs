//! End-to-end harness: scores, optional noise, prompts, per-prompt masks,
//! fusion and metrics over a whole dataset.

mod output;
pub mod scenario;

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use output::{
    emit_curves, render_visualization, score_histogram, time_run, write_visualization, Histogram,
    RunTiming, TimingSummary,
};

use crate::dataset::{index_dir, pair_dirs};
use crate::error::{Error, Result};
use crate::io::{read_labelmask, read_scoremap};
use crate::metrics::{aggregate, Aggregation, ImageEval, MetricReport, SweepConfig, SweepRange};
use crate::prompts::{generate_prompts, perturb_scores_with, read_prompts, PromptGenConfig};
use crate::raster::{BoxPrompt, ConfidenceMap, LabelMask, ScoreMap, ScoreRaster};
use crate::segmenter::{fuse_masks, read_mask_dir, segment_all, PromptMask, SegmenterConfig};

/// Where the masks of each image come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PromptSource {
    /// Reference prompt generator and reference segmenter.
    #[default]
    Reference,
    /// Externally produced boxes, reference segmenter.
    ExternalPrompts,
    /// Externally produced masks and confidences.
    ExternalMasks,
}

/// Pipeline settings. Serialized as one flat key-value table, e.g.
///
/// ```toml
/// quantile = 0.95
/// min_area = 16
/// merge_iou = 0.5
/// connectivity = 8
/// alpha = 0.5
/// margin = 0.1
/// noise = 0.01
/// seed = 7
/// steps = 100
/// range = "unit"
/// aggregation = "pool"
/// source = "reference"
/// ```
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    #[serde(flatten)]
    pub prompts: PromptGenConfig,
    #[serde(flatten)]
    pub segmenter: SegmenterConfig,
    /// Multiplicative score-noise amplitude; absent means no noise.
    pub noise: Option<f64>,
    pub seed: u64,
    #[serde(flatten)]
    pub sweep: SweepConfig,
    pub aggregation: Aggregation,
    pub source: PromptSource,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            prompts: PromptGenConfig::default(),
            segmenter: SegmenterConfig::default(),
            noise: None,
            seed: 0,
            // confidence maps live in [0,1]
            sweep: SweepConfig {
                steps: 100,
                range: SweepRange::Unit,
            },
            aggregation: Aggregation::Pool,
            source: PromptSource::Reference,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        self.prompts.validate()?;
        self.segmenter.validate()?;
        self.sweep.validate()?;
        if let Some(p) = self.noise {
            crate::prompts::NoiseSpec::new(p, self.seed)?;
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: PipelineConfig =
            toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| e.in_file(path))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("pipeline config always serializes")
    }
}

/// 64-bit FNV-1a, used to give every image its own random stream.
fn stream_id(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| {
        (h ^ u64::from(b)).wrapping_mul(0x0000_0100_0000_01b3)
    })
}

/// Random stream for the image called `name`; independent of processing order.
pub fn image_stream(seed: u64, name: &str) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id(name));
    rng
}

/// One image's inputs.
#[derive(Debug, Clone)]
pub struct PipelineItem {
    pub name: String,
    pub scores: ScoreMap,
    pub gt: LabelMask,
    /// Required for [`PromptSource::ExternalPrompts`].
    pub prompts: Option<Vec<BoxPrompt>>,
    /// Required for [`PromptSource::ExternalMasks`].
    pub masks: Option<Vec<PromptMask>>,
}

impl PipelineItem {
    pub fn new(name: impl Into<String>, scores: ScoreMap, gt: LabelMask) -> Self {
        PipelineItem {
            name: name.into(),
            scores,
            gt,
            prompts: None,
            masks: None,
        }
    }
}

/// Wall-clock milliseconds per stage, file IO excluded.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct StageTimes {
    pub prompts_ms: f64,
    pub segmentation_ms: f64,
    pub fusion_ms: f64,
    pub metrics_ms: f64,
    pub total_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub prompts: usize,
    pub zero_prompt: bool,
    pub timing: StageTimes,
}

/// Run record kept apart from the metric report so reports stay reproducible.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub seed: u64,
    pub config: PipelineConfig,
    pub images: Vec<ManifestEntry>,
}

/// Per-image pipeline products.
#[derive(Debug, Clone)]
pub struct ImageOutcome {
    pub name: String,
    pub prompts: Vec<BoxPrompt>,
    pub confidence: ConfidenceMap,
    pub zero_prompt: bool,
}

#[derive(Debug, Clone)]
pub struct PipelineRun {
    pub report: MetricReport,
    pub manifest: RunManifest,
    pub outcomes: Vec<ImageOutcome>,
}

fn ms(since: Instant) -> f64 {
    since.elapsed().as_secs_f64() * 1e3
}

fn process(item: &PipelineItem, cfg: &PipelineConfig) -> Result<(ImageOutcome, ImageEval, StageTimes)> {
    let start = Instant::now();
    let (w, h) = item.scores.dims();
    if item.gt.dims() != (w, h) {
        return Err(Error::DimensionMismatch {
            expected: (w, h),
            found: item.gt.dims(),
        });
    }
    let mut times = StageTimes::default();

    let stage = Instant::now();
    let scores = match cfg.noise {
        Some(p) if p > 0.0 => {
            perturb_scores_with(&item.scores, p, &mut image_stream(cfg.seed, &item.name))?
        }
        _ => item.scores.clone(),
    };
    let prompts = match cfg.source {
        PromptSource::Reference => generate_prompts(&scores, &cfg.prompts)?,
        PromptSource::ExternalPrompts => item
            .prompts
            .clone()
            .ok_or_else(|| Error::Input(format!("no prompts supplied for {}", item.name)))?,
        PromptSource::ExternalMasks => Vec::new(),
    };
    times.prompts_ms = ms(stage);

    let stage = Instant::now();
    let masks = match cfg.source {
        PromptSource::ExternalMasks => item
            .masks
            .clone()
            .ok_or_else(|| Error::Input(format!("no masks supplied for {}", item.name)))?,
        _ => segment_all(&scores, &prompts, &cfg.segmenter)?,
    };
    times.segmentation_ms = ms(stage);

    let stage = Instant::now();
    let confidence = fuse_masks(&masks, w, h)?;
    times.fusion_ms = ms(stage);

    let stage = Instant::now();
    let zero_prompt = masks.is_empty();
    let mut eval = ImageEval::new(item.name.clone(), &confidence, &item.gt)?;
    eval.zero_prompt = Some(zero_prompt);
    times.metrics_ms = ms(stage);
    times.total_ms = ms(start);

    let outcome = ImageOutcome {
        name: item.name.clone(),
        prompts,
        confidence,
        zero_prompt,
    };
    Ok((outcome, eval, times))
}

/// Runs the pipeline over in-memory items. Images are processed in parallel;
/// results are gathered in input order, so output never depends on
/// scheduling.
pub fn run_items(items: &[PipelineItem], cfg: &PipelineConfig) -> Result<PipelineRun> {
    cfg.validate()?;
    if items.is_empty() {
        return Err(Error::Input("no inputs".into()));
    }
    let results = items
        .par_iter()
        .map(|item| process(item, cfg).map_err(|e| e.in_file(&item.name)))
        .collect::<Result<Vec<_>>>()?;

    let mut outcomes = Vec::with_capacity(results.len());
    let mut evals = Vec::with_capacity(results.len());
    let mut entries = Vec::with_capacity(results.len());
    for (outcome, eval, timing) in results {
        entries.push(ManifestEntry {
            name: outcome.name.clone(),
            prompts: outcome.prompts.len(),
            zero_prompt: outcome.zero_prompt,
            timing,
        });
        evals.push(eval);
        outcomes.push(outcome);
    }
    let report = aggregate(&evals, &cfg.sweep, cfg.aggregation, true)?;
    let manifest = RunManifest {
        version: env!("CARGO_PKG_VERSION").to_owned(),
        seed: cfg.seed,
        config: cfg.clone(),
        images: entries,
    };
    Ok(PipelineRun {
        report,
        manifest,
        outcomes,
    })
}

/// Directories holding externally produced prompts or masks.
#[derive(Debug, Clone, Default)]
pub struct ExternalInputs {
    /// One prompt JSON per image, e.g. `boxes_000123.json`.
    pub boxes_dir: Option<PathBuf>,
    /// One subdirectory per image holding mask PNGs and `confidences.json`.
    pub masks_dir: Option<PathBuf>,
}

/// Loads `scores_dir`/`gt_dir` pairs (and any external inputs) from disk.
pub fn load_items(
    scores_dir: &Path,
    gt_dir: &Path,
    external: &ExternalInputs,
) -> Result<Vec<PipelineItem>> {
    let pairs = pair_dirs(scores_dir, gt_dir)?;
    let boxes = external
        .boxes_dir
        .as_deref()
        .map(|d| index_dir(d, &["json"], false))
        .transpose()?;
    let masks = external
        .masks_dir
        .as_deref()
        .map(|d| index_dir(d, &[], true))
        .transpose()?;

    pairs
        .par_iter()
        .map(|(key, score_path, gt_path)| {
            let scores = read_scoremap(score_path)?;
            let gt = read_labelmask(gt_path)?;
            let mut item = PipelineItem::new(key.clone(), scores, gt);
            if let Some(index) = &boxes {
                let path = index
                    .get(key)
                    .ok_or_else(|| Error::Input(format!("no prompt file for '{key}'")))?;
                let set = read_prompts(path)?;
                if (set.width, set.height) != item.scores.dims() {
                    return Err(Error::DimensionMismatch {
                        expected: item.scores.dims(),
                        found: (set.width, set.height),
                    }
                    .in_file(path));
                }
                item.prompts = Some(set.boxes);
            }
            if let Some(index) = &masks {
                let dir = index
                    .get(key)
                    .ok_or_else(|| Error::Input(format!("no mask directory for '{key}'")))?;
                item.masks = Some(read_mask_dir(
                    dir,
                    dir.join("confidences.json"),
                    Some(item.scores.dims()),
                )?);
            }
            Ok(item)
        })
        .collect()
}

pub fn run_pipeline(
    scores_dir: &Path,
    gt_dir: &Path,
    external: &ExternalInputs,
    cfg: &PipelineConfig,
) -> Result<PipelineRun> {
    run_items(&load_items(scores_dir, gt_dir, external)?, cfg)
}

/// Evaluates score maps (or confidence maps) against ground truth without
/// running the pipeline.
pub fn evaluate_dirs(
    pred_dir: &Path,
    gt_dir: &Path,
    sweep: &SweepConfig,
    mode: Aggregation,
) -> Result<(MetricReport, Vec<(ScoreMap, LabelMask)>)> {
    let loaded = pair_dirs(pred_dir, gt_dir)?
        .par_iter()
        .map(|(key, p, g)| {
            let map = read_scoremap(p)?;
            let gt = read_labelmask(g)?;
            let eval = ImageEval::new(key.clone(), &map, &gt).map_err(|e| e.in_file(p))?;
            Ok((eval, (map, gt)))
        })
        .collect::<Result<Vec<_>>>()?;
    let (evals, rasters): (Vec<_>, Vec<_>) = loaded.into_iter().unzip();
    Ok((aggregate(&evals, sweep, mode, false)?, rasters))
}

/// Serializes a report exactly as the CLI writes it.
pub fn report_json(report: &MetricReport) -> String {
    serde_json::to_string_pretty(report).expect("reports always serialize") + "\n"
}
