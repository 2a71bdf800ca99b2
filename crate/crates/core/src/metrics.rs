//! Pixel-level evaluation against ternary ground truth.
//!
//! A pixel is predicted OoD when its score is strictly greater than the
//! threshold. Pixels labelled [`LABEL_IGNORE`](crate::raster::LABEL_IGNORE)
//! take no part in any count, any score range, or any ranking.
//!
//! Threshold sweeps walk `t = k / n` for `k = 0..n` and map each `t` into
//! score units with [`threshold_map`]. IoU and F1 of an empty prediction
//! against an empty truth are defined as 0.

use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::raster::{LabelMask, ScoreRaster, LABEL_IGNORE, LABEL_OOD};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// `TP / (TP + FP + FN)`, 0 when the denominator is 0.
    pub fn iou(&self) -> f64 {
        let denom = self.tp + self.fp + self.fn_;
        if denom == 0 {
            0.0
        } else {
            self.tp as f64 / denom as f64
        }
    }

    /// Harmonic mean of precision and recall, 0 when `TP = 0`.
    pub fn f1(&self) -> f64 {
        if self.tp == 0 {
            0.0
        } else {
            2.0 * self.tp as f64 / (2 * self.tp + self.fp + self.fn_) as f64
        }
    }
}

impl std::ops::Add for ConfusionCounts {
    type Output = ConfusionCounts;
    fn add(self, o: ConfusionCounts) -> ConfusionCounts {
        ConfusionCounts {
            tp: self.tp + o.tp,
            fp: self.fp + o.fp,
            fn_: self.fn_ + o.fn_,
            tn: self.tn + o.tn,
        }
    }
}

fn check_dims<R: ScoreRaster + ?Sized>(map: &R, gt: &LabelMask) -> Result<()> {
    if map.dims() != gt.dims() {
        return Err(Error::DimensionMismatch {
            expected: gt.dims(),
            found: map.dims(),
        });
    }
    Ok(())
}

pub fn confusion_at<R: ScoreRaster + ?Sized>(
    map: &R,
    gt: &LabelMask,
    t_real: f64,
) -> Result<ConfusionCounts> {
    check_dims(map, gt)?;
    let mut c = ConfusionCounts::default();
    for (i, &label) in gt.values().iter().enumerate() {
        let predicted = map.score(i) > t_real;
        match (label, predicted) {
            (LABEL_IGNORE, _) => {}
            (LABEL_OOD, true) => c.tp += 1,
            (LABEL_OOD, false) => c.fn_ += 1,
            (_, true) => c.fp += 1,
            (_, false) => c.tn += 1,
        }
    }
    Ok(c)
}

/// `t * (max - min) + min`, exact at both ends (rounding would otherwise
/// miss `max` at `t = 1`).
pub fn threshold_map(t: f64, s_min: f64, s_max: f64) -> f64 {
    if t == 1.0 {
        s_max
    } else {
        t * (s_max - s_min) + s_min
    }
}

/// Score interval the threshold grid is spread over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepRange {
    /// Min and max over every non-ignored pixel of the dataset.
    #[default]
    Dataset,
    /// Min and max of each image separately.
    Image,
    /// Fixed `[0, 1]`, for confidence maps.
    Unit,
}

impl fmt::Display for SweepRange {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SweepRange::Dataset => "dataset",
            SweepRange::Image => "image",
            SweepRange::Unit => "unit",
        })
    }
}

impl std::str::FromStr for SweepRange {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dataset" => Ok(SweepRange::Dataset),
            "image" => Ok(SweepRange::Image),
            "unit" => Ok(SweepRange::Unit),
            _ => Err(Error::Config(format!("unknown sweep range '{s}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SweepConfig {
    pub steps: usize,
    pub range: SweepRange,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            steps: 100,
            range: SweepRange::Dataset,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::Config("sweep needs at least one step".into()));
        }
        Ok(())
    }

    pub fn grid(&self) -> Vec<f64> {
        (0..self.steps).map(|k| k as f64 / self.steps as f64).collect()
    }
}

/// How per-image results are combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    /// Sum confusion counts over images before forming ratios; rank all
    /// pixels together for AuPRC and FPR95.
    #[default]
    Pool,
    /// Unweighted mean of the per-image scalars.
    Mean,
}

impl std::str::FromStr for Aggregation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pool" => Ok(Aggregation::Pool),
            "mean" | "average" => Ok(Aggregation::Mean),
            _ => Err(Error::Config(format!("unknown aggregation '{s}'"))),
        }
    }
}

/// Scores of the non-ignored pixels of one image, split by label and sorted
/// ascending. Everything downstream of the raw rasters works from this.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelledScores {
    positives: Vec<f64>,
    negatives: Vec<f64>,
}

impl LabelledScores {
    pub fn new<R: ScoreRaster + ?Sized>(map: &R, gt: &LabelMask) -> Result<Self> {
        check_dims(map, gt)?;
        let mut positives = Vec::new();
        let mut negatives = Vec::new();
        for (i, &label) in gt.values().iter().enumerate() {
            match label {
                LABEL_IGNORE => {}
                LABEL_OOD => positives.push(map.score(i)),
                _ => negatives.push(map.score(i)),
            }
        }
        positives.sort_by(f64::total_cmp);
        negatives.sort_by(f64::total_cmp);
        Ok(LabelledScores {
            positives,
            negatives,
        })
    }

    /// Pixels of several images ranked together.
    pub fn pooled<'a>(parts: impl IntoIterator<Item = &'a LabelledScores>) -> Self {
        let mut positives = Vec::new();
        let mut negatives = Vec::new();
        for p in parts {
            positives.extend_from_slice(&p.positives);
            negatives.extend_from_slice(&p.negatives);
        }
        positives.sort_by(f64::total_cmp);
        negatives.sort_by(f64::total_cmp);
        LabelledScores {
            positives,
            negatives,
        }
    }

    pub fn positives(&self) -> usize {
        self.positives.len()
    }

    pub fn negatives(&self) -> usize {
        self.negatives.len()
    }

    /// Min and max score, or `None` when every pixel is ignored.
    pub fn range(&self) -> Option<(f64, f64)> {
        let lo = match (self.positives.first(), self.negatives.first()) {
            (Some(&a), Some(&b)) => a.min(b),
            (Some(&a), None) | (None, Some(&a)) => a,
            (None, None) => return None,
        };
        let hi = match (self.positives.last(), self.negatives.last()) {
            (Some(&a), Some(&b)) => a.max(b),
            (Some(&a), None) | (None, Some(&a)) => a,
            (None, None) => unreachable!(),
        };
        Some((lo, hi))
    }

    pub fn counts_at(&self, t_real: f64) -> ConfusionCounts {
        let above = |v: &[f64]| (v.len() - v.partition_point(|&s| s <= t_real)) as u64;
        let tp = above(&self.positives);
        let fp = above(&self.negatives);
        ConfusionCounts {
            tp,
            fp,
            fn_: self.positives.len() as u64 - tp,
            tn: self.negatives.len() as u64 - fp,
        }
    }

    /// Operating points `(TP, FP)` after admitting each distinct score, from
    /// the highest down. Tied scores enter together.
    fn operating_points(&self) -> Vec<(u64, u64)> {
        let (pos, neg) = (&self.positives, &self.negatives);
        let (mut i, mut j) = (pos.len(), neg.len());
        let mut points = Vec::new();
        while i > 0 || j > 0 {
            let next = match (i > 0, j > 0) {
                (true, true) => pos[i - 1].max(neg[j - 1]),
                (true, false) => pos[i - 1],
                _ => neg[j - 1],
            };
            while i > 0 && pos[i - 1] == next {
                i -= 1;
            }
            while j > 0 && neg[j - 1] == next {
                j -= 1;
            }
            points.push(((pos.len() - i) as u64, (neg.len() - j) as u64));
        }
        points
    }

    /// Step-wise average precision, `sum_j (R_j - R_{j-1}) P_j`.
    pub fn auprc(&self) -> Result<f64> {
        if self.positives.is_empty() {
            return Err(Error::Undefined("AP: no positive pixels"));
        }
        let n_pos = self.positives.len() as f64;
        let mut ap = 0.0;
        let mut prev_recall = 0.0;
        for (tp, fp) in self.operating_points() {
            let recall = tp as f64 / n_pos;
            let precision = tp as f64 / (tp + fp) as f64;
            ap += (recall - prev_recall) * precision;
            prev_recall = recall;
        }
        Ok(ap)
    }

    /// Lowest false-positive rate among operating points with a true-positive
    /// rate of at least 0.95.
    pub fn fpr95(&self) -> Result<f64> {
        if self.positives.is_empty() {
            return Err(Error::Undefined("FPR95: no positive pixels"));
        }
        if self.negatives.is_empty() {
            return Err(Error::Undefined("FPR95: no negative pixels"));
        }
        let (n_pos, n_neg) = (self.positives.len() as f64, self.negatives.len() as f64);
        Ok(self
            .operating_points()
            .into_iter()
            .filter(|&(tp, _)| tp as f64 / n_pos >= 0.95)
            .map(|(_, fp)| fp as f64 / n_neg)
            .fold(1.0, f64::min))
    }

    pub fn sweep(&self, steps: usize, s_min: f64, s_max: f64) -> Sweep {
        let cfg = SweepConfig {
            steps,
            range: SweepRange::Dataset,
        };
        let t: Vec<f64> = cfg.grid();
        let t_real: Vec<f64> = t.iter().map(|&t| threshold_map(t, s_min, s_max)).collect();
        let counts = t_real.iter().map(|&tr| self.counts_at(tr)).collect();
        Sweep::from_counts(t, t_real, counts)
    }
}

/// IoU and F1 over a threshold grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub t: Vec<f64>,
    pub t_real: Vec<f64>,
    pub counts: Vec<ConfusionCounts>,
    pub iou: Vec<f64>,
    pub f1: Vec<f64>,
}

impl Sweep {
    pub fn from_counts(t: Vec<f64>, t_real: Vec<f64>, counts: Vec<ConfusionCounts>) -> Self {
        let iou = counts.iter().map(ConfusionCounts::iou).collect();
        let f1 = counts.iter().map(ConfusionCounts::f1).collect();
        Sweep {
            t,
            t_real,
            counts,
            iou,
            f1,
        }
    }

    /// Grid index of the highest IoU (the first one on ties).
    pub fn best_index(&self) -> usize {
        let mut best = 0;
        for (k, &v) in self.iou.iter().enumerate() {
            if v > self.iou[best] {
                best = k;
            }
        }
        best
    }

    pub fn best_iou(&self) -> f64 {
        self.iou[self.best_index()]
    }

    pub fn best_threshold(&self) -> f64 {
        self.t_real[self.best_index()]
    }

    pub fn auiou(&self) -> f64 {
        auiou(&self.iou)
    }

    pub fn mean_f1(&self) -> f64 {
        mean_f1(&self.f1)
    }
}

fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

/// Area under the IoU curve: the mean IoU over the grid.
pub fn auiou(iou_curve: &[f64]) -> f64 {
    mean(iou_curve)
}

pub fn mean_f1(f1_curve: &[f64]) -> f64 {
    mean(f1_curve)
}

/// Sweeps a single image. For one image the dataset range is the image's own.
pub fn sweep<R: ScoreRaster + ?Sized>(map: &R, gt: &LabelMask, cfg: &SweepConfig) -> Result<Sweep> {
    cfg.validate()?;
    let scores = LabelledScores::new(map, gt)?;
    let (lo, hi) = match cfg.range {
        SweepRange::Unit => (0.0, 1.0),
        _ => scores.range().unwrap_or((0.0, 0.0)),
    };
    Ok(scores.sweep(cfg.steps, lo, hi))
}

pub fn auprc<R: ScoreRaster + ?Sized>(map: &R, gt: &LabelMask) -> Result<f64> {
    LabelledScores::new(map, gt)?.auprc()
}

pub fn fpr95<R: ScoreRaster + ?Sized>(map: &R, gt: &LabelMask) -> Result<f64> {
    LabelledScores::new(map, gt)?.fpr95()
}

/// IoU of the prediction `score > 0` (the threshold-free mask of a
/// confidence map).
pub fn support_iou<R: ScoreRaster + ?Sized>(map: &R, gt: &LabelMask) -> Result<f64> {
    Ok(confusion_at(map, gt, 0.0)?.iou())
}

/// Everything needed to evaluate one image.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageEval {
    pub name: String,
    pub scores: LabelledScores,
    /// Counts of the `score > 0` prediction, for confidence maps.
    pub support: ConfusionCounts,
    pub zero_prompt: Option<bool>,
}

impl ImageEval {
    pub fn new<R: ScoreRaster + ?Sized>(name: impl Into<String>, map: &R, gt: &LabelMask) -> Result<Self> {
        Ok(ImageEval {
            name: name.into(),
            scores: LabelledScores::new(map, gt)?,
            support: confusion_at(map, gt, 0.0)?,
            zero_prompt: None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImageReport {
    pub name: String,
    pub best_iou: f64,
    pub best_threshold: f64,
    pub auiou: f64,
    pub mean_f1: f64,
    pub auprc: Option<f64>,
    pub fpr95: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub threshold_free_iou: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub zero_prompt: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepInfo {
    pub steps: usize,
    pub range: SweepRange,
    /// Score interval of the grid when it is shared by all images.
    pub s_min: Option<f64>,
    pub s_max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curves {
    pub t: Vec<f64>,
    /// Thresholds in score units; absent when every image has its own range.
    pub t_real: Option<Vec<f64>>,
    pub iou: Vec<f64>,
    pub f1: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub best_iou: f64,
    /// Score-unit threshold of the best IoU (the grid fraction `t` when images
    /// have separate ranges and are pooled).
    pub best_threshold: f64,
    pub auiou: f64,
    pub mean_f1: f64,
    /// `None` when no image has an OoD pixel.
    pub auprc: Option<f64>,
    pub fpr95: Option<f64>,
    /// IoU of the `score > 0` support, reported for confidence maps.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub threshold_free_iou: Option<f64>,
    pub n_images: usize,
    pub aggregation: Aggregation,
    pub sweep: SweepInfo,
    pub curves: Curves,
    pub per_image: Vec<ImageReport>,
}

/// Score interval over the non-ignored pixels of all images.
pub fn dataset_range(images: &[ImageEval]) -> Option<(f64, f64)> {
    images
        .iter()
        .filter_map(|e| e.scores.range())
        .reduce(|(a, b), (c, d)| (a.min(c), b.max(d)))
}

fn image_sweep(e: &ImageEval, cfg: &SweepConfig, shared: Option<(f64, f64)>) -> Sweep {
    let (lo, hi) = shared
        .or_else(|| e.scores.range())
        .unwrap_or((0.0, 0.0));
    e.scores.sweep(cfg.steps, lo, hi)
}

/// Combines per-image evaluations into one report.
///
/// `with_support` adds the threshold-free IoU of the `score > 0` support.
pub fn aggregate(
    images: &[ImageEval],
    cfg: &SweepConfig,
    mode: Aggregation,
    with_support: bool,
) -> Result<MetricReport> {
    cfg.validate()?;
    if images.is_empty() {
        return Err(Error::Input("no images to aggregate".into()));
    }
    let shared = match cfg.range {
        SweepRange::Dataset => Some(dataset_range(images).unwrap_or((0.0, 0.0))),
        SweepRange::Unit => Some((0.0, 1.0)),
        SweepRange::Image => None,
    };
    let sweeps: Vec<Sweep> = images
        .par_iter()
        .map(|e| image_sweep(e, cfg, shared))
        .collect();

    let per_image: Vec<ImageReport> = images
        .iter()
        .zip(&sweeps)
        .map(|(e, s)| ImageReport {
            name: e.name.clone(),
            best_iou: s.best_iou(),
            best_threshold: s.best_threshold(),
            auiou: s.auiou(),
            mean_f1: s.mean_f1(),
            auprc: e.scores.auprc().ok(),
            fpr95: e.scores.fpr95().ok(),
            threshold_free_iou: with_support.then(|| e.support.iou()),
            zero_prompt: e.zero_prompt,
        })
        .collect();

    let t = cfg.grid();
    let report = match mode {
        Aggregation::Pool => {
            let counts: Vec<ConfusionCounts> = (0..cfg.steps)
                .map(|k| {
                    sweeps
                        .iter()
                        .fold(ConfusionCounts::default(), |acc, s| acc + s.counts[k])
                })
                .collect();
            let t_real = match shared {
                Some((lo, hi)) => t.iter().map(|&t| threshold_map(t, lo, hi)).collect(),
                None => t.clone(),
            };
            let pooled = Sweep::from_counts(t.clone(), t_real, counts);
            let ranked = LabelledScores::pooled(images.iter().map(|e| &e.scores));
            let support = images
                .iter()
                .fold(ConfusionCounts::default(), |acc, e| acc + e.support);
            MetricReport {
                best_iou: pooled.best_iou(),
                best_threshold: pooled.best_threshold(),
                auiou: pooled.auiou(),
                mean_f1: pooled.mean_f1(),
                auprc: ranked.auprc().ok(),
                fpr95: ranked.fpr95().ok(),
                threshold_free_iou: with_support.then(|| support.iou()),
                n_images: images.len(),
                aggregation: mode,
                sweep: SweepInfo {
                    steps: cfg.steps,
                    range: cfg.range,
                    s_min: shared.map(|r| r.0),
                    s_max: shared.map(|r| r.1),
                },
                curves: Curves {
                    t,
                    t_real: shared.map(|_| pooled.t_real.clone()),
                    iou: pooled.iou,
                    f1: pooled.f1,
                },
                per_image,
            }
        }
        Aggregation::Mean => {
            let avg = |f: &dyn Fn(&ImageReport) -> f64| mean(&per_image.iter().map(f).collect::<Vec<_>>());
            let avg_opt = |f: &dyn Fn(&ImageReport) -> Option<f64>| {
                let v: Vec<f64> = per_image.iter().filter_map(f).collect();
                (!v.is_empty()).then(|| mean(&v))
            };
            let curve = |f: &dyn Fn(&Sweep) -> &Vec<f64>| -> Vec<f64> {
                (0..cfg.steps)
                    .map(|k| mean(&sweeps.iter().map(|s| f(s)[k]).collect::<Vec<_>>()))
                    .collect()
            };
            MetricReport {
                best_iou: avg(&|r| r.best_iou),
                best_threshold: avg(&|r| r.best_threshold),
                auiou: avg(&|r| r.auiou),
                mean_f1: avg(&|r| r.mean_f1),
                auprc: avg_opt(&|r| r.auprc),
                fpr95: avg_opt(&|r| r.fpr95),
                threshold_free_iou: avg_opt(&|r| r.threshold_free_iou),
                n_images: images.len(),
                aggregation: mode,
                sweep: SweepInfo {
                    steps: cfg.steps,
                    range: cfg.range,
                    s_min: shared.map(|r| r.0),
                    s_max: shared.map(|r| r.1),
                },
                curves: Curves {
                    t,
                    t_real: shared.map(|(lo, hi)| {
                        cfg.grid().iter().map(|&t| threshold_map(t, lo, hi)).collect()
                    }),
                    iou: curve(&|s| &s.iou),
                    f1: curve(&|s| &s.f1),
                },
                per_image,
            }
        }
    };
    Ok(report)
}
