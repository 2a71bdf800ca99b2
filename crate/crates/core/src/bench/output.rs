//! Visualizations, curve dumps and timing summaries.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::write_gray;
use crate::metrics::MetricReport;
use crate::raster::{LabelMask, ScoreRaster};
use crate::scoring::normalized_f64;

use super::{RunManifest, StageTimes};

/// Grayscale rendering of a score raster, min-max normalized to 0..=255.
pub fn render_visualization<R: ScoreRaster + ?Sized>(map: &R) -> Vec<u8> {
    normalized_f64(map)
        .into_iter()
        .map(|v| (v * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8)
        .collect()
}

/// Writes [`render_visualization`] as PNG (or PGM for a `.pgm` path).
pub fn write_visualization<R: ScoreRaster + ?Sized>(map: &R, path: impl AsRef<Path>) -> Result<()> {
    let (w, h) = map.dims();
    write_gray(path.as_ref(), w, h, &render_visualization(map))
}

/// Equal-width score histogram split by ground-truth class; the last bin
/// is closed on the right. Ignored pixels are left out.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub min: f64,
    pub max: f64,
    pub id: Vec<u64>,
    pub ood: Vec<u64>,
}

impl Histogram {
    pub fn bins(&self) -> usize {
        self.id.len()
    }

    pub fn bin_edges(&self) -> Vec<f64> {
        let n = self.bins();
        (0..=n)
            .map(|k| self.min + (self.max - self.min) * k as f64 / n as f64)
            .collect()
    }

    pub fn total(&self) -> u64 {
        self.id.iter().chain(&self.ood).sum()
    }
}

/// Histogram of all non-ignored pixels of `images`, over their joint range.
pub fn score_histogram<R: ScoreRaster>(images: &[(&R, &LabelMask)], bins: usize) -> Result<Histogram> {
    let bins = bins.max(1);
    let mut pixels = Vec::new();
    for (map, gt) in images {
        if map.dims() != gt.dims() {
            return Err(Error::DimensionMismatch {
                expected: map.dims(),
                found: gt.dims(),
            });
        }
        pixels.extend(
            (0..map.len())
                .filter(|&i| !gt.is_ignored(i))
                .map(|i| (map.score(i), gt.is_ood(i))),
        );
    }
    let (min, max) = pixels
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &(v, _)| (a.min(v), b.max(v)));
    let mut h = Histogram {
        min: if pixels.is_empty() { 0.0 } else { min },
        max: if pixels.is_empty() { 0.0 } else { max },
        id: vec![0; bins],
        ood: vec![0; bins],
    };
    let span = h.max - h.min;
    for (v, ood) in pixels {
        let k = if span > 0.0 {
            (((v - h.min) / span) * bins as f64) as usize
        } else {
            0
        };
        let k = k.min(bins - 1);
        if ood {
            h.ood[k] += 1;
        } else {
            h.id[k] += 1;
        }
    }
    Ok(h)
}

/// Writes `curves.csv` (t, t_real, iou, f1) and, when given,
/// `histogram.csv` (lo, hi, id, ood) into `dir`.
pub fn emit_curves(report: &MetricReport, hist: Option<&Histogram>, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let c = &report.curves;
    let mut out = String::from("t,t_real,iou,f1\n");
    for k in 0..c.t.len() {
        let t_real = c.t_real.as_ref().map(|v| v[k].to_string()).unwrap_or_default();
        writeln!(out, "{},{},{},{}", c.t[k], t_real, c.iou[k], c.f1[k]).unwrap();
    }
    let path = dir.join("curves.csv");
    fs::write(&path, out).map_err(|e| Error::io(&path, e))?;

    if let Some(h) = hist {
        let edges = h.bin_edges();
        let mut out = String::from("lo,hi,id,ood\n");
        for k in 0..h.bins() {
            writeln!(out, "{},{},{},{}", edges[k], edges[k + 1], h.id[k], h.ood[k]).unwrap();
        }
        let path = dir.join("histogram.csv");
        fs::write(&path, out).map_err(|e| Error::io(&path, e))?;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimingSummary {
    pub mean_ms: f64,
    pub median_ms: f64,
    pub min_ms: f64,
    pub max_ms: f64,
}

impl TimingSummary {
    pub fn from_samples(samples_ms: &[f64]) -> Option<Self> {
        if samples_ms.is_empty() {
            return None;
        }
        let mut s = samples_ms.to_vec();
        s.sort_by(f64::total_cmp);
        let n = s.len();
        let median = if n % 2 == 1 {
            s[n / 2]
        } else {
            (s[n / 2 - 1] + s[n / 2]) / 2.0
        };
        Some(TimingSummary {
            mean_ms: s.iter().sum::<f64>() / n as f64,
            median_ms: median,
            min_ms: s[0],
            max_ms: s[n - 1],
        })
    }
}

/// Per-image wall-clock statistics of a run, by stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunTiming {
    pub images: usize,
    pub prompts: TimingSummary,
    pub segmentation: TimingSummary,
    pub fusion: TimingSummary,
    pub metrics: TimingSummary,
    pub total: TimingSummary,
}

pub fn time_run(manifest: &RunManifest) -> Result<RunTiming> {
    let t: Vec<&StageTimes> = manifest.images.iter().map(|e| &e.timing).collect();
    if t.is_empty() {
        return Err(Error::Input("manifest has no images".into()));
    }
    let stat = |f: fn(&StageTimes) -> f64| {
        TimingSummary::from_samples(&t.iter().map(|s| f(s)).collect::<Vec<_>>()).expect("nonempty")
    };
    Ok(RunTiming {
        images: t.len(),
        prompts: stat(|s| s.prompts_ms),
        segmentation: stat(|s| s.segmentation_ms),
        fusion: stat(|s| s.fusion_ms),
        metrics: stat(|s| s.metrics_ms),
        total: stat(|s| s.total_ms),
    })
}
