//! Brute-force oracles shared by the integration tests. Each one follows the
//! textbook definition as literally as possible and shares no code with the
//! library beyond its data types.

#![allow(dead_code)]

use std::collections::VecDeque;

use rand::Rng;
use s2m::{LabelMask, ScoreRaster, LABEL_IGNORE, LABEL_OOD};

// ---------------------------------------------------------------- components

/// (tp, fp, fn, tn)
pub type Counts = (u64, u64, u64, u64);
/// (grid t, threshold in score units, counts)
pub type Point = (f64, f64, Counts);

/// `(x0, y0, x1, y1, pixel count)` of every component, by breadth-first
/// flood fill, sorted by `(y0, x0, y1, x1)`.
pub fn flood_fill_boxes(
    on: &[bool],
    width: usize,
    eight: bool,
) -> Vec<(usize, usize, usize, usize, usize)> {
    let height = on.len() / width;
    let mut seen = vec![false; on.len()];
    let mut out = Vec::new();
    for start in 0..on.len() {
        if !on[start] || seen[start] {
            continue;
        }
        seen[start] = true;
        let mut queue = VecDeque::from([start]);
        let (mut x0, mut y0, mut x1, mut y1, mut n) = (usize::MAX, usize::MAX, 0, 0, 0);
        while let Some(i) = queue.pop_front() {
            let (x, y) = ((i % width) as i64, (i / width) as i64);
            x0 = x0.min(x as usize);
            y0 = y0.min(y as usize);
            x1 = x1.max(x as usize + 1);
            y1 = y1.max(y as usize + 1);
            n += 1;
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    if (dx == 0 && dy == 0) || (!eight && dx != 0 && dy != 0) {
                        continue;
                    }
                    let (nx, ny) = (x + dx, y + dy);
                    if nx < 0 || ny < 0 || nx >= width as i64 || ny >= height as i64 {
                        continue;
                    }
                    let j = ny as usize * width + nx as usize;
                    if on[j] && !seen[j] {
                        seen[j] = true;
                        queue.push_back(j);
                    }
                }
            }
        }
        out.push((x0, y0, x1, y1, n));
    }
    out.sort_by_key(|&(x0, y0, x1, y1, _)| (y0, x0, y1, x1));
    out
}

// ---------------------------------------------------------------- metrics

/// Non-ignored `(score, is_ood)` pixels of one image.
pub fn labelled<R: ScoreRaster>(map: &R, gt: &LabelMask) -> Vec<(f64, bool)> {
    (0..map.len())
        .filter(|&i| gt.values()[i] != LABEL_IGNORE)
        .map(|i| (map.score(i), gt.values()[i] == LABEL_OOD))
        .collect()
}

/// `(tp, fp, fn, tn)` of the prediction `score > t`.
pub fn counts(px: &[(f64, bool)], t: f64) -> Counts {
    let mut c = (0, 0, 0, 0);
    for &(s, ood) in px {
        match (ood, s > t) {
            (true, true) => c.0 += 1,
            (false, true) => c.1 += 1,
            (true, false) => c.2 += 1,
            (false, false) => c.3 += 1,
        }
    }
    c
}

pub fn iou(c: Counts) -> f64 {
    let d = c.0 + c.1 + c.2;
    if d == 0 {
        0.0
    } else {
        c.0 as f64 / d as f64
    }
}

pub fn f1(c: Counts) -> f64 {
    let (tp, fp, fn_) = (c.0 as f64, c.1 as f64, c.2 as f64);
    if c.0 == 0 {
        0.0
    } else {
        let p = tp / (tp + fp);
        let r = tp / (tp + fn_);
        2.0 * p * r / (p + r)
    }
}

/// Distinct scores, highest first.
fn distinct_desc(px: &[(f64, bool)]) -> Vec<f64> {
    let mut s: Vec<f64> = px.iter().map(|p| p.0).collect();
    s.sort_by(|a, b| b.partial_cmp(a).unwrap());
    s.dedup();
    s
}

/// Step-wise AP: at every distinct score `s` the prediction `score >= s` is
/// evaluated from scratch; `sum (R_k - R_{k-1}) P_k`.
pub fn average_precision(px: &[(f64, bool)]) -> Option<f64> {
    let n_pos = px.iter().filter(|p| p.1).count();
    if n_pos == 0 {
        return None;
    }
    let mut ap = 0.0;
    let mut prev_r = 0.0;
    for s in distinct_desc(px) {
        let tp = px.iter().filter(|p| p.1 && p.0 >= s).count() as f64;
        let fp = px.iter().filter(|p| !p.1 && p.0 >= s).count() as f64;
        let r = tp / n_pos as f64;
        ap += (r - prev_r) * (tp / (tp + fp));
        prev_r = r;
    }
    Some(ap)
}

/// Smallest FPR over every threshold reaching TPR >= 0.95; 1 if none does.
pub fn fpr_at_95(px: &[(f64, bool)]) -> Option<f64> {
    let n_pos = px.iter().filter(|p| p.1).count();
    let n_neg = px.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return None;
    }
    let mut best: f64 = 1.0;
    for s in distinct_desc(px) {
        let tp = px.iter().filter(|p| p.1 && p.0 >= s).count() as f64;
        let fp = px.iter().filter(|p| !p.1 && p.0 >= s).count() as f64;
        if tp / n_pos as f64 >= 0.95 {
            best = best.min(fp / n_neg as f64);
        }
    }
    Some(best)
}

pub fn min_max(px: &[(f64, bool)]) -> (f64, f64) {
    if px.is_empty() {
        return (0.0, 0.0);
    }
    px.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), p| (a.min(p.0), b.max(p.0)))
}

/// `(t, t_real, counts)` for `t = k/steps`, `k = 0..steps`.
pub fn sweep_counts(
    px: &[(f64, bool)],
    steps: usize,
    lo: f64,
    hi: f64,
) -> Vec<Point> {
    (0..steps)
        .map(|k| {
            let t = k as f64 / steps as f64;
            let tr = lo + t * (hi - lo);
            (t, tr, counts(px, tr))
        })
        .collect()
}

/// Scalars of one sweep: best IoU (first max), its threshold, mean IoU,
/// mean F1, plus the curves.
pub struct OracleSweep {
    pub best_iou: f64,
    pub best_threshold: f64,
    pub auiou: f64,
    pub mean_f1: f64,
    pub iou: Vec<f64>,
    pub f1: Vec<f64>,
}

pub fn summarize(points: &[Point], use_t: bool) -> OracleSweep {
    let iou_c: Vec<f64> = points.iter().map(|p| iou(p.2)).collect();
    let f1_c: Vec<f64> = points.iter().map(|p| f1(p.2)).collect();
    let mut best = 0;
    for k in 0..iou_c.len() {
        if iou_c[k] > iou_c[best] {
            best = k;
        }
    }
    let n = points.len() as f64;
    OracleSweep {
        best_iou: iou_c[best],
        best_threshold: if use_t { points[best].0 } else { points[best].1 },
        auiou: iou_c.iter().sum::<f64>() / n,
        mean_f1: f1_c.iter().sum::<f64>() / n,
        iou: iou_c,
        f1: f1_c,
    }
}

// ---------------------------------------------------------------- random data

/// Random map of at most 32x32 with scores on `levels` evenly spaced values
/// (so ties occur) and about 10% ignore pixels.
pub fn random_instance<R: Rng>(rng: &mut R) -> (s2m::ScoreMap, LabelMask) {
    let w = rng.gen_range(1..=32);
    let h = rng.gen_range(1..=32);
    let levels = [2u32, 5, 50, 100_000][rng.gen_range(0..4)];
    let offset: f64 = rng.gen_range(-3.0..3.0);
    let spread: f64 = rng.gen_range(0.1..10.0);
    let ood_rate: f64 = rng.gen_range(0.0..0.6);
    let mut scores = Vec::with_capacity(w * h);
    let mut labels = Vec::with_capacity(w * h);
    for _ in 0..w * h {
        let label = if rng.gen_bool(0.1) {
            LABEL_IGNORE
        } else if rng.gen_bool(ood_rate) {
            LABEL_OOD
        } else {
            0
        };
        // OoD pixels lean higher so curves are not flat
        let u = rng.gen_range(0..levels) as f64 / (levels - 1) as f64;
        let u = if label == LABEL_OOD { u.max(rng.gen_range(0.0..1.0)) } else { u };
        let q = (u * (levels - 1) as f64).round() / (levels - 1) as f64;
        scores.push((offset + spread * q) as f32);
        labels.push(label);
    }
    (
        s2m::ScoreMap::new(w, h, scores).unwrap(),
        LabelMask::new(w, h, labels).unwrap(),
    )
}

// ---------------------------------------------------------------- pipeline

/// Per-image min-max normalization exactly as written: `(v - min) / (max - min)`,
/// zeros for a constant map.
pub fn normalize(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    values
        .iter()
        .map(|&v| if hi > lo { ((v - lo) / (hi - lo)).clamp(0.0, 1.0) } else { 0.0 })
        .collect()
}

/// Region-growing segmenter by breadth-first search.
pub fn segment_bfs(
    norm: &[f64],
    width: usize,
    bbox: (usize, usize, usize, usize),
    alpha: f64,
    margin: f64,
) -> Vec<bool> {
    let height = norm.len() / width;
    let (x0, y0, x1, y1) = bbox;
    // seed: max in box, first in raster order on ties
    let mut seed = (y0, x0);
    for y in y0..y1 {
        for x in x0..x1 {
            if norm[y * width + x] > norm[seed.0 * width + seed.1] {
                seed = (y, x);
            }
        }
    }
    let mut out = vec![false; norm.len()];
    let s = seed.0 * width + seed.1;
    out[s] = true;
    if norm[s] <= 0.0 {
        return out;
    }
    let (bw, bh) = ((x1 - x0) as f64, (y1 - y0) as f64);
    let rx0 = (x0 as f64 - margin * bw).floor().max(0.0) as usize;
    let ry0 = (y0 as f64 - margin * bh).floor().max(0.0) as usize;
    let rx1 = ((x1 as f64 + margin * bw).ceil() as usize).min(width);
    let ry1 = ((y1 as f64 + margin * bh).ceil() as usize).min(height);
    let level = alpha * norm[s];
    let mut queue = VecDeque::from([(seed.1, seed.0)]);
    while let Some((x, y)) = queue.pop_front() {
        let neighbours = [
            (x.wrapping_sub(1), y),
            (x + 1, y),
            (x, y.wrapping_sub(1)),
            (x, y + 1),
        ];
        for (nx, ny) in neighbours {
            if nx < rx0 || nx >= rx1 || ny < ry0 || ny >= ry1 {
                continue;
            }
            let j = ny * width + nx;
            if !out[j] && norm[j] >= level {
                out[j] = true;
                queue.push_back((nx, ny));
            }
        }
    }
    out
}

/// Nearest-neighbour index map, in exact integers: the source pixel whose
/// span contains the destination pixel centre, `floor((2d + 1) s / 2D)`.
pub fn nn_source(dst: usize, src_len: usize, dst_len: usize) -> usize {
    ((2 * dst + 1) * src_len / (2 * dst_len)).min(src_len - 1)
}

// ---------------------------------------------------------------- reports

pub struct OracleImage {
    pub best_iou: f64,
    pub best_threshold: f64,
    pub auiou: f64,
    pub mean_f1: f64,
    pub auprc: Option<f64>,
    pub fpr95: Option<f64>,
}

pub struct OracleReport {
    pub best_iou: f64,
    pub best_threshold: f64,
    pub auiou: f64,
    pub mean_f1: f64,
    pub auprc: Option<f64>,
    pub fpr95: Option<f64>,
    pub iou: Vec<f64>,
    pub f1: Vec<f64>,
    pub per_image: Vec<OracleImage>,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn mean_some(v: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = v.flatten().collect();
    (!v.is_empty()).then(|| mean(&v))
}

/// Dataset evaluation from first principles. `range` is "dataset", "image"
/// or "unit"; `pool` sums confusion counts (and ranks all pixels together),
/// otherwise per-image values are averaged.
pub fn oracle_report<R: ScoreRaster>(
    images: &[(R, LabelMask)],
    steps: usize,
    range: &str,
    pool: bool,
) -> OracleReport {
    let px: Vec<Vec<(f64, bool)>> = images.iter().map(|(m, g)| labelled(m, g)).collect();
    let all: Vec<(f64, bool)> = px.iter().flatten().copied().collect();
    let shared = match range {
        "dataset" => Some(min_max(&all)),
        "unit" => Some((0.0, 1.0)),
        _ => None,
    };
    let sweeps: Vec<_> = px
        .iter()
        .map(|p| {
            let (lo, hi) = shared.unwrap_or_else(|| min_max(p));
            sweep_counts(p, steps, lo, hi)
        })
        .collect();
    let per_image: Vec<OracleImage> = px
        .iter()
        .zip(&sweeps)
        .map(|(p, s)| {
            let o = summarize(s, false);
            OracleImage {
                best_iou: o.best_iou,
                best_threshold: o.best_threshold,
                auiou: o.auiou,
                mean_f1: o.mean_f1,
                auprc: average_precision(p),
                fpr95: fpr_at_95(p),
            }
        })
        .collect();

    if pool {
        let pooled: Vec<Point> = (0..steps)
            .map(|k| {
                let mut c = (0, 0, 0, 0);
                for s in &sweeps {
                    c.0 += s[k].2 .0;
                    c.1 += s[k].2 .1;
                    c.2 += s[k].2 .2;
                    c.3 += s[k].2 .3;
                }
                (sweeps[0][k].0, sweeps[0][k].1, c)
            })
            .collect();
        let o = summarize(&pooled, shared.is_none());
        OracleReport {
            best_iou: o.best_iou,
            best_threshold: o.best_threshold,
            auiou: o.auiou,
            mean_f1: o.mean_f1,
            auprc: average_precision(&all),
            fpr95: fpr_at_95(&all),
            iou: o.iou,
            f1: o.f1,
            per_image,
        }
    } else {
        let curve = |f: &dyn Fn(&Counts) -> f64| -> Vec<f64> {
            (0..steps)
                .map(|k| mean(&sweeps.iter().map(|s| f(&s[k].2)).collect::<Vec<_>>()))
                .collect()
        };
        OracleReport {
            best_iou: mean(&per_image.iter().map(|r| r.best_iou).collect::<Vec<_>>()),
            best_threshold: mean(&per_image.iter().map(|r| r.best_threshold).collect::<Vec<_>>()),
            auiou: mean(&per_image.iter().map(|r| r.auiou).collect::<Vec<_>>()),
            mean_f1: mean(&per_image.iter().map(|r| r.mean_f1).collect::<Vec<_>>()),
            auprc: mean_some(per_image.iter().map(|r| r.auprc)),
            fpr95: mean_some(per_image.iter().map(|r| r.fpr95)),
            iou: curve(&|c| iou(*c)),
            f1: curve(&|c| f1(*c)),
            per_image,
        }
    }
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn close_opt(a: Option<f64>, b: Option<f64>, tol: f64) -> bool {
    match (a, b) {
        (Some(a), Some(b)) => close(a, b, tol),
        (None, None) => true,
        _ => false,
    }
}

/// First disagreement between a library report and the oracle, if any.
pub fn compare_report(r: &s2m::MetricReport, o: &OracleReport, tol: f64) -> Option<String> {
    let scalars = [
        ("best_iou", r.best_iou, o.best_iou),
        ("best_threshold", r.best_threshold, o.best_threshold),
        ("auiou", r.auiou, o.auiou),
        ("mean_f1", r.mean_f1, o.mean_f1),
    ];
    for (name, a, b) in scalars {
        if !close(a, b, tol) {
            return Some(format!("{name}: {a} vs oracle {b}"));
        }
    }
    if !close_opt(r.auprc, o.auprc, tol) {
        return Some(format!("auprc: {:?} vs oracle {:?}", r.auprc, o.auprc));
    }
    if !close_opt(r.fpr95, o.fpr95, tol) {
        return Some(format!("fpr95: {:?} vs oracle {:?}", r.fpr95, o.fpr95));
    }
    for (k, (a, b)) in r.curves.iou.iter().zip(&o.iou).enumerate() {
        if !close(*a, *b, tol) {
            return Some(format!("iou curve[{k}]: {a} vs oracle {b}"));
        }
    }
    for (k, (a, b)) in r.curves.f1.iter().zip(&o.f1).enumerate() {
        if !close(*a, *b, tol) {
            return Some(format!("f1 curve[{k}]: {a} vs oracle {b}"));
        }
    }
    for (i, (a, b)) in r.per_image.iter().zip(&o.per_image).enumerate() {
        let ok = close(a.best_iou, b.best_iou, tol)
            && close(a.best_threshold, b.best_threshold, tol)
            && close(a.auiou, b.auiou, tol)
            && close(a.mean_f1, b.mean_f1, tol)
            && close_opt(a.auprc, b.auprc, tol)
            && close_opt(a.fpr95, b.fpr95, tol);
        if !ok {
            return Some(format!("per_image[{i}] differs"));
        }
    }
    None
}
