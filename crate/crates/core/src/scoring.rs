//! Per-pixel anomaly scores from segmentation logits.

use std::f64::consts::LN_2;

use crate::error::{Error, Result};
use crate::raster::{LogitStack, ScoreMap, ScoreRaster};

/// Softmax temperature, strictly positive.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct Temperature(f64);

impl Temperature {
    pub fn new(value: f64) -> Result<Self> {
        if value.is_finite() && value > 0.0 {
            Ok(Temperature(value))
        } else {
            Err(Error::Config(format!("temperature must be > 0, got {value}")))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl Default for Temperature {
    fn default() -> Self {
        Temperature(1.0)
    }
}

/// Softmax output, pixel-major: class `c` of pixel `i` is at `i * classes + c`.
#[derive(Debug, Clone, PartialEq)]
pub struct Probabilities {
    classes: usize,
    width: usize,
    height: usize,
    values: Vec<f64>,
}

impl Probabilities {
    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn pixel(&self, index: usize) -> &[f64] {
        &self.values[index * self.classes..(index + 1) * self.classes]
    }
}

/// Shifted exponentials `e^(f_c - max)` of one pixel and their sum.
fn shifted_exp(logits: &LogitStack, index: usize, buf: &mut Vec<f64>) -> (f64, f64) {
    buf.clear();
    buf.extend(logits.pixel(index));
    let max = buf.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in buf.iter_mut() {
        *v -= max;
        sum += v.exp();
    }
    (max, sum)
}

pub fn softmax_probs(logits: &LogitStack) -> Probabilities {
    let classes = logits.classes();
    let n = logits.width() * logits.height();
    let mut values = Vec::with_capacity(n * classes);
    let mut buf = Vec::with_capacity(classes);
    for i in 0..n {
        let (_, sum) = shifted_exp(logits, i, &mut buf);
        values.extend(buf.iter().map(|d| d.exp() / sum));
    }
    Probabilities {
        classes,
        width: logits.width(),
        height: logits.height(),
        values,
    }
}

/// Shannon entropy of the softmax distribution, in bits.
///
/// Evaluated as `log2 Z - sum_c p_c (f_c - max) / ln 2` with
/// `Z = sum_c e^(f_c - max)`, which is the same quantity as
/// `-sum_c p_c log2 p_c` but treats vanishing probabilities without a
/// `0 * log 0` term and gives exactly `log2 C` for uniform logits.
pub fn entropy_score(logits: &LogitStack) -> ScoreMap {
    let classes = logits.classes();
    let upper = (classes as f64).log2();
    let n = logits.width() * logits.height();
    let mut buf = Vec::with_capacity(classes);
    let values = (0..n)
        .map(|i| {
            let (_, sum) = shifted_exp(logits, i, &mut buf);
            let weighted: f64 = buf.iter().map(|&d| d.exp() * d).sum();
            let h = sum.log2() - weighted / (sum * LN_2);
            h.clamp(0.0, upper) as f32
        })
        .collect();
    ScoreMap::new(logits.width(), logits.height(), values)
        .expect("entropy is bounded by log2 C")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum EnergyForm {
    /// `-T log sum_c e^(f_c / T)`, evaluated with max subtraction.
    #[default]
    LogSumExp,
    /// `-T sum_c e^(f_c / T)` with no logarithm.
    Literal,
}

pub fn energy_score(logits: &LogitStack, t: Temperature, form: EnergyForm) -> Result<ScoreMap> {
    let t = t.get();
    let n = logits.width() * logits.height();
    let values = (0..n)
        .map(|i| {
            let e = match form {
                EnergyForm::LogSumExp => {
                    let scaled = logits.pixel(i).map(|f| f / t);
                    let scaled: Vec<f64> = scaled.collect();
                    let max = scaled.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let sum: f64 = scaled.iter().map(|s| (s - max).exp()).sum();
                    -t * (max + sum.ln())
                }
                EnergyForm::Literal => -t * logits.pixel(i).map(|f| (f / t).exp()).sum::<f64>(),
            };
            e as f32
        })
        .collect();
    ScoreMap::new(logits.width(), logits.height(), values)
}

pub fn scale_scores(map: &ScoreMap, factor: f64) -> Result<ScoreMap> {
    if !factor.is_finite() {
        return Err(Error::Config(format!("scale factor {factor} is not finite")));
    }
    ScoreMap::new(
        map.width(),
        map.height(),
        map.values()
            .iter()
            .map(|&v| (f64::from(v) * factor) as f32)
            .collect(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NormRange {
    /// Minimum and maximum of the map itself.
    PerImage,
    Explicit { min: f64, max: f64 },
}

/// `(v - min) / (max - min)` clamped to `[0, 1]`; all zeros when `max == min`.
pub(crate) fn normalize_values(values: impl Iterator<Item = f64>, min: f64, max: f64) -> Vec<f64> {
    let span = max - min;
    if span <= 0.0 {
        return values.map(|_| 0.0).collect();
    }
    values.map(|v| ((v - min) / span).clamp(0.0, 1.0)).collect()
}

/// Per-image min-max normalization at `f64` precision.
pub(crate) fn normalized_f64<R: ScoreRaster + ?Sized>(map: &R) -> Vec<f64> {
    let scores = map.scores_f64();
    let (min, max) = scores
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    normalize_values(scores.into_iter(), min, max)
}

pub fn normalize_scores(map: &ScoreMap, range: NormRange) -> Result<ScoreMap> {
    let values = match range {
        NormRange::PerImage => normalized_f64(map),
        NormRange::Explicit { min, max } => {
            if !(min.is_finite() && max.is_finite() && max >= min) {
                return Err(Error::Config(format!(
                    "normalization range ({min}, {max}) is not ordered"
                )));
            }
            normalize_values(map.scores_f64().into_iter(), min, max)
        }
    };
    ScoreMap::from_f64(map.width(), map.height(), &values)
}
