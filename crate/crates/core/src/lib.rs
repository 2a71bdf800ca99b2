//! Turn per-pixel anomaly scores into out-of-distribution segmentation masks
//! and evaluate them.
//!
//! The pipeline has four stages, each usable on its own:
//!
//! 1. [`scoring`]: entropy or energy scores from classifier logits.
//! 2. [`prompts`]: box prompts from a score map (quantile threshold,
//!    connected components, box merging).
//! 3. [`segmenter`]: one mask per box by region growing, fused into a
//!    per-pixel confidence map.
//! 4. [`metrics`]: threshold sweeps (best IoU, AuIoU, mean F1) and
//!    ranking metrics (AuPRC, FPR95).
//!
//! [`synth`] builds outlier-exposure composites with exact ground truth and
//! [`bench`] runs everything end to end.
//!
//! ```
//! use s2m::{generate_prompts, segment_all, fuse_masks, PromptGenConfig, ScoreMap, SegmenterConfig};
//!
//! let mut v = vec![0.0f32; 64 * 64];
//! for y in 20..30 {
//!     for x in 10..25 {
//!         v[y * 64 + x] = 1.0;
//!     }
//! }
//! let scores = ScoreMap::new(64, 64, v).unwrap();
//! let boxes = generate_prompts(&scores, &PromptGenConfig::default()).unwrap();
//! assert_eq!((boxes[0].x0, boxes[0].y0, boxes[0].x1, boxes[0].y1), (10, 20, 25, 30));
//!
//! let masks = segment_all(&scores, &boxes, &SegmenterConfig::default()).unwrap();
//! let conf = fuse_masks(&masks, 64, 64).unwrap();
//! assert_eq!(conf.get(12, 22), 1.0);
//! assert_eq!(conf.get(0, 0), 0.0);
//! ```

pub mod bench;
pub mod components;
pub mod dataset;
mod error;
pub mod io;
pub mod metrics;
pub mod prompts;
pub mod raster;
pub mod scoring;
pub mod segmenter;
pub mod synth;

pub use components::Connectivity;
pub use error::{Error, Result};
pub use metrics::{aggregate, Aggregation, ImageEval, MetricReport, SweepConfig, SweepRange};
pub use prompts::{generate_prompts, PromptGenConfig, PromptSet};
pub use raster::{
    BinaryMask, BoxPrompt, ConfidenceMap, LabelMask, LogitStack, RgbImage, ScoreMap, ScoreRaster,
    LABEL_ID, LABEL_IGNORE, LABEL_OOD,
};
pub use scoring::{energy_score, entropy_score, EnergyForm, Temperature};
pub use segmenter::{fuse_masks, segment_all, PromptMask, SegmenterConfig};

#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/rasters.md")]
    mod rasters {}
    #[doc = include_str!("../../../book/src/scoring.md")]
    mod scoring {}
    #[doc = include_str!("../../../book/src/prompts.md")]
    mod prompts {}
    #[doc = include_str!("../../../book/src/segmentation.md")]
    mod segmentation {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/synthesis.md")]
    mod synthesis {}
    #[doc = include_str!("../../../book/src/pipeline.md")]
    mod pipeline {}
}
