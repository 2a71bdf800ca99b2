//! Outlier-exposure synthesis: paste scaled and translated outlier objects
//! into inlier images, producing composite images, OoD label masks and the
//! minimal box around every pasted object.

use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::components::{self, Connectivity};
use crate::error::{Error, Result};
use crate::io::{read_binary_mask, read_image, write_image, write_labelmask};
use crate::prompts::{write_prompts, PromptSet};
use crate::raster::{BinaryMask, BoxPrompt, LabelMask, RgbImage, LABEL_OOD};

/// An object cut out of an outlier image: its pixels plus a mask of the
/// pixels that belong to it.
#[derive(Debug, Clone, PartialEq)]
pub struct OutlierObject {
    crop: RgbImage,
    mask: BinaryMask,
}

impl OutlierObject {
    pub fn new(crop: RgbImage, mask: BinaryMask) -> Result<Self> {
        if crop.dims() != mask.dims() {
            return Err(Error::DimensionMismatch {
                expected: crop.dims(),
                found: mask.dims(),
            });
        }
        if mask.is_clear() {
            return Err(Error::Input("outlier object mask has no set pixel".into()));
        }
        Ok(OutlierObject { crop, mask })
    }

    pub fn crop(&self) -> &RgbImage {
        &self.crop
    }

    pub fn mask(&self) -> &BinaryMask {
        &self.mask
    }

    pub fn dims(&self) -> (usize, usize) {
        self.crop.dims()
    }
}

/// Uniform scale followed by an integer translation of the scaled object's
/// top-left corner.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PlacementTransform {
    pub scale: f64,
    pub offset_x: usize,
    pub offset_y: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub objects_per_image: usize,
    pub scale_min: f64,
    pub scale_max: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            objects_per_image: 1,
            scale_min: 0.5,
            scale_max: 2.0,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.objects_per_image == 0 {
            return Err(Error::Config("objects_per_image must be >= 1".into()));
        }
        if !(self.scale_min > 0.0 && self.scale_min <= self.scale_max && self.scale_max.is_finite())
        {
            return Err(Error::Config(format!(
                "need 0 < scale_min <= scale_max, got [{}, {}]",
                self.scale_min, self.scale_max
            )));
        }
        Ok(())
    }
}

/// Output size of an axis of length `len` scaled by `scale`: rounded, at least 1.
pub fn scaled_len(len: usize, scale: f64) -> usize {
    ((len as f64 * scale).round() as usize).max(1)
}

/// Nearest-neighbour source index for destination index `dst`, sampling at
/// pixel centres.
fn nearest(dst: usize, src_len: usize, dst_len: usize) -> usize {
    let s = ((dst as f64 + 0.5) * src_len as f64 / dst_len as f64).floor() as usize;
    s.min(src_len - 1)
}

fn resample<T: Copy>(src: &[T], w: usize, h: usize, nw: usize, nh: usize) -> Vec<T> {
    let cols: Vec<usize> = (0..nw).map(|x| nearest(x, w, nw)).collect();
    let mut out = Vec::with_capacity(nw * nh);
    for y in 0..nh {
        let row = nearest(y, h, nh) * w;
        out.extend(cols.iter().map(|&x| src[row + x]));
    }
    out
}

fn check_scale(scale: f64) -> Result<()> {
    if scale.is_finite() && scale > 0.0 {
        Ok(())
    } else {
        Err(Error::Config(format!("scale must be > 0, got {scale}")))
    }
}

/// Nearest-neighbour resize to `round(w*s) x round(h*s)` (at least 1x1).
pub fn scale_mask(mask: &BinaryMask, scale: f64) -> Result<BinaryMask> {
    check_scale(scale)?;
    let (w, h) = mask.dims();
    let (nw, nh) = (scaled_len(w, scale), scaled_len(h, scale));
    BinaryMask::new(nw, nh, resample(mask.values(), w, h, nw, nh))
}

fn scale_rgb(img: &RgbImage, scale: f64) -> Result<RgbImage> {
    check_scale(scale)?;
    let (w, h) = img.dims();
    let (nw, nh) = (scaled_len(w, scale), scaled_len(h, scale));
    RgbImage::new(nw, nh, resample(img.pixels(), w, h, nw, nh))
}

/// Pastes each object, in list order, into a copy of `inlier`.
///
/// Where the union of the transformed masks is clear the output is the
/// inlier pixel, untouched; elsewhere it is the pixel of the last object
/// covering it. The label mask is [`LABEL_OOD`] on that union and 0 elsewhere.
pub fn compose(
    inlier: &RgbImage,
    objects: &[OutlierObject],
    transforms: &[PlacementTransform],
) -> Result<(RgbImage, LabelMask)> {
    if objects.len() != transforms.len() {
        return Err(Error::Input(format!(
            "{} objects but {} transforms",
            objects.len(),
            transforms.len()
        )));
    }
    let (width, height) = inlier.dims();
    let mut image = inlier.clone();
    let mut label = vec![0u8; width * height];

    for (obj, t) in objects.iter().zip(transforms) {
        let mask = scale_mask(obj.mask(), t.scale)?;
        let crop = scale_rgb(obj.crop(), t.scale)?;
        let (ow, oh) = mask.dims();
        if t.offset_x + ow > width || t.offset_y + oh > height {
            return Err(Error::Placement(format!(
                "{ow}x{oh} object at ({}, {}) leaves the {width}x{height} frame",
                t.offset_x, t.offset_y
            )));
        }
        for y in 0..oh {
            for x in 0..ow {
                if mask.get(x, y) {
                    let (tx, ty) = (x + t.offset_x, y + t.offset_y);
                    image.set(tx, ty, crop.get(x, y));
                    label[ty * width + tx] = LABEL_OOD;
                }
            }
        }
    }
    Ok((image, LabelMask::new(width, height, label)?))
}

/// Draws a placement for `object` inside a `target_w` x `target_h` frame.
///
/// The scale is drawn uniformly from `[scale_min, scale_max]` and then
/// reduced to the largest scale that still fits; the offset is uniform over
/// every in-frame position of the scaled object.
pub fn sample_transform<R: Rng + ?Sized>(
    object: &OutlierObject,
    target_w: usize,
    target_h: usize,
    cfg: &SynthConfig,
    rng: &mut R,
) -> Result<PlacementTransform> {
    cfg.validate()?;
    let (w, h) = object.dims();
    if scaled_len(w, cfg.scale_min) > target_w || scaled_len(h, cfg.scale_min) > target_h {
        return Err(Error::Placement(format!(
            "{w}x{h} object does not fit a {target_w}x{target_h} frame at scale {}",
            cfg.scale_min
        )));
    }
    let drawn = if cfg.scale_max > cfg.scale_min {
        rng.gen_range(cfg.scale_min..=cfg.scale_max)
    } else {
        cfg.scale_min
    };
    let fit = (target_w as f64 / w as f64).min(target_h as f64 / h as f64);
    let mut scale = drawn.min(fit).max(cfg.scale_min);
    // rounding can push a scale just under `fit` one pixel past the frame
    while scale > cfg.scale_min
        && (scaled_len(w, scale) > target_w || scaled_len(h, scale) > target_h)
    {
        scale = (scale * (1.0 - 1e-9)).max(cfg.scale_min);
    }
    let (sw, sh) = (scaled_len(w, scale), scaled_len(h, scale));
    Ok(PlacementTransform {
        scale,
        offset_x: rng.gen_range(0..=target_w - sw),
        offset_y: rng.gen_range(0..=target_h - sh),
    })
}

/// Minimal box (confidence 1) around each connected OoD component of `mask`,
/// sorted by `(y0, x0)`. Ignore pixels never join a component.
pub fn boxes_from_mask(mask: &LabelMask, conn: Connectivity) -> Vec<BoxPrompt> {
    let ood: Vec<bool> = mask.values().iter().map(|&v| v == LABEL_OOD).collect();
    let mut boxes: Vec<BoxPrompt> = components::label(&ood, mask.width(), conn)
        .into_iter()
        .map(|c| BoxPrompt {
            x0: c.x0,
            y0: c.y0,
            x1: c.x1,
            y1: c.y1,
            confidence: 1.0,
        })
        .collect();
    boxes.sort_by_key(|b| (b.y0, b.x0, b.y1, b.x1));
    boxes
}

/// Random stream for image `index` of a dataset generated with `seed`.
pub fn image_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthSample {
    pub image: RgbImage,
    pub label: LabelMask,
    pub boxes: Vec<BoxPrompt>,
    pub transforms: Vec<PlacementTransform>,
}

/// Generates composite number `index`. The result depends only on the
/// inputs, `cfg` and `index`.
pub fn synthesize(
    inliers: &[RgbImage],
    objects: &[OutlierObject],
    cfg: &SynthConfig,
    index: u64,
) -> Result<SynthSample> {
    cfg.validate()?;
    if inliers.is_empty() || objects.is_empty() {
        return Err(Error::Input("synthesis needs inlier images and outlier objects".into()));
    }
    let mut rng = image_rng(cfg.seed, index);
    let inlier = &inliers[rng.gen_range(0..inliers.len())];
    let mut picked = Vec::with_capacity(cfg.objects_per_image);
    let mut transforms = Vec::with_capacity(cfg.objects_per_image);
    for _ in 0..cfg.objects_per_image {
        let obj = &objects[rng.gen_range(0..objects.len())];
        transforms.push(sample_transform(obj, inlier.width(), inlier.height(), cfg, &mut rng)?);
        picked.push(obj.clone());
    }
    let (image, label) = compose(inlier, &picked, &transforms)?;
    let boxes = boxes_from_mask(&label, Connectivity::Eight);
    Ok(SynthSample {
        image,
        label,
        boxes,
        transforms,
    })
}

/// Generates `count` composites in parallel; output is independent of
/// thread scheduling.
pub fn synthesize_dataset(
    inliers: &[RgbImage],
    objects: &[OutlierObject],
    cfg: &SynthConfig,
    count: usize,
) -> Result<Vec<SynthSample>> {
    (0..count as u64)
        .into_par_iter()
        .map(|i| synthesize(inliers, objects, cfg, i))
        .collect()
}

/// Sorted `.png` files of `dir`.
fn png_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_png = path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if path.is_file() && is_png {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// Every RGB `.png` in `dir`, in file-name order.
pub fn read_inlier_dir(dir: impl AsRef<Path>) -> Result<Vec<RgbImage>> {
    let dir = dir.as_ref();
    let files = png_files(dir)?;
    if files.is_empty() {
        return Err(Error::Input(format!("no inlier images in {}", dir.display())));
    }
    files.par_iter().map(read_image).collect()
}

/// Objects stored as `<stem>.png` (RGB crop) next to `<stem>_mask.png`
/// (8-bit, nonzero = object), in file-name order.
pub fn read_object_dir(dir: impl AsRef<Path>) -> Result<Vec<OutlierObject>> {
    let dir = dir.as_ref();
    let crops: Vec<PathBuf> = png_files(dir)?
        .into_iter()
        .filter(|p| !p.file_stem().and_then(|s| s.to_str()).is_some_and(|s| s.ends_with("_mask")))
        .collect();
    if crops.is_empty() {
        return Err(Error::Input(format!("no outlier objects in {}", dir.display())));
    }
    crops
        .par_iter()
        .map(|crop| {
            let stem = crop.file_stem().and_then(|s| s.to_str()).unwrap_or_default();
            let mask_path = crop.with_file_name(format!("{stem}_mask.png"));
            let mask = read_binary_mask(&mask_path)?;
            OutlierObject::new(read_image(crop)?, mask).map_err(|e| e.in_file(crop))
        })
        .collect()
}

/// Writes `img_%06d.png`, `gt_%06d.png` and `boxes_%06d.json` into `dir`.
pub fn write_sample(sample: &SynthSample, dir: impl AsRef<Path>, index: u64) -> Result<()> {
    let dir = dir.as_ref();
    let (width, height) = sample.label.dims();
    write_image(&sample.image, dir.join(format!("img_{index:06}.png")))?;
    write_labelmask(&sample.label, dir.join(format!("gt_{index:06}.png")))?;
    let set = PromptSet {
        width,
        height,
        boxes: sample.boxes.clone(),
    };
    write_prompts(&set, dir.join(format!("boxes_{index:06}.json")))
}

/// Procedural outlier objects.
pub mod shapes {
    use super::OutlierObject;
    use crate::raster::{BinaryMask, RgbImage};

    /// Solid `w` x `h` rectangle.
    pub fn rectangle(w: usize, h: usize, color: [u8; 3]) -> OutlierObject {
        let crop = RgbImage::filled(w, h, color).expect("nonzero dims");
        let mask = BinaryMask::new(w, h, vec![true; w * h]).expect("nonzero dims");
        OutlierObject::new(crop, mask).expect("rectangle mask is full")
    }

    /// Ellipse inscribed in a `w` x `h` box (pixel centres inside the ellipse).
    pub fn ellipse(w: usize, h: usize, color: [u8; 3]) -> OutlierObject {
        let (rx, ry) = (w as f64 / 2.0, h as f64 / 2.0);
        let mut values = Vec::with_capacity(w * h);
        for y in 0..h {
            for x in 0..w {
                let dx = (x as f64 + 0.5 - rx) / rx;
                let dy = (y as f64 + 0.5 - ry) / ry;
                values.push(dx * dx + dy * dy <= 1.0);
            }
        }
        let crop = RgbImage::filled(w, h, color).expect("nonzero dims");
        let mask = BinaryMask::new(w, h, values).expect("nonzero dims");
        OutlierObject::new(crop, mask).expect("ellipse contains its centre")
    }
}
