//! File formats.
//!
//! * Score maps and logit stacks: NPY v1.0, little-endian `f32` (`<f4`),
//!   C order, shape `(H, W)` or `(C, H, W)`. Payloads are copied bit for bit.
//! * Label and binary masks: 8-bit single channel PNG, or binary PGM (`P5`)
//!   when the path ends in `.pgm`.
//! * RGB images: 8-bit three channel PNG.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder, ImageFormat};
use npyz::{DType, NpyFile, Order, WriterBuilder};

use crate::error::{Error, Result};
use crate::raster::{BinaryMask, LabelMask, LogitStack, RgbImage, ScoreMap};

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn read_npy_f32(path: &Path, ndim: usize) -> Result<(Vec<usize>, Vec<f32>)> {
    let npy = NpyFile::new(open(path)?).map_err(|e| Error::format(path, e.to_string()))?;
    match npy.dtype() {
        DType::Plain(ts) if ts.to_string() == "<f4" => {}
        other => {
            return Err(Error::format(
                path,
                format!("unsupported dtype {}, expected '<f4'", other.descr()),
            ))
        }
    }
    if npy.order() != Order::C {
        return Err(Error::format(path, "Fortran-ordered arrays are not supported"));
    }
    let shape = npy
        .shape()
        .iter()
        .map(|&d| usize::try_from(d).map_err(|_| Error::format(path, "dimension overflow")))
        .collect::<Result<Vec<_>>>()?;
    if shape.len() != ndim {
        return Err(Error::format(
            path,
            format!("expected a {ndim}-d array, found shape {shape:?}"),
        ));
    }
    let total = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| Error::format(path, "dimension overflow"))?;
    if total == 0 {
        return Err(Error::format(path, format!("empty array of shape {shape:?}")));
    }
    let values: Vec<f32> = npy
        .into_vec()
        .map_err(|e| Error::format(path, e.to_string()))?;
    if values.len() != total {
        return Err(Error::format(
            path,
            format!("payload holds {} values, header promises {total}", values.len()),
        ));
    }
    Ok((shape, values))
}

fn write_npy_f32(path: &Path, shape: &[usize], values: &[f32]) -> Result<()> {
    let shape: Vec<u64> = shape.iter().map(|&d| d as u64).collect();
    let mut out = create(path)?;
    let mut writer = npyz::WriteOptions::new()
        .default_dtype()
        .shape(&shape)
        .writer(&mut out)
        .begin_nd()
        .map_err(|e| Error::io(path, e))?;
    writer
        .extend(values.iter().copied())
        .map_err(|e| Error::io(path, e))?;
    writer.finish().map_err(|e| Error::io(path, e))?;
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn read_scoremap(path: impl AsRef<Path>) -> Result<ScoreMap> {
    let path = path.as_ref();
    let (shape, values) = read_npy_f32(path, 2)?;
    ScoreMap::new(shape[1], shape[0], values).map_err(|e| e.in_file(path))
}

pub fn write_scoremap(map: &ScoreMap, path: impl AsRef<Path>) -> Result<()> {
    use crate::raster::ScoreRaster;
    write_npy_f32(path.as_ref(), &[map.height(), map.width()], map.values())
}

pub fn read_logits(path: impl AsRef<Path>) -> Result<LogitStack> {
    let path = path.as_ref();
    let (shape, values) = read_npy_f32(path, 3)?;
    LogitStack::new(shape[0], shape[2], shape[1], values).map_err(|e| e.in_file(path))
}

pub fn write_logits(logits: &LogitStack, path: impl AsRef<Path>) -> Result<()> {
    write_npy_f32(
        path.as_ref(),
        &[logits.classes(), logits.height(), logits.width()],
        logits.values(),
    )
}

fn is_pgm(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("pgm"))
}

fn read_gray(path: &Path) -> Result<(usize, usize, Vec<u8>)> {
    let format = if is_pgm(path) {
        ImageFormat::Pnm
    } else {
        ImageFormat::Png
    };
    let img = image::load(open(path)?, format).map_err(|e| Error::format(path, e.to_string()))?;
    match img {
        image::DynamicImage::ImageLuma8(buf) => {
            let (w, h) = buf.dimensions();
            Ok((w as usize, h as usize, buf.into_raw()))
        }
        other => Err(Error::format(
            path,
            format!("expected 8-bit single channel, found {:?}", other.color()),
        )),
    }
}

pub(crate) fn write_gray(path: &Path, width: usize, height: usize, data: &[u8]) -> Result<()> {
    let mut out = create(path)?;
    let (w, h) = (width as u32, height as u32);
    let written = if is_pgm(path) {
        // the generic PNM path picks PAM (P7); force a binary graymap
        PnmEncoder::new(&mut out)
            .with_subtype(PnmSubtype::Graymap(SampleEncoding::Binary))
            .write_image(data, w, h, ExtendedColorType::L8)
    } else {
        image::write_buffer_with_format(&mut out, data, w, h, ExtendedColorType::L8, ImageFormat::Png)
    };
    written.map_err(|e| Error::format(path, e.to_string()))?;
    out.flush().map_err(|e| Error::io(path, e))
}

pub fn read_labelmask(path: impl AsRef<Path>) -> Result<LabelMask> {
    let path = path.as_ref();
    let (w, h, data) = read_gray(path)?;
    LabelMask::new(w, h, data).map_err(|e| e.in_file(path))
}

pub fn write_labelmask(mask: &LabelMask, path: impl AsRef<Path>) -> Result<()> {
    write_gray(path.as_ref(), mask.width(), mask.height(), mask.values())
}

/// Reads a binary mask; any nonzero pixel is set.
pub fn read_binary_mask(path: impl AsRef<Path>) -> Result<BinaryMask> {
    let path = path.as_ref();
    let (w, h, data) = read_gray(path)?;
    BinaryMask::new(w, h, data.into_iter().map(|v| v != 0).collect()).map_err(|e| e.in_file(path))
}

/// Writes set pixels as 255 and clear pixels as 0.
pub fn write_binary_mask(mask: &BinaryMask, path: impl AsRef<Path>) -> Result<()> {
    let data: Vec<u8> = mask.values().iter().map(|&b| if b { 255 } else { 0 }).collect();
    write_gray(path.as_ref(), mask.width(), mask.height(), &data)
}

pub fn read_image(path: impl AsRef<Path>) -> Result<RgbImage> {
    let path = path.as_ref();
    let img = image::load(open(path)?, ImageFormat::Png)
        .map_err(|e| Error::format(path, e.to_string()))?;
    match img {
        image::DynamicImage::ImageRgb8(buf) => {
            let (w, h) = buf.dimensions();
            let pixels = buf.pixels().map(|p| p.0).collect();
            RgbImage::new(w as usize, h as usize, pixels).map_err(|e| e.in_file(path))
        }
        other => Err(Error::format(
            path,
            format!("expected 8-bit RGB, found {:?}", other.color()),
        )),
    }
}

pub fn write_image(img: &RgbImage, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let data: Vec<u8> = img.pixels().iter().flatten().copied().collect();
    let mut out = create(path)?;
    image::write_buffer_with_format(
        &mut out,
        &data,
        img.width() as u32,
        img.height() as u32,
        ExtendedColorType::Rgb8,
        ImageFormat::Png,
    )
    .map_err(|e| Error::format(path, e.to_string()))?;
    out.flush().map_err(|e| Error::io(path, e))
}
