//! PNG reading and writing for scene images and masks.

use std::io::Cursor;
use std::path::Path;

use image::{ImageFormat, ImageReader};
use thiserror::Error;

use crate::mask::RasterMask;

#[derive(Debug, Error)]
pub enum ImageIoError {
    #[error("{0}: {1}")]
    Io(String, #[source] std::io::Error),
    #[error("image codec: {0}")]
    Codec(#[from] image::ImageError),
    #[error("expected {expected:?} pixels, found {found:?}")]
    Dimensions { expected: (u32, u32), found: (u32, u32) },
    #[error("bad mask: {0}")]
    Mask(#[from] crate::mask::MaskError),
}

pub fn dimensions(path: &Path) -> Result<(u32, u32), ImageIoError> {
    Ok(image::image_dimensions(path)?)
}

pub fn read_rgb(path: &Path) -> Result<(u32, u32, Vec<u8>), ImageIoError> {
    let bytes = std::fs::read(path).map_err(|e| ImageIoError::Io(path.display().to_string(), e))?;
    decode_rgb_png(&bytes)
}

pub fn decode_rgb_png(bytes: &[u8]) -> Result<(u32, u32, Vec<u8>), ImageIoError> {
    let img = ImageReader::with_format(Cursor::new(bytes), ImageFormat::Png).decode()?;
    let rgb = img.to_rgb8();
    Ok((rgb.width(), rgb.height(), rgb.into_raw()))
}

pub fn encode_rgb_png(width: u32, height: u32, rgb: &[u8]) -> Result<Vec<u8>, ImageIoError> {
    let mut out = Vec::new();
    image::write_buffer_with_format(
        &mut Cursor::new(&mut out),
        rgb,
        width,
        height,
        image::ExtendedColorType::Rgb8,
        ImageFormat::Png,
    )?;
    Ok(out)
}

pub fn write_rgb_png(path: &Path, width: u32, height: u32, rgb: &[u8]) -> Result<(), ImageIoError> {
    let bytes = encode_rgb_png(width, height, rgb)?;
    std::fs::write(path, bytes).map_err(|e| ImageIoError::Io(path.display().to_string(), e))
}

/// Grayscale PNG, pixel values above 127 are inside.
pub fn read_mask_png(path: &Path) -> Result<RasterMask, ImageIoError> {
    let bytes = std::fs::read(path).map_err(|e| ImageIoError::Io(path.display().to_string(), e))?;
    let img = ImageReader::with_format(Cursor::new(bytes), ImageFormat::Png).decode()?;
    let gray = img.to_luma8();
    Ok(RasterMask::from_gray(gray.width(), gray.height(), gray.as_raw())?)
}

pub fn write_mask_png(path: &Path, mask: &RasterMask) -> Result<(), ImageIoError> {
    let mut out = Vec::new();
    image::write_buffer_with_format(
        &mut Cursor::new(&mut out),
        &mask.to_gray(),
        mask.width(),
        mask.height(),
        image::ExtendedColorType::L8,
        ImageFormat::Png,
    )?;
    std::fs::write(path, out).map_err(|e| ImageIoError::Io(path.display().to_string(), e))
}
