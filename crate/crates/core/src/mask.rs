//! Binary raster masks and the exact overlap arithmetic built on them.
//!
//! Masks are stored as a packed row-major bit-set (one `u64` word per 64
//! pixels), so area and intersection reduce to word-parallel popcounts.
//! Bits past `width * height` in the last word are always zero.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

/// Upper bound on either mask dimension.
pub const MAX_DIMENSION: u32 = 8192;

/// Default obstruction threshold. Raise it to flag only heavier occlusion.
pub const DEFAULT_THRESHOLD: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MaskError {
    #[error("mask dimension mismatch: {a_width}x{a_height} vs {b_width}x{b_height}")]
    DimensionMismatch {
        a_width: u32,
        a_height: u32,
        b_width: u32,
        b_height: u32,
    },
    #[error("empty key object mask")]
    EmptyKeyMask,
    #[error("threshold {0} outside (0, 1]")]
    InvalidThreshold(f64),
    #[error("invalid mask dimensions {0}x{1}")]
    InvalidDimensions(u32, u32),
    #[error("malformed RLE: {0}")]
    MalformedRle(String),
}

#[derive(Clone, PartialEq, Eq, Hash)]
pub struct RasterMask {
    width: u32,
    height: u32,
    words: Vec<u64>,
}

impl fmt::Debug for RasterMask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RasterMask")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("area", &area(self))
            .finish()
    }
}

fn check_dims(width: u32, height: u32) -> Result<(), MaskError> {
    if width == 0 || height == 0 || width > MAX_DIMENSION || height > MAX_DIMENSION {
        return Err(MaskError::InvalidDimensions(width, height));
    }
    Ok(())
}

impl RasterMask {
    /// All-zero mask.
    pub fn new(width: u32, height: u32) -> Result<Self, MaskError> {
        check_dims(width, height)?;
        let pixels = width as usize * height as usize;
        Ok(Self {
            width,
            height,
            words: vec![0; pixels.div_ceil(64)],
        })
    }

    /// Mask with the rectangle `[x, x + w) x [y, y + h)` set, clipped to the mask bounds.
    pub fn from_rect(width: u32, height: u32, x: u32, y: u32, w: u32, h: u32) -> Result<Self, MaskError> {
        let mut mask = Self::new(width, height)?;
        mask.fill_rect(x, y, w, h);
        Ok(mask)
    }

    /// Builds a mask from one boolean per pixel, row-major.
    pub fn from_bools(width: u32, height: u32, bits: &[bool]) -> Result<Self, MaskError> {
        let mut mask = Self::new(width, height)?;
        if bits.len() != mask.len() {
            return Err(MaskError::InvalidDimensions(width, height));
        }
        for (i, _) in bits.iter().enumerate().filter(|(_, b)| **b) {
            mask.words[i / 64] |= 1 << (i % 64);
        }
        Ok(mask)
    }

    /// Builds a mask from an 8-bit grayscale buffer; values above 127 are inside.
    pub fn from_gray(width: u32, height: u32, gray: &[u8]) -> Result<Self, MaskError> {
        let bools: Vec<bool> = gray.iter().map(|v| *v > 127).collect();
        Self::from_bools(width, height, &bools)
    }

    pub fn to_gray(&self) -> Vec<u8> {
        (0..self.len())
            .map(|i| if self.bit(i) { 255 } else { 0 })
            .collect()
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn dimensions(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    /// Number of pixels.
    pub fn len(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn is_empty(&self) -> bool {
        self.words.iter().all(|w| *w == 0)
    }

    #[inline]
    fn bit(&self, index: usize) -> bool {
        self.words[index / 64] >> (index % 64) & 1 == 1
    }

    pub fn get(&self, x: u32, y: u32) -> bool {
        x < self.width && y < self.height && self.bit(y as usize * self.width as usize + x as usize)
    }

    pub fn set(&mut self, x: u32, y: u32, value: bool) {
        if x >= self.width || y >= self.height {
            return;
        }
        let i = y as usize * self.width as usize + x as usize;
        if value {
            self.words[i / 64] |= 1 << (i % 64);
        } else {
            self.words[i / 64] &= !(1 << (i % 64));
        }
    }

    pub fn fill_rect(&mut self, x: u32, y: u32, w: u32, h: u32) {
        let x1 = x.saturating_add(w).min(self.width);
        let y1 = y.saturating_add(h).min(self.height);
        for yy in y.min(self.height)..y1 {
            for xx in x.min(self.width)..x1 {
                self.set(xx, yy, true);
            }
        }
    }

    /// Iterates over the coordinates of set pixels in row-major order.
    pub fn iter_set(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        let width = self.width as usize;
        self.words.iter().enumerate().flat_map(move |(wi, word)| {
            let mut w = *word;
            std::iter::from_fn(move || {
                if w == 0 {
                    return None;
                }
                let tz = w.trailing_zeros() as usize;
                w &= w - 1;
                let i = wi * 64 + tz;
                Some(((i % width) as u32, (i / width) as u32))
            })
        })
    }

    /// Smallest rectangle `(x, y, w, h)` containing every set pixel.
    pub fn bounding_rect(&self) -> Option<(u32, u32, u32, u32)> {
        let mut it = self.iter_set();
        let (fx, fy) = it.next()?;
        let (mut x0, mut y0, mut x1, mut y1) = (fx, fy, fx, fy);
        for (x, y) in it {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        Some((x0, y0, x1 - x0 + 1, y1 - y0 + 1))
    }

    fn same_dims(&self, other: &RasterMask) -> Result<(), MaskError> {
        if self.dimensions() != other.dimensions() {
            return Err(MaskError::DimensionMismatch {
                a_width: self.width,
                a_height: self.height,
                b_width: other.width,
                b_height: other.height,
            });
        }
        Ok(())
    }

    pub fn and(&self, other: &RasterMask) -> Result<RasterMask, MaskError> {
        self.same_dims(other)?;
        Ok(RasterMask {
            width: self.width,
            height: self.height,
            words: self.words.iter().zip(&other.words).map(|(a, b)| a & b).collect(),
        })
    }

    pub fn or(&self, other: &RasterMask) -> Result<RasterMask, MaskError> {
        self.same_dims(other)?;
        Ok(RasterMask {
            width: self.width,
            height: self.height,
            words: self.words.iter().zip(&other.words).map(|(a, b)| a | b).collect(),
        })
    }

    /// Copy of this mask placed inside a larger all-zero canvas with the given
    /// border on each side.
    pub fn padded(&self, left: u32, top: u32, right: u32, bottom: u32) -> Result<RasterMask, MaskError> {
        let mut out = RasterMask::new(self.width + left + right, self.height + top + bottom)?;
        for (x, y) in self.iter_set() {
            out.set(x + left, y + top, true);
        }
        Ok(out)
    }
}

/// Number of set pixels.
pub fn area(mask: &RasterMask) -> u64 {
    mask.words.iter().map(|w| u64::from(w.count_ones())).sum()
}

/// Number of pixels set in both masks.
pub fn intersection_area(a: &RasterMask, b: &RasterMask) -> Result<u64, MaskError> {
    a.same_dims(b)?;
    Ok(a.words
        .iter()
        .zip(&b.words)
        .map(|(x, y)| u64::from((x & y).count_ones()))
        .sum())
}

/// Fraction of the key object's area covered by the content mask.
pub fn obstruction_ratio(key: &RasterMask, content: &RasterMask) -> Result<f64, MaskError> {
    Ok(measure(key, content)?.0)
}

fn measure(key: &RasterMask, content: &RasterMask) -> Result<(f64, u64, u64), MaskError> {
    let overlap = intersection_area(key, content)?;
    let key_area = area(key);
    if key_area == 0 {
        return Err(MaskError::EmptyKeyMask);
    }
    Ok((overlap as f64 / key_area as f64, key_area, overlap))
}

pub fn validate_threshold(threshold: f64) -> Result<(), MaskError> {
    if threshold > 0.0 && threshold <= 1.0 {
        Ok(())
    } else {
        Err(MaskError::InvalidThreshold(threshold))
    }
}

/// Inclusive threshold test: `ratio >= threshold`.
pub fn flag(ratio: f64, threshold: f64) -> Result<bool, MaskError> {
    validate_threshold(threshold)?;
    Ok(ratio >= threshold)
}

/// Overlap between one key object and the rendered content.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObstructionMeasure {
    pub key_area: u64,
    pub overlap_area: u64,
    pub ratio: f64,
    pub flagged: bool,
}

impl ObstructionMeasure {
    pub fn compute(key: &RasterMask, content: &RasterMask, threshold: f64) -> Result<Self, MaskError> {
        validate_threshold(threshold)?;
        let (ratio, key_area, overlap_area) = measure(key, content)?;
        Ok(Self {
            key_area,
            overlap_area,
            ratio,
            flagged: flag(ratio, threshold)?,
        })
    }
}

/// Run-length encodes a mask as `"<width> <height>\n<run>,<run>,..."`.
///
/// Runs alternate starting with a run of 0-pixels (possibly of length zero).
pub fn rle_encode(mask: &RasterMask) -> String {
    let mut runs = Vec::new();
    let mut current = false;
    let mut count = 0u64;
    for i in 0..mask.len() {
        let b = mask.bit(i);
        if b == current {
            count += 1;
        } else {
            runs.push(count);
            current = b;
            count = 1;
        }
    }
    runs.push(count);
    let body: Vec<String> = runs.iter().map(u64::to_string).collect();
    format!("{} {}\n{}", mask.width, mask.height, body.join(","))
}

fn malformed(msg: impl Into<String>) -> MaskError {
    MaskError::MalformedRle(msg.into())
}

pub fn rle_decode(payload: &str) -> Result<RasterMask, MaskError> {
    let payload = payload.strip_suffix('\n').unwrap_or(payload);
    let (header, body) = payload
        .split_once('\n')
        .ok_or_else(|| malformed("missing header line"))?;
    let mut dims = header.split(' ');
    let parse_dim = |tok: Option<&str>| -> Result<u32, MaskError> {
        let tok = tok.ok_or_else(|| malformed("header needs width and height"))?;
        tok.parse::<u32>()
            .map_err(|_| malformed(format!("bad header token {tok:?}")))
    };
    let width = parse_dim(dims.next())?;
    let height = parse_dim(dims.next())?;
    if dims.next().is_some() {
        return Err(malformed("extra header tokens"));
    }
    let mut mask = RasterMask::new(width, height).map_err(|e| malformed(e.to_string()))?;
    let total = mask.len() as u64;

    let mut pos = 0u64;
    let mut value = false;
    for tok in body.split(',') {
        let run: u64 = tok
            .parse()
            .map_err(|_| malformed(format!("non-numeric run {tok:?}")))?;
        let end = pos
            .checked_add(run)
            .filter(|end| *end <= total)
            .ok_or_else(|| malformed(format!("runs exceed {total} pixels")))?;
        if value {
            for i in pos as usize..end as usize {
                mask.words[i / 64] |= 1 << (i % 64);
            }
        }
        pos = end;
        value = !value;
    }
    if pos != total {
        return Err(malformed(format!("runs sum to {pos}, expected {total}")));
    }
    Ok(mask)
}

impl Serialize for RasterMask {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&rle_encode(self))
    }
}

impl<'de> Deserialize<'de> for RasterMask {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        rle_decode(&s).map_err(serde::de::Error::custom)
    }
}
