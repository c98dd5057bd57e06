use crate::mask::RasterMask;
use crate::model::{BoundingBox, OcrToken};

use super::glyphs::{self, GLYPH_HEIGHT, GLYPH_WIDTH};
use super::SynthError;

pub type Rgb = [u8; 3];

/// Geometry and ink of one rendered sign.
#[derive(Debug, Clone, PartialEq)]
pub struct SignRender {
    pub text: String,
    pub scale: u32,
    /// Full panel, padding included.
    pub panel: BoundingBox,
    /// Top-left of the first glyph cell.
    pub text_origin: (u32, u32),
    /// Ink pixels in image coordinates.
    pub ink: Vec<(u32, u32)>,
    /// One token per space-separated word.
    pub tokens: Vec<OcrToken>,
}

impl SignRender {
    /// Cell rectangle `(x, y, w, h)` of the character at `index`.
    pub fn cell(&self, index: usize) -> (u32, u32, u32, u32) {
        let s = self.scale;
        (
            self.text_origin.0 + index as u32 * (GLYPH_WIDTH + 1) * s,
            self.text_origin.1,
            GLYPH_WIDTH * s,
            GLYPH_HEIGHT * s,
        )
    }
}

pub fn padding(scale: u32) -> u32 {
    2 * scale
}

/// Width of a run of `n` glyphs: `n` cells plus `n - 1` one-unit gaps.
pub fn text_width(n: u32, scale: u32) -> u32 {
    if n == 0 {
        0
    } else {
        n * GLYPH_WIDTH * scale + (n - 1) * scale
    }
}

/// Panel size for `text` at `scale`.
pub fn panel_size(text: &str, scale: u32) -> (u32, u32) {
    let n = text.chars().count() as u32;
    let p = padding(scale);
    (text_width(n, scale) + 2 * p, GLYPH_HEIGHT * scale + 2 * p)
}

fn glyph_ink(c: char, x0: u32, y0: u32, scale: u32, out: &mut Vec<(u32, u32)>) {
    let rows = glyphs::glyph(c).expect("glyph checked by caller");
    for (gy, row) in rows.iter().enumerate() {
        for (gx, px) in row.chars().enumerate() {
            if px != '#' {
                continue;
            }
            for dy in 0..scale {
                for dx in 0..scale {
                    out.push((x0 + gx as u32 * scale + dx, y0 + gy as u32 * scale + dy));
                }
            }
        }
    }
}

/// Ink pixels of a single glyph with its cell at `(x0, y0)`.
pub fn glyph_pixels(c: char, x0: u32, y0: u32, scale: u32) -> Result<Vec<(u32, u32)>, SynthError> {
    if glyphs::glyph(c).is_none() {
        return Err(SynthError::UnsupportedGlyphs(c.to_string()));
    }
    let mut out = Vec::new();
    glyph_ink(c, x0, y0, scale, &mut out);
    Ok(out)
}

/// Lays out `text` as a sign panel whose top-left corner is `origin`.
pub fn render_sign(text: &str, origin: (u32, u32), scale: u32) -> Result<SignRender, SynthError> {
    if text.trim().is_empty() {
        return Err(SynthError::EmptyText);
    }
    if scale == 0 {
        return Err(SynthError::Layout("scale must be > 0".into()));
    }
    let missing: String = text.chars().filter(|c| glyphs::glyph(*c).is_none()).collect();
    if !missing.is_empty() {
        return Err(SynthError::UnsupportedGlyphs(missing));
    }

    let (pw, ph) = panel_size(text, scale);
    let p = padding(scale);
    let text_origin = (origin.0 + p, origin.1 + p);
    let mut sign = SignRender {
        text: text.to_string(),
        scale,
        panel: BoundingBox::new(origin.0, origin.1, pw, ph),
        text_origin,
        ink: Vec::new(),
        tokens: Vec::new(),
    };

    let chars: Vec<char> = text.chars().collect();
    for (i, c) in chars.iter().enumerate() {
        let (cx, cy, _, _) = sign.cell(i);
        glyph_ink(*c, cx, cy, scale, &mut sign.ink);
    }

    let mut i = 0;
    while i < chars.len() {
        if chars[i] == ' ' {
            i += 1;
            continue;
        }
        let start = i;
        while i < chars.len() && chars[i] != ' ' {
            i += 1;
        }
        let word: String = chars[start..i].iter().collect();
        let (x, y, _, h) = sign.cell(start);
        let w = text_width((i - start) as u32, scale);
        sign.tokens.push(OcrToken::new(word, BoundingBox::new(x, y, w, h)));
    }
    Ok(sign)
}

/// RGB raster being painted.
#[derive(Debug, Clone, PartialEq)]
pub struct Canvas {
    pub width: u32,
    pub height: u32,
    pub rgb: Vec<u8>,
}

impl Canvas {
    pub fn new(width: u32, height: u32, fill: Rgb) -> Self {
        let mut rgb = Vec::with_capacity(width as usize * height as usize * 3);
        for _ in 0..width as usize * height as usize {
            rgb.extend_from_slice(&fill);
        }
        Self { width, height, rgb }
    }

    pub fn put(&mut self, x: u32, y: u32, c: Rgb) {
        if x < self.width && y < self.height {
            let i = (y as usize * self.width as usize + x as usize) * 3;
            self.rgb[i..i + 3].copy_from_slice(&c);
        }
    }

    pub fn fill_rect(&mut self, x: u32, y: u32, w: u32, h: u32, c: Rgb) {
        for yy in y..y.saturating_add(h).min(self.height) {
            for xx in x..x.saturating_add(w).min(self.width) {
                self.put(xx, yy, c);
            }
        }
    }

    pub fn fill_mask(&mut self, mask: &RasterMask, c: Rgb) {
        for (x, y) in mask.iter_set() {
            self.put(x, y, c);
        }
    }

    pub fn draw_sign(&mut self, sign: &SignRender, bg: Rgb, fg: Rgb) {
        let b = &sign.panel;
        self.fill_rect(b.x, b.y, b.w, b.h, bg);
        for (x, y) in &sign.ink {
            self.put(*x, *y, fg);
        }
    }
}
