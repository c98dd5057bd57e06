//! Deterministic synthetic AR scenes with exact ground truth.
//!
//! Each scene is a street-ish background with one to three signs drawn in a
//! block font. The AR view adds virtual content according to the label:
//!
//! * `none`: shapes that touch no sign
//! * `obstruction`: a shape covering most of one sign
//! * `vim`: a glyph swap, an arrow flip, or an extra text panel
//!
//! Scene `i` draws from a generator seeded with `seed ^ i`, so the output
//! does not depend on thread scheduling.

pub mod glyphs;
pub mod render;

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::eval::manifest::{self, ManifestError, ManifestRecord, MANIFEST_FILE};
use crate::mask::{self, RasterMask};
use crate::model::{
    BoundingBox, GroundTruth, ImageRef, KeyObject, OcrToken, OcrTruth, SceneLabel, ScenePair, VimFormat, VimPurpose,
};

pub use render::{glyph_pixels, panel_size, render_sign, text_width, Canvas, Rgb, SignRender};

/// Minimum coverage of the target sign in generated obstruction scenes.
pub const GENERATION_THRESHOLD: f64 = 0.6;
/// Fraction of a token box that must be covered before OCR stops seeing it.
pub const TOKEN_HIDDEN_FRACTION: f64 = 0.5;

const MARGIN: u32 = 4;
const SIGN_GAP: u32 = 12;
const PLACEMENT_TRIES: usize = 200;

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("sign text is empty")]
    EmptyText,
    #[error("unsupported glyphs: {0:?}")]
    UnsupportedGlyphs(String),
    #[error("layout: {0}")]
    Layout(String),
    #[error("invalid mix: {0}")]
    InvalidMix(String),
    #[error("invalid spec: {0}")]
    InvalidSpec(String),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
    #[error("{0}: {1}")]
    Io(String, #[source] std::io::Error),
}

/// Label proportions, e.g. `none:0.4,obstruction:0.3,vim:0.3`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LabelMix {
    pub none: f64,
    pub obstruction: f64,
    pub vim: f64,
}

impl Default for LabelMix {
    fn default() -> Self {
        Self {
            none: 0.4,
            obstruction: 0.3,
            vim: 0.3,
        }
    }
}

impl LabelMix {
    pub fn only(label: SceneLabel) -> Self {
        let mut m = Self {
            none: 0.0,
            obstruction: 0.0,
            vim: 0.0,
        };
        *m.weight_mut(label) = 1.0;
        m
    }

    pub fn weight(&self, label: SceneLabel) -> f64 {
        match label {
            SceneLabel::None => self.none,
            SceneLabel::Obstruction => self.obstruction,
            SceneLabel::Vim => self.vim,
        }
    }

    fn weight_mut(&mut self, label: SceneLabel) -> &mut f64 {
        match label {
            SceneLabel::None => &mut self.none,
            SceneLabel::Obstruction => &mut self.obstruction,
            SceneLabel::Vim => &mut self.vim,
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        for label in SceneLabel::ALL {
            let w = self.weight(label);
            if !w.is_finite() || w < 0.0 {
                return Err(SynthError::InvalidMix(format!("{label} weight {w} must be >= 0")));
            }
        }
        let sum: f64 = SceneLabel::ALL.iter().map(|l| self.weight(*l)).sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(SynthError::InvalidMix(format!("weights sum to {sum}, expected 1")));
        }
        Ok(())
    }

    /// Maps `u` in `[0, 1)` onto a label.
    pub fn pick(&self, u: f64) -> SceneLabel {
        let mut acc = 0.0;
        let mut last = SceneLabel::None;
        for label in SceneLabel::ALL {
            let w = self.weight(label);
            if w > 0.0 {
                acc += w;
                last = label;
                if u < acc {
                    return label;
                }
            }
        }
        last
    }
}

impl FromStr for LabelMix {
    type Err = SynthError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut mix = Self {
            none: 0.0,
            obstruction: 0.0,
            vim: 0.0,
        };
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (name, weight) = part
                .split_once(':')
                .ok_or_else(|| SynthError::InvalidMix(format!("expected label:weight, got {part:?}")))?;
            let label: SceneLabel = name.trim().parse().map_err(SynthError::InvalidMix)?;
            let weight: f64 = weight
                .trim()
                .parse()
                .map_err(|_| SynthError::InvalidMix(format!("bad weight {weight:?}")))?;
            *mix.weight_mut(label) = weight;
        }
        mix.validate()?;
        Ok(mix)
    }
}

impl fmt::Display for LabelMix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "none:{},obstruction:{},vim:{}", self.none, self.obstruction, self.vim)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub seed: u64,
    pub count: usize,
    pub mix: LabelMix,
    pub width: u32,
    pub height: u32,
    /// Characters signs may use. Templates needing anything else are skipped.
    pub glyph_set: String,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            count: 100,
            mix: LabelMix::default(),
            width: 640,
            height: 480,
            glyph_set: glyphs::supported(),
        }
    }
}

impl SynthSpec {
    pub fn new(seed: u64, count: usize, mix: LabelMix) -> Self {
        Self {
            seed,
            count,
            mix,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), SynthError> {
        self.mix.validate()?;
        if self.width < 64 || self.height < 48 {
            return Err(SynthError::InvalidSpec(format!(
                "image size {}x{} is below the 64x48 minimum",
                self.width, self.height
            )));
        }
        if self.width > mask::MAX_DIMENSION || self.height > mask::MAX_DIMENSION {
            return Err(SynthError::InvalidSpec(format!("image size {}x{} too large", self.width, self.height)));
        }
        let unknown: String = self.glyph_set.chars().filter(|c| glyphs::glyph(*c).is_none()).collect();
        if !unknown.is_empty() {
            return Err(SynthError::UnsupportedGlyphs(unknown));
        }
        if self.templates().is_empty() {
            return Err(SynthError::InvalidSpec("no sign template is renderable with the glyph set".into()));
        }
        Ok(())
    }

    fn renderable(&self, text: &str) -> bool {
        text.chars().all(|c| c == ' ' || self.glyph_set.contains(c))
    }

    fn templates(&self) -> Vec<&'static SignTemplate> {
        TEMPLATES.iter().filter(|t| self.renderable(t.text)).collect()
    }
}

pub fn scene_id(index: usize) -> String {
    format!("scene-{index:05}")
}

struct SignTemplate {
    text: &'static str,
    name: &'static str,
    bg: Rgb,
    fg: Rgb,
}

const RED: Rgb = [196, 30, 36];
const GREEN: Rgb = [18, 128, 62];
const BLUE: Rgb = [28, 64, 168];
const AMBER: Rgb = [244, 196, 24];
const WHITE: Rgb = [250, 250, 250];
const BLACK: Rgb = [16, 16, 16];

const TEMPLATES: &[SignTemplate] = &[
    SignTemplate { text: "STOP", name: "stop sign", bg: RED, fg: WHITE },
    SignTemplate { text: "EXIT", name: "exit sign", bg: GREEN, fg: WHITE },
    SignTemplate { text: "EMERGENCY →", name: "emergency room sign", bg: BLUE, fg: WHITE },
    SignTemplate { text: "NO ENTRY", name: "no entry sign", bg: RED, fg: WHITE },
    SignTemplate { text: "YIELD", name: "yield sign", bg: AMBER, fg: BLACK },
    SignTemplate { text: "DANGER", name: "danger sign", bg: AMBER, fg: BLACK },
    SignTemplate { text: "FIRE EXIT ←", name: "fire exit sign", bg: GREEN, fg: WHITE },
    SignTemplate { text: "TURN RIGHT", name: "turn sign", bg: BLUE, fg: WHITE },
    SignTemplate { text: "WET FLOOR", name: "wet floor sign", bg: AMBER, fg: BLACK },
    SignTemplate { text: "PLATFORM 2 →", name: "platform sign", bg: BLUE, fg: WHITE },
    SignTemplate { text: "SPEED 30", name: "speed limit sign", bg: WHITE, fg: BLACK },
];

const ADDITIONS: &[&str] = &["CLOSED", "FREE WIFI", "NO EXIT", "GO BACK", "WAIT HERE", "DETOUR ←"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Shape {
    Rect,
    Billboard,
    Arrow { right: bool },
}

impl Shape {
    fn random(rng: &mut ChaCha8Rng) -> Self {
        match rng.random_range(0..4) {
            0 => Shape::Rect,
            1 => Shape::Billboard,
            2 => Shape::Arrow { right: true },
            _ => Shape::Arrow { right: false },
        }
    }

    fn mask(&self, width: u32, height: u32, r: &BoundingBox) -> RasterMask {
        let mut m = RasterMask::new(width, height).expect("dimensions validated");
        match self {
            Shape::Rect | Shape::Billboard => m.fill_rect(r.x, r.y, r.w, r.h),
            Shape::Arrow { right } => {
                let shaft = (r.w as f64 * 0.6).round() as u32;
                let head = r.w - shaft;
                let (shaft_x, head_x) = if *right { (r.x, r.x + shaft) } else { (r.x + head, r.x) };
                let top = r.y + r.h / 5;
                m.fill_rect(shaft_x, top, shaft, r.h - 2 * (r.h / 5));
                let half = r.h as f64 / 2.0;
                let cy = r.y as f64 + half;
                for dx in 0..head {
                    // Height shrinks linearly toward the tip.
                    let from_tip = if *right { head - dx } else { dx + 1 };
                    let reach = half * from_tip as f64 / head as f64;
                    for y in r.y..r.y + r.h {
                        if ((y as f64 + 0.5) - cy).abs() <= reach {
                            m.set(head_x + dx, y, true);
                        }
                    }
                }
            }
        }
        m
    }

    fn paint(&self, canvas: &mut Canvas, mask: &RasterMask, r: &BoundingBox, color: Rgb) {
        canvas.fill_mask(mask, color);
        if *self == Shape::Billboard && r.w > 6 && r.h > 6 {
            let frame = [color[0] / 2, color[1] / 2, color[2] / 2];
            canvas.fill_rect(r.x, r.y, r.w, 3, frame);
            canvas.fill_rect(r.x, r.y + r.h - 3, r.w, 3, frame);
            canvas.fill_rect(r.x, r.y, 3, r.h, frame);
            canvas.fill_rect(r.x + r.w - 3, r.y, 3, r.h, frame);
        }
    }
}

struct Sign {
    template: &'static SignTemplate,
    render: SignRender,
}

/// True when `a` grown by `gap` on every side overlaps `b`.
fn too_close(a: &BoundingBox, b: &BoundingBox, gap: u32) -> bool {
    let ax0 = a.x.saturating_sub(gap) as u64;
    let ay0 = a.y.saturating_sub(gap) as u64;
    let ax1 = a.right() + gap as u64;
    let ay1 = a.bottom() + gap as u64;
    ax0 < b.right() && (b.x as u64) < ax1 && ay0 < b.bottom() && (b.y as u64) < ay1
}

fn content_color(rng: &mut ChaCha8Rng) -> Rgb {
    const PALETTE: [Rgb; 6] = [
        [255, 105, 180],
        [0, 200, 200],
        [150, 80, 220],
        [255, 140, 0],
        [120, 220, 60],
        [240, 240, 120],
    ];
    *PALETTE.choose(rng).expect("palette is non-empty")
}

fn background(width: u32, height: u32, rng: &mut ChaCha8Rng) -> Canvas {
    let mut c = Canvas::new(width, height, [0, 0, 0]);
    let horizon = height * 3 / 5;
    for y in 0..horizon {
        let t = y as f64 / horizon.max(1) as f64;
        let lerp = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
        c.fill_rect(0, y, width, 1, [lerp(110.0, 196.0), lerp(160.0, 214.0), lerp(220.0, 236.0)]);
    }
    let road = rng.random_range(78..=100u8);
    c.fill_rect(0, horizon, width, height - horizon, [road, road, road + 4]);
    for _ in 0..rng.random_range(2..=5) {
        let w = rng.random_range(width / 10..=width / 4);
        let h = rng.random_range(horizon / 4..=horizon * 3 / 4);
        let x = rng.random_range(0..width - w);
        let g = rng.random_range(120..=180u8);
        c.fill_rect(x, horizon - h, w, h, [g, g, g.saturating_add(6)]);
    }
    c
}

/// Finds a spot for a `w`x`h` box that keeps `gap` away from `avoid`.
fn place(
    width: u32,
    height: u32,
    w: u32,
    h: u32,
    avoid: &[BoundingBox],
    gap: u32,
    rng: &mut ChaCha8Rng,
) -> Option<BoundingBox> {
    if w + 2 * MARGIN > width || h + 2 * MARGIN > height {
        return None;
    }
    for _ in 0..PLACEMENT_TRIES {
        let x = rng.random_range(MARGIN..=width - MARGIN - w);
        let y = rng.random_range(MARGIN..=height - MARGIN - h);
        let b = BoundingBox::new(x, y, w, h);
        if avoid.iter().all(|a| !too_close(a, &b, gap)) {
            return Some(b);
        }
    }
    None
}

fn fit_scale(text: &str, preferred: u32, width: u32, height: u32) -> Option<u32> {
    (1..=preferred).rev().find(|s| {
        let (pw, ph) = panel_size(text, *s);
        pw + 2 * MARGIN <= width && ph + 2 * MARGIN <= height
    })
}

fn place_signs(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> Result<Vec<Sign>, SynthError> {
    let mut templates = spec.templates();
    let want = rng.random_range(1..=3usize).min(templates.len());
    let mut signs: Vec<Sign> = Vec::new();
    while signs.len() < want && !templates.is_empty() {
        let template = templates.swap_remove(rng.random_range(0..templates.len()));
        let preferred = rng.random_range(2..=4);
        let Some(scale) = fit_scale(template.text, preferred, spec.width, spec.height) else {
            continue;
        };
        let (pw, ph) = panel_size(template.text, scale);
        let taken: Vec<BoundingBox> = signs.iter().map(|s| s.render.panel).collect();
        if let Some(b) = place(spec.width, spec.height, pw, ph, &taken, SIGN_GAP, rng) {
            let render = render_sign(template.text, (b.x, b.y), scale)?;
            signs.push(Sign { template, render });
        }
    }
    if signs.is_empty() {
        return Err(SynthError::Layout(format!(
            "no sign fits in a {}x{} image",
            spec.width, spec.height
        )));
    }
    Ok(signs)
}

struct ArView {
    canvas: Canvas,
    content: RasterMask,
    tokens: Vec<OcrToken>,
    truth: GroundTruth,
}

fn label_truth(label: SceneLabel, signs: &[Sign], width: u32, height: u32) -> GroundTruth {
    let mut truth = GroundTruth::none();
    truth.label = label;
    truth.key_objects = signs
        .iter()
        .map(|s| KeyObject {
            name: s.template.name.to_string(),
            bbox: s.render.panel,
            mask: s.render.panel.to_mask(width, height).expect("panel inside image"),
        })
        .collect();
    truth
}

fn add_benign(spec: &SynthSpec, raw: &Canvas, signs: &[Sign], raw_tokens: &[OcrToken], rng: &mut ChaCha8Rng) -> Result<ArView, SynthError> {
    let (w, h) = (spec.width, spec.height);
    let panels: Vec<BoundingBox> = signs.iter().map(|s| s.render.panel).collect();
    let mut canvas = raw.clone();
    let mut content = RasterMask::new(w, h).expect("dimensions validated");
    let mut taken = panels.clone();
    for _ in 0..rng.random_range(1..=2) {
        let cw = rng.random_range(16..=(w / 4).max(16));
        let ch = rng.random_range(12..=(h / 4).max(12));
        let spot = place(w, h, cw, ch, &taken, MARGIN, rng).or_else(|| place(w, h, 12, 12, &taken, 2, rng));
        if let Some(b) = spot {
            let shape = Shape::random(rng);
            let m = shape.mask(w, h, &b);
            shape.paint(&mut canvas, &m, &b, content_color(rng));
            content = content.or(&m).expect("same dimensions");
            taken.push(b);
        }
    }
    if content.is_empty() {
        return Err(SynthError::Layout("no room for benign content".into()));
    }
    Ok(ArView {
        canvas,
        content,
        tokens: raw_tokens.to_vec(),
        truth: label_truth(SceneLabel::None, signs, w, h),
    })
}

fn token_hidden(token: &OcrToken, content: &RasterMask) -> bool {
    let b = &token.bbox;
    let covered = (b.y..b.y + b.h)
        .flat_map(|y| (b.x..b.x + b.w).map(move |x| (x, y)))
        .filter(|(x, y)| content.get(*x, *y))
        .count() as f64;
    covered >= TOKEN_HIDDEN_FRACTION * b.area() as f64
}

fn add_obstruction(spec: &SynthSpec, raw: &Canvas, signs: &[Sign], raw_tokens: &[OcrToken], rng: &mut ChaCha8Rng) -> ArView {
    let (w, h) = (spec.width, spec.height);
    let target = rng.random_range(0..signs.len());
    let panel = signs[target].render.panel;
    let key = panel.to_mask(w, h).expect("panel inside image");
    let others: Vec<BoundingBox> = signs
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != target)
        .map(|(_, s)| s.render.panel)
        .collect();

    let mut chosen = None;
    for _ in 0..60 {
        let shape = Shape::random(rng);
        let frac = rng.random_range(0.7..=1.0);
        let cover_w = ((panel.w as f64 * frac).round() as u32).max(1);
        let grow_x = rng.random_range(0..=8u32);
        let grow_y = match shape {
            Shape::Arrow { .. } => rng.random_range(panel.h / 3..=panel.h),
            _ => rng.random_range(0..=8u32),
        };
        let from_left = rng.random_bool(0.5);
        let x0 = if from_left {
            panel.x.saturating_sub(grow_x)
        } else {
            panel.x + panel.w - cover_w
        };
        let x1 = if from_left {
            panel.x + cover_w
        } else {
            (panel.x + panel.w + grow_x).min(w)
        };
        let y0 = panel.y.saturating_sub(grow_y);
        let y1 = (panel.y + panel.h + grow_y).min(h);
        let b = BoundingBox::new(x0, y0, x1 - x0, y1 - y0);
        if others.iter().any(|o| too_close(o, &b, 1)) {
            continue;
        }
        let m = shape.mask(w, h, &b);
        let ratio = mask::obstruction_ratio(&key, &m).expect("same dimensions");
        if ratio >= GENERATION_THRESHOLD {
            chosen = Some((shape, b, m));
            break;
        }
    }
    let (shape, b, m) = chosen.unwrap_or_else(|| {
        let m = key.clone();
        (Shape::Rect, panel, m)
    });

    let mut canvas = raw.clone();
    shape.paint(&mut canvas, &m, &b, content_color(rng));
    let tokens = raw_tokens.iter().filter(|t| !token_hidden(t, &m)).cloned().collect();
    ArView {
        canvas,
        content: m,
        tokens,
        truth: label_truth(SceneLabel::Obstruction, signs, w, h),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum VimEdit {
    Substitute,
    FlipArrow,
    AddPanel,
}

fn is_arrow(c: char) -> bool {
    c == '→' || c == '←'
}

/// Index of the token that contains character `index` of `text`.
fn token_of_char(text: &str, index: usize) -> usize {
    let chars: Vec<char> = text.chars().collect();
    let starts = (0..=index)
        .filter(|&j| chars[j] != ' ' && (j == 0 || chars[j - 1] == ' '))
        .count();
    starts.saturating_sub(1)
}

fn swap_glyph(
    spec: &SynthSpec,
    raw: &Canvas,
    signs: &[Sign],
    raw_tokens: &[OcrToken],
    edit: VimEdit,
    rng: &mut ChaCha8Rng,
) -> Option<ArView> {
    let (w, h) = (spec.width, spec.height);
    let wanted = |c: char| match edit {
        VimEdit::FlipArrow => is_arrow(c),
        _ => c.is_ascii_alphanumeric(),
    };
    let sites: Vec<(usize, usize)> = signs
        .iter()
        .enumerate()
        .flat_map(|(si, s)| {
            s.render
                .text
                .chars()
                .enumerate()
                .filter(|(_, c)| wanted(*c))
                .map(move |(ci, _)| (si, ci))
        })
        .collect();
    let &(si, ci) = sites.choose(rng)?;
    let sign = &signs[si];
    let old = sign.render.text.chars().nth(ci)?;
    let pool: Vec<char> = if is_arrow(old) {
        vec![if old == '→' { '←' } else { '→' }]
    } else if old.is_ascii_digit() {
        ('0'..='9').filter(|c| *c != old && spec.glyph_set.contains(*c)).collect()
    } else {
        ('A'..='Z').filter(|c| *c != old && spec.glyph_set.contains(*c)).collect()
    };
    let &new = pool.choose(rng)?;

    let s = sign.render.scale;
    let (cx, cy, cw, chh) = sign.render.cell(ci);
    let patch = BoundingBox::new(cx - s, cy - s, cw + 2 * s, chh + 2 * s);
    let content = patch.to_mask(w, h).expect("patch inside panel");
    let mut canvas = raw.clone();
    canvas.fill_rect(patch.x, patch.y, patch.w, patch.h, sign.template.bg);
    for (x, y) in glyph_pixels(new, cx, cy, s).ok()? {
        canvas.put(x, y, sign.template.fg);
    }

    let new_text: String = sign
        .render
        .text
        .chars()
        .enumerate()
        .map(|(i, c)| if i == ci { new } else { c })
        .collect();
    let new_render = render_sign(&new_text, (sign.render.panel.x, sign.render.panel.y), s).ok()?;
    let word = token_of_char(&sign.render.text, ci);
    let before = sign.render.tokens[word].clone();
    let after = new_render.tokens[word].clone();
    let tokens = raw_tokens
        .iter()
        .map(|t| if *t == before { after.clone() } else { t.clone() })
        .collect();

    let mut truth = label_truth(SceneLabel::Vim, signs, w, h);
    if edit == VimEdit::FlipArrow {
        truth.vim_format = Some(VimFormat::SymbolReplacement);
        truth.vim_purpose = Some(VimPurpose::Misdirection);
    } else {
        truth.vim_format = Some(VimFormat::TextAlteration);
        truth.vim_purpose = Some(VimPurpose::Misinformation);
    }
    truth.text_before = Some(before.text);
    truth.text_after = Some(after.text);
    Some(ArView {
        canvas,
        content,
        tokens,
        truth,
    })
}

fn add_panel(spec: &SynthSpec, raw: &Canvas, signs: &[Sign], raw_tokens: &[OcrToken], rng: &mut ChaCha8Rng) -> Option<ArView> {
    let (w, h) = (spec.width, spec.height);
    let phrases: Vec<&str> = ADDITIONS.iter().copied().filter(|p| spec.renderable(p)).collect();
    let phrase = *phrases.choose(rng)?;
    let scale = fit_scale(phrase, rng.random_range(2..=3), w, h)?;
    let (pw, ph) = panel_size(phrase, scale);
    let panels: Vec<BoundingBox> = signs.iter().map(|s| s.render.panel).collect();
    let spot = place(w, h, pw, ph, &panels, SIGN_GAP / 2, rng)?;
    let added = render_sign(phrase, (spot.x, spot.y), scale).ok()?;

    let mut canvas = raw.clone();
    canvas.draw_sign(&added, [255, 128, 0], BLACK);
    let content = spot.to_mask(w, h).ok()?;
    let mut tokens = raw_tokens.to_vec();
    tokens.extend(added.tokens.iter().cloned());

    let mut truth = label_truth(SceneLabel::Vim, signs, w, h);
    truth.vim_format = Some(VimFormat::TextAddition);
    truth.vim_purpose = Some(VimPurpose::Distraction);
    truth.text_after = Some(phrase.to_string());
    Some(ArView {
        canvas,
        content,
        tokens,
        truth,
    })
}

fn add_vim(spec: &SynthSpec, raw: &Canvas, signs: &[Sign], raw_tokens: &[OcrToken], rng: &mut ChaCha8Rng) -> Result<ArView, SynthError> {
    let has_arrow = signs.iter().any(|s| s.render.text.chars().any(is_arrow));
    let mut edits = vec![VimEdit::Substitute, VimEdit::AddPanel];
    if has_arrow {
        edits.push(VimEdit::FlipArrow);
    }
    let first = *edits.choose(rng).expect("edits is non-empty");
    let mut order = vec![first];
    order.extend(edits.iter().copied().filter(|e| *e != first));
    for edit in order {
        let view = match edit {
            VimEdit::AddPanel => add_panel(spec, raw, signs, raw_tokens, rng),
            _ => swap_glyph(spec, raw, signs, raw_tokens, edit, rng),
        };
        if let Some(v) = view {
            return Ok(v);
        }
    }
    Err(SynthError::Layout("no applicable manipulation".into()))
}

/// Builds scene `index` of `spec` in memory.
pub fn generate_scene(spec: &SynthSpec, index: usize) -> Result<ScenePair, SynthError> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ index as u64);
    let label = spec.mix.pick(rng.random::<f64>());
    let (w, h) = (spec.width, spec.height);

    let mut raw = background(w, h, &mut rng);
    let signs = place_signs(spec, &mut rng)?;
    for s in &signs {
        raw.draw_sign(&s.render, s.template.bg, s.template.fg);
    }
    let raw_tokens: Vec<OcrToken> = signs.iter().flat_map(|s| s.render.tokens.iter().cloned()).collect();

    let view = match label {
        SceneLabel::None => add_benign(spec, &raw, &signs, &raw_tokens, &mut rng)?,
        SceneLabel::Obstruction => add_obstruction(spec, &raw, &signs, &raw_tokens, &mut rng),
        SceneLabel::Vim => add_vim(spec, &raw, &signs, &raw_tokens, &mut rng)?,
    };
    let mut truth = view.truth;
    truth.ocr = Some(OcrTruth {
        raw: raw_tokens,
        ar: view.tokens,
    });

    let id = scene_id(index);
    Ok(ScenePair {
        raw: ImageRef::from_pixels(format!("{id}/raw"), w, h, raw.rgb),
        ar: ImageRef::from_pixels(format!("{id}/ar"), w, h, view.canvas.rgb),
        content_mask: view.content,
        truth: Some(truth),
        id,
    })
}

/// Writes `spec.count` scenes and a manifest under `out_dir`; returns the
/// manifest path.
pub fn synthesize(spec: &SynthSpec, out_dir: &Path) -> Result<PathBuf, SynthError> {
    spec.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| SynthError::Io(out_dir.display().to_string(), e))?;
    let records: Vec<ManifestRecord> = (0..spec.count)
        .into_par_iter()
        .map(|i| {
            let pair = generate_scene(spec, i)?;
            Ok(manifest::write_scene(out_dir, &pair)?)
        })
        .collect::<Result<_, SynthError>>()?;
    let path = out_dir.join(MANIFEST_FILE);
    manifest::write_manifest(&path, &records)?;
    Ok(path)
}
