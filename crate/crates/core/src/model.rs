//! Domain types shared by the pipelines, the synthesizer and the harness.

use std::fmt;
use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::imageio::{self, ImageIoError};
use crate::mask::{RasterMask, MAX_DIMENSION};

/// Default margin (px) a key-object mask may extend past its box.
pub const DEFAULT_MASK_SLACK_PX: u32 = 8;

/// Where an image's pixels live.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ImageSource {
    /// Row-major 8-bit RGB.
    Pixels(Arc<[u8]>),
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageRef {
    pub id: String,
    pub width: u32,
    pub height: u32,
    pub source: ImageSource,
}

impl ImageRef {
    pub fn from_pixels(id: impl Into<String>, width: u32, height: u32, rgb: Vec<u8>) -> Self {
        Self {
            id: id.into(),
            width,
            height,
            source: ImageSource::Pixels(rgb.into()),
        }
    }

    /// File-backed reference. Only the PNG header is read here.
    pub fn from_file(id: impl Into<String>, path: impl Into<PathBuf>) -> Result<Self, ImageIoError> {
        let path = path.into();
        let (width, height) = imageio::dimensions(&path)?;
        Ok(Self {
            id: id.into(),
            width,
            height,
            source: ImageSource::File(path),
        })
    }

    /// Decoded RGB pixels.
    pub fn rgb(&self) -> Result<Arc<[u8]>, ImageIoError> {
        match &self.source {
            ImageSource::Pixels(p) => Ok(p.clone()),
            ImageSource::File(path) => {
                let (w, h, rgb) = imageio::read_rgb(path)?;
                if (w, h) != (self.width, self.height) {
                    return Err(ImageIoError::Dimensions {
                        expected: (self.width, self.height),
                        found: (w, h),
                    });
                }
                Ok(rgb.into())
            }
        }
    }

    /// PNG bytes; file-backed PNGs are passed through unchanged.
    pub fn png_bytes(&self) -> Result<Vec<u8>, ImageIoError> {
        match &self.source {
            ImageSource::File(path) if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) => {
                std::fs::read(path).map_err(|e| ImageIoError::Io(path.display().to_string(), e))
            }
            _ => imageio::encode_rgb_png(self.width, self.height, &self.rgb()?),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
    pub score: f64,
}

impl BoundingBox {
    pub fn new(x: u32, y: u32, w: u32, h: u32) -> Self {
        Self { x, y, w, h, score: 1.0 }
    }

    pub fn with_score(mut self, score: f64) -> Self {
        self.score = score;
        self
    }

    pub fn right(&self) -> u64 {
        u64::from(self.x) + u64::from(self.w)
    }

    pub fn bottom(&self) -> u64 {
        u64::from(self.y) + u64::from(self.h)
    }

    /// Box center scaled by two, so it stays integral.
    pub fn center2(&self) -> (i64, i64) {
        (
            2 * i64::from(self.x) + i64::from(self.w),
            2 * i64::from(self.y) + i64::from(self.h),
        )
    }

    pub fn area(&self) -> u64 {
        u64::from(self.w) * u64::from(self.h)
    }

    pub fn intersection(&self, other: &BoundingBox) -> u64 {
        let x0 = self.x.max(other.x) as u64;
        let y0 = self.y.max(other.y) as u64;
        let x1 = self.right().min(other.right());
        let y1 = self.bottom().min(other.bottom());
        x1.saturating_sub(x0) * y1.saturating_sub(y0)
    }

    pub fn iou(&self, other: &BoundingBox) -> f64 {
        let inter = self.intersection(other);
        let union = self.area() + other.area() - inter;
        if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        }
    }

    pub fn contains_point(&self, x: u32, y: u32, slack: u32) -> bool {
        let (x, y) = (u64::from(x), u64::from(y));
        let s = u64::from(slack);
        x + s >= u64::from(self.x) && x < self.right() + s && y + s >= u64::from(self.y) && y < self.bottom() + s
    }

    /// Box geometry and score check against an image of the given size.
    pub fn check(&self, width: u32, height: u32) -> Result<(), String> {
        if self.w == 0 || self.h == 0 {
            return Err(format!("box has zero size ({}x{})", self.w, self.h));
        }
        if self.right() > u64::from(width) || self.bottom() > u64::from(height) {
            return Err(format!(
                "box ({}, {}, {}, {}) exceeds image {}x{}",
                self.x, self.y, self.w, self.h, width, height
            ));
        }
        if !(0.0..=1.0).contains(&self.score) {
            return Err(format!("box score {} outside [0, 1]", self.score));
        }
        Ok(())
    }

    pub fn to_mask(&self, width: u32, height: u32) -> Result<RasterMask, crate::mask::MaskError> {
        RasterMask::from_rect(width, height, self.x, self.y, self.w, self.h)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KeyObject {
    pub name: String,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub mask: RasterMask,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcrToken {
    pub text: String,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub confidence: f64,
}

impl OcrToken {
    pub fn new(text: impl Into<String>, bbox: BoundingBox) -> Self {
        Self {
            text: text.into(),
            bbox,
            confidence: 1.0,
        }
    }

    pub fn check(&self, width: u32, height: u32) -> Result<(), String> {
        if self.text.is_empty() {
            return Err("token text is empty".into());
        }
        if self.text.contains(['\n', '\r']) {
            return Err(format!("token text {:?} contains a line break", self.text));
        }
        if !(0.0..=1.0).contains(&self.confidence) {
            return Err(format!("token confidence {} outside [0, 1]", self.confidence));
        }
        self.bbox.check(width, height)
    }
}

/// Attack format axis of the VIM taxonomy. `Custom` values must be
/// registered in [`TaxonomyRegistry`].
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum VimFormat {
    TextAlteration,
    TextAddition,
    SymbolReplacement,
    MisleadingGraphic,
    Custom(String),
}

/// Attack purpose axis of the VIM taxonomy.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum VimPurpose {
    Misdirection,
    Misinformation,
    Distraction,
    Custom(String),
}

macro_rules! string_enum {
    ($ty:ident { $($variant:ident => $s:literal),* $(,)? }) => {
        impl $ty {
            pub fn as_str(&self) -> &str {
                match self {
                    $($ty::$variant => $s,)*
                    $ty::Custom(s) => s,
                }
            }

            pub fn builtin(&self) -> bool {
                !matches!(self, $ty::Custom(_))
            }
        }

        impl From<&str> for $ty {
            fn from(s: &str) -> Self {
                match s {
                    $($s => $ty::$variant,)*
                    other => $ty::Custom(other.to_string()),
                }
            }
        }

        impl fmt::Display for $ty {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(self.as_str())
            }
        }

        impl Serialize for $ty {
            fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                s.serialize_str(self.as_str())
            }
        }

        impl<'de> Deserialize<'de> for $ty {
            fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                Ok($ty::from(s.as_str()))
            }
        }
    };
}

string_enum!(VimFormat {
    TextAlteration => "text_alteration",
    TextAddition => "text_addition",
    SymbolReplacement => "symbol_replacement",
    MisleadingGraphic => "misleading_graphic",
});

string_enum!(VimPurpose {
    Misdirection => "misdirection",
    Misinformation => "misinformation",
    Distraction => "distraction",
});

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VimTaxonomy {
    pub format: VimFormat,
    pub purpose: VimPurpose,
}

/// Extra taxonomy members accepted beyond the built-in ones.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TaxonomyRegistry {
    pub extra_formats: Vec<String>,
    pub extra_purposes: Vec<String>,
}

impl TaxonomyRegistry {
    pub fn knows_format(&self, f: &VimFormat) -> bool {
        f.builtin() || self.extra_formats.iter().any(|x| x == f.as_str())
    }

    pub fn knows_purpose(&self, p: &VimPurpose) -> bool {
        p.builtin() || self.extra_purposes.iter().any(|x| x == p.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SceneLabel {
    None,
    Obstruction,
    Vim,
}

impl SceneLabel {
    pub const ALL: [SceneLabel; 3] = [SceneLabel::None, SceneLabel::Obstruction, SceneLabel::Vim];

    pub fn as_str(&self) -> &'static str {
        match self {
            SceneLabel::None => "none",
            SceneLabel::Obstruction => "obstruction",
            SceneLabel::Vim => "vim",
        }
    }
}

impl fmt::Display for SceneLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for SceneLabel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(SceneLabel::None),
            "obstruction" => Ok(SceneLabel::Obstruction),
            "vim" => Ok(SceneLabel::Vim),
            other => Err(format!("unknown label {other:?}")),
        }
    }
}

/// Rendered text for each view, recorded so OCR oracles can answer exactly.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct OcrTruth {
    pub raw: Vec<OcrToken>,
    pub ar: Vec<OcrToken>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub label: SceneLabel,
    #[serde(default)]
    pub key_objects: Vec<KeyObject>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vim_format: Option<VimFormat>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vim_purpose: Option<VimPurpose>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text_before: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text_after: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ocr: Option<OcrTruth>,
}

impl GroundTruth {
    pub fn none() -> Self {
        Self {
            label: SceneLabel::None,
            key_objects: Vec::new(),
            vim_format: None,
            vim_purpose: None,
            text_before: None,
            text_after: None,
            ocr: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenePair {
    pub id: String,
    pub raw: ImageRef,
    pub ar: ImageRef,
    pub content_mask: RasterMask,
    pub truth: Option<GroundTruth>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackKind {
    None,
    Obstruction,
    Vim,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mitigation {
    None,
    MakeTranslucent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub attacked: bool,
    pub kind: AttackKind,
    pub confidence: f64,
    pub mitigation: Mitigation,
    pub rationale: String,
}

impl Verdict {
    pub fn clear(confidence: f64, rationale: impl Into<String>) -> Self {
        Self {
            attacked: false,
            kind: AttackKind::None,
            confidence,
            mitigation: Mitigation::None,
            rationale: rationale.into(),
        }
    }

    /// Positive verdict; the content should be made translucent.
    pub fn attack(kind: AttackKind, confidence: f64, rationale: impl Into<String>) -> Self {
        Self {
            attacked: true,
            kind,
            confidence,
            mitigation: Mitigation::MakeTranslucent,
            rationale: rationale.into(),
        }
    }
}

/// Which invariant a [`Violation`] breaks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum InvariantKind {
    ImageDimensions,
    PixelBufferLength,
    RawArDimensions,
    ContentMaskDimensions,
    ObstructionNeedsKeyObjects,
    VimNeedsTaxonomy,
    UnknownTaxonomy,
    KeyObjectMaskDimensions,
    KeyObjectBox,
    KeyObjectMaskOutsideBox,
    OcrToken,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Violation {
    pub kind: InvariantKind,
    pub field: String,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

#[derive(Debug, Clone)]
pub struct ValidationRules {
    pub mask_slack_px: u32,
    pub taxonomy: TaxonomyRegistry,
}

impl Default for ValidationRules {
    fn default() -> Self {
        Self {
            mask_slack_px: DEFAULT_MASK_SLACK_PX,
            taxonomy: TaxonomyRegistry::default(),
        }
    }
}

pub fn validate_scene_pair(pair: &ScenePair) -> Vec<Violation> {
    validate_scene_pair_with(pair, &ValidationRules::default())
}

pub fn validate_scene_pair_with(pair: &ScenePair, rules: &ValidationRules) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |kind, field: &str, message: String| {
        out.push(Violation {
            kind,
            field: field.to_string(),
            message,
        })
    };

    for (field, img) in [("raw", &pair.raw), ("ar", &pair.ar)] {
        if img.width == 0 || img.height == 0 || img.width > MAX_DIMENSION || img.height > MAX_DIMENSION {
            push(
                InvariantKind::ImageDimensions,
                field,
                format!("{field} dimensions {}x{} outside 1..={MAX_DIMENSION}", img.width, img.height),
            );
        }
        if let ImageSource::Pixels(p) = &img.source {
            let expected = img.width as usize * img.height as usize * 3;
            if p.len() != expected {
                push(
                    InvariantKind::PixelBufferLength,
                    field,
                    format!("{field} pixel buffer length {} != {expected}", p.len()),
                );
            }
        }
    }

    let (w, h) = (pair.raw.width, pair.raw.height);
    if (pair.ar.width, pair.ar.height) != (w, h) {
        push(InvariantKind::RawArDimensions, "ar", "raw/ar dimension mismatch".into());
    }
    if pair.content_mask.dimensions() != (w, h) {
        push(
            InvariantKind::ContentMaskDimensions,
            "content_mask",
            "content_mask dimension mismatch".into(),
        );
    }

    let Some(truth) = &pair.truth else {
        return out;
    };
    match truth.label {
        SceneLabel::Obstruction if truth.key_objects.is_empty() => push(
            InvariantKind::ObstructionNeedsKeyObjects,
            "truth.key_objects",
            "obstruction label requires key objects".into(),
        ),
        SceneLabel::Vim if truth.vim_format.is_none() || truth.vim_purpose.is_none() => push(
            InvariantKind::VimNeedsTaxonomy,
            "truth.vim_format",
            "vim label requires vim_format and vim_purpose".into(),
        ),
        _ => {}
    }
    if let Some(f) = &truth.vim_format {
        if !rules.taxonomy.knows_format(f) {
            push(
                InvariantKind::UnknownTaxonomy,
                "truth.vim_format",
                format!("unregistered vim_format {f:?}"),
            );
        }
    }
    if let Some(p) = &truth.vim_purpose {
        if !rules.taxonomy.knows_purpose(p) {
            push(
                InvariantKind::UnknownTaxonomy,
                "truth.vim_purpose",
                format!("unregistered vim_purpose {p:?}"),
            );
        }
    }

    for (i, obj) in truth.key_objects.iter().enumerate() {
        let field = format!("truth.key_objects[{i}]");
        if obj.mask.dimensions() != (w, h) {
            push(
                InvariantKind::KeyObjectMaskDimensions,
                &field,
                format!("{field} ({}) mask dimension mismatch", obj.name),
            );
        }
        if let Err(e) = obj.bbox.check(w, h) {
            push(InvariantKind::KeyObjectBox, &field, format!("{field} ({}) {e}", obj.name));
        }
        if obj
            .mask
            .iter_set()
            .any(|(x, y)| !obj.bbox.contains_point(x, y, rules.mask_slack_px))
        {
            push(
                InvariantKind::KeyObjectMaskOutsideBox,
                &field,
                format!(
                    "{field} ({}) mask extends beyond box + {} px slack",
                    obj.name, rules.mask_slack_px
                ),
            );
        }
    }

    if let Some(ocr) = &truth.ocr {
        for (view, tokens) in [("raw", &ocr.raw), ("ar", &ocr.ar)] {
            for (i, t) in tokens.iter().enumerate() {
                if let Err(e) = t.check(w, h) {
                    let field = format!("truth.ocr.{view}[{i}]");
                    push(InvariantKind::OcrToken, &field, format!("{field}: {e}"));
                }
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blank(id: &str, w: u32, h: u32) -> ImageRef {
        ImageRef::from_pixels(id, w, h, vec![0; (w * h * 3) as usize])
    }

    fn pair(w: u32, h: u32) -> ScenePair {
        ScenePair {
            id: "s".into(),
            raw: blank("s/raw", w, h),
            ar: blank("s/ar", w, h),
            content_mask: RasterMask::new(w, h).unwrap(),
            truth: None,
        }
    }

    fn obstruction_truth(w: u32, h: u32) -> GroundTruth {
        let bbox = BoundingBox::new(10, 10, 20, 20);
        GroundTruth {
            label: SceneLabel::Obstruction,
            key_objects: vec![KeyObject {
                name: "stop sign".into(),
                bbox,
                mask: bbox.to_mask(w, h).unwrap(),
            }],
            ..GroundTruth::none()
        }
    }

    #[test]
    fn valid_pair_has_no_violations() {
        let mut p = pair(640, 480);
        p.truth = Some(obstruction_truth(640, 480));
        assert!(validate_scene_pair(&p).is_empty());
    }

    #[test]
    fn raw_ar_mismatch() {
        let mut p = pair(640, 480);
        p.ar = blank("s/ar", 320, 240);
        let v = validate_scene_pair(&p);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].to_string(), "raw/ar dimension mismatch");
    }

    #[test]
    fn obstruction_without_key_objects() {
        let mut p = pair(64, 64);
        p.truth = Some(GroundTruth {
            label: SceneLabel::Obstruction,
            ..GroundTruth::none()
        });
        let v = validate_scene_pair(&p);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].to_string(), "obstruction label requires key objects");
    }

    #[test]
    fn slack_margin_allows_bleed() {
        let mut p = pair(64, 64);
        let mut truth = obstruction_truth(64, 64);
        truth.key_objects[0].mask.set(30 + 7, 15, true);
        p.truth = Some(truth.clone());
        assert!(validate_scene_pair(&p).is_empty());
        truth.key_objects[0].mask.set(30 + 8, 15, true);
        p.truth = Some(truth);
        let v = validate_scene_pair(&p);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].kind, InvariantKind::KeyObjectMaskOutsideBox);
    }

    #[test]
    fn custom_taxonomy_needs_registration() {
        let mut p = pair(64, 64);
        p.truth = Some(GroundTruth {
            label: SceneLabel::Vim,
            vim_format: Some(VimFormat::from("color_shift")),
            vim_purpose: Some(VimPurpose::Misdirection),
            ..GroundTruth::none()
        });
        let v = validate_scene_pair(&p);
        assert_eq!(v.len(), 1);
        assert_eq!(v[0].kind, InvariantKind::UnknownTaxonomy);
        let rules = ValidationRules {
            taxonomy: TaxonomyRegistry {
                extra_formats: vec!["color_shift".into()],
                extra_purposes: vec![],
            },
            ..Default::default()
        };
        assert!(validate_scene_pair_with(&p, &rules).is_empty());
    }

    #[test]
    fn taxonomy_strings_roundtrip() {
        for f in ["text_alteration", "text_addition", "symbol_replacement", "misleading_graphic", "x"] {
            let parsed: VimFormat = serde_json::from_str(&format!("\"{f}\"")).unwrap();
            assert_eq!(serde_json::to_string(&parsed).unwrap(), format!("\"{f}\""));
        }
        assert_eq!(VimPurpose::from("misdirection"), VimPurpose::Misdirection);
    }

    #[test]
    fn verdict_constructors_hold_invariant() {
        let v = Verdict::clear(1.0, "");
        assert_eq!((v.kind, v.mitigation), (AttackKind::None, Mitigation::None));
        let v = Verdict::attack(AttackKind::Obstruction, 1.0, "");
        assert_eq!(v.mitigation, Mitigation::MakeTranslucent);
    }
}
