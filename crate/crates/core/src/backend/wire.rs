//! JSON bodies of the backend HTTP protocol.
//!
//! | route            | request                         | response                                   |
//! |------------------|---------------------------------|--------------------------------------------|
//! | `/v1/keyobjects` | `{"image"}`                     | `{"objects": [str]}`                       |
//! | `/v1/detect`     | `{"image", "query"}`            | `{"boxes": [{"x","y","w","h","score"}]}`   |
//! | `/v1/segment`    | `{"image", "boxes"}`            | `{"masks": [{"rle"}]}`                     |
//! | `/v1/ocr`        | `{"image"}`                     | `{"tokens": [{"text","box","confidence"}]}`|
//! | `/v1/verdict`    | `{"prompt", "images"}`          | `{"manipulated","confidence","rationale"}` |
//!
//! Images travel as `{"png_base64": str}`.

use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::model::{BoundingBox, ImageRef, OcrToken};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WireImage {
    pub png_base64: String,
}

impl WireImage {
    pub fn from_png(png: &[u8]) -> Self {
        Self {
            png_base64: base64::engine::general_purpose::STANDARD.encode(png),
        }
    }

    pub fn png(&self) -> Result<Vec<u8>, base64::DecodeError> {
        base64::engine::general_purpose::STANDARD.decode(&self.png_base64)
    }

    /// Decodes into an in-memory image reference.
    pub fn to_image_ref(&self, id: impl Into<String>) -> Result<ImageRef, String> {
        let png = self.png().map_err(|e| format!("invalid base64: {e}"))?;
        let (w, h, rgb) = crate::imageio::decode_rgb_png(&png).map_err(|e| format!("invalid PNG: {e}"))?;
        Ok(ImageRef::from_pixels(id, w, h, rgb))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ImageRequest {
    pub image: WireImage,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KeyObjectsResponse {
    pub objects: Vec<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectRequest {
    pub image: WireImage,
    pub query: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DetectResponse {
    pub boxes: Vec<BoundingBox>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SegmentRequest {
    pub image: WireImage,
    pub boxes: Vec<BoundingBox>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct WireMask {
    pub rle: String,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SegmentResponse {
    pub masks: Vec<WireMask>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct OcrResponse {
    pub tokens: Vec<OcrToken>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct VerdictRequest {
    pub prompt: String,
    pub images: Vec<WireImage>,
}

pub type VerdictResponse = super::SemanticVerdict;
