//! Request and error bodies of the analysis API.

use arsentinel_core::backend::wire::{WireImage, WireMask};
use arsentinel_core::mask::rle_decode;
use arsentinel_core::model::ScenePair;
use serde::{Deserialize, Serialize};

/// Body of `POST /v1/analyze/obstruction` and `POST /v1/analyze/vim`.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyzeRequest {
    /// Echoed back as `scene_id`. Defaults to `"request"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub id: Option<String>,
    pub raw: WireImage,
    pub ar: WireImage,
    pub content_mask: WireMask,
}

impl AnalyzeRequest {
    pub fn into_pair(self) -> Result<ScenePair, String> {
        let id = self
            .id
            .map(|s| s.trim().to_string())
            .filter(|s| !s.is_empty())
            .unwrap_or_else(|| "request".to_string());
        let raw = self.raw.to_image_ref(format!("{id}/raw")).map_err(|e| format!("raw: {e}"))?;
        let ar = self.ar.to_image_ref(format!("{id}/ar")).map_err(|e| format!("ar: {e}"))?;
        let content_mask = rle_decode(&self.content_mask.rle).map_err(|e| format!("content_mask: {e}"))?;
        Ok(ScenePair {
            id,
            raw,
            ar,
            content_mask,
            truth: None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub details: Vec<String>,
}

impl ErrorBody {
    pub fn new(error: impl Into<String>) -> Self {
        Self {
            error: error.into(),
            details: Vec::new(),
        }
    }
}
