use async_trait::async_trait;
use serde::de::DeserializeOwned;
use serde::Serialize;

use super::wire::{
    DetectRequest, DetectResponse, ImageRequest, KeyObjectsResponse, OcrResponse, SegmentRequest, SegmentResponse,
    VerdictRequest, VerdictResponse, WireImage,
};
use super::{excerpt, Backend, BackendError, BackendKind, SemanticVerdict, MAX_RESPONSE_BYTES};
use crate::mask::{rle_decode, RasterMask};
use crate::model::{BoundingBox, ImageRef, OcrToken};

/// Client for a remote backend speaking the JSON wire protocol.
#[derive(Debug, Clone)]
pub struct HttpBackend {
    base: url::Url,
    bearer_token: Option<String>,
    client: reqwest::Client,
}

impl HttpBackend {
    pub fn new(base: url::Url, bearer_token: Option<String>) -> Result<Self, BackendError> {
        let client = reqwest::Client::builder()
            .build()
            .map_err(|e| BackendError::Config(format!("http client: {e}")))?;
        Ok(Self {
            base,
            bearer_token,
            client,
        })
    }

    fn url(&self, kind: BackendKind) -> String {
        format!("{}{}", self.base.as_str().trim_end_matches('/'), kind.path())
    }

    async fn post<Req: Serialize, Resp: DeserializeOwned>(&self, kind: BackendKind, body: &Req) -> Result<Resp, BackendError> {
        let mut req = self.client.post(self.url(kind)).json(body);
        if let Some(token) = &self.bearer_token {
            req = req.bearer_auth(token);
        }
        let mut resp = req.send().await.map_err(|e| BackendError::Transport(e.to_string()))?;
        let status = resp.status();

        let mut buf = Vec::new();
        while let Some(chunk) = resp.chunk().await.map_err(|e| BackendError::Transport(e.to_string()))? {
            if buf.len() + chunk.len() > MAX_RESPONSE_BYTES {
                return Err(BackendError::protocol(
                    format!("{kind} response exceeds {MAX_RESPONSE_BYTES} bytes"),
                    &String::from_utf8_lossy(&buf[..buf.len().min(256)]),
                ));
            }
            buf.extend_from_slice(&chunk);
        }
        let text = String::from_utf8_lossy(&buf);
        if !status.is_success() || status.as_u16() != 200 {
            return Err(BackendError::Protocol {
                message: format!("{kind} returned HTTP {status}"),
                excerpt: excerpt(&text),
            });
        }
        serde_json::from_slice(&buf).map_err(|e| BackendError::Protocol {
            message: format!("{kind} response schema violation: {e}"),
            excerpt: excerpt(&text),
        })
    }
}

fn wire_image(image: &ImageRef) -> Result<WireImage, BackendError> {
    let png = image
        .png_bytes()
        .map_err(|e| BackendError::InvalidRequest(format!("cannot encode image {}: {e}", image.id)))?;
    Ok(WireImage::from_png(&png))
}

#[async_trait]
impl Backend for HttpBackend {
    async fn identify_key_objects(&self, image: &ImageRef) -> Result<Vec<String>, BackendError> {
        let body = ImageRequest {
            image: wire_image(image)?,
        };
        let resp: KeyObjectsResponse = self.post(BackendKind::Keyobjects, &body).await?;
        Ok(resp.objects)
    }

    async fn detect(&self, image: &ImageRef, query: &str) -> Result<Vec<BoundingBox>, BackendError> {
        let body = DetectRequest {
            image: wire_image(image)?,
            query: query.to_string(),
        };
        let resp: DetectResponse = self.post(BackendKind::Detect, &body).await?;
        Ok(resp.boxes)
    }

    async fn segment(&self, image: &ImageRef, boxes: &[BoundingBox]) -> Result<Vec<RasterMask>, BackendError> {
        let body = SegmentRequest {
            image: wire_image(image)?,
            boxes: boxes.to_vec(),
        };
        let resp: SegmentResponse = self.post(BackendKind::Segment, &body).await?;
        resp.masks
            .iter()
            .map(|m| rle_decode(&m.rle).map_err(|e| BackendError::protocol(e.to_string(), &m.rle)))
            .collect()
    }

    async fn ocr(&self, image: &ImageRef) -> Result<Vec<OcrToken>, BackendError> {
        let body = ImageRequest {
            image: wire_image(image)?,
        };
        let resp: OcrResponse = self.post(BackendKind::Ocr, &body).await?;
        Ok(resp.tokens)
    }

    async fn semantic_verdict(&self, prompt: &str, images: &[ImageRef]) -> Result<SemanticVerdict, BackendError> {
        let body = VerdictRequest {
            prompt: prompt.to_string(),
            images: images.iter().map(wire_image).collect::<Result<_, _>>()?,
        };
        let resp: VerdictResponse = self.post(BackendKind::Verdict, &body).await?;
        Ok(resp)
    }
}
