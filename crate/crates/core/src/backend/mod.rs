//! Pluggable model backends (key-object VLM, detector, segmenter, OCR,
//! semantic verdict) and the call wrapper that enforces timeouts, response
//! postconditions and latency tracing.

mod http;
pub mod noise;
mod oracle;
pub mod wire;

use std::collections::HashMap;
use std::fmt;
use std::path::PathBuf;
use std::sync::Arc;
use std::time::{Duration, Instant};

use async_trait::async_trait;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use http::HttpBackend;
pub use noise::NoiseProfile;
pub use oracle::{NoiseEvent, OracleBackend, SidecarIndex};

use crate::mask::RasterMask;
use crate::model::{BoundingBox, ImageRef, OcrToken};
use crate::trace::{Stage, Tier, TraceRecorder};

pub const DEFAULT_TIMEOUT_MS: u64 = 10_000;

/// Largest response body accepted from a backend.
pub const MAX_RESPONSE_BYTES: usize = 16 * 1024 * 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Keyobjects,
    Detect,
    Segment,
    Ocr,
    Verdict,
}

impl BackendKind {
    pub const ALL: [BackendKind; 5] = [
        BackendKind::Keyobjects,
        BackendKind::Detect,
        BackendKind::Segment,
        BackendKind::Ocr,
        BackendKind::Verdict,
    ];

    pub fn path(&self) -> &'static str {
        match self {
            BackendKind::Keyobjects => "/v1/keyobjects",
            BackendKind::Detect => "/v1/detect",
            BackendKind::Segment => "/v1/segment",
            BackendKind::Ocr => "/v1/ocr",
            BackendKind::Verdict => "/v1/verdict",
        }
    }

    pub fn stage(&self) -> Stage {
        match self {
            BackendKind::Keyobjects => Stage::Keyobjects,
            BackendKind::Detect => Stage::Detect,
            BackendKind::Segment => Stage::Segment,
            BackendKind::Ocr => Stage::Ocr,
            BackendKind::Verdict => Stage::Verdict,
        }
    }

    /// Vision stages run at the edge, semantic reasoning in the cloud.
    pub fn default_tier(&self) -> Tier {
        match self {
            BackendKind::Detect | BackendKind::Segment | BackendKind::Ocr => Tier::Edge,
            BackendKind::Keyobjects | BackendKind::Verdict => Tier::Cloud,
        }
    }
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.stage().as_str())
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum BackendError {
    #[error("backend timed out after {elapsed_ms} ms")]
    Timeout { elapsed_ms: u64 },
    #[error("protocol error: {message} (payload: {excerpt:?})")]
    Protocol { message: String, excerpt: String },
    #[error("transport error: {0}")]
    Transport(String),
    #[error("endpoint kind mismatch: expected {expected}, configured {found}")]
    WrongKind { expected: BackendKind, found: BackendKind },
    #[error("invalid backend request: {0}")]
    InvalidRequest(String),
    #[error("backend configuration: {0}")]
    Config(String),
}

impl BackendError {
    pub fn protocol(message: impl Into<String>, payload: &str) -> Self {
        BackendError::Protocol {
            message: message.into(),
            excerpt: excerpt(payload),
        }
    }

    fn retryable(&self) -> bool {
        matches!(self, BackendError::Timeout { .. } | BackendError::Transport(_))
    }
}

pub(crate) fn excerpt(payload: &str) -> String {
    const LIMIT: usize = 200;
    match payload.char_indices().nth(LIMIT) {
        Some((i, _)) => format!("{}...", &payload[..i]),
        None => payload.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BackendEndpoint {
    pub kind: BackendKind,
    /// `http(s)://host[:port][/prefix]` or `oracle:<sidecar-dir>?seed=<n>&...`
    pub locator: String,
    #[serde(default = "default_timeout")]
    pub timeout_ms: u64,
    pub tier: Tier,
    /// Extra attempts after a timeout or transport failure.
    #[serde(default)]
    pub retries: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bearer_token: Option<String>,
}

fn default_timeout() -> u64 {
    DEFAULT_TIMEOUT_MS
}

impl BackendEndpoint {
    pub fn new(kind: BackendKind, locator: impl Into<String>) -> Self {
        Self {
            kind,
            locator: locator.into(),
            timeout_ms: DEFAULT_TIMEOUT_MS,
            tier: kind.default_tier(),
            retries: 0,
            bearer_token: None,
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.timeout_ms == 0 {
            return Err(BackendError::Config(format!("{} endpoint timeout must be > 0", self.kind)));
        }
        Locator::parse(&self.locator).map(|_| ())
    }
}

/// Parsed form of [`BackendEndpoint::locator`].
#[derive(Debug, Clone, PartialEq)]
pub enum Locator {
    Oracle {
        dir: PathBuf,
        noise: NoiseProfile,
        delay_ms: u64,
    },
    Http(url::Url),
}

impl Locator {
    pub fn parse(s: &str) -> Result<Self, BackendError> {
        let cfg = |m: String| BackendError::Config(m);
        if let Some(rest) = s.strip_prefix("oracle:") {
            let (path, query) = rest.split_once('?').unwrap_or((rest, ""));
            if path.is_empty() {
                return Err(cfg(format!("oracle locator {s:?} needs a sidecar directory")));
            }
            let mut noise = NoiseProfile::default();
            let mut delay_ms = 0;
            for (k, v) in url::form_urlencoded::parse(query.as_bytes()) {
                let bad = || cfg(format!("oracle parameter {k}={v:?} is invalid"));
                match k.as_ref() {
                    "seed" => noise.seed = v.parse().map_err(|_| bad())?,
                    "drop_object_prob" => noise.drop_object_prob = v.parse().map_err(|_| bad())?,
                    "box_jitter_px" => noise.box_jitter_px = v.parse().map_err(|_| bad())?,
                    "char_error_rate" => noise.char_error_rate = v.parse().map_err(|_| bad())?,
                    "verdict_flip_prob" => noise.verdict_flip_prob = v.parse().map_err(|_| bad())?,
                    "delay_ms" => delay_ms = v.parse().map_err(|_| bad())?,
                    other => return Err(cfg(format!("unknown oracle parameter {other:?}"))),
                }
            }
            noise.validate().map_err(cfg)?;
            Ok(Locator::Oracle {
                dir: PathBuf::from(path),
                noise,
                delay_ms,
            })
        } else {
            let url = url::Url::parse(s).map_err(|e| cfg(format!("bad locator {s:?}: {e}")))?;
            if url.scheme() != "http" && url.scheme() != "https" {
                return Err(cfg(format!("unsupported locator scheme {:?}", url.scheme())));
            }
            Ok(Locator::Http(url))
        }
    }

    /// Builds an oracle locator string.
    pub fn oracle_string(dir: &std::path::Path, noise: &NoiseProfile, delay_ms: u64) -> String {
        let mut s = format!("oracle:{}?seed={}", dir.display(), noise.seed);
        if noise.drop_object_prob > 0.0 {
            s += &format!("&drop_object_prob={}", noise.drop_object_prob);
        }
        if noise.box_jitter_px > 0 {
            s += &format!("&box_jitter_px={}", noise.box_jitter_px);
        }
        if noise.char_error_rate > 0.0 {
            s += &format!("&char_error_rate={}", noise.char_error_rate);
        }
        if noise.verdict_flip_prob > 0.0 {
            s += &format!("&verdict_flip_prob={}", noise.verdict_flip_prob);
        }
        if delay_ms > 0 {
            s += &format!("&delay_ms={delay_ms}");
        }
        s
    }
}

/// One endpoint per backend kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EndpointSet {
    pub keyobjects: BackendEndpoint,
    pub detect: BackendEndpoint,
    pub segment: BackendEndpoint,
    pub ocr: BackendEndpoint,
    pub verdict: BackendEndpoint,
}

impl EndpointSet {
    /// Every kind served by a seeded oracle over the same sidecar directory.
    pub fn oracle(dir: impl AsRef<std::path::Path>, noise: &NoiseProfile) -> Self {
        let locator = Locator::oracle_string(dir.as_ref(), noise, 0);
        Self::uniform(&locator)
    }

    /// Every kind at the same locator (e.g. one adapter service).
    pub fn uniform(locator: &str) -> Self {
        let ep = |k| BackendEndpoint::new(k, locator);
        Self {
            keyobjects: ep(BackendKind::Keyobjects),
            detect: ep(BackendKind::Detect),
            segment: ep(BackendKind::Segment),
            ocr: ep(BackendKind::Ocr),
            verdict: ep(BackendKind::Verdict),
        }
    }

    pub fn get(&self, kind: BackendKind) -> &BackendEndpoint {
        match kind {
            BackendKind::Keyobjects => &self.keyobjects,
            BackendKind::Detect => &self.detect,
            BackendKind::Segment => &self.segment,
            BackendKind::Ocr => &self.ocr,
            BackendKind::Verdict => &self.verdict,
        }
    }

    pub fn get_mut(&mut self, kind: BackendKind) -> &mut BackendEndpoint {
        match kind {
            BackendKind::Keyobjects => &mut self.keyobjects,
            BackendKind::Detect => &mut self.detect,
            BackendKind::Segment => &mut self.segment,
            BackendKind::Ocr => &mut self.ocr,
            BackendKind::Verdict => &mut self.verdict,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &BackendEndpoint> {
        BackendKind::ALL.into_iter().map(|k| self.get(k))
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        for kind in BackendKind::ALL {
            let ep = self.get(kind);
            if ep.kind != kind {
                return Err(BackendError::WrongKind {
                    expected: kind,
                    found: ep.kind,
                });
            }
            ep.validate()?;
        }
        Ok(())
    }

    pub fn max_timeout_ms(&self) -> u64 {
        self.iter().map(|e| e.timeout_ms).max().unwrap_or(0)
    }

    /// Copy with bearer tokens replaced.
    pub fn redacted(&self) -> Self {
        let mut out = self.clone();
        for kind in BackendKind::ALL {
            let ep = out.get_mut(kind);
            if ep.bearer_token.is_some() {
                ep.bearer_token = Some("<redacted>".into());
            }
        }
        out
    }

    /// Rewrites every oracle locator's noise seed.
    pub fn with_oracle_seed(&self, seed: u64) -> Result<Self, BackendError> {
        let mut out = self.clone();
        for kind in BackendKind::ALL {
            let ep = out.get_mut(kind);
            if let Locator::Oracle { dir, mut noise, delay_ms } = Locator::parse(&ep.locator)? {
                noise.seed = seed;
                ep.locator = Locator::oracle_string(&dir, &noise, delay_ms);
            }
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticVerdict {
    pub manipulated: bool,
    pub confidence: f64,
    #[serde(default)]
    pub rationale: String,
}

/// A model backend. Implementations answer one request each; timeouts,
/// tracing and response checks are applied by [`Backends`].
#[async_trait]
pub trait Backend: Send + Sync + fmt::Debug {
    async fn identify_key_objects(&self, image: &ImageRef) -> Result<Vec<String>, BackendError>;

    async fn detect(&self, image: &ImageRef, query: &str) -> Result<Vec<BoundingBox>, BackendError>;

    async fn segment(&self, image: &ImageRef, boxes: &[BoundingBox]) -> Result<Vec<RasterMask>, BackendError>;

    async fn ocr(&self, image: &ImageRef) -> Result<Vec<OcrToken>, BackendError>;

    async fn semantic_verdict(&self, prompt: &str, images: &[ImageRef]) -> Result<SemanticVerdict, BackendError>;

    /// Perturbations applied so far, for seeded oracle backends.
    fn noise_log(&self) -> Option<Vec<NoiseEvent>> {
        None
    }
}

#[derive(Debug, Clone)]
struct Slot {
    endpoint: BackendEndpoint,
    backend: Arc<dyn Backend>,
}

/// The resolved backend for each kind, plus the call discipline around them.
#[derive(Debug, Clone)]
pub struct Backends {
    slots: HashMap<BackendKind, Slot>,
}

impl Backends {
    /// Instantiates a client per endpoint. Oracle endpoints over the same
    /// directory share one sidecar index.
    pub fn connect(endpoints: &EndpointSet) -> Result<Self, BackendError> {
        endpoints.validate()?;
        let mut indexes: HashMap<PathBuf, Arc<SidecarIndex>> = HashMap::new();
        let mut slots = HashMap::new();
        for kind in BackendKind::ALL {
            let ep = endpoints.get(kind).clone();
            let backend: Arc<dyn Backend> = match Locator::parse(&ep.locator)? {
                Locator::Oracle { dir, noise, delay_ms } => {
                    let index = match indexes.get(&dir) {
                        Some(i) => i.clone(),
                        None => {
                            let i = Arc::new(SidecarIndex::open(&dir)?);
                            indexes.insert(dir.clone(), i.clone());
                            i
                        }
                    };
                    Arc::new(OracleBackend::new(index, noise, Duration::from_millis(delay_ms)))
                }
                Locator::Http(url) => Arc::new(HttpBackend::new(url, ep.bearer_token.clone())?),
            };
            slots.insert(kind, Slot { endpoint: ep, backend });
        }
        Ok(Self { slots })
    }

    /// Replaces the backend serving `endpoint.kind`.
    pub fn with_backend(mut self, endpoint: BackendEndpoint, backend: Arc<dyn Backend>) -> Self {
        self.slots.insert(endpoint.kind, Slot { endpoint, backend });
        self
    }

    pub fn endpoint(&self, kind: BackendKind) -> &BackendEndpoint {
        &self.slot(kind).endpoint
    }

    pub fn backend(&self, kind: BackendKind) -> &Arc<dyn Backend> {
        &self.slot(kind).backend
    }

    fn slot(&self, kind: BackendKind) -> &Slot {
        self.slots.get(&kind).expect("every backend kind is configured")
    }

    async fn call<T, F, Fut>(&self, kind: BackendKind, trace: &TraceRecorder, f: F) -> Result<T, BackendError>
    where
        F: Fn() -> Fut,
        Fut: std::future::Future<Output = Result<T, BackendError>>,
    {
        let slot = self.slot(kind);
        if slot.endpoint.kind != kind {
            return Err(BackendError::WrongKind {
                expected: kind,
                found: slot.endpoint.kind,
            });
        }
        let timeout = Duration::from_millis(slot.endpoint.timeout_ms);
        let mut attempt = 0;
        loop {
            let start = Instant::now();
            let result = match tokio::time::timeout(timeout, f()).await {
                Ok(r) => r,
                Err(_) => Err(BackendError::Timeout {
                    elapsed_ms: start.elapsed().as_millis() as u64,
                }),
            };
            trace.record(kind.stage(), slot.endpoint.tier, start, Instant::now());
            match result {
                Err(e) if e.retryable() && attempt < slot.endpoint.retries => {
                    attempt += 1;
                    tracing::debug!(%kind, attempt, error = %e, "retrying backend call");
                }
                other => return other,
            }
        }
    }

    /// Key object names, deduplicated in first-seen order.
    pub async fn identify_key_objects(&self, image: &ImageRef, trace: &TraceRecorder) -> Result<Vec<String>, BackendError> {
        let names = self
            .call(BackendKind::Keyobjects, trace, || self.backend(BackendKind::Keyobjects).identify_key_objects(image))
            .await?;
        let mut out: Vec<String> = Vec::with_capacity(names.len());
        for n in names {
            let n = n.trim().to_string();
            if !n.is_empty() && !out.contains(&n) {
                out.push(n);
            }
        }
        Ok(out)
    }

    /// Boxes sorted by descending score.
    pub async fn detect(&self, image: &ImageRef, query: &str, trace: &TraceRecorder) -> Result<Vec<BoundingBox>, BackendError> {
        if query.trim().is_empty() {
            return Err(BackendError::InvalidRequest("detect query is empty".into()));
        }
        let mut boxes = self.call(BackendKind::Detect, trace, || self.backend(BackendKind::Detect).detect(image, query)).await?;
        for b in &boxes {
            b.check(image.width, image.height)
                .map_err(|e| BackendError::protocol(format!("detect returned invalid box: {e}"), &format!("{b:?}")))?;
        }
        boxes.sort_by(|a, b| b.score.total_cmp(&a.score));
        Ok(boxes)
    }

    /// One mask per input box, in input order.
    pub async fn segment(&self, image: &ImageRef, boxes: &[BoundingBox], trace: &TraceRecorder) -> Result<Vec<RasterMask>, BackendError> {
        for b in boxes {
            b.check(image.width, image.height)
                .map_err(|e| BackendError::InvalidRequest(format!("segment box invalid: {e}")))?;
        }
        if boxes.is_empty() {
            return Ok(Vec::new());
        }
        let masks = self.call(BackendKind::Segment, trace, || self.backend(BackendKind::Segment).segment(image, boxes)).await?;
        if masks.len() != boxes.len() {
            return Err(BackendError::protocol(
                format!("segment returned {} masks for {} boxes", masks.len(), boxes.len()),
                "",
            ));
        }
        if let Some(m) = masks.iter().find(|m| m.dimensions() != (image.width, image.height)) {
            return Err(BackendError::protocol(
                format!(
                    "segment mask is {}x{}, image is {}x{}",
                    m.width(),
                    m.height(),
                    image.width,
                    image.height
                ),
                "",
            ));
        }
        Ok(masks)
    }

    /// Tokens in raster order (top-to-bottom, then left-to-right by box origin).
    pub async fn ocr(&self, image: &ImageRef, trace: &TraceRecorder) -> Result<Vec<OcrToken>, BackendError> {
        let mut tokens = self.call(BackendKind::Ocr, trace, || self.backend(BackendKind::Ocr).ocr(image)).await?;
        for t in &tokens {
            t.check(image.width, image.height)
                .map_err(|e| BackendError::protocol(format!("ocr returned invalid token: {e}"), &t.text))?;
        }
        tokens.sort_by_key(|t| (t.bbox.y, t.bbox.x));
        Ok(tokens)
    }

    pub async fn semantic_verdict(
        &self,
        prompt: &str,
        images: &[ImageRef],
        trace: &TraceRecorder,
    ) -> Result<SemanticVerdict, BackendError> {
        if prompt.is_empty() {
            return Err(BackendError::InvalidRequest("verdict prompt is empty".into()));
        }
        if images.is_empty() || images.len() > 2 {
            return Err(BackendError::InvalidRequest(format!(
                "verdict takes 1 or 2 images, got {}",
                images.len()
            )));
        }
        let v = self
            .call(BackendKind::Verdict, trace, || self.backend(BackendKind::Verdict).semantic_verdict(prompt, images))
            .await?;
        if !(0.0..=1.0).contains(&v.confidence) {
            return Err(BackendError::protocol(
                format!("verdict confidence {} outside [0, 1]", v.confidence),
                &v.rationale,
            ));
        }
        Ok(v)
    }
}
