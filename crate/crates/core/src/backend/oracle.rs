//! Backends that answer from ground-truth sidecars, with seeded noise.
//!
//! A scene is resolved from the image id (`<scene>/raw`, `<scene>/ar`) when
//! it names a known scene, otherwise from a SHA-256 of the decoded pixels.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, OnceLock};
use std::time::Duration;

use async_trait::async_trait;
use rand::Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};

use super::noise::{self, site_rng, NoiseProfile};
use super::{Backend, BackendError, SemanticVerdict};
use crate::imageio;
use crate::mask::RasterMask;
use crate::model::{BoundingBox, GroundTruth, ImageRef, OcrToken, SceneLabel};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum View {
    Raw,
    Ar,
}

impl View {
    fn as_str(&self) -> &'static str {
        match self {
            View::Raw => "raw",
            View::Ar => "ar",
        }
    }
}

/// Pixel hash to (scene id, view), built on first use.
type HashIndex = HashMap<[u8; 32], (String, View)>;

/// Lookup from images to sidecar ground truth under `<dir>/scenes/<id>/`.
#[derive(Debug)]
pub struct SidecarIndex {
    dir: PathBuf,
    scenes: BTreeMap<String, PathBuf>,
    truths: Mutex<HashMap<String, Arc<GroundTruth>>>,
    by_hash: OnceLock<Result<HashIndex, String>>,
}

fn pixel_hash(width: u32, height: u32, rgb: &[u8]) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(width.to_le_bytes());
    h.update(height.to_le_bytes());
    h.update(rgb);
    let mut out = [0u8; 32];
    out.copy_from_slice(&h.finalize());
    out
}

impl SidecarIndex {
    pub fn open(dir: &Path) -> Result<Self, BackendError> {
        let scenes_dir = dir.join("scenes");
        let entries = std::fs::read_dir(&scenes_dir)
            .map_err(|e| BackendError::Config(format!("oracle sidecar dir {}: {e}", scenes_dir.display())))?;
        let mut scenes = BTreeMap::new();
        for entry in entries {
            let entry = entry.map_err(|e| BackendError::Config(e.to_string()))?;
            let path = entry.path();
            if path.join("truth.json").is_file() {
                scenes.insert(entry.file_name().to_string_lossy().into_owned(), path);
            }
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            scenes,
            truths: Mutex::new(HashMap::new()),
            by_hash: OnceLock::new(),
        })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn len(&self) -> usize {
        self.scenes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenes.is_empty()
    }

    pub fn truth(&self, scene: &str) -> Result<Arc<GroundTruth>, BackendError> {
        if let Some(t) = self.truths.lock().expect("truth cache").get(scene) {
            return Ok(t.clone());
        }
        let dir = self
            .scenes
            .get(scene)
            .ok_or_else(|| BackendError::protocol("oracle has no sidecar for scene", scene))?;
        let path = dir.join("truth.json");
        let text = std::fs::read_to_string(&path)
            .map_err(|e| BackendError::Config(format!("{}: {e}", path.display())))?;
        let truth: GroundTruth = serde_json::from_str(&text)
            .map_err(|e| BackendError::Config(format!("{}: {e}", path.display())))?;
        let truth = Arc::new(truth);
        self.truths
            .lock()
            .expect("truth cache")
            .insert(scene.to_string(), truth.clone());
        Ok(truth)
    }

    fn hash_index(&self) -> Result<&HashMap<[u8; 32], (String, View)>, BackendError> {
        self.by_hash
            .get_or_init(|| {
                let mut map = HashMap::new();
                for (id, dir) in &self.scenes {
                    for view in [View::Raw, View::Ar] {
                        let path = dir.join(format!("{}.png", view.as_str()));
                        let (w, h, rgb) = imageio::read_rgb(&path).map_err(|e| format!("{}: {e}", path.display()))?;
                        map.entry(pixel_hash(w, h, &rgb)).or_insert_with(|| (id.clone(), view));
                    }
                }
                Ok(map)
            })
            .as_ref()
            .map_err(|e| BackendError::Config(e.clone()))
    }

    pub fn resolve(&self, image: &ImageRef) -> Result<(String, View), BackendError> {
        if let Some((scene, view)) = image.id.rsplit_once('/') {
            let view = match view {
                "raw" => Some(View::Raw),
                "ar" => Some(View::Ar),
                _ => None,
            };
            if let (Some(view), true) = (view, self.scenes.contains_key(scene)) {
                return Ok((scene.to_string(), view));
            }
        }
        let rgb = image
            .rgb()
            .map_err(|e| BackendError::InvalidRequest(format!("cannot read image {}: {e}", image.id)))?;
        let key = pixel_hash(image.width, image.height, &rgb);
        self.hash_index()?
            .get(&key)
            .cloned()
            .ok_or_else(|| BackendError::protocol("oracle has no sidecar for image", &image.id))
    }
}

/// A perturbation the oracle applied.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "event", rename_all = "snake_case")]
pub enum NoiseEvent {
    ObjectDropped { scene: String, name: String },
    VerdictFlipped { scene: String },
}

#[derive(Debug)]
pub struct OracleBackend {
    index: Arc<SidecarIndex>,
    noise: NoiseProfile,
    delay: Duration,
    log: Mutex<Vec<NoiseEvent>>,
}

impl OracleBackend {
    pub fn new(index: Arc<SidecarIndex>, noise: NoiseProfile, delay: Duration) -> Self {
        Self {
            index,
            noise,
            delay,
            log: Mutex::new(Vec::new()),
        }
    }

    async fn pause(&self) {
        if !self.delay.is_zero() {
            tokio::time::sleep(self.delay).await;
        }
    }

    fn lookup(&self, image: &ImageRef) -> Result<(String, View, Arc<GroundTruth>), BackendError> {
        let (scene, view) = self.index.resolve(image)?;
        let truth = self.index.truth(&scene)?;
        Ok((scene, view, truth))
    }

    fn log(&self, event: NoiseEvent) {
        self.log.lock().expect("noise log").push(event);
    }
}

#[async_trait]
impl Backend for OracleBackend {
    async fn identify_key_objects(&self, image: &ImageRef) -> Result<Vec<String>, BackendError> {
        self.pause().await;
        let (scene, _, truth) = self.lookup(image)?;
        let mut rng = site_rng(self.noise.seed, "keyobjects", &scene);
        let mut out = Vec::new();
        for obj in &truth.key_objects {
            let draw: f64 = rng.random();
            if draw < self.noise.drop_object_prob {
                self.log(NoiseEvent::ObjectDropped {
                    scene: scene.clone(),
                    name: obj.name.clone(),
                });
            } else {
                out.push(obj.name.clone());
            }
        }
        Ok(out)
    }

    async fn detect(&self, image: &ImageRef, query: &str) -> Result<Vec<BoundingBox>, BackendError> {
        self.pause().await;
        let (scene, _, truth) = self.lookup(image)?;
        let Some(obj) = truth.key_objects.iter().find(|o| o.name.eq_ignore_ascii_case(query.trim())) else {
            return Ok(Vec::new());
        };
        let mut rng = site_rng(self.noise.seed, "detect", &format!("{scene}\0{}", obj.name));
        let b = noise::jitter_box(&obj.bbox, self.noise.box_jitter_px, image.width, image.height, &mut rng);
        Ok(vec![b.with_score(1.0)])
    }

    async fn segment(&self, image: &ImageRef, boxes: &[BoundingBox]) -> Result<Vec<RasterMask>, BackendError> {
        self.pause().await;
        let (_, _, truth) = self.lookup(image)?;
        let mut out = Vec::with_capacity(boxes.len());
        for b in boxes {
            let region = b
                .to_mask(image.width, image.height)
                .map_err(|e| BackendError::InvalidRequest(e.to_string()))?;
            let best = truth
                .key_objects
                .iter()
                .map(|o| (o.bbox.iou(b), o))
                .filter(|(iou, _)| *iou > 0.0)
                .max_by(|a, b| a.0.total_cmp(&b.0));
            let mask = match best {
                Some((_, obj)) => obj
                    .mask
                    .and(&region)
                    .map_err(|e| BackendError::Config(format!("sidecar mask: {e}")))?,
                None => RasterMask::new(image.width, image.height)
                    .map_err(|e| BackendError::InvalidRequest(e.to_string()))?,
            };
            out.push(mask);
        }
        Ok(out)
    }

    async fn ocr(&self, image: &ImageRef) -> Result<Vec<OcrToken>, BackendError> {
        self.pause().await;
        let (scene, view, truth) = self.lookup(image)?;
        let Some(ocr) = &truth.ocr else {
            return Ok(Vec::new());
        };
        let tokens = match view {
            View::Raw => &ocr.raw,
            View::Ar => &ocr.ar,
        };
        let mut rng = site_rng(self.noise.seed, "ocr", &format!("{scene}/{}", view.as_str()));
        let mut out: Vec<OcrToken> = tokens
            .iter()
            .map(|t| OcrToken {
                text: noise::corrupt_text(&t.text, self.noise.char_error_rate, &mut rng),
                ..t.clone()
            })
            .collect();
        out.sort_by_key(|t| (t.bbox.y, t.bbox.x));
        Ok(out)
    }

    async fn semantic_verdict(&self, _prompt: &str, images: &[ImageRef]) -> Result<SemanticVerdict, BackendError> {
        self.pause().await;
        let first = images
            .first()
            .ok_or_else(|| BackendError::InvalidRequest("no images".into()))?;
        let (scene, _, truth) = self.lookup(first)?;
        let truthful = truth.label == SceneLabel::Vim;
        let flipped = noise::verdict_flipped(&self.noise, &scene);
        if flipped {
            self.log(NoiseEvent::VerdictFlipped { scene: scene.clone() });
        }
        Ok(SemanticVerdict {
            manipulated: truthful != flipped,
            confidence: 1.0,
            rationale: if flipped {
                format!("oracle verdict for {scene} (flipped by noise)")
            } else {
                format!("oracle verdict for {scene}")
            },
        })
    }

    fn noise_log(&self) -> Option<Vec<NoiseEvent>> {
        Some(self.log.lock().expect("noise log").clone())
    }
}
