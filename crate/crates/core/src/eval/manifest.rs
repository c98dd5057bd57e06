//! JSON-lines manifest of scene pairs plus the on-disk scene layout.
//!
//! ```text
//! <root>/manifest.jsonl
//! <root>/scenes/<id>/{raw.png, ar.png, content_mask.png, truth.json}
//! ```
//!
//! Paths inside the manifest are relative to the manifest's directory.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::imageio::{self, ImageIoError};
use crate::model::{validate_scene_pair_with, GroundTruth, ImageRef, ImageSource, ScenePair, ValidationRules};

pub const MANIFEST_FILE: &str = "manifest.jsonl";

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("{0}: {1}")]
    Io(String, #[source] std::io::Error),
    #[error("line {line}: {message}")]
    Line { line: usize, message: String },
    #[error(transparent)]
    Image(#[from] ImageIoError),
    #[error("scene {id}: {message}")]
    Scene { id: String, message: String },
}

/// One manifest line.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestRecord {
    pub id: String,
    pub raw: String,
    pub ar: String,
    pub content_mask: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truth: Option<String>,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ManifestError + '_ {
    move |e| ManifestError::Io(path.display().to_string(), e)
}

fn load_record(base: &Path, rec: &ManifestRecord, rules: &ValidationRules) -> Result<ScenePair, String> {
    if rec.id.trim().is_empty() {
        return Err("empty scene id".into());
    }
    let raw = ImageRef::from_file(format!("{}/raw", rec.id), base.join(&rec.raw)).map_err(|e| e.to_string())?;
    let ar = ImageRef::from_file(format!("{}/ar", rec.id), base.join(&rec.ar)).map_err(|e| e.to_string())?;
    let content_mask = imageio::read_mask_png(&base.join(&rec.content_mask)).map_err(|e| e.to_string())?;
    let truth = match &rec.truth {
        Some(p) => {
            let path = base.join(p);
            let text = fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
            let truth: GroundTruth = serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))?;
            Some(truth)
        }
        None => None,
    };
    let pair = ScenePair {
        id: rec.id.clone(),
        raw,
        ar,
        content_mask,
        truth,
    };
    match validate_scene_pair_with(&pair, rules).into_iter().next() {
        Some(v) => Err(v.message),
        None => Ok(pair),
    }
}

/// Loads and validates every scene. The first bad line aborts the load with
/// its 1-based line number. Blank lines are skipped.
pub fn load_manifest(path: &Path) -> Result<Vec<ScenePair>, ManifestError> {
    load_manifest_with(path, &ValidationRules::default())
}

pub fn load_manifest_with(path: &Path, rules: &ValidationRules) -> Result<Vec<ScenePair>, ManifestError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let base = path.parent().unwrap_or(Path::new("."));
    let mut pairs = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let line_err = |message: String| ManifestError::Line { line: i + 1, message };
        let rec: ManifestRecord = serde_json::from_str(line).map_err(|e| line_err(e.to_string()))?;
        pairs.push(load_record(base, &rec, rules).map_err(line_err)?);
    }
    Ok(pairs)
}

fn write_image(path: &Path, image: &ImageRef) -> Result<(), ManifestError> {
    match &image.source {
        ImageSource::File(src) if src.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) => {
            fs::copy(src, path).map_err(io_err(path))?;
        }
        _ => imageio::write_rgb_png(path, image.width, image.height, &image.rgb()?)?,
    }
    Ok(())
}

/// Writes one scene under `<root>/scenes/<id>/` and returns its manifest line.
pub fn write_scene(root: &Path, pair: &ScenePair) -> Result<ManifestRecord, ManifestError> {
    if pair.id.is_empty() || pair.id.contains(['/', '\\']) || pair.id == "." || pair.id == ".." {
        return Err(ManifestError::Scene {
            id: pair.id.clone(),
            message: "scene id must be a single path component".into(),
        });
    }
    let rel = PathBuf::from("scenes").join(&pair.id);
    let dir = root.join(&rel);
    fs::create_dir_all(&dir).map_err(io_err(&dir))?;

    write_image(&dir.join("raw.png"), &pair.raw)?;
    write_image(&dir.join("ar.png"), &pair.ar)?;
    imageio::write_mask_png(&dir.join("content_mask.png"), &pair.content_mask)?;
    let truth = match &pair.truth {
        Some(t) => {
            let path = dir.join("truth.json");
            let json = serde_json::to_string_pretty(t).expect("ground truth serializes");
            fs::write(&path, json).map_err(io_err(&path))?;
            Some(rel_str(&rel.join("truth.json")))
        }
        None => None,
    };
    Ok(ManifestRecord {
        id: pair.id.clone(),
        raw: rel_str(&rel.join("raw.png")),
        ar: rel_str(&rel.join("ar.png")),
        content_mask: rel_str(&rel.join("content_mask.png")),
        truth,
    })
}

fn rel_str(p: &Path) -> String {
    p.components()
        .map(|c| c.as_os_str().to_string_lossy())
        .collect::<Vec<_>>()
        .join("/")
}

pub fn write_manifest(path: &Path, records: &[ManifestRecord]) -> Result<(), ManifestError> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r).expect("record serializes");
        out.push(b'\n');
    }
    let mut f = fs::File::create(path).map_err(io_err(path))?;
    f.write_all(&out).map_err(io_err(path))
}
