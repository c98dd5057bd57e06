//! Obstruction detection: identify key objects, localize and segment them,
//! measure how much of each is covered by the rendered content, and flag
//! the scene when any object is covered at or above the threshold.

use futures::future::join_all;
use serde::{Deserialize, Serialize};

use crate::backend::Backends;
use crate::config::PipelineConfig;
use crate::mask::{validate_threshold, MaskError, ObstructionMeasure, RasterMask};
use crate::model::{validate_scene_pair_with, AttackKind, BoundingBox, KeyObject, ScenePair, Verdict};
use crate::pipeline::{FailPolicy, FailureNote, PipelineError, PipelineFailure, ReportStatus};
use crate::trace::{LatencyTrace, Stage, TraceRecorder};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectMeasure {
    Measured(ObstructionMeasure),
    /// Excluded from the scene verdict.
    Invalid { reason: String },
}

impl ObjectMeasure {
    pub fn flagged(&self) -> bool {
        matches!(self, ObjectMeasure::Measured(m) if m.flagged)
    }

    pub fn measured(&self) -> Option<&ObstructionMeasure> {
        match self {
            ObjectMeasure::Measured(m) => Some(m),
            ObjectMeasure::Invalid { .. } => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectReport {
    pub name: String,
    #[serde(rename = "box")]
    pub bbox: BoundingBox,
    pub mask: RasterMask,
    pub measure: ObjectMeasure,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObstructionReport {
    pub scene_id: String,
    pub status: ReportStatus,
    pub per_object: Vec<ObjectReport>,
    /// Key objects with no detection at or above the minimum score.
    #[serde(default)]
    pub unlocalized: Vec<String>,
    pub verdict: Verdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<FailureNote>,
    pub latency: LatencyTrace,
}

impl ObstructionReport {
    /// Report for a failed run under the given policy.
    pub fn from_failure(failure: &PipelineFailure, policy: FailPolicy) -> Self {
        let (status, verdict) = failure.fallback(policy, AttackKind::Obstruction);
        Self {
            scene_id: failure.scene_id.clone(),
            status,
            per_object: Vec::new(),
            unlocalized: Vec::new(),
            verdict,
            failure: Some(failure.note()),
            latency: failure.latency.clone(),
        }
    }
}

/// Measures each object against the content mask. Objects with empty or
/// mis-sized masks come back as [`ObjectMeasure::Invalid`].
pub fn detections_to_measures(
    objects: &[KeyObject],
    content: &RasterMask,
    threshold: f64,
) -> Result<Vec<ObjectMeasure>, MaskError> {
    validate_threshold(threshold)?;
    Ok(objects
        .iter()
        .map(|o| match ObstructionMeasure::compute(&o.mask, content, threshold) {
            Ok(m) => ObjectMeasure::Measured(m),
            Err(e) => ObjectMeasure::Invalid { reason: e.to_string() },
        })
        .collect())
}

/// OR over per-object flags.
pub fn scene_verdict(objects: &[ObjectReport], threshold: f64) -> Verdict {
    if objects.is_empty() {
        return Verdict::clear(1.0, "no key objects identified");
    }
    let mut flagged: Vec<(&str, f64)> = objects
        .iter()
        .filter_map(|o| o.measure.measured().filter(|m| m.flagged).map(|m| (o.name.as_str(), m.ratio)))
        .collect();
    flagged.sort_by(|a, b| a.0.cmp(b.0));
    let max_ratio = objects
        .iter()
        .filter_map(|o| o.measure.measured())
        .map(|m| m.ratio)
        .fold(0.0f64, f64::max);
    if flagged.is_empty() {
        return Verdict::clear(
            1.0 - max_ratio,
            format!(
                "no key object covered at or above {:.1}% (max {:.1}%)",
                threshold * 100.0,
                max_ratio * 100.0
            ),
        );
    }
    let names: Vec<String> = flagged
        .iter()
        .map(|(n, r)| format!("{n} ({:.1}%)", r * 100.0))
        .collect();
    Verdict::attack(
        AttackKind::Obstruction,
        max_ratio,
        format!(
            "obstructed at or above {:.1}%: {}",
            threshold * 100.0,
            names.join(", ")
        ),
    )
}

struct Analysis {
    per_object: Vec<ObjectReport>,
    unlocalized: Vec<String>,
    verdict: Verdict,
}

async fn analyze(
    pair: &ScenePair,
    config: &PipelineConfig,
    backends: &Backends,
    trace: &TraceRecorder,
) -> Result<Analysis, PipelineError> {
    let violations = validate_scene_pair_with(pair, &config.validation_rules());
    if !violations.is_empty() {
        return Err(PipelineError::InvalidScene(violations));
    }
    let image = &pair.raw;

    let mut names = backends
        .identify_key_objects(image, trace)
        .await
        .map_err(|e| PipelineError::backend(Stage::Keyobjects, e))?;
    names.truncate(config.max_key_objects);
    if names.is_empty() {
        return Ok(Analysis {
            per_object: Vec::new(),
            unlocalized: Vec::new(),
            verdict: Verdict::clear(1.0, "no key objects identified"),
        });
    }

    let detections = join_all(names.iter().map(|n| backends.detect(image, n, trace))).await;
    let mut localized: Vec<(String, BoundingBox)> = Vec::new();
    let mut unlocalized = Vec::new();
    for (name, boxes) in names.into_iter().zip(detections) {
        let boxes = boxes.map_err(|e| PipelineError::backend(Stage::Detect, e))?;
        match boxes.into_iter().find(|b| b.score >= config.min_detection_score) {
            Some(b) => localized.push((name, b)),
            None => unlocalized.push(name),
        }
    }

    let boxes: Vec<BoundingBox> = localized.iter().map(|(_, b)| *b).collect();
    let masks = backends
        .segment(image, &boxes, trace)
        .await
        .map_err(|e| PipelineError::backend(Stage::Segment, e))?;

    let (per_object, verdict) = trace.local(|| {
        let objects: Vec<KeyObject> = localized
            .into_iter()
            .zip(masks)
            .map(|((name, bbox), mask)| KeyObject { name, bbox, mask })
            .collect();
        let measures = detections_to_measures(&objects, &pair.content_mask, config.threshold)
            .expect("threshold validated with config");
        let per_object: Vec<ObjectReport> = objects
            .into_iter()
            .zip(measures)
            .map(|(o, measure)| ObjectReport {
                name: o.name,
                bbox: o.bbox,
                mask: o.mask,
                measure,
            })
            .collect();
        let verdict = if per_object.is_empty() {
            Verdict::clear(1.0, "no key objects localized")
        } else {
            scene_verdict(&per_object, config.threshold)
        };
        (per_object, verdict)
    });

    Ok(Analysis {
        per_object,
        unlocalized,
        verdict,
    })
}

/// Runs the obstruction pipeline on one scene pair.
pub async fn detect_obstruction(
    pair: &ScenePair,
    config: &PipelineConfig,
    backends: &Backends,
) -> Result<ObstructionReport, PipelineFailure> {
    let trace = TraceRecorder::new();
    let result = match config.validate() {
        Ok(()) => analyze(pair, config, backends, &trace).await,
        Err(e) => Err(e.into()),
    };
    let latency = trace.finish();
    match result {
        Ok(a) => Ok(ObstructionReport {
            scene_id: pair.id.clone(),
            status: ReportStatus::Determined,
            per_object: a.per_object,
            unlocalized: a.unlocalized,
            verdict: a.verdict,
            failure: None,
            latency,
        }),
        Err(error) => Err(PipelineFailure {
            scene_id: pair.id.clone(),
            error,
            latency,
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn object(name: &str, mask: RasterMask) -> KeyObject {
        KeyObject {
            name: name.into(),
            bbox: BoundingBox::new(0, 0, 10, 10),
            mask,
        }
    }

    #[test]
    fn half_covered_object() {
        let key = RasterMask::from_rect(64, 64, 0, 0, 10, 10).unwrap();
        let content = RasterMask::from_rect(64, 64, 5, 0, 5, 10).unwrap();
        let m = detections_to_measures(&[object("sign", key)], &content, 0.3).unwrap();
        let measured = m[0].measured().unwrap();
        assert_eq!((measured.key_area, measured.overlap_area), (100, 50));
        assert_eq!(measured.ratio, 0.5);
        assert!(measured.flagged);
    }

    #[test]
    fn threshold_one_needs_full_cover() {
        let key = RasterMask::from_rect(64, 64, 0, 0, 10, 10).unwrap();
        let content = RasterMask::from_rect(64, 64, 5, 0, 5, 10).unwrap();
        let m = detections_to_measures(&[object("sign", key.clone())], &content, 1.0).unwrap();
        assert!(!m[0].flagged());
        let m = detections_to_measures(&[object("sign", key.clone())], &key, 1.0).unwrap();
        assert!(m[0].flagged());
    }

    #[test]
    fn no_objects_no_measures() {
        let content = RasterMask::new(8, 8).unwrap();
        assert!(detections_to_measures(&[], &content, 0.3).unwrap().is_empty());
        assert!(detections_to_measures(&[], &content, 0.0).is_err());
    }

    #[test]
    fn empty_mask_is_invalid_and_ignored() {
        let content = RasterMask::from_rect(16, 16, 0, 0, 16, 16).unwrap();
        let m = detections_to_measures(&[object("ghost", RasterMask::new(16, 16).unwrap())], &content, 0.3).unwrap();
        assert_eq!(
            m[0],
            ObjectMeasure::Invalid {
                reason: "empty key object mask".into()
            }
        );
        let reports = vec![ObjectReport {
            name: "ghost".into(),
            bbox: BoundingBox::new(0, 0, 1, 1),
            mask: RasterMask::new(16, 16).unwrap(),
            measure: m[0].clone(),
        }];
        assert!(!scene_verdict(&reports, 0.3).attacked);
    }

    #[test]
    fn verdict_is_order_independent() {
        let content = RasterMask::from_rect(32, 32, 0, 0, 16, 32).unwrap();
        let objs = vec![
            object("a", RasterMask::from_rect(32, 32, 0, 0, 8, 8).unwrap()),
            object("b", RasterMask::from_rect(32, 32, 20, 0, 8, 8).unwrap()),
            object("c", RasterMask::from_rect(32, 32, 12, 12, 8, 8).unwrap()),
        ];
        let reports = |objs: &[KeyObject]| -> Vec<ObjectReport> {
            let ms = detections_to_measures(objs, &content, 0.3).unwrap();
            objs.iter()
                .zip(ms)
                .map(|(o, measure)| ObjectReport {
                    name: o.name.clone(),
                    bbox: o.bbox,
                    mask: o.mask.clone(),
                    measure,
                })
                .collect()
        };
        let v1 = scene_verdict(&reports(&objs), 0.3);
        let mut rev = objs.clone();
        rev.reverse();
        let v2 = scene_verdict(&reports(&rev), 0.3);
        assert!(v1.attacked);
        assert_eq!(v1, v2);
    }
}
