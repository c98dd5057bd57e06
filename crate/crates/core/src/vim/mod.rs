//! Visual information manipulation detection: OCR both views, diff the
//! tokens, describe the differences in a prompt, and ask a vision-language
//! backend whether the AR view changes the meaning of the scene.

pub mod diff;
pub mod prompt;

use serde::{Deserialize, Serialize};

pub use diff::{diff_tokens, levenshtein, match_tokens, Modification, TokenDiff, TokenMatching};
pub use prompt::{build_prompt, IMAGE_ONLY_INSTRUCTION, TEMPLATE_ID};

use crate::backend::Backends;
use crate::config::PipelineConfig;
use crate::model::{validate_scene_pair_with, AttackKind, ScenePair, Verdict, VimFormat, VimPurpose, VimTaxonomy};
use crate::pipeline::{FailPolicy, FailureNote, PipelineError, PipelineFailure, ReportStatus};
use crate::trace::{LatencyTrace, Stage, TraceRecorder};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VimReport {
    pub scene_id: String,
    pub status: ReportStatus,
    pub template_id: String,
    pub diff: TokenDiff,
    pub prompt: String,
    pub verdict: Verdict,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub taxonomy: Option<VimTaxonomy>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<FailureNote>,
    pub latency: LatencyTrace,
}

impl VimReport {
    pub fn from_failure(failure: &PipelineFailure, policy: FailPolicy) -> Self {
        let (status, verdict) = failure.fallback(policy, AttackKind::Vim);
        Self {
            scene_id: failure.scene_id.clone(),
            status,
            template_id: TEMPLATE_ID.to_string(),
            diff: TokenDiff::default(),
            prompt: String::new(),
            verdict,
            taxonomy: None,
            failure: Some(failure.note()),
            latency: failure.latency.clone(),
        }
    }
}

fn is_symbol(text: &str) -> bool {
    !text.is_empty() && !text.chars().any(char::is_alphanumeric)
}

/// Rule-based format classification for a diff already judged manipulated.
///
/// * a modification between two pure symbols (arrows, marks) → symbol replacement
/// * any other modification → text alteration
/// * additions only → text addition
/// * no textual change → misleading graphic
///
/// The purpose comes from the hint when given, else `default_purpose`.
pub fn classify_taxonomy(diff: &TokenDiff, hint: Option<&VimTaxonomy>, default_purpose: &VimPurpose) -> VimTaxonomy {
    let format = if diff
        .modifications
        .iter()
        .any(|m| is_symbol(&m.before.text) && is_symbol(&m.after.text))
    {
        VimFormat::SymbolReplacement
    } else if !diff.modifications.is_empty() {
        VimFormat::TextAlteration
    } else if !diff.additions.is_empty() {
        VimFormat::TextAddition
    } else {
        VimFormat::MisleadingGraphic
    };
    VimTaxonomy {
        format,
        purpose: hint.map_or_else(|| default_purpose.clone(), |h| h.purpose.clone()),
    }
}

struct Analysis {
    diff: TokenDiff,
    prompt: String,
    verdict: Verdict,
    taxonomy: Option<VimTaxonomy>,
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

    let (raw_tokens, ar_tokens) = futures::join!(backends.ocr(&pair.raw, trace), backends.ocr(&pair.ar, trace));
    let raw_tokens = raw_tokens.map_err(|e| PipelineError::backend(Stage::Ocr, e))?;
    let ar_tokens = ar_tokens.map_err(|e| PipelineError::backend(Stage::Ocr, e))?;

    let (diff, prompt) = trace.local(|| {
        let radius = config.pairing_radius_for(pair.raw.width, pair.raw.height);
        let diff = diff_tokens(&raw_tokens, &ar_tokens, radius);
        let prompt = build_prompt(&diff, None);
        (diff, prompt)
    });

    let images = [pair.raw.clone(), pair.ar.clone()];
    let answer = backends
        .semantic_verdict(&prompt, &images, trace)
        .await
        .map_err(|e| PipelineError::backend(Stage::Verdict, e))?;

    let (verdict, taxonomy) = if answer.manipulated {
        (
            Verdict::attack(AttackKind::Vim, answer.confidence, answer.rationale),
            Some(classify_taxonomy(&diff, None, &config.default_purpose)),
        )
    } else {
        (Verdict::clear(answer.confidence, answer.rationale), None)
    };
    Ok(Analysis {
        diff,
        prompt,
        verdict,
        taxonomy,
    })
}

/// Runs the VIM pipeline on one scene pair.
pub async fn detect_vim(pair: &ScenePair, config: &PipelineConfig, backends: &Backends) -> Result<VimReport, PipelineFailure> {
    let trace = TraceRecorder::new();
    let result = match config.validate() {
        Ok(()) => analyze(pair, config, backends, &trace).await,
        Err(e) => Err(e.into()),
    };
    let latency = trace.finish();
    match result {
        Ok(a) => Ok(VimReport {
            scene_id: pair.id.clone(),
            status: ReportStatus::Determined,
            template_id: TEMPLATE_ID.to_string(),
            diff: a.diff,
            prompt: a.prompt,
            verdict: a.verdict,
            taxonomy: a.taxonomy,
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
