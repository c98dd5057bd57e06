//! Error and failure-policy plumbing shared by both detection pipelines.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, Backends};
use crate::config::{ConfigError, PipelineConfig};
use crate::model::{AttackKind, ScenePair, Verdict, Violation};
use crate::obstruction::{self, ObstructionReport};
use crate::trace::{LatencyTrace, Stage};
use crate::vim::{self, VimReport};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid scene pair: {}", join_violations(.0))]
    InvalidScene(Vec<Violation>),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{stage} stage failed: {source}")]
    Backend {
        stage: Stage,
        #[source]
        source: BackendError,
    },
    #[error("analysis did not finish within {limit_ms} ms")]
    Deadline { limit_ms: u64 },
}

fn join_violations(v: &[Violation]) -> String {
    v.iter().map(|v| v.message.as_str()).collect::<Vec<_>>().join("; ")
}

impl PipelineError {
    pub fn backend(stage: Stage, source: BackendError) -> Self {
        PipelineError::Backend { stage, source }
    }

    /// Name of the stage that failed, or `"input"` for validation failures.
    pub fn stage_name(&self) -> &'static str {
        match self {
            PipelineError::InvalidScene(_) => "input",
            PipelineError::Config(_) => "config",
            PipelineError::Backend { stage, .. } => stage.as_str(),
            PipelineError::Deadline { .. } => "request",
        }
    }
}

/// A pipeline error together with whatever latency was recorded before it.
#[derive(Debug, Error)]
#[error("{error}")]
pub struct PipelineFailure {
    pub scene_id: String,
    #[source]
    pub error: PipelineError,
    pub latency: LatencyTrace,
}

/// What to tell the AR client when a backend fails mid-analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailPolicy {
    FailOpen,
    FailClosed,
}

impl std::str::FromStr for FailPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "fail_open" => Ok(FailPolicy::FailOpen),
            "fail_closed" => Ok(FailPolicy::FailClosed),
            other => Err(format!("unknown fail policy {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ReportStatus {
    #[serde(rename = "determined")]
    Determined,
    #[serde(rename = "undetermined-treat-as-attacked")]
    UndeterminedTreatAsAttacked,
    #[serde(rename = "undetermined-treat-as-clear")]
    UndeterminedTreatAsClear,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailureNote {
    pub stage: String,
    pub error: String,
}

impl PipelineFailure {
    pub fn note(&self) -> FailureNote {
        FailureNote {
            stage: self.error.stage_name().to_string(),
            error: self.error.to_string(),
        }
    }

    /// Status and verdict a report takes under `policy`.
    pub(crate) fn fallback(&self, policy: FailPolicy, kind: AttackKind) -> (ReportStatus, Verdict) {
        let why = format!("backend failure at {} stage: {}", self.error.stage_name(), self.error);
        match policy {
            FailPolicy::FailClosed => (
                ReportStatus::UndeterminedTreatAsAttacked,
                Verdict::attack(kind, 0.0, format!("undetermined, treated as attacked; {why}")),
            ),
            FailPolicy::FailOpen => (
                ReportStatus::UndeterminedTreatAsClear,
                Verdict::clear(0.0, format!("undetermined, treated as clear; {why}")),
            ),
        }
    }
}

/// A configuration bound to connected backends.
#[derive(Debug, Clone)]
pub struct Engine {
    config: PipelineConfig,
    backends: Backends,
}

impl Engine {
    pub fn new(config: PipelineConfig) -> Result<Self, ConfigError> {
        config.validate()?;
        let backends = Backends::connect(&config.endpoints)?;
        Ok(Self { config, backends })
    }

    pub fn with_backends(config: PipelineConfig, backends: Backends) -> Result<Self, ConfigError> {
        config.validate()?;
        Ok(Self { config, backends })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn backends(&self) -> &Backends {
        &self.backends
    }

    pub async fn detect_obstruction(&self, pair: &ScenePair) -> Result<ObstructionReport, PipelineFailure> {
        obstruction::detect_obstruction(pair, &self.config, &self.backends).await
    }

    pub async fn detect_vim(&self, pair: &ScenePair) -> Result<VimReport, PipelineFailure> {
        vim::detect_vim(pair, &self.config, &self.backends).await
    }
}
