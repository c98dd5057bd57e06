//! Scores a pipeline over a labeled manifest.

pub mod manifest;

use std::collections::BTreeMap;
use std::fmt::{self, Write};
use std::str::FromStr;

use futures::stream::{self, StreamExt};
use serde::{Deserialize, Serialize};

pub use manifest::{load_manifest, write_manifest, write_scene, ManifestError, ManifestRecord, MANIFEST_FILE};

use crate::mask;
use crate::model::{SceneLabel, ScenePair};
use crate::pipeline::{Engine, FailureNote};
use crate::trace::{LatencyTrace, Stage};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineKind {
    Obstruction,
    Vim,
}

impl PipelineKind {
    pub fn as_str(&self) -> &'static str {
        match self {
            PipelineKind::Obstruction => "obstruction",
            PipelineKind::Vim => "vim",
        }
    }

    /// Ground-truth label this pipeline is meant to flag.
    pub fn positive_label(&self) -> SceneLabel {
        match self {
            PipelineKind::Obstruction => SceneLabel::Obstruction,
            PipelineKind::Vim => SceneLabel::Vim,
        }
    }
}

impl fmt::Display for PipelineKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PipelineKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "obstruction" => Ok(PipelineKind::Obstruction),
            "vim" => Ok(PipelineKind::Vim),
            other => Err(format!("unknown pipeline {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl Confusion {
    pub fn record(&mut self, predicted: bool, actual: bool) {
        match (predicted, actual) {
            (true, true) => self.tp += 1,
            (true, false) => self.fp += 1,
            (false, false) => self.tn += 1,
            (false, true) => self.fn_ += 1,
        }
    }

    pub fn merge(&mut self, other: &Confusion) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.tn += other.tn;
        self.fn_ += other.fn_;
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }

    pub fn metrics(&self) -> Metrics {
        let ratio = |num: u64, den: u64| (den > 0).then(|| num as f64 / den as f64);
        let precision = ratio(self.tp, self.tp + self.fp);
        let recall = ratio(self.tp, self.tp + self.fn_);
        let f1 = match (precision, recall) {
            (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
            (Some(_), Some(_)) => Some(0.0),
            _ => None,
        };
        Metrics {
            accuracy: ratio(self.tp + self.tn, self.total()),
            precision,
            recall,
            f1,
        }
    }
}

/// Undefined metrics (zero denominators) are `None` and serialize as null.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: Option<f64>,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneOutcome {
    pub scene_id: String,
    pub label: SceneLabel,
    /// `None` when the scene failed.
    pub predicted_attacked: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<FailureNote>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelBreakdown {
    pub scenes: u64,
    pub failed: u64,
    pub predicted_attacked: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectLevel {
    pub confusion: Confusion,
    pub metrics: Metrics,
}

/// Everything in a report that is a function of inputs and configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalResults {
    pub pipeline: PipelineKind,
    pub config_fingerprint: String,
    pub scenes: u64,
    pub evaluated: u64,
    pub confusion: Confusion,
    pub metrics: Metrics,
    pub per_label: BTreeMap<SceneLabel, LabelBreakdown>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub object_level: Option<ObjectLevel>,
    pub failed: Vec<SceneOutcome>,
    pub outcomes: Vec<SceneOutcome>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencyStats {
    pub count: u64,
    pub mean_ms: f64,
    pub p95_ms: f64,
}

impl LatencyStats {
    /// Mean and nearest-rank 95th percentile of `samples_ns`.
    pub fn from_ns(samples_ns: &[u64]) -> Self {
        if samples_ns.is_empty() {
            return Self::default();
        }
        let mut sorted = samples_ns.to_vec();
        sorted.sort_unstable();
        let n = sorted.len();
        let sum: u128 = sorted.iter().map(|v| *v as u128).sum();
        let rank = (0.95 * n as f64).ceil() as usize;
        Self {
            count: n as u64,
            mean_ms: sum as f64 / n as f64 / 1e6,
            p95_ms: sorted[rank.clamp(1, n) - 1] as f64 / 1e6,
        }
    }
}

/// Timing varies run to run and is kept apart from [`EvalResults`].
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub wall: LatencyStats,
    /// Per backend call (or local compute block), keyed by stage.
    pub stages: BTreeMap<Stage, LatencyStats>,
}

impl Timing {
    pub fn from_traces<'a>(traces: impl IntoIterator<Item = &'a LatencyTrace>) -> Self {
        let mut wall = Vec::new();
        let mut by_stage: BTreeMap<Stage, Vec<u64>> = BTreeMap::new();
        for t in traces {
            wall.push(t.wall_ns);
            for s in &t.spans {
                by_stage.entry(s.stage).or_default().push(s.elapsed_ns);
            }
        }
        Self {
            wall: LatencyStats::from_ns(&wall),
            stages: by_stage.into_iter().map(|(k, v)| (k, LatencyStats::from_ns(&v))).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    #[serde(flatten)]
    pub results: EvalResults,
    pub timing: Timing,
}

struct Run {
    outcome: SceneOutcome,
    objects: Option<Confusion>,
    latency: LatencyTrace,
}

/// Object-level scoring: truth flags come from the ground-truth masks, the
/// prediction from the report. Objects the report never measured count as
/// not flagged.
fn object_confusion(pair: &ScenePair, flagged: &BTreeMap<String, bool>, threshold: f64) -> Confusion {
    let mut c = Confusion::default();
    let Some(truth) = &pair.truth else {
        return c;
    };
    for obj in &truth.key_objects {
        let actual = mask::obstruction_ratio(&obj.mask, &pair.content_mask)
            .map(|r| r >= threshold)
            .unwrap_or(false);
        let predicted = flagged.get(&obj.name).copied().unwrap_or(false);
        c.record(predicted, actual);
    }
    for (name, predicted) in flagged {
        if !truth.key_objects.iter().any(|o| &o.name == name) {
            c.record(*predicted, false);
        }
    }
    c
}

async fn run_scene(engine: &Engine, kind: PipelineKind, pair: &ScenePair) -> Run {
    let label = pair.truth.as_ref().map(|t| t.label);
    let outcome = |predicted: Option<bool>, failure: Option<FailureNote>| SceneOutcome {
        scene_id: pair.id.clone(),
        label: label.unwrap_or(SceneLabel::None),
        predicted_attacked: predicted,
        failure,
    };
    if label.is_none() {
        return Run {
            outcome: outcome(
                None,
                Some(FailureNote {
                    stage: "input".into(),
                    error: "scene has no ground truth".into(),
                }),
            ),
            objects: None,
            latency: LatencyTrace::default(),
        };
    }
    match kind {
        PipelineKind::Obstruction => match engine.detect_obstruction(pair).await {
            Ok(r) => {
                let flagged: BTreeMap<String, bool> =
                    r.per_object.iter().map(|o| (o.name.clone(), o.measure.flagged())).collect();
                Run {
                    outcome: outcome(Some(r.verdict.attacked), None),
                    objects: Some(object_confusion(pair, &flagged, engine.config().threshold)),
                    latency: r.latency,
                }
            }
            Err(f) => Run {
                outcome: outcome(None, Some(f.note())),
                objects: None,
                latency: f.latency,
            },
        },
        PipelineKind::Vim => match engine.detect_vim(pair).await {
            Ok(r) => Run {
                outcome: outcome(Some(r.verdict.attacked), None),
                objects: None,
                latency: r.latency,
            },
            Err(f) => Run {
                outcome: outcome(None, Some(f.note())),
                objects: None,
                latency: f.latency,
            },
        },
    }
}

/// Runs `kind` over every pair with bounded concurrency. Failed scenes are
/// listed under `failed` and left out of the confusion matrix.
pub async fn evaluate(pairs: &[ScenePair], kind: PipelineKind, engine: &Engine) -> EvalReport {
    let parallelism = engine.config().eval_parallelism.max(1);
    let mut runs: Vec<(usize, Run)> = stream::iter(pairs.iter().enumerate())
        .map(|(i, p)| async move { (i, run_scene(engine, kind, p).await) })
        .buffer_unordered(parallelism)
        .collect()
        .await;
    runs.sort_by_key(|(i, _)| *i);

    let positive = kind.positive_label();
    let mut confusion = Confusion::default();
    let mut per_label: BTreeMap<SceneLabel, LabelBreakdown> = BTreeMap::new();
    let mut objects: Option<Confusion> = None;
    let mut failed = Vec::new();
    let mut outcomes = Vec::with_capacity(runs.len());
    for (_, run) in &runs {
        let o = &run.outcome;
        let b = per_label.entry(o.label).or_default();
        b.scenes += 1;
        match o.predicted_attacked {
            Some(p) => {
                confusion.record(p, o.label == positive);
                b.predicted_attacked += u64::from(p);
            }
            None => {
                b.failed += 1;
                failed.push(o.clone());
            }
        }
        if let Some(c) = &run.objects {
            objects.get_or_insert_with(Confusion::default).merge(c);
        }
        outcomes.push(o.clone());
    }
    if kind == PipelineKind::Obstruction && objects.is_none() {
        objects = Some(Confusion::default());
    }

    EvalReport {
        results: EvalResults {
            pipeline: kind,
            config_fingerprint: engine.config().fingerprint(),
            scenes: pairs.len() as u64,
            evaluated: pairs.len() as u64 - failed.len() as u64,
            confusion,
            metrics: confusion.metrics(),
            per_label,
            object_level: objects.map(|c| ObjectLevel {
                confusion: c,
                metrics: c.metrics(),
            }),
            failed,
            outcomes,
        },
        timing: Timing::from_traces(runs.iter().map(|(_, r)| &r.latency)),
    }
}

/// Formats a fraction as a percentage with two decimals, or `n/a`.
pub fn format_percent(value: Option<f64>) -> String {
    match value {
        Some(v) => format!("{:.2}%", (v * 10_000.0).round() / 100.0),
        None => "n/a".to_string(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Text,
}

impl FromStr for ReportFormat {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "text" => Ok(ReportFormat::Text),
            other => Err(format!("unknown format {other:?}")),
        }
    }
}

fn metrics_lines(out: &mut String, indent: &str, m: &Metrics) {
    let _ = writeln!(out, "{indent}accuracy:  {}", format_percent(m.accuracy));
    let _ = writeln!(out, "{indent}precision: {}", format_percent(m.precision));
    let _ = writeln!(out, "{indent}recall:    {}", format_percent(m.recall));
    let _ = writeln!(out, "{indent}f1:        {}", format_percent(m.f1));
}

pub fn emit_report(report: &EvalReport, format: ReportFormat) -> String {
    match format {
        ReportFormat::Json => serde_json::to_string_pretty(report).expect("report serializes"),
        ReportFormat::Text => render_text(report),
    }
}

fn render_text(report: &EvalReport) -> String {
    let r = &report.results;
    let mut out = String::new();
    let _ = writeln!(out, "pipeline: {}", r.pipeline);
    let _ = writeln!(out, "config fingerprint: {}", r.config_fingerprint);
    let _ = writeln!(
        out,
        "scenes: {} (evaluated {}, failed {})",
        r.scenes,
        r.evaluated,
        r.failed.len()
    );
    metrics_lines(&mut out, "", &r.metrics);
    let c = &r.confusion;
    let _ = writeln!(out, "confusion: tp={} fp={} tn={} fn={}", c.tp, c.fp, c.tn, c.fn_);
    out.push_str("per label:\n");
    for (label, b) in &r.per_label {
        let _ = writeln!(
            out,
            "  {label}: {} scenes, {} flagged, {} failed",
            b.scenes, b.predicted_attacked, b.failed
        );
    }
    if let Some(o) = &r.object_level {
        let c = &o.confusion;
        let _ = writeln!(out, "objects: tp={} fp={} tn={} fn={}", c.tp, c.fp, c.tn, c.fn_);
        metrics_lines(&mut out, "  ", &o.metrics);
    }
    for f in &r.failed {
        if let Some(n) = &f.failure {
            let _ = writeln!(out, "failed {} at {}: {}", f.scene_id, n.stage, n.error);
        }
    }
    let t = &report.timing;
    let _ = writeln!(
        out,
        "latency wall: mean {:.3} ms, p95 {:.3} ms",
        t.wall.mean_ms, t.wall.p95_ms
    );
    for (stage, s) in &t.stages {
        let _ = writeln!(
            out,
            "latency {stage}: {} calls, mean {:.3} ms, p95 {:.3} ms",
            s.count, s.mean_ms, s.p95_ms
        );
    }
    out
}
