//! Per-request latency traces attributed to pipeline stage and tier.

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Keyobjects,
    Detect,
    Segment,
    Ocr,
    Verdict,
    LocalCompute,
}

impl Stage {
    pub const ALL: [Stage; 6] = [
        Stage::Keyobjects,
        Stage::Detect,
        Stage::Segment,
        Stage::Ocr,
        Stage::Verdict,
        Stage::LocalCompute,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Stage::Keyobjects => "keyobjects",
            Stage::Detect => "detect",
            Stage::Segment => "segment",
            Stage::Ocr => "ocr",
            Stage::Verdict => "verdict",
            Stage::LocalCompute => "local_compute",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    Edge,
    Cloud,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Span {
    pub call_id: u64,
    pub stage: Stage,
    pub tier: Tier,
    /// Offset from the start of the trace.
    pub start_ns: u64,
    pub elapsed_ns: u64,
}

impl Span {
    pub fn end_ns(&self) -> u64 {
        self.start_ns + self.elapsed_ns
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct LatencyTrace {
    pub spans: Vec<Span>,
    /// Wall-clock duration of the whole pipeline call.
    pub wall_ns: u64,
}

impl LatencyTrace {
    /// Number of spans that correspond to backend calls.
    pub fn backend_calls(&self) -> usize {
        self.spans.iter().filter(|s| s.stage != Stage::LocalCompute).count()
    }

    /// Time during which at least one span of `stage` was running.
    ///
    /// Concurrent calls of one stage overlap, so this is the length of the
    /// union of their intervals, not the sum of their durations.
    pub fn stage_busy_ns(&self, stage: Stage) -> u64 {
        let mut intervals: Vec<(u64, u64)> = self
            .spans
            .iter()
            .filter(|s| s.stage == stage)
            .map(|s| (s.start_ns, s.end_ns()))
            .collect();
        intervals.sort_unstable();
        let mut total = 0;
        let mut current: Option<(u64, u64)> = None;
        for (s, e) in intervals {
            match current {
                Some((cs, ce)) if s <= ce => current = Some((cs, ce.max(e))),
                Some((cs, ce)) => {
                    total += ce - cs;
                    current = Some((s, e));
                }
                None => current = Some((s, e)),
            }
        }
        if let Some((cs, ce)) = current {
            total += ce - cs;
        }
        total
    }

    /// Sum of per-stage busy time. Never exceeds `wall_ns` while stages run one after another.
    pub fn stage_span_sum(&self) -> u64 {
        Stage::ALL.iter().map(|s| self.stage_busy_ns(*s)).sum()
    }
}

/// Collects spans from concurrently running calls of one pipeline invocation.
#[derive(Debug)]
pub struct TraceRecorder {
    origin: Instant,
    next_id: AtomicU64,
    spans: Mutex<Vec<Span>>,
}

impl Default for TraceRecorder {
    fn default() -> Self {
        Self::new()
    }
}

impl TraceRecorder {
    pub fn new() -> Self {
        Self {
            origin: Instant::now(),
            next_id: AtomicU64::new(0),
            spans: Mutex::new(Vec::new()),
        }
    }

    pub fn record(&self, stage: Stage, tier: Tier, start: Instant, end: Instant) {
        let start_ns = start.saturating_duration_since(self.origin).as_nanos() as u64;
        let elapsed_ns = end.saturating_duration_since(start).as_nanos() as u64;
        let call_id = self.next_id.fetch_add(1, Ordering::Relaxed);
        self.spans.lock().expect("trace lock").push(Span {
            call_id,
            stage,
            tier,
            start_ns,
            elapsed_ns,
        });
    }

    /// Runs `f` and records it as a local compute span on the edge tier.
    pub fn local<T>(&self, f: impl FnOnce() -> T) -> T {
        let start = Instant::now();
        let out = f();
        self.record(Stage::LocalCompute, Tier::Edge, start, Instant::now());
        out
    }

    pub fn finish(self) -> LatencyTrace {
        let wall_ns = self.origin.elapsed().as_nanos() as u64;
        let mut spans = self.spans.into_inner().expect("trace lock");
        spans.sort_by_key(|s| (s.start_ns, s.call_id));
        LatencyTrace { spans, wall_ns }
    }
}
