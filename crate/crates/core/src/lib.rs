//! Detection engine for task-detrimental virtual content in AR scenes.
//!
//! Two pipelines share one backend abstraction:
//!
//! * [`obstruction`] flags virtual content that hides semantically important
//!   real-world objects, by comparing segmented key-object masks against the
//!   rendered content mask.
//! * [`vim`] flags visual information manipulation by diffing OCR output of
//!   the raw and AR views and asking a vision-language model for a verdict.
//!
//! [`synth`] generates labeled scene pairs and [`eval`] scores a pipeline
//! over them.

pub mod backend;
pub mod config;
pub mod eval;
pub mod imageio;
pub mod mask;
pub mod model;
pub mod obstruction;
pub mod pipeline;
pub mod synth;
pub mod trace;
pub mod vim;

pub use config::PipelineConfig;
pub use pipeline::{Engine, FailPolicy, PipelineError, PipelineFailure, ReportStatus};
pub use mask::RasterMask;
