use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::backend::{BackendError, EndpointSet, NoiseProfile};
use crate::mask::{validate_threshold, DEFAULT_THRESHOLD};
use crate::model::{TaxonomyRegistry, ValidationRules, VimPurpose, DEFAULT_MASK_SLACK_PX};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("threshold {0} outside (0, 1]")]
    Threshold(f64),
    #[error("min_detection_score {0} outside [0, 1]")]
    DetectionScore(f64),
    #[error("{0} must be > 0")]
    Zero(&'static str),
    #[error("purpose {0:?} is not registered")]
    Purpose(String),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error("config file {path}: {message}")]
    File { path: String, message: String },
    #[error("environment override {var}: {message}")]
    Env { var: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Obstruction threshold; a key object is flagged when its covered
    /// fraction is at least this value.
    pub threshold: f64,
    pub max_key_objects: usize,
    pub min_detection_score: f64,
    /// Token pairing radius at a 640x480 frame, scaled with the image diagonal.
    pub pairing_radius_px: f64,
    pub mask_slack_px: u32,
    pub default_purpose: VimPurpose,
    pub taxonomy: TaxonomyRegistry,
    /// Scenes evaluated concurrently by the harness.
    pub eval_parallelism: usize,
    pub endpoints: EndpointSet,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
            max_key_objects: 8,
            min_detection_score: 0.25,
            pairing_radius_px: 24.0,
            mask_slack_px: DEFAULT_MASK_SLACK_PX,
            default_purpose: VimPurpose::Misinformation,
            taxonomy: TaxonomyRegistry::default(),
            eval_parallelism: 8,
            endpoints: EndpointSet::oracle(".", &NoiseProfile::default()),
        }
    }
}

impl PipelineConfig {
    /// Defaults with every backend served by a seeded oracle over `dir`.
    pub fn with_oracle(dir: impl AsRef<std::path::Path>, noise: &NoiseProfile) -> Self {
        Self {
            endpoints: EndpointSet::oracle(dir, noise),
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        validate_threshold(self.threshold).map_err(|_| ConfigError::Threshold(self.threshold))?;
        if !(0.0..=1.0).contains(&self.min_detection_score) {
            return Err(ConfigError::DetectionScore(self.min_detection_score));
        }
        if self.max_key_objects == 0 {
            return Err(ConfigError::Zero("max_key_objects"));
        }
        if self.pairing_radius_px.is_nan() || self.pairing_radius_px <= 0.0 {
            return Err(ConfigError::Zero("pairing_radius_px"));
        }
        if self.eval_parallelism == 0 {
            return Err(ConfigError::Zero("eval_parallelism"));
        }
        if !self.taxonomy.knows_purpose(&self.default_purpose) {
            return Err(ConfigError::Purpose(self.default_purpose.to_string()));
        }
        self.endpoints.validate()?;
        Ok(())
    }

    pub fn validation_rules(&self) -> ValidationRules {
        ValidationRules {
            mask_slack_px: self.mask_slack_px,
            taxonomy: self.taxonomy.clone(),
        }
    }

    /// Pairing radius for an image of the given size.
    pub fn pairing_radius_for(&self, width: u32, height: u32) -> f64 {
        let diag = (f64::from(width).powi(2) + f64::from(height).powi(2)).sqrt();
        self.pairing_radius_px * diag / 800.0
    }

    pub fn redacted(&self) -> Self {
        Self {
            endpoints: self.endpoints.redacted(),
            ..self.clone()
        }
    }

    /// Hex SHA-256 of the redacted configuration, backend locators included.
    pub fn fingerprint(&self) -> String {
        let bytes = serde_json::to_vec(&self.redacted()).expect("config serializes");
        hex::encode(Sha256::digest(&bytes))[..16].to_string()
    }
}
