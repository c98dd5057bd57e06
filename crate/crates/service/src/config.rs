//! Service configuration: a JSON file plus `ARSENT_*` environment overrides.

use std::net::SocketAddr;
use std::path::Path;

use arsentinel_core::backend::{EndpointSet, NoiseProfile};
use arsentinel_core::config::ConfigError;
use arsentinel_core::{FailPolicy, PipelineConfig};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const ENV_PREFIX: &str = "ARSENT_";

#[derive(Debug, Error)]
pub enum ServiceConfigError {
    #[error("cannot read {path}: {source}")]
    Read {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("cannot parse {path}: {source}")]
    Parse {
        path: String,
        #[source]
        source: serde_json::Error,
    },
    #[error("{var}: {message}")]
    Env { var: String, message: String },
    #[error("invalid service config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Pipeline(#[from] ConfigError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ServiceConfig {
    pub listen: String,
    pub fail_policy: FailPolicy,
    /// Analyses allowed in flight; further requests get 429.
    pub max_concurrent_requests: usize,
    pub request_timeout_ms: u64,
    pub max_body_bytes: usize,
    pub pipeline: PipelineConfig,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            listen: "127.0.0.1:8080".into(),
            fail_policy: FailPolicy::FailClosed,
            max_concurrent_requests: 16,
            request_timeout_ms: 30_000,
            max_body_bytes: 32 * 1024 * 1024,
            pipeline: PipelineConfig::default(),
        }
    }
}

fn parse_env<T: std::str::FromStr>(var: &str, value: &str) -> Result<T, ServiceConfigError>
where
    T::Err: std::fmt::Display,
{
    value.trim().parse().map_err(|e: T::Err| ServiceConfigError::Env {
        var: var.to_string(),
        message: format!("{value:?}: {e}"),
    })
}

impl ServiceConfig {
    /// Reads `path` (defaults when `None`), then applies the process
    /// environment, then validates.
    pub fn load(path: Option<&Path>) -> Result<Self, ServiceConfigError> {
        Self::load_with_env(path, |k| std::env::var(k).ok())
    }

    pub fn load_with_env(path: Option<&Path>, env: impl Fn(&str) -> Option<String>) -> Result<Self, ServiceConfigError> {
        let mut config = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p).map_err(|source| ServiceConfigError::Read {
                    path: p.display().to_string(),
                    source,
                })?;
                serde_json::from_str(&text).map_err(|source| ServiceConfigError::Parse {
                    path: p.display().to_string(),
                    source,
                })?
            }
            None => Self::default(),
        };
        config.apply_env(env)?;
        config.validate()?;
        Ok(config)
    }

    /// Recognised variables: `ARSENT_LISTEN`, `ARSENT_FAIL_POLICY`,
    /// `ARSENT_MAX_CONCURRENT_REQUESTS`, `ARSENT_REQUEST_TIMEOUT_MS`,
    /// `ARSENT_THRESHOLD`, `ARSENT_ORACLE_DIR`, `ARSENT_BACKEND_URL` and
    /// `ARSENT_BEARER_TOKEN`.
    pub fn apply_env(&mut self, env: impl Fn(&str) -> Option<String>) -> Result<(), ServiceConfigError> {
        let get = |name: &str| {
            let var = format!("{ENV_PREFIX}{name}");
            env(&var).filter(|v| !v.trim().is_empty()).map(|v| (var, v))
        };
        if let Some((_, v)) = get("LISTEN") {
            self.listen = v;
        }
        if let Some((var, v)) = get("FAIL_POLICY") {
            self.fail_policy = parse_env(&var, &v)?;
        }
        if let Some((var, v)) = get("MAX_CONCURRENT_REQUESTS") {
            self.max_concurrent_requests = parse_env(&var, &v)?;
        }
        if let Some((var, v)) = get("REQUEST_TIMEOUT_MS") {
            self.request_timeout_ms = parse_env(&var, &v)?;
        }
        if let Some((var, v)) = get("THRESHOLD") {
            self.pipeline.threshold = parse_env(&var, &v)?;
        }
        if let Some((_, dir)) = get("ORACLE_DIR") {
            self.pipeline.endpoints = EndpointSet::oracle(dir.trim(), &NoiseProfile::default());
        }
        if let Some((_, url)) = get("BACKEND_URL") {
            self.pipeline.endpoints = EndpointSet::uniform(url.trim());
        }
        if let Some((_, token)) = get("BEARER_TOKEN") {
            for kind in arsentinel_core::backend::BackendKind::ALL {
                self.pipeline.endpoints.get_mut(kind).bearer_token = Some(token.trim().to_string());
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<(), ServiceConfigError> {
        self.listen
            .parse::<SocketAddr>()
            .map_err(|e| ServiceConfigError::Invalid(format!("listen {:?}: {e}", self.listen)))?;
        if self.max_concurrent_requests == 0 {
            return Err(ServiceConfigError::Invalid("max_concurrent_requests must be >= 1".into()));
        }
        let backend_max = self.pipeline.endpoints.max_timeout_ms();
        if self.request_timeout_ms < backend_max {
            return Err(ServiceConfigError::Invalid(format!(
                "request_timeout_ms {} is below the largest backend timeout {backend_max}",
                self.request_timeout_ms
            )));
        }
        if self.max_body_bytes == 0 {
            return Err(ServiceConfigError::Invalid("max_body_bytes must be > 0".into()));
        }
        self.pipeline.validate()?;
        Ok(())
    }

    /// Copy safe to show to clients: bearer tokens removed.
    pub fn redacted(&self) -> Self {
        Self {
            pipeline: self.pipeline.redacted(),
            ..self.clone()
        }
    }
}
