use thiserror::Error;

/// A parameter block failed validation. `path` is the dotted field path
/// inside the run configuration, e.g. `source.ring_radial_sigma`.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{path}: {message}")]
pub struct ConfigError {
    pub path: String,
    pub message: String,
}

impl ConfigError {
    pub fn new(path: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            path: path.into(),
            message: message.into(),
        }
    }

    /// Prefix the path with an enclosing block name.
    pub fn within(mut self, block: &str) -> Self {
        self.path = if self.path.is_empty() {
            block.to_string()
        } else {
            format!("{block}.{}", self.path)
        };
        self
    }
}

pub(crate) fn ensure(cond: bool, path: &str, message: &str) -> Result<(), ConfigError> {
    if cond {
        Ok(())
    } else {
        Err(ConfigError::new(path, message))
    }
}

pub(crate) fn ensure_positive(value: f64, path: &str) -> Result<(), ConfigError> {
    ensure(value.is_finite() && value > 0.0, path, "must be finite and > 0")
}

pub(crate) fn ensure_non_negative(value: f64, path: &str) -> Result<(), ConfigError> {
    ensure(value.is_finite() && value >= 0.0, path, "must be finite and >= 0")
}

pub(crate) fn ensure_probability(value: f64, path: &str) -> Result<(), ConfigError> {
    ensure((0.0..=1.0).contains(&value), path, "must lie in [0, 1]")
}
