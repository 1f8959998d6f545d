use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid protocol configuration: {0}")]
pub struct ConfigError(pub String);

/// Sizes, caps and timings of the study protocol.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProtocolConfig {
    pub pretest_size: usize,
    pub posttest_size: usize,
    pub max_corrections: u32,
    /// Per-item teaching time.
    pub lbt_seconds: u32,
    pub posttest2_offset_hours: i64,
    pub posttest3_offset_hours: i64,
    /// Half-width of the window around each retention test's due time.
    pub retention_tolerance_hours: i64,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            pretest_size: 30,
            posttest_size: 10,
            max_corrections: 5,
            lbt_seconds: 180,
            posttest2_offset_hours: 72,
            posttest3_offset_hours: 168,
            retention_tolerance_hours: 12,
        }
    }
}

impl ProtocolConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.posttest_size == 0 {
            return Err(ConfigError("posttest_size must be at least 1".into()));
        }
        if self.pretest_size != 3 * self.posttest_size {
            return Err(ConfigError(format!(
                "pretest_size ({}) must be three times posttest_size ({})",
                self.pretest_size, self.posttest_size
            )));
        }
        if self.max_corrections == 0 {
            return Err(ConfigError("max_corrections must be at least 1".into()));
        }
        if self.lbt_seconds == 0 {
            return Err(ConfigError("lbt_seconds must be at least 1".into()));
        }
        if self.retention_tolerance_hours < 0 {
            return Err(ConfigError("retention_tolerance_hours must not be negative".into()));
        }
        if self.posttest2_offset_hours + self.retention_tolerance_hours
            >= self.posttest3_offset_hours - self.retention_tolerance_hours
        {
            return Err(ConfigError("retention windows overlap".into()));
        }
        Ok(())
    }
}
