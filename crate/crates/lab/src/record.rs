//! Persisted results of an experiment run.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::config::{ExperimentConfig, ExperimentKind};
use crate::error::{io_err, LabError, LabResult};

/// Aggregate over the replicas of one grid value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub value: f64,
    pub replicas: u64,
    pub mean_cost: f64,
    pub se_cost: f64,
    pub sd_cost: f64,
    pub mean_mass: f64,
    pub se_mass: f64,
    /// Cost divided by the grid point's normalization.
    pub normalized: f64,
    pub normalized_se: f64,
    /// Standard deviation of the normalized per-replica costs, with its
    /// standard error `sd / sqrt(2(n-1))`.
    pub normalized_sd: f64,
    pub normalized_sd_se: f64,
    /// Experiment-specific quantities, keyed by name.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    pub exponent: f64,
    pub exponent_se: f64,
    pub intercept: f64,
    pub ci95: (f64, f64),
    pub expected: f64,
    pub tolerance: f64,
    pub within_tolerance: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ExtrapolationTag {
    LastGridPoint,
    Richardson,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstantEstimate {
    pub value: f64,
    pub se: f64,
    pub ci95: (f64, f64),
    pub grid: Vec<f64>,
    pub method: ExtrapolationTag,
    pub replicas: u64,
}

impl ConstantEstimate {
    pub fn is_positive(&self) -> bool {
        self.value > 0.0
    }
}

/// A named pass/fail flag with the numbers behind it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub threshold: f64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub started_unix: u64,
    pub finished_unix: u64,
    pub total_wall_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub experiment: ExperimentKind,
    pub code_version: String,
    pub config: ExperimentConfig,
    /// What the grid values are: `u`, `n`, `T`, cube side, ...
    pub grid_label: String,
    pub grid: Vec<GridPoint>,
    pub fit: Option<FitResult>,
    pub constant: Option<ConstantEstimate>,
    pub checks: Vec<Check>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub summary: BTreeMap<String, f64>,
    pub timing: Timing,
}

impl RunRecord {
    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub fn all_checks_pass(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn save(&self, path: &Path) -> LabResult<()> {
        let text = serde_json::to_string_pretty(self)?;
        write_atomic(path, text.as_bytes())
    }

    pub fn load(path: &Path) -> LabResult<Self> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// The record with timing zeroed, for reproducibility comparisons.
    pub fn numeric_payload(&self) -> RunRecord {
        let mut r = self.clone();
        r.timing = Timing {
            started_unix: 0,
            finished_unix: 0,
            total_wall_ms: 0.0,
        };
        r
    }

    pub fn validate(&self) -> LabResult<()> {
        for g in &self.grid {
            if !(g.se_cost.is_finite() && g.normalized_se.is_finite()) {
                return Err(LabError::Config(format!("non-finite standard error at grid value {}", g.value)));
            }
        }
        Ok(())
    }
}

/// Write to a temporary sibling and rename, so readers never see a partial
/// file.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> LabResult<()> {
    let tmp = path.with_extension("tmp");
    std::fs::write(&tmp, bytes).map_err(io_err(&tmp))?;
    std::fs::rename(&tmp, path).map_err(io_err(path))
}
