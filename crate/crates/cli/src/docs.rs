//! JSON documents passed between subcommands.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tscp::datagen::PredictorSpec;
use tscp::eval::StudySpec;
use tscp::json::float;
use tscp::SolverKind;

use crate::CliError;

/// How a dataset was cut into the two calibration parts and validation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitDoc {
    pub n_total: usize,
    pub n_cal: usize,
    pub n_cal1: usize,
    pub seed: u64,
    pub predictor: PredictorSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphasDoc {
    pub schema_version: String,
    pub alphas: Vec<f64>,
    pub objective: f64,
    pub solver_objective: f64,
    pub solver: SolverKind,
    pub big_m: f64,
    pub nodes_explored: usize,
    pub delta: f64,
    pub seed: u64,
    pub split: SplitDoc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnionDoc {
    pub per_step_delta: f64,
    #[serde(with = "float::vec")]
    pub per_step_c: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegionsDoc {
    pub schema_version: String,
    pub delta: f64,
    pub n2: usize,
    #[serde(with = "float")]
    pub c: f64,
    pub alphas: Vec<f64>,
    #[serde(with = "float::vec")]
    pub radii: Vec<f64>,
    pub union: UnionDoc,
    pub split: SplitDoc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationDoc {
    pub schema_version: String,
    pub delta: f64,
    pub n_validation: usize,
    pub covered_ours: usize,
    pub covered_union: usize,
    pub coverage_ours: f64,
    pub coverage_union: f64,
}

/// Everything `trials` needs; written next to its outputs so a study can be
/// re-run with `--config`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub schema_version: String,
    pub study: StudySpec,
    pub trials: usize,
    pub master_seed: u64,
}

pub fn read_doc<T: DeserializeOwned>(path: &Path) -> Result<T, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let version = value
        .get("schema_version")
        .and_then(|v| v.as_str())
        .ok_or_else(|| CliError::Usage(format!("{}: missing schema_version", path.display())))?;
    tscp::check_schema_version(version).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    serde_json::from_value(value).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))
}

pub fn write_doc<T: Serialize>(path: &Path, doc: &T) -> Result<(), CliError> {
    let text = tscp::json::to_sorted_json(doc)?;
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}
