//! Conformal prediction regions for multi-step forecasts with per-step
//! weights fitted by a complementarity program.
//!
//! The library is generic over the float type through [`scalar::Scalar`]; the
//! aliases at the crate root fix it to `f64`, which is what the command-line
//! tool uses.

pub mod alpha;
pub mod bb;
pub mod conformal;
pub mod datagen;
pub mod error;
pub mod eval;
pub mod json;
pub mod lp;
pub mod quantile;
pub mod scalar;
pub mod types;

pub use error::{Error, Result};
pub use scalar::Scalar;
pub use types::{
    compute_errors, BigMPolicy, ConformalConfig, PredictionBatch, Provenance, SolverKind, Trajectory,
};

/// Version written into every JSON document this crate produces.
pub const SCHEMA_VERSION: &str = "1.0";

/// Accepts any version with the same major number as [`SCHEMA_VERSION`].
pub fn check_schema_version(found: &str) -> Result<()> {
    let major = |v: &str| v.split('.').next().and_then(|m| m.parse::<u64>().ok());
    match (major(found), major(SCHEMA_VERSION)) {
        (Some(a), Some(b)) if a == b => Ok(()),
        _ => Err(Error::InvalidInput(format!(
            "unsupported schema_version `{found}` (this build reads {SCHEMA_VERSION})"
        ))),
    }
}

pub type ErrorMatrix = types::ErrorMatrix<f64>;
pub type AlphaWeights = types::AlphaWeights<f64>;
pub type RegionSet = types::RegionSet<f64>;
pub type AlphaFitResult = alpha::AlphaFitResult<f64>;
pub type CalibratedScore = conformal::CalibratedScore<f64>;
pub type UnionBoundRegions = conformal::UnionBoundRegions<f64>;
pub type LinearProgram = lp::LinearProgram<f64>;
pub type MixedProgram = bb::MixedProgram<f64>;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schema_major_must_match() {
        assert!(check_schema_version("1.0").is_ok());
        assert!(check_schema_version("1.7").is_ok());
        assert!(check_schema_version("2.0").is_err());
        assert!(check_schema_version("garbage").is_err());
    }
}
