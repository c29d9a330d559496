//! Shared data model: trajectories, predictions, per-step error matrices,
//! time-step weights and calibrated regions.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// One realisation of the time series.
///
/// `observed` holds the history from `t = -t_obs` up to `t = 0` (so index 0 is
/// the oldest sample and the last entry is the current state). `future` holds
/// the ground truth for `t = 1..=T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub id: usize,
    pub observed: Vec<Vec<f64>>,
    pub future: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn new(id: usize, observed: Vec<Vec<f64>>, future: Vec<Vec<f64>>) -> Result<Self> {
        let traj = Trajectory {
            id,
            observed,
            future,
        };
        traj.validate()?;
        Ok(traj)
    }

    pub fn validate(&self) -> Result<()> {
        if self.observed.is_empty() {
            return Err(Error::invalid(format!(
                "trajectory {}: observed history must contain at least t = 0",
                self.id
            )));
        }
        if self.future.is_empty() {
            return Err(Error::invalid(format!(
                "trajectory {}: horizon must be at least 1",
                self.id
            )));
        }
        let dims = self.observed[0].len();
        if dims == 0 {
            return Err(Error::invalid(format!(
                "trajectory {}: dimension must be at least 1",
                self.id
            )));
        }
        for v in self.observed.iter().chain(&self.future) {
            if v.len() != dims {
                return Err(Error::invalid(format!(
                    "trajectory {}: mixed dimensions {} and {}",
                    self.id,
                    dims,
                    v.len()
                )));
            }
            if v.iter().any(|x| !x.is_finite()) {
                return Err(Error::invalid(format!(
                    "trajectory {}: non-finite entry",
                    self.id
                )));
            }
        }
        Ok(())
    }

    pub fn dims(&self) -> usize {
        self.observed[0].len()
    }

    pub fn t_obs(&self) -> usize {
        self.observed.len() - 1
    }

    pub fn horizon(&self) -> usize {
        self.future.len()
    }

    /// The state at `t = 0`.
    pub fn current(&self) -> &[f64] {
        self.observed.last().expect("validated non-empty")
    }
}

/// Forecast for `t = 1..=T` of the trajectory with the same id.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionBatch {
    pub trajectory_id: usize,
    pub predicted: Vec<Vec<f64>>,
}

/// Which dataset a matrix of errors was computed from.
///
/// The weights must be fitted on `Cal1` and the conformal constant calibrated
/// on `Cal2`; mixing them breaks exchangeability.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Cal1,
    Cal2,
    Validation,
    Unspecified,
}

/// Row-major `n × T` matrix of prediction errors `‖Y_t − Ŷ_t‖`.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorMatrix<S> {
    data: Vec<S>,
    n: usize,
    horizon: usize,
    provenance: Provenance,
}

impl<S: Scalar> ErrorMatrix<S> {
    pub fn from_rows(rows: Vec<Vec<S>>) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return Err(Error::invalid("error matrix needs at least one row"));
        }
        let horizon = rows[0].len();
        if horizon == 0 {
            return Err(Error::invalid("error matrix needs at least one column"));
        }
        let mut data = Vec::with_capacity(n * horizon);
        for (i, row) in rows.into_iter().enumerate() {
            if row.len() != horizon {
                return Err(Error::invalid(format!(
                    "row {i} has {} columns, expected {horizon}",
                    row.len()
                )));
            }
            for x in row {
                if !x.is_finite() || x < S::zero() {
                    return Err(Error::invalid(format!(
                        "row {i}: errors must be finite and nonnegative, got {x}"
                    )));
                }
                data.push(x);
            }
        }
        Ok(ErrorMatrix {
            data,
            n,
            horizon,
            provenance: Provenance::Unspecified,
        })
    }

    #[must_use]
    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = provenance;
        self
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    #[inline]
    pub fn get(&self, i: usize, t: usize) -> S {
        self.data[i * self.horizon + t]
    }

    pub fn row(&self, i: usize) -> &[S] {
        &self.data[i * self.horizon..(i + 1) * self.horizon]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[S]> {
        self.data.chunks_exact(self.horizon)
    }

    pub fn column(&self, t: usize) -> Vec<S> {
        self.rows().map(|r| r[t]).collect()
    }

    pub fn max_entry(&self) -> S {
        self.data.iter().copied().fold(S::zero(), S::max)
    }

    /// Same data multiplied by `s`. Provenance is kept.
    pub fn scaled(&self, s: S) -> Self {
        ErrorMatrix {
            data: self.data.iter().map(|&x| x * s).collect(),
            ..self.clone()
        }
    }
}

/// Time-step weights `α_1..α_T` on the probability simplex.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct AlphaWeights<S>(Vec<S>);

impl<S: Scalar> AlphaWeights<S> {
    /// Accepts weights that already lie on the simplex (sum within `1e-9`).
    pub fn new(alphas: Vec<S>) -> Result<Self> {
        if alphas.is_empty() {
            return Err(Error::invalid("alpha vector must be non-empty"));
        }
        if alphas.iter().any(|a| !a.is_finite() || *a < S::zero()) {
            return Err(Error::invalid("alphas must be finite and nonnegative"));
        }
        let sum: S = alphas.iter().copied().sum();
        if (sum - S::one()).abs() > S::opt_tol() {
            return Err(Error::invalid(format!("alphas sum to {sum}, expected 1")));
        }
        Ok(AlphaWeights(alphas))
    }

    /// Projects solver output back onto the simplex: tiny negative round-off
    /// is clipped to zero and the vector is divided by its sum.
    pub fn from_unnormalized(raw: &[S]) -> Result<Self> {
        let clipped: Vec<S> = raw.iter().map(|&a| a.max(S::zero())).collect();
        let sum: S = clipped.iter().copied().sum();
        if !(sum > S::zero()) || !sum.is_finite() {
            return Err(Error::invalid("alpha vector has no positive mass"));
        }
        Ok(AlphaWeights(clipped.into_iter().map(|a| a / sum).collect()))
    }

    pub fn uniform(horizon: usize) -> Self {
        AlphaWeights(vec![S::one() / S::from_count(horizon); horizon])
    }

    pub fn as_slice(&self) -> &[S] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// The max-type score `max_t α_t · errors[t]`.
    pub fn score(&self, errors: &[S]) -> S {
        self.0
            .iter()
            .zip(errors)
            .map(|(&a, &e)| a * e)
            .fold(S::zero(), S::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SolverKind {
    Milcp,
    Lcp,
    Grid,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BigMPolicy {
    MaxError,
    Scaled(f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConformalConfig {
    pub delta: f64,
    pub n1: usize,
    pub horizon: usize,
    pub solver: SolverKind,
    pub big_m_policy: BigMPolicy,
    pub seed: u64,
    pub tolerance: f64,
    pub node_limit: usize,
}

impl ConformalConfig {
    pub fn new(delta: f64, n1: usize, horizon: usize) -> Self {
        ConformalConfig {
            delta,
            n1,
            horizon,
            solver: SolverKind::Lcp,
            big_m_policy: BigMPolicy::MaxError,
            seed: 0,
            tolerance: 1e-9,
            node_limit: crate::bb::DEFAULT_NODE_LIMIT,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return Err(Error::invalid(format!(
                "delta must lie in (0, 1), got {}",
                self.delta
            )));
        }
        if self.n1 == 0 {
            return Err(Error::invalid("n1 must be at least 1"));
        }
        if self.horizon == 0 {
            return Err(Error::invalid("horizon must be at least 1"));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::invalid("tolerance must be positive"));
        }
        if let BigMPolicy::Scaled(f) = self.big_m_policy {
            if !(f >= 1.0) || !f.is_finite() {
                return Err(Error::invalid(format!(
                    "big-M scale factor must be >= 1, got {f}"
                )));
            }
        }
        Ok(())
    }
}

/// Calibrated prediction regions: a ball of radius `C / α_t` around each
/// predicted point.
#[derive(Debug, Clone, PartialEq)]
pub struct RegionSet<S> {
    pub c: S,
    pub alphas: AlphaWeights<S>,
    pub radii: Vec<S>,
    pub delta: f64,
    pub n2: usize,
}

impl<S: Scalar> RegionSet<S> {
    /// True when calibration data was too small and the regions cover
    /// everything.
    pub fn is_unbounded(&self) -> bool {
        self.c.is_infinite()
    }

    pub fn horizon(&self) -> usize {
        self.radii.len()
    }
}

fn euclidean<S: Scalar>(a: &[f64], b: &[f64]) -> S {
    let sq: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
    S::lit(sq.sqrt())
}

/// Per-step Euclidean prediction errors, one row per trajectory in input
/// order. Predictions are matched to trajectories by id.
pub fn compute_errors<S: Scalar>(
    trajectories: &[Trajectory],
    predictions: &[PredictionBatch],
) -> Result<ErrorMatrix<S>> {
    if trajectories.is_empty() {
        return Err(Error::Alignment("no trajectories".into()));
    }
    let by_id: std::collections::HashMap<usize, &PredictionBatch> =
        predictions.iter().map(|p| (p.trajectory_id, p)).collect();
    if by_id.len() != predictions.len() {
        return Err(Error::Alignment("duplicate prediction ids".into()));
    }
    let horizon = trajectories[0].horizon();
    let dims = trajectories[0].dims();
    let mut rows = Vec::with_capacity(trajectories.len());
    for traj in trajectories {
        let pred = by_id.get(&traj.id).ok_or_else(|| {
            Error::Alignment(format!("no prediction for trajectory {}", traj.id))
        })?;
        if traj.horizon() != horizon || traj.dims() != dims {
            return Err(Error::Alignment(format!(
                "trajectory {} has shape {}x{}, expected {}x{}",
                traj.id,
                traj.horizon(),
                traj.dims(),
                horizon,
                dims
            )));
        }
        if pred.predicted.len() != horizon || pred.predicted.iter().any(|p| p.len() != dims) {
            return Err(Error::Alignment(format!(
                "prediction for trajectory {} does not match horizon {horizon} / dimension {dims}",
                traj.id
            )));
        }
        rows.push(
            traj.future
                .iter()
                .zip(&pred.predicted)
                .map(|(y, yhat)| euclidean::<S>(y, yhat))
                .collect(),
        );
    }
    if trajectories.len() != predictions.len() {
        return Err(Error::Alignment(format!(
            "{} trajectories but {} predictions",
            trajectories.len(),
            predictions.len()
        )));
    }
    ErrorMatrix::from_rows(rows)
}
