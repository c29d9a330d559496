//! Split conformal calibration of the weighted max score, the resulting
//! per-step balls, and the per-step union-bound baseline.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quantile::conformal_quantile;
use crate::scalar::Scalar;
use crate::types::{AlphaWeights, ErrorMatrix, PredictionBatch, Provenance, RegionSet, Trajectory};

/// The weighted max score over the second calibration split and its
/// conformal quantile `c`.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibratedScore<S> {
    pub alphas: AlphaWeights<S>,
    pub scores: Vec<S>,
    pub c: S,
    pub delta: f64,
}

impl<S: Scalar> CalibratedScore<S> {
    /// True when the second split is too small for the requested level.
    pub fn is_unbounded(&self) -> bool {
        self.c.is_infinite()
    }
}

fn reject_cal1<S: Scalar>(errors: &ErrorMatrix<S>, what: &str) -> Result<()> {
    if errors.provenance() == Provenance::Cal1 {
        return Err(Error::Provenance(format!(
            "{what} must not reuse the split the weights were fitted on"
        )));
    }
    Ok(())
}

pub fn calibrate<S: Scalar>(
    alphas: &AlphaWeights<S>,
    errors2: &ErrorMatrix<S>,
    delta: f64,
) -> Result<CalibratedScore<S>> {
    reject_cal1(errors2, "calibration data")?;
    if errors2.n() > 0 && errors2.horizon() != alphas.len() {
        return Err(Error::Alignment(format!(
            "calibration errors have horizon {}, weights have {}",
            errors2.horizon(),
            alphas.len()
        )));
    }
    let scores: Vec<S> = errors2.rows().map(|row| alphas.score(row)).collect();
    let c = conformal_quantile(&scores, delta)?.value;
    Ok(CalibratedScore {
        alphas: alphas.clone(),
        scores,
        c,
        delta,
    })
}

/// Largest `r` with `alpha · r ≤ c` in exact arithmetic, so that comparing an
/// error against `r` and comparing the weighted error against `c` always give
/// the same answer.
pub fn exact_radius<S: Scalar>(c: S, alpha: S) -> S {
    if c.is_infinite() {
        return S::infinity();
    }
    if c == S::zero() {
        return S::zero();
    }
    let mut r = c / alpha;
    while r > S::zero() && alpha.mul_add(r, -c) > S::zero() {
        r = r.next_down();
    }
    while alpha.mul_add(r.next_up(), -c) <= S::zero() {
        r = r.next_up();
    }
    r
}

/// `alpha · e ≤ c` without rounding the product.
#[inline]
fn weighted_within<S: Scalar>(alpha: S, e: S, c: S) -> bool {
    if c.is_infinite() {
        true
    } else if c == S::zero() {
        e <= S::zero()
    } else {
        alpha.mul_add(e, -c) <= S::zero()
    }
}

pub fn regions<S: Scalar>(cal: &CalibratedScore<S>) -> Result<RegionSet<S>> {
    if let Some(t) = cal.alphas.as_slice().iter().position(|&a| a <= S::zero()) {
        return Err(Error::Degenerate(format!(
            "weight at step {} is zero; its region would be unbounded",
            t + 1
        )));
    }
    let radii = cal
        .alphas
        .as_slice()
        .iter()
        .map(|&a| exact_radius(cal.c, a))
        .collect();
    Ok(RegionSet {
        c: cal.c,
        alphas: cal.alphas.clone(),
        radii,
        delta: cal.delta,
        n2: cal.scores.len(),
    })
}

/// Containment of one error row, by radius and by score.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Containment {
    pub by_radius: bool,
    pub by_score: bool,
}

pub fn containment<S: Scalar>(regions: &RegionSet<S>, errors: &[S]) -> Containment {
    let by_radius = errors.iter().zip(&regions.radii).all(|(&e, &r)| e <= r);
    let by_score = errors
        .iter()
        .zip(regions.alphas.as_slice())
        .all(|(&e, &a)| weighted_within(a, e, regions.c));
    Containment {
        by_radius,
        by_score,
    }
}

/// True when every step error lies within its closed ball.
pub fn contains_errors<S: Scalar>(regions: &RegionSet<S>, errors: &[S]) -> bool {
    let c = containment(regions, errors);
    assert_eq!(
        c.by_radius, c.by_score,
        "radius and score containment disagree for errors {errors:?}"
    );
    c.by_radius
}

fn step_errors<S: Scalar>(
    trajectory: &Trajectory,
    prediction: &PredictionBatch,
    horizon: usize,
) -> Result<Vec<S>> {
    if prediction.trajectory_id != trajectory.id {
        return Err(Error::Alignment(format!(
            "prediction for trajectory {} paired with trajectory {}",
            prediction.trajectory_id, trajectory.id
        )));
    }
    if trajectory.horizon() != horizon || prediction.predicted.len() != horizon {
        return Err(Error::Alignment(format!(
            "trajectory {} does not match the region horizon {horizon}",
            trajectory.id
        )));
    }
    trajectory
        .future
        .iter()
        .zip(&prediction.predicted)
        .map(|(y, yhat)| {
            if y.len() != yhat.len() {
                return Err(Error::Alignment(format!(
                    "dimension mismatch in trajectory {}",
                    trajectory.id
                )));
            }
            let sq: f64 = y.iter().zip(yhat).map(|(a, b)| (a - b) * (a - b)).sum();
            Ok(S::lit(sq.sqrt()))
        })
        .collect()
}

pub fn contains<S: Scalar>(
    regions: &RegionSet<S>,
    trajectory: &Trajectory,
    prediction: &PredictionBatch,
) -> Result<bool> {
    let errors = step_errors(trajectory, prediction, regions.horizon())?;
    Ok(contains_errors(regions, &errors))
}

/// Per-step conformal radii at level `1 − δ/T`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UnionBoundRegions<S> {
    pub per_step_c: Vec<S>,
    pub delta: f64,
    pub per_step_delta: f64,
    pub n2: usize,
}

impl<S: Scalar> UnionBoundRegions<S> {
    pub fn horizon(&self) -> usize {
        self.per_step_c.len()
    }

    pub fn any_unbounded(&self) -> bool {
        self.per_step_c.iter().any(|c| c.is_infinite())
    }

    pub fn contains_errors(&self, errors: &[S]) -> bool {
        errors.iter().zip(&self.per_step_c).all(|(&e, &c)| e <= c)
    }

    pub fn contains(&self, trajectory: &Trajectory, prediction: &PredictionBatch) -> Result<bool> {
        let errors = step_errors(trajectory, prediction, self.horizon())?;
        Ok(self.contains_errors(&errors))
    }
}

pub fn union_bound_calibrate<S: Scalar>(errors2: &ErrorMatrix<S>, delta: f64) -> Result<UnionBoundRegions<S>> {
    reject_cal1(errors2, "calibration data")?;
    let horizon = errors2.horizon();
    if horizon == 0 {
        return Err(Error::invalid("calibration errors have no time steps"));
    }
    let per_step_delta = delta / horizon as f64;
    let per_step_c = (0..horizon)
        .map(|t| conformal_quantile(&errors2.column(t), per_step_delta).map(|q| q.value))
        .collect::<Result<_>>()?;
    Ok(UnionBoundRegions {
        per_step_c,
        delta,
        per_step_delta,
        n2: errors2.n(),
    })
}
