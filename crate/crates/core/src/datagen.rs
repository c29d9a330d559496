//! Synthetic random-walk trajectories, simple predictors, calibration splits
//! and the CSV exchange format.

use std::io::{Read, Write};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::types::{compute_errors, ErrorMatrix, PredictionBatch, Provenance, Trajectory};

/// Identifier of the generator written to metadata files.
pub const RNG_ALGORITHM: &str = "ChaCha8 (rand_chacha 0.9), seeded via seed_from_u64";

/// How per-trajectory seeds are derived from the master seed.
pub const SUB_SEED_RULE: &str = "splitmix64: seed_i = mix(master + (i + 1) * 0x9E3779B97F4A7C15)";

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

/// The `(index + 1)`-th output of a SplitMix64 stream started at `master`.
pub fn sub_seed(master: u64, index: u64) -> u64 {
    let mut z = master.wrapping_add(index.wrapping_add(1).wrapping_mul(GOLDEN_GAMMA));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Increment distribution of the walk.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Noise {
    GaussWalk,
    /// Student-t increments rescaled to the Gaussian variance; needs `nu > 2`.
    StudentTWalk { nu: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GeneratorSpec {
    #[serde(flatten)]
    pub noise: Noise,
    pub sigma: f64,
    pub dims: usize,
    pub t_obs: usize,
    pub horizon: usize,
    pub seed: u64,
}

impl GeneratorSpec {
    pub fn gauss(sigma: f64, dims: usize, t_obs: usize, horizon: usize, seed: u64) -> Self {
        GeneratorSpec {
            noise: Noise::GaussWalk,
            sigma,
            dims,
            t_obs,
            horizon,
            seed,
        }
    }

    pub fn student_t(nu: f64, sigma: f64, dims: usize, t_obs: usize, horizon: usize, seed: u64) -> Self {
        GeneratorSpec {
            noise: Noise::StudentTWalk { nu },
            ..Self::gauss(sigma, dims, t_obs, horizon, seed)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(Error::invalid("horizon must be at least 1"));
        }
        if self.dims == 0 {
            return Err(Error::invalid("dims must be at least 1"));
        }
        if !(self.sigma >= 0.0) || !self.sigma.is_finite() {
            return Err(Error::invalid(format!(
                "sigma must be finite and nonnegative, got {}",
                self.sigma
            )));
        }
        if let Noise::StudentTWalk { nu } = self.noise {
            if !(nu > 2.0) || !nu.is_finite() {
                return Err(Error::invalid(format!(
                    "Student-t degrees of freedom must exceed 2, got {nu}"
                )));
            }
        }
        Ok(())
    }

    fn trajectory(&self, id: usize) -> Trajectory {
        let mut rng = ChaCha8Rng::seed_from_u64(sub_seed(self.seed, id as u64));
        let mut step: Box<dyn FnMut(&mut ChaCha8Rng) -> f64> = match self.noise {
            Noise::GaussWalk => {
                let sigma = self.sigma;
                Box::new(move |rng| sigma * rng.sample::<f64, _>(StandardNormal))
            }
            Noise::StudentTWalk { nu } => {
                let dist = StudentT::new(nu).expect("validated nu");
                let scale = self.sigma * ((nu - 2.0) / nu).sqrt();
                Box::new(move |rng| scale * dist.sample(rng))
            }
        };
        let mut y = vec![0.0; self.dims];
        let mut observed = Vec::with_capacity(self.t_obs + 1);
        observed.push(y.clone());
        for _ in 0..self.t_obs {
            y.iter_mut().for_each(|v| *v += step(&mut rng));
            observed.push(y.clone());
        }
        let future = (0..self.horizon)
            .map(|_| {
                y.iter_mut().for_each(|v| *v += step(&mut rng));
                y.clone()
            })
            .collect();
        Trajectory {
            id,
            observed,
            future,
        }
    }
}

/// `count` independent trajectories with ids `0..count`. Each one draws from
/// its own stream, so the result does not depend on thread scheduling.
pub fn generate(spec: &GeneratorSpec, count: usize) -> Result<Vec<Trajectory>> {
    spec.validate()?;
    if count == 0 {
        return Err(Error::invalid("count must be at least 1"));
    }
    Ok((0..count)
        .into_par_iter()
        .map(|id| spec.trajectory(id))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorSpec {
    /// `Ŷ_t = Y_0`.
    ZeroOrderHold,
    /// `Ŷ_t = Y_0 + t (Y_0 − Y_{−1})`.
    LinearExtrapolation,
}

pub fn predict(spec: PredictorSpec, trajectory: &Trajectory) -> Result<PredictionBatch> {
    trajectory.validate()?;
    let y0 = trajectory.current();
    let velocity: Vec<f64> = match spec {
        PredictorSpec::ZeroOrderHold => vec![0.0; y0.len()],
        PredictorSpec::LinearExtrapolation => {
            let n = trajectory.observed.len();
            if n < 2 {
                return Err(Error::invalid(format!(
                    "trajectory {}: linear extrapolation needs at least one past sample",
                    trajectory.id
                )));
            }
            y0.iter().zip(&trajectory.observed[n - 2]).map(|(a, b)| a - b).collect()
        }
    };
    let predicted = (1..=trajectory.horizon())
        .map(|t| {
            let t = t as f64;
            y0.iter().zip(&velocity).map(|(y, v)| y + t * v).collect()
        })
        .collect();
    Ok(PredictionBatch {
        trajectory_id: trajectory.id,
        predicted,
    })
}

pub fn predict_all(spec: PredictorSpec, trajectories: &[Trajectory]) -> Result<Vec<PredictionBatch>> {
    trajectories.iter().map(|t| predict(spec, t)).collect()
}

/// Disjoint calibration and validation subsets, each kept in input order.
#[derive(Debug, Clone, PartialEq)]
pub struct Split {
    pub cal1: Vec<Trajectory>,
    pub cal2: Vec<Trajectory>,
    pub validation: Vec<Trajectory>,
}

impl Split {
    pub fn part(&self, which: Provenance) -> Result<&[Trajectory]> {
        match which {
            Provenance::Cal1 => Ok(&self.cal1),
            Provenance::Cal2 => Ok(&self.cal2),
            Provenance::Validation => Ok(&self.validation),
            Provenance::Unspecified => Err(Error::Provenance(
                "a split has no unspecified part".into(),
            )),
        }
    }

    /// Error matrix of one part, tagged with where it came from.
    pub fn errors<S: Scalar>(
        &self,
        which: Provenance,
        predictions: &[PredictionBatch],
    ) -> Result<ErrorMatrix<S>> {
        let part = self.part(which)?;
        let wanted: std::collections::HashSet<usize> = part.iter().map(|t| t.id).collect();
        let preds: Vec<PredictionBatch> = predictions
            .iter()
            .filter(|p| wanted.contains(&p.trajectory_id))
            .cloned()
            .collect();
        Ok(compute_errors::<S>(part, &preds)?.with_provenance(which))
    }
}

/// Draws `n_cal` calibration trajectories uniformly without replacement, the
/// first `n_cal1` of which fit the weights; the rest of the input validates.
pub fn split(trajectories: &[Trajectory], n_cal: usize, n_cal1: usize, seed: u64) -> Result<Split> {
    if n_cal1 == 0 {
        return Err(Error::invalid("n_cal1 must be at least 1"));
    }
    if n_cal1 >= n_cal {
        return Err(Error::invalid(format!(
            "n_cal1 ({n_cal1}) must be smaller than n_cal ({n_cal})"
        )));
    }
    if n_cal > trajectories.len() {
        return Err(Error::invalid(format!(
            "requested {n_cal} calibration trajectories from only {}",
            trajectories.len()
        )));
    }
    let mut order: Vec<usize> = (0..trajectories.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let take = |idx: &[usize]| {
        let mut idx = idx.to_vec();
        idx.sort_unstable();
        idx.into_iter().map(|i| trajectories[i].clone()).collect()
    };
    Ok(Split {
        cal1: take(&order[..n_cal1]),
        cal2: take(&order[n_cal1..n_cal]),
        validation: take(&order[n_cal..]),
    })
}

/// Side file written next to a generated CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorMetadata {
    pub schema_version: String,
    pub generator: GeneratorSpec,
    pub predictor: PredictorSpec,
    pub count: usize,
    pub rng: String,
    pub sub_seed_rule: String,
}

impl GeneratorMetadata {
    pub fn new(generator: GeneratorSpec, predictor: PredictorSpec, count: usize) -> Self {
        GeneratorMetadata {
            schema_version: crate::SCHEMA_VERSION.to_string(),
            generator,
            predictor,
            count,
            rng: RNG_ALGORITHM.to_string(),
            sub_seed_rule: SUB_SEED_RULE.to_string(),
        }
    }
}

fn csv_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Parse {
            line,
            message: format!("{other:?}"),
        },
    }
}

/// Writes one row per `(trajectory, t)` for `t = −T_obs..=T`. Predictions are
/// matched by id and may be omitted, leaving the `yhat` fields empty.
pub fn write_csv<W: Write>(
    writer: W,
    trajectories: &[Trajectory],
    predictions: &[PredictionBatch],
) -> Result<()> {
    let dims = match trajectories.first() {
        Some(t) => t.dims(),
        None => return Err(Error::invalid("nothing to write")),
    };
    let by_id: std::collections::HashMap<usize, &PredictionBatch> =
        predictions.iter().map(|p| (p.trajectory_id, p)).collect();
    let mut out = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(writer);
    let mut header = vec!["traj_id".to_string(), "t".to_string()];
    header.extend((1..=dims).map(|k| format!("y_{k}")));
    header.extend((1..=dims).map(|k| format!("yhat_{k}")));
    out.write_record(&header).map_err(csv_error)?;

    let mut row: Vec<String> = Vec::with_capacity(2 + 2 * dims);
    for traj in trajectories {
        traj.validate()?;
        if traj.dims() != dims {
            return Err(Error::Alignment(format!(
                "trajectory {} has dimension {}, expected {dims}",
                traj.id,
                traj.dims()
            )));
        }
        let pred = by_id.get(&traj.id).copied();
        if let Some(p) = pred {
            if p.predicted.len() != traj.horizon() || p.predicted.iter().any(|v| v.len() != dims) {
                return Err(Error::Alignment(format!(
                    "prediction for trajectory {} does not match its shape",
                    traj.id
                )));
            }
        }
        let t_obs = traj.t_obs() as i64;
        for (k, y) in traj.observed.iter().chain(&traj.future).enumerate() {
            let t = k as i64 - t_obs;
            row.clear();
            row.push(traj.id.to_string());
            row.push(t.to_string());
            row.extend(y.iter().map(|v| v.to_string()));
            match pred {
                Some(p) if t >= 1 => row.extend(p.predicted[(t - 1) as usize].iter().map(|v| v.to_string())),
                _ => row.extend(std::iter::repeat_n(String::new(), dims)),
            }
            out.write_record(&row).map_err(csv_error)?;
        }
    }
    out.flush()?;
    Ok(())
}

struct Pending {
    id: usize,
    next_t: i64,
    observed: Vec<Vec<f64>>,
    future: Vec<Vec<f64>>,
    predicted: Vec<Option<Vec<f64>>>,
    first_line: usize,
}

impl Pending {
    fn finish(self) -> Result<(Trajectory, Option<PredictionBatch>)> {
        let line = self.first_line;
        let with = self.predicted.iter().filter(|p| p.is_some()).count();
        let traj = Trajectory::new(self.id, self.observed, self.future).map_err(|e| Error::Parse {
            line,
            message: e.to_string(),
        })?;
        let pred = (with != 0).then(|| PredictionBatch {
            trajectory_id: traj.id,
            predicted: self.predicted.into_iter().flatten().collect(),
        });
        Ok((traj, pred))
    }
}

/// Parses the format produced by [`write_csv`]. Rows of one trajectory must be
/// contiguous with `t` increasing by one from `−T_obs` (≤ 0). Trajectories
/// whose `yhat` fields are all empty come back without a prediction.
pub fn read_csv<R: Read>(reader: R) -> Result<(Vec<Trajectory>, Vec<PredictionBatch>)> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let header = rdr.headers().map_err(csv_error)?.clone();
    let cols = header.len();
    let dims = cols.saturating_sub(2) / 2;
    let expected: Vec<String> = ["traj_id".to_string(), "t".to_string()]
        .into_iter()
        .chain((1..=dims).map(|k| format!("y_{k}")))
        .chain((1..=dims).map(|k| format!("yhat_{k}")))
        .collect();
    if dims == 0 || cols != 2 + 2 * dims || header.iter().ne(expected.iter().map(String::as_str)) {
        return Err(Error::Parse {
            line: 1,
            message: format!("expected header `{}`", expected.join(",")),
        });
    }

    let mut trajectories = Vec::new();
    let mut predictions = Vec::new();
    let mut seen = std::collections::HashSet::new();
    let mut current: Option<Pending> = None;
    for record in rdr.records() {
        let record = record.map_err(csv_error)?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let fail = |message: String| Error::Parse { line, message };
        if record.len() != cols {
            return Err(fail(format!("expected {cols} fields, found {}", record.len())));
        }
        let id: usize = record[0]
            .trim()
            .parse()
            .map_err(|_| fail(format!("bad traj_id `{}`", &record[0])))?;
        let t: i64 = record[1]
            .trim()
            .parse()
            .map_err(|_| fail(format!("bad t `{}`", &record[1])))?;
        let number = |s: &str| -> Result<f64> {
            let v: f64 = s.trim().parse().map_err(|_| fail(format!("bad number `{s}`")))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(fail(format!("non-finite value `{s}`")))
            }
        };
        let y = (2..2 + dims).map(|k| number(&record[k])).collect::<Result<Vec<_>>>()?;
        let yhat_fields: Vec<&str> = (2 + dims..cols).map(|k| record[k].trim()).collect();
        let yhat = if yhat_fields.iter().all(|s| s.is_empty()) {
            None
        } else if t <= 0 {
            // predictions only exist for future steps
            None
        } else {
            Some(yhat_fields.iter().map(|s| number(s)).collect::<Result<Vec<_>>>()?)
        };

        if current.as_ref().is_some_and(|p| p.id != id) {
            let done = current.take().expect("checked");
            let (traj, pred) = done.finish()?;
            trajectories.push(traj);
            predictions.extend(pred);
        }
        match current.as_mut() {
            None => {
                if !seen.insert(id) {
                    return Err(fail(format!("rows of trajectory {id} are not contiguous")));
                }
                if t > 0 {
                    return Err(fail(format!("trajectory {id} starts at t = {t}, expected t <= 0")));
                }
                current = Some(Pending {
                    id,
                    next_t: t + 1,
                    observed: vec![y],
                    future: Vec::new(),
                    predicted: Vec::new(),
                    first_line: line,
                });
            }
            Some(p) => {
                if t != p.next_t {
                    return Err(fail(format!("trajectory {id}: expected t = {}, found {t}", p.next_t)));
                }
                p.next_t += 1;
                if let Some(Some(first)) = (t > 0).then(|| p.predicted.first()) {
                    if first.is_some() != yhat.is_some() {
                        return Err(fail(format!("trajectory {id} has predictions for only some steps")));
                    }
                }
                if t <= 0 {
                    p.observed.push(y);
                } else {
                    p.future.push(y);
                    p.predicted.push(yhat);
                }
            }
        }
    }
    if let Some(p) = current {
        let (traj, pred) = p.finish()?;
        trajectories.push(traj);
        predictions.extend(pred);
    }
    if trajectories.is_empty() {
        return Err(Error::Parse {
            line: 1,
            message: "no data rows".into(),
        });
    }
    Ok((trajectories, predictions))
}
