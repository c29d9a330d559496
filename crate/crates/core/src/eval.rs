//! Repeated-trial coverage studies comparing the fitted-weight regions with
//! the per-step union-bound baseline.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alpha::fit_alphas;
use crate::conformal::{calibrate, contains_errors, regions, union_bound_calibrate, UnionBoundRegions};
use crate::datagen::{generate, predict_all, split, sub_seed, GeneratorSpec, PredictorSpec};
use crate::error::{Error, Result};
use crate::json::float;
use crate::quantile::conformal_quantile;
use crate::scalar::Scalar;
use crate::types::{
    AlphaWeights, BigMPolicy, ConformalConfig, ErrorMatrix, Provenance, RegionSet, SolverKind,
};

/// Number of equal-width coverage histogram bins on `[0, 1]`.
pub const HISTOGRAM_BINS: usize = 20;

/// Everything one trial needs except its seed. The generator's own seed is
/// replaced by one derived from the trial seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StudySpec {
    pub generator: GeneratorSpec,
    pub predictor: PredictorSpec,
    pub n_total: usize,
    pub n_cal: usize,
    pub n_cal1: usize,
    pub delta: f64,
    pub solver: SolverKind,
    pub big_m_policy: BigMPolicy,
    pub node_limit: usize,
    /// Also fit with the other exact program and record both objectives.
    pub check_milcp: bool,
}

impl StudySpec {
    pub fn new(generator: GeneratorSpec, predictor: PredictorSpec, n_total: usize, n_cal: usize, n_cal1: usize, delta: f64) -> Self {
        StudySpec {
            generator,
            predictor,
            n_total,
            n_cal,
            n_cal1,
            delta,
            solver: SolverKind::Lcp,
            big_m_policy: BigMPolicy::MaxError,
            node_limit: crate::bb::DEFAULT_NODE_LIMIT,
            check_milcp: false,
        }
    }

    pub fn conformal_config(&self, seed: u64) -> ConformalConfig {
        ConformalConfig {
            solver: self.solver,
            big_m_policy: self.big_m_policy,
            seed,
            node_limit: self.node_limit,
            ..ConformalConfig::new(self.delta, self.n_cal1, self.generator.horizon)
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.generator.validate()?;
        self.conformal_config(0).validate()?;
        if !(self.n_cal1 < self.n_cal && self.n_cal < self.n_total) {
            return Err(Error::invalid(format!(
                "sizes must satisfy n_cal1 < n_cal < n_total, got {} / {} / {}",
                self.n_cal1, self.n_cal, self.n_total
            )));
        }
        if self.predictor == PredictorSpec::LinearExtrapolation && self.generator.t_obs == 0 {
            return Err(Error::invalid("linear extrapolation needs t_obs >= 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialReport {
    pub trial_id: usize,
    pub seed: u64,
    /// Fraction of validation trajectories inside the regions at every step.
    pub coverage_ours: f64,
    pub coverage_union: f64,
    #[serde(with = "float::vec")]
    pub region_sizes_ours: Vec<f64>,
    #[serde(with = "float::vec")]
    pub region_sizes_union: Vec<f64>,
    pub alphas: AlphaWeights<f64>,
    pub objective: f64,
    #[serde(with = "float::option")]
    pub objective_milcp: Option<f64>,
    #[serde(with = "float::option")]
    pub objective_lcp: Option<f64>,
    #[serde(with = "float")]
    pub c: f64,
    pub union_infinite: bool,
    pub n_validation: usize,
    pub nodes_explored: usize,
}

impl TrialReport {
    pub fn total_size_ours(&self) -> f64 {
        self.region_sizes_ours.iter().sum()
    }

    pub fn total_size_union(&self) -> f64 {
        self.region_sizes_union.iter().sum()
    }

    /// Ours strictly smaller than the baseline at the last step; an
    /// unbounded baseline counts as a win.
    pub fn final_step_win(&self) -> bool {
        match (self.region_sizes_ours.last(), self.region_sizes_union.last()) {
            (Some(&o), Some(&u)) => u.is_infinite() || o < u,
            _ => false,
        }
    }
}

/// Volume of the unit ball in `dims` dimensions.
pub fn unit_ball_volume(dims: usize) -> f64 {
    // V_0 = 1, V_1 = 2, V_m = V_{m-2} * 2π / m
    let mut v = if dims % 2 == 0 { 1.0 } else { 2.0 };
    let mut m = if dims % 2 == 0 { 2 } else { 3 };
    while m <= dims {
        v *= 2.0 * std::f64::consts::PI / m as f64;
        m += 2;
    }
    v
}

/// Width (`m = 1`), area (`m = 2`) or volume of balls with the given radii.
/// Infinite radii give infinite sizes.
pub fn ball_sizes(radii: &[f64], dims: usize) -> Vec<f64> {
    let k = unit_ball_volume(dims);
    radii
        .iter()
        .map(|&r| if r.is_infinite() { f64::INFINITY } else { k * r.powi(dims as i32) })
        .collect()
}

pub fn region_size<S: Scalar>(regions: &RegionSet<S>, dims: usize) -> Result<Vec<f64>> {
    if dims == 0 {
        return Err(Error::invalid("dimension must be at least 1"));
    }
    let radii: Vec<f64> = regions.radii.iter().map(|r| r.as_f64()).collect();
    Ok(ball_sizes(&radii, dims))
}

pub fn union_region_size<S: Scalar>(regions: &UnionBoundRegions<S>, dims: usize) -> Result<Vec<f64>> {
    if dims == 0 {
        return Err(Error::invalid("dimension must be at least 1"));
    }
    let radii: Vec<f64> = regions.per_step_c.iter().map(|r| r.as_f64()).collect();
    Ok(ball_sizes(&radii, dims))
}

/// Fraction of rows fully inside the regions.
pub fn coverage<S: Scalar>(regions: &RegionSet<S>, errors: &ErrorMatrix<S>) -> f64 {
    let hit = errors.rows().filter(|row| contains_errors(regions, row)).count();
    hit as f64 / errors.n() as f64
}

pub fn union_coverage<S: Scalar>(regions: &UnionBoundRegions<S>, errors: &ErrorMatrix<S>) -> f64 {
    let hit = errors.rows().filter(|row| regions.contains_errors(row)).count();
    hit as f64 / errors.n() as f64
}

/// Per-step `(q_{1−δ}, q_{1−δ/T})` conformal quantiles of the error columns.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailRow {
    pub step: usize,
    #[serde(with = "float")]
    pub q_level: f64,
    #[serde(with = "float")]
    pub q_union_level: f64,
}

impl TailRow {
    pub fn ratio(&self) -> f64 {
        self.q_union_level / self.q_level
    }
}

pub fn quantile_tail_report<S: Scalar>(errors: &ErrorMatrix<S>, delta: f64) -> Result<Vec<TailRow>> {
    let per_step = delta / errors.horizon() as f64;
    (0..errors.horizon())
        .map(|t| {
            let col = errors.column(t);
            Ok(TailRow {
                step: t + 1,
                q_level: conformal_quantile(&col, delta)?.value.as_f64(),
                q_union_level: conformal_quantile(&col, per_step)?.value.as_f64(),
            })
        })
        .collect()
}

/// Generate, predict, split, fit on the first calibration split, calibrate on
/// the second and measure coverage on the validation part.
pub fn run_trial(study: &StudySpec, trial_id: usize, trial_seed: u64) -> Result<TrialReport> {
    trial(study, trial_seed).map_err(|e| Error::Trial {
        trial: trial_id,
        source: Box::new(e),
    }).map(|mut r| {
        r.trial_id = trial_id;
        r
    })
}

fn trial(study: &StudySpec, seed: u64) -> Result<TrialReport> {
    study.validate()?;
    let generator = GeneratorSpec {
        seed: sub_seed(seed, 0),
        ..study.generator
    };
    let trajectories = generate(&generator, study.n_total)?;
    let predictions = predict_all(study.predictor, &trajectories)?;
    let parts = split(&trajectories, study.n_cal, study.n_cal1, sub_seed(seed, 1))?;
    let e1: ErrorMatrix<f64> = parts.errors(Provenance::Cal1, &predictions)?;
    let e2: ErrorMatrix<f64> = parts.errors(Provenance::Cal2, &predictions)?;
    let ev: ErrorMatrix<f64> = parts.errors(Provenance::Validation, &predictions)?;

    let config = study.conformal_config(seed);
    let (alphas, objective, nodes, objective_milcp, objective_lcp) = if e1.max_entry() == 0.0 {
        // Without any error every weighting has cost zero.
        let uniform = AlphaWeights::uniform(e1.horizon());
        let zero = study.check_milcp.then_some(0.0);
        (uniform, 0.0, 0, zero, zero)
    } else {
        let fit = fit_alphas(&e1, &config)?;
        let (mut milcp, mut lcp) = (None, None);
        if study.check_milcp {
            let other = |solver| fit_alphas::<f64>(&e1, &ConformalConfig { solver, ..config.clone() });
            match study.solver {
                SolverKind::Milcp => {
                    milcp = Some(fit.objective);
                    lcp = Some(other(SolverKind::Lcp)?.objective);
                }
                SolverKind::Lcp => {
                    lcp = Some(fit.objective);
                    milcp = Some(other(SolverKind::Milcp)?.objective);
                }
                SolverKind::Grid => {
                    lcp = Some(other(SolverKind::Lcp)?.objective);
                    milcp = Some(other(SolverKind::Milcp)?.objective);
                }
            }
        }
        (fit.alphas, fit.objective, fit.nodes_explored, milcp, lcp)
    };

    let ours = regions(&calibrate(&alphas, &e2, study.delta)?)?;
    let union = union_bound_calibrate(&e2, study.delta)?;
    let dims = generator.dims;
    Ok(TrialReport {
        trial_id: 0,
        seed,
        coverage_ours: coverage(&ours, &ev),
        coverage_union: union_coverage(&union, &ev),
        region_sizes_ours: region_size(&ours, dims)?,
        region_sizes_union: union_region_size(&union, dims)?,
        c: ours.c,
        alphas,
        objective,
        objective_milcp,
        objective_lcp,
        union_infinite: union.any_unbounded(),
        n_validation: ev.n(),
        nodes_explored: nodes,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
}

impl Histogram {
    pub fn of_fractions(values: impl IntoIterator<Item = f64>) -> Self {
        let mut counts = vec![0; HISTOGRAM_BINS];
        for v in values {
            let bin = ((v * HISTOGRAM_BINS as f64).floor().max(0.0) as usize).min(HISTOGRAM_BINS - 1);
            counts[bin] += 1;
        }
        let edges = (0..=HISTOGRAM_BINS).map(|k| k as f64 / HISTOGRAM_BINS as f64).collect();
        Histogram { edges, counts }
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialFailure {
    pub trial_id: usize,
    pub seed: u64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub schema_version: String,
    pub study: StudySpec,
    pub master_seed: u64,
    pub trials_requested: usize,
    pub trials_succeeded: usize,
    pub failures: Vec<TrialFailure>,
    pub mean_coverage_ours: f64,
    pub variance_coverage_ours: f64,
    pub mean_coverage_union: f64,
    pub variance_coverage_union: f64,
    #[serde(with = "float::vec")]
    pub mean_region_sizes_ours: Vec<f64>,
    #[serde(with = "float::vec")]
    pub mean_region_sizes_union: Vec<f64>,
    #[serde(with = "float")]
    pub mean_total_size_ours: f64,
    #[serde(with = "float")]
    pub mean_total_size_union: f64,
    /// `mean_total_size_ours / mean_total_size_union`.
    #[serde(with = "float")]
    pub size_ratio: f64,
    pub final_step_wins: usize,
    pub union_infinite_trials: usize,
    #[serde(with = "float::option")]
    pub mean_abs_objective_gap: Option<f64>,
    #[serde(with = "float::option")]
    pub max_abs_objective_gap: Option<f64>,
    pub coverage_histogram_ours: Histogram,
    pub coverage_histogram_union: Histogram,
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

fn sample_variance(values: &[f64]) -> f64 {
    if values.len() < 2 {
        return 0.0;
    }
    let m = mean(values);
    values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (values.len() - 1) as f64
}

/// Combines successful trials in the order given.
pub fn aggregate(
    study: &StudySpec,
    master_seed: u64,
    trials: &[TrialReport],
    failures: Vec<TrialFailure>,
) -> Result<AggregateReport> {
    if trials.is_empty() {
        return Err(Error::invalid("no successful trials to aggregate"));
    }
    let ours: Vec<f64> = trials.iter().map(|t| t.coverage_ours).collect();
    let union: Vec<f64> = trials.iter().map(|t| t.coverage_union).collect();
    let horizon = trials[0].region_sizes_ours.len();
    let per_step = |pick: fn(&TrialReport) -> &Vec<f64>| -> Vec<f64> {
        (0..horizon)
            .map(|t| mean(&trials.iter().map(|r| pick(r)[t]).collect::<Vec<_>>()))
            .collect()
    };
    let total_ours = mean(&trials.iter().map(TrialReport::total_size_ours).collect::<Vec<_>>());
    let total_union = mean(&trials.iter().map(TrialReport::total_size_union).collect::<Vec<_>>());
    let gaps: Vec<f64> = trials
        .iter()
        .filter_map(|t| Some((t.objective_milcp? - t.objective_lcp?).abs()))
        .collect();
    Ok(AggregateReport {
        schema_version: crate::SCHEMA_VERSION.to_string(),
        study: study.clone(),
        master_seed,
        trials_requested: trials.len() + failures.len(),
        trials_succeeded: trials.len(),
        failures,
        mean_coverage_ours: mean(&ours),
        variance_coverage_ours: sample_variance(&ours),
        mean_coverage_union: mean(&union),
        variance_coverage_union: sample_variance(&union),
        mean_region_sizes_ours: per_step(|r| &r.region_sizes_ours),
        mean_region_sizes_union: per_step(|r| &r.region_sizes_union),
        mean_total_size_ours: total_ours,
        mean_total_size_union: total_union,
        size_ratio: total_ours / total_union,
        final_step_wins: trials.iter().filter(|t| t.final_step_win()).count(),
        union_infinite_trials: trials.iter().filter(|t| t.union_infinite).count(),
        mean_abs_objective_gap: (!gaps.is_empty()).then(|| mean(&gaps)),
        max_abs_objective_gap: gaps.iter().copied().reduce(f64::max),
        coverage_histogram_ours: Histogram::of_fractions(ours.iter().copied()),
        coverage_histogram_union: Histogram::of_fractions(union.iter().copied()),
    })
}

/// Result of [`run_trials`]: the aggregate plus every successful trial in
/// index order.
#[derive(Debug, Clone, PartialEq)]
pub struct StudyOutcome {
    pub aggregate: AggregateReport,
    pub trials: Vec<TrialReport>,
}

/// Runs `count` trials with seeds derived from `master_seed` by index, on
/// `jobs` threads (rayon's default pool when `None`). The outcome does not
/// depend on the thread count.
pub fn run_trials(study: &StudySpec, count: usize, master_seed: u64, jobs: Option<usize>) -> Result<StudyOutcome> {
    if count == 0 {
        return Err(Error::invalid("trial count must be at least 1"));
    }
    study.validate()?;
    let work = || -> Vec<(u64, Result<TrialReport>)> {
        (0..count)
            .into_par_iter()
            .map(|i| {
                let seed = sub_seed(master_seed, i as u64);
                (seed, run_trial(study, i, seed))
            })
            .collect()
    };
    let results = match jobs {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n.max(1))
            .build()
            .map_err(|e| Error::invalid(format!("cannot start {n} worker threads: {e}")))?
            .install(work),
        None => work(),
    };

    let mut trials = Vec::with_capacity(count);
    let mut failures = Vec::new();
    let mut first_error = None;
    for (i, (seed, result)) in results.into_iter().enumerate() {
        match result {
            Ok(r) => trials.push(r),
            Err(e) => {
                failures.push(TrialFailure {
                    trial_id: i,
                    seed,
                    message: e.to_string(),
                });
                first_error.get_or_insert(e);
            }
        }
    }
    if trials.is_empty() {
        return Err(first_error.expect("count >= 1"));
    }
    let aggregate = aggregate(study, master_seed, &trials, failures)?;
    Ok(StudyOutcome { aggregate, trials })
}

fn csv_writer<W: Write>(w: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(w)
}

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

fn csv_err(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::invalid(format!("csv output: {other:?}")),
    }
}

/// One row per trial.
pub fn write_trials_csv<W: Write>(w: W, trials: &[TrialReport]) -> Result<()> {
    let mut out = csv_writer(w);
    out.write_record([
        "trial_id",
        "seed",
        "coverage_ours",
        "coverage_union",
        "total_size_ours",
        "total_size_union",
        "final_size_ours",
        "final_size_union",
        "objective",
        "objective_milcp",
        "objective_lcp",
        "c",
        "union_infinite",
        "n_validation",
    ])
    .map_err(csv_err)?;
    for t in trials {
        let last = |v: &[f64]| v.last().map_or_else(String::new, f64::to_string);
        out.write_record([
            t.trial_id.to_string(),
            t.seed.to_string(),
            t.coverage_ours.to_string(),
            t.coverage_union.to_string(),
            t.total_size_ours().to_string(),
            t.total_size_union().to_string(),
            last(&t.region_sizes_ours),
            last(&t.region_sizes_union),
            t.objective.to_string(),
            opt(t.objective_milcp),
            opt(t.objective_lcp),
            t.c.to_string(),
            t.union_infinite.to_string(),
            t.n_validation.to_string(),
        ])
        .map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

/// `step,size_ours,size_union` with steps counted from 1.
pub fn write_size_table<W: Write>(w: W, ours: &[f64], union: &[f64]) -> Result<()> {
    if ours.len() != union.len() {
        return Err(Error::Alignment(format!(
            "size tables have {} and {} steps",
            ours.len(),
            union.len()
        )));
    }
    let mut out = csv_writer(w);
    out.write_record(["step", "size_ours", "size_union"]).map_err(csv_err)?;
    for (t, (o, u)) in ours.iter().zip(union).enumerate() {
        out.write_record([(t + 1).to_string(), o.to_string(), u.to_string()])
            .map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}

/// `step,q_level,q_union_level`.
pub fn write_tail_csv<W: Write>(w: W, rows: &[TailRow]) -> Result<()> {
    let mut out = csv_writer(w);
    out.write_record(["step", "q_level", "q_union_level"]).map_err(csv_err)?;
    for r in rows {
        out.write_record([r.step.to_string(), r.q_level.to_string(), r.q_union_level.to_string()])
            .map_err(csv_err)?;
    }
    out.flush()?;
    Ok(())
}
