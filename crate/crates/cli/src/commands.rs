use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use tscp::alpha::fit_alphas;
use tscp::conformal::{calibrate as calibrate_scores, containment, regions, union_bound_calibrate, CalibratedScore};
use tscp::datagen::{self, GeneratorMetadata, GeneratorSpec, PredictorSpec, Split};
use tscp::eval::{self, StudySpec};
use tscp::types::{AlphaWeights, ErrorMatrix};
use tscp::{BigMPolicy, ConformalConfig, PredictionBatch, Provenance, Trajectory};

use crate::docs::{read_doc, write_doc, AlphasDoc, EvaluationDoc, RegionsDoc, RunConfig, SplitDoc, UnionDoc};
use crate::{
    CalibrateArgs, CliError, CompareArgs, EvaluateArgs, FitArgs, GenerateArgs, GeneratorArgs, Kind, TailsArgs,
    TrialsArgs,
};

type Result<T> = std::result::Result<T, CliError>;

fn output_path(explicit: &Option<PathBuf>, out_dir: &Path, name: &str) -> Result<PathBuf> {
    if let Some(p) = explicit {
        return Ok(p.clone());
    }
    std::fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;
    Ok(out_dir.join(name))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::io(path, e))
}

fn finish(mut w: BufWriter<File>, path: &Path) -> Result<()> {
    w.flush().map_err(|e| CliError::io(path, e))
}

fn generator_spec(args: &GeneratorArgs, seed: u64) -> GeneratorSpec {
    let (dims, horizon) = (args.dims as usize, args.horizon as usize);
    match args.kind {
        Kind::Gauss => GeneratorSpec::gauss(args.sigma, dims, args.t_obs, horizon, seed),
        Kind::StudentT => GeneratorSpec::student_t(args.nu, args.sigma, dims, args.t_obs, horizon, seed),
    }
}

fn big_m_policy(scale: f64) -> BigMPolicy {
    if scale == 1.0 {
        BigMPolicy::MaxError
    } else {
        BigMPolicy::Scaled(scale)
    }
}

fn load_dataset(path: &Path, predictor: PredictorSpec) -> Result<(Vec<Trajectory>, Vec<PredictionBatch>)> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let (trajectories, mut predictions) = datagen::read_csv(BufReader::new(file)).map_err(|e| match e {
        tscp::Error::Io(io) => CliError::io(path, io),
        other => CliError::Usage(format!("{}: {other}", path.display())),
    })?;
    if predictions.is_empty() {
        predictions = datagen::predict_all(predictor, &trajectories)?;
    }
    Ok((trajectories, predictions))
}

/// Reloads the dataset and repeats the split recorded by an earlier step.
fn resplit(path: &Path, split: &SplitDoc) -> Result<(Split, Vec<PredictionBatch>)> {
    let (trajectories, predictions) = load_dataset(path, split.predictor)?;
    if trajectories.len() != split.n_total {
        return Err(CliError::Usage(format!(
            "{} has {} trajectories but the weights were fitted on a dataset of {}",
            path.display(),
            trajectories.len(),
            split.n_total
        )));
    }
    let parts = datagen::split(&trajectories, split.n_cal, split.n_cal1, split.seed)?;
    Ok((parts, predictions))
}

/// Keeps the first `horizon` columns.
fn truncate(errors: ErrorMatrix<f64>, horizon: usize) -> Result<ErrorMatrix<f64>> {
    if horizon == errors.horizon() {
        return Ok(errors);
    }
    if horizon == 0 || horizon > errors.horizon() {
        return Err(CliError::Usage(format!(
            "horizon {horizon} is outside 1..={} available in the data",
            errors.horizon()
        )));
    }
    let rows = errors.rows().map(|r| r[..horizon].to_vec()).collect();
    Ok(ErrorMatrix::from_rows(rows)?.with_provenance(errors.provenance()))
}

pub fn generate(out_dir: &Path, args: &GenerateArgs) -> Result<()> {
    let spec = generator_spec(&args.generator, args.seed);
    let predictor = PredictorSpec::from(args.generator.predictor);
    let count = args.count as usize;
    let trajectories = datagen::generate(&spec, count)?;
    let predictions = datagen::predict_all(predictor, &trajectories)?;

    let csv_path = output_path(&args.out, out_dir, "dataset.csv")?;
    let meta_path = args
        .metadata
        .clone()
        .unwrap_or_else(|| csv_path.with_extension("meta.json"));
    let mut w = create(&csv_path)?;
    datagen::write_csv(&mut w, &trajectories, &predictions).map_err(|e| match e {
        tscp::Error::Io(io) => CliError::io(&csv_path, io),
        other => other.into(),
    })?;
    finish(w, &csv_path)?;
    write_doc(&meta_path, &GeneratorMetadata::new(spec, predictor, count))?;
    println!("wrote {count} trajectories to {}", csv_path.display());
    Ok(())
}

pub fn fit(out_dir: &Path, args: &FitArgs) -> Result<()> {
    let predictor = PredictorSpec::from(args.predictor);
    let (trajectories, predictions) = load_dataset(&args.data, predictor)?;
    let n_total = trajectories.len();
    let split = SplitDoc {
        n_total,
        n_cal: args.n_cal.unwrap_or(n_total / 2),
        n_cal1: args.n_cal1,
        seed: args.seed,
        predictor,
    };
    let parts = datagen::split(&trajectories, split.n_cal, split.n_cal1, split.seed)?;
    let mut errors: ErrorMatrix<f64> = parts.errors(Provenance::Cal1, &predictions)?;
    if let Some(h) = args.horizon {
        errors = truncate(errors, h)?;
    }
    let config = ConformalConfig {
        solver: args.solver.into(),
        big_m_policy: big_m_policy(args.big_m_scale),
        seed: args.seed,
        node_limit: args.node_limit,
        ..ConformalConfig::new(args.delta, errors.n(), errors.horizon())
    };
    let fit = fit_alphas(&errors, &config)?;
    let doc = AlphasDoc {
        schema_version: tscp::SCHEMA_VERSION.to_string(),
        alphas: fit.alphas.as_slice().to_vec(),
        objective: fit.objective,
        solver_objective: fit.solver_objective,
        solver: fit.solver_used,
        big_m: fit.big_m,
        nodes_explored: fit.nodes_explored,
        delta: args.delta,
        seed: args.seed,
        split,
    };
    let path = output_path(&args.out, out_dir, "alphas.json")?;
    write_doc(&path, &doc)?;
    eprintln!(
        "solved in {:.3} s ({} nodes)",
        fit.wall_time.as_secs_f64(),
        fit.nodes_explored
    );
    println!("objective {} written to {}", fit.objective, path.display());
    Ok(())
}

pub fn calibrate(out_dir: &Path, args: &CalibrateArgs) -> Result<()> {
    let fitted: AlphasDoc = read_doc(&args.alphas)?;
    let delta = args.delta.unwrap_or(fitted.delta);
    let (parts, predictions) = resplit(&args.data, &fitted.split)?;
    let errors = truncate(parts.errors(Provenance::Cal2, &predictions)?, fitted.alphas.len())?;
    let alphas = AlphaWeights::new(fitted.alphas.clone())?;
    let ours = regions(&calibrate_scores(&alphas, &errors, delta)?)?;
    let union = union_bound_calibrate(&errors, delta)?;
    let doc = RegionsDoc {
        schema_version: tscp::SCHEMA_VERSION.to_string(),
        delta,
        n2: ours.n2,
        c: ours.c,
        alphas: fitted.alphas,
        radii: ours.radii,
        union: UnionDoc {
            per_step_delta: union.per_step_delta,
            per_step_c: union.per_step_c,
        },
        split: fitted.split,
    };
    let path = output_path(&args.out, out_dir, "regions.json")?;
    write_doc(&path, &doc)?;
    println!("C = {} from {} calibration trajectories, written to {}", doc.c, doc.n2, path.display());
    Ok(())
}

/// Rebuilds both region sets from a regions file, recomputing the radii
/// from `C` and the weights so a hand-edited file cannot disagree with them.
fn regions_from_doc(doc: &RegionsDoc) -> Result<(tscp::RegionSet, tscp::UnionBoundRegions)> {
    let alphas = AlphaWeights::new(doc.alphas.clone())?;
    let cal = CalibratedScore {
        alphas,
        scores: Vec::new(),
        c: doc.c,
        delta: doc.delta,
    };
    let mut ours = regions(&cal)?;
    ours.n2 = doc.n2;
    if ours.radii != doc.radii {
        return Err(CliError::Usage("regions file: radii do not match C and the weights".into()));
    }
    if doc.union.per_step_c.len() != doc.radii.len() {
        return Err(CliError::Usage("regions file: union bound has a different horizon".into()));
    }
    let union = tscp::UnionBoundRegions {
        per_step_c: doc.union.per_step_c.clone(),
        delta: doc.delta,
        per_step_delta: doc.union.per_step_delta,
        n2: doc.n2,
    };
    Ok((ours, union))
}

pub fn evaluate(out_dir: &Path, args: &EvaluateArgs) -> Result<()> {
    let doc: RegionsDoc = read_doc(&args.regions)?;
    let (ours, union) = regions_from_doc(&doc)?;
    let (parts, predictions) = resplit(&args.data, &doc.split)?;
    if parts.validation.is_empty() {
        return Err(CliError::Usage("the split leaves no validation trajectories".into()));
    }
    let errors = truncate(parts.errors(Provenance::Validation, &predictions)?, doc.radii.len())?;

    let csv_path = output_path(&args.out, out_dir, "containment.csv")?;
    let mut w = create(&csv_path)?;
    let io = |e| CliError::io(&csv_path, e);
    writeln!(w, "traj_id,score,contained_ours,contained_union").map_err(io)?;
    let (mut hit_ours, mut hit_union) = (0, 0);
    for (traj, row) in parts.validation.iter().zip(errors.rows()) {
        let c = containment(&ours, row);
        let inside_union = union.contains_errors(row);
        hit_ours += usize::from(c.by_radius);
        hit_union += usize::from(inside_union);
        writeln!(w, "{},{},{},{}", traj.id, ours.alphas.score(row), c.by_radius, inside_union).map_err(io)?;
    }
    finish(w, &csv_path)?;

    let n = errors.n();
    let summary = EvaluationDoc {
        schema_version: tscp::SCHEMA_VERSION.to_string(),
        delta: doc.delta,
        n_validation: n,
        covered_ours: hit_ours,
        covered_union: hit_union,
        coverage_ours: hit_ours as f64 / n as f64,
        coverage_union: hit_union as f64 / n as f64,
    };
    let path = output_path(&args.summary, out_dir, "evaluation.json")?;
    write_doc(&path, &summary)?;
    println!(
        "coverage {} (union bound {}) over {n} validation trajectories",
        summary.coverage_ours, summary.coverage_union
    );
    Ok(())
}

pub fn compare(out_dir: &Path, args: &CompareArgs) -> Result<()> {
    let doc: RegionsDoc = read_doc(&args.regions)?;
    let (ours, union) = regions_from_doc(&doc)?;
    let (trajectories, _) = load_dataset(&args.data, doc.split.predictor)?;
    let dims = trajectories[0].dims();
    let ours = eval::region_size(&ours, dims)?;
    let union = eval::union_region_size(&union, dims)?;
    let path = output_path(&args.out, out_dir, "compare.csv")?;
    let mut w = create(&path)?;
    eval::write_size_table(&mut w, &ours, &union)?;
    finish(w, &path)?;
    let (o, u) = (ours[ours.len() - 1], union[union.len() - 1]);
    println!("final step size {o} (union bound {u}), table written to {}", path.display());
    Ok(())
}

pub fn tails(out_dir: &Path, args: &TailsArgs) -> Result<()> {
    let (trajectories, predictions) = load_dataset(&args.data, args.predictor.into())?;
    let errors: ErrorMatrix<f64> = tscp::compute_errors(&trajectories, &predictions)?;
    let rows = eval::quantile_tail_report(&errors, args.delta)?;
    let path = output_path(&args.out, out_dir, "tails.csv")?;
    let mut w = create(&path)?;
    eval::write_tail_csv(&mut w, &rows)?;
    finish(w, &path)?;
    println!("{} steps written to {}", rows.len(), path.display());
    Ok(())
}

fn run_config(args: &TrialsArgs) -> Result<RunConfig> {
    if let Some(path) = &args.config {
        return read_doc(path);
    }
    let mut study = StudySpec::new(
        generator_spec(&args.generator, 0),
        args.generator.predictor.into(),
        args.n_total,
        args.n_cal,
        args.n_cal1,
        args.delta,
    );
    study.solver = args.solver.into();
    study.big_m_policy = big_m_policy(args.big_m_scale);
    study.node_limit = args.node_limit;
    study.check_milcp = args.check_milcp;
    Ok(RunConfig {
        schema_version: tscp::SCHEMA_VERSION.to_string(),
        study,
        trials: args.count as usize,
        master_seed: args.seed,
    })
}

pub fn trials(out_dir: &Path, args: &TrialsArgs) -> Result<()> {
    let config = run_config(args)?;
    let outcome = eval::run_trials(
        &config.study,
        config.trials,
        config.master_seed,
        args.jobs.map(|j| j as usize),
    )?;
    std::fs::create_dir_all(out_dir).map_err(|e| CliError::io(out_dir, e))?;

    write_doc(&out_dir.join("run_config.json"), &config)?;
    write_doc(&out_dir.join("aggregate.json"), &outcome.aggregate)?;
    let trials_path = out_dir.join("trials.csv");
    let mut w = create(&trials_path)?;
    eval::write_trials_csv(&mut w, &outcome.trials)?;
    finish(w, &trials_path)?;
    let sizes_path = out_dir.join("sizes.csv");
    let mut w = create(&sizes_path)?;
    let agg = &outcome.aggregate;
    eval::write_size_table(&mut w, &agg.mean_region_sizes_ours, &agg.mean_region_sizes_union)?;
    finish(w, &sizes_path)?;

    for f in &agg.failures {
        eprintln!("warning: {}", f.message);
    }
    println!(
        "{} of {} trials: mean coverage {} (union bound {}), reports in {}",
        agg.trials_succeeded,
        agg.trials_requested,
        agg.mean_coverage_ours,
        agg.mean_coverage_union,
        out_dir.display()
    );
    Ok(())
}
