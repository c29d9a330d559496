//! Acceptance suite: one line per criterion, non-zero exit if any fails.

use std::path::Path;
use std::process::Command;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tscp::alpha::{fit_alphas, grid_oracle};
use tscp::bb::{solve_mixed, BbStatus};
use tscp::conformal::{containment, contains_errors, regions, CalibratedScore};
use tscp::datagen::{GeneratorSpec, PredictorSpec};
use tscp::eval::{run_trials, StudyOutcome, StudySpec};
use tscp::quantile::{conformal_quantile, quantile_kkt_program};
use tscp::types::{AlphaWeights, ErrorMatrix};
use tscp::{ConformalConfig, SolverKind};

struct Outcome {
    pass: bool,
    detail: String,
}

fn verdict(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn uniform_errors(rng: &mut ChaCha8Rng, n: usize, horizon: usize) -> ErrorMatrix<f64> {
    let rows = (0..n)
        .map(|_| (0..horizon).map(|_| rng.random_range(0.1..5.0)).collect())
        .collect();
    ErrorMatrix::from_rows(rows).unwrap()
}

fn fit(errors: &ErrorMatrix<f64>, delta: f64, solver: SolverKind) -> tscp::AlphaFitResult {
    let config = ConformalConfig {
        solver,
        ..ConformalConfig::new(delta, errors.n(), errors.horizon())
    };
    fit_alphas(errors, &config).unwrap()
}

fn min_alpha(fit: &tscp::AlphaFitResult) -> f64 {
    fit.alphas.as_slice().iter().copied().fold(f64::INFINITY, f64::min)
}

/// Exact program equivalence. Also returns the smallest weight seen.
fn criterion_1() -> (Outcome, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let start = Instant::now();
    let (mut worst, mut total, mut smallest) = (0.0f64, 0.0, f64::INFINITY);
    for _ in 0..50 {
        let horizon = rng.random_range(2..=8);
        let n = rng.random_range(3..=20);
        let e = uniform_errors(&mut rng, n, horizon);
        let lcp = fit(&e, 0.05, SolverKind::Lcp);
        let milcp = fit(&e, 0.05, SolverKind::Milcp);
        let gap = (lcp.objective - milcp.objective).abs();
        worst = worst.max(gap);
        total += gap;
        smallest = smallest.min(min_alpha(&lcp)).min(min_alpha(&milcp));
    }
    let elapsed = start.elapsed();
    let pass = worst <= 1e-6 && elapsed < Duration::from_secs(300);
    let detail = format!(
        "50 instances, max |milcp - lcp| = {worst:.3e}, mean = {:.3e}, {:.1} s",
        total / 50.0,
        elapsed.as_secs_f64()
    );
    (verdict(pass, detail), smallest)
}

/// Grid oracle agreement at two steps.
fn criterion_2() -> (Outcome, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let start = Instant::now();
    let (mut worst, mut smallest) = (0.0f64, f64::INFINITY);
    for _ in 0..20 {
        let n = rng.random_range(1..=5);
        let e = uniform_errors(&mut rng, n, 2);
        let lcp = fit(&e, 0.05, SolverKind::Lcp);
        let grid = grid_oracle(&e, 0.05, 1e-4).unwrap();
        worst = worst.max((lcp.objective - grid.objective).abs());
        smallest = smallest.min(min_alpha(&lcp));
    }
    let elapsed = start.elapsed();
    let pass = worst <= 2e-3 && elapsed < Duration::from_secs(60);
    let detail = format!(
        "20 instances, max |lcp - grid| = {worst:.3e}, {:.1} s",
        elapsed.as_secs_f64()
    );
    (verdict(pass, detail), smallest)
}

fn criterion_3(smallest: f64) -> Outcome {
    verdict(
        smallest > 1e-9,
        format!("smallest fitted weight over criteria 1-2 = {smallest:.3e}"),
    )
}

fn study(generator: GeneratorSpec) -> StudySpec {
    StudySpec::new(generator, PredictorSpec::ZeroOrderHold, 1200, 600, 50, 0.05)
}

fn run_study(generator: GeneratorSpec, seed: u64) -> (StudyOutcome, Duration) {
    let start = Instant::now();
    let out = run_trials(&study(generator), 100, seed, Some(4)).unwrap();
    (out, start.elapsed())
}

fn criterion_4(gauss: &StudyOutcome, took: Duration) -> Outcome {
    let a = &gauss.aggregate;
    let pass = a.trials_succeeded == 100
        && (0.93..=0.975).contains(&a.mean_coverage_ours)
        && a.mean_coverage_union >= a.mean_coverage_ours
        && took < Duration::from_secs(20 * 60);
    verdict(
        pass,
        format!(
            "{} trials, mean coverage {:.4} (union bound {:.4}), {:.1} s",
            a.trials_succeeded,
            a.mean_coverage_ours,
            a.mean_coverage_union,
            took.as_secs_f64()
        ),
    )
}

fn criterion_5(heavy: &StudyOutcome) -> Outcome {
    let a = &heavy.aggregate;
    verdict(
        a.trials_succeeded == 100 && a.final_step_wins >= 90,
        format!(
            "final-step size smaller than union bound in {} of {} trials ({} unbounded baselines)",
            a.final_step_wins, a.trials_succeeded, a.union_infinite_trials
        ),
    )
}

fn criterion_6(gauss: &StudyOutcome, heavy: &StudyOutcome) -> Outcome {
    let (g, h) = (gauss.aggregate.size_ratio, heavy.aggregate.size_ratio);
    verdict(
        h < g,
        format!("total size ratio ours/union: student-t {h:.4}, gaussian {g:.4}"),
    )
}

/// `p = ⌈(k+1)(1−δ)⌉` with `δ = a/1000`, in integers.
fn oracle_rank(k: usize, a: usize) -> usize {
    ((k + 1) * (1000 - a)).div_ceil(1000)
}

fn pinball(scores: &[f64], delta: f64, q: f64) -> f64 {
    scores
        .iter()
        .map(|&r| (1.0 - delta) * (r - q).max(0.0) + delta * (q - r).max(0.0))
        .sum()
}

fn criterion_7() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut mismatches = 0;
    for _ in 0..1000 {
        let k = rng.random_range(0..=60);
        let a = rng.random_range(1..1000);
        // small integer pool forces ties
        let scores: Vec<f64> = if rng.random_bool(0.3) {
            (0..k).map(|_| f64::from(rng.random_range(0..6))).collect()
        } else {
            (0..k).map(|_| rng.random_range(-50.0..50.0)).collect()
        };
        let mut sorted = scores.clone();
        sorted.sort_by(f64::total_cmp);
        let p = oracle_rank(k, a);
        let expected = if p > k { f64::INFINITY } else { sorted[p - 1] };
        let got = conformal_quantile(&scores, a as f64 / 1000.0).unwrap().value;
        if got.to_bits() != expected.to_bits() {
            mismatches += 1;
        }
    }

    let mut worst = 0.0f64;
    let mut failed = 0;
    for _ in 0..100 {
        let n = rng.random_range(1..50);
        let delta = rng.random_range(0.01..0.99);
        let scores: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..10.0)).collect();
        let best = scores
            .iter()
            .map(|&q| pinball(&scores, delta, q))
            .fold(f64::INFINITY, f64::min);
        let (mp, block) = quantile_kkt_program(&scores, delta).unwrap();
        match solve_mixed(&mp, tscp::bb::DEFAULT_NODE_LIMIT) {
            Ok(sol) if sol.status == BbStatus::Optimal => {
                let q = sol.x.unwrap()[block.q];
                worst = worst.max((pinball(&scores, delta, q) - best).abs());
            }
            _ => failed += 1,
        }
    }
    verdict(
        mismatches == 0 && failed == 0 && worst <= 1e-7,
        format!(
            "quantile oracle mismatches {mismatches}/1000; KKT solves failed {failed}/100, max pinball gap {worst:.3e}"
        ),
    )
}

/// `a·e ≤ c` decided exactly from the rounded product and its error term.
/// Both sides are scaled by 2^600 first so neither term can underflow.
fn exact_within(a: f64, e: f64, c: f64) -> bool {
    if c.is_infinite() {
        return true;
    }
    let scale = 2f64.powi(600);
    let (e, c) = (e * scale, c * scale);
    let p = a * e;
    let err = a.mul_add(e, -p);
    p < c || (p == c && err <= 0.0)
}

fn criterion_8() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut disagreements = 0;
    let mut on_boundary = 0;
    for _ in 0..10_000 {
        let horizon = rng.random_range(1..=6);
        let raw: Vec<f64> = (0..horizon)
            .map(|_| if rng.random_bool(0.1) { rng.random_range(1e-12..1e-6) } else { rng.random_range(0.01..1.0) })
            .collect();
        let alphas = AlphaWeights::from_unnormalized(&raw).unwrap();
        let c = match rng.random_range(0..10) {
            0 => 0.0,
            1 => f64::INFINITY,
            _ => rng.random_range(1e-3..10.0),
        };
        let cal = CalibratedScore {
            alphas,
            scores: Vec::new(),
            c,
            delta: 0.05,
        };
        let set = regions(&cal).unwrap();
        let errors: Vec<f64> = set
            .radii
            .iter()
            .map(|&r| {
                let base = if r.is_finite() { r } else { 1e6 };
                match rng.random_range(0..5) {
                    0 => base,
                    1 => base.next_up(),
                    2 => base.next_down().max(0.0),
                    _ => rng.random_range(0.0..=base * 1.2 + 1e-9),
                }
            })
            .collect();
        on_boundary += usize::from(errors.iter().zip(&set.radii).any(|(e, r)| e == r));
        let by_radius = errors.iter().zip(&set.radii).all(|(e, r)| e <= r);
        let by_score = errors
            .iter()
            .zip(set.alphas.as_slice())
            .all(|(&e, &a)| exact_within(a, e, c));
        let lib = containment(&set, &errors);
        if by_radius != by_score
            || lib.by_radius != by_radius
            || lib.by_score != by_score
            || contains_errors(&set, &errors) != by_radius
        {
            disagreements += 1;
        }
    }
    verdict(
        disagreements == 0,
        format!("10000 checks ({on_boundary} with an error exactly on a radius), {disagreements} disagreements"),
    )
}

fn criterion_9() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let run = |out: &str, jobs: &str| -> Vec<u8> {
        let status = Command::new(env!("CARGO_BIN_EXE_tscp"))
            .current_dir(dir.path())
            .args([
                "trials", "--kind", "student-t", "--n-total", "400", "--n-cal", "200", "--n-cal1", "30",
                "--horizon", "10", "--count", "8", "--seed", "2024", "--jobs", jobs, "--out-dir", out,
            ])
            .status()
            .unwrap();
        assert!(status.success());
        std::fs::read(Path::new(dir.path()).join(out).join("aggregate.json")).unwrap()
    };
    let a = run("first", "1");
    let b = run("second", "4");
    verdict(a == b, format!("aggregate JSON {} bytes, identical: {}", a.len(), a == b))
}

fn main() {
    let mut results = Vec::new();
    let (c1, s1) = criterion_1();
    let (c2, s2) = criterion_2();
    results.push((1, c1));
    results.push((2, c2));
    results.push((3, criterion_3(s1.min(s2))));

    let (gauss, t_gauss) = run_study(GeneratorSpec::gauss(1.0, 2, 20, 20, 0), 4);
    let (heavy, _) = run_study(GeneratorSpec::student_t(3.0, 1.0, 2, 20, 20, 0), 5);
    results.push((4, criterion_4(&gauss, t_gauss)));
    results.push((5, criterion_5(&heavy)));
    results.push((6, criterion_6(&gauss, &heavy)));
    results.push((7, criterion_7()));
    results.push((8, criterion_8()));
    results.push((9, criterion_9()));

    for (k, r) in &results {
        println!("criterion {k}: {} ({})", if r.pass { "PASS" } else { "FAIL" }, r.detail);
    }
    let failed = results.iter().filter(|(_, r)| !r.pass).count();
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
