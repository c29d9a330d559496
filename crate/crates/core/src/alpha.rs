//! Fitting the per-step weights `α` that minimize the empirical quantile of
//! the score `max_t α_t R_t`.
//!
//! Two exact formulations are built on top of [`crate::bb`]: a mixed-integer
//! program that encodes the max with binaries and a big-M constant, and a
//! relaxation that keeps only the lower half of the max encoding. Both carry
//! the KKT conditions of the pinball LP and reach the same optimal value. A
//! brute-force grid search over the simplex serves as an independent check for
//! short horizons.

use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::bb::{solve_mixed, BbStatus, MixedProgram};
use crate::error::{Error, Result};
use crate::lp::LinearProgram;
use crate::quantile::{build_quantile_kkt, pinball_quantile, QuantileLpBlock};
use crate::scalar::Scalar;
use crate::types::{AlphaWeights, BigMPolicy, ConformalConfig, ErrorMatrix, Provenance, SolverKind};

/// Largest horizon the grid search accepts.
pub const GRID_MAX_HORIZON: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub struct AlphaFitResult<S> {
    pub alphas: AlphaWeights<S>,
    /// Pinball quantile of the scores under the reported (renormalized) `α`.
    pub objective: S,
    /// The optimal `q` as returned by the solver, before renormalization.
    pub solver_objective: S,
    pub solver_used: SolverKind,
    pub big_m: S,
    pub nodes_explored: usize,
    pub wall_time: Duration,
}

/// Summary of a fit that serializes cleanly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaFitSummary {
    pub alphas: Vec<f64>,
    pub objective: f64,
    pub solver_objective: f64,
    pub solver: SolverKind,
    pub big_m: f64,
    pub nodes_explored: usize,
    pub wall_time_seconds: f64,
}

impl<S: Scalar> AlphaFitResult<S> {
    pub fn summary(&self) -> AlphaFitSummary {
        AlphaFitSummary {
            alphas: self.alphas.as_slice().iter().map(|a| a.as_f64()).collect(),
            objective: self.objective.as_f64(),
            solver_objective: self.solver_objective.as_f64(),
            solver: self.solver_used,
            big_m: self.big_m.as_f64(),
            nodes_explored: self.nodes_explored,
            wall_time_seconds: self.wall_time.as_secs_f64(),
        }
    }
}

/// The big-M constant for the max encoding. An all-zero matrix yields 1.
pub fn big_m<S: Scalar>(errors: &ErrorMatrix<S>, policy: BigMPolicy) -> Result<S> {
    let max = errors.max_entry();
    let base = if max > S::zero() { max } else { S::one() };
    match policy {
        BigMPolicy::MaxError => Ok(base),
        BigMPolicy::Scaled(f) if f >= 1.0 && f.is_finite() => Ok(S::lit(f) * base),
        BigMPolicy::Scaled(f) => Err(Error::invalid(format!(
            "big-M scale factor must be >= 1, got {f}"
        ))),
    }
}

/// A built alpha program together with the columns needed to read it back.
#[derive(Debug, Clone, PartialEq)]
pub struct AlphaProgram<S> {
    pub mp: MixedProgram<S>,
    pub alpha: Vec<usize>,
    pub scores: Vec<usize>,
    /// `binaries[i][t]` selects which step attains the max for row `i`.
    pub binaries: Vec<Vec<usize>>,
    pub block: QuantileLpBlock,
}

impl<S: Scalar> AlphaProgram<S> {
    pub fn alphas_at(&self, x: &[S]) -> Vec<S> {
        self.alpha.iter().map(|&j| x[j]).collect()
    }
}

fn build_common<S: Scalar>(errors: &ErrorMatrix<S>, m: S) -> Result<(LinearProgram<S>, Vec<usize>, Vec<usize>)> {
    if errors.n() == 0 || errors.horizon() == 0 {
        return Err(Error::invalid("error matrix is empty"));
    }
    let zero = S::zero();
    let one = S::one();
    let mut lp = LinearProgram::new();
    let alpha: Vec<usize> = (0..errors.horizon())
        .map(|_| lp.add_var(zero, one, zero))
        .collect();
    let scores: Vec<usize> = (0..errors.n()).map(|_| lp.add_var(zero, m, zero)).collect();
    for (i, row) in errors.rows().enumerate() {
        for (t, &e) in row.iter().enumerate() {
            // R_i ≥ α_t e_it
            let mut coeffs = vec![(scores[i], one)];
            if e != zero {
                coeffs.push((alpha[t], -e));
            }
            lp.add_ge(coeffs, zero);
        }
    }
    lp.add_eq(alpha.iter().map(|&a| (a, one)).collect(), one);
    Ok((lp, alpha, scores))
}

fn finish<S: Scalar>(
    mut lp: LinearProgram<S>,
    delta: f64,
    m: S,
    alpha: Vec<usize>,
    scores: Vec<usize>,
    binaries: Vec<Vec<usize>>,
) -> Result<AlphaProgram<S>> {
    let block = build_quantile_kkt(&mut lp, delta, &scores, (S::zero(), m))?;
    lp.c[block.q] = S::one();
    let mut mp = MixedProgram::new(lp);
    mp.binaries = binaries.iter().flatten().copied().collect();
    mp.comp_pairs = block.comp_pairs.clone();
    Ok(AlphaProgram {
        mp,
        alpha,
        scores,
        binaries,
        block,
    })
}

/// `min q` with the score max encoded exactly through binaries and big-M.
pub fn build_milcp<S: Scalar>(errors: &ErrorMatrix<S>, delta: f64, m: S) -> Result<AlphaProgram<S>> {
    if !(m >= errors.max_entry()) || !m.is_finite() {
        return Err(Error::invalid(format!(
            "big-M {m} is below the largest error {}",
            errors.max_entry()
        )));
    }
    let (mut lp, alpha, scores) = build_common(errors, m)?;
    let zero = S::zero();
    let one = S::one();
    let mut binaries = Vec::with_capacity(errors.n());
    for (i, row) in errors.rows().enumerate() {
        let b: Vec<usize> = row.iter().map(|_| lp.add_var(zero, one, zero)).collect();
        for (t, &e) in row.iter().enumerate() {
            // R_i ≤ α_t e_it + (1 − b_it) M
            let mut coeffs = vec![(scores[i], one), (b[t], m)];
            if e != zero {
                coeffs.push((alpha[t], -e));
            }
            lp.add_le(coeffs, m);
        }
        lp.add_eq(b.iter().map(|&j| (j, one)).collect(), one);
        binaries.push(b);
    }
    finish(lp, delta, m, alpha, scores, binaries)
}

/// The relaxation that keeps only `R_i ≥ α_t e_it`; its optimal value equals
/// the mixed-integer one.
pub fn build_lcp<S: Scalar>(errors: &ErrorMatrix<S>, delta: f64) -> Result<AlphaProgram<S>> {
    let m = big_m(errors, BigMPolicy::MaxError)?;
    let (lp, alpha, scores) = build_common(errors, m)?;
    finish(lp, delta, m, alpha, scores, Vec::new())
}

/// Scores `max_t α_t e_it` for every row.
pub fn scores_for<S: Scalar>(errors: &ErrorMatrix<S>, alphas: &[S]) -> Vec<S> {
    errors
        .rows()
        .map(|row| {
            row.iter()
                .zip(alphas)
                .map(|(&e, &a)| a * e)
                .fold(S::zero(), S::max)
        })
        .collect()
}

fn check_columns<S: Scalar>(errors: &ErrorMatrix<S>) -> Result<()> {
    for t in 0..errors.horizon() {
        if errors.column(t).iter().all(|&e| e == S::zero()) {
            return Err(Error::Degenerate(format!(
                "every error at step {} is zero; the optimal weights are not defined",
                t + 1
            )));
        }
    }
    Ok(())
}

fn grid_resolution(horizon: usize) -> f64 {
    if horizon <= 2 {
        1e-4
    } else {
        1e-3
    }
}

/// Fits `α` on the first calibration split.
pub fn fit_alphas<S: Scalar>(errors: &ErrorMatrix<S>, config: &ConformalConfig) -> Result<AlphaFitResult<S>> {
    config.validate()?;
    match errors.provenance() {
        Provenance::Cal1 | Provenance::Unspecified => {}
        other => {
            return Err(Error::Provenance(format!(
                "weights must be fitted on the first calibration split, got {other:?} data"
            )))
        }
    }
    if errors.horizon() != config.horizon {
        return Err(Error::invalid(format!(
            "error matrix has horizon {}, config expects {}",
            errors.horizon(),
            config.horizon
        )));
    }
    if errors.n() != config.n1 {
        return Err(Error::invalid(format!(
            "error matrix has {} rows, config expects {}",
            errors.n(),
            config.n1
        )));
    }
    check_columns(errors)?;

    let start = Instant::now();
    let (raw, solver_objective, m, nodes) = match config.solver {
        SolverKind::Grid => {
            let res = grid_oracle(errors, config.delta, grid_resolution(errors.horizon()))?;
            (res.alphas.as_slice().to_vec(), res.solver_objective, res.big_m, 0)
        }
        SolverKind::Milcp | SolverKind::Lcp => {
            let (program, m) = if config.solver == SolverKind::Milcp {
                let m = big_m(errors, config.big_m_policy)?;
                (build_milcp(errors, config.delta, m)?, m)
            } else {
                (build_lcp(errors, config.delta)?, big_m(errors, BigMPolicy::MaxError)?)
            };
            let sol = solve_mixed(&program.mp, config.node_limit)?;
            if sol.status != BbStatus::Optimal {
                return Err(Error::Infeasible("alpha program has no feasible point".into()));
            }
            let x = sol.x.expect("optimal solution carries x");
            (
                program.alphas_at(&x),
                sol.objective.expect("optimal solution carries objective"),
                m,
                sol.nodes_explored,
            )
        }
    };
    let alphas = AlphaWeights::from_unnormalized(&raw)?;
    let (objective, _) = pinball_quantile(&scores_for(errors, alphas.as_slice()), config.delta)?;
    Ok(AlphaFitResult {
        alphas,
        objective,
        solver_objective,
        solver_used: config.solver,
        big_m: m,
        nodes_explored: nodes,
        wall_time: start.elapsed(),
    })
}

/// Exhaustive search over a regular grid on the simplex (`T ≤ 3`).
///
/// Grid points are `k / N` with `N = ⌈1/resolution⌉`, so halving the
/// resolution refines the grid.
pub fn grid_oracle<S: Scalar>(errors: &ErrorMatrix<S>, delta: f64, resolution: f64) -> Result<AlphaFitResult<S>> {
    let horizon = errors.horizon();
    if !(1..=GRID_MAX_HORIZON).contains(&horizon) {
        return Err(Error::Unsupported(format!(
            "grid search handles horizons 1 to {GRID_MAX_HORIZON}, got {horizon}"
        )));
    }
    if !(resolution > 0.0 && resolution <= 1.0) {
        return Err(Error::invalid(format!("grid resolution must lie in (0, 1], got {resolution}")));
    }
    if errors.n() == 0 {
        return Err(Error::invalid("error matrix is empty"));
    }
    let start = Instant::now();
    let steps = (1.0 / resolution - 1e-9).ceil() as usize;
    let frac = |k: usize| S::from_count(k) / S::from_count(steps);

    let mut best: Option<(S, Vec<S>)> = None;
    let mut consider = |alpha: Vec<S>| -> Result<()> {
        let (q, _) = pinball_quantile(&scores_for(errors, &alpha), delta)?;
        if best.as_ref().is_none_or(|(b, _)| q < *b) {
            best = Some((q, alpha));
        }
        Ok(())
    };
    match horizon {
        1 => consider(vec![S::one()])?,
        2 => {
            for i in 0..=steps {
                consider(vec![frac(i), frac(steps - i)])?;
            }
        }
        _ => {
            for i in 0..=steps {
                for j in 0..=steps - i {
                    consider(vec![frac(i), frac(j), frac(steps - i - j)])?;
                }
            }
        }
    }
    let (objective, alpha) = best.expect("grid is never empty");
    Ok(AlphaFitResult {
        alphas: AlphaWeights::from_unnormalized(&alpha)?,
        objective,
        solver_objective: objective,
        solver_used: SolverKind::Grid,
        big_m: big_m(errors, BigMPolicy::MaxError)?,
        nodes_explored: 0,
        wall_time: start.elapsed(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quantile::pinball_loss;

    fn em(rows: Vec<Vec<f64>>) -> ErrorMatrix<f64> {
        ErrorMatrix::from_rows(rows).unwrap()
    }

    fn config(errors: &ErrorMatrix<f64>, delta: f64, solver: SolverKind) -> ConformalConfig {
        let mut c = ConformalConfig::new(delta, errors.n(), errors.horizon());
        c.solver = solver;
        c
    }

    #[test]
    fn big_m_policies() {
        let e = em(vec![vec![1.0, 2.0], vec![3.0, 4.0]]);
        assert_eq!(big_m(&e, BigMPolicy::MaxError).unwrap(), 4.0);
        assert!((big_m(&e, BigMPolicy::Scaled(1.05)).unwrap() - 4.2).abs() < 1e-12);
        let z = em(vec![vec![0.0, 0.0], vec![0.0, 0.0]]);
        assert_eq!(big_m(&z, BigMPolicy::MaxError).unwrap(), 1.0);
        assert!(big_m(&e, BigMPolicy::Scaled(0.5)).is_err());
    }

    #[test]
    fn milcp_rejects_small_big_m() {
        let e = em(vec![vec![1.0, 2.0]]);
        assert!(build_milcp(&e, 0.1, 1.5).is_err());
    }

    #[test]
    fn program_shapes() {
        let e = em(vec![vec![1.0, 2.0, 3.0], vec![0.5, 0.1, 0.2]]);
        let lcp = build_lcp(&e, 0.1).unwrap();
        assert!(lcp.mp.binaries.is_empty());
        assert_eq!(lcp.mp.comp_pairs.len(), 4);
        let milcp = build_milcp(&e, 0.1, 3.0).unwrap();
        assert_eq!(milcp.mp.binaries.len(), 6);
        assert_eq!(milcp.mp.comp_pairs.len(), 4);
    }

    #[test]
    fn single_step_single_row() {
        let e = em(vec![vec![2.5]]);
        for solver in [SolverKind::Milcp, SolverKind::Lcp, SolverKind::Grid] {
            let fit = fit_alphas(&e, &config(&e, 0.1, solver)).unwrap();
            assert_eq!(fit.alphas.as_slice(), &[1.0]);
            assert!((fit.objective - 2.5).abs() < 1e-9);
        }
    }

    #[test]
    fn two_steps_balance() {
        let e = em(vec![vec![1.0, 2.0]]);
        for solver in [SolverKind::Milcp, SolverKind::Lcp] {
            let fit = fit_alphas(&e, &config(&e, 0.1, solver)).unwrap();
            let a = fit.alphas.as_slice();
            assert!((a[0] - 2.0 / 3.0).abs() < 1e-9 && (a[1] - 1.0 / 3.0).abs() < 1e-9);
            assert!((fit.objective - 2.0 / 3.0).abs() < 1e-9);
            assert!((fit.solver_objective - 2.0 / 3.0).abs() < 1e-9);
        }
        let grid = grid_oracle(&e, 0.1, 1e-4).unwrap();
        assert!((grid.alphas.as_slice()[0] - 2.0 / 3.0).abs() <= 1e-4);
    }

    #[test]
    fn equal_errors_give_uniform_weights() {
        let e = em(vec![vec![3.0, 3.0]]);
        let fit = fit_alphas(&e, &config(&e, 0.2, SolverKind::Lcp)).unwrap();
        assert!((fit.objective - 1.5).abs() < 1e-9);
        assert!(fit.alphas.as_slice().iter().all(|&a| (a - 0.5).abs() < 1e-9));

        let ones = em(vec![vec![1.0; 4]; 6]);
        let fit = fit_alphas(&ones, &config(&ones, 0.1, SolverKind::Lcp)).unwrap();
        assert!((fit.objective - 0.25).abs() < 1e-9);
    }

    #[test]
    fn single_step_collapses_to_pinball() {
        let e = em(vec![vec![1.0], vec![5.0], vec![3.0]]);
        let lcp = fit_alphas(&e, &config(&e, 0.3, SolverKind::Lcp)).unwrap();
        let (q, _) = pinball_quantile(&[1.0, 5.0, 3.0], 0.3).unwrap();
        assert!((lcp.solver_objective - q).abs() < 1e-9);
    }

    #[test]
    fn zero_column_is_degenerate() {
        let e = em(vec![vec![1.0, 0.0], vec![2.0, 0.0]]);
        assert!(matches!(
            fit_alphas(&e, &config(&e, 0.1, SolverKind::Lcp)),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn cal2_data_is_refused() {
        let e = em(vec![vec![1.0, 2.0]]).with_provenance(Provenance::Cal2);
        assert!(matches!(
            fit_alphas(&e, &config(&e, 0.1, SolverKind::Lcp)),
            Err(Error::Provenance(_))
        ));
    }

    #[test]
    fn grid_rejects_long_horizons() {
        let e = em(vec![vec![1.0; 4]]);
        assert!(matches!(grid_oracle(&e, 0.1, 0.1), Err(Error::Unsupported(_))));
        assert!(fit_alphas(&e, &config(&e, 0.1, SolverKind::Grid)).is_err());
    }

    #[test]
    fn grid_refinement_never_worsens() {
        let e = em(vec![vec![1.0, 2.0, 0.7], vec![0.4, 1.5, 2.2], vec![3.0, 0.2, 1.0]]);
        let coarse = grid_oracle(&e, 0.3, 0.02).unwrap().objective;
        let fine = grid_oracle(&e, 0.3, 0.01).unwrap().objective;
        assert!(fine <= coarse);
    }

    #[test]
    fn objective_is_pinball_of_reported_scores() {
        let e = em(vec![vec![1.0, 2.0, 0.5], vec![2.0, 0.3, 1.0], vec![0.9, 0.8, 0.7]]);
        let fit = fit_alphas(&e, &config(&e, 0.4, SolverKind::Lcp)).unwrap();
        let scores = scores_for(&e, fit.alphas.as_slice());
        let (q, loss) = pinball_quantile(&scores, 0.4).unwrap();
        assert_eq!(q, fit.objective);
        assert!(pinball_loss(&scores, 0.4, fit.objective) <= loss + 1e-12);
    }
}
