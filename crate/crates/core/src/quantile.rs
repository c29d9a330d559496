//! Empirical quantiles: the split-conformal order statistic, the pinball-loss
//! minimizer, and the KKT encoding of the pinball LP used inside the alpha
//! programs.

use crate::bb::MixedProgram;
use crate::error::{Error, Result};
use crate::lp::LinearProgram;
use crate::scalar::Scalar;

/// Absorbs round-off in products like `20 * 0.95` before taking a ceiling.
fn ceil_count(x: f64) -> usize {
    (x - 1e-9 * x.abs().max(1.0)).ceil().max(0.0) as usize
}

fn check_delta(delta: f64) -> Result<()> {
    if delta > 0.0 && delta < 1.0 {
        Ok(())
    } else {
        Err(Error::invalid(format!("delta must lie in (0, 1), got {delta}")))
    }
}

fn sorted<S: Scalar>(scores: &[S]) -> Result<Vec<S>> {
    if let Some(bad) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::invalid(format!("non-finite score {bad}")));
    }
    let mut v = scores.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    Ok(v)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ConformalQuantile<S> {
    /// `+inf` when there are too few scores for the requested level.
    pub value: S,
    /// Set when the score list was empty.
    pub empty_input: bool,
}

impl<S: Scalar> ConformalQuantile<S> {
    pub fn is_infinite(&self) -> bool {
        self.value.is_infinite()
    }
}

/// Rank of the split-conformal quantile among `k` scores: `⌈(k+1)(1−δ)⌉`.
pub fn conformal_rank(k: usize, delta: f64) -> usize {
    ceil_count((k as f64 + 1.0) * (1.0 - delta))
}

/// The `⌈(k+1)(1−δ)⌉`-th smallest score, or `+inf` if that rank exceeds `k`.
pub fn conformal_quantile<S: Scalar>(scores: &[S], delta: f64) -> Result<ConformalQuantile<S>> {
    check_delta(delta)?;
    if scores.is_empty() {
        return Ok(ConformalQuantile {
            value: S::infinity(),
            empty_input: true,
        });
    }
    let v = sorted(scores)?;
    let p = conformal_rank(v.len(), delta).max(1);
    Ok(ConformalQuantile {
        value: if p > v.len() { S::infinity() } else { v[p - 1] },
        empty_input: false,
    })
}

/// Pinball loss `Σ (1−δ)·max(R−q, 0) + δ·max(q−R, 0)`.
pub fn pinball_loss<S: Scalar>(scores: &[S], delta: f64, q: S) -> S {
    let d = S::lit(delta);
    let up = S::one() - d;
    scores
        .iter()
        .map(|&r| {
            if r > q {
                up * (r - q)
            } else {
                d * (q - r)
            }
        })
        .sum()
}

/// Smallest minimizer of the pinball loss and the minimal loss.
pub fn pinball_quantile<S: Scalar>(scores: &[S], delta: f64) -> Result<(S, S)> {
    check_delta(delta)?;
    if scores.is_empty() {
        return Err(Error::invalid("pinball quantile of an empty score list"));
    }
    let v = sorted(scores)?;
    let k = ceil_count(v.len() as f64 * (1.0 - delta)).clamp(1, v.len());
    let q = v[k - 1];
    Ok((q, pinball_loss(&v, delta, q)))
}

/// The pinball minimization as a plain LP over `(q, e⁺, e⁻)`.
///
/// Variable 0 is `q`; the optimal objective equals the minimal pinball loss.
pub fn pinball_lp<S: Scalar>(scores: &[S], delta: f64) -> LinearProgram<S> {
    let d = S::lit(delta);
    let mut lp = LinearProgram::new();
    let q = lp.add_var(S::neg_infinity(), S::infinity(), S::zero());
    for &r in scores {
        let ep = lp.add_var(S::zero(), S::infinity(), S::one() - d);
        let em = lp.add_var(S::zero(), S::infinity(), d);
        lp.add_eq(vec![(ep, S::one()), (q, S::one()), (em, -S::one())], r);
    }
    lp
}

/// Column indices of the KKT block for one score list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantileLpBlock {
    pub q: usize,
    pub e_plus: Vec<usize>,
    pub e_minus: Vec<usize>,
    pub u_plus: Vec<usize>,
    pub u_minus: Vec<usize>,
    pub v: Vec<usize>,
    pub comp_pairs: Vec<(usize, usize)>,
}

impl QuantileLpBlock {
    pub fn n(&self) -> usize {
        self.v.len()
    }
}

/// Appends the optimality conditions of the pinball LP over the scores held in
/// `score_vars` to `lp`, with `q` carrying zero cost.
///
/// `score_bounds` must contain every attainable score. It bounds `q` and the
/// residuals `e±`, which keeps `min q` bounded when the complementarity pairs
/// are relaxed; these bounds never cut off a KKT point.
pub fn build_quantile_kkt<S: Scalar>(
    lp: &mut LinearProgram<S>,
    delta: f64,
    score_vars: &[usize],
    score_bounds: (S, S),
) -> Result<QuantileLpBlock> {
    check_delta(delta)?;
    if score_vars.is_empty() {
        return Err(Error::invalid("quantile block needs at least one score"));
    }
    if let Some(&j) = score_vars.iter().find(|&&j| j >= lp.num_vars()) {
        return Err(Error::invalid(format!("score variable {j} out of range")));
    }
    let (lo, hi) = score_bounds;
    if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
        return Err(Error::invalid("score bounds must be a finite interval"));
    }
    let d = S::lit(delta);
    let up = S::one() - d;
    let zero = S::zero();
    let one = S::one();
    let span = hi - lo;

    let n = score_vars.len();
    let q = lp.add_var(lo, hi, zero);
    let mut block = QuantileLpBlock {
        q,
        e_plus: Vec::with_capacity(n),
        e_minus: Vec::with_capacity(n),
        u_plus: Vec::with_capacity(n),
        u_minus: Vec::with_capacity(n),
        v: Vec::with_capacity(n),
        comp_pairs: Vec::with_capacity(2 * n),
    };
    for &r in score_vars {
        let ep = lp.add_var(zero, span, zero);
        let em = lp.add_var(zero, span, zero);
        let upl = lp.add_var(zero, one, zero);
        let umi = lp.add_var(zero, one, zero);
        let v = lp.add_var(-up, d, zero);
        // stationarity in e⁺ and e⁻
        lp.add_eq(vec![(upl, one), (v, -one)], up);
        lp.add_eq(vec![(umi, one), (v, one)], d);
        // e⁺ − e⁻ = R − q
        lp.add_eq(vec![(ep, one), (q, one), (em, -one), (r, -one)], zero);
        block.e_plus.push(ep);
        block.e_minus.push(em);
        block.u_plus.push(upl);
        block.u_minus.push(umi);
        block.v.push(v);
    }
    // stationarity in q
    lp.add_eq(block.v.iter().map(|&v| (v, one)).collect(), zero);
    for i in 0..n {
        block.comp_pairs.push((block.u_plus[i], block.e_plus[i]));
    }
    for i in 0..n {
        block.comp_pairs.push((block.u_minus[i], block.e_minus[i]));
    }
    Ok(block)
}

/// `min q` over the KKT conditions of the pinball LP for fixed scores.
pub fn quantile_kkt_program<S: Scalar>(
    scores: &[S],
    delta: f64,
) -> Result<(MixedProgram<S>, QuantileLpBlock)> {
    let v = sorted(scores)?;
    if v.is_empty() {
        return Err(Error::invalid("quantile block needs at least one score"));
    }
    let bounds = (v[0], v[v.len() - 1]);
    let mut lp = LinearProgram::new();
    let vars: Vec<usize> = scores.iter().map(|&r| lp.add_var(r, r, S::zero())).collect();
    let block = build_quantile_kkt(&mut lp, delta, &vars, bounds)?;
    lp.c[block.q] = S::one();
    let mut mp = MixedProgram::new(lp);
    mp.comp_pairs = block.comp_pairs.clone();
    Ok((mp, block))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bb::{solve_mixed, BbStatus};
    use crate::lp::solve_lp;
    use proptest::prelude::*;

    fn naive_conformal(scores: &[f64], delta: f64) -> f64 {
        let mut v = scores.to_vec();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        v.push(f64::INFINITY);
        let k = scores.len() as f64;
        // smallest p with p / (k + 1) >= 1 − δ
        let p = (1..=v.len())
            .find(|&p| p as f64 >= (k + 1.0) * (1.0 - delta) - 1e-9)
            .unwrap();
        v[p - 1]
    }

    /// Scans the data points and keeps the first one with the smallest loss.
    fn pinball_by_scan(scores: &[f64], delta: f64) -> (f64, f64) {
        let mut v = scores.to_vec();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mut best = (v[0], pinball_loss(&v, delta, v[0]));
        for &q in &v[1..] {
            let loss = pinball_loss(&v, delta, q);
            if loss < best.1 - 1e-12 * best.1.abs().max(1.0) {
                best = (q, loss);
            }
        }
        best
    }

    #[test]
    fn conformal_examples() {
        let s: Vec<f64> = (1..=19).map(f64::from).collect();
        assert_eq!(conformal_quantile::<f64>(&s, 0.05).unwrap().value, 19.0);
        assert_eq!(conformal_quantile::<f64>(&[10.0, 20.0, 30.0, 40.0], 0.5).unwrap().value, 30.0);
        let q = conformal_quantile::<f64>(&[1.0, 2.0, 3.0, 4.0, 5.0], 0.05).unwrap();
        assert!(q.is_infinite() && !q.empty_input);
    }

    #[test]
    fn conformal_empty_flags_warning() {
        let q = conformal_quantile::<f64>(&[], 0.1).unwrap();
        assert!(q.is_infinite() && q.empty_input);
    }

    #[test]
    fn conformal_rejects_bad_input() {
        assert!(conformal_quantile::<f64>(&[1.0], 0.0).is_err());
        assert!(conformal_quantile::<f64>(&[1.0], 1.0).is_err());
        assert!(conformal_quantile::<f64>(&[f64::NAN], 0.1).is_err());
    }

    #[test]
    fn pinball_examples() {
        assert_eq!(pinball_quantile::<f64>(&[1.0, 2.0, 3.0, 4.0], 0.25).unwrap(), (3.0, 1.5));
        assert_eq!(pinball_quantile::<f64>(&[7.5], 0.3).unwrap(), (7.5, 0.0));
        assert_eq!(pinball_quantile::<f64>(&[0.0, 10.0], 0.5).unwrap(), (0.0, 5.0));
        assert_eq!(pinball_quantile::<f64>(&[10.0, 0.0], 0.5).unwrap(), (0.0, 5.0));
    }

    #[test]
    fn pinball_lp_matches_closed_form() {
        let s = [1.0, 2.0, 3.0, 4.0];
        let sol = solve_lp(&pinball_lp::<f64>(&s, 0.25)).unwrap();
        assert!((sol.objective.unwrap() - 1.5).abs() < 1e-12);
    }

    #[test]
    fn block_shape() {
        for n in [1usize, 3, 7] {
            let scores: Vec<f64> = (0..n).map(|i| i as f64).collect();
            let (mp, block) = quantile_kkt_program::<f64>(&scores, 0.1).unwrap();
            assert_eq!(block.n(), n);
            assert_eq!(mp.comp_pairs.len(), 2 * n);
            assert!(mp.binaries.is_empty());
        }
    }

    #[test]
    fn single_score_forces_q() {
        let (mp, block) = quantile_kkt_program::<f64>(&[2.5], 0.2).unwrap();
        let sol = solve_mixed(&mp, 100).unwrap();
        let x = sol.x.unwrap();
        assert!((x[block.q] - 2.5).abs() < 1e-9);
        assert!(x[block.v[0]].abs() < 1e-9);
        assert!((x[block.u_plus[0]] - 0.8).abs() < 1e-9);
        assert!((x[block.u_minus[0]] - 0.2).abs() < 1e-9);
    }

    #[test]
    fn two_scores_at_median() {
        let scores = [1.0, 4.0];
        let (mp, block) = quantile_kkt_program::<f64>(&scores, 0.5).unwrap();
        let sol = solve_mixed(&mp, 100).unwrap();
        let q = sol.x.unwrap()[block.q];
        assert!((1.0 - 1e-9..=4.0 + 1e-9).contains(&q));
        assert!((pinball_loss(&scores, 0.5, q) - 1.5).abs() < 1e-9);
    }

    #[test]
    fn stationarity_holds_at_solution() {
        let scores = [0.3, 2.0, 1.1, 5.0, 0.7];
        let delta = 0.3;
        let (mp, block) = quantile_kkt_program::<f64>(&scores, delta).unwrap();
        let x = solve_mixed(&mp, 1000).unwrap().x.unwrap();
        for i in 0..scores.len() {
            assert!((x[block.u_plus[i]] - (1.0 - delta) - x[block.v[i]]).abs() < 1e-9);
            assert!((x[block.u_minus[i]] - delta + x[block.v[i]]).abs() < 1e-9);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn conformal_matches_sort_and_index(
            scores in prop::collection::vec(0.0f64..100.0, 0..60),
            delta in 0.001f64..0.999,
        ) {
            let got = conformal_quantile::<f64>(&scores, delta).unwrap().value;
            prop_assert_eq!(got, naive_conformal(&scores, delta));
        }

        #[test]
        fn conformal_monotone_in_delta(
            scores in prop::collection::vec(-10.0f64..10.0, 1..40),
            a in 0.001f64..0.999,
            b in 0.001f64..0.999,
        ) {
            let (small, large) = if a < b { (a, b) } else { (b, a) };
            let qs = conformal_quantile::<f64>(&scores, small).unwrap().value;
            let ql = conformal_quantile::<f64>(&scores, large).unwrap().value;
            prop_assert!(qs >= ql);
        }

        #[test]
        fn pinball_below_conformal(
            scores in prop::collection::vec(0.0f64..10.0, 1..40),
            delta in 0.01f64..0.99,
        ) {
            let (q, _) = pinball_quantile::<f64>(&scores, delta).unwrap();
            prop_assert!(q <= conformal_quantile::<f64>(&scores, delta).unwrap().value);
        }

        #[test]
        fn pinball_matches_scan(
            scores in prop::collection::vec(0.0f64..10.0, 1..40),
            delta in 0.01f64..0.99,
        ) {
            let (q, loss) = pinball_quantile::<f64>(&scores, delta).unwrap();
            let (q_scan, loss_scan) = pinball_by_scan(&scores, delta);
            prop_assert!((loss - loss_scan).abs() <= 1e-9 * loss_scan.max(1.0));
            prop_assert!(q <= q_scan);
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn kkt_solution_is_pinball_optimal(
            scores in prop::collection::vec(0.0f64..10.0, 1..50),
            delta in 0.02f64..0.98,
        ) {
            let (mp, block) = quantile_kkt_program::<f64>(&scores, delta).unwrap();
            let sol = solve_mixed(&mp, 200_000).unwrap();
            prop_assert_eq!(sol.status, BbStatus::Optimal);
            let q = sol.x.unwrap()[block.q];
            let (q_ref, loss) = pinball_quantile::<f64>(&scores, delta).unwrap();
            prop_assert!((pinball_loss(&scores, delta, q) - loss).abs() <= 1e-7);
            prop_assert!((q - q_ref).abs() <= 1e-7);
        }
    }
}
