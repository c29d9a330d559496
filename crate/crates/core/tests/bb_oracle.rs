//! Branch-and-bound against exhaustive enumeration of every binary assignment
//! and every choice of zero member per complementarity pair.

use proptest::prelude::*;
use tscp::bb::{solve_mixed, solve_mixed_with, BbOptions, BbStatus, BranchPriority, MixedProgram};
use tscp::lp::{solve_lp, LinearProgram, LpStatus};

#[derive(Debug, Clone)]
struct Instance {
    mp: MixedProgram<f64>,
}

fn enumerate(mp: &MixedProgram<f64>) -> Option<f64> {
    let nb = mp.binaries.len();
    let np = mp.comp_pairs.len();
    let mut best: Option<f64> = None;
    for bits in 0u32..(1 << nb) {
        for sides in 0u32..(1 << np) {
            let mut lp = mp.lp.clone();
            for (k, &j) in mp.binaries.iter().enumerate() {
                let v = f64::from((bits >> k) & 1);
                lp.bounds[j] = (v, v);
            }
            for (k, &(i, j)) in mp.comp_pairs.iter().enumerate() {
                let zero = if (sides >> k) & 1 == 0 { i } else { j };
                lp.bounds[zero] = (0.0, 0.0);
            }
            let sol = solve_lp(&lp).unwrap();
            if sol.status == LpStatus::Optimal {
                let v = sol.objective.unwrap();
                if best.is_none_or(|b| v < b) {
                    best = Some(v);
                }
            }
        }
    }
    best
}

/// Binaries first, then continuous variables in `[0, 3]`; complementarity
/// pairs couple disjoint continuous variables. The right-hand sides are built
/// around a point that satisfies every requirement, which keeps most instances
/// feasible.
fn instance() -> impl Strategy<Value = Instance> {
    (0usize..=6, 0usize..=4, 1usize..=5).prop_flat_map(|(nb, np, m)| {
        let nc = 2 * np + 2;
        let n = nb + nc;
        (
            Just((nb, np, m)),
            prop::collection::vec(-4i32..=4, n),
            prop::collection::vec(prop::collection::vec(-3i32..=3, n), m),
            prop::collection::vec(0u8..=1, nb),
            prop::collection::vec((0u8..=1, 0i32..=3), np),
            prop::collection::vec(0i32..=3, 2),
            prop::collection::vec(-1i32..=2, m),
        )
            .prop_map(move |((nb, np, _), c, g, bits, pairs, free, slack)| {
                let mut lp = LinearProgram::new();
                let mut point = Vec::new();
                for (k, &b) in bits.iter().enumerate() {
                    lp.add_var(0.0, 1.0, f64::from(c[k]));
                    point.push(f64::from(b));
                }
                let mut comp = Vec::new();
                for (k, &(side, v)) in pairs.iter().enumerate() {
                    let i = lp.add_var(0.0, 3.0, f64::from(c[nb + 2 * k]));
                    let j = lp.add_var(0.0, 3.0, f64::from(c[nb + 2 * k + 1]));
                    comp.push((i, j));
                    let (vi, vj) = if side == 0 { (f64::from(v), 0.0) } else { (0.0, f64::from(v)) };
                    point.push(vi);
                    point.push(vj);
                }
                for (k, &v) in free.iter().enumerate() {
                    lp.add_var(0.0, 3.0, f64::from(c[nb + 2 * np + k]));
                    point.push(f64::from(v));
                }
                for (row, s) in g.iter().zip(&slack) {
                    let lhs: f64 = row.iter().zip(&point).map(|(&a, x)| f64::from(a) * x).sum();
                    lp.add_le(
                        row.iter().map(|&a| f64::from(a)).enumerate().collect(),
                        lhs + f64::from(*s),
                    );
                }
                let mut mp = MixedProgram::new(lp);
                mp.binaries = (0..nb).collect();
                mp.comp_pairs = comp;
                Instance { mp }
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(150))]

    #[test]
    fn matches_exhaustive_enumeration(inst in instance()) {
        let sol = solve_mixed(&inst.mp, 100_000).unwrap();
        match enumerate(&inst.mp) {
            None => prop_assert_eq!(sol.status, BbStatus::Infeasible),
            Some(best) => {
                prop_assert_eq!(sol.status, BbStatus::Optimal);
                prop_assert!((sol.objective.unwrap() - best).abs() <= 1e-6,
                    "bb {:?} vs enumeration {}", sol.objective, best);
                let x = sol.x.unwrap();
                prop_assert!(inst.mp.is_feasible_point(&x, 1e-6));
                prop_assert!(inst.mp.lp.max_residual(&x) <= 1e-6);
            }
        }
    }

    #[test]
    fn branching_priority_does_not_change_optimum(inst in instance()) {
        let a = solve_mixed_with(&inst.mp, &BbOptions { priority: BranchPriority::BinariesFirst, ..BbOptions::default() }).unwrap();
        let b = solve_mixed_with(&inst.mp, &BbOptions::default()).unwrap();
        prop_assert_eq!(a.status, b.status);
        if let (Some(x), Some(y)) = (a.objective, b.objective) {
            prop_assert!((x - y).abs() <= 1e-6);
        }
    }

    #[test]
    fn deterministic(inst in instance()) {
        let a = solve_mixed(&inst.mp, 100_000).unwrap();
        let b = solve_mixed(&inst.mp, 100_000).unwrap();
        prop_assert_eq!(a, b);
    }
}
