//! Random LPs checked against exhaustive vertex enumeration.

use proptest::prelude::*;
use tscp::lp::{solve_lp, to_standard_form, LinearProgram, LpStatus, Simplex};

/// `min cᵀx` s.t. `G x ≤ h`, `lo ≤ x ≤ hi`, all bounds finite.
#[derive(Debug, Clone)]
struct BoxedLp {
    c: Vec<f64>,
    g: Vec<Vec<f64>>,
    h: Vec<f64>,
    lo: Vec<f64>,
    hi: Vec<f64>,
}

impl BoxedLp {
    fn to_lp(&self) -> LinearProgram<f64> {
        let mut lp = LinearProgram::new();
        for j in 0..self.c.len() {
            lp.add_var(self.lo[j], self.hi[j], self.c[j]);
        }
        for (row, &h) in self.g.iter().zip(&self.h) {
            lp.add_le(row.iter().copied().enumerate().collect(), h);
        }
        lp
    }

    fn feasible(&self, x: &[f64]) -> bool {
        let tol = 1e-7;
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(&v, (&l, &u))| v >= l - tol && v <= u + tol)
            && self.g.iter().zip(&self.h).all(|(row, &h)| {
                row.iter().zip(x).map(|(a, v)| a * v).sum::<f64>() <= h + tol
            })
    }
}

/// Solves the square system with partial pivoting; `None` when singular.
fn solve_square(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let p = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[p][col].abs() < 1e-10 {
            return None;
        }
        a.swap(col, p);
        b.swap(col, p);
        for i in 0..n {
            if i != col {
                let f = a[i][col] / a[col][col];
                if f != 0.0 {
                    for k in col..n {
                        a[i][k] -= f * a[col][k];
                    }
                    b[i] -= f * b[col];
                }
            }
        }
    }
    Some((0..n).map(|i| b[i] / a[i][i]).collect())
}

/// Minimum over all basic feasible points; `None` when infeasible.
fn vertex_enumeration(p: &BoxedLp) -> Option<f64> {
    let n = p.c.len();
    // every constraint as (coefficients, rhs) for equality at a vertex
    let mut cons: Vec<(Vec<f64>, f64)> = p.g.iter().cloned().zip(p.h.iter().copied()).collect();
    for j in 0..n {
        let mut e = vec![0.0; n];
        e[j] = 1.0;
        cons.push((e.clone(), p.lo[j]));
        cons.push((e, p.hi[j]));
    }
    let mut best: Option<f64> = None;
    let mut pick = Vec::with_capacity(n);
    fn rec(
        start: usize,
        pick: &mut Vec<usize>,
        cons: &[(Vec<f64>, f64)],
        p: &BoxedLp,
        best: &mut Option<f64>,
    ) {
        let n = p.c.len();
        if pick.len() == n {
            let a = pick.iter().map(|&k| cons[k].0.clone()).collect();
            let b = pick.iter().map(|&k| cons[k].1).collect();
            if let Some(x) = solve_square(a, b) {
                if p.feasible(&x) {
                    let v: f64 = p.c.iter().zip(&x).map(|(c, x)| c * x).sum();
                    if best.is_none_or(|b| v < b) {
                        *best = Some(v);
                    }
                }
            }
            return;
        }
        for k in start..cons.len() {
            if cons.len() - k < n - pick.len() {
                break;
            }
            pick.push(k);
            rec(k + 1, pick, cons, p, best);
            pick.pop();
        }
    }
    rec(0, &mut pick, &cons, p, &mut best);
    best
}

fn boxed_lp(max_vars: usize, max_rows: usize) -> impl Strategy<Value = BoxedLp> {
    (1..=max_vars, 0..=max_rows).prop_flat_map(|(n, m)| {
        (
            prop::collection::vec(-5i32..=5, n),
            prop::collection::vec(prop::collection::vec(-4i32..=4, n), m),
            prop::collection::vec(-6i32..=10, m),
            prop::collection::vec((-3i32..=1, 1i32..=4), n),
        )
            .prop_map(|(c, g, h, bounds)| BoxedLp {
                c: c.into_iter().map(f64::from).collect(),
                g: g.into_iter()
                    .map(|r| r.into_iter().map(f64::from).collect())
                    .collect(),
                h: h.into_iter().map(f64::from).collect(),
                lo: bounds.iter().map(|&(l, _)| f64::from(l)).collect(),
                hi: bounds.iter().map(|&(l, w)| f64::from(l + w)).collect(),
            })
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn simplex_matches_vertex_enumeration(p in boxed_lp(5, 5)) {
        let sol = solve_lp(&p.to_lp()).unwrap();
        match vertex_enumeration(&p) {
            None => prop_assert_eq!(sol.status, LpStatus::Infeasible),
            Some(best) => {
                prop_assert_eq!(sol.status, LpStatus::Optimal);
                prop_assert!((sol.objective.unwrap() - best).abs() <= 1e-7, "{:?} vs {}", sol.objective, best);
                prop_assert!(p.feasible(&sol.x.unwrap()[..p.c.len()]));
            }
        }
    }

    #[test]
    fn standard_form_preserves_objective(p in boxed_lp(5, 4)) {
        let lp = p.to_lp();
        let direct = solve_lp(&lp).unwrap();
        let std = to_standard_form(&lp);
        let via = solve_lp(&std.lp).unwrap();
        prop_assert_eq!(direct.status, via.status);
        if let Some(x) = via.x {
            let recovered = std.recover(&x);
            prop_assert!((std.original_objective(&x) - direct.objective.unwrap()).abs() <= 1e-7);
            prop_assert!(lp.max_residual(&recovered) <= 1e-7);
            prop_assert!(lp.max_bound_violation(&recovered) <= 1e-7);
        }
    }

    #[test]
    fn warm_resolves_match_cold_solves(
        p in boxed_lp(6, 5),
        changes in prop::collection::vec((0usize..6, -3i32..=2, 0i32..=3), 1..8),
    ) {
        let mut lp = p.to_lp();
        let mut warm = Simplex::new(&lp).unwrap();
        warm.solve().unwrap();
        for (j, l, w) in changes {
            let j = j % p.c.len();
            let bounds = (f64::from(l), f64::from(l + w));
            lp.bounds[j] = bounds;
            warm.set_bounds(j, bounds.0, bounds.1);
            let status = warm.reoptimize().unwrap();
            let cold = solve_lp(&lp).unwrap();
            prop_assert_eq!(status, cold.status);
            if status == LpStatus::Optimal {
                prop_assert!((warm.objective() - cold.objective.unwrap()).abs() <= 1e-7);
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn larger_instances_match_vertex_enumeration(p in boxed_lp(8, 6)) {
        let sol = solve_lp(&p.to_lp()).unwrap();
        match vertex_enumeration(&p) {
            None => prop_assert_eq!(sol.status, LpStatus::Infeasible),
            Some(best) => prop_assert!((sol.objective.unwrap() - best).abs() <= 1e-7),
        }
    }
}

#[test]
fn f32_solve_agrees_with_f64() {
    let p = BoxedLp {
        c: vec![-1.0, -2.0, 0.5],
        g: vec![vec![1.0, 1.0, 1.0], vec![2.0, -1.0, 0.0]],
        h: vec![4.0, 2.0],
        lo: vec![0.0, 0.0, -1.0],
        hi: vec![3.0, 3.0, 2.0],
    };
    let lp64 = p.to_lp();
    let mut lp32 = LinearProgram::<f32>::new();
    for j in 0..3 {
        lp32.add_var(p.lo[j] as f32, p.hi[j] as f32, p.c[j] as f32);
    }
    for (row, &h) in p.g.iter().zip(&p.h) {
        lp32.add_le(row.iter().map(|&v| v as f32).enumerate().collect(), h as f32);
    }
    let a = solve_lp(&lp64).unwrap().objective.unwrap();
    let b = solve_lp(&lp32).unwrap().objective.unwrap();
    assert!((a - f64::from(b)).abs() < 1e-4);
    assert!((a - vertex_enumeration(&p).unwrap()).abs() < 1e-9);
}
