//! Dense linear programming.
//!
//! Problems are stated as `min cᵀx  s.t.  Ax = b,  l ≤ x ≤ u` where bounds may
//! be infinite. Inequalities are expressed by the caller through explicit
//! slack columns ([`LinearProgram::add_le`] and [`LinearProgram::add_ge`] do
//! this). [`solve_lp`] runs a two-phase primal simplex on a dense tableau;
//! [`Simplex`] exposes the same tableau for callers that re-solve after
//! changing bounds.

mod simplex;

pub use simplex::Simplex;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// `min cᵀx` subject to `Ax = b` and per-variable bounds.
///
/// Rows are stored sparsely as `(column, coefficient)` lists.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearProgram<S> {
    pub c: Vec<S>,
    pub a: Vec<Vec<(usize, S)>>,
    pub b: Vec<S>,
    pub bounds: Vec<(S, S)>,
}

impl<S: Scalar> Default for LinearProgram<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> LinearProgram<S> {
    pub fn new() -> Self {
        LinearProgram {
            c: Vec::new(),
            a: Vec::new(),
            b: Vec::new(),
            bounds: Vec::new(),
        }
    }

    /// Builds a problem from dense rows. Every variable gets `[0, +∞)`.
    pub fn from_dense(c: Vec<S>, a: Vec<Vec<S>>, b: Vec<S>) -> Self {
        let n = c.len();
        let a = a
            .into_iter()
            .map(|row| {
                row.into_iter()
                    .enumerate()
                    .filter(|(_, v)| *v != S::zero())
                    .collect()
            })
            .collect();
        LinearProgram {
            c,
            a,
            b,
            bounds: vec![(S::zero(), S::infinity()); n],
        }
    }

    pub fn num_vars(&self) -> usize {
        self.c.len()
    }

    pub fn num_rows(&self) -> usize {
        self.a.len()
    }

    pub fn add_var(&mut self, lower: S, upper: S, cost: S) -> usize {
        self.c.push(cost);
        self.bounds.push((lower, upper));
        self.c.len() - 1
    }

    /// `Σ coeff·x = rhs`. Returns the row index.
    pub fn add_eq(&mut self, coeffs: Vec<(usize, S)>, rhs: S) -> usize {
        self.a.push(coeffs);
        self.b.push(rhs);
        self.a.len() - 1
    }

    /// `Σ coeff·x ≤ rhs` via a fresh slack `s ≥ 0`. Returns the slack index.
    pub fn add_le(&mut self, mut coeffs: Vec<(usize, S)>, rhs: S) -> usize {
        let s = self.add_var(S::zero(), S::infinity(), S::zero());
        coeffs.push((s, S::one()));
        self.add_eq(coeffs, rhs);
        s
    }

    /// `Σ coeff·x ≥ rhs` via a fresh surplus `s ≥ 0`. Returns the surplus index.
    pub fn add_ge(&mut self, mut coeffs: Vec<(usize, S)>, rhs: S) -> usize {
        let s = self.add_var(S::zero(), S::infinity(), S::zero());
        coeffs.push((s, -S::one()));
        self.add_eq(coeffs, rhs);
        s
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.c.len();
        if self.bounds.len() != n {
            return Err(Error::invalid(format!(
                "{} bounds for {} variables",
                self.bounds.len(),
                n
            )));
        }
        if self.a.len() != self.b.len() {
            return Err(Error::invalid(format!(
                "{} rows but {} right-hand sides",
                self.a.len(),
                self.b.len()
            )));
        }
        if self.c.iter().chain(&self.b).any(|v| v.is_nan() || v.is_infinite()) {
            return Err(Error::invalid("objective and rhs must be finite"));
        }
        for (i, row) in self.a.iter().enumerate() {
            for &(j, v) in row {
                if j >= n {
                    return Err(Error::invalid(format!("row {i} references column {j}")));
                }
                if !v.is_finite() {
                    return Err(Error::invalid(format!("row {i} has a non-finite entry")));
                }
            }
        }
        for (j, &(l, u)) in self.bounds.iter().enumerate() {
            if l.is_nan() || u.is_nan() || l > u || l == S::infinity() || u == S::neg_infinity() {
                return Err(Error::invalid(format!("variable {j} has bounds [{l}, {u}]")));
            }
        }
        Ok(())
    }

    pub fn objective_at(&self, x: &[S]) -> S {
        self.c.iter().zip(x).map(|(&c, &x)| c * x).sum()
    }

    /// Largest absolute row residual `|Ax − b|`.
    pub fn max_residual(&self, x: &[S]) -> S {
        self.a
            .iter()
            .zip(&self.b)
            .map(|(row, &b)| {
                let lhs: S = row.iter().map(|&(j, v)| v * x[j]).sum();
                (lhs - b).abs()
            })
            .fold(S::zero(), S::max)
    }

    /// Largest bound violation of `x`.
    pub fn max_bound_violation(&self, x: &[S]) -> S {
        self.bounds
            .iter()
            .zip(x)
            .map(|(&(l, u), &v)| (l - v).max(v - u).max(S::zero()))
            .fold(S::zero(), S::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LpStatus {
    Optimal,
    Infeasible,
    Unbounded,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LpSolution<S> {
    pub status: LpStatus,
    pub x: Option<Vec<S>>,
    pub objective: Option<S>,
    pub iterations: usize,
}

/// Solves `lp` from scratch with the two-phase primal simplex.
///
/// Returns `Err(IterationLimit)` when the pivot cap `50·(rows + cols)` is hit.
pub fn solve_lp<S: Scalar>(lp: &LinearProgram<S>) -> Result<LpSolution<S>> {
    let mut simplex = Simplex::new(lp)?;
    let status = simplex.solve()?;
    Ok(simplex.solution(status))
}

/// How an original variable is recovered from standard-form columns.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum VarMap<S> {
    /// `x = offset + x'`
    Shift { col: usize, offset: S },
    /// `x = offset − x'` (variables bounded above only)
    Mirror { col: usize, offset: S },
    /// `x = x⁺ − x⁻` (free variables)
    Split { pos: usize, neg: usize },
}

/// An LP whose variables all live in `[0, +∞)`, with the map back to the
/// original variables. `objective_offset` is the constant dropped from the
/// objective by the shifts.
#[derive(Debug, Clone, PartialEq)]
pub struct StandardForm<S> {
    pub lp: LinearProgram<S>,
    pub map: Vec<VarMap<S>>,
    pub objective_offset: S,
}

impl<S: Scalar> StandardForm<S> {
    pub fn recover(&self, x_std: &[S]) -> Vec<S> {
        self.map
            .iter()
            .map(|m| match *m {
                VarMap::Shift { col, offset } => offset + x_std[col],
                VarMap::Mirror { col, offset } => offset - x_std[col],
                VarMap::Split { pos, neg } => x_std[pos] - x_std[neg],
            })
            .collect()
    }

    /// Original objective value of a standard-form point.
    pub fn original_objective(&self, x_std: &[S]) -> S {
        self.lp.objective_at(x_std) + self.objective_offset
    }
}

/// Rewrites `lp` so every variable is bounded below by zero and unbounded
/// above. Finite lower bounds are shifted out, upper-only variables are
/// mirrored, free variables are split, and remaining finite upper bounds
/// become rows with their own slack.
pub fn to_standard_form<S: Scalar>(lp: &LinearProgram<S>) -> StandardForm<S> {
    let mut out = LinearProgram::new();
    let mut map = Vec::with_capacity(lp.num_vars());
    let mut offset = S::zero();
    // (std column, its sign) per original variable, with the constant term.
    let mut cols: Vec<(Vec<(usize, S)>, S)> = Vec::with_capacity(lp.num_vars());
    let mut ub_rows = Vec::new();

    for (j, &(l, u)) in lp.bounds.iter().enumerate() {
        let c = lp.c[j];
        if l.is_finite() {
            let col = out.add_var(S::zero(), S::infinity(), c);
            map.push(VarMap::Shift { col, offset: l });
            offset += c * l;
            cols.push((vec![(col, S::one())], l));
            if u.is_finite() {
                ub_rows.push((col, u - l));
            }
        } else if u.is_finite() {
            let col = out.add_var(S::zero(), S::infinity(), -c);
            map.push(VarMap::Mirror { col, offset: u });
            offset += c * u;
            cols.push((vec![(col, -S::one())], u));
        } else {
            let pos = out.add_var(S::zero(), S::infinity(), c);
            let neg = out.add_var(S::zero(), S::infinity(), -c);
            map.push(VarMap::Split { pos, neg });
            cols.push((vec![(pos, S::one()), (neg, -S::one())], S::zero()));
        }
    }

    for (row, &b) in lp.a.iter().zip(&lp.b) {
        let mut coeffs = Vec::with_capacity(row.len());
        let mut rhs = b;
        for &(j, v) in row {
            let (terms, constant) = &cols[j];
            rhs -= v * *constant;
            coeffs.extend(terms.iter().map(|&(col, sign)| (col, v * sign)));
        }
        out.add_eq(coeffs, rhs);
    }
    for (col, width) in ub_rows {
        out.add_le(vec![(col, S::one())], width);
    }

    StandardForm {
        lp: out,
        map,
        objective_offset: offset,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn segment_objective() {
        // min -x1 - x2 s.t. x1 + x2 = 1
        let lp = LinearProgram::<f64>::from_dense(vec![-1.0, -1.0], vec![vec![1.0, 1.0]], vec![1.0]);
        let sol = solve_lp(&lp).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert!((sol.objective.unwrap() + 1.0).abs() < 1e-12);
        let x = sol.x.unwrap();
        assert!((x[0] + x[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn vertex_at_zero_one() {
        // min x1 s.t. x1 - x2 = -1
        let lp = LinearProgram::<f64>::from_dense(vec![1.0, 0.0], vec![vec![1.0, -1.0]], vec![-1.0]);
        let sol = solve_lp(&lp).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        assert_eq!(sol.objective.unwrap(), 0.0);
        let x = sol.x.unwrap();
        assert!((x[0]).abs() < 1e-12 && (x[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn contradictory_bound_is_infeasible() {
        let lp = LinearProgram::<f64>::from_dense(vec![0.0], vec![vec![1.0]], vec![-1.0]);
        let sol = solve_lp(&lp).unwrap();
        assert_eq!(sol.status, LpStatus::Infeasible);
        assert!(sol.x.is_none() && sol.objective.is_none());
    }

    #[test]
    fn unbounded_ray() {
        // min -x1 s.t. x1 - x2 = 0
        let lp = LinearProgram::<f64>::from_dense(vec![-1.0, 0.0], vec![vec![1.0, -1.0]], vec![0.0]);
        assert_eq!(solve_lp(&lp).unwrap().status, LpStatus::Unbounded);
    }

    #[test]
    fn free_variable_is_split() {
        let mut lp = LinearProgram::<f64>::new();
        lp.add_var(f64::NEG_INFINITY, f64::INFINITY, 1.0);
        let sf = to_standard_form(&lp);
        assert_eq!(sf.map, vec![VarMap::Split { pos: 0, neg: 1 }]);
        assert_eq!(sf.lp.c, vec![1.0, -1.0]);
        assert_eq!(sf.lp.bounds, vec![(0.0, f64::INFINITY); 2]);
        assert_eq!(sf.recover(&[0.0, 2.5]), vec![-2.5]);
    }

    #[test]
    fn boxed_variable_is_shifted_with_bound_row() {
        let mut lp = LinearProgram::<f64>::new();
        let v = lp.add_var(-0.95, 0.05, 1.0);
        lp.add_eq(vec![(v, 2.0)], 0.0);
        let sf = to_standard_form(&lp);
        assert_eq!(sf.map[0], VarMap::Shift { col: 0, offset: -0.95 });
        // original row 2v = 0 becomes 2v' = 1.9
        assert_eq!(sf.lp.a[0], vec![(0, 2.0)]);
        assert!((sf.lp.b[0] - 1.9).abs() < 1e-15);
        // v' + s = 1
        assert_eq!(sf.lp.a[1], vec![(0, 1.0), (1, 1.0)]);
        assert!((sf.lp.b[1] - 1.0).abs() < 1e-15);
        assert!((sf.objective_offset + 0.95).abs() < 1e-15);
        assert!((sf.recover(&[0.95, 0.05])[0]).abs() < 1e-15);
    }

    #[test]
    fn standard_lp_is_unchanged() {
        let lp = LinearProgram::<f64>::from_dense(
            vec![1.0, 2.0, 0.0],
            vec![vec![1.0, 1.0, 1.0], vec![0.0, 1.0, -1.0]],
            vec![4.0, 1.0],
        );
        let sf = to_standard_form(&lp);
        assert_eq!(sf.lp, lp);
        assert_eq!(sf.objective_offset, 0.0);
    }

    #[test]
    fn upper_only_variable_is_mirrored() {
        // min -x s.t. x <= 3 (x free below)
        let mut lp = LinearProgram::<f64>::new();
        lp.add_var(f64::NEG_INFINITY, 3.0, -1.0);
        let sf = to_standard_form(&lp);
        let sol = solve_lp(&sf.lp).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        let x = sol.x.unwrap();
        assert_eq!(sf.recover(&x), vec![3.0]);
        assert_eq!(sf.original_objective(&x), -3.0);
        assert_eq!(solve_lp(&lp).unwrap().objective, Some(-3.0));
    }

    #[test]
    fn validation_rejects_bad_shapes() {
        let mut lp = LinearProgram::from_dense(vec![1.0], vec![vec![1.0]], vec![1.0]);
        lp.b.push(0.0);
        assert!(solve_lp(&lp).is_err());
        let mut lp = LinearProgram::from_dense(vec![1.0], vec![vec![1.0]], vec![1.0]);
        lp.bounds[0] = (1.0, 0.0);
        assert!(solve_lp(&lp).is_err());
        let mut lp = LinearProgram::from_dense(vec![1.0], vec![vec![1.0]], vec![1.0]);
        lp.a[0][0].1 = f64::NAN;
        assert!(solve_lp(&lp).is_err());
    }

    #[test]
    fn single_precision_instance() {
        let lp = LinearProgram::<f32>::from_dense(
            vec![-1.0, -2.0],
            vec![vec![1.0, 1.0], vec![1.0, 3.0]],
            vec![4.0, 6.0],
        );
        let sol = solve_lp(&lp).unwrap();
        assert_eq!(sol.status, LpStatus::Optimal);
        // vertices: (4,0) -> -4, (3,1) -> -5
        assert!((sol.objective.unwrap() + 5.0).abs() < 1e-4);
    }
}
