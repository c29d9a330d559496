//! Dense bounded-variable simplex tableau.
//!
//! The tableau stores `B⁻¹A` over all columns (structural plus one artificial
//! per row that lacked a usable crash column), the values of the basic
//! variables, and the reduced-cost row. From scratch it runs the textbook two
//! phases with Bland's rule. After bound changes, [`Simplex::reoptimize`]
//! restores optimality from the current basis: a dual simplex when the basis is
//! still dual feasible, a primal simplex when it is still primal feasible.

use crate::error::{Error, Result};
use crate::lp::{LinearProgram, LpSolution, LpStatus};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum VarState {
    Basic(usize),
    AtLower,
    AtUpper,
    /// Nonbasic free variable held at zero.
    Zero,
}

/// Number of consecutive degenerate pivots tolerated under largest-coefficient
/// pricing before switching permanently to Bland's rule for the current call.
const DEGENERATE_STREAK: usize = 64;

/// Pivots between rebuilds of the tableau from the original rows.
const REFACTOR_EVERY: usize = 500;

/// Pivots since the last rebuild within which an infeasible or unbounded
/// verdict is accepted without refactoring.
const TRUST_WITHIN: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Pricing {
    Bland,
    Dantzig,
}

#[derive(Debug, Clone)]
pub struct Simplex<S> {
    m: usize,
    /// Structural columns of the source problem.
    n: usize,
    ncols: usize,
    tab: Vec<S>,
    beta: Vec<S>,
    basis: Vec<usize>,
    state: Vec<VarState>,
    lo: Vec<S>,
    hi: Vec<S>,
    cost: Vec<S>,
    d: Vec<S>,
    /// Row and sign of each artificial column (index `n + k`).
    artificials: Vec<(usize, S)>,
    rows: Vec<Vec<(usize, S)>>,
    rhs: Vec<S>,
    lp_cost: Vec<S>,
    iterations: usize,
    since_refactor: usize,
    iter_cap: usize,
    pricing: Pricing,
    /// Rows touched by the last pivot's column, reused across updates.
    scratch: Vec<usize>,
}

impl<S: Scalar> Simplex<S> {
    /// Sets up the tableau at a crash basis: slack-like singleton columns where
    /// possible, artificials elsewhere.
    pub fn new(lp: &LinearProgram<S>) -> Result<Self> {
        lp.validate()?;
        let m = lp.num_rows();
        let n = lp.num_vars();

        let mut state = Vec::with_capacity(n);
        let mut value = Vec::with_capacity(n);
        for &(l, u) in &lp.bounds {
            if l.is_finite() {
                state.push(VarState::AtLower);
                value.push(l);
            } else if u.is_finite() {
                state.push(VarState::AtUpper);
                value.push(u);
            } else {
                state.push(VarState::Zero);
                value.push(S::zero());
            }
        }

        let mut occurrences = vec![0usize; n];
        for row in &lp.a {
            for &(j, v) in row {
                if v != S::zero() {
                    occurrences[j] += 1;
                }
            }
        }

        let mut basis = Vec::with_capacity(m);
        let mut beta = Vec::with_capacity(m);
        let mut pivots = Vec::with_capacity(m);
        let mut artificials = Vec::new();
        for (i, row) in lp.a.iter().enumerate() {
            let residual = lp.b[i] - row.iter().map(|&(j, v)| v * value[j]).sum::<S>();
            let crash = row.iter().find_map(|&(j, v)| {
                if occurrences[j] != 1 || v == S::zero() || matches!(state[j], VarState::Basic(_)) {
                    return None;
                }
                let x = value[j] + residual / v;
                let (l, u) = lp.bounds[j];
                (x >= l && x <= u).then_some((j, v, x))
            });
            match crash {
                Some((j, v, x)) => {
                    state[j] = VarState::Basic(i);
                    basis.push(j);
                    beta.push(x);
                    pivots.push(v);
                }
                None => {
                    let sign = if residual < S::zero() { -S::one() } else { S::one() };
                    let col = n + artificials.len();
                    artificials.push((i, sign));
                    basis.push(col);
                    beta.push(residual.abs());
                    pivots.push(sign);
                }
            }
        }

        let ncols = n + artificials.len();
        let mut tab = vec![S::zero(); m * ncols];
        for (i, row) in lp.a.iter().enumerate() {
            let p = pivots[i];
            for &(j, v) in row {
                tab[i * ncols + j] += v / p;
            }
        }
        for (k, &(i, sign)) in artificials.iter().enumerate() {
            tab[i * ncols + n + k] = sign / pivots[i];
            state.push(VarState::Basic(i));
        }

        let mut lo: Vec<S> = lp.bounds.iter().map(|b| b.0).collect();
        let mut hi: Vec<S> = lp.bounds.iter().map(|b| b.1).collect();
        lo.extend(std::iter::repeat_n(S::zero(), artificials.len()));
        hi.extend(std::iter::repeat_n(S::infinity(), artificials.len()));

        Ok(Simplex {
            m,
            n,
            ncols,
            tab,
            beta,
            basis,
            state,
            lo,
            hi,
            cost: vec![S::zero(); ncols],
            d: vec![S::zero(); ncols],
            artificials,
            rows: lp.a.clone(),
            rhs: lp.b.clone(),
            lp_cost: lp.c.clone(),
            iterations: 0,
            since_refactor: 0,
            iter_cap: 50 * (m + ncols).max(1),
            pricing: Pricing::Bland,
            scratch: Vec::new(),
        })
    }

    pub fn iterations(&self) -> usize {
        self.iterations
    }

    pub fn num_vars(&self) -> usize {
        self.n
    }

    pub fn bounds(&self, j: usize) -> (S, S) {
        (self.lo[j], self.hi[j])
    }

    /// Two-phase primal simplex from the crash basis.
    pub fn solve(&mut self) -> Result<LpStatus> {
        self.pricing = Pricing::Dantzig;
        let start = self.iterations;
        if !self.artificials.is_empty() {
            let mut phase1 = vec![S::zero(); self.ncols];
            for k in 0..self.artificials.len() {
                phase1[self.n + k] = S::one();
            }
            self.set_cost(phase1);
            if self.primal(start)? != LpStatus::Optimal {
                return Err(Error::invalid("phase one reported an unbounded ray"));
            }
            let infeasibility: S = (0..self.artificials.len())
                .map(|k| self.value(self.n + k))
                .sum();
            let scale = self.rhs.iter().fold(S::one(), |acc, b| acc.max(b.abs()));
            self.retire_artificials();
            if infeasibility > S::feas_tol() * scale {
                self.set_cost(self.structural_cost());
                return Ok(LpStatus::Infeasible);
            }
        }
        self.set_cost(self.structural_cost());
        self.primal(start)
    }

    /// Changes the bounds of structural variable `j`, keeping the basis.
    pub fn set_bounds(&mut self, j: usize, lower: S, upper: S) {
        assert!(j < self.n, "bounds can only be changed on structural columns");
        let old = self.value(j);
        self.lo[j] = lower;
        self.hi[j] = upper;
        if matches!(self.state[j], VarState::Basic(_)) {
            return;
        }
        let new_state = match self.state[j] {
            VarState::AtUpper if upper.is_finite() => VarState::AtUpper,
            _ if lower.is_finite() => VarState::AtLower,
            _ if upper.is_finite() => VarState::AtUpper,
            _ => VarState::Zero,
        };
        self.state[j] = new_state;
        let delta = self.value(j) - old;
        if delta != S::zero() {
            self.shift_basics(j, delta);
        }
    }

    /// Restores optimality after bound changes.
    pub fn reoptimize(&mut self) -> Result<LpStatus> {
        if self.since_refactor >= REFACTOR_EVERY && self.refactor().is_err() {
            return self.rebuild();
        }
        match self.warm_attempt() {
            Ok(LpStatus::Optimal) => return Ok(LpStatus::Optimal),
            Ok(status) if self.since_refactor < TRUST_WITHIN => return Ok(status),
            Ok(_) | Err(Error::IterationLimit { .. }) => {}
            Err(e) => return Err(e),
        }
        // Other verdicts are only trusted on a recent factorization.
        if self.refactor().is_ok() {
            match self.warm_attempt() {
                Err(Error::IterationLimit { .. }) => {}
                other => return other,
            }
        }
        self.rebuild()
    }

    fn warm_attempt(&mut self) -> Result<LpStatus> {
        let start = self.iterations;
        self.pricing = Pricing::Dantzig;
        if !self.restore_feasibility(start)? {
            return Ok(LpStatus::Infeasible);
        }
        let status = self.primal(start)?;
        if status == LpStatus::Optimal && !self.certified() {
            // Accumulated round-off: rebuild from the original rows and polish.
            self.refactor()?;
            if !self.restore_feasibility(start)? {
                return Ok(LpStatus::Infeasible);
            }
            return self.primal(start);
        }
        Ok(status)
    }

    /// Solves from scratch under the current bounds, replacing the tableau.
    fn rebuild(&mut self) -> Result<LpStatus> {
        let lp = LinearProgram {
            c: self.lp_cost.clone(),
            a: self.rows.clone(),
            b: self.rhs.clone(),
            bounds: (0..self.n).map(|j| (self.lo[j], self.hi[j])).collect(),
        };
        let iterations = self.iterations;
        *self = Simplex::new(&lp)?;
        self.iterations = iterations;
        self.solve()
    }

    /// Brings the basis back to primal feasibility with the dual simplex.
    /// Without dual feasibility the dual simplex runs on auxiliary costs for
    /// which the current basis is dual feasible.
    fn restore_feasibility(&mut self, start: usize) -> Result<bool> {
        self.flip_dual_infeasible_boxed();
        if self.primal_feasible() {
            return Ok(true);
        }
        let auxiliary = !self.dual_feasible();
        if auxiliary {
            self.set_cost(self.auxiliary_cost());
        }
        let found = self.dual(start)?;
        if auxiliary {
            self.set_cost(self.structural_cost());
        }
        Ok(found)
    }

    /// Primal values of the structural variables.
    pub fn primal_values(&self) -> Vec<S> {
        (0..self.n)
            .map(|j| {
                let v = self.value(j);
                // Clip round-off so bounds hold exactly.
                v.max(self.lo[j]).min(self.hi[j])
            })
            .collect()
    }

    pub fn objective(&self) -> S {
        let x = self.primal_values();
        self.lp_cost.iter().zip(&x).map(|(&c, &x)| c * x).sum()
    }

    pub fn solution(&self, status: LpStatus) -> LpSolution<S> {
        match status {
            LpStatus::Optimal => LpSolution {
                status,
                objective: Some(self.objective()),
                x: Some(self.primal_values()),
                iterations: self.iterations,
            },
            _ => LpSolution {
                status,
                x: None,
                objective: None,
                iterations: self.iterations,
            },
        }
    }

    #[inline]
    fn value(&self, j: usize) -> S {
        match self.state[j] {
            VarState::Basic(r) => self.beta[r],
            VarState::AtLower => self.lo[j],
            VarState::AtUpper => self.hi[j],
            VarState::Zero => S::zero(),
        }
    }

    /// Zero on basics, positive at lower bounds, negative at upper bounds.
    /// Distinct magnitudes keep the dual ratio test free of ties.
    fn auxiliary_cost(&self) -> Vec<S> {
        (0..self.ncols)
            .map(|j| {
                let eps = S::one() + S::from_count((j * 7919) % 1009) / S::lit(1009.0);
                match self.state[j] {
                    VarState::AtLower => eps,
                    VarState::AtUpper => -eps,
                    VarState::Basic(_) | VarState::Zero => S::zero(),
                }
            })
            .collect()
    }

    fn structural_cost(&self) -> Vec<S> {
        let mut c = self.lp_cost.clone();
        c.resize(self.ncols, S::zero());
        c
    }

    fn set_cost(&mut self, cost: Vec<S>) {
        self.cost = cost;
        self.recompute_reduced_costs();
    }

    fn recompute_reduced_costs(&mut self) {
        self.d.copy_from_slice(&self.cost);
        for r in 0..self.m {
            let cb = self.cost[self.basis[r]];
            if cb == S::zero() {
                continue;
            }
            let row = &self.tab[r * self.ncols..(r + 1) * self.ncols];
            for (dk, &t) in self.d.iter_mut().zip(row) {
                *dk -= cb * t;
            }
        }
        for &j in &self.basis {
            self.d[j] = S::zero();
        }
    }

    fn retire_artificials(&mut self) {
        for k in 0..self.artificials.len() {
            let col = self.n + k;
            self.hi[col] = S::zero();
            if let VarState::Basic(r) = self.state[col] {
                if self.beta[r].abs() > S::feas_tol() {
                    continue;
                }
                // Degenerate pivot onto any structural column with a usable
                // entry; a row without one is redundant and keeps its
                // artificial fixed at zero.
                let row = &self.tab[r * self.ncols..r * self.ncols + self.n];
                let entering = (0..self.n)
                    .filter(|&j| !matches!(self.state[j], VarState::Basic(_)))
                    .max_by(|&a, &b| {
                        row[a].abs().partial_cmp(&row[b].abs()).expect("finite tableau")
                    })
                    .filter(|&j| row[j].abs() > S::pivot_tol());
                if let Some(j) = entering {
                    let step = (self.beta[r] - S::zero()) / self.tab[r * self.ncols + j];
                    let x_j = self.value(j) + step;
                    self.update_beta(j, step);
                    self.beta[r] = x_j;
                    self.pivot(r, j, VarState::AtLower);
                }
            } else {
                self.state[col] = VarState::AtLower;
            }
        }
    }

    fn shift_basics(&mut self, j: usize, delta: S) {
        for r in 0..self.m {
            let a = self.tab[r * self.ncols + j];
            if a != S::zero() {
                self.beta[r] -= a * delta;
            }
        }
    }

    /// Moves nonbasic `j` by `step` and updates the basic values accordingly.
    fn update_beta(&mut self, j: usize, step: S) {
        self.shift_basics(j, step);
    }

    fn primal_feasible(&self) -> bool {
        let tol = S::pivot_tol();
        self.basis.iter().zip(&self.beta).all(|(&j, &v)| {
            let scale = S::one().max(v.abs());
            v >= self.lo[j] - tol * scale && v <= self.hi[j] + tol * scale
        })
    }

    fn dual_feasible(&self) -> bool {
        let tol = S::opt_tol();
        (0..self.ncols).all(|j| match self.state[j] {
            VarState::Basic(_) => true,
            _ if self.lo[j] == self.hi[j] => true,
            VarState::AtLower => self.d[j] >= -tol,
            VarState::AtUpper => self.d[j] <= tol,
            VarState::Zero => self.d[j].abs() <= tol,
        })
    }

    /// Boxed nonbasic variables whose reduced cost has the wrong sign move to
    /// their other bound.
    fn flip_dual_infeasible_boxed(&mut self) {
        let tol = S::opt_tol();
        for j in 0..self.ncols {
            if !(self.lo[j].is_finite() && self.hi[j].is_finite()) || self.lo[j] == self.hi[j] {
                continue;
            }
            let target = match self.state[j] {
                VarState::AtLower if self.d[j] < -tol => VarState::AtUpper,
                VarState::AtUpper if self.d[j] > tol => VarState::AtLower,
                _ => continue,
            };
            let old = self.value(j);
            self.state[j] = target;
            let delta = self.value(j) - old;
            self.shift_basics(j, delta);
        }
    }

    /// Residual and bound check against the original rows.
    fn certified(&self) -> bool {
        let x = self.primal_values();
        let tol = S::feas_tol();
        for (row, &b) in self.rows.iter().zip(&self.rhs) {
            let lhs: S = row.iter().map(|&(j, v)| v * x[j]).sum();
            if (lhs - b).abs() > tol * S::one().max(b.abs()) {
                return false;
            }
        }
        (0..self.n).all(|j| {
            let v = self.value(j);
            let scale = S::one().max(v.abs());
            v >= self.lo[j] - S::feas_tol() * scale && v <= self.hi[j] + S::feas_tol() * scale
        })
    }

    fn bump(&mut self) -> Result<()> {
        self.iterations += 1;
        Ok(())
    }

    fn check_cap(&self, start: usize) -> Result<()> {
        if self.iterations - start >= self.iter_cap {
            return Err(Error::IterationLimit {
                limit: self.iter_cap,
            });
        }
        Ok(())
    }

    /// Bounded primal simplex. Requires a primal feasible basis.
    fn primal(&mut self, start: usize) -> Result<LpStatus> {
        let tol = S::opt_tol();
        let ptol = S::pivot_tol();
        let mut streak = 0usize;
        loop {
            self.check_cap(start)?;

            let mut entering: Option<(usize, S)> = None;
            let mut best = S::zero();
            for j in 0..self.ncols {
                if self.lo[j] == self.hi[j] {
                    continue;
                }
                let dj = self.d[j];
                let dir = match self.state[j] {
                    VarState::Basic(_) => continue,
                    VarState::AtLower if dj < -tol => S::one(),
                    VarState::AtUpper if dj > tol => -S::one(),
                    VarState::Zero if dj.abs() > tol => -dj.signum(),
                    _ => continue,
                };
                match self.pricing {
                    Pricing::Bland => {
                        entering = Some((j, dir));
                        break;
                    }
                    Pricing::Dantzig => {
                        if dj.abs() > best {
                            best = dj.abs();
                            entering = Some((j, dir));
                        }
                    }
                }
            }
            let Some((j, dir)) = entering else {
                return Ok(LpStatus::Optimal);
            };

            // Harris ratio test: find the largest step that keeps every basic
            // variable within tolerance of its bounds, then leave on the
            // largest pivot among rows that block within that step. `None`
            // means a bound flip of `j`.
            let ftol = S::feas_tol();
            let flip = self.hi[j] - self.lo[j];
            let mut relaxed = flip;
            let mut candidates = std::mem::take(&mut self.scratch);
            candidates.clear();
            for r in 0..self.m {
                let a = self.tab[r * self.ncols + j];
                if a.abs() <= ptol {
                    continue;
                }
                let var = self.basis[r];
                let rate = -a * dir;
                let room = if rate < S::zero() {
                    self.beta[r] - self.lo[var]
                } else {
                    self.hi[var] - self.beta[r]
                };
                if !room.is_finite() {
                    continue;
                }
                candidates.push(r);
                let limit = (room.max(S::zero()) + ftol) / rate.abs();
                if limit < relaxed {
                    relaxed = limit;
                }
            }
            let mut theta = flip;
            let mut leave: Option<(usize, VarState)> = None;
            if relaxed < flip {
                let mut best_pivot = S::zero();
                for &r in &candidates {
                    let a = self.tab[r * self.ncols + j];
                    let var = self.basis[r];
                    let rate = -a * dir;
                    let (room, hit) = if rate < S::zero() {
                        (self.beta[r] - self.lo[var], VarState::AtLower)
                    } else {
                        (self.hi[var] - self.beta[r], VarState::AtUpper)
                    };
                    let limit = room.max(S::zero()) / rate.abs();
                    if limit > relaxed {
                        continue;
                    }
                    let better = match (self.pricing, leave) {
                        (_, None) => true,
                        (Pricing::Dantzig, _) => a.abs() > best_pivot,
                        // Smallest index among comparable pivots keeps Bland's
                        // guarantee while refusing round-off sized pivots.
                        (Pricing::Bland, Some((lr, _))) => {
                            if a.abs() > S::lit(10.0) * best_pivot {
                                true
                            } else {
                                a.abs() * S::lit(10.0) >= best_pivot && var < self.basis[lr]
                            }
                        }
                    };
                    if better {
                        best_pivot = a.abs();
                        theta = limit;
                        leave = Some((r, hit));
                    }
                }
            }
            self.scratch = candidates;
            if !theta.is_finite() {
                return Ok(LpStatus::Unbounded);
            }
            self.bump()?;
            if theta <= ptol {
                streak += 1;
                if streak >= DEGENERATE_STREAK {
                    self.pricing = Pricing::Bland;
                }
            } else {
                streak = 0;
            }

            let step = dir * theta;
            let x_j = self.value(j) + step;
            self.update_beta(j, step);
            match leave {
                None => {
                    self.state[j] = if dir > S::zero() {
                        VarState::AtUpper
                    } else {
                        VarState::AtLower
                    };
                }
                Some((r, hit)) => {
                    self.beta[r] = x_j;
                    self.pivot(r, j, hit);
                }
            }
        }
    }

    /// Bounded dual simplex. Requires a dual feasible basis. Returns `false`
    /// when the problem is primal infeasible.
    fn dual(&mut self, start: usize) -> Result<bool> {
        let ptol = S::pivot_tol();
        let mut streak = 0usize;
        loop {
            self.check_cap(start)?;

            let mut leave: Option<(usize, bool)> = None;
            let mut worst = S::zero();
            for r in 0..self.m {
                let var = self.basis[r];
                let v = self.beta[r];
                let scale = S::one().max(v.abs());
                let (viol, up) = if v < self.lo[var] - ptol * scale {
                    (self.lo[var] - v, true)
                } else if v > self.hi[var] + ptol * scale {
                    (v - self.hi[var], false)
                } else {
                    continue;
                };
                match self.pricing {
                    Pricing::Bland => {
                        if leave.is_none_or(|(lr, _)| var < self.basis[lr]) {
                            leave = Some((r, up));
                        }
                    }
                    Pricing::Dantzig => {
                        if viol > worst {
                            worst = viol;
                            leave = Some((r, up));
                        }
                    }
                }
            }
            let Some((r, up)) = leave else {
                return Ok(true);
            };

            // beta_r moves by -a·Δx_j; it must move up when `up`. Harris
            // two-pass selection as in the primal ratio test.
            let row = r * self.ncols;
            let otol = S::opt_tol();
            let eligible = |j: usize, tab: &[S]| -> Option<S> {
                if self.lo[j] == self.hi[j] {
                    return None;
                }
                let a = tab[row + j];
                if a.abs() <= ptol {
                    return None;
                }
                let (can_inc, can_dec) = match self.state[j] {
                    VarState::Basic(_) => return None,
                    VarState::AtLower => (true, false),
                    VarState::AtUpper => (false, true),
                    VarState::Zero => (true, true),
                };
                // Increasing j changes beta_r by -a.
                let ok = if up {
                    (can_inc && a < S::zero()) || (can_dec && a > S::zero())
                } else {
                    (can_inc && a > S::zero()) || (can_dec && a < S::zero())
                };
                ok.then_some(a)
            };
            let mut relaxed = S::infinity();
            for j in 0..self.ncols {
                if let Some(a) = eligible(j, &self.tab) {
                    let limit = (self.d[j].abs() + otol) / a.abs();
                    if limit < relaxed {
                        relaxed = limit;
                    }
                }
            }
            let mut entering: Option<usize> = None;
            let mut best_ratio = S::infinity();
            let mut best_pivot = S::zero();
            for j in 0..self.ncols {
                let Some(a) = eligible(j, &self.tab) else {
                    continue;
                };
                let ratio = self.d[j].abs() / a.abs();
                if ratio > relaxed {
                    continue;
                }
                let better = match self.pricing {
                    Pricing::Dantzig => a.abs() > best_pivot,
                    Pricing::Bland => {
                        entering.is_none() || a.abs() > S::lit(10.0) * best_pivot
                    }
                };
                if better {
                    best_ratio = ratio;
                    best_pivot = a.abs();
                    entering = Some(j);
                }
            }
            let Some(j) = entering else {
                return Ok(false);
            };
            self.bump()?;
            if best_ratio <= ptol {
                streak += 1;
                if streak >= DEGENERATE_STREAK {
                    self.pricing = Pricing::Bland;
                }
            } else {
                streak = 0;
            }

            let var = self.basis[r];
            let (target, hit) = if up {
                (self.lo[var], VarState::AtLower)
            } else {
                (self.hi[var], VarState::AtUpper)
            };
            let a = self.tab[row + j];
            let step = (self.beta[r] - target) / a;
            let x_j = self.value(j) + step;
            self.update_beta(j, step);
            self.beta[r] = x_j;
            self.pivot(r, j, hit);
        }
    }

    /// Pivots column `j` into row `r`; the previous basic variable of row `r`
    /// becomes nonbasic in `leaving_state`. `beta` must already be updated.
    fn pivot(&mut self, r: usize, j: usize, leaving_state: VarState) {
        let nc = self.ncols;
        let p = self.tab[r * nc + j];
        let inv = S::one() / p;
        self.since_refactor += 1;

        let mut nz = std::mem::take(&mut self.scratch);
        nz.clear();
        {
            let row = &mut self.tab[r * nc..(r + 1) * nc];
            for (k, v) in row.iter_mut().enumerate() {
                if *v != S::zero() {
                    *v *= inv;
                    nz.push(k);
                }
            }
            row[j] = S::one();
        }

        let (before, rest) = self.tab.split_at_mut(r * nc);
        let (pivot_row, after) = rest.split_at_mut(nc);
        let eliminate = |other: &mut [S]| {
            let f = other[j];
            if f != S::zero() {
                for &k in &nz {
                    other[k] -= f * pivot_row[k];
                }
                other[j] = S::zero();
            }
        };
        before.chunks_exact_mut(nc).for_each(eliminate);
        after.chunks_exact_mut(nc).for_each(eliminate);

        let f = self.d[j];
        if f != S::zero() {
            for &k in &nz {
                self.d[k] -= f * pivot_row[k];
            }
        }
        self.d[j] = S::zero();
        self.scratch = nz;

        let old = self.basis[r];
        self.state[old] = if self.lo[old] == self.hi[old] {
            VarState::AtLower
        } else if !self.lo[old].is_finite() && !self.hi[old].is_finite() {
            VarState::Zero
        } else {
            leaving_state
        };
        self.basis[r] = j;
        self.state[j] = VarState::Basic(r);
    }

    /// Rebuilds `B⁻¹A` and the basic values from the original rows by
    /// Gauss–Jordan elimination on the current basis.
    fn refactor(&mut self) -> Result<()> {
        let nc = self.ncols;
        let m = self.m;
        let mut full = vec![S::zero(); m * (nc + 1)];
        let w = nc + 1;
        for (i, row) in self.rows.iter().enumerate() {
            for &(j, v) in row {
                full[i * w + j] += v;
            }
            full[i * w + nc] = self.rhs[i];
        }
        for (k, &(i, sign)) in self.artificials.iter().enumerate() {
            full[i * w + self.n + k] = sign;
        }
        // Move nonbasic contributions to the right-hand side.
        for j in 0..nc {
            if matches!(self.state[j], VarState::Basic(_)) {
                continue;
            }
            let v = self.value(j);
            if v != S::zero() {
                for i in 0..m {
                    let a = full[i * w + j];
                    full[i * w + nc] -= a * v;
                }
            }
        }

        let basics = self.basis.clone();
        let mut nz = Vec::with_capacity(w);
        let mut assigned = vec![false; m];
        let mut new_basis = vec![usize::MAX; m];
        for &col in &basics {
            let pivot_row = (0..m)
                .filter(|&i| !assigned[i])
                .max_by(|&a, &b| {
                    full[a * w + col]
                        .abs()
                        .partial_cmp(&full[b * w + col].abs())
                        .expect("finite")
                })
                .filter(|&i| full[i * w + col].abs() > S::pivot_tol())
                .ok_or_else(|| Error::invalid("simplex basis became singular"))?;
            assigned[pivot_row] = true;
            new_basis[pivot_row] = col;
            let inv = S::one() / full[pivot_row * w + col];
            nz.clear();
            for k in 0..w {
                let v = &mut full[pivot_row * w + k];
                if *v != S::zero() {
                    *v *= inv;
                    nz.push(k);
                }
            }
            let (before, rest) = full.split_at_mut(pivot_row * w);
            let (prow, after) = rest.split_at_mut(w);
            let eliminate = |other: &mut [S]| {
                let f = other[col];
                if f != S::zero() {
                    for &k in &nz {
                        other[k] -= f * prow[k];
                    }
                    other[col] = S::zero();
                }
            };
            before.chunks_exact_mut(w).for_each(eliminate);
            after.chunks_exact_mut(w).for_each(eliminate);
        }
        for i in 0..m {
            self.tab[i * nc..(i + 1) * nc].copy_from_slice(&full[i * w..i * w + nc]);
            self.beta[i] = full[i * w + nc];
            self.basis[i] = new_basis[i];
            self.state[new_basis[i]] = VarState::Basic(i);
        }
        self.recompute_reduced_costs();
        self.since_refactor = 0;
        Ok(())
    }
}
