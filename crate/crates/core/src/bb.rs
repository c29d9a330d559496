//! Branch-and-bound over LP relaxations for programs with binary variables
//! and complementarity pairs `x_i · x_j = 0`.
//!
//! Every node is an LP with some variables fixed. A node whose relaxation
//! violates integrality is split on its most fractional binary; a node whose
//! relaxation violates complementarity is split on its most violated pair
//! into a child with `x_i = 0` and a child with `x_j = 0`. The search is depth
//! first; of two siblings the one with the lower relaxation bound is explored
//! first. All node LPs are re-solved on one tableau that follows the search.

use crate::error::{Error, Result};
use crate::lp::{LinearProgram, LpStatus, Simplex};
use crate::scalar::Scalar;

pub const DEFAULT_NODE_LIMIT: usize = 200_000;

/// An LP plus integrality and complementarity requirements.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedProgram<S> {
    pub lp: LinearProgram<S>,
    pub binaries: Vec<usize>,
    pub comp_pairs: Vec<(usize, usize)>,
}

impl<S: Scalar> MixedProgram<S> {
    pub fn new(lp: LinearProgram<S>) -> Self {
        MixedProgram {
            lp,
            binaries: Vec::new(),
            comp_pairs: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.lp.validate()?;
        let n = self.lp.num_vars();
        for &j in &self.binaries {
            if j >= n {
                return Err(Error::invalid(format!("binary index {j} out of range")));
            }
            if self.lp.bounds[j] != (S::zero(), S::one()) {
                return Err(Error::invalid(format!("binary {j} must have bounds [0, 1]")));
            }
        }
        for &(i, j) in &self.comp_pairs {
            if i >= n || j >= n || i == j {
                return Err(Error::invalid(format!("bad complementarity pair ({i}, {j})")));
            }
            if self.lp.bounds[i].0 != S::zero() || self.lp.bounds[j].0 != S::zero() {
                return Err(Error::invalid(format!(
                    "complementarity pair ({i}, {j}) needs lower bounds of zero"
                )));
            }
        }
        Ok(())
    }

    /// True when `x` satisfies integrality and complementarity within `tol`.
    pub fn is_feasible_point(&self, x: &[S], tol: S) -> bool {
        self.binaries
            .iter()
            .all(|&j| x[j].abs() <= tol || (x[j] - S::one()).abs() <= tol)
            && self
                .comp_pairs
                .iter()
                .all(|&(i, j)| x[i].min(x[j]) <= tol)
    }
}

/// The LP with integrality relaxed to `[0, 1]` and complementarity dropped.
pub fn relax<S: Scalar>(mp: &MixedProgram<S>) -> LinearProgram<S> {
    let mut lp = mp.lp.clone();
    for &j in &mp.binaries {
        lp.bounds[j] = (S::zero(), S::one());
    }
    lp
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BbStatus {
    Optimal,
    Infeasible,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BbSolution<S> {
    pub status: BbStatus,
    pub x: Option<Vec<S>>,
    pub objective: Option<S>,
    pub nodes_explored: usize,
}

/// Which requirement is branched on first when a node violates both.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BranchPriority {
    BinariesFirst,
    ComplementarityFirst,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BbOptions {
    pub node_limit: usize,
    pub priority: BranchPriority,
    /// Absolute and relative fathoming gap.
    pub gap: f64,
}

impl Default for BbOptions {
    fn default() -> Self {
        BbOptions {
            node_limit: DEFAULT_NODE_LIMIT,
            priority: BranchPriority::ComplementarityFirst,
            gap: 1e-9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Fix<S> {
    var: usize,
    lo: S,
    hi: S,
}

struct Node<S> {
    fixes: Vec<Fix<S>>,
    bound: S,
    x: Vec<S>,
}

enum Branch {
    Binary(usize),
    Pair(usize, usize),
}

struct Search<'a, S> {
    mp: &'a MixedProgram<S>,
    simplex: Simplex<S>,
    applied: Vec<Fix<S>>,
    nodes: usize,
    opts: BbOptions,
}

impl<S: Scalar> Search<'_, S> {
    /// Moves the tableau to the node described by `target` and re-solves.
    fn evaluate(&mut self, target: &[Fix<S>]) -> Result<Option<(S, Vec<S>)>> {
        let common = self
            .applied
            .iter()
            .zip(target)
            .take_while(|(a, b)| a == b)
            .count();
        let mut touched: Vec<usize> = self.applied[common..]
            .iter()
            .chain(&target[common..])
            .map(|f| f.var)
            .collect();
        touched.sort_unstable();
        touched.dedup();
        for var in touched {
            let (mut lo, mut hi) = self.mp.lp.bounds[var];
            for f in target.iter().filter(|f| f.var == var) {
                lo = lo.max(f.lo);
                hi = hi.min(f.hi);
            }
            self.simplex.set_bounds(var, lo, hi);
        }
        self.applied = target.to_vec();

        match self.simplex.reoptimize()? {
            LpStatus::Optimal => Ok(Some((self.simplex.objective(), self.simplex.primal_values()))),
            LpStatus::Infeasible => Ok(None),
            LpStatus::Unbounded => Err(Error::invalid(
                "LP relaxation is unbounded; add finite bounds to the mixed program",
            )),
        }
    }

    fn choose_branch(&self, x: &[S]) -> Option<Branch> {
        let tol = S::int_tol();
        let binary = || {
            let mut best: Option<(usize, S)> = None;
            for &j in &self.mp.binaries {
                let frac = x[j].min(S::one() - x[j]);
                if frac > tol && best.is_none_or(|(_, f)| frac > f) {
                    best = Some((j, frac));
                }
            }
            best.map(|(j, _)| Branch::Binary(j))
        };
        let pair = || {
            let mut best: Option<(usize, S)> = None;
            for (k, &(i, j)) in self.mp.comp_pairs.iter().enumerate() {
                if x[i].min(x[j]) <= tol {
                    continue;
                }
                let violation = x[i] * x[j];
                if best.is_none_or(|(_, v)| violation > v) {
                    best = Some((k, violation));
                }
            }
            best.map(|(k, _)| {
                let (i, j) = self.mp.comp_pairs[k];
                Branch::Pair(i, j)
            })
        };
        match self.opts.priority {
            BranchPriority::BinariesFirst => binary().or_else(pair),
            BranchPriority::ComplementarityFirst => pair().or_else(binary),
        }
    }

    fn incumbent_error(&self, incumbent: Option<(S, Vec<S>)>) -> Error {
        Error::NodeLimit {
            limit: self.opts.node_limit,
            incumbent_objective: incumbent.as_ref().map(|(v, _)| v.as_f64()),
            incumbent_x: incumbent.map(|(_, x)| x.iter().map(|v| v.as_f64()).collect()),
        }
    }
}

/// Solves `mp` to global optimality with the default options and the given
/// node budget.
pub fn solve_mixed<S: Scalar>(mp: &MixedProgram<S>, node_limit: usize) -> Result<BbSolution<S>> {
    solve_mixed_with(
        mp,
        &BbOptions {
            node_limit,
            ..BbOptions::default()
        },
    )
}

pub fn solve_mixed_with<S: Scalar>(mp: &MixedProgram<S>, opts: &BbOptions) -> Result<BbSolution<S>> {
    mp.validate()?;
    let mut simplex = Simplex::new(&relax(mp))?;
    let root = simplex.solve()?;
    let mut search = Search {
        mp,
        simplex,
        applied: Vec::new(),
        nodes: 1,
        opts: *opts,
    };
    let infeasible = |nodes| BbSolution {
        status: BbStatus::Infeasible,
        x: None,
        objective: None,
        nodes_explored: nodes,
    };
    match root {
        LpStatus::Infeasible => return Ok(infeasible(1)),
        LpStatus::Unbounded => {
            return Err(Error::invalid(
                "LP relaxation is unbounded; add finite bounds to the mixed program",
            ))
        }
        LpStatus::Optimal => {}
    }

    let gap = S::lit(opts.gap);
    let bound_slack = S::feas_tol();
    let prunes = |bound: S, incumbent: &Option<(S, Vec<S>)>| match incumbent {
        Some((best, _)) => bound >= *best - gap.max(gap * best.abs()),
        None => false,
    };

    let mut incumbent: Option<(S, Vec<S>)> = None;
    let mut stack = vec![Node {
        fixes: Vec::new(),
        bound: search.simplex.objective(),
        x: search.simplex.primal_values(),
    }];

    while let Some(node) = stack.pop() {
        if prunes(node.bound, &incumbent) {
            continue;
        }
        let Some(branch) = search.choose_branch(&node.x) else {
            incumbent = Some((node.bound, node.x));
            continue;
        };
        let (first, second) = match branch {
            Branch::Binary(j) => (
                Fix { var: j, lo: S::zero(), hi: S::zero() },
                Fix { var: j, lo: S::one(), hi: S::one() },
            ),
            Branch::Pair(i, j) => (
                Fix { var: i, lo: S::zero(), hi: S::zero() },
                Fix { var: j, lo: S::zero(), hi: S::zero() },
            ),
        };

        let mut children = Vec::with_capacity(2);
        for fix in [first, second] {
            if search.nodes >= opts.node_limit {
                return Err(search.incumbent_error(incumbent));
            }
            search.nodes += 1;
            let mut fixes = node.fixes.clone();
            fixes.push(fix);
            if let Some((bound, x)) = search.evaluate(&fixes)? {
                // A child's relaxation can never beat its parent's.
                debug_assert!(
                    bound >= node.bound - bound_slack * S::one().max(node.bound.abs()),
                    "child bound {bound} below parent bound {}",
                    node.bound
                );
                if !prunes(bound, &incumbent) {
                    children.push(Node { fixes, bound, x });
                }
            }
        }
        // Better child on top of the stack; ties keep the `first` child on top.
        children.sort_by(|a, b| b.bound.partial_cmp(&a.bound).expect("finite bounds"));
        if children.len() == 2 && children[0].bound == children[1].bound {
            children.swap(0, 1);
        }
        stack.extend(children);
    }

    Ok(match incumbent {
        Some((objective, x)) => BbSolution {
            status: BbStatus::Optimal,
            x: Some(x),
            objective: Some(objective),
            nodes_explored: search.nodes,
        },
        None => infeasible(search.nodes),
    })
}
