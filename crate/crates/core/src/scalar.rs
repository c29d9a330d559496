//! Scalar abstraction for the numerical core.
//!
//! The solvers, quantile routines and conformal calibration are written
//! against [`Scalar`] so they can be instantiated at `f64` (the default used
//! throughout the pipeline) or `f32` for cheap experiments. Tolerances are
//! part of the trait because a single pivot threshold cannot serve both
//! precisions.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};

/// Floating-point type usable by the solvers.
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + NumAssign
    + Sum
    + Copy
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    /// Smallest magnitude accepted as a simplex pivot.
    const PIVOT_TOL: f64;
    /// Slack allowed on bound and row feasibility.
    const FEAS_TOL: f64;
    /// Reduced-cost tolerance for optimality tests.
    const OPT_TOL: f64;
    /// Tolerance on integrality and complementarity in branch-and-bound.
    const INT_TOL: f64;

    /// Next representable value towards `+inf`.
    fn next_up(self) -> Self;
    /// Next representable value towards `-inf`.
    fn next_down(self) -> Self;

    /// Lossy conversion from an `f64` literal.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    #[inline]
    fn from_count(n: usize) -> Self {
        Self::from_usize(n).expect("count representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().expect("scalar converts to f64")
    }

    #[inline]
    fn pivot_tol() -> Self {
        Self::lit(Self::PIVOT_TOL)
    }

    #[inline]
    fn feas_tol() -> Self {
        Self::lit(Self::FEAS_TOL)
    }

    #[inline]
    fn opt_tol() -> Self {
        Self::lit(Self::OPT_TOL)
    }

    #[inline]
    fn int_tol() -> Self {
        Self::lit(Self::INT_TOL)
    }
}

impl Scalar for f64 {
    fn next_up(self) -> Self {
        f64::next_up(self)
    }

    fn next_down(self) -> Self {
        f64::next_down(self)
    }

    const PIVOT_TOL: f64 = 1e-9;
    const FEAS_TOL: f64 = 1e-7;
    const OPT_TOL: f64 = 1e-9;
    const INT_TOL: f64 = 1e-6;
}

impl Scalar for f32 {
    fn next_up(self) -> Self {
        f32::next_up(self)
    }

    fn next_down(self) -> Self {
        f32::next_down(self)
    }

    const PIVOT_TOL: f64 = 1e-5;
    const FEAS_TOL: f64 = 1e-4;
    const OPT_TOL: f64 = 1e-5;
    const INT_TOL: f64 = 1e-3;
}
