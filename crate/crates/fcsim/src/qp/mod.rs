//! Small dense convex quadratic programming.
//!
//! Problems here have at most a handful of variables (per-plug charging
//! powers plus storage and grid power), so everything is dense and exact:
//! a primal active-set method on the KKT system, plus an exhaustive on/off
//! enumerator for semi-continuous variables.

mod enumeration;
mod solver;

pub use enumeration::{
    solve_semicontinuous, solve_semicontinuous_seq, SemiContinuousSpec, MAX_SEMICONTINUOUS,
};
pub use solver::{solve_qp, solve_qp_with_start};

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum QpError {
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("too many semi-continuous variables: {got} (limit {limit})")]
    Capacity { got: usize, limit: usize },
    #[error("solver failure: {0}")]
    SolverFailure(String),
}

/// Numerical tolerances, centralized so control behaviour never depends on
/// scattered magic numbers.
#[derive(Debug, Clone, Copy)]
pub struct Tolerances {
    /// Absolute feasibility tolerance on (row-normalized) constraints.
    pub feasibility: f64,
    /// Bound on the scaled KKT residual of an optimal solution.
    pub kkt: f64,
    /// Symmetry tolerance for the cost matrix, relative to its magnitude.
    pub symmetry: f64,
    /// Eigenvalue floor below which the cost matrix is rejected as non-PSD,
    /// relative to the objective scale.
    pub psd: f64,
    /// Window within which two pattern objectives count as tied.
    pub objective_tie: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            feasibility: 1e-9,
            kkt: 1e-8,
            symmetry: 1e-12,
            psd: 1e-9,
            objective_tie: 1e-9,
        }
    }
}

/// `minimize 0.5 x'Qx + c'x` subject to bounds, `a_ineq·x <= b_ineq` and
/// `a_eq·x = b_eq`.
#[derive(Debug, Clone)]
pub struct QpProblem {
    /// Symmetric positive-semidefinite cost matrix.
    pub q: DMatrix<f64>,
    /// Linear cost vector.
    pub c: DVector<f64>,
    /// Per-variable lower bounds (`-inf` allowed).
    pub lb: DVector<f64>,
    /// Per-variable upper bounds (`+inf` allowed).
    pub ub: DVector<f64>,
    /// Inequality rows `(a, b)` meaning `a·x <= b`.
    pub a_ineq: Vec<(DVector<f64>, f64)>,
    /// Equality rows `(a, b)` meaning `a·x = b`.
    pub a_eq: Vec<(DVector<f64>, f64)>,
}

impl QpProblem {
    /// Unconstrained problem skeleton with free variables.
    pub fn new(q: DMatrix<f64>, c: DVector<f64>) -> Self {
        let n = c.len();
        Self {
            q,
            c,
            lb: DVector::from_element(n, f64::NEG_INFINITY),
            ub: DVector::from_element(n, f64::INFINITY),
            a_ineq: Vec::new(),
            a_eq: Vec::new(),
        }
    }

    pub fn n(&self) -> usize {
        self.c.len()
    }

    pub fn set_bounds(&mut self, i: usize, lb: f64, ub: f64) {
        self.lb[i] = lb;
        self.ub[i] = ub;
    }

    pub fn add_ineq(&mut self, a: DVector<f64>, b: f64) {
        self.a_ineq.push((a, b));
    }

    pub fn add_eq(&mut self, a: DVector<f64>, b: f64) {
        self.a_eq.push((a, b));
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * (x.transpose() * &self.q * x)[(0, 0)] + self.c.dot(x)
    }

    /// Maximum violation of bounds and linear constraints at `x`.
    pub fn max_violation(&self, x: &DVector<f64>) -> f64 {
        let mut v: f64 = 0.0;
        for i in 0..self.n() {
            v = v.max(self.lb[i] - x[i]).max(x[i] - self.ub[i]);
        }
        for (a, b) in &self.a_ineq {
            let norm = a.amax().max(1.0);
            v = v.max((a.dot(x) - b) / norm);
        }
        for (a, b) in &self.a_eq {
            let norm = a.amax().max(1.0);
            v = v.max((a.dot(x) - b).abs() / norm);
        }
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Optimal,
    Infeasible,
}

/// Solver output. For `Infeasible` the point is meaningless and the
/// objective is `+inf`.
#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub objective: f64,
    pub status: QpStatus,
    /// Scaled KKT residual: the maximum of primal violation (row-normalized),
    /// dual sign violation, scaled complementarity and stationarity divided
    /// by the objective magnitude `max(1, |Q|_max, |c|_max)`. The objective
    /// scaling keeps the certificate meaningful when weights span many
    /// orders of magnitude.
    pub kkt_residual: f64,
}

impl QpSolution {
    pub(crate) fn infeasible(n: usize) -> Self {
        Self {
            x: DVector::zeros(n),
            objective: f64::INFINITY,
            status: QpStatus::Infeasible,
            kkt_residual: 0.0,
        }
    }

    pub fn is_optimal(&self) -> bool {
        self.status == QpStatus::Optimal
    }
}
