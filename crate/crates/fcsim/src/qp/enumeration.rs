//! Exact handling of semi-continuous variables by on/off enumeration.
//!
//! A semi-continuous variable takes the value 0 or a value in `[lo, hi]`
//! with `lo > 0`. With at most a plug-count worth of such variables the
//! global optimum is found exactly by solving the continuous QP for every
//! on/off pattern and keeping the best feasible one. Pattern evaluation is
//! embarrassingly parallel; selection is a deterministic ordered scan so the
//! result never depends on scheduling.

#[cfg(feature = "parallel")]
use rayon::prelude::*;

use super::{solve_qp, QpError, QpProblem, QpSolution, Tolerances};

/// Enumeration bound: above this many on/off variables the pattern count is
/// no longer reasonable to exhaust.
pub const MAX_SEMICONTINUOUS: usize = 12;

/// Pattern counts below this are cheaper to scan on one thread.
#[cfg(feature = "parallel")]
const PARALLEL_THRESHOLD: usize = 32;

/// Marks which variables are semi-continuous and their on-intervals.
#[derive(Debug, Clone)]
pub struct SemiContinuousSpec {
    intervals: Vec<Option<(f64, f64)>>,
}

impl SemiContinuousSpec {
    /// All-continuous spec for `n` variables.
    pub fn new(n: usize) -> Self {
        Self {
            intervals: vec![None; n],
        }
    }

    /// Declares variable `i` semi-continuous with on-interval `[lo, hi]`.
    pub fn set(&mut self, i: usize, lo: f64, hi: f64) {
        self.intervals[i] = Some((lo, hi));
    }

    pub fn count(&self) -> usize {
        self.intervals.iter().filter(|s| s.is_some()).count()
    }

    fn indices(&self) -> Vec<usize> {
        self.intervals
            .iter()
            .enumerate()
            .filter_map(|(i, s)| s.map(|_| i))
            .collect()
    }

    fn validate(&self, n: usize) -> Result<(), QpError> {
        if self.intervals.len() != n {
            return Err(QpError::InvalidProblem(format!(
                "semi-continuous spec covers {} variables, problem has {n}",
                self.intervals.len()
            )));
        }
        for (i, s) in self.intervals.iter().enumerate() {
            if let Some((lo, hi)) = s {
                if !(*lo > 0.0 && lo <= hi) {
                    return Err(QpError::InvalidProblem(format!(
                        "semi-continuous variable {i} needs 0 < lo <= hi, got [{lo}, {hi}]"
                    )));
                }
            }
        }
        Ok(())
    }
}

/// Global minimizer over all on/off patterns. Uses rayon for large pattern
/// counts when the `parallel` feature is enabled.
pub fn solve_semicontinuous(
    p: &QpProblem,
    spec: &SemiContinuousSpec,
    tols: &Tolerances,
) -> Result<QpSolution, QpError> {
    solve_impl(p, spec, tols, cfg!(feature = "parallel"))
}

/// Same as [`solve_semicontinuous`] but always scans patterns sequentially.
pub fn solve_semicontinuous_seq(
    p: &QpProblem,
    spec: &SemiContinuousSpec,
    tols: &Tolerances,
) -> Result<QpSolution, QpError> {
    solve_impl(p, spec, tols, false)
}

fn solve_impl(
    p: &QpProblem,
    spec: &SemiContinuousSpec,
    tols: &Tolerances,
    allow_parallel: bool,
) -> Result<QpSolution, QpError> {
    spec.validate(p.n())?;
    let sc = spec.indices();
    let k = sc.len();
    if k > MAX_SEMICONTINUOUS {
        return Err(QpError::Capacity {
            got: k,
            limit: MAX_SEMICONTINUOUS,
        });
    }
    if k == 0 {
        return solve_qp(p, tols);
    }

    let n_patterns = 1usize << k;
    let solve_pattern = |pattern: usize| -> Result<QpSolution, QpError> {
        let mut sub = p.clone();
        for (bit, &var) in sc.iter().enumerate() {
            if pattern & (1 << bit) != 0 {
                let (lo, hi) = spec.intervals[var].expect("semi-continuous");
                // Intersect the on-interval with the variable's own bounds.
                sub.set_bounds(var, lo.max(p.lb[var]), hi.min(p.ub[var]));
                if sub.lb[var] > sub.ub[var] {
                    return Ok(QpSolution::infeasible(p.n()));
                }
            } else {
                sub.set_bounds(var, 0.0, 0.0);
            }
        }
        let mut sol = solve_qp(&sub, tols)?;
        if sol.is_optimal() {
            // Snap exactly onto the pattern so downstream invariants are
            // bitwise: off variables are 0, on variables sit inside [lo, hi].
            for (bit, &var) in sc.iter().enumerate() {
                if pattern & (1 << bit) != 0 {
                    sol.x[var] = sol.x[var].clamp(sub.lb[var], sub.ub[var]);
                } else {
                    sol.x[var] = 0.0;
                }
            }
            sol.objective = p.objective(&sol.x);
        }
        Ok(sol)
    };

    #[cfg(feature = "parallel")]
    let results: Vec<Result<QpSolution, QpError>> =
        if allow_parallel && n_patterns >= PARALLEL_THRESHOLD {
            (0..n_patterns)
                .into_par_iter()
                .map(solve_pattern)
                .collect()
        } else {
            (0..n_patterns).map(solve_pattern).collect()
        };
    #[cfg(not(feature = "parallel"))]
    let results: Vec<Result<QpSolution, QpError>> = {
        let _ = allow_parallel;
        (0..n_patterns).map(solve_pattern).collect()
    };

    let mut best: Option<(usize, QpSolution)> = None;
    for (pattern, result) in results.into_iter().enumerate() {
        let sol = result?;
        if !sol.is_optimal() {
            continue;
        }
        match &best {
            None => best = Some((pattern, sol)),
            Some((bp, bs)) => {
                let tie = tols.objective_tie * bs.objective.abs().max(1.0);
                if sol.objective < bs.objective - tie {
                    best = Some((pattern, sol));
                } else if (sol.objective - bs.objective).abs() <= tie
                    && prefer_pattern(pattern, *bp, k)
                {
                    best = Some((pattern, sol));
                }
            }
        }
    }

    Ok(best
        .map(|(_, sol)| sol)
        .unwrap_or_else(|| QpSolution::infeasible(p.n())))
}

/// Tie-break between equal-objective patterns: more variables on first, then
/// the on-set that switches the lowest-index variable on.
fn prefer_pattern(candidate: usize, incumbent: usize, k: usize) -> bool {
    let on = |p: usize| (0..k).filter(|b| p & (1 << b) != 0).count();
    let (c_on, i_on) = (on(candidate), on(incumbent));
    if c_on != i_on {
        return c_on > i_on;
    }
    for bit in 0..k {
        let c = candidate & (1 << bit) != 0;
        let i = incumbent & (1 << bit) != 0;
        if c != i {
            return c;
        }
    }
    false
}
