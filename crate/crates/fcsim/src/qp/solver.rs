//! Primal active-set solver for small dense convex QPs.
//!
//! The working set is iterated on the dense KKT system. Positive-semidefinite
//! cost matrices are handled by a tiny ridge during iteration followed by a
//! polish solve of the unridged KKT system on the final working set, so the
//! returned point carries an honest KKT certificate for the original problem.
//! Feasible starts are found with a slack-relaxation phase whose own start is
//! feasible by construction.

use nalgebra::{DMatrix, DVector};

use super::{QpError, QpProblem, QpSolution, QpStatus, Tolerances};

const RIDGE_TARGET: f64 = 1e-9;
const RIDGE_RETRY: f64 = 1e-11;
const STEP_TOL: f64 = 1e-11;
const MULTIPLIER_TOL: f64 = 1e-9;
const DIVERGENCE_LIMIT: f64 = 1e13;
/// Violations above this at the end of the feasibility phase mean the
/// problem is genuinely infeasible rather than numerically marginal.
const INFEASIBLE_GAP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum RowKind {
    Eq,
    Ineq,
}

#[derive(Debug, Clone)]
struct Row {
    a: DVector<f64>,
    b: f64,
    kind: RowKind,
}

struct Prepared {
    n: usize,
    scale: f64,
    /// Objective scaled by `1/scale`.
    qs: DMatrix<f64>,
    cs: DVector<f64>,
    ridge: f64,
    rows: Vec<Row>,
}

enum Prep {
    Ready(Prepared),
    Infeasible,
}

/// Solve a QP from scratch; a feasible start is found automatically.
pub fn solve_qp(p: &QpProblem, tols: &Tolerances) -> Result<QpSolution, QpError> {
    let prep = match preprocess(p, tols)? {
        Prep::Ready(prep) => prep,
        Prep::Infeasible => return Ok(QpSolution::infeasible(p.n())),
    };
    let x0 = clamp_into_bounds(p);
    let x0 = if max_row_violation(&prep.rows, &x0) <= tols.feasibility {
        x0
    } else {
        match phase_one(p, tols)? {
            Some(x) => x,
            None => return Ok(QpSolution::infeasible(p.n())),
        }
    };
    finish(p, prep, x0, tols)
}

/// Solve with a caller-supplied start. Falls back to the generic path when
/// the start is not feasible.
pub fn solve_qp_with_start(
    p: &QpProblem,
    x0: &DVector<f64>,
    tols: &Tolerances,
) -> Result<QpSolution, QpError> {
    if x0.len() != p.n() {
        return Err(QpError::InvalidProblem(format!(
            "start point has {} entries for {} variables",
            x0.len(),
            p.n()
        )));
    }
    let prep = match preprocess(p, tols)? {
        Prep::Ready(prep) => prep,
        Prep::Infeasible => return Ok(QpSolution::infeasible(p.n())),
    };
    if max_row_violation(&prep.rows, x0) <= tols.feasibility {
        finish(p, prep, x0.clone(), tols)
    } else {
        solve_qp(p, tols)
    }
}

fn finish(
    p: &QpProblem,
    prep: Prepared,
    x0: DVector<f64>,
    tols: &Tolerances,
) -> Result<QpSolution, QpError> {
    let (x, lambda, residual) = solve_prepared(&prep, x0, tols)?;
    let (x, residual) = if residual > tols.kkt && prep.ridge > RIDGE_RETRY {
        // The larger iteration ridge left too much bias; retry tighter from
        // the already-feasible iterate.
        let retry = Prepared {
            ridge: RIDGE_RETRY,
            ..prep
        };
        let (x2, _l2, r2) = solve_prepared(&retry, x, tols)?;
        (x2, r2)
    } else {
        (x, residual)
    };
    let _ = lambda;
    if residual > tols.kkt {
        return Err(QpError::SolverFailure(format!(
            "KKT residual {residual:.3e} exceeds tolerance {:.1e}",
            tols.kkt
        )));
    }
    Ok(QpSolution {
        objective: p.objective(&x),
        x,
        status: QpStatus::Optimal,
        kkt_residual: residual,
    })
}

fn clamp_into_bounds(p: &QpProblem) -> DVector<f64> {
    DVector::from_fn(p.n(), |i, _| 0.0f64.max(p.lb[i]).min(p.ub[i]))
}

fn preprocess(p: &QpProblem, tols: &Tolerances) -> Result<Prep, QpError> {
    let n = p.n();
    if p.q.nrows() != n || p.q.ncols() != n || p.lb.len() != n || p.ub.len() != n {
        return Err(QpError::InvalidProblem(format!(
            "inconsistent dimensions: q {}x{}, c {}, lb {}, ub {}",
            p.q.nrows(),
            p.q.ncols(),
            n,
            p.lb.len(),
            p.ub.len()
        )));
    }
    for (a, _) in p.a_ineq.iter().chain(p.a_eq.iter()) {
        if a.len() != n {
            return Err(QpError::InvalidProblem(format!(
                "constraint row has {} entries for {} variables",
                a.len(),
                n
            )));
        }
    }
    for i in 0..n {
        if p.lb[i] > p.ub[i] {
            return Err(QpError::InvalidProblem(format!(
                "bounds for variable {i} are crossed: [{}, {}]",
                p.lb[i], p.ub[i]
            )));
        }
    }

    let q_mag = if n > 0 { p.q.amax() } else { 0.0 };
    let c_mag = if n > 0 { p.c.amax() } else { 0.0 };
    let scale = 1.0f64.max(q_mag).max(c_mag);
    let sym_tol = tols.symmetry * scale.max(1.0);
    for i in 0..n {
        for j in (i + 1)..n {
            if (p.q[(i, j)] - p.q[(j, i)]).abs() > sym_tol {
                return Err(QpError::InvalidProblem(format!(
                    "cost matrix is not symmetric at ({i}, {j})"
                )));
            }
        }
    }

    let qs = &p.q / scale;
    let cs = &p.c / scale;
    let qs_sym = (&qs + qs.transpose()) * 0.5;

    let min_eig = if n > 0 {
        qs_sym
            .clone()
            .symmetric_eigen()
            .eigenvalues
            .iter()
            .fold(f64::INFINITY, |m, &v| m.min(v))
    } else {
        0.0
    };
    if min_eig < -tols.psd {
        return Err(QpError::InvalidProblem(format!(
            "cost matrix is not positive semidefinite (scaled eigenvalue {min_eig:.3e})"
        )));
    }
    let ridge = (RIDGE_TARGET - min_eig).max(0.0);

    // Assemble rows: equalities first (general, then fixed variables), then
    // inequalities (general, upper bounds, lower bounds). Each row is
    // normalized to unit max-coefficient so feasibility tolerances compare.
    let mut rows = Vec::new();
    let mut push_row = |a: DVector<f64>, b: f64, kind: RowKind| -> Result<bool, QpError> {
        let norm = a.amax();
        if norm <= f64::MIN_POSITIVE {
            let violated = match kind {
                RowKind::Ineq => b < -tols.feasibility,
                RowKind::Eq => b.abs() > tols.feasibility,
            };
            return Ok(!violated);
        }
        rows.push(Row {
            a: a / norm,
            b: b / norm,
            kind,
        });
        Ok(true)
    };

    for (a, b) in &p.a_eq {
        if !push_row(a.clone(), *b, RowKind::Eq)? {
            return Ok(Prep::Infeasible);
        }
    }
    for i in 0..n {
        if p.lb[i] == p.ub[i] {
            let mut a = DVector::zeros(n);
            a[i] = 1.0;
            push_row(a, p.lb[i], RowKind::Eq)?;
        }
    }
    for (a, b) in &p.a_ineq {
        if !push_row(a.clone(), *b, RowKind::Ineq)? {
            return Ok(Prep::Infeasible);
        }
    }
    for i in 0..n {
        if p.lb[i] != p.ub[i] && p.ub[i].is_finite() {
            let mut a = DVector::zeros(n);
            a[i] = 1.0;
            push_row(a, p.ub[i], RowKind::Ineq)?;
        }
    }
    for i in 0..n {
        if p.lb[i] != p.ub[i] && p.lb[i].is_finite() {
            let mut a = DVector::zeros(n);
            a[i] = -1.0;
            push_row(a, -p.lb[i], RowKind::Ineq)?;
        }
    }

    match reduce_equalities(rows, n, tols) {
        Some(rows) => Ok(Prep::Ready(Prepared {
            n,
            scale,
            qs: qs_sym,
            cs,
            ridge,
            rows,
        })),
        None => Ok(Prep::Infeasible),
    }
}

/// Drops linearly dependent equality rows, detecting inconsistent ones.
fn reduce_equalities(rows: Vec<Row>, n: usize, _tols: &Tolerances) -> Option<Vec<Row>> {
    let mut kept: Vec<Row> = Vec::with_capacity(rows.len());
    let mut basis: Vec<Row> = Vec::new();
    for row in rows {
        if row.kind != RowKind::Eq {
            kept.push(row);
            continue;
        }
        if basis.is_empty() {
            basis.push(row.clone());
            kept.push(row);
            continue;
        }
        let e = DMatrix::from_fn(basis.len(), n, |i, j| basis[i].a[j]);
        let et = e.transpose();
        let svd = et.clone().svd(true, true);
        match svd.solve(&row.a, 1e-12) {
            Ok(y) => {
                let residual = (&et * &y - &row.a).amax();
                if residual <= 1e-10 {
                    // Dependent: keep only if consistent.
                    let predicted: f64 = y
                        .iter()
                        .zip(basis.iter())
                        .map(|(yi, r)| yi * r.b)
                        .sum();
                    if (predicted - row.b).abs() > 1e-8 * (1.0 + row.b.abs()) {
                        return None;
                    }
                } else {
                    basis.push(row.clone());
                    kept.push(row);
                }
            }
            Err(_) => {
                basis.push(row.clone());
                kept.push(row);
            }
        }
    }
    Some(kept)
}

fn max_row_violation(rows: &[Row], x: &DVector<f64>) -> f64 {
    rows.iter().fold(0.0f64, |m, r| {
        let v = r.a.dot(x) - r.b;
        match r.kind {
            RowKind::Ineq => m.max(v),
            RowKind::Eq => m.max(v.abs()),
        }
    })
}

/// Active-set iteration plus polish. Requires `x0` feasible within the
/// feasibility tolerance. Returns `(x, multipliers, kkt_residual)`.
fn solve_prepared(
    prep: &Prepared,
    x0: DVector<f64>,
    tols: &Tolerances,
) -> Result<(DVector<f64>, Vec<f64>, f64), QpError> {
    let n = prep.n;
    let rows = &prep.rows;
    if n == 0 {
        return Ok((x0, vec![0.0; rows.len()], 0.0));
    }
    let q_ridged = &prep.qs + DMatrix::<f64>::identity(n, n) * prep.ridge;

    let mut x = x0;
    let mut working: Vec<usize> = rows
        .iter()
        .enumerate()
        .filter(|(_, r)| r.kind == RowKind::Eq)
        .map(|(i, _)| i)
        .collect();
    let mut lambda = vec![0.0; rows.len()];

    let max_iter = 50 * (n + rows.len()) + 100;
    let mut iter = 0;
    loop {
        iter += 1;
        if iter > max_iter {
            return Err(QpError::SolverFailure(format!(
                "active-set iteration limit {max_iter} reached"
            )));
        }
        if n > 0 && x.amax() > DIVERGENCE_LIMIT {
            return Err(QpError::SolverFailure(
                "iterate diverged; problem is unbounded or badly scaled".to_string(),
            ));
        }

        let g = &q_ridged * &x + &prep.cs;
        let (d, lam_w) = kkt_step(&q_ridged, rows, &working, &x, &g)?;

        if d.amax() <= STEP_TOL * x.amax().max(1.0) {
            lambda.iter_mut().for_each(|l| *l = 0.0);
            for (k, &ri) in working.iter().enumerate() {
                lambda[ri] = lam_w[k];
            }
            // Most negative multiplier on an inequality row, lowest index on ties.
            let mut drop: Option<(usize, f64)> = None;
            for (k, &ri) in working.iter().enumerate() {
                if rows[ri].kind == RowKind::Ineq && lam_w[k] < -MULTIPLIER_TOL {
                    if drop.map_or(true, |(_, best)| lam_w[k] < best) {
                        drop = Some((k, lam_w[k]));
                    }
                }
            }
            match drop {
                Some((k, _)) => {
                    working.remove(k);
                    continue;
                }
                None => break,
            }
        }

        // Step length limited by the nearest inactive inequality.
        let mut alpha = 1.0f64;
        let mut blocker: Option<usize> = None;
        let d_mag = d.amax().max(f64::MIN_POSITIVE);
        for (ri, row) in rows.iter().enumerate() {
            if row.kind != RowKind::Ineq || working.contains(&ri) {
                continue;
            }
            let ad = row.a.dot(&d);
            if ad <= 1e-12 * d_mag {
                continue;
            }
            let slack = (row.b - row.a.dot(&x)).max(0.0);
            let a_i = slack / ad;
            if a_i < alpha {
                alpha = a_i;
                blocker = Some(ri);
            }
        }

        x += &d * alpha;
        if let Some(bi) = blocker {
            add_to_working_set(rows, &mut working, bi, n)?;
        }
    }

    // Polish: re-solve the KKT system on the final working set without the
    // ridge so the certificate refers to the original matrix.
    let residual = kkt_residual(prep, &x, &lambda);
    if prep.ridge > 0.0 {
        if let Some((xp, lp)) = polish(prep, &working, tols) {
            let mut lambda_p = vec![0.0; rows.len()];
            for (k, &ri) in working.iter().enumerate() {
                lambda_p[ri] = lp[k];
            }
            let rp = kkt_residual(prep, &xp, &lambda_p);
            if rp <= residual {
                return Ok((xp, lambda_p, rp));
            }
        }
    }
    Ok((x, lambda, residual))
}

/// Solves the equality-constrained step on the current working set.
fn kkt_step(
    q: &DMatrix<f64>,
    rows: &[Row],
    working: &[usize],
    x: &DVector<f64>,
    g: &DVector<f64>,
) -> Result<(DVector<f64>, Vec<f64>), QpError> {
    let n = q.nrows();
    let k = working.len();
    let dim = n + k;
    let mut kkt = DMatrix::zeros(dim, dim);
    kkt.view_mut((0, 0), (n, n)).copy_from(q);
    for (j, &ri) in working.iter().enumerate() {
        for i in 0..n {
            kkt[(i, n + j)] = rows[ri].a[i];
            kkt[(n + j, i)] = rows[ri].a[i];
        }
    }
    let mut rhs = DVector::zeros(dim);
    for i in 0..n {
        rhs[i] = -g[i];
    }
    for (j, &ri) in working.iter().enumerate() {
        rhs[n + j] = rows[ri].b - rows[ri].a.dot(x);
    }

    let sol = match kkt.clone().full_piv_lu().solve(&rhs) {
        Some(z) => z,
        None => kkt
            .svd(true, true)
            .solve(&rhs, 1e-12)
            .map_err(|e| QpError::SolverFailure(format!("singular KKT system: {e}")))?,
    };
    let d = sol.rows(0, n).into_owned();
    let lam = (0..k).map(|j| sol[n + j]).collect();
    Ok((d, lam))
}

/// Adds a blocking row, exchanging out a dependent inequality if needed.
fn add_to_working_set(
    rows: &[Row],
    working: &mut Vec<usize>,
    blocker: usize,
    n: usize,
) -> Result<(), QpError> {
    if !working.is_empty() {
        let aw = DMatrix::from_fn(working.len(), n, |i, j| rows[working[i]].a[j]);
        let awt = aw.transpose();
        if let Ok(y) = awt.clone().svd(true, true).solve(&rows[blocker].a, 1e-12) {
            let residual = (&awt * &y - &rows[blocker].a).amax();
            if residual <= 1e-10 {
                // Dependent: swap out the lowest-index inequality that
                // participates in the dependence.
                let victim = working
                    .iter()
                    .enumerate()
                    .find(|(k, &ri)| rows[ri].kind == RowKind::Ineq && y[*k].abs() > 1e-8)
                    .map(|(k, _)| k);
                match victim {
                    Some(k) => {
                        working.remove(k);
                    }
                    None => {
                        return Err(QpError::SolverFailure(
                            "blocking constraint dependent on equality rows".to_string(),
                        ))
                    }
                }
            }
        }
    }
    working.push(blocker);
    Ok(())
}

fn polish(
    prep: &Prepared,
    working: &[usize],
    _tols: &Tolerances,
) -> Option<(DVector<f64>, Vec<f64>)> {
    let n = prep.n;
    let k = working.len();
    let dim = n + k;
    let mut kkt = DMatrix::zeros(dim, dim);
    kkt.view_mut((0, 0), (n, n)).copy_from(&prep.qs);
    for (j, &ri) in working.iter().enumerate() {
        for i in 0..n {
            kkt[(i, n + j)] = prep.rows[ri].a[i];
            kkt[(n + j, i)] = prep.rows[ri].a[i];
        }
    }
    let mut rhs = DVector::zeros(dim);
    for i in 0..n {
        rhs[i] = -prep.cs[i];
    }
    for (j, &ri) in working.iter().enumerate() {
        rhs[n + j] = prep.rows[ri].b;
    }
    let sol = kkt.svd(true, true).solve(&rhs, 1e-12).ok()?;
    let x = sol.rows(0, n).into_owned();
    let lam = (0..k).map(|j| sol[n + j]).collect();
    Some((x, lam))
}

/// Scaled KKT residual of `(x, lambda)` for the prepared problem.
fn kkt_residual(prep: &Prepared, x: &DVector<f64>, lambda: &[f64]) -> f64 {
    let mut stat = &prep.qs * x + &prep.cs;
    for (ri, row) in prep.rows.iter().enumerate() {
        if lambda[ri] != 0.0 {
            stat += &row.a * lambda[ri];
        }
    }
    let mut r = if prep.n > 0 { stat.amax() } else { 0.0 };
    for (ri, row) in prep.rows.iter().enumerate() {
        let slack = row.a.dot(x) - row.b;
        match row.kind {
            RowKind::Ineq => {
                r = r.max(slack); // primal
                r = r.max(-lambda[ri]); // dual sign
                r = r.max((lambda[ri] * slack).abs() / (1.0 + lambda[ri].abs()));
            }
            RowKind::Eq => r = r.max(slack.abs()),
        }
    }
    r
}

/// Feasibility phase: relax general rows with slack variables, minimize the
/// squared slacks from a start that is feasible by construction, and read the
/// original variables back.
fn phase_one(p: &QpProblem, tols: &Tolerances) -> Result<Option<DVector<f64>>, QpError> {
    let n = p.n();
    let n_gen = p.a_ineq.len() + p.a_eq.len();
    let n2 = n + n_gen;

    let mut q2 = DMatrix::zeros(n2, n2);
    for j in 0..n_gen {
        q2[(n + j, n + j)] = 1.0;
    }
    let mut relaxed = QpProblem::new(q2, DVector::zeros(n2));
    for i in 0..n {
        relaxed.set_bounds(i, p.lb[i], p.ub[i]);
    }
    for j in 0..n_gen {
        relaxed.set_bounds(n + j, 0.0, f64::INFINITY);
    }

    let extend = |a: &DVector<f64>, sign: f64, slack: usize| -> DVector<f64> {
        let mut row = DVector::zeros(n2);
        for i in 0..n {
            row[i] = sign * a[i];
        }
        row[n + slack] = -1.0;
        row
    };
    for (j, (a, b)) in p.a_ineq.iter().enumerate() {
        relaxed.add_ineq(extend(a, 1.0, j), *b);
    }
    for (j, (a, b)) in p.a_eq.iter().enumerate() {
        let slack = p.a_ineq.len() + j;
        relaxed.add_ineq(extend(a, 1.0, slack), *b);
        relaxed.add_ineq(extend(a, -1.0, slack), -b);
    }

    let x_box = clamp_into_bounds(p);
    let mut start = DVector::zeros(n2);
    for i in 0..n {
        start[i] = x_box[i];
    }
    for (j, (a, b)) in p.a_ineq.iter().enumerate() {
        start[n + j] = (a.dot(&x_box) - b).max(0.0);
    }
    for (j, (a, b)) in p.a_eq.iter().enumerate() {
        start[n + p.a_ineq.len() + j] = (a.dot(&x_box) - b).abs();
    }

    let prep = match preprocess(&relaxed, tols)? {
        Prep::Ready(prep) => prep,
        Prep::Infeasible => return Ok(None),
    };
    debug_assert!(max_row_violation(&prep.rows, &start) <= tols.feasibility);
    let (z, _lambda, _res) = solve_prepared(&prep, start, tols)?;
    let x = z.rows(0, n).into_owned();

    let violation = p.max_violation(&x);
    if violation <= tols.feasibility {
        Ok(Some(x))
    } else if violation > INFEASIBLE_GAP {
        Ok(None)
    } else {
        Err(QpError::SolverFailure(format!(
            "feasibility is ambiguous at violation {violation:.3e}"
        )))
    }
}
