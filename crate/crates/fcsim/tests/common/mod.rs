//! Shared test oracles and generators.
//!
//! Everything here is deliberately independent of the library's solver
//! internals: the grid oracle enumerates objective values over feasible
//! points, and the reference QP oracle is an accelerated projected-gradient
//! iteration. Both know nothing about active sets or KKT systems.

#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Multi-resolution exhaustive search: evaluates `objective` on a uniform
/// grid over the box, keeps the best `feasible` point, then shrinks the box
/// to a few cells around it and repeats until the cell size reaches
/// `final_step` in every dimension. For convex problems over convex feasible
/// sets the refinement brackets the optimum, so the result is the same point
/// a single exhaustive scan at `final_step` resolution would find.
pub fn refine_grid_min<F, G>(
    lo: &[f64],
    hi: &[f64],
    feasible: F,
    objective: G,
    final_step: f64,
) -> Option<Vec<f64>>
where
    F: Fn(&[f64]) -> bool,
    G: Fn(&[f64]) -> f64,
{
    // A grid argmin can sit up to `cell * sqrt(dim * curvature_ratio)` from
    // the continuous one along a flat valley; the margin must cover that
    // drift or refinement cuts the optimum off. 6 cells covers ratios up to
    // ~8 in three dimensions.
    const POINTS: usize = 21;
    const MARGIN: f64 = 6.0;
    let dim = lo.len();
    assert_eq!(hi.len(), dim);
    if dim == 0 {
        return feasible(&[]).then(Vec::new);
    }

    let mut box_lo = lo.to_vec();
    let mut box_hi = hi.to_vec();
    let mut best: Option<(f64, Vec<f64>)> = None;

    loop {
        let steps: Vec<f64> = (0..dim)
            .map(|d| (box_hi[d] - box_lo[d]) / (POINTS - 1) as f64)
            .collect();

        // Exhaustive scan of this level's grid.
        let mut idx = vec![0usize; dim];
        let mut point = vec![0.0; dim];
        'scan: loop {
            for d in 0..dim {
                point[d] = if steps[d] > 0.0 {
                    box_lo[d] + idx[d] as f64 * steps[d]
                } else {
                    box_lo[d]
                };
            }
            if feasible(&point) {
                let value = objective(&point);
                if best.as_ref().map_or(true, |(b, _)| value < *b) {
                    best = Some((value, point.clone()));
                }
            }
            for d in 0..dim {
                idx[d] += 1;
                if idx[d] < POINTS {
                    continue 'scan;
                }
                idx[d] = 0;
            }
            break;
        }

        let center = match &best {
            Some((_, p)) => p.clone(),
            None => return None, // no feasible grid point anywhere
        };
        if steps.iter().all(|s| *s <= final_step) {
            return Some(center);
        }
        for d in 0..dim {
            let half = (MARGIN * steps[d]).max(final_step);
            box_lo[d] = (center[d] - half).max(lo[d]);
            box_hi[d] = (center[d] + half).min(hi[d]);
        }
    }
}

/// Exhaustive 1-D scan at a fixed resolution (no refinement).
pub fn scan_1d_min<G>(lo: f64, hi: f64, step: f64, objective: G) -> f64
where
    G: Fn(f64) -> f64,
{
    assert!(hi >= lo);
    let n = ((hi - lo) / step).ceil() as usize;
    let mut best_x = lo;
    let mut best_v = objective(lo);
    for k in 1..=n {
        let x = (lo + k as f64 * step).min(hi);
        let v = objective(x);
        if v < best_v {
            best_v = v;
            best_x = x;
        }
    }
    best_x
}

/// Reference oracle for box-constrained QPs: accelerated projected gradient
/// (monotone restart). Returns the iterate; for strictly convex problems it
/// converges to the unique minimizer, for singular ones to some minimizer of
/// the common optimal value.
pub fn projected_gradient_box_qp(
    q: &DMatrix<f64>,
    c: &DVector<f64>,
    lb: &DVector<f64>,
    ub: &DVector<f64>,
    max_iters: usize,
) -> DVector<f64> {
    let n = c.len();
    let clamp = |x: &DVector<f64>| {
        DVector::from_fn(n, |i, _| x[i].clamp(lb[i], ub[i]))
    };
    // Lipschitz constant of the gradient via the row-sum bound.
    let lipschitz = (0..n)
        .map(|i| (0..n).map(|j| q[(i, j)].abs()).sum::<f64>())
        .fold(1e-12_f64, f64::max);
    let step = 1.0 / lipschitz;

    let objective = |x: &DVector<f64>| 0.5 * (x.transpose() * q * x)[(0, 0)] + c.dot(x);

    let mut x = clamp(&DVector::zeros(n));
    let mut z = x.clone();
    let mut t_acc = 1.0f64;
    let mut f_best = objective(&x);
    let mut x_best = x.clone();

    for _ in 0..max_iters {
        let grad = q * &z + c;
        let x_next = clamp(&(&z - &grad * step));
        let f_next = objective(&x_next);
        if f_next > f_best {
            // Restart the momentum when it overshoots.
            z = x_best.clone();
            t_acc = 1.0;
        } else {
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t_acc * t_acc).sqrt());
            let momentum = (t_acc - 1.0) / t_next;
            z = &x_next + (&x_next - &x) * momentum;
            t_acc = t_next;
            if f_next < f_best {
                f_best = f_next;
                x_best = x_next.clone();
            }
            // Fixed-point residual of the plain projected step at the new
            // iterate; successive-iterate distance is not a valid stop under
            // momentum.
            let residual = (&x_next - clamp(&(&x_next - (q * &x_next + c) * step))).amax();
            x = x_next;
            if residual < 1e-14 {
                break;
            }
        }
    }
    x_best
}

/// Exact minimizer of `0.5 * sum w_m (p_m - r_m)^2` over
/// `0 <= p <= r`, `sum(p) <= budget`, by alternating exact single-coordinate
/// moves (absorbing budget slack) and exact pairwise transfers along the
/// budget plane. Pairwise descent converges to the unique optimum of this
/// strictly convex problem; no multiplier or sorting logic is shared with
/// the implementation under test.
pub fn pairwise_budget_min(raw: &[f64], weights: &[f64], budget: f64, start: &[f64]) -> Vec<f64> {
    let n = raw.len();
    let mut p: Vec<f64> = start
        .iter()
        .zip(raw)
        .map(|(s, r)| s.clamp(0.0, *r))
        .collect();
    // Scale the start into the budget if needed.
    let total: f64 = p.iter().sum();
    if total > budget {
        let scale = (budget / total).max(0.0);
        for v in &mut p {
            *v *= scale;
        }
    }

    for _ in 0..10_000 {
        let mut moved: f64 = 0.0;
        // Single coordinates: pull toward the target using free slack.
        for m in 0..n {
            let slack = budget - p.iter().sum::<f64>();
            let target = raw[m].min(p[m] + slack.max(0.0));
            let next = target.clamp(0.0, raw[m]);
            moved = moved.max((next - p[m]).abs());
            p[m] = next;
        }
        // Pairwise transfers keep the sum fixed.
        for i in 0..n {
            for j in (i + 1)..n {
                let t_star = (weights[i] * (raw[i] - p[i]) + weights[j] * (p[j] - raw[j]))
                    / (weights[i] + weights[j]);
                let t = t_star
                    .min(raw[i] - p[i])
                    .min(p[j])
                    .max(-p[i])
                    .max(p[j] - raw[j]);
                if t != 0.0 {
                    p[i] += t;
                    p[j] -= t;
                    moved = moved.max(t.abs());
                }
            }
        }
        if moved < 1e-13 {
            break;
        }
    }
    p
}

/// Random symmetric PSD matrix with the given eigenvalues, via a product of
/// random Givens rotations.
pub fn random_psd(rng: &mut ChaCha8Rng, eigenvalues: &[f64]) -> DMatrix<f64> {
    let n = eigenvalues.len();
    let mut m = DMatrix::zeros(n, n);
    for (i, ev) in eigenvalues.iter().enumerate() {
        m[(i, i)] = *ev;
    }
    for _ in 0..(3 * n) {
        let i = rng.gen_range(0..n);
        let mut j = rng.gen_range(0..n);
        if i == j {
            j = (j + 1) % n;
        }
        if n < 2 {
            break;
        }
        let theta: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
        let (s, c) = theta.sin_cos();
        let mut rot = DMatrix::identity(n, n);
        rot[(i, i)] = c;
        rot[(j, j)] = c;
        rot[(i, j)] = -s;
        rot[(j, i)] = s;
        m = &rot * m * rot.transpose();
    }
    // Re-symmetrize the rounding noise away.
    (&m + m.transpose()) * 0.5
}
