mod common;
use rand::Rng;
use fcsim::allocator::{allocate_setpoints, PriorityWeights};

#[test]
fn probe_criterion_1() {
    let mut rng = common::rng(101);
    for inst in 0..200 {
        let n = rng.gen_range(1..=3);
        let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(1.0..60.0)).collect();
        let weights: Vec<f64> = (0..n).map(|_| 2f64.powf(rng.gen_range(0.0..3.0))).collect();
        let total: f64 = raw.iter().sum();
        let budget = rng.gen_range(0.2..1.2) * total;
        let result = allocate_setpoints(&raw, &PriorityWeights { w: weights.clone() }, budget);
        let lo = vec![0.0; n];
        let objective = |p: &[f64]| {
            0.5 * p.iter().zip(&raw).zip(&weights)
                .map(|((pi, ri), wi)| wi * (pi - ri) * (pi - ri)).sum::<f64>()
        };
        let oracle = common::refine_grid_min(
            &lo, &raw,
            |p: &[f64]| p.iter().sum::<f64>() <= budget + 1e-12,
            objective, 0.0025,
        ).unwrap();
        let diff = (0..n).map(|m| (result.p_bar_kw[m] - oracle[m]).abs()).fold(0.0f64, f64::max);
        if diff > 0.02 {
            println!("inst {inst} n={n} diff={diff:.4}");
            println!("  raw    = {raw:?}");
            println!("  w      = {weights:?}");
            println!("  budget = {budget}");
            println!("  impl   = {:?}  f={:.9}", result.p_bar_kw, objective(&result.p_bar_kw));
            println!("  oracle = {oracle:?}  f={:.9}", objective(&oracle));
            println!("  sum impl {:.9} oracle {:.9}", result.p_bar_kw.iter().sum::<f64>(), oracle.iter().sum::<f64>());
        }
    }
}
