//! Distributional checks of the noise generator over many seeds, 3σ bands.

use stochevo::NoisePath;

const SEEDS: u64 = 100_000;

/// Mean and standard error of a sample.
fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, (v / n).sqrt())
}

#[test]
fn single_increment_has_variance_t() {
    let t = 2.0;
    let sq: Vec<f64> = (0..SEEDS)
        .map(|s| NoisePath::sample(s, t, 1, 1).unwrap().increment(0)[0].powi(2))
        .collect();
    let (m, se) = mean_se(&sq);
    assert!((m - t).abs() <= 3.0 * se, "E dW² = {m} ± {se}, expected {t}");
}

#[test]
fn modes_are_uncorrelated() {
    let prod: Vec<f64> = (0..SEEDS)
        .map(|s| {
            let p = NoisePath::sample(s, 1.0, 1, 2).unwrap();
            p.increment(0)[0] * p.increment(0)[1]
        })
        .collect();
    let (m, se) = mean_se(&prod);
    assert!(m.abs() <= 3.0 * se, "E dW¹dW² = {m} ± {se}");
}

#[test]
fn bridge_midpoint_has_quarter_variance() {
    let dt = 0.5;
    let dev: Vec<f64> = (0..SEEDS)
        .map(|s| {
            let coarse = NoisePath::sample(s, dt, 1, 1).unwrap();
            let fine = coarse.refine().unwrap();
            (fine.increment(0)[0] - 0.5 * coarse.increment(0)[0]).powi(2)
        })
        .collect();
    let (m, se) = mean_se(&dev);
    assert!((m - dt / 4.0).abs() <= 3.0 * se, "bridge variance {m} ± {se}, expected {}", dt / 4.0);
}

#[test]
fn twice_refined_path_aggregates_back() {
    let p = NoisePath::sample(9, 1.0, 16, 3).unwrap();
    let back = p.refine().unwrap().refine().unwrap().aggregate(4).unwrap();
    assert_eq!(back.increments(), p.increments());
}
