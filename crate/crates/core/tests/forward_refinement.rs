//! Strong convergence of the forward solver on bridge-refined noise.

use stochevo::analysis::convergence_order;
use stochevo::galerkin::{solve_forward, sup_h_distance, SolverConfig};
use stochevo::operators::{builtin, BuiltinKind, BuiltinOptions, NoiseShape};
use stochevo::NoisePath;

#[test]
fn heat_order_from_refinement_study() {
    let set = builtin(
        BuiltinKind::Heat,
        BuiltinOptions { n_grid: 16, n_modes: 1, noise: NoiseShape::Zero },
    )
    .unwrap();
    let x0 = set.triple.function(set.triple.basis_vector(0)).unwrap();
    let mu = set.triple.eigenvalues()[0];
    let steps = [0.02, 0.01, 0.005, 0.0025];
    let noise = NoisePath::sample(1, 1.0, 400, 1).unwrap();
    let errors: Vec<f64> = steps
        .iter()
        .map(|&dt| {
            let path = solve_forward(&SolverConfig::new(16, dt), set.drift.clone(), &set.diffusion, &noise, &x0).unwrap();
            let last = path.coords.last().unwrap();
            let lead = last[0] - (-mu).exp();
            (lead * lead + last[1..].iter().map(|c| c * c).sum::<f64>()).sqrt()
        })
        .collect();
    let order = convergence_order(&steps, &errors).unwrap();
    assert!((0.8..=1.2).contains(&order), "order {order}, errors {errors:?}");
}

#[test]
fn porous_medium_paths_approach_the_fine_solution() {
    let set = builtin(
        BuiltinKind::PorousMedium { p: 3.0 },
        BuiltinOptions { n_grid: 16, n_modes: 2, noise: NoiseShape::Modes { scale: 0.3 } },
    )
    .unwrap();
    let values = set.triple.nodes().iter().map(|x| 4.0 * x * (1.0 - x)).collect();
    let x0 = set.triple.function(values).unwrap();
    let coarse = NoisePath::sample(4, 0.5, 25, 2).unwrap();
    let mut levels = vec![coarse];
    for _ in 0..4 {
        let next = levels.last().unwrap().refine().unwrap();
        levels.push(next);
    }
    let finest = levels.last().unwrap();
    let reference = solve_forward(&SolverConfig::new(8, finest.dt()), set.drift.clone(), &set.diffusion, finest, &x0).unwrap();
    let errors: Vec<f64> = levels[..3]
        .iter()
        .map(|noise| {
            let path = solve_forward(&SolverConfig::new(8, noise.dt()), set.drift.clone(), &set.diffusion, noise, &x0).unwrap();
            let last = path.states.len() - 1;
            let d: Vec<f64> = path.states[last].values().iter().zip(reference.final_state().values()).map(|(a, b)| a - b).collect();
            set.triple.h_norm(&d)
        })
        .collect();
    assert!(errors.windows(2).all(|w| w[1] < w[0]), "{errors:?}");
    // Same noise, same grid: the distance helper sees no gap.
    assert_eq!(sup_h_distance(&set.triple, &reference, &reference).unwrap(), 0.0);
}
