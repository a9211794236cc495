use domrand::outeropt::{
    cem_optimize, cem_tell, elite_indices, sf_gradient, sf_optimize, CandidateId, CemConfig, CemState, Evaluator,
    ScoredCandidate, SearchStd, SfConfig,
};
use domrand::randdist::Phi;
use domrand::seeding::rng_from_seed;
use proptest::prelude::*;
use rand::Rng;
use rand_distr::StandardNormal;

fn sphere(target: Vec<f64>) -> impl Fn(&[f64], CandidateId) -> (f64, ()) + Sync {
    move |v: &[f64], _| (-v.iter().zip(&target).map(|(a, b)| (a - b).powi(2)).sum::<f64>(), ())
}

fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn cem_converges_on_sphere() {
    let cfg = CemConfig {
        population_size: 16,
        iterations: 50,
        initial_search_std: SearchStd::Scalar(1.0),
        ..CemConfig::default()
    };
    for seed in 0..5u64 {
        let mut rng = rng_from_seed(1000 + seed);
        let target: Vec<f64> = (0..4).map(|_| rng.random_range(-2.0..2.0)).collect();
        let phi0 = Phi::new(vec![0.0; 2], vec![0.0; 2]).unwrap();
        let out = cem_optimize(
            &sphere(target.clone()),
            &phi0,
            &cfg,
            &mut rng_from_seed(seed),
            &Evaluator::sequential(),
            |_| Ok(()),
        )
        .unwrap();
        let err = max_abs_diff(&out.best.phi_vector, &target);
        assert!(err < 0.05, "seed {seed}: {err}");
        let curve = out.best_so_far();
        assert!(
            curve.windows(2).all(|w| w[1] >= w[0]),
            "seed {seed}: best-so-far not monotone"
        );
    }
}

#[test]
fn sf_estimator_matches_smoothed_gradient() {
    let (mu, sigma) = (1.0, 0.5);
    let mut rng = rng_from_seed(8);
    let samples: Vec<ScoredCandidate<f64>> = (0..100_000)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            let x = mu + sigma * z;
            ScoredCandidate {
                phi_vector: vec![x],
                score: -x * x,
            }
        })
        .collect();
    let g = sf_gradient(&[mu], &[sigma], &samples).unwrap();
    let exact = -2.0 * mu;
    assert!(((g.mean[0] - exact) / exact).abs() < 0.05, "{}", g.mean[0]);
    // d/d log σ of −(μ² + σ²) is −2σ²
    assert!(((g.log_std[0] + 2.0 * sigma * sigma) / (2.0 * sigma * sigma)).abs() < 0.1);
}

#[test]
fn sf_estimator_is_unbiased() {
    let (mu, sigma) = (1.0, 0.5);
    let mut rng = rng_from_seed(31);
    let estimates: Vec<f64> = (0..200)
        .map(|_| {
            let samples: Vec<ScoredCandidate<f64>> = (0..1000)
                .map(|_| {
                    let z: f64 = rng.sample(StandardNormal);
                    let x = mu + sigma * z;
                    ScoredCandidate {
                        phi_vector: vec![x],
                        score: -x * x,
                    }
                })
                .collect();
            sf_gradient(&[mu], &[sigma], &samples).unwrap().mean[0]
        })
        .collect();
    let n = estimates.len() as f64;
    let mean = estimates.iter().sum::<f64>() / n;
    let sd = (estimates.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    assert!(
        (mean + 2.0 * mu).abs() < 3.0 * sd / n.sqrt(),
        "mean {mean}, se {}",
        sd / n.sqrt()
    );
}

#[test]
fn sf_equal_scores_give_exact_zero() {
    let mut rng = rng_from_seed(3);
    let samples: Vec<ScoredCandidate<f64>> = (0..50)
        .map(|_| ScoredCandidate {
            phi_vector: vec![rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)],
            score: 0.375,
        })
        .collect();
    let g = sf_gradient(&[0.1, -0.2], &[0.5, 0.7], &samples).unwrap();
    assert!(g.mean.iter().chain(&g.log_std).all(|&x| x == 0.0));
}

#[test]
fn sf_optimize_converges_on_sphere() {
    let target = vec![0.8, -0.6, -0.5, 0.3];
    let phi0 = Phi::new(vec![0.0, 0.0], vec![0.0, 0.0]).unwrap();
    let cfg = SfConfig {
        steps: 200,
        step_size: 0.05,
        population_size: 64,
        sampling_std: 0.3,
    };
    for seed in 0..3 {
        let out = sf_optimize(
            &sphere(target.clone()),
            &phi0,
            &cfg,
            &mut rng_from_seed(seed),
            &Evaluator::sequential(),
            |_| Ok(()),
        )
        .unwrap();
        let omega = &out.trace.last().unwrap().search_mean;
        assert!(max_abs_diff(omega, &target) < 0.1, "seed {seed}: {omega:?}");
        assert!(out.best_so_far().windows(2).all(|w| w[1] >= w[0]));
    }
}

fn population() -> impl Strategy<Value = Vec<(Vec<f64>, i32)>> {
    // distinct integer scores so no ties arise
    (4usize..12).prop_flat_map(|n| {
        (
            prop::collection::vec(prop::collection::vec(-3.0..3.0f64, 4), n),
            Just((0..n as i32).collect::<Vec<_>>()).prop_shuffle(),
        )
            .prop_map(|(vs, scores)| vs.into_iter().zip(scores).collect())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn tell_is_permutation_invariant(pop in population(), perm_seed in any::<u64>()) {
        let n = pop.len();
        let cfg = CemConfig { population_size: n, elite_fraction: 0.5, ..CemConfig::default() };
        let state = CemState::new(vec![0.1, 0.2, -0.3, 0.0], vec![1.0; 4]);
        let scored: Vec<_> = pop
            .iter()
            .map(|(v, s)| ScoredCandidate { phi_vector: v.clone(), score: *s as f64 })
            .collect();
        let mut shuffled = scored.clone();
        let mut rng = rng_from_seed(perm_seed);
        for i in (1..n).rev() {
            shuffled.swap(i, rng.random_range(0..=i));
        }
        let a = cem_tell(&state, &scored, &cfg).unwrap();
        let b = cem_tell(&state, &shuffled, &cfg).unwrap();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn elites_ignore_score_shift(pop in population(), shift in -1000i32..1000) {
        let scored: Vec<_> = pop
            .iter()
            .map(|(v, s)| ScoredCandidate { phi_vector: v.clone(), score: *s as f64 })
            .collect();
        let shifted: Vec<_> = scored
            .iter()
            .map(|c| ScoredCandidate { phi_vector: c.phi_vector.clone(), score: c.score + shift as f64 })
            .collect();
        let k = pop.len().div_ceil(2);
        let mut a = elite_indices(&scored, k);
        let mut b = elite_indices(&shifted, k);
        a.sort_unstable();
        b.sort_unstable();
        prop_assert_eq!(a, b);
    }

    #[test]
    fn best_so_far_never_decreases(seed in any::<u64>()) {
        let phi0 = Phi::new(vec![0.5, -0.5], vec![0.0, 0.0]).unwrap();
        let cfg = CemConfig { iterations: 6, ..CemConfig::default() };
        let noisy = |v: &[f64], id: CandidateId| {
            let mut r = rng_from_seed(id.iteration as u64 * 100 + id.index as u64);
            (-v.iter().map(|x| x * x).sum::<f64>() + r.random_range(-1.0..1.0), ())
        };
        let out = cem_optimize(&noisy, &phi0, &cfg, &mut rng_from_seed(seed), &Evaluator::sequential(), |_| Ok(()))
            .unwrap();
        let curve = out.best_so_far();
        prop_assert!(curve.windows(2).all(|w| w[1] >= w[0]));
        let max = out
            .trace
            .iter()
            .flat_map(|s| s.candidates.iter().map(|c| c.score))
            .fold(out.baseline.score, f64::max);
        prop_assert_eq!(out.best.score, max);
    }
}
