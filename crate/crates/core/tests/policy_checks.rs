use domrand::policy::{
    act, entropy, entropy_grad, init_policy, log_prob, log_prob_grad, mean_batch, value_batch, PolicyParams, PolicySpec,
};
use domrand::ppo::{compute_gae, ppo_loss_and_grad, ppo_update, Adam, Minibatch, PpoConfig, TrajectoryBatch};
use domrand::seeding::rng_from_seed;
use ndarray::Array2;
use rand::Rng;

const H: f64 = 1e-5;

fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale < 1e-9 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Random small network with non-trivial weights everywhere.
fn random_policy(spec: &PolicySpec, seed: u64) -> PolicyParams<f64> {
    let mut p = init_policy::<f64>(spec, seed).unwrap();
    let mut rng = rng_from_seed(seed ^ 0xABCD);
    for t in p.tensors_mut() {
        for w in t.iter_mut() {
            *w = rng.random_range(-0.8..0.8);
        }
    }
    p
}

/// Central differences of `f` with respect to every parameter, in `tensors()` order.
fn numeric_grad(p: &PolicyParams<f64>, f: impl Fn(&PolicyParams<f64>) -> f64) -> Vec<f64> {
    let mut out = Vec::new();
    let sizes: Vec<usize> = p.tensors().iter().map(|t| t.len()).collect();
    for (ti, &len) in sizes.iter().enumerate() {
        for j in 0..len {
            let mut plus = p.clone();
            plus.tensors_mut()[ti][j] += H;
            let mut minus = p.clone();
            minus.tensors_mut()[ti][j] -= H;
            out.push((f(&plus) - f(&minus)) / (2.0 * H));
        }
    }
    out
}

#[test]
fn log_prob_gradient_matches_finite_differences() {
    for seed in 0..4 {
        let spec = PolicySpec::with_hidden(3, 2, vec![5, 4]);
        let p = random_policy(&spec, seed);
        let obs = [0.3, -0.7, 1.1];
        let action = [0.4, -1.3];
        let analytic = log_prob_grad(&p, &obs, &action).unwrap().flatten();
        let numeric = numeric_grad(&p, |q| log_prob(q, &obs, &action).unwrap());
        for (i, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
            assert!(rel_err(*a, *n) < 1e-4, "seed {seed} param {i}: {a} vs {n}");
        }
    }
}

#[test]
fn log_prob_gradient_wrt_mean_output() {
    // 1-D: d log π / dμ = (a − μ)/σ², checked through the head bias.
    let spec = PolicySpec::with_hidden(1, 1, vec![3]);
    let mut p = random_policy(&spec, 7);
    p.log_std[0] = 0.4;
    let obs = [0.2];
    let a = 1.7;
    let mu = p.mean_action(&obs).unwrap()[0];
    let sigma2 = (0.8f64).exp();
    let g = log_prob_grad(&p, &obs, &[a]).unwrap();
    let bias_grad = g.mean_net.layers.last().unwrap().bias[0];
    assert!(rel_err(bias_grad, (a - mu) / sigma2) < 1e-5);
    let bump = |d: f64| {
        let mut q = p.clone();
        q.mean_net.layers.last_mut().unwrap().bias[0] += d;
        log_prob(&q, &obs, &[a]).unwrap()
    };
    let fd = (bump(H) - bump(-H)) / (2.0 * H);
    assert!(rel_err(fd, (a - mu) / sigma2) < 1e-5);
}

#[test]
fn entropy_gradient_matches_finite_differences() {
    let spec = PolicySpec::with_hidden(2, 3, vec![4]);
    let p = random_policy(&spec, 11);
    let analytic = entropy_grad(&p).flatten();
    let numeric = numeric_grad(&p, entropy);
    for (a, n) in analytic.iter().zip(&numeric) {
        assert!(
            rel_err(*a, *n) < 1e-4 || (a.abs() < 1e-12 && n.abs() < 1e-9),
            "{a} vs {n}"
        );
    }
}

#[test]
fn entropy_closed_form() {
    let spec = PolicySpec::with_hidden(2, 3, vec![4]);
    let mut p = init_policy::<f64>(&spec, 0).unwrap();
    p.log_std = ndarray::arr1(&[0.1, -0.5, 1.2]);
    let c = 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln();
    let expected: f64 = [0.1, -0.5, 1.2].iter().map(|l| l + c).sum();
    assert!((entropy(&p) - expected).abs() < 1e-12);
}

fn simpson(f: impl Fn(f64) -> f64, lo: f64, hi: f64, n: usize) -> f64 {
    let h = (hi - lo) / n as f64;
    let mut s = f(lo) + f(hi);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(lo + i as f64 * h);
    }
    s * h / 3.0
}

#[test]
fn action_density_integrates_to_one() {
    for (seed, log_std) in [(0, 0.0), (1, -1.5), (2, 1.0)] {
        let spec = PolicySpec::with_hidden(2, 1, vec![6]);
        let mut p = random_policy(&spec, seed);
        p.log_std[0] = log_std;
        let obs = [0.5, -0.25];
        let mu = p.mean_action(&obs).unwrap()[0];
        let sigma = log_std.exp();
        let mass = simpson(
            |a| log_prob(&p, &obs, &[a]).unwrap().exp(),
            mu - 12.0 * sigma,
            mu + 12.0 * sigma,
            4000,
        );
        assert!((mass - 1.0).abs() < 1e-3, "mass {mass}");
    }
}

#[test]
fn act_and_log_prob_agree() {
    let spec = PolicySpec::with_hidden(3, 2, vec![8]);
    let p = random_policy(&spec, 5);
    let mut rng = rng_from_seed(9);
    for _ in 0..50 {
        let obs = [rng.random_range(-1.0..1.0), 0.5, -0.2];
        let (a, lp) = act(&p, &obs, &mut rng).unwrap();
        assert_eq!(lp, log_prob(&p, &obs, &a).unwrap());
    }
}

#[test]
fn sampled_actions_match_mean_and_std() {
    let spec = PolicySpec::with_hidden(2, 2, vec![8]);
    let mut p = random_policy(&spec, 3);
    p.log_std = ndarray::arr1(&[-0.3, 0.6]);
    let obs = [0.1, 0.9];
    let mu = p.mean_action(&obs).unwrap();
    let sigma = p.action_std();
    let n = 100_000;
    let mut rng = rng_from_seed(21);
    let mut sum = [0.0; 2];
    let mut sq = [0.0; 2];
    for _ in 0..n {
        let (a, _) = act(&p, &obs, &mut rng).unwrap();
        for j in 0..2 {
            sum[j] += a[j];
            sq[j] += a[j] * a[j];
        }
    }
    let nf = n as f64;
    for j in 0..2 {
        let mean = sum[j] / nf;
        let std = (sq[j] / nf - mean * mean).sqrt();
        assert!((mean - mu[j]).abs() < 3.0 * sigma[j] / nf.sqrt(), "mean {j}");
        assert!((std - sigma[j]).abs() < 3.0 * sigma[j] / (2.0 * nf).sqrt(), "std {j}");
    }
}

#[test]
fn surrogate_gradient_matches_finite_differences() {
    // 1 -> [1] -> 1 mean net, 1 -> [1] -> 1 value net: eight network weights plus log_std.
    let spec = PolicySpec::with_hidden(1, 1, vec![1]);
    let p = random_policy(&spec, 2);
    let mut rng = rng_from_seed(4);
    let b = 16;
    let obs = Array2::from_shape_fn((b, 1), |_| rng.random_range(-1.0..1.0));
    let actions = Array2::from_shape_fn((b, 1), |_| rng.random_range(-2.0..2.0));
    let current: Vec<f64> = (0..b)
        .map(|i| log_prob(&p, &[obs[[i, 0]]], &[actions[[i, 0]]]).unwrap())
        .collect();
    // Old log-probs offset so that some ratios fall outside the clip range.
    let old_log_probs = current.iter().map(|lp| lp + rng.random_range(-0.5..0.5)).collect();
    let mb = Minibatch {
        observations: obs,
        actions,
        old_log_probs,
        advantages: (0..b).map(|_| rng.random_range(-1.0..1.0)).collect(),
        returns: (0..b).map(|_| rng.random_range(-1.0..1.0)).collect(),
    };
    let cfg = PpoConfig {
        entropy_coef: 0.01,
        ..PpoConfig::default()
    };
    let (terms, grads) = ppo_loss_and_grad(&p, &mb, &cfg);
    assert!(terms.clip_fraction > 0.0 && terms.clip_fraction < 1.0);
    let analytic = grads.flatten();
    assert_eq!(analytic.len(), 9);
    let numeric = numeric_grad(&p, |q| ppo_loss_and_grad(q, &mb, &cfg).0.loss);
    for (i, (a, n)) in analytic.iter().zip(&numeric).enumerate() {
        assert!(rel_err(*a, *n) < 1e-3, "param {i}: {a} vs {n}");
    }
}

/// One-step episodes with reward −(a − 2)² at a fixed observation.
fn bandit_batch(p: &PolicyParams<f64>, n: usize, seed: u64) -> TrajectoryBatch<f64> {
    let mut rng = rng_from_seed(seed);
    let obs = Array2::from_elem((n, 1), 1.0);
    let mut actions = Array2::zeros((n, 1));
    let mut rewards = Vec::with_capacity(n);
    let mut log_probs = Vec::with_capacity(n);
    for i in 0..n {
        let (a, lp) = act(p, &[1.0], &mut rng).unwrap();
        actions[[i, 0]] = a[0];
        rewards.push(-(a[0] - 2.0).powi(2));
        log_probs.push(lp);
    }
    let values = value_batch(p, obs.view()).to_vec();
    TrajectoryBatch {
        observations: obs,
        actions,
        rewards: rewards.clone(),
        log_probs,
        values,
        dones: vec![true; n],
        episode_index: (0..n).collect(),
        episode_params: Vec::new(),
        bootstrap_value: 0.0,
        completed_returns: rewards,
    }
}

#[test]
fn one_update_moves_bandit_mean_toward_optimum() {
    let cfg = PpoConfig {
        steps_per_update: 256,
        ..PpoConfig::default()
    };
    let spec = PolicySpec::with_hidden(1, 1, vec![16]);
    let mut improved = 0;
    for seed in 0..20 {
        let p = init_policy::<f64>(&spec, seed).unwrap();
        let before = mean_batch(&p, Array2::from_elem((1, 1), 1.0).view())[[0, 0]];
        let batch = bandit_batch(&p, cfg.steps_per_update, 100 + seed);
        let (adv, ret) = compute_gae(&batch, 0.99, 0.95, 0.0);
        let mut adam = Adam::new(&p);
        let (next, _) = ppo_update(&p, &mut adam, &batch, &adv, &ret, &cfg, &mut rng_from_seed(seed), 0).unwrap();
        let after = next.mean_action(&[1.0]).unwrap()[0];
        if (after - 2.0).abs() < (before - 2.0).abs() {
            improved += 1;
        }
    }
    assert!(improved >= 18, "{improved}/20 seeds improved");
}
