//! Inner-problem solver: clipped-surrogate PPO over episodes whose dynamics
//! are resampled from the randomization distribution at every reset.

use ndarray::{Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::envsim::{reset, step, EnvId, EnvSpec, MdpParams};
use crate::error::{Error, Result};
use crate::policy::{act, init_policy, log_prob_output_grads, value_batch, PolicyParams, PolicySpec};
use crate::randdist::{sample_mdp, Phi};
use crate::scalar::{half_ln_two_pi, Real};
use crate::seeding::{derive, mix, rng_from_seed, Purpose};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PpoConfig {
    pub gamma: f64,
    pub gae_lambda: f64,
    pub clip_ratio: f64,
    pub epochs_per_update: usize,
    pub minibatches: usize,
    pub learning_rate: f64,
    pub value_coef: f64,
    pub entropy_coef: f64,
    pub steps_per_update: usize,
    pub total_updates: usize,
    pub advantage_normalization: bool,
    pub hidden_sizes: Vec<usize>,
    /// Global gradient-norm clip per minibatch step; 0 disables it.
    pub max_grad_norm: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            gae_lambda: 0.95,
            clip_ratio: 0.2,
            epochs_per_update: 10,
            minibatches: 4,
            learning_rate: 3e-4,
            value_coef: 0.5,
            entropy_coef: 0.0,
            steps_per_update: 2048,
            total_updates: 150,
            advantage_normalization: true,
            hidden_sizes: vec![64, 64],
            max_grad_norm: 0.5,
        }
    }
}

impl PpoConfig {
    pub fn for_env(env: EnvId) -> Self {
        let total_updates = match env {
            EnvId::Cartpole => 150,
            EnvId::Pointmass => 80,
        };
        Self {
            total_updates,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(format!("inner: {m}")));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return fail("gamma must be in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return fail("gae_lambda must be in [0, 1]");
        }
        if !(self.clip_ratio > 0.0) {
            return fail("clip_ratio must be positive");
        }
        if self.epochs_per_update == 0 || self.minibatches == 0 || self.steps_per_update == 0 {
            return fail("epochs_per_update, minibatches and steps_per_update must be >= 1");
        }
        if !self.steps_per_update.is_multiple_of(self.minibatches) {
            return fail("steps_per_update must be divisible by minibatches");
        }
        if !(self.learning_rate >= 0.0) || !(self.value_coef >= 0.0) || !(self.entropy_coef >= 0.0) {
            return fail("learning_rate, value_coef and entropy_coef must be non-negative");
        }
        if self.hidden_sizes.is_empty() || self.hidden_sizes.contains(&0) {
            return fail("hidden_sizes must be non-empty");
        }
        Ok(())
    }
}

/// On-policy rollout storage. All per-step arrays have `len()` rows.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryBatch<T> {
    pub observations: Array2<T>,
    pub actions: Array2<T>,
    pub rewards: Vec<T>,
    pub log_probs: Vec<T>,
    pub values: Vec<T>,
    pub dones: Vec<bool>,
    /// Index into `episode_params` of the MDP that produced each step.
    pub episode_index: Vec<usize>,
    pub episode_params: Vec<MdpParams<T>>,
    /// `V(s_n)` for the state following the last step, zero if it was terminal.
    pub bootstrap_value: T,
    /// Undiscounted returns of episodes that finished inside this batch.
    pub completed_returns: Vec<T>,
}

impl<T: Real> TrajectoryBatch<T> {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }

    pub fn episode_starts(&self) -> usize {
        self.episode_params.len()
    }
}

/// Collects exactly `cfg.steps_per_update` transitions. A fresh `m ~ p_φ` is
/// drawn at every episode reset and held for the whole episode.
pub fn collect_rollouts<T: Real, R: Rng + ?Sized>(
    policy: &PolicyParams<T>,
    phi: &Phi<T>,
    spec: &EnvSpec<T>,
    cfg: &PpoConfig,
    rng: &mut R,
) -> Result<TrajectoryBatch<T>> {
    if phi.dim() != spec.param_dim() {
        return Err(Error::ParameterShape {
            expected: spec.param_dim(),
            got: phi.dim(),
        });
    }
    let n = cfg.steps_per_update;
    let bounds = spec.validity_box();
    let mut observations = Array2::zeros((n, spec.state_dim));
    let mut actions = Array2::zeros((n, spec.action_dim));
    let mut rewards = Vec::with_capacity(n);
    let mut log_probs = Vec::with_capacity(n);
    let mut dones = Vec::with_capacity(n);
    let mut episode_index = Vec::with_capacity(n);
    let mut episode_params: Vec<MdpParams<T>> = Vec::new();
    let mut completed_returns = Vec::new();

    let mut current = None;
    let mut episode_return = T::zero();
    for t in 0..n {
        let state = match current.take() {
            Some(s) => s,
            None => {
                let m = sample_mdp(phi, &bounds, rng)?;
                let s = reset(spec, &m, rng.next_u64())?;
                episode_params.push(m);
                episode_return = T::zero();
                s
            }
        };
        let ep = episode_params.len() - 1;
        let (action, lp) = act(policy, &state.observation, rng)?;
        let tr = step(spec, &state, &action, &episode_params[ep])?;

        observations.row_mut(t).assign(&Array1::from(state.observation.clone()));
        actions.row_mut(t).assign(&Array1::from(action));
        rewards.push(tr.reward);
        log_probs.push(lp);
        dones.push(tr.done);
        episode_index.push(ep);
        episode_return += tr.reward;
        if tr.done {
            completed_returns.push(episode_return);
        } else {
            current = Some(tr.state);
        }
    }

    let values = value_batch(policy, observations.view()).to_vec();
    let bootstrap_value = match &current {
        Some(s) => crate::policy::value(policy, &s.observation)?,
        None => T::zero(),
    };
    Ok(TrajectoryBatch {
        observations,
        actions,
        rewards,
        log_probs,
        values,
        dones,
        episode_index,
        episode_params,
        bootstrap_value,
        completed_returns,
    })
}

/// Generalized advantage estimation over a flat sequence of steps.
///
/// `δ_t = r_t + γ V(s_{t+1}) (1 − done_t) − V(s_t)` and
/// `A_t = δ_t + γλ (1 − done_t) A_{t+1}`; `V(s_n)` is `bootstrap_value`.
pub fn gae<T: Real>(
    rewards: &[T],
    values: &[T],
    dones: &[bool],
    bootstrap_value: T,
    gamma: T,
    lambda: T,
) -> (Vec<T>, Vec<T>) {
    let n = rewards.len();
    let mut advantages = vec![T::zero(); n];
    let mut running = T::zero();
    for t in (0..n).rev() {
        let next_value = if t + 1 == n { bootstrap_value } else { values[t + 1] };
        let live = if dones[t] { T::zero() } else { T::one() };
        let delta = rewards[t] + gamma * next_value * live - values[t];
        running = delta + gamma * lambda * live * running;
        advantages[t] = running;
    }
    let returns = advantages.iter().zip(values).map(|(&a, &v)| a + v).collect();
    (advantages, returns)
}

pub fn compute_gae<T: Real>(batch: &TrajectoryBatch<T>, gamma: T, lambda: T, bootstrap_value: T) -> (Vec<T>, Vec<T>) {
    gae(
        &batch.rewards,
        &batch.values,
        &batch.dones,
        bootstrap_value,
        gamma,
        lambda,
    )
}

/// Standardizes to zero mean and unit (population) std, with a 1e-8 floor.
pub fn normalize_advantages<T: Real>(advantages: &[T]) -> Vec<T> {
    let n = T::lit(advantages.len() as f64);
    let mean = advantages.iter().copied().sum::<T>() / n;
    let var = advantages.iter().map(|&a| (a - mean) * (a - mean)).sum::<T>() / n;
    let std = var.sqrt().max(T::lit(1e-8));
    advantages.iter().map(|&a| (a - mean) / std).collect()
}

/// Adam with β₁ = 0.9, β₂ = 0.999, ε = 1e-8.
#[derive(Clone, Debug)]
pub struct Adam<T> {
    m: PolicyParams<T>,
    v: PolicyParams<T>,
    t: i32,
}

impl<T: Real> Adam<T> {
    pub const BETA1: f64 = 0.9;
    pub const BETA2: f64 = 0.999;
    pub const EPS: f64 = 1e-8;

    pub fn new(params: &PolicyParams<T>) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
        }
    }

    /// Gradient-descent step on `params` (the gradient is of a loss to minimize).
    pub fn step(&mut self, params: &mut PolicyParams<T>, grads: &PolicyParams<T>, lr: T) {
        self.t += 1;
        let (b1, b2, eps) = (T::lit(Self::BETA1), T::lit(Self::BETA2), T::lit(Self::EPS));
        let c1 = T::one() - b1.powi(self.t);
        let c2 = T::one() - b2.powi(self.t);
        let grads = grads.tensors();
        let ms = self.m.tensors_mut();
        let vs = self.v.tensors_mut();
        for (((p, g), m), v) in params.tensors_mut().into_iter().zip(grads).zip(ms).zip(vs) {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (T::one() - b1) * g[i];
                v[i] = b2 * v[i] + (T::one() - b2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        params.clamp_log_std();
    }
}

/// A PPO minibatch: rows of observations/actions plus per-sample targets.
#[derive(Clone, Debug)]
pub struct Minibatch<T> {
    pub observations: Array2<T>,
    pub actions: Array2<T>,
    pub old_log_probs: Vec<T>,
    pub advantages: Vec<T>,
    pub returns: Vec<T>,
}

impl<T: Real> Minibatch<T> {
    fn gather(batch: &TrajectoryBatch<T>, adv: &[T], ret: &[T], idx: &[usize]) -> Self {
        Self {
            observations: batch.observations.select(Axis(0), idx),
            actions: batch.actions.select(Axis(0), idx),
            old_log_probs: idx.iter().map(|&i| batch.log_probs[i]).collect(),
            advantages: idx.iter().map(|&i| adv[i]).collect(),
            returns: idx.iter().map(|&i| ret[i]).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.old_log_probs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.old_log_probs.is_empty()
    }
}

#[derive(Clone, Debug)]
pub struct LossTerms<T> {
    /// `−surrogate + value_coef·value_loss − entropy_coef·entropy`
    pub loss: T,
    pub surrogate: T,
    pub value_loss: T,
    pub entropy: T,
    pub clip_fraction: T,
}

/// PPO loss on one minibatch and its exact gradient.
///
/// The surrogate is `mean_t min(ρ_t A_t, clip(ρ_t, 1−ε, 1+ε) A_t)` with
/// `ρ_t = exp(log π(a_t|s_t) − log π_old(a_t|s_t))`; the value loss is
/// `mean_t (V(s_t) − R_t)²`.
pub fn ppo_loss_and_grad<T: Real>(
    params: &PolicyParams<T>,
    mb: &Minibatch<T>,
    cfg: &PpoConfig,
) -> (LossTerms<T>, PolicyParams<T>) {
    let b = mb.len();
    let inv_b = T::one() / T::lit(b as f64);
    let eps = T::lit(cfg.clip_ratio);
    let (lo, hi) = (T::one() - eps, T::one() + eps);
    let half = T::lit(0.5);
    let norm = half_ln_two_pi::<T>();
    let log_std = params.log_std.as_slice().expect("standard layout");
    let act_dim = log_std.len();

    let mean_tape = params.mean_net.forward_batch(mb.observations.view());
    let value_tape = params.value_net.forward_batch(mb.observations.view());
    let means = mean_tape.output();
    let values = value_tape.output();

    let mut d_mean = Array2::zeros((b, act_dim));
    let mut d_value = Array2::zeros((b, 1));
    let mut d_log_std = vec![T::zero(); act_dim];
    let mut surrogate = T::zero();
    let mut value_loss = T::zero();
    let mut clipped = 0usize;

    for i in 0..b {
        let action = mb.actions.row(i);
        let mean = means.row(i);
        let mut lp = T::zero();
        for j in 0..act_dim {
            let z = (action[j] - mean[j]) / log_std[j].exp();
            lp += -half * z * z - log_std[j] - norm;
        }
        let ratio = (lp - mb.old_log_probs[i]).exp();
        let adv = mb.advantages[i];
        let unclipped = ratio * adv;
        let clipped_term = ratio.max(lo).min(hi) * adv;
        // Gradient flows through ρ only where the unclipped term is the minimum.
        let active = unclipped <= clipped_term;
        surrogate += unclipped.min(clipped_term);
        if ratio < lo || ratio > hi {
            clipped += 1;
        }
        if active {
            // d(−ρA/B)/d log π = −ρA/B
            let d_lp = -unclipped * inv_b;
            let (g_mean, g_ls) =
                log_prob_output_grads(action.as_slice().expect("row"), mean.as_slice().expect("row"), log_std);
            for j in 0..act_dim {
                d_mean[[i, j]] = d_lp * g_mean[j];
                d_log_std[j] += d_lp * g_ls[j];
            }
        }
        let err = values[[i, 0]] - mb.returns[i];
        value_loss += err * err;
        d_value[[i, 0]] = T::lit(cfg.value_coef) * (err + err) * inv_b;
    }
    surrogate *= inv_b;
    value_loss *= inv_b;
    let entropy = crate::gaussian::diag_entropy(log_std);
    let loss = -surrogate + T::lit(cfg.value_coef) * value_loss - T::lit(cfg.entropy_coef) * entropy;

    let mut grads = params.zeros_like();
    params.mean_net.backward(&mean_tape, d_mean, &mut grads.mean_net);
    params.value_net.backward(&value_tape, d_value, &mut grads.value_net);
    for (g, d) in grads.log_std.iter_mut().zip(&d_log_std) {
        *g = *d - T::lit(cfg.entropy_coef);
    }
    (
        LossTerms {
            loss,
            surrogate,
            value_loss,
            entropy,
            clip_fraction: T::lit(clipped as f64) * inv_b,
        },
        grads,
    )
}

/// Rescales `grads` so their global L2 norm is at most `max_norm`.
pub fn clip_grad_norm<T: Real>(grads: &mut PolicyParams<T>, max_norm: T) -> T {
    let norm = grads
        .tensors()
        .iter()
        .flat_map(|t| t.iter())
        .map(|&g| g * g)
        .sum::<T>()
        .sqrt();
    if norm > max_norm {
        let scale = max_norm / norm;
        for t in grads.tensors_mut() {
            t.iter_mut().for_each(|g| *g *= scale);
        }
    }
    norm
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub update: usize,
    /// Mean undiscounted return of episodes completed during collection.
    pub mean_episode_return: Option<f64>,
    pub episodes: usize,
    pub surrogate: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub clip_fraction: f64,
}

/// `epochs_per_update` passes over shuffled minibatches of the batch.
#[allow(clippy::too_many_arguments)]
pub fn ppo_update<T: Real, R: Rng + ?Sized>(
    policy: &PolicyParams<T>,
    optimizer: &mut Adam<T>,
    batch: &TrajectoryBatch<T>,
    advantages: &[T],
    returns: &[T],
    cfg: &PpoConfig,
    rng: &mut R,
    iteration: usize,
) -> Result<(PolicyParams<T>, LossTerms<T>)> {
    let n = batch.len();
    if advantages.len() != n || returns.len() != n {
        return Err(Error::ParameterShape {
            expected: n,
            got: advantages.len().min(returns.len()),
        });
    }
    let adv = if cfg.advantage_normalization {
        normalize_advantages(advantages)
    } else {
        advantages.to_vec()
    };
    let mb_size = (n / cfg.minibatches).max(1);
    let lr = T::lit(cfg.learning_rate);
    let mut params = policy.clone();
    let mut indices: Vec<usize> = (0..n).collect();
    let mut last = None;
    for _ in 0..cfg.epochs_per_update {
        indices.shuffle(rng);
        for chunk in indices.chunks(mb_size) {
            let mb = Minibatch::gather(batch, &adv, returns, chunk);
            let (terms, mut grads) = ppo_loss_and_grad(&params, &mb, cfg);
            if !terms.loss.is_finite() {
                return Err(Error::TrainingDiverged {
                    iteration,
                    detail: "non-finite PPO loss".into(),
                });
            }
            if cfg.max_grad_norm > 0.0 {
                clip_grad_norm(&mut grads, T::lit(cfg.max_grad_norm));
            }
            optimizer.step(&mut params, &grads, lr);
            last = Some(terms);
        }
    }
    if !params.is_finite() {
        return Err(Error::TrainingDiverged {
            iteration,
            detail: "non-finite policy parameters".into(),
        });
    }
    let terms = last.ok_or_else(|| Error::InvalidSpec("empty PPO batch".into()))?;
    Ok((params, terms))
}

#[derive(Clone, Debug)]
pub struct InnerResult<T> {
    pub policy: PolicyParams<T>,
    pub curve: Vec<UpdateStats>,
}

impl<T> InnerResult<T> {
    pub fn returns_curve(&self) -> Vec<Option<f64>> {
        self.curve.iter().map(|s| s.mean_episode_return).collect()
    }
}

/// Policy seed and rollout seed derived from one inner-training seed.
fn inner_seeds(seed: u64) -> (u64, u64) {
    let base = derive(seed, Purpose::Training);
    (mix(&[base, 0]), mix(&[base, 1]))
}

/// Trains a fresh policy under `phi` for `cfg.total_updates` PPO iterations.
pub fn train_inner<T: Real>(phi: &Phi<T>, spec: &EnvSpec<T>, cfg: &PpoConfig, seed: u64) -> Result<InnerResult<T>> {
    cfg.validate()?;
    let policy_spec = PolicySpec::with_hidden(spec.state_dim, spec.action_dim, cfg.hidden_sizes.clone());
    let (init_seed, stream_seed) = inner_seeds(seed);
    let mut policy = init_policy::<T>(&policy_spec, init_seed)?;
    let mut optimizer = Adam::new(&policy);
    let mut rng = rng_from_seed(stream_seed);
    let gamma = T::lit(cfg.gamma);
    let lambda = T::lit(cfg.gae_lambda);
    let mut curve = Vec::with_capacity(cfg.total_updates);

    for update in 0..cfg.total_updates {
        let batch = collect_rollouts(&policy, phi, spec, cfg, &mut rng)?;
        let (advantages, returns) = compute_gae(&batch, gamma, lambda, batch.bootstrap_value);
        let (next, terms) = ppo_update(
            &policy,
            &mut optimizer,
            &batch,
            &advantages,
            &returns,
            cfg,
            &mut rng,
            update,
        )?;
        policy = next;
        let episodes = batch.completed_returns.len();
        let mean_episode_return =
            (episodes > 0).then(|| batch.completed_returns.iter().map(|r| r.as_f64()).sum::<f64>() / episodes as f64);
        log::debug!(
            "update {update}: mean return {:?} over {episodes} episodes, entropy {:.3}",
            mean_episode_return,
            terms.entropy.as_f64()
        );
        curve.push(UpdateStats {
            update,
            mean_episode_return,
            episodes,
            surrogate: terms.surrogate.as_f64(),
            value_loss: terms.value_loss.as_f64(),
            entropy: terms.entropy.as_f64(),
            clip_fraction: terms.clip_fraction.as_f64(),
        });
    }
    Ok(InnerResult { policy, curve })
}
