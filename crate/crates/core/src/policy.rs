//! Gaussian MLP policy and value function with hand-written backprop.
//!
//! The mean network maps observations to action means through `tanh` hidden
//! layers and a linear head. The standard deviation is a state-independent
//! per-dimension `log_std` vector. The value network has the same hidden
//! architecture, its own parameters and a scalar head.
//!
//! Actions are never squashed: log-densities refer to the raw (pre-clip)
//! sample, the environment clips it.

use ndarray::{s, Array1, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::{diag_entropy, diag_log_density};
use crate::scalar::{all_finite, Real};
use crate::seeding::rng_from_seed;

pub mod io;

pub const LOG_STD_MIN: f64 = -10.0;
pub const LOG_STD_MAX: f64 = 2.0;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PolicySpec {
    pub obs_dim: usize,
    pub act_dim: usize,
    pub hidden_sizes: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
}

impl PolicySpec {
    pub fn new(obs_dim: usize, act_dim: usize) -> Self {
        Self::with_hidden(obs_dim, act_dim, vec![64, 64])
    }

    pub fn with_hidden(obs_dim: usize, act_dim: usize, hidden_sizes: Vec<usize>) -> Self {
        Self {
            obs_dim,
            act_dim,
            hidden_sizes,
            activation: Activation::Tanh,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.obs_dim == 0 || self.act_dim == 0 {
            return Err(Error::InvalidSpec("policy obs_dim and act_dim must be >= 1".into()));
        }
        if self.hidden_sizes.is_empty() || self.hidden_sizes.contains(&0) {
            return Err(Error::InvalidSpec(
                "policy needs at least one non-empty hidden layer".into(),
            ));
        }
        Ok(())
    }

    fn layer_sizes(&self, out: usize) -> Vec<usize> {
        let mut sizes = Vec::with_capacity(self.hidden_sizes.len() + 2);
        sizes.push(self.obs_dim);
        sizes.extend_from_slice(&self.hidden_sizes);
        sizes.push(out);
        sizes
    }
}

/// Fully connected layer, `y = x W + b` with `W` stored as `(in, out)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense<T> {
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mlp<T> {
    pub layers: Vec<Dense<T>>,
}

/// Layer activations recorded by a batched forward pass. `acts[0]` is the
/// input, `acts[i]` the output of layer `i - 1`; the last entry is the linear
/// head output.
pub struct MlpTape<T> {
    acts: Vec<Array2<T>>,
}

impl<T: Real> MlpTape<T> {
    pub fn output(&self) -> &Array2<T> {
        self.acts.last().expect("tape has at least the input")
    }
}

impl<T: Real> Mlp<T> {
    fn init<R: Rng>(sizes: &[usize], head_scale: f64, zero_head_bias: bool, rng: &mut R) -> Self {
        let last = sizes.len() - 2;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = 1.0 / (fan_in as f64).sqrt();
                let scale = if i == last { head_scale } else { 1.0 };
                let weight =
                    Array2::from_shape_fn((fan_in, fan_out), |_| T::lit(scale * rng.random_range(-bound..bound)));
                let bias = Array1::from_shape_fn(fan_out, |_| {
                    let b = rng.random_range(-bound..bound);
                    if i == last && zero_head_bias {
                        T::zero()
                    } else {
                        T::lit(b)
                    }
                });
                Dense { weight, bias }
            })
            .collect();
        Self { layers }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Dense {
                    weight: Array2::zeros(l.weight.raw_dim()),
                    bias: Array1::zeros(l.bias.raw_dim()),
                })
                .collect(),
        }
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.bias.len())
    }

    /// Single-input forward pass.
    pub fn forward(&self, x: &[T]) -> Vec<T> {
        let mut h = Array1::from(x.to_vec());
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = h.dot(&layer.weight);
            z += &layer.bias;
            if i < last {
                z.mapv_inplace(|v| v.activation());
            }
            h = z;
        }
        h.to_vec()
    }

    pub fn forward_batch(&self, x: ArrayView2<T>) -> MlpTape<T> {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_owned());
        let last = self.layers.len() - 1;
        for (i, layer) in self.layers.iter().enumerate() {
            let mut z = acts[i].dot(&layer.weight);
            z += &layer.bias;
            if i < last {
                z.mapv_inplace(|v| v.activation());
            }
            acts.push(z);
        }
        MlpTape { acts }
    }

    /// Accumulates `∂L/∂θ` into `grads` given `∂L/∂output` for every row of the tape.
    pub fn backward(&self, tape: &MlpTape<T>, grad_out: Array2<T>, grads: &mut Mlp<T>) {
        let mut g = grad_out;
        for l in (0..self.layers.len()).rev() {
            let input = &tape.acts[l];
            grads.layers[l].weight += &input.t().dot(&g);
            grads.layers[l].bias += &g.sum_axis(Axis(0));
            if l > 0 {
                let mut back = g.dot(&self.layers[l].weight.t());
                ndarray::Zip::from(&mut back)
                    .and(input)
                    .for_each(|b, &a| *b *= T::one() - a * a);
                g = back;
            }
        }
    }

    fn tensors(&self) -> impl Iterator<Item = &[T]> {
        self.layers.iter().flat_map(|l| {
            [
                l.weight.as_slice().expect("standard layout"),
                l.bias.as_slice().expect("standard layout"),
            ]
        })
    }

    fn tensors_mut(&mut self) -> impl Iterator<Item = &mut [T]> {
        self.layers.iter_mut().flat_map(|l| {
            [
                l.weight.as_slice_mut().expect("standard layout"),
                l.bias.as_slice_mut().expect("standard layout"),
            ]
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PolicyParams<T> {
    pub spec: PolicySpec,
    pub mean_net: Mlp<T>,
    pub log_std: Array1<T>,
    pub value_net: Mlp<T>,
}

impl<T: Real> PolicyParams<T> {
    /// Same shapes, all zeros. Used as a gradient / moment container.
    pub fn zeros_like(&self) -> Self {
        Self {
            spec: self.spec.clone(),
            mean_net: self.mean_net.zeros_like(),
            log_std: Array1::zeros(self.log_std.raw_dim()),
            value_net: self.value_net.zeros_like(),
        }
    }

    /// All parameter tensors in a fixed order: mean net, log-std, value net.
    pub fn tensors(&self) -> Vec<&[T]> {
        let mut out: Vec<&[T]> = self.mean_net.tensors().collect();
        out.push(self.log_std.as_slice().expect("standard layout"));
        out.extend(self.value_net.tensors());
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [T]> {
        let mut out: Vec<&mut [T]> = self.mean_net.tensors_mut().collect();
        out.push(self.log_std.as_slice_mut().expect("standard layout"));
        out.extend(self.value_net.tensors_mut());
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn flatten(&self) -> Vec<T> {
        self.tensors().concat()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| all_finite(t))
    }

    pub fn clamp_log_std(&mut self) {
        let (lo, hi) = (T::lit(LOG_STD_MIN), T::lit(LOG_STD_MAX));
        self.log_std.mapv_inplace(|v| v.max(lo).min(hi));
    }

    pub fn action_std(&self) -> Vec<T> {
        self.log_std.iter().map(|v| v.exp()).collect()
    }

    pub fn mean_action(&self, obs: &[T]) -> Result<Vec<T>> {
        self.check_obs(obs)?;
        Ok(self.mean_net.forward(obs))
    }

    fn check_obs(&self, obs: &[T]) -> Result<()> {
        if obs.len() != self.spec.obs_dim {
            return Err(Error::NumericInput(format!(
                "observation has {} entries, policy expects {}",
                obs.len(),
                self.spec.obs_dim
            )));
        }
        if !all_finite(obs) {
            return Err(Error::NumericInput("non-finite observation".into()));
        }
        Ok(())
    }

    fn check_action(&self, action: &[T]) -> Result<()> {
        if action.len() != self.spec.act_dim {
            return Err(Error::NumericInput(format!(
                "action has {} entries, policy expects {}",
                action.len(),
                self.spec.act_dim
            )));
        }
        Ok(())
    }
}

/// Fan-in scaled uniform initialization. The mean head is scaled by 0.01
/// with zero bias, and `log_std` starts at 0.
pub fn init_policy<T: Real>(spec: &PolicySpec, seed: u64) -> Result<PolicyParams<T>> {
    spec.validate()?;
    let mut rng = rng_from_seed(seed);
    let mean_net = Mlp::init(&spec.layer_sizes(spec.act_dim), 0.01, true, &mut rng);
    let value_net = Mlp::init(&spec.layer_sizes(1), 1.0, false, &mut rng);
    Ok(PolicyParams {
        spec: spec.clone(),
        mean_net,
        log_std: Array1::zeros(spec.act_dim),
        value_net,
    })
}

/// Samples `a = μ(obs) + σ ⊙ z` and returns it with its exact log-density.
pub fn act<T: Real, R: Rng + ?Sized>(params: &PolicyParams<T>, obs: &[T], rng: &mut R) -> Result<(Vec<T>, T)> {
    let mean = params.mean_action(obs)?;
    let log_std = params.log_std.as_slice().expect("standard layout");
    let action: Vec<T> = mean
        .iter()
        .zip(log_std)
        .map(|(&m, &ls)| {
            let z: f64 = rng.sample(StandardNormal);
            m + ls.exp() * T::lit(z)
        })
        .collect();
    let lp = diag_log_density(&action, &mean, log_std);
    Ok((action, lp))
}

pub fn log_prob<T: Real>(params: &PolicyParams<T>, obs: &[T], action: &[T]) -> Result<T> {
    let mean = params.mean_action(obs)?;
    params.check_action(action)?;
    Ok(diag_log_density(
        action,
        &mean,
        params.log_std.as_slice().expect("standard layout"),
    ))
}

pub fn value<T: Real>(params: &PolicyParams<T>, obs: &[T]) -> Result<T> {
    params.check_obs(obs)?;
    Ok(params.value_net.forward(obs)[0])
}

pub fn entropy<T: Real>(params: &PolicyParams<T>) -> T {
    diag_entropy(params.log_std.as_slice().expect("standard layout"))
}

/// Per-sample derivatives of `log π(a|s)` with respect to the mean-network
/// output and to `log_std`: `(a − μ)/σ²` and `((a − μ)/σ)² − 1`.
pub fn log_prob_output_grads<T: Real>(action: &[T], mean: &[T], log_std: &[T]) -> (Vec<T>, Vec<T>) {
    action
        .iter()
        .zip(mean)
        .zip(log_std)
        .map(|((&a, &m), &ls)| {
            let inv_var = (-(ls + ls)).exp();
            let d = a - m;
            (d * inv_var, d * d * inv_var - T::one())
        })
        .unzip()
}

/// Gradient of `log π(action | obs)` with respect to every policy parameter.
/// The value-network part is zero.
pub fn log_prob_grad<T: Real>(params: &PolicyParams<T>, obs: &[T], action: &[T]) -> Result<PolicyParams<T>> {
    params.check_obs(obs)?;
    params.check_action(action)?;
    let x = Array2::from_shape_vec((1, obs.len()), obs.to_vec()).expect("row vector");
    let tape = params.mean_net.forward_batch(x.view());
    let mean = tape.output().row(0).to_vec();
    let (d_mean, d_log_std) = log_prob_output_grads(action, &mean, params.log_std.as_slice().expect("standard layout"));
    let mut grads = params.zeros_like();
    let g = Array2::from_shape_vec((1, d_mean.len()), d_mean).expect("row vector");
    params.mean_net.backward(&tape, g, &mut grads.mean_net);
    grads.log_std = Array1::from(d_log_std);
    Ok(grads)
}

/// Gradient of the entropy: one for each `log_std` entry, zero elsewhere.
pub fn entropy_grad<T: Real>(params: &PolicyParams<T>) -> PolicyParams<T> {
    let mut grads = params.zeros_like();
    grads.log_std.fill(T::one());
    grads
}

/// Batched mean-network forward; rows are observations.
pub fn mean_batch<T: Real>(params: &PolicyParams<T>, obs: ArrayView2<T>) -> Array2<T> {
    params.mean_net.forward_batch(obs).output().clone()
}

/// Batched value forward; returns one value per row.
pub fn value_batch<T: Real>(params: &PolicyParams<T>, obs: ArrayView2<T>) -> Array1<T> {
    params.value_net.forward_batch(obs).output().slice(s![.., 0]).to_owned()
}
