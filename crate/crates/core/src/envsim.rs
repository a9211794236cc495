//! Parameterized dynamical systems.
//!
//! Both environments expose their physical constants (masses, dampings,
//! gravity) as an explicit [`MdpParams`] vector, so the same code serves as
//! the randomized training simulator and as the held-out "real" system.
//! States are plain values: [`step`] consumes one and returns the next.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::{all_finite, Real};
use crate::seeding::rng_from_seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EnvId {
    Pointmass,
    Cartpole,
}

impl std::fmt::Display for EnvId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EnvId::Pointmass => f.write_str("pointmass"),
            EnvId::Cartpole => f.write_str("cartpole"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Mass,
    Damping,
    Gravity,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamInfo {
    pub name: &'static str,
    pub unit: &'static str,
    pub kind: ParamKind,
}

pub const MIN_MASS: f64 = 0.05;
pub const MIN_DAMPING: f64 = 0.0;
pub const MIN_GRAVITY: f64 = 0.1;
pub const MAX_GRAVITY: f64 = 30.0;

impl ParamKind {
    fn bounds(self) -> (f64, f64) {
        match self {
            ParamKind::Mass => (MIN_MASS, f64::INFINITY),
            ParamKind::Damping => (MIN_DAMPING, f64::INFINITY),
            ParamKind::Gravity => (MIN_GRAVITY, MAX_GRAVITY),
        }
    }
}

/// Physical parameter vector of one concrete MDP.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct MdpParams<T> {
    values: Vec<T>,
}

impl<T: Real> MdpParams<T> {
    pub fn new(values: Vec<T>) -> Self {
        Self { values }
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }
}

/// Per-dimension admissible interval for physical parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ValidityBox<T> {
    pub lower: Vec<T>,
    pub upper: Vec<T>,
}

impl<T: Real> ValidityBox<T> {
    pub fn unbounded(dim: usize) -> Self {
        Self {
            lower: vec![T::neg_infinity(); dim],
            upper: vec![T::infinity(); dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn clamp_in_place(&self, values: &mut [T]) {
        for ((v, &lo), &hi) in values.iter_mut().zip(&self.lower).zip(&self.upper) {
            *v = v.max(lo).min(hi);
        }
    }

    pub fn contains(&self, values: &[T]) -> bool {
        values
            .iter()
            .zip(&self.lower)
            .zip(&self.upper)
            .all(|((&v, &lo), &hi)| v >= lo && v <= hi)
    }
}

/// Fixed (non-randomized) dynamics constants.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Dynamics<T> {
    /// Point mass on an incline of `incline` radians, pushed along the slope.
    Pointmass { incline: T, target: T },
    /// Cart-pole with a pole of half-length `half_length` metres.
    Cartpole {
        half_length: T,
        angle_limit: T,
        position_limit: T,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnvSpec<T> {
    pub env_id: EnvId,
    pub state_dim: usize,
    pub action_dim: usize,
    pub params: Vec<ParamInfo>,
    pub nominal_params: MdpParams<T>,
    pub horizon: usize,
    pub action_low: Vec<T>,
    pub action_high: Vec<T>,
    pub dt: T,
    pub dynamics: Dynamics<T>,
}

const POINTMASS_PARAMS: [ParamInfo; 3] = [
    ParamInfo {
        name: "mass",
        unit: "kg",
        kind: ParamKind::Mass,
    },
    ParamInfo {
        name: "damping",
        unit: "N*s/m",
        kind: ParamKind::Damping,
    },
    ParamInfo {
        name: "gravity",
        unit: "m/s^2",
        kind: ParamKind::Gravity,
    },
];

const CARTPOLE_PARAMS: [ParamInfo; 5] = [
    ParamInfo {
        name: "cart_mass",
        unit: "kg",
        kind: ParamKind::Mass,
    },
    ParamInfo {
        name: "pole_mass",
        unit: "kg",
        kind: ParamKind::Mass,
    },
    ParamInfo {
        name: "cart_damping",
        unit: "N*s/m",
        kind: ParamKind::Damping,
    },
    ParamInfo {
        name: "pole_damping",
        unit: "N*m*s/rad",
        kind: ParamKind::Damping,
    },
    ParamInfo {
        name: "gravity",
        unit: "m/s^2",
        kind: ParamKind::Gravity,
    },
];

impl<T: Real> EnvSpec<T> {
    pub fn new(env_id: EnvId) -> Self {
        match env_id {
            EnvId::Pointmass => Self::pointmass(),
            EnvId::Cartpole => Self::cartpole(),
        }
    }

    pub fn pointmass() -> Self {
        Self {
            env_id: EnvId::Pointmass,
            state_dim: 2,
            action_dim: 1,
            params: POINTMASS_PARAMS.to_vec(),
            nominal_params: MdpParams::new(vec![T::lit(1.0), T::lit(0.5), T::lit(9.8)]),
            horizon: 200,
            action_low: vec![T::lit(-5.0)],
            action_high: vec![T::lit(5.0)],
            dt: T::lit(0.02),
            dynamics: Dynamics::Pointmass {
                incline: T::lit(0.1),
                target: T::lit(1.0),
            },
        }
    }

    pub fn cartpole() -> Self {
        Self {
            env_id: EnvId::Cartpole,
            state_dim: 4,
            action_dim: 1,
            params: CARTPOLE_PARAMS.to_vec(),
            nominal_params: MdpParams::new(vec![T::lit(1.0), T::lit(0.1), T::lit(0.5), T::lit(0.05), T::lit(9.8)]),
            horizon: 500,
            action_low: vec![T::lit(-5.0)],
            action_high: vec![T::lit(5.0)],
            dt: T::lit(0.02),
            dynamics: Dynamics::Cartpole {
                half_length: T::lit(0.25),
                angle_limit: T::lit(0.2),
                position_limit: T::lit(2.4),
            },
        }
    }

    pub fn param_dim(&self) -> usize {
        self.params.len()
    }

    pub fn param_names(&self) -> Vec<&'static str> {
        self.params.iter().map(|p| p.name).collect()
    }

    /// Multipliers used to build the default held-out parameterization:
    /// masses ×1.3, dampings ×1.5, gravity ×1.1.
    pub fn default_real_gap(&self) -> Vec<T> {
        self.params
            .iter()
            .map(|p| match p.kind {
                ParamKind::Mass => T::lit(1.3),
                ParamKind::Damping => T::lit(1.5),
                ParamKind::Gravity => T::lit(1.1),
            })
            .collect()
    }

    pub fn validity_box(&self) -> ValidityBox<T> {
        let (lower, upper) = self
            .params
            .iter()
            .map(|p| {
                let (lo, hi) = p.kind.bounds();
                (T::lit(lo), T::lit(hi))
            })
            .unzip();
        ValidityBox { lower, upper }
    }

    pub fn validate(&self) -> Result<()> {
        if self.nominal_params.len() != self.params.len() {
            return Err(Error::InvalidSpec(format!(
                "{} nominal values for {} parameter names",
                self.nominal_params.len(),
                self.params.len()
            )));
        }
        if self.horizon == 0 {
            return Err(Error::InvalidSpec("horizon must be at least 1".into()));
        }
        if !(self.dt > T::zero()) {
            return Err(Error::InvalidSpec("dt must be positive".into()));
        }
        if self.action_low.len() != self.action_dim || self.action_high.len() != self.action_dim {
            return Err(Error::InvalidSpec("action bounds do not match action_dim".into()));
        }
        if self.action_low.iter().zip(&self.action_high).any(|(lo, hi)| !(lo < hi)) {
            return Err(Error::InvalidSpec("action_low must be below action_high".into()));
        }
        Ok(())
    }

    pub fn check_params(&self, params: &MdpParams<T>) -> Result<()> {
        if params.len() != self.param_dim() {
            return Err(Error::ParameterShape {
                expected: self.param_dim(),
                got: params.len(),
            });
        }
        if !all_finite(params.values()) {
            return Err(Error::NumericInput("non-finite MDP parameter".into()));
        }
        Ok(())
    }

    pub fn clip_action(&self, action: &[T]) -> Vec<T> {
        action
            .iter()
            .zip(&self.action_low)
            .zip(&self.action_high)
            .map(|((&a, &lo), &hi)| a.max(lo).min(hi))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EnvState<T> {
    pub observation: Vec<T>,
    pub step_count: usize,
    pub done: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Transition<T> {
    pub state: EnvState<T>,
    pub reward: T,
    pub done: bool,
}

/// Half-width of the uniform box the initial state is drawn from.
pub const RESET_NOISE: f64 = 0.05;

pub fn reset<T: Real>(spec: &EnvSpec<T>, params: &MdpParams<T>, seed: u64) -> Result<EnvState<T>> {
    spec.check_params(params)?;
    let mut rng = rng_from_seed(seed);
    let observation = (0..spec.state_dim)
        .map(|_| T::lit(rng.random_range(-RESET_NOISE..=RESET_NOISE)))
        .collect();
    Ok(EnvState {
        observation,
        step_count: 0,
        done: false,
    })
}

/// Advances one semi-implicit Euler step of length `spec.dt`.
///
/// The action is clipped to `spec.action_low..spec.action_high` before integration. The reward
/// is computed on the post-integration state.
pub fn step<T: Real>(
    spec: &EnvSpec<T>,
    state: &EnvState<T>,
    action: &[T],
    params: &MdpParams<T>,
) -> Result<Transition<T>> {
    if state.done {
        return Err(Error::EpisodeFinished);
    }
    spec.check_params(params)?;
    if action.len() != spec.action_dim {
        return Err(Error::ParameterShape {
            expected: spec.action_dim,
            got: action.len(),
        });
    }
    if !all_finite(action) {
        return Err(Error::NumericInput("non-finite action".into()));
    }
    let u = spec.clip_action(action)[0];
    let p = params.values();
    let dt = spec.dt;

    let (observation, reward, failed) = match spec.dynamics {
        Dynamics::Pointmass { incline, target } => {
            let (mass, damping, gravity) = (p[0], p[1], p[2]);
            let (x, v) = (state.observation[0], state.observation[1]);
            // viscous term integrated implicitly: v' = v + dt (u - c v' - m g sin α) / m
            let driving = (u - mass * gravity * incline.sin()) / mass;
            let v_next = (v + dt * driving) / (T::one() + dt * damping / mass);
            let x_next = x + dt * v_next;
            let err = x_next - target;
            let reward = -(err * err) - T::lit(0.001) * u * u;
            (vec![x_next, v_next], reward, false)
        }
        Dynamics::Cartpole {
            half_length,
            angle_limit,
            position_limit,
        } => {
            let (cart_mass, pole_mass, cart_damping, pole_damping, gravity) = (p[0], p[1], p[2], p[3], p[4]);
            let (x, x_dot, theta, theta_dot) = (
                state.observation[0],
                state.observation[1],
                state.observation[2],
                state.observation[3],
            );
            let total_mass = cart_mass + pole_mass;
            let (sin, cos) = theta.sin_cos();
            let denom = half_length * (T::lit(4.0 / 3.0) - pole_mass * cos * cos / total_mass);
            let coupling = pole_mass * half_length * cos / total_mass;

            // Undamped accelerations.
            let temp = (u + pole_mass * half_length * theta_dot * theta_dot * sin) / total_mass;
            let theta_acc0 = (gravity * sin - cos * temp) / denom;
            let x_acc0 = temp - coupling * theta_acc0;

            // The viscous terms are linear in the velocities, [ẍ, θ̈] = a0 + B·[ẋ, θ̇];
            // they are taken at the end of the step, (I - dt B) v' = v + dt a0, so
            // stiff joint damping on light poles stays stable.
            let b_tx = cos * cart_damping / (total_mass * denom);
            let b_tt = -pole_damping / (pole_mass * half_length * denom);
            let b_xx = -cart_damping / total_mass - coupling * b_tx;
            let b_xt = -coupling * b_tt;

            let rhs_x = x_dot + dt * x_acc0;
            let rhs_t = theta_dot + dt * theta_acc0;
            let m00 = T::one() - dt * b_xx;
            let m01 = -dt * b_xt;
            let m10 = -dt * b_tx;
            let m11 = T::one() - dt * b_tt;
            let det = m00 * m11 - m01 * m10;
            let x_dot_next = (m11 * rhs_x - m01 * rhs_t) / det;
            let theta_dot_next = (m00 * rhs_t - m10 * rhs_x) / det;

            let x_next = x + dt * x_dot_next;
            let theta_next = theta + dt * theta_dot_next;

            let inside = theta_next.abs() < angle_limit && x_next.abs() < position_limit;
            let reward = if inside { T::one() } else { T::zero() };
            (vec![x_next, x_dot_next, theta_next, theta_dot_next], reward, !inside)
        }
    };

    if !all_finite(&observation) {
        return Err(Error::NumericInput("simulation produced a non-finite state".into()));
    }
    let step_count = state.step_count + 1;
    let done = failed || step_count >= spec.horizon;
    Ok(Transition {
        state: EnvState {
            observation,
            step_count,
            done,
        },
        reward,
        done,
    })
}

/// Builds the held-out parameterization `nominal ⊙ multipliers`, clamped to
/// the validity box.
pub fn make_real_params<T: Real>(spec: &EnvSpec<T>, multipliers: &[T]) -> Result<MdpParams<T>> {
    if multipliers.len() != spec.param_dim() {
        return Err(Error::ParameterShape {
            expected: spec.param_dim(),
            got: multipliers.len(),
        });
    }
    if multipliers.iter().any(|m| !(*m > T::zero()) || !m.is_finite()) {
        return Err(Error::NumericInput(
            "real-gap multipliers must be positive and finite".into(),
        ));
    }
    let mut values: Vec<T> = spec
        .nominal_params
        .values()
        .iter()
        .zip(multipliers)
        .map(|(&n, &m)| n * m)
        .collect();
    spec.validity_box().clamp_in_place(&mut values);
    Ok(MdpParams::new(values))
}
