//! The domain-randomization distribution: a diagonal Gaussian over MDP
//! parameters, stored as `(mean, log_std)`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::envsim::{MdpParams, ValidityBox};
use crate::error::{Error, Result};
use crate::gaussian::diag_log_density;
use crate::scalar::{all_finite, Real};

pub const PHI_LOG_STD_MIN: f64 = -18.0;
pub const PHI_LOG_STD_MAX: f64 = 5.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Phi<T> {
    pub mean: Vec<T>,
    pub log_std: Vec<T>,
}

/// How the initial unit variance is interpreted.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SpreadScale {
    /// Variance 1 in the parameters' own units (kg, N·s/m, m/s²).
    #[default]
    Absolute,
    /// Standard deviation equal to the nominal magnitude of each parameter.
    Relative,
}

impl<T: Real> Phi<T> {
    pub fn new(mean: Vec<T>, log_std: Vec<T>) -> Result<Self> {
        if mean.len() != log_std.len() {
            return Err(Error::ParameterShape {
                expected: mean.len(),
                got: log_std.len(),
            });
        }
        if !all_finite(&mean) || !all_finite(&log_std) {
            return Err(Error::NumericInput("phi entries must be finite".into()));
        }
        let mut phi = Self { mean, log_std };
        phi.clamp_log_std();
        Ok(phi)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn std(&self) -> Vec<T> {
        self.log_std.iter().map(|v| v.exp()).collect()
    }

    pub fn variance(&self) -> Vec<T> {
        self.log_std.iter().map(|&v| (v + v).exp()).collect()
    }

    fn clamp_log_std(&mut self) {
        let (lo, hi) = (T::lit(PHI_LOG_STD_MIN), T::lit(PHI_LOG_STD_MAX));
        for v in &mut self.log_std {
            *v = v.max(lo).min(hi);
        }
    }

    /// `[mean.., log_std..]`, the space the outer optimizers search.
    pub fn to_vector(&self) -> Vec<T> {
        let mut v = self.mean.clone();
        v.extend_from_slice(&self.log_std);
        v
    }

    pub fn from_vector(v: &[T]) -> Result<Self> {
        if !v.len().is_multiple_of(2) || v.is_empty() {
            return Err(Error::ParameterShape {
                expected: 2 * (v.len() / 2).max(1),
                got: v.len(),
            });
        }
        let d = v.len() / 2;
        Self::new(v[..d].to_vec(), v[d..].to_vec())
    }
}

/// Clamps the log-std half of a flattened φ-vector into the allowed range.
pub fn clamp_phi_vector<T: Real>(v: &mut [T]) {
    let d = v.len() / 2;
    let (lo, hi) = (T::lit(PHI_LOG_STD_MIN), T::lit(PHI_LOG_STD_MAX));
    for x in &mut v[d..] {
        *x = x.max(lo).min(hi);
    }
}

/// φ₀: mean at the nominal parameters, unit variance.
pub fn init_phi<T: Real>(nominal: &MdpParams<T>) -> Phi<T> {
    init_phi_scaled(nominal, SpreadScale::Absolute)
}

pub fn init_phi_scaled<T: Real>(nominal: &MdpParams<T>, scale: SpreadScale) -> Phi<T> {
    let log_std = match scale {
        SpreadScale::Absolute => vec![T::zero(); nominal.len()],
        SpreadScale::Relative => nominal
            .values()
            .iter()
            .map(|v| v.abs().ln().max(T::lit(PHI_LOG_STD_MIN)))
            .collect(),
    };
    Phi {
        mean: nominal.values().to_vec(),
        log_std,
    }
}

/// Draws `m = mean + exp(log_std) ⊙ z` and clamps it into `bounds`.
pub fn sample_mdp<T: Real, R: Rng + ?Sized>(
    phi: &Phi<T>,
    bounds: &ValidityBox<T>,
    rng: &mut R,
) -> Result<MdpParams<T>> {
    if bounds.dim() != phi.dim() {
        return Err(Error::ParameterShape {
            expected: phi.dim(),
            got: bounds.dim(),
        });
    }
    let mut values: Vec<T> = phi
        .mean
        .iter()
        .zip(&phi.log_std)
        .map(|(&m, &ls)| {
            let z: f64 = rng.sample(StandardNormal);
            m + ls.exp() * T::lit(z)
        })
        .collect();
    bounds.clamp_in_place(&mut values);
    Ok(MdpParams::new(values))
}

/// Log-density of the unclamped Gaussian at `m`.
pub fn log_density<T: Real>(phi: &Phi<T>, m: &MdpParams<T>) -> Result<T> {
    if m.len() != phi.dim() {
        return Err(Error::ParameterShape {
            expected: phi.dim(),
            got: m.len(),
        });
    }
    Ok(diag_log_density(m.values(), &phi.mean, &phi.log_std))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envsim::EnvSpec;
    use crate::seeding::rng_from_seed;

    #[test]
    fn phi0_has_unit_variance_at_nominal() {
        let spec = EnvSpec::<f64>::cartpole();
        let phi = init_phi(&spec.nominal_params);
        assert_eq!(phi.mean, spec.nominal_params.values());
        assert_eq!(phi.log_std, vec![0.0; 5]);
        assert_eq!(phi.variance(), vec![1.0; 5]);
        assert_eq!(phi.dim(), 5);
    }

    #[test]
    fn relative_scale_uses_nominal_magnitude() {
        let nominal = MdpParams::<f64>::new(vec![2.0, 0.0, 9.8]);
        let phi = init_phi_scaled(&nominal, SpreadScale::Relative);
        assert!((phi.std()[0] - 2.0).abs() < 1e-12);
        assert_eq!(phi.log_std[1], PHI_LOG_STD_MIN);
        assert!((phi.std()[2] - 9.8).abs() < 1e-12);
    }

    #[test]
    fn degenerate_phi_samples_the_mean() {
        let phi = Phi::new(vec![1.0, 0.1, 0.5, 0.05, 9.8], vec![-18.0; 5]).unwrap();
        let bounds = EnvSpec::<f64>::cartpole().validity_box();
        let mut rng = rng_from_seed(3);
        for _ in 0..100 {
            let m = sample_mdp(&phi, &bounds, &mut rng).unwrap();
            for (a, b) in m.values().iter().zip(&phi.mean) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn low_mass_draw_is_clamped() {
        let spec = EnvSpec::<f64>::pointmass();
        let phi = Phi::new(vec![0.06, 0.5, 9.8], vec![0.0, -18.0, -18.0]).unwrap();
        let bounds = spec.validity_box();
        let mut rng = rng_from_seed(17);
        let mut saw_clamp = false;
        for _ in 0..1000 {
            let m = sample_mdp(&phi, &bounds, &mut rng).unwrap();
            assert!(m.values()[0] >= 0.05);
            saw_clamp |= m.values()[0] == 0.05;
        }
        assert!(saw_clamp);
    }

    #[test]
    fn density_at_mode() {
        let phi = Phi::<f64>::new(vec![0.3], vec![0.0]).unwrap();
        let lp = log_density(&phi, &MdpParams::new(vec![0.3])).unwrap();
        assert!((lp + 0.918_938_533_204_672_7).abs() < 1e-12);

        let phi = Phi::new(vec![1.0, 2.0, 3.0], vec![0.5, -1.0, 0.2]).unwrap();
        let lp = log_density(&phi, &MdpParams::new(vec![1.0, 2.0, 3.0])).unwrap();
        let expected = -(0.5 - 1.0 + 0.2) - 1.5 * (2.0 * std::f64::consts::PI).ln();
        assert!((lp - expected).abs() < 1e-12);
    }

    #[test]
    fn shape_errors() {
        let phi = Phi::new(vec![0.3, 1.0], vec![0.0, 0.0]).unwrap();
        assert!(log_density(&phi, &MdpParams::new(vec![0.3])).is_err());
        let mut rng = rng_from_seed(0);
        assert!(sample_mdp(&phi, &ValidityBox::unbounded(3), &mut rng).is_err());
        assert!(Phi::new(vec![0.0], vec![0.0, 1.0]).is_err());
        assert!(Phi::from_vector(&[1.0, 2.0, 3.0]).is_err());
    }

    #[test]
    fn vector_round_trip_and_clamp() {
        let phi = Phi::from_vector(&[1.0, 2.0, -40.0, 9.0]).unwrap();
        assert_eq!(phi.log_std, vec![PHI_LOG_STD_MIN, PHI_LOG_STD_MAX]);
        assert_eq!(phi.to_vector(), vec![1.0, 2.0, -18.0, 5.0]);
        let mut v = vec![0.0, 0.0, -30.0, 30.0];
        clamp_phi_vector(&mut v);
        assert_eq!(v, vec![0.0, 0.0, -18.0, 5.0]);
    }

    #[test]
    fn doubling_std_doubles_deviation() {
        let bounds = ValidityBox::unbounded(3);
        let narrow = Phi::new(vec![1.0, -2.0, 0.5], vec![-0.3, 0.1, 0.0]).unwrap();
        let wide = Phi::new(
            narrow.mean.clone(),
            narrow.log_std.iter().map(|v| v + 2f64.ln()).collect(),
        )
        .unwrap();
        let a = sample_mdp(&narrow, &bounds, &mut rng_from_seed(44)).unwrap();
        let b = sample_mdp(&wide, &bounds, &mut rng_from_seed(44)).unwrap();
        for i in 0..3 {
            let da = a.values()[i] - narrow.mean[i];
            let db = b.values()[i] - narrow.mean[i];
            assert!((db - 2.0 * da).abs() < 1e-12);
        }
    }

    #[test]
    fn sampled_params_have_finite_density() {
        let spec = EnvSpec::<f64>::cartpole();
        let phi = init_phi(&spec.nominal_params);
        let bounds = spec.validity_box();
        let mut rng = rng_from_seed(8);
        for _ in 0..500 {
            let m = sample_mdp(&phi, &bounds, &mut rng).unwrap();
            assert!(bounds.contains(m.values()));
            assert!(log_density(&phi, &m).unwrap().is_finite());
        }
    }
}
