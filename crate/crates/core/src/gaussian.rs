//! Diagonal Gaussian helpers shared by the policy and the randomization
//! distribution.

use crate::scalar::{half_ln_two_pi, Real};

/// `log N(x; mean, diag(exp(log_std)²))`.
pub fn diag_log_density<T: Real>(x: &[T], mean: &[T], log_std: &[T]) -> T {
    let c = half_ln_two_pi::<T>();
    let half = T::lit(0.5);
    x.iter()
        .zip(mean)
        .zip(log_std)
        .map(|((&x, &m), &ls)| {
            let z = (x - m) / ls.exp();
            -half * z * z - ls - c
        })
        .sum()
}

/// Differential entropy of a diagonal Gaussian, `Σ (log σ_i + ½ ln 2πe)`.
pub fn diag_entropy<T: Real>(log_std: &[T]) -> T {
    let per_dim = half_ln_two_pi::<T>() + T::lit(0.5);
    log_std.iter().map(|&ls| ls + per_dim).sum()
}
