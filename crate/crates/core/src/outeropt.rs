//! Outer-problem solvers over the flattened φ-vector `[mean.., log_std..]`.
//!
//! [`cem_optimize`] runs a population cross-entropy method; [`sf_optimize`]
//! runs gradient ascent on the mean of a Gaussian search distribution using
//! the score-function (likelihood-ratio) estimator with a mean baseline.
//!
//! Candidates of one iteration are evaluated independently (optionally on a
//! thread pool) and always consumed in candidate-index order, so results do
//! not depend on completion order.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::randdist::{clamp_phi_vector, Phi};
use crate::scalar::Real;

/// Initial CEM search spread: one value, one per φ-coordinate, or separate
/// values for the mean and log-std halves.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SearchStd {
    Scalar(f64),
    PerDim(Vec<f64>),
    Split { mean: f64, log_std: f64 },
}

impl SearchStd {
    pub fn resolve(&self, phi_dim: usize) -> Result<Vec<f64>> {
        let out = match self {
            SearchStd::Scalar(s) => vec![*s; phi_dim],
            SearchStd::PerDim(v) => {
                if v.len() != phi_dim {
                    return Err(Error::ParameterShape {
                        expected: phi_dim,
                        got: v.len(),
                    });
                }
                v.clone()
            }
            SearchStd::Split { mean, log_std } => {
                let d = phi_dim / 2;
                let mut v = vec![*mean; d];
                v.extend(std::iter::repeat_n(*log_std, phi_dim - d));
                v
            }
        };
        if out.iter().any(|s| !(*s >= 0.0) || !s.is_finite()) {
            return Err(Error::Config(
                "outer: initial_search_std must be finite and >= 0".into(),
            ));
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CemConfig {
    pub population_size: usize,
    pub elite_fraction: f64,
    pub iterations: usize,
    pub initial_search_std: SearchStd,
    pub noise_floor: f64,
    pub smoothing: f64,
}

impl Default for CemConfig {
    fn default() -> Self {
        Self {
            population_size: 10,
            elite_fraction: 0.3,
            iterations: 10,
            initial_search_std: SearchStd::Split {
                mean: 0.5,
                log_std: 0.3,
            },
            noise_floor: 0.02,
            smoothing: 0.9,
        }
    }
}

impl CemConfig {
    pub fn elite_count(&self) -> usize {
        (self.elite_fraction * self.population_size as f64).ceil() as usize
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(format!("cem: {m}")));
        if self.population_size < 4 {
            return fail("population_size must be >= 4");
        }
        if !(self.elite_fraction > 0.0 && self.elite_fraction <= 1.0) {
            return fail("elite_fraction must be in (0, 1]");
        }
        if self.elite_count() < 2 {
            return fail("elite_fraction * population_size must round up to >= 2");
        }
        if !(self.noise_floor >= 0.0) {
            return fail("noise_floor must be >= 0");
        }
        if !(self.smoothing > 0.0 && self.smoothing <= 1.0) {
            return fail("smoothing must be in (0, 1]");
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoredCandidate<T> {
    pub phi_vector: Vec<T>,
    pub score: T,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CemState<T> {
    pub search_mean: Vec<T>,
    pub search_std: Vec<T>,
    pub iteration: usize,
    pub best_candidate: Option<ScoredCandidate<T>>,
}

impl<T: Real> CemState<T> {
    pub fn new(search_mean: Vec<T>, search_std: Vec<T>) -> Self {
        Self {
            search_mean,
            search_std,
            iteration: 0,
            best_candidate: None,
        }
    }

    pub fn dim(&self) -> usize {
        self.search_mean.len()
    }

    /// Replaces the best candidate if `c` scores strictly higher.
    pub fn offer(&mut self, c: &ScoredCandidate<T>) {
        if !c.score.is_finite() {
            return;
        }
        let better = self.best_candidate.as_ref().is_none_or(|b| c.score > b.score);
        if better {
            self.best_candidate = Some(c.clone());
        }
    }
}

/// Draws `N` candidates from `Normal(search_mean, diag(search_std²))`; the
/// log-std half of each candidate is clamped to the φ bounds.
pub fn cem_ask<T: Real, R: Rng + ?Sized>(state: &CemState<T>, cfg: &CemConfig, rng: &mut R) -> Vec<Vec<T>> {
    (0..cfg.population_size)
        .map(|_| {
            let mut v: Vec<T> = state
                .search_mean
                .iter()
                .zip(&state.search_std)
                .map(|(&m, &s)| {
                    let z: f64 = rng.sample(StandardNormal);
                    m + s * T::lit(z)
                })
                .collect();
            clamp_phi_vector(&mut v);
            v
        })
        .collect()
}

/// Indices of the top-`k` candidates by score; ties go to the lower index.
pub fn elite_indices<T: Real>(scored: &[ScoredCandidate<T>], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scored.len()).collect();
    // stable sort keeps index order among equal scores
    order.sort_by(|&a, &b| {
        scored[b]
            .score
            .partial_cmp(&scored[a].score)
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    order.truncate(k);
    order
}

/// Refits the search distribution to the elites with smoothing and a std floor.
pub fn cem_tell<T: Real>(state: &CemState<T>, scored: &[ScoredCandidate<T>], cfg: &CemConfig) -> Result<CemState<T>> {
    if scored.len() != cfg.population_size {
        return Err(Error::Protocol(format!(
            "expected {} scored candidates, got {}",
            cfg.population_size,
            scored.len()
        )));
    }
    if let Some(c) = scored.iter().find(|c| c.phi_vector.len() != state.dim()) {
        return Err(Error::Protocol(format!(
            "candidate has dimension {}, search space has {}",
            c.phi_vector.len(),
            state.dim()
        )));
    }
    if scored.iter().any(|c| c.score.is_nan()) {
        return Err(Error::Protocol("NaN score".into()));
    }
    let elites: Vec<usize> = elite_indices(scored, cfg.elite_count())
        .into_iter()
        .filter(|&i| scored[i].score.is_finite())
        .collect();
    if elites.is_empty() {
        return Err(Error::OptimizationFailed("no finite-scored elites".into()));
    }
    let k = T::lit(elites.len() as f64);
    let alpha = T::lit(cfg.smoothing);
    let floor = T::lit(cfg.noise_floor);
    let dim = state.dim();
    let mut search_mean = Vec::with_capacity(dim);
    let mut search_std = Vec::with_capacity(dim);
    for d in 0..dim {
        let mean = elites.iter().map(|&i| scored[i].phi_vector[d]).sum::<T>() / k;
        let var = elites
            .iter()
            .map(|&i| {
                let dv = scored[i].phi_vector[d] - mean;
                dv * dv
            })
            .sum::<T>()
            / k;
        search_mean.push(alpha * mean + (T::one() - alpha) * state.search_mean[d]);
        let s = alpha * var.sqrt() + (T::one() - alpha) * state.search_std[d];
        search_std.push(s.max(floor));
    }
    let mut next = CemState {
        search_mean,
        search_std,
        iteration: state.iteration + 1,
        best_candidate: state.best_candidate.clone(),
    };
    for c in scored {
        next.offer(c);
    }
    Ok(next)
}

/// Identifies one objective evaluation. Iteration 0, index 0 is φ₀.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CandidateId {
    pub iteration: usize,
    pub index: usize,
}

impl CandidateId {
    pub const BASELINE: CandidateId = CandidateId { iteration: 0, index: 0 };
}

/// One objective evaluation together with whatever the objective reports
/// alongside its score.
#[derive(Clone, Debug, PartialEq)]
pub struct Evaluated<T, X> {
    pub id: CandidateId,
    pub phi_vector: Vec<T>,
    pub score: T,
    pub extra: X,
}

impl<T: Real, X> Evaluated<T, X> {
    pub fn scored(&self) -> ScoredCandidate<T> {
        ScoredCandidate {
            phi_vector: self.phi_vector.clone(),
            score: self.score,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct IterationSummary<T, X> {
    pub iteration: usize,
    pub candidates: Vec<Evaluated<T, X>>,
    /// Search distribution after this iteration's update.
    pub search_mean: Vec<T>,
    pub search_std: Vec<T>,
    pub best_score: T,
}

#[derive(Clone, Debug)]
pub struct OuterResult<T, X> {
    pub baseline: Evaluated<T, X>,
    pub best: ScoredCandidate<T>,
    pub best_phi: Phi<T>,
    pub trace: Vec<IterationSummary<T, X>>,
}

impl<T: Real, X> OuterResult<T, X> {
    /// Best-so-far score after each iteration, starting with φ₀ at index 0.
    pub fn best_so_far(&self) -> Vec<T> {
        std::iter::once(self.baseline.score)
            .chain(self.trace.iter().map(|s| s.best_score))
            .collect()
    }
}

/// Runs objective calls on a bounded pool; results come back in input order.
pub struct Evaluator {
    pool: Option<rayon::ThreadPool>,
}

impl Evaluator {
    pub fn new(parallel: usize) -> Result<Self> {
        let pool = if parallel > 1 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(parallel)
                    .build()
                    .map_err(|e| Error::Config(format!("thread pool: {e}")))?,
            )
        } else {
            None
        };
        Ok(Self { pool })
    }

    pub fn sequential() -> Self {
        Self { pool: None }
    }

    pub fn evaluate<T, X, F>(&self, objective: &F, jobs: Vec<(CandidateId, Vec<T>)>) -> Vec<Evaluated<T, X>>
    where
        T: Real,
        X: Send,
        F: Fn(&[T], CandidateId) -> (T, X) + Sync,
    {
        let run = |(id, v): (CandidateId, Vec<T>)| {
            let (score, extra) = objective(&v, id);
            Evaluated {
                id,
                phi_vector: v,
                score,
                extra,
            }
        };
        match &self.pool {
            Some(pool) => pool.install(|| jobs.into_par_iter().map(run).collect()),
            None => jobs.into_iter().map(run).collect(),
        }
    }
}

fn sanitize<T: Real, X>(batch: &mut [Evaluated<T, X>]) {
    for c in batch {
        if !c.score.is_finite() {
            log::warn!(
                "candidate {}:{} returned non-finite score {}; discarding",
                c.id.iteration,
                c.id.index,
                c.score
            );
            c.score = T::neg_infinity();
        }
    }
}

fn evaluate_baseline<T, X, F>(objective: &F, phi0: &Phi<T>, evaluator: &Evaluator) -> Result<Evaluated<T, X>>
where
    T: Real,
    X: Send,
    F: Fn(&[T], CandidateId) -> (T, X) + Sync,
{
    let mut v = phi0.to_vector();
    clamp_phi_vector(&mut v);
    let baseline = evaluator
        .evaluate(objective, vec![(CandidateId::BASELINE, v)])
        .pop()
        .expect("one job");
    if !baseline.score.is_finite() {
        return Err(Error::OptimizationFailed(format!(
            "baseline evaluation returned {}",
            baseline.score
        )));
    }
    Ok(baseline)
}

/// Cross-entropy method over the φ-vector starting from `phi0`.
///
/// `phi0` is evaluated once first (as candidate [`CandidateId::BASELINE`]), so
/// the returned best is never worse than the φ₀ score. `observer` sees every
/// iteration before the next one starts.
pub fn cem_optimize<T, X, F, R, O>(
    objective: &F,
    phi0: &Phi<T>,
    cfg: &CemConfig,
    rng: &mut R,
    evaluator: &Evaluator,
    mut observer: O,
) -> Result<OuterResult<T, X>>
where
    T: Real,
    X: Send,
    F: Fn(&[T], CandidateId) -> (T, X) + Sync,
    R: Rng + ?Sized,
    O: FnMut(&IterationSummary<T, X>) -> Result<()>,
{
    cfg.validate()?;
    let start = phi0.to_vector();
    let std0 = cfg
        .initial_search_std
        .resolve(start.len())?
        .into_iter()
        .map(T::lit)
        .collect();
    let baseline = evaluate_baseline(objective, phi0, evaluator)?;
    let mut state = CemState::new(start, std0);
    state.offer(&baseline.scored());

    let mut trace = Vec::with_capacity(cfg.iterations);
    for _ in 0..cfg.iterations {
        let iteration = state.iteration + 1;
        let jobs = cem_ask(&state, cfg, rng)
            .into_iter()
            .enumerate()
            .map(|(index, v)| (CandidateId { iteration, index }, v))
            .collect();
        let mut batch = evaluator.evaluate(objective, jobs);
        sanitize(&mut batch);
        let all_failed = batch.iter().all(|c| !c.score.is_finite());
        let scored: Vec<ScoredCandidate<T>> = batch.iter().map(Evaluated::scored).collect();
        let next = if all_failed {
            None
        } else {
            Some(cem_tell(&state, &scored, cfg)?)
        };
        let view = next.as_ref().unwrap_or(&state);
        let summary = IterationSummary {
            iteration,
            candidates: batch,
            search_mean: view.search_mean.clone(),
            search_std: view.search_std.clone(),
            best_score: view.best_candidate.as_ref().map_or(T::neg_infinity(), |b| b.score),
        };
        observer(&summary)?;
        trace.push(summary);
        match next {
            Some(s) => state = s,
            None => {
                return Err(Error::OptimizationFailed(format!(
                    "every candidate of iteration {iteration} returned a non-finite score"
                )))
            }
        }
    }

    let best = state
        .best_candidate
        .clone()
        .expect("baseline is always a finite candidate");
    let best_phi = Phi::from_vector(&best.phi_vector)?;
    Ok(OuterResult {
        baseline,
        best,
        best_phi,
        trace,
    })
}

/// Score-function gradient of `E_{φ~N(μ, diag σ²)}[J(φ)]` with a mean baseline.
#[derive(Clone, Debug, PartialEq)]
pub struct SfGradient<T> {
    /// `(1/N) Σ (φ_i − μ)/σ² · (J_i − b)`
    pub mean: Vec<T>,
    /// `(1/N) Σ ((φ_i − μ)²/σ² − 1) · (J_i − b)`, with respect to `log σ`.
    pub log_std: Vec<T>,
}

pub fn sf_gradient<T: Real>(
    omega_mean: &[T],
    omega_std: &[T],
    samples: &[ScoredCandidate<T>],
) -> Result<SfGradient<T>> {
    if samples.len() < 2 {
        return Err(Error::Protocol(
            "score-function gradient needs at least 2 samples".into(),
        ));
    }
    if omega_std.len() != omega_mean.len() {
        return Err(Error::Protocol("omega mean/std dimension mismatch".into()));
    }
    if samples.iter().any(|s| s.phi_vector.len() != omega_mean.len()) {
        return Err(Error::Protocol("sample dimension does not match omega".into()));
    }
    let n = T::lit(samples.len() as f64);
    let baseline = samples.iter().map(|s| s.score).sum::<T>() / n;
    let dim = omega_mean.len();
    let mut mean = vec![T::zero(); dim];
    let mut log_std = vec![T::zero(); dim];
    for s in samples {
        let w = s.score - baseline;
        for d in 0..dim {
            let z = (s.phi_vector[d] - omega_mean[d]) / omega_std[d];
            mean[d] += z / omega_std[d] * w;
            log_std[d] += (z * z - T::one()) * w;
        }
    }
    for g in mean.iter_mut().chain(log_std.iter_mut()) {
        *g /= n;
    }
    Ok(SfGradient { mean, log_std })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SfConfig {
    pub steps: usize,
    pub step_size: f64,
    pub population_size: usize,
    pub sampling_std: f64,
}

impl Default for SfConfig {
    fn default() -> Self {
        Self {
            steps: 10,
            step_size: 0.05,
            population_size: 10,
            sampling_std: 0.3,
        }
    }
}

impl SfConfig {
    pub fn validate(&self) -> Result<()> {
        if self.population_size < 2 {
            return Err(Error::Config("score_function: population_size must be >= 2".into()));
        }
        if !(self.sampling_std > 0.0) || !(self.step_size >= 0.0) {
            return Err(Error::Config(
                "score_function: sampling_std must be > 0 and step_size >= 0".into(),
            ));
        }
        Ok(())
    }
}

/// Plain stochastic gradient ascent on the search mean ω with a fixed
/// isotropic sampling spread.
pub fn sf_optimize<T, X, F, R, O>(
    objective: &F,
    phi0: &Phi<T>,
    cfg: &SfConfig,
    rng: &mut R,
    evaluator: &Evaluator,
    mut observer: O,
) -> Result<OuterResult<T, X>>
where
    T: Real,
    X: Send,
    F: Fn(&[T], CandidateId) -> (T, X) + Sync,
    R: Rng + ?Sized,
    O: FnMut(&IterationSummary<T, X>) -> Result<()>,
{
    cfg.validate()?;
    let mut omega = phi0.to_vector();
    let sigma = vec![T::lit(cfg.sampling_std); omega.len()];
    let step = T::lit(cfg.step_size);
    let baseline = evaluate_baseline(objective, phi0, evaluator)?;
    let mut tracker = CemState::new(omega.clone(), sigma.clone());
    tracker.offer(&baseline.scored());

    let mut trace = Vec::with_capacity(cfg.steps);
    for k in 0..cfg.steps {
        let iteration = k + 1;
        let raw: Vec<Vec<T>> = (0..cfg.population_size)
            .map(|_| {
                omega
                    .iter()
                    .zip(&sigma)
                    .map(|(&m, &s)| {
                        let z: f64 = rng.sample(StandardNormal);
                        m + s * T::lit(z)
                    })
                    .collect()
            })
            .collect();
        let jobs = raw
            .iter()
            .enumerate()
            .map(|(index, v)| {
                let mut c = v.clone();
                clamp_phi_vector(&mut c);
                (CandidateId { iteration, index }, c)
            })
            .collect();
        let mut batch = evaluator.evaluate(objective, jobs);
        sanitize(&mut batch);
        for c in &batch {
            tracker.offer(&c.scored());
        }
        // The estimator uses the unclamped draws and only finite scores.
        let samples: Vec<ScoredCandidate<T>> = raw
            .iter()
            .zip(&batch)
            .filter(|(_, c)| c.score.is_finite())
            .map(|(v, c)| ScoredCandidate {
                phi_vector: v.clone(),
                score: c.score,
            })
            .collect();
        let failed = samples.is_empty();
        if samples.len() >= 2 {
            let grad = sf_gradient(&omega, &sigma, &samples)?;
            for (w, g) in omega.iter_mut().zip(&grad.mean) {
                *w += step * *g;
            }
            clamp_phi_vector(&mut omega);
        }
        let summary = IterationSummary {
            iteration,
            candidates: batch,
            search_mean: omega.clone(),
            search_std: sigma.clone(),
            best_score: tracker.best_candidate.as_ref().map_or(T::neg_infinity(), |b| b.score),
        };
        observer(&summary)?;
        trace.push(summary);
        if failed {
            return Err(Error::OptimizationFailed(format!(
                "every candidate of step {iteration} returned a non-finite score"
            )));
        }
    }
    tracker.search_mean = omega;
    let best = tracker.best_candidate.clone().expect("baseline is finite");
    let best_phi = Phi::from_vector(&best.phi_vector)?;
    Ok(OuterResult {
        baseline,
        best,
        best_phi,
        trace,
    })
}
