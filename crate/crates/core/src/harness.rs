//! Experiment orchestration: φ₀ baseline, bilevel outer runs, evaluation on
//! the held-out parameterization, the JSONL record file and its report.
//!
//! Record layout, one JSON object per line:
//! a `header` line, then for every seed its `candidate` lines (N·K of them)
//! followed by one `seed_summary` line. Wall-clock timings go to a sidecar
//! file next to the record so the record itself is reproducible byte for byte.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::envsim::{make_real_params, reset, step, EnvId, EnvSpec, MdpParams};
use crate::error::{Error, Result};
use crate::outeropt::{
    cem_optimize, sf_optimize, CandidateId, CemConfig, Evaluated, Evaluator, IterationSummary, OuterResult, SfConfig,
};
use crate::policy::{act, PolicyParams};
use crate::ppo::{train_inner, PpoConfig};
use crate::randdist::{init_phi_scaled, Phi, SpreadScale};
use crate::scalar::Real;
use crate::seeding::{candidate_seed, derive, mix, rng_from_seed, Purpose};

pub const RECORD_FORMAT: &str = "domrand-record";
pub const RECORD_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OuterMethod {
    Cem,
    #[serde(alias = "sf")]
    ScoreFunction,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvalDiscount {
    Undiscounted,
    Discounted(f64),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub env_id: EnvId,
    pub real_gap_multipliers: Vec<f64>,
    /// How φ₀'s unit variance is read: in parameter units or relative to nominal.
    pub initial_spread: SpreadScale,
    pub precision: Precision,
    pub inner: PpoConfig,
    pub outer_method: OuterMethod,
    pub cem: CemConfig,
    pub score_function: SfConfig,
    pub eval_episodes: usize,
    pub eval_discount: EvalDiscount,
    pub seeds: Vec<u64>,
    // Execution settings; left out of the record snapshot.
    #[serde(skip_serializing)]
    pub output_path: PathBuf,
    #[serde(skip_serializing)]
    pub parallel_candidates: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self::for_env(EnvId::Cartpole)
    }
}

impl ExperimentConfig {
    pub fn for_env(env_id: EnvId) -> Self {
        Self {
            env_id,
            real_gap_multipliers: EnvSpec::<f64>::new(env_id).default_real_gap(),
            initial_spread: SpreadScale::Absolute,
            precision: Precision::F32,
            inner: PpoConfig::for_env(env_id),
            outer_method: OuterMethod::Cem,
            cem: CemConfig::default(),
            score_function: SfConfig::default(),
            eval_episodes: 20,
            eval_discount: EvalDiscount::Undiscounted,
            seeds: vec![0, 1, 2, 3, 4],
            output_path: PathBuf::from("record.jsonl"),
            parallel_candidates: 1,
        }
    }

    /// Parses a TOML config. Omitted keys take the defaults of the chosen
    /// `env_id`; unknown keys are errors.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let user: toml::Table = text
            .parse()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        let env_id = match user.get("env_id") {
            Some(v) => v
                .clone()
                .try_into::<EnvId>()
                .map_err(|e| Error::Config(format!("env_id: {e}")))?,
            None => EnvId::Cartpole,
        };
        let mut merged = toml::Table::try_from(Self::for_env(env_id)).map_err(|e| Error::Config(e.to_string()))?;
        merge(&mut merged, user);
        let cfg: Self = toml::Value::Table(merged)
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text =
            std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        let dim = EnvSpec::<f64>::new(self.env_id).param_dim();
        if self.real_gap_multipliers.len() != dim {
            return fail(format!(
                "real_gap_multipliers has {} entries, {} expects {dim}",
                self.real_gap_multipliers.len(),
                self.env_id
            ));
        }
        if self.real_gap_multipliers.iter().any(|m| !(*m > 0.0) || !m.is_finite()) {
            return fail("real_gap_multipliers must be positive".into());
        }
        if self.eval_episodes == 0 {
            return fail("eval_episodes must be >= 1".into());
        }
        if self.seeds.is_empty() {
            return fail("seeds must not be empty".into());
        }
        if self.parallel_candidates == 0 {
            return fail("parallel_candidates must be >= 1".into());
        }
        if let EvalDiscount::Discounted(g) = self.eval_discount {
            if !(0.0..=1.0).contains(&g) {
                return fail("eval_discount must be in [0, 1]".into());
            }
        }
        self.inner.validate()?;
        match self.outer_method {
            OuterMethod::Cem => self.cem.validate(),
            OuterMethod::ScoreFunction => self.score_function.validate(),
        }
    }

    /// Outer iterations the configured method will run.
    pub fn outer_iterations(&self) -> usize {
        match self.outer_method {
            OuterMethod::Cem => self.cem.iterations,
            OuterMethod::ScoreFunction => self.score_function.steps,
        }
    }

    pub fn population_size(&self) -> usize {
        match self.outer_method {
            OuterMethod::Cem => self.cem.population_size,
            OuterMethod::ScoreFunction => self.score_function.population_size,
        }
    }

    pub fn timings_path(&self) -> PathBuf {
        let mut p = self.output_path.clone().into_os_string();
        p.push(".timings.json");
        PathBuf::from(p)
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

/// Everything one configured experiment needs, instantiated at scalar `T`.
#[derive(Clone, Debug)]
pub struct Setup<T> {
    pub config: ExperimentConfig,
    pub spec: EnvSpec<T>,
    pub real_params: MdpParams<T>,
    pub phi0: Phi<T>,
}

impl<T: Real> Setup<T> {
    pub fn new(config: &ExperimentConfig) -> Result<Self> {
        config.validate()?;
        let spec = EnvSpec::<T>::new(config.env_id);
        let multipliers: Vec<T> = config.real_gap_multipliers.iter().map(|&m| T::lit(m)).collect();
        let real_params = make_real_params(&spec, &multipliers)?;
        let phi0 = init_phi_scaled(&spec.nominal_params, config.initial_spread);
        Ok(Self {
            config: config.clone(),
            spec,
            real_params,
            phi0,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub mean: f64,
    pub std_error: f64,
    pub episode_returns: Vec<f64>,
}

/// Rolls out `episodes` stochastic-action episodes under `m_real` and returns
/// the mean return and its standard error.
pub fn evaluate_real<T: Real>(
    policy: &PolicyParams<T>,
    spec: &EnvSpec<T>,
    m_real: &MdpParams<T>,
    episodes: usize,
    discount: EvalDiscount,
    seed: u64,
) -> Result<EvalSummary> {
    if episodes == 0 {
        return Err(Error::Config("evaluation needs at least one episode".into()));
    }
    let gamma = match discount {
        EvalDiscount::Undiscounted => 1.0,
        EvalDiscount::Discounted(g) => g,
    };
    let base = derive(seed, Purpose::Evaluation);
    let mut returns = Vec::with_capacity(episodes);
    for e in 0..episodes as u64 {
        let mut rng = rng_from_seed(mix(&[base, e, 1]));
        let mut state = reset(spec, m_real, mix(&[base, e, 0]))?;
        let mut total = 0.0;
        let mut weight = 1.0;
        while !state.done {
            let (action, _) = act(policy, &state.observation, &mut rng)?;
            let tr = step(spec, &state, &action, m_real)?;
            total += weight * tr.reward.as_f64();
            weight *= gamma;
            state = tr.state;
        }
        returns.push(total);
    }
    let n = returns.len() as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let std_error = if returns.len() > 1 {
        let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    } else {
        0.0
    };
    Ok(EvalSummary {
        mean,
        std_error,
        episode_returns: returns,
    })
}

/// One inner training plus its real-environment evaluation.
#[derive(Clone, Debug)]
pub struct TrainedCandidate<T> {
    pub policy: PolicyParams<T>,
    pub eval: EvalSummary,
    pub train_curve: Vec<Option<f64>>,
}

/// `objective(φ)` for the candidate identified by `id` under `master_seed`.
pub fn train_and_evaluate<T: Real>(
    setup: &Setup<T>,
    phi: &Phi<T>,
    master_seed: u64,
    id: CandidateId,
) -> Result<TrainedCandidate<T>> {
    let seed = candidate_seed(master_seed, id.iteration, id.index);
    let cfg = &setup.config;
    let inner = train_inner(phi, &setup.spec, &cfg.inner, seed)?;
    let eval = evaluate_real(
        &inner.policy,
        &setup.spec,
        &setup.real_params,
        cfg.eval_episodes,
        cfg.eval_discount,
        seed,
    )?;
    let train_curve = inner.returns_curve();
    Ok(TrainedCandidate {
        policy: inner.policy,
        eval,
        train_curve,
    })
}

/// Trains at φ₀ with the candidate seed of (iteration 0, index 0), the same
/// derivation every outer candidate uses.
pub fn run_baseline<T: Real>(setup: &Setup<T>, seed: u64) -> Result<TrainedCandidate<T>> {
    train_and_evaluate(setup, &setup.phi0, seed, CandidateId::BASELINE)
}

/// Per-candidate information carried alongside the score.
#[derive(Clone, Debug, Default)]
pub struct CandidateOutcome {
    /// Evaluation mean before it is narrowed to the training scalar.
    pub score: f64,
    pub std_error: Option<f64>,
    pub train_curve: Vec<Option<f64>>,
    pub error: Option<String>,
    pub seconds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhiRecord {
    pub mean: Vec<f64>,
    pub log_std: Vec<f64>,
}

impl PhiRecord {
    fn from_vector<T: Real>(v: &[T]) -> Self {
        let d = v.len() / 2;
        Self {
            mean: v[..d].iter().map(|x| x.as_f64()).collect(),
            log_std: v[d..].iter().map(|x| x.as_f64()).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CandidateLine {
    pub seed: u64,
    pub iteration: usize,
    pub index: usize,
    pub phi: PhiRecord,
    /// `None` when the candidate failed or scored non-finite.
    pub score: Option<f64>,
    pub std_error: Option<f64>,
    pub train_curve: Vec<Option<f64>>,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaselineEntry {
    pub phi: PhiRecord,
    pub score: f64,
    pub std_error: f64,
    pub episode_returns: Vec<f64>,
    pub train_curve: Vec<Option<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizedEntry {
    pub phi: PhiRecord,
    pub score: f64,
    pub iteration: usize,
    pub index: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub search_mean: Vec<f64>,
    pub search_std: Vec<f64>,
    pub best_score: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SeedSummary {
    pub seed: u64,
    pub outer_method: OuterMethod,
    pub baseline: BaselineEntry,
    pub optimized: OptimizedEntry,
    /// Relative improvement when the baseline score is positive, otherwise
    /// the absolute difference (see `improvement_is_ratio`).
    pub improvement: f64,
    pub improvement_is_ratio: bool,
    /// Best score after each outer iteration, starting with φ₀.
    pub best_so_far: Vec<f64>,
    pub trace: Vec<TraceEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub format: String,
    pub version: u32,
    pub config: ExperimentConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RecordLine {
    Header(Header),
    Candidate(CandidateLine),
    SeedSummary(SeedSummary),
}

/// `(J* − J₀)/J₀` if `J₀ > 0`, else `J* − J₀` with the ratio flag cleared.
pub fn improvement(baseline: f64, optimized: f64) -> (f64, bool) {
    if baseline > 0.0 {
        ((optimized - baseline) / baseline, true)
    } else {
        (optimized - baseline, false)
    }
}

/// Single-owner, line-buffered writer of the record file.
pub struct RecordWriter {
    out: BufWriter<File>,
}

impl RecordWriter {
    pub fn create(path: impl AsRef<Path>, config: &ExperimentConfig) -> Result<Self> {
        if let Some(dir) = path.as_ref().parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir)?;
        }
        let mut w = Self {
            out: BufWriter::new(File::create(path)?),
        };
        w.write(&RecordLine::Header(Header {
            format: RECORD_FORMAT.into(),
            version: RECORD_VERSION,
            config: config.clone(),
        }))?;
        w.flush()?;
        Ok(w)
    }

    pub fn write(&mut self, line: &RecordLine) -> Result<()> {
        let text = serde_json::to_string(line).map_err(|e| Error::Io(e.into()))?;
        self.out.write_all(text.as_bytes())?;
        self.out.write_all(b"\n")?;
        Ok(())
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct SeedTimings {
    pub seed: u64,
    pub baseline_seconds: f64,
    pub total_seconds: f64,
    /// Per outer iteration, per candidate index.
    pub candidate_seconds: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub parallel_candidates: usize,
    pub total_seconds: f64,
    pub seeds: Vec<SeedTimings>,
}

fn candidate_line<T: Real>(seed: u64, c: &Evaluated<T, CandidateOutcome>) -> CandidateLine {
    CandidateLine {
        seed,
        iteration: c.id.iteration,
        index: c.id.index,
        phi: PhiRecord::from_vector(&c.phi_vector),
        score: c.score.is_finite().then_some(c.extra.score),
        std_error: c.extra.std_error,
        train_curve: c.extra.train_curve.clone(),
        error: c.extra.error.clone(),
    }
}

/// Runs the configured outer method for one master seed, streaming candidate
/// lines to `writer` after every iteration, and returns the seed summary.
pub fn run_bilevel<T: Real>(
    setup: &Setup<T>,
    seed: u64,
    evaluator: &Evaluator,
    writer: &mut RecordWriter,
    timings: &mut SeedTimings,
) -> Result<SeedSummary> {
    let started = Instant::now();
    let baseline = run_baseline(setup, seed)?;
    timings.seed = seed;
    timings.baseline_seconds = started.elapsed().as_secs_f64();
    log::info!("seed {seed}: baseline J(phi0) = {:.2}", baseline.eval.mean);

    let objective = |v: &[T], id: CandidateId| -> (T, CandidateOutcome) {
        if id == CandidateId::BASELINE {
            let out = CandidateOutcome {
                score: baseline.eval.mean,
                std_error: Some(baseline.eval.std_error),
                train_curve: baseline.train_curve.clone(),
                ..CandidateOutcome::default()
            };
            return (T::lit(baseline.eval.mean), out);
        }
        let t0 = Instant::now();
        let result = Phi::from_vector(v).and_then(|phi| train_and_evaluate(setup, &phi, seed, id));
        let seconds = t0.elapsed().as_secs_f64();
        match result {
            Ok(c) => (
                T::lit(c.eval.mean),
                CandidateOutcome {
                    score: c.eval.mean,
                    std_error: Some(c.eval.std_error),
                    train_curve: c.train_curve,
                    error: None,
                    seconds,
                },
            ),
            Err(e) => {
                log::warn!("seed {seed}: candidate {}:{} failed: {e}", id.iteration, id.index);
                (
                    T::nan(),
                    CandidateOutcome {
                        score: f64::NAN,
                        error: Some(e.to_string()),
                        seconds,
                        ..CandidateOutcome::default()
                    },
                )
            }
        }
    };

    let mut outer_rng = rng_from_seed(derive(seed, Purpose::OuterSearch));
    let mut observe = |s: &IterationSummary<T, CandidateOutcome>| -> Result<()> {
        for c in &s.candidates {
            writer.write(&RecordLine::Candidate(candidate_line(seed, c)))?;
        }
        writer.flush()?;
        timings
            .candidate_seconds
            .push(s.candidates.iter().map(|c| c.extra.seconds).collect());
        log::info!(
            "seed {seed}: iteration {} best {:.2}",
            s.iteration,
            s.best_score.as_f64()
        );
        Ok(())
    };
    let cfg = &setup.config;
    let result: OuterResult<T, CandidateOutcome> = match cfg.outer_method {
        OuterMethod::Cem => cem_optimize(
            &objective,
            &setup.phi0,
            &cfg.cem,
            &mut outer_rng,
            evaluator,
            &mut observe,
        )?,
        OuterMethod::ScoreFunction => sf_optimize(
            &objective,
            &setup.phi0,
            &cfg.score_function,
            &mut outer_rng,
            evaluator,
            &mut observe,
        )?,
    };

    // Reported scores come from the f64 evaluation means so that a run with
    // no outer iterations reproduces the baseline exactly.
    let mut best = (baseline.eval.mean, CandidateId::BASELINE, setup.phi0.to_vector());
    let mut best_so_far = vec![best.0];
    for s in &result.trace {
        for c in &s.candidates {
            if c.score.is_finite() && c.extra.score > best.0 {
                best = (c.extra.score, c.id, c.phi_vector.clone());
            }
        }
        best_so_far.push(best.0);
    }
    let (optimized_score, best_id, best_phi) = best;
    let (improvement, improvement_is_ratio) = improvement(baseline.eval.mean, optimized_score);
    timings.total_seconds = started.elapsed().as_secs_f64();
    Ok(SeedSummary {
        seed,
        outer_method: cfg.outer_method,
        baseline: BaselineEntry {
            phi: PhiRecord::from_vector(&setup.phi0.to_vector()),
            score: baseline.eval.mean,
            std_error: baseline.eval.std_error,
            episode_returns: baseline.eval.episode_returns.clone(),
            train_curve: baseline.train_curve.clone(),
        },
        optimized: OptimizedEntry {
            phi: PhiRecord::from_vector(&best_phi),
            score: optimized_score,
            iteration: best_id.iteration,
            index: best_id.index,
        },
        improvement,
        improvement_is_ratio,
        best_so_far,
        trace: result
            .trace
            .iter()
            .map(|s| TraceEntry {
                iteration: s.iteration,
                search_mean: s.search_mean.iter().map(|x| x.as_f64()).collect(),
                search_std: s.search_std.iter().map(|x| x.as_f64()).collect(),
                best_score: s.best_score.as_f64(),
            })
            .collect(),
    })
}

/// In-memory view of a finished experiment.
#[derive(Clone, Debug, PartialEq)]
pub struct ExperimentRecord {
    pub config: ExperimentConfig,
    pub candidates: Vec<CandidateLine>,
    pub seeds: Vec<SeedSummary>,
}

impl ExperimentRecord {
    pub fn aggregates(&self) -> Option<Aggregates> {
        Aggregates::of_seeds(&self.seeds)
    }
}

/// Runs every configured seed, writing the record to `config.output_path`
/// and timings to the sidecar file.
pub fn run_experiment<T: Real>(config: &ExperimentConfig) -> Result<ExperimentRecord> {
    let setup = Setup::<T>::new(config)?;
    let evaluator = Evaluator::new(config.parallel_candidates)?;
    let mut writer = RecordWriter::create(&config.output_path, config)?;
    let started = Instant::now();
    let mut timings = Timings {
        parallel_candidates: config.parallel_candidates,
        ..Timings::default()
    };
    let mut seeds = Vec::with_capacity(config.seeds.len());
    let mut outcome = Ok(());
    for &seed in &config.seeds {
        let mut t = SeedTimings::default();
        match run_bilevel(&setup, seed, &evaluator, &mut writer, &mut t) {
            Ok(summary) => {
                writer.write(&RecordLine::SeedSummary(summary.clone()))?;
                writer.flush()?;
                seeds.push(summary);
            }
            Err(e) => outcome = Err(e),
        }
        timings.seeds.push(t);
        if outcome.is_err() {
            break;
        }
    }
    writer.flush()?;
    timings.total_seconds = started.elapsed().as_secs_f64();
    let text = serde_json::to_string_pretty(&timings).map_err(|e| Error::Io(e.into()))?;
    std::fs::write(config.timings_path(), text)?;
    outcome?;
    let record = read_record(&config.output_path)?;
    debug_assert_eq!(record.seeds, seeds);
    Ok(record)
}

/// Reads and validates a record file.
pub fn read_record(path: impl AsRef<Path>) -> Result<ExperimentRecord> {
    let file = File::open(path.as_ref())?;
    parse_record(BufReader::new(file))
}

pub fn parse_record<R: BufRead>(reader: R) -> Result<ExperimentRecord> {
    let mut config = None;
    let mut candidates = Vec::new();
    let mut seeds = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line?;
        let parse_err = |message: String| Error::Parse { line: line_no, message };
        if line.trim().is_empty() {
            return Err(parse_err("blank line".into()));
        }
        let parsed: RecordLine = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        match (parsed, config.is_some()) {
            (RecordLine::Header(h), false) => {
                if h.format != RECORD_FORMAT || h.version != RECORD_VERSION {
                    return Err(parse_err(format!(
                        "unsupported record format {} v{}",
                        h.format, h.version
                    )));
                }
                config = Some(h.config);
            }
            (RecordLine::Header(_), true) => return Err(parse_err("duplicate header".into())),
            (_, false) => return Err(parse_err("first line must be the header".into())),
            (RecordLine::Candidate(c), true) => candidates.push(c),
            (RecordLine::SeedSummary(s), true) => seeds.push(s),
        }
    }
    let config = config.ok_or_else(|| Error::Parse {
        line: 1,
        message: "empty record".into(),
    })?;
    Ok(ExperimentRecord {
        config,
        candidates,
        seeds,
    })
}

/// Summary statistics of the per-seed improvements.
#[derive(Clone, Debug, PartialEq)]
pub struct Aggregates {
    pub count: usize,
    pub mean: f64,
    /// Sample standard deviation; `None` for a single value.
    pub std: Option<f64>,
    pub min: f64,
    pub median: f64,
}

impl Aggregates {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std =
            (values.len() > 1).then(|| (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt());
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        let mid = sorted.len() / 2;
        let median = if sorted.len() % 2 == 1 {
            sorted[mid]
        } else {
            0.5 * (sorted[mid - 1] + sorted[mid])
        };
        Some(Self {
            count: values.len(),
            mean,
            std,
            min: sorted[0],
            median,
        })
    }

    /// Aggregates the ratio improvements; seeds with a non-positive baseline
    /// are listed in the table but left out here.
    pub fn of_seeds(seeds: &[SeedSummary]) -> Option<Self> {
        let ratios: Vec<f64> = seeds
            .iter()
            .filter(|s| s.improvement_is_ratio)
            .map(|s| s.improvement)
            .collect();
        Self::of(&ratios)
    }
}

fn pct(x: f64) -> String {
    format!("{:+.1}%", 100.0 * x)
}

pub fn render_table(record: &ExperimentRecord) -> String {
    let mut rows = vec![[
        "seed".to_string(),
        "baseline".to_string(),
        "optimized".to_string(),
        "improvement".to_string(),
    ]];
    for s in &record.seeds {
        let imp = if s.improvement_is_ratio {
            pct(s.improvement)
        } else {
            format!("{:+.2} (abs)", s.improvement)
        };
        rows.push([
            s.seed.to_string(),
            format!("{:.2}", s.baseline.score),
            format!("{:.2}", s.optimized.score),
            imp,
        ]);
    }
    let agg = record.aggregates();
    let stat = |name: &str, f: &dyn Fn(&Aggregates) -> String| {
        [
            name.to_string(),
            String::new(),
            String::new(),
            agg.as_ref().map_or("n/a".into(), f),
        ]
    };
    rows.push(stat("mean", &|a| pct(a.mean)));
    rows.push(stat("std", &|a| {
        a.std.map_or("n/a".into(), |s| format!("{:.1}%", 100.0 * s))
    }));
    rows.push(stat("min", &|a| pct(a.min)));
    rows.push(stat("median", &|a| pct(a.median)));

    let widths: Vec<usize> = (0..4)
        .map(|c| rows.iter().map(|r| r[c].len()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for (i, r) in rows.iter().enumerate() {
        if i == 1 || i == record.seeds.len() + 1 {
            let total = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
            out.push_str(&"-".repeat(total));
            out.push('\n');
        }
        let line = r
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(c, (cell, w))| {
                if c == 0 {
                    format!("{cell:<w$}")
                } else {
                    format!("{cell:>w$}")
                }
            })
            .collect::<Vec<_>>()
            .join("  ");
        out.push_str(line.trim_end());
        out.push('\n');
    }
    out
}

/// `iteration  mean best-so-far score across seeds`, one row per outer iteration.
pub fn plot_data(record: &ExperimentRecord) -> String {
    let len = record.seeds.iter().map(|s| s.best_so_far.len()).min().unwrap_or(0);
    let mut out = String::new();
    for k in 0..len {
        let mean = record.seeds.iter().map(|s| s.best_so_far[k]).sum::<f64>() / record.seeds.len() as f64;
        out.push_str(&format!("{k} {mean}\n"));
    }
    out
}
