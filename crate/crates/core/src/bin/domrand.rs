use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use domrand::envsim::MdpParams;
use domrand::harness::{
    evaluate_real, plot_data, read_record, render_table, run_baseline, run_experiment, ExperimentConfig, OuterMethod,
    Precision, Setup,
};
use domrand::policy::io::{load_policy, save_policy};
use domrand::seeding::candidate_seed;
use domrand::{Real, Result};

#[derive(Parser)]
#[command(name = "domrand", version, about = "Bilevel domain-randomization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train at the initial distribution, evaluate on the real parameters and save the policy.
    Baseline(Common),
    /// Run the full outer/inner optimization for every configured seed.
    Optimize(Common),
    /// Score a saved policy against a parameterization.
    Evaluate {
        #[command(flatten)]
        common: Common,
        /// Policy file written by `baseline`.
        #[arg(long)]
        policy: PathBuf,
        /// Comma-separated MDP parameters; defaults to the configured real parameters.
        #[arg(long, value_delimiter = ',')]
        params: Option<Vec<f64>>,
    },
    /// Summarize a record file and write best-so-far plot data.
    Report {
        record: PathBuf,
        /// Plot-data output; defaults to `<record>.plot.dat`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    parallel: Option<usize>,
    #[arg(long, value_enum)]
    outer: Option<Outer>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Outer {
    Cem,
    Sf,
}

impl Common {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => ExperimentConfig::load(path)?,
            None => ExperimentConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seeds = vec![seed];
        }
        if let Some(out) = &self.out {
            cfg.output_path = out.clone();
        }
        if let Some(p) = self.parallel {
            cfg.parallel_candidates = p;
        }
        if let Some(o) = self.outer {
            cfg.outer_method = match o {
                Outer::Cem => OuterMethod::Cem,
                Outer::Sf => OuterMethod::ScoreFunction,
            };
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn baseline<T: Real>(common: &Common, cfg: &ExperimentConfig) -> Result<()> {
    let setup = Setup::<T>::new(cfg)?;
    let seed = cfg.seeds[0];
    let run = run_baseline(&setup, seed)?;
    let out = common.out.clone().unwrap_or_else(|| PathBuf::from("baseline.policy"));
    save_policy(&run.policy, &out)?;
    println!(
        "{}",
        json!({
            "seed": seed,
            "score": run.eval.mean,
            "std_error": run.eval.std_error,
            "episodes": run.eval.episode_returns.len(),
            "policy": out,
        })
    );
    Ok(())
}

fn optimize<T: Real>(cfg: &ExperimentConfig) -> Result<()> {
    let record = run_experiment::<T>(cfg)?;
    print!("{}", render_table(&record));
    eprintln!("record written to {}", cfg.output_path.display());
    Ok(())
}

fn evaluate<T: Real>(cfg: &ExperimentConfig, policy: &PathBuf, params: &Option<Vec<f64>>) -> Result<()> {
    let setup = Setup::<T>::new(cfg)?;
    let policy = load_policy::<T>(policy)?;
    let m = match params {
        Some(v) => {
            let m = MdpParams::new(v.iter().map(|&x| T::lit(x)).collect());
            setup.spec.check_params(&m)?;
            m
        }
        None => setup.real_params.clone(),
    };
    let seed = cfg.seeds[0];
    // Same evaluation stream the baseline run used for this seed.
    let stream = candidate_seed(seed, 0, 0);
    let eval = evaluate_real(&policy, &setup.spec, &m, cfg.eval_episodes, cfg.eval_discount, stream)?;
    println!(
        "{}",
        json!({ "seed": seed, "mean": eval.mean, "std_error": eval.std_error, "episode_returns": eval.episode_returns })
    );
    Ok(())
}

fn report(record: &PathBuf, out: &Option<PathBuf>) -> Result<()> {
    let parsed = read_record(record)?;
    print!("{}", render_table(&parsed));
    let out = out.clone().unwrap_or_else(|| {
        let mut p = record.clone().into_os_string();
        p.push(".plot.dat");
        PathBuf::from(p)
    });
    std::fs::write(&out, plot_data(&parsed))?;
    eprintln!("plot data written to {}", out.display());
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    macro_rules! typed {
        ($cfg:expr, $f:ident ( $($arg:expr),* )) => {
            match $cfg.precision {
                Precision::F32 => $f::<f32>($($arg),*),
                Precision::F64 => $f::<f64>($($arg),*),
            }
        };
    }
    match cli.command {
        Command::Baseline(common) => {
            let cfg = common.load()?;
            typed!(cfg, baseline(&common, &cfg))
        }
        Command::Optimize(common) => {
            let cfg = common.load()?;
            typed!(cfg, optimize(&cfg))
        }
        Command::Evaluate { common, policy, params } => {
            let cfg = common.load()?;
            typed!(cfg, evaluate(&cfg, &policy, &params))
        }
        Command::Report { record, out } => report(&record, &out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
