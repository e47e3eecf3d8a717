//! Batch command-line harness around the unbiased estimator library.
//!
//! Every subcommand is a pure function of its flags and the seed: runs fan
//! replications out over a thread pool but reduce them in replication order,
//! so reports are byte-identical at any --threads value. Results go to
//! stdout or --out as CSV or JSON.
//!
//! Exit codes: 0 success; 2 for configuration problems (bad flags, bad
//! files, parameters outside their admissible ranges); 1 for runtime
//! failures during estimation.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use unbiased_mlmc::harness::{
    compare_equal_compute, run_replications, AggregateReport, Replication,
};
use unbiased_mlmc::models::beta::{beta_plugin_estimate, beta_product_target};
use unbiased_mlmc::models::cut::{cut_model_target, CutModelData};
use unbiased_mlmc::models::ising::{
    ising_natural_stat_expectation, ising_natural_stat_target, ising_ratio_target,
    ising_z_ratio_oracle,
};
use unbiased_mlmc::models::EstimatorPipeline;
use unbiased_mlmc::{
    mlmc_estimate, nested_estimate, recommended_p, Error, JoaParams, MlmcConfig, Result, RngStream,
};

#[derive(Parser)]
#[command(
    name = "unbiased-mlmc",
    about = "Unbiased MLMC-over-MCMC estimation harness",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Level-distribution knobs shared by every estimator run.
#[derive(Args, Debug, Clone)]
struct LevelFlags {
    /// Geometric level probability; must satisfy 1/2 < p < 1.
    #[arg(long, default_value_t = 0.7)]
    p: f64,
    /// Cost-growth exponent; sets p = 1 - 2^(-1 - gamma/2) and overrides --p.
    #[arg(long)]
    gamma: Option<f64>,
    /// Norm floor for the shift transform applied to subroutine draws.
    #[arg(long)]
    delta: Option<f64>,
    /// Hard cap on the level draw; larger draws fail the replication.
    #[arg(long, default_value_t = 40)]
    max_level: u32,
}

impl LevelFlags {
    /// Builds the level config on top of a pipeline's own defaults: --p and
    /// --max-level always apply, --delta only when given (so models that
    /// need the transform keep it).
    fn apply(&self, base: &MlmcConfig) -> Result<MlmcConfig> {
        let mut config = base.clone();
        config.p = match self.gamma {
            Some(gamma) => recommended_p(gamma)?,
            None => self.p,
        };
        config.max_level = self.max_level;
        if self.delta.is_some() {
            config.delta = self.delta;
        }
        config.validate()?;
        Ok(config)
    }
}

/// Coupled-chain trajectory knobs.
#[derive(Args, Debug, Clone)]
struct ChainFlags {
    /// Burn-in index k of the time-averaged estimator.
    #[arg(long = "joa-k", default_value_t = 10)]
    joa_k: u64,
    /// Averaging endpoint m >= k.
    #[arg(long = "joa-m", default_value_t = 50)]
    joa_m: u64,
    /// Step cap; a pair that has not met by then fails that replication.
    #[arg(long, default_value_t = 100_000)]
    max_steps: u64,
}

impl ChainFlags {
    fn params(&self) -> JoaParams {
        JoaParams {
            k: self.joa_k,
            m_avg: self.joa_m,
            max_steps: self.max_steps,
        }
    }
}

#[derive(Args, Debug, Clone)]
struct RunFlags {
    /// Number of independent replications.
    #[arg(long, default_value_t = 10_000)]
    reps: u64,
    /// Worker threads; the report does not depend on this.
    #[arg(long, env = "UNBIASED_MLMC_THREADS", default_value_t = 1)]
    threads: usize,
    #[arg(long, default_value_t = 1729)]
    seed: u64,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Json)]
    format: Format,
}

#[derive(ValueEnum, Debug, Clone, Copy)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Product of reciprocal Beta(i, 1) means; ground truth K + 1.
    RunBeta {
        /// Number of Beta coordinates.
        #[arg(long = "K", default_value_t = 1)]
        k_dims: usize,
        #[command(flatten)]
        level: LevelFlags,
        #[command(flatten)]
        chain: ChainFlags,
        #[command(flatten)]
        run: RunFlags,
    },
    /// Partition-function ratio Z(theta1)/Z(theta2) of the periodic Ising
    /// lattice; exact truth attached for lattice sides up to 4.
    RunIsing {
        #[arg(long, default_value_t = 3)]
        lattice_n: usize,
        #[arg(long, default_value_t = 0.1)]
        theta1: f64,
        #[arg(long, default_value_t = 0.05)]
        theta2: f64,
        #[command(flatten)]
        level: LevelFlags,
        #[command(flatten)]
        chain: ChainFlags,
        #[command(flatten)]
        run: RunFlags,
    },
    /// Reciprocal mean of the Ising natural statistic, 1/E[-H].
    RunIsingNatstat {
        #[arg(long, default_value_t = 2)]
        lattice_n: usize,
        #[arg(long, default_value_t = 0.3)]
        theta: f64,
        #[command(flatten)]
        level: LevelFlags,
        #[command(flatten)]
        chain: ChainFlags,
        #[command(flatten)]
        run: RunFlags,
    },
    /// Nested two-stage count-model utility: expected maximum conditional
    /// mean log-rate.
    RunNested {
        /// Data file ("Z N X1 X2", 13 rows); a synthetic default otherwise.
        #[arg(long)]
        data: Option<PathBuf>,
        #[command(flatten)]
        level: LevelFlags,
        #[command(flatten)]
        chain: ChainFlags,
        #[command(flatten)]
        run: RunFlags,
    },
    /// Equal-compute relative-error curves, unbiased vs plug-in, on the
    /// Beta product target.
    Compare {
        /// Number of Beta coordinates.
        #[arg(long = "K", default_value_t = 1)]
        k_dims: usize,
        /// Simulated processor counts, strictly increasing.
        #[arg(long, value_delimiter = ',', default_value = "1,2,4,8,16,32,64")]
        processors: Vec<u64>,
        /// Divide each plug-in budget by this factor to starve it.
        #[arg(long, default_value_t = 1)]
        plugin_budget_divisor: u64,
        #[command(flatten)]
        level: LevelFlags,
        #[command(flatten)]
        chain: ChainFlags,
        #[command(flatten)]
        run: RunFlags,
    },
    /// Print exact enumeration ground truths for small Ising lattices.
    Oracle {
        #[arg(long, default_value_t = 2)]
        lattice_n: usize,
        #[arg(long, default_value_t = 0.1)]
        theta1: f64,
        #[arg(long, default_value_t = 0.1)]
        theta2: f64,
    },
}

fn emit(text: &str, out: &Option<PathBuf>) -> Result<()> {
    match out {
        Some(path) => {
            std::fs::write(path, text)?;
            Ok(())
        }
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn emit_report(report: &AggregateReport, run: &RunFlags) -> Result<()> {
    let text = match run.format {
        Format::Csv => report.to_csv(),
        Format::Json => report.to_json()?,
    };
    emit(&text, &run.out)
}

/// Runs a pipeline's estimator as a replication job and writes the report.
fn run_pipeline(pipeline: &EstimatorPipeline, level: &LevelFlags, run: &RunFlags) -> Result<()> {
    let config = level.apply(&pipeline.config)?;
    let job = |rng: &mut RngStream| {
        let est = mlmc_estimate(&*pipeline.subroutine, &pipeline.g, &config, rng)?;
        Ok(Replication {
            value: est.w,
            cost: est.cost,
            tau: None,
        })
    };
    let report = run_replications(&job, run.reps, run.threads, run.seed, pipeline.truth)?;
    emit_report(&report, run)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::RunBeta {
            k_dims,
            level,
            chain,
            run,
        } => {
            let pipeline = beta_product_target(k_dims, &chain.params())?;
            run_pipeline(&pipeline, &level, &run)
        }
        Command::RunIsing {
            lattice_n,
            theta1,
            theta2,
            level,
            chain,
            run,
        } => {
            let pipeline = ising_ratio_target(lattice_n, theta1, theta2, &chain.params())?;
            run_pipeline(&pipeline, &level, &run)
        }
        Command::RunIsingNatstat {
            lattice_n,
            theta,
            level,
            chain,
            run,
        } => {
            let pipeline = ising_natural_stat_target(lattice_n, theta, &chain.params())?;
            run_pipeline(&pipeline, &level, &run)
        }
        Command::RunNested {
            data,
            level,
            chain,
            run,
        } => {
            let data = match data {
                Some(path) => CutModelData::load(path)?,
                None => CutModelData::synthetic_default(),
            };
            let config = level.apply(&MlmcConfig::default())?;
            let spec = cut_model_target(data, chain.params(), config)?;
            let job = |rng: &mut RngStream| {
                let est = nested_estimate(&spec, rng)?;
                Ok(Replication {
                    value: est.value,
                    cost: est.cost,
                    tau: None,
                })
            };
            let report = run_replications(&job, run.reps, run.threads, run.seed, None)?;
            emit_report(&report, &run)
        }
        Command::Compare {
            k_dims,
            processors,
            plugin_budget_divisor,
            level,
            chain,
            run,
        } => {
            if plugin_budget_divisor == 0 {
                return Err(Error::InvalidParam {
                    name: "plugin_budget_divisor",
                    message: "divisor must be at least 1".into(),
                });
            }
            let params = chain.params();
            let pipeline = beta_product_target(k_dims, &params)?;
            let config = level.apply(&pipeline.config)?;
            let truth = pipeline.truth.expect("beta target always knows its truth");
            let unbiased_job = |rng: &mut RngStream| {
                let est = mlmc_estimate(&*pipeline.subroutine, &pipeline.g, &config, rng)?;
                Ok(Replication {
                    value: est.w,
                    cost: est.cost,
                    tau: None,
                })
            };
            let plugin_job = |budget: u64, rng: &mut RngStream| {
                beta_plugin_estimate(k_dims, &params, budget / plugin_budget_divisor, None, rng)
            };
            let curves =
                compare_equal_compute(&unbiased_job, &plugin_job, truth, &processors, run.seed)?;
            let text = match run.format {
                Format::Csv => curves.to_csv(),
                Format::Json => curves.to_json()?,
            };
            emit(&text, &run.out)
        }
        Command::Oracle {
            lattice_n,
            theta1,
            theta2,
        } => {
            let ratio = ising_z_ratio_oracle(lattice_n, theta1, theta2)?;
            println!("lattice_n = {lattice_n}");
            println!("z_ratio = {ratio}");
            for (name, theta) in [("theta1", theta1), ("theta2", theta2)] {
                let h_mean = ising_natural_stat_expectation(lattice_n, theta)?;
                println!("h_mean_at_{name} = {h_mean}");
                if h_mean != 0.0 {
                    println!("reciprocal_h_mean_at_{name} = {}", 1.0 / h_mean);
                }
            }
            Ok(())
        }
    }
}

/// Configuration problems (rejected parameters, malformed or unreadable
/// files) exit 2; failures during estimation exit 1.
fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidParam { .. } | Error::Data { .. } | Error::Io(_) => 2,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
