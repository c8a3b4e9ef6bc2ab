//! `mpep`: fit, compare, check consistency, select terms, simulate data and
//! code treatment episodes.

mod commands;
mod episodes;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use mpep_core::diagnostics::Aggregation;
use mpep_core::sampler::SamplerConfig;
use mpep_core::MpepError;

#[derive(Parser, Debug)]
#[command(name = "mpep", version, about = "Bayesian multi-source prevalence estimation")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct GlobalArgs {
    /// Random seed for sampling, pairing and simulation.
    #[arg(long, global = true, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, global = true, default_value_t = 4)]
    pub chains: usize,
    #[arg(long, global = true, default_value_t = 1000)]
    pub warmup: usize,
    #[arg(long, global = true, default_value_t = 1000)]
    pub samples: usize,
    /// Output directory (created if missing).
    #[arg(long, global = true, default_value = "mpep-out")]
    pub out: PathBuf,
}

impl GlobalArgs {
    pub fn sampler(&self) -> SamplerConfig {
        SamplerConfig {
            chains: self.chains,
            warmup: self.warmup,
            samples: self.samples,
            seed: self.seed,
            ..SamplerConfig::default()
        }
    }
}

#[derive(Args, Debug, Clone)]
pub struct DataArgs {
    /// Stratified dataset CSV.
    #[arg(long)]
    pub data: PathBuf,
    /// Event type whose extra counts are deaths (default: one named `deaths`).
    #[arg(long)]
    pub deaths_event: Option<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit one model and write draws, summaries and the deviance report.
    Fit {
        #[command(flatten)]
        data: DataArgs,
        /// Model config TOML.
        #[arg(long)]
        config: PathBuf,
    },
    /// Fit several configs to one dataset and tabulate DIC, ResDev and pD.
    Compare {
        #[command(flatten)]
        data: DataArgs,
        /// Model config TOML; repeat for each model.
        #[arg(long = "config", required = true)]
        configs: Vec<PathBuf>,
    },
    /// Fit each event source alone and jointly, and test their agreement.
    Consistency {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        config: PathBuf,
        /// Also refit the joint model with bias terms on the non-deaths source.
        #[arg(long)]
        bias: bool,
        /// Units compared: year, stratum or period.
        #[arg(long, default_value = "year")]
        by: Aggregation,
    },
    /// Forward stepwise selection of candidate terms.
    Select {
        #[command(flatten)]
        data: DataArgs,
        /// Base model config TOML.
        #[arg(long)]
        config: PathBuf,
        /// Candidate terms TOML (`[[candidate]]` tables).
        #[arg(long)]
        candidates: PathBuf,
    },
    /// Draw a synthetic dataset from known parameter values.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Truth JSON (shape and named parameter values).
        #[arg(long, required_unless_present = "template")]
        truth: Option<PathBuf>,
        /// Write a truth template for the config instead of simulating.
        #[arg(long)]
        template: bool,
        #[arg(long, default_value_t = 2)]
        sexes: usize,
        #[arg(long, default_value_t = 3)]
        ages: usize,
        #[arg(long, default_value_t = 3)]
        years: usize,
        #[arg(long, default_value_t = 2)]
        regions: usize,
        /// General population per stratum.
        #[arg(long, default_value_t = 200_000)]
        population: u64,
    },
    /// Code reimbursement dates into treatment episodes per person.
    Episodes {
        /// CSV with columns `person_id,date` (dates as day numbers, or
        /// YYYY-MM-DD when --start is given).
        #[arg(long)]
        input: PathBuf,
        /// Follow-up start date (YYYY-MM-DD); day 0 of the window.
        #[arg(long)]
        start: Option<String>,
        /// Last follow-up day: a day number, or a date when --start is given.
        #[arg(long)]
        end: String,
    },
}

/// A failed command with its exit status.
#[derive(Debug)]
pub struct Failure {
    pub code: u8,
    pub message: String,
}

pub const EXIT_INPUT: u8 = 2;
pub const EXIT_CONVERGENCE: u8 = 3;
pub const EXIT_NUMERICAL: u8 = 4;

impl From<MpepError> for Failure {
    fn from(e: MpepError) -> Self {
        let code = match e {
            MpepError::NotConverged(_) => EXIT_CONVERGENCE,
            _ if e.is_input_error() => EXIT_INPUT,
            _ => EXIT_NUMERICAL,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

impl Failure {
    pub fn input(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_INPUT,
            message: message.into(),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let g = &cli.global;
    let result = match cli.command {
        Command::Fit { data, config } => commands::fit(g, &data, &config),
        Command::Compare { data, configs } => commands::compare(g, &data, &configs),
        Command::Consistency {
            data,
            config,
            bias,
            by,
        } => commands::consistency(g, &data, &config, bias, by),
        Command::Select {
            data,
            config,
            candidates,
        } => commands::select(g, &data, &config, &candidates),
        Command::Simulate {
            config,
            truth,
            template,
            sexes,
            ages,
            years,
            regions,
            population,
        } => {
            let shape = mpep_core::SyntheticShape::new(sexes, ages, years, regions, population);
            commands::simulate(g, &config, truth.as_deref(), template, shape)
        }
        Command::Episodes { input, start, end } => episodes::run(g, &input, start.as_deref(), &end),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
