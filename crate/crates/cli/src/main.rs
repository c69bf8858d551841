use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

mod commands;
mod config;
mod error;
mod output;

use config::RunConfig;
use error::Failure;

/// Score and rate multi-step synthesis routes.
#[derive(Parser)]
#[command(name = "routescore", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// TOML configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one key, e.g. `--set lora.rank=4`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Global seed (overrides `seed`).
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (overrides `paths.out`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate synthetic route families and a prior table.
    GenData {
        #[command(flatten)]
        global: Global,
        /// Also write expert-style labels from planted reaction qualities.
        #[arg(long)]
        plant_labels: bool,
    },
    /// Label every candidate with its tree edit distance to the reference.
    LabelTed {
        #[command(flatten)]
        global: Global,
        #[arg(long)]
        routes: PathBuf,
    },
    /// Pre-train the set model on TED labels.
    Pretrain {
        #[command(flatten)]
        global: Global,
        #[arg(long)]
        routes: PathBuf,
        /// CSV written by `label-ted`.
        #[arg(long)]
        labels: PathBuf,
        /// Prior table CSV; the synthetic table when omitted.
        #[arg(long)]
        priors: Option<PathBuf>,
    },
    /// Cross-validate and train low-rank adapters on expert labels.
    Finetune {
        #[command(flatten)]
        global: Global,
        #[arg(long)]
        model: PathBuf,
        /// CSV `route_id,points[,step_points]`.
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        routes: PathBuf,
        #[arg(long)]
        priors: Option<PathBuf>,
    },
    /// Predict TED and, with an adapter, points, rating and tier.
    Score {
        #[command(flatten)]
        global: Global,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        adapter: Option<PathBuf>,
        /// A route file or a directory of them.
        #[arg(long)]
        routes: PathBuf,
        #[arg(long)]
        priors: Option<PathBuf>,
    },
    /// Rank each family's candidates by predicted TED.
    Rank {
        #[command(flatten)]
        global: Global,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        routes: PathBuf,
        #[arg(long)]
        priors: Option<PathBuf>,
        /// Largest k reported (overrides `eval.top_k`).
        #[arg(long)]
        k: Option<usize>,
    },
    /// Compare predictions against ground truth.
    Evaluate {
        #[command(flatten)]
        global: Global,
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long, value_enum, default_value_t = Kind::Regression)]
        kind: Kind,
        /// Prediction column; `predicted_ted` or `points` by kind.
        #[arg(long)]
        pred_column: Option<String>,
        /// Truth column; `ted` or `points` by kind.
        #[arg(long)]
        truth_column: Option<String>,
    },
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Kind {
    /// Continuous values: MSE, R², Pearson, Spearman.
    Regression,
    /// Integer points 1-5: accuracy, correlations and tier metrics.
    Points,
}

impl Command {
    fn global(&self) -> &Global {
        match self {
            Command::GenData { global, .. }
            | Command::LabelTed { global, .. }
            | Command::Pretrain { global, .. }
            | Command::Finetune { global, .. }
            | Command::Score { global, .. }
            | Command::Rank { global, .. }
            | Command::Evaluate { global, .. } => global,
        }
    }
}

fn run(cli: Cli) -> Result<(), Failure> {
    let g = cli.command.global();
    let mut config = RunConfig::resolve(g.config.as_deref(), &g.sets).map_err(Failure::usage)?;
    if let Some(seed) = g.seed {
        config.seed = seed;
    }
    if let Some(out) = &g.out {
        config.paths.out = out.clone();
    }
    match cli.command {
        Command::GenData { plant_labels, .. } => commands::gen_data(&config, plant_labels),
        Command::LabelTed { routes, .. } => commands::label_ted(&config, &routes),
        Command::Pretrain {
            routes,
            labels,
            priors,
            ..
        } => commands::pretrain(&config, &routes, &labels, priors.as_deref()),
        Command::Finetune {
            model,
            labels,
            routes,
            priors,
            ..
        } => commands::finetune(&config, &model, &labels, &routes, priors.as_deref()),
        Command::Score {
            model,
            adapter,
            routes,
            priors,
            ..
        } => commands::score(
            &config,
            &model,
            adapter.as_deref(),
            &routes,
            priors.as_deref(),
        ),
        Command::Rank {
            model,
            routes,
            priors,
            k,
            ..
        } => commands::rank(&config, &model, &routes, priors.as_deref(), k),
        Command::Evaluate {
            predictions,
            truth,
            kind,
            pred_column,
            truth_column,
            ..
        } => {
            let (p, t) = match kind {
                Kind::Regression => ("predicted_ted", "ted"),
                Kind::Points => ("points", "points"),
            };
            let columns = (
                pred_column.as_deref().unwrap_or(p),
                truth_column.as_deref().unwrap_or(t),
            );
            commands::evaluate(&config, &predictions, &truth, kind, columns)
        }
    }
    .map_err(Failure::from)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error);
            ExitCode::from(f.code)
        }
    }
}
