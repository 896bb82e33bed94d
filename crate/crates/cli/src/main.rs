use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sqlexplore::dualtrack::Baseline;
use sqlexplore::sqlenv::DEFAULT_ROW_LIMIT;
use sqlexplore::{ProtocolVariant, SchemaRewardMode};
use sqlexplore_cli::commands::{self, ScoringInputs};

#[derive(Parser)]
#[command(name = "sqlexplore", version, about = "Schema-exploring text-to-SQL environment")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Inputs {
    /// Trajectory JSONL file, or a run directory.
    #[arg(long)]
    trajectories: PathBuf,
    /// Manifest JSONL with the gold SQL.
    #[arg(long)]
    gold: PathBuf,
    /// Database root; defaults to $TRUST_DB_ROOT.
    #[arg(long)]
    db_root: Option<PathBuf>,
    #[arg(long, default_value = "sparse-coupled")]
    schema_mode: SchemaRewardMode,
    /// Protocol variant used for the format reward.
    #[arg(long)]
    variant: Option<ProtocolVariant>,
}

impl Inputs {
    fn resolve(self) -> anyhow::Result<ScoringInputs> {
        Ok(ScoringInputs {
            trajectories: self.trajectories,
            gold: self.gold,
            db_root: commands::resolve_db_root(self.db_root)?,
            schema_mode: self.schema_mode,
            variant: self.variant,
        })
    }
}

#[derive(Subcommand)]
enum Command {
    /// Serve sessions over HTTP.
    Serve {
        #[arg(long)]
        db_root: Option<PathBuf>,
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: String,
    },
    /// Run a benchmark from a TOML run config.
    Rollout {
        #[arg(long)]
        config: PathBuf,
        /// Run directory.
        #[arg(long)]
        out: PathBuf,
        /// Also collect scored training groups into this JSONL file.
        #[arg(long)]
        groups: Option<PathBuf>,
    },
    /// Score recorded trajectories and print the evaluation report.
    Evaluate {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Per-trajectory rewards as JSONL.
    Score {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Group advantages of recorded trajectories as JSONL.
    Advantages {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long, default_value_t = 0.25)]
        lambda: f64,
        #[arg(long, default_value = "dual_track")]
        mode: Baseline,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Keep correct, well-formed trajectories.
    FilterSft {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Keep questions the rollouts do not already solve too often.
    FilterRl {
        #[command(flatten)]
        inputs: Inputs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Check recorded trajectories for protocol problems.
    Validate {
        #[arg(long)]
        trajectories: PathBuf,
        #[arg(long, default_value_t = DEFAULT_ROW_LIMIT)]
        row_limit: usize,
    },
}

fn run(cli: Cli) -> anyhow::Result<i32> {
    match cli.command {
        Command::Serve { db_root, addr } => {
            let registry = commands::load_registry(&commands::resolve_db_root(db_root)?)?;
            let runtime = tokio::runtime::Runtime::new()?;
            runtime.block_on(sqlexplore_cli::service::serve(registry, &addr))?;
            Ok(0)
        }
        Command::Rollout { config, out, groups } => commands::rollout(&config, &out, groups.as_deref()),
        Command::Evaluate { inputs, report } => commands::evaluate(&inputs.resolve()?, report.as_deref()),
        Command::Score { inputs, out } => commands::score(&inputs.resolve()?, out.as_deref()),
        Command::Advantages { inputs, lambda, mode, out } => {
            commands::advantages(&inputs.resolve()?, lambda, mode, out.as_deref())
        }
        Command::FilterSft { inputs, out } => commands::filter_sft(&inputs.resolve()?, out.as_deref()),
        Command::FilterRl { inputs, out } => commands::filter_rl(&inputs.resolve()?, out.as_deref()),
        Command::Validate { trajectories, row_limit } => commands::validate(&trajectories, row_limit),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
