use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use reqsat::eval::ReportFormat;
use reqsat::knowledge::{RequirementId, StatementPolarity};
use reqsat::promptkit::TemplateId;

mod commands;
mod config;

use commands::Outcome;
use config::Config;

/// Requirement-satisfiability checks for consent specifications.
#[derive(Parser)]
#[command(name = "reqsat", version, about)]
struct Cli {
    /// TOML run configuration.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured output directory.
    #[arg(long, global = true)]
    output_dir: Option<PathBuf>,
    /// Overrides the configured root seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// More log output (repeat for debug).
    #[arg(long, short, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Rubric maintenance.
    #[command(subcommand)]
    Rubric(RubricCommand),
    /// Generate specifications from app descriptions.
    Generate {
        /// Descriptions, one JSON object per line.
        #[arg(long)]
        descriptions: Option<PathBuf>,
    },
    /// Check one specification against one requirement.
    Check(CheckCli),
    /// Run the configured experiment and write reports.
    Evaluate {
        #[arg(long)]
        template: Option<TemplateId>,
        #[arg(long)]
        trials: Option<usize>,
        #[arg(long)]
        n_pairs: Option<usize>,
    },
    /// Print a report from a machine report or from trial records.
    Report {
        /// Machine-format report to render.
        #[arg(long, conflicts_with = "records")]
        from: Option<PathBuf>,
        /// Trial records to recompute metrics from.
        #[arg(long)]
        records: Option<PathBuf>,
        #[arg(long, default_value = "table-text", value_parser = parse_format)]
        format: ReportFormat,
    },
    /// Record or verify transcripts.
    #[command(subcommand)]
    Transcript(TranscriptCommand),
    /// Cohen's kappa over a two-column label CSV with a header row.
    Kappa { csv: PathBuf },
}

#[derive(Subcommand)]
enum RubricCommand {
    /// Validate a rubric file (the bundled rubric when omitted).
    Validate {
        #[arg(long)]
        rubric: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum TranscriptCommand {
    /// Run the configured experiment and record every exchange.
    Record,
    /// Verify a transcript covers every call of the configured experiment.
    Replay { transcript: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum PolarityArg {
    Normative,
    Inverted,
    Both,
}

#[derive(Args)]
struct CheckCli {
    /// Specification file: one JSON object, or JSON lines.
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    spec_id: Option<String>,
    /// Requirement code (P, C, G, D, S, I, U, W); defaults to the spec's target.
    #[arg(long)]
    requirement: Option<RequirementId>,
    #[arg(long)]
    template: Option<TemplateId>,
    #[arg(long, value_enum, default_value = "normative")]
    polarity: PolarityArg,
}

fn parse_format(s: &str) -> Result<ReportFormat, String> {
    s.parse()
}

fn load_config(cli: &Cli) -> anyhow::Result<Config> {
    let mut cfg = match &cli.config {
        Some(path) => Config::load(path)?,
        None => Config::default(),
    };
    if let Some(dir) = &cli.output_dir {
        cfg.output_dir = dir.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.check_paths()?;
    Ok(cfg)
}

fn run(cli: Cli) -> anyhow::Result<Outcome> {
    if let Command::Rubric(RubricCommand::Validate { rubric }) = &cli.command {
        let from_config = match (&rubric, &cli.config) {
            (None, Some(path)) => Config::load(path)?.rubric,
            _ => None,
        };
        return commands::rubric_validate(rubric.as_deref().or(from_config.as_deref()));
    }
    if let Command::Kappa { csv } = &cli.command {
        return commands::kappa(csv);
    }
    let mut cfg = load_config(&cli)?;
    match cli.command {
        Command::Rubric(_) | Command::Kappa { .. } => unreachable!("handled above"),
        Command::Generate { descriptions } => commands::generate(&cfg, descriptions.as_deref()),
        Command::Check(args) => {
            let polarities = match args.polarity {
                PolarityArg::Normative => vec![StatementPolarity::Normative],
                PolarityArg::Inverted => vec![StatementPolarity::Inverted],
                PolarityArg::Both => StatementPolarity::BOTH.to_vec(),
            };
            commands::check(
                &cfg,
                commands::CheckArgs {
                    spec: &args.spec,
                    spec_id: args.spec_id.as_deref(),
                    requirement: args.requirement,
                    template: args.template,
                    polarities,
                },
            )
        }
        Command::Evaluate { template, trials, n_pairs } => {
            if let Some(t) = template {
                cfg.evaluate.template = t;
            }
            if let Some(t) = trials {
                cfg.evaluate.trials = t;
            }
            if let Some(n) = n_pairs {
                cfg.evaluate.n_pairs = n;
            }
            commands::evaluate(&cfg)
        }
        Command::Report { from, records, format } => {
            commands::report(&cfg, from.as_deref(), records.as_deref(), format)
        }
        Command::Transcript(TranscriptCommand::Record) => commands::transcript_record(&cfg),
        Command::Transcript(TranscriptCommand::Replay { transcript }) => commands::transcript_replay(&cfg, &transcript),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(Outcome::Ok) => ExitCode::SUCCESS,
        Ok(Outcome::Violation) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
