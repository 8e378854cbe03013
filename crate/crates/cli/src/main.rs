mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use stagefair::{Error, ErrorClass};

#[derive(Parser, Debug)]
#[command(name = "stagefair", version, about = "Fair multi-stage selection from censored logs")]
struct Cli {
    /// TOML run configuration; every key has a default.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Override a config key, e.g. `--set spec.eta=0.05`. Repeatable; applied
    /// after the file, in order.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a synthetic panel, its full population and a test population.
    Generate,
    /// Read a tabular dataset and simulate a logged panel over it.
    Ingest,
    /// Fit stage propensity models and export IPW weights.
    FitPropensity,
    /// Learn a fair stage policy from the panel.
    Train,
    /// Score a policy on the test population, with repair.
    Evaluate,
    /// Sweep the fairness budget over repeated synthetic trials.
    Pareto {
        /// Grid as `start:stop:count`.
        #[arg(long)]
        eta: Option<String>,
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Compare training against exhaustive enumeration on tiny instances.
    OracleCheck,
    /// Time each pipeline phase.
    Bench,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Generate => "generate",
            Command::Ingest => "ingest",
            Command::FitPropensity => "fit-propensity",
            Command::Train => "train",
            Command::Evaluate => "evaluate",
            Command::Pareto { .. } => "pareto",
            Command::OracleCheck => "oracle-check",
            Command::Bench => "bench",
        }
    }
}

fn parse_overrides(raw: &[String]) -> stagefair::Result<Vec<(String, String)>> {
    raw.iter()
        .map(|s| {
            s.split_once('=')
                .map(|(k, v)| (k.trim().to_string(), v.trim().to_string()))
                .ok_or_else(|| Error::InvalidArgument(format!("override `{s}` is not KEY=VALUE")))
        })
        .collect()
}

fn run(cli: &Cli) -> stagefair::Result<()> {
    let mut overrides = parse_overrides(&cli.set)?;
    if let Command::Pareto { eta, trials } = &cli.command {
        if let Some(g) = eta {
            let grid = config::parse_grid(g)?;
            let list: Vec<String> = grid.iter().map(|v| format!("{v:?}")).collect();
            overrides.push(("pareto.eta".into(), format!("[{}]", list.join(", "))));
        }
        if let Some(k) = trials {
            overrides.push(("pareto.trials".into(), k.to_string()));
        }
    }
    let cfg = config::load(cli.config.as_deref(), &overrides)?;
    let mut ctx = commands::Ctx::new(cfg, cli.config.clone(), overrides)?;
    match cli.command {
        Command::Generate => commands::generate(&mut ctx)?,
        Command::Ingest => commands::ingest(&mut ctx)?,
        Command::FitPropensity => commands::fit_propensity(&mut ctx)?,
        Command::Train => commands::train(&mut ctx)?,
        Command::Evaluate => commands::evaluate(&mut ctx)?,
        Command::Pareto { .. } => commands::pareto(&mut ctx)?,
        Command::OracleCheck => commands::oracle_check(&mut ctx)?,
        Command::Bench => commands::bench(&mut ctx)?,
    }
    ctx.finish(cli.command.name())
}

fn exit_code(class: ErrorClass) -> u8 {
    match class {
        ErrorClass::Config => 2,
        ErrorClass::Data => 3,
        ErrorClass::Solver => 4,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let class = e.class();
            let body = serde_json::json!({
                "error": {
                    "command": cli.command.name(),
                    "class": format!("{class:?}").to_lowercase(),
                    "message": e.to_string(),
                }
            });
            eprintln!("{body}");
            ExitCode::from(exit_code(class))
        }
    }
}
