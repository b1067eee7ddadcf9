use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use marl_drive::config::RunConfig;
use marl_drive::harness::{cmd_compare, cmd_eval, cmd_train, Controller, EvalOptions, PseudoRealProfile};
use marl_drive::mappo::load_checkpoint_for;
use marl_drive::randomization::RandomizationLevel;
use marl_drive::{Error, Result};

/// Multi-agent driving: MAPPO training with domain randomization,
/// evaluation and comparison against a rule-based driver.
#[derive(Parser, Debug)]
#[command(name = "marl-drive", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a shared policy and write a checkpoint plus training log.
    Train {
        #[arg(long)]
        config: Option<PathBuf>,
        /// none, med, high, or a level file.
        #[arg(long, default_value = "none")]
        level: String,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the number of training episodes.
        #[arg(long)]
        episodes: Option<usize>,
        /// Checkpoint path; the log goes to `<out>.log.csv`.
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint greedily.
    Eval {
        checkpoint: PathBuf,
        #[command(flatten)]
        eval: EvalArgs,
    },
    /// Evaluate the rule-based driver.
    BaselineEval {
        #[command(flatten)]
        eval: EvalArgs,
    },
    /// Compare metrics files: mean ± std table and reward ratios.
    Compare {
        #[arg(required = true, num_args = 1..)]
        files: Vec<PathBuf>,
        /// Write plot-ready whitespace-separated data here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 30)]
    runs: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// `default` or a profile file.
    #[arg(long = "pseudo-real")]
    pseudo_real: Option<String>,
    /// Metrics CSV path; printed to stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Directory for per-run episode logs.
    #[arg(long = "episode-logs")]
    episode_logs: Option<PathBuf>,
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

fn write_or_print(out: Option<&Path>, text: &str) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| Error::Io {
            path: path.to_path_buf(),
            source: e,
        }),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn eval(args: &EvalArgs, checkpoint: Option<&Path>) -> Result<()> {
    let cfg = load_config(args.config.as_deref())?;
    let controller = match checkpoint {
        Some(path) => Controller::Mappo(Box::new(load_checkpoint_for(
            path,
            cfg.env.obs_dim(),
            cfg.env.state_dim(),
        )?)),
        None => Controller::RuleBased(cfg.rss),
    };
    let pseudo_real = args
        .pseudo_real
        .as_deref()
        .map(PseudoRealProfile::resolve)
        .transpose()?;
    let opts = EvalOptions {
        runs: args.runs,
        seed: args.seed,
        pseudo_real,
        keep_logs: false,
    };
    let csv = cmd_eval(&cfg, &controller, &opts, args.episode_logs.as_deref())?;
    write_or_print(args.out.as_deref(), &csv)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train {
            config,
            level,
            seed,
            episodes,
            out,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(s) = seed {
                cfg.env.seed = s;
            }
            if let Some(n) = episodes {
                cfg.train.episodes = n;
            }
            let level = match (&cfg.level, level.as_str()) {
                (Some(custom), "custom") => custom.clone(),
                _ => RandomizationLevel::resolve(&level)?,
            };
            let outcome = cmd_train(&cfg, &level, &out, |row| {
                eprintln!(
                    "update {:4}  episode {:5}  reward {:+.4}  entropy {:.3}",
                    row.update, row.episode, row.mean_reward, row.entropy
                )
            })?;
            match outcome.final_mean_reward() {
                Some(r) => println!("final mean reward {r}"),
                None => println!("final mean reward n/a (no episodes)"),
            }
            println!("checkpoint {}", outcome.checkpoint.display());
            println!("log {}", outcome.log_path.display());
            Ok(())
        }
        Command::Eval { checkpoint, eval: args } => eval(&args, Some(&checkpoint)),
        Command::BaselineEval { eval: args } => eval(&args, None),
        Command::Compare { files, out } => {
            let cmp = cmd_compare(&files)?;
            print!("{}", cmp.report());
            if let Some(path) = out {
                write_or_print(Some(&path), &cmp.plot_data())?;
            }
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
