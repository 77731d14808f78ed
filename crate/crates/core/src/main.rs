use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use cannav::harness::ablate::{parse_seeds, Variant};
use cannav::harness::config::RunConfig;
use cannav::harness::{self, CmiOptions, EvalRequest};
use cannav::Error;

/// Causality-aware navigation agents: training, evaluation and diagnostics.
#[derive(Parser)]
#[command(name = "cannav", version)]
struct Cli {
    /// Print the fully resolved config (defaults included) and exit.
    #[arg(long, global = true)]
    print_config: bool,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Args, Clone, Default)]
struct ConfigArgs {
    /// JSON run config; omitted fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config's master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Dotted `key=value` override, e.g. `ppo.alpha=0`. Repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Overrides the config's output directory.
    #[arg(long)]
    output_dir: Option<PathBuf>,
}

impl ConfigArgs {
    fn resolve(&self) -> cannav::Result<RunConfig> {
        let base = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        let mut cfg = base.with_overrides(&self.overrides)?;
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(d) = &self.output_dir {
            cfg.output_dir = d.clone();
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train one agent with PPO and the causal loss.
    Train(ConfigArgs),
    /// Evaluate a checkpoint on held-out worlds.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 50)]
        episodes: usize,
        /// First evaluation world seed (default: the checkpoint's eval.seed_base).
        #[arg(long)]
        seed_base: Option<u64>,
        /// Allow world seeds from the training range.
        #[arg(long)]
        allow_train_seeds: bool,
    },
    /// Train every (variant, seed) pair and summarize.
    Ablate {
        #[command(flatten)]
        config: ConfigArgs,
        /// Comma-separated subset of can, transformer_no_causal, causal_rnn, rnn_no_causal.
        #[arg(
            long,
            value_delimiter = ',',
            default_value = "can,transformer_no_causal,causal_rnn,rnn_no_causal"
        )]
        variants: Vec<String>,
        /// Inclusive range `a..b` or list `a,b,c`.
        #[arg(long, default_value = "0..4")]
        seeds: String,
    },
    /// Estimate the action's conditional mutual information for a checkpoint.
    CmiReport {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 8)]
        k: usize,
        #[arg(long, default_value_t = 512)]
        rows: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Rollout steps per environment (default: the checkpoint's horizon).
        #[arg(long)]
        horizon: Option<usize>,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Write oracle demonstrations as JSON lines.
    GenDemos {
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(short = 'n', long = "episodes")]
        n: usize,
        /// Output file (default: <output_dir>/demos.jsonl).
        #[arg(short = 'o', long)]
        out: Option<PathBuf>,
    },
    /// Plot success rate against steps for one or more logs.
    Plot {
        #[arg(long, value_delimiter = ',', required = true)]
        logs: Vec<PathBuf>,
        #[arg(short = 'o', long, default_value = "sr.svg")]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> cannav::Result<()> {
    if cli.print_config {
        let cfg = match &cli.command {
            Some(Command::Train(c))
            | Some(Command::Ablate { config: c, .. })
            | Some(Command::GenDemos { config: c, .. }) => c.resolve()?,
            _ => RunConfig::default(),
        };
        // a closed pipe (e.g. `| head`) is not an error here
        let _ = writeln!(std::io::stdout().lock(), "{}", cfg.to_pretty_json());
        return Ok(());
    }
    let Some(command) = cli.command else {
        return Err(Error::Config("no command given; see --help".into()));
    };
    match command {
        Command::Train(args) => {
            let cfg = args.resolve()?;
            let done = harness::train_cmd(&cfg)?;
            match done.report {
                Some(r) => println!(
                    "trained {} steps; best {}: sr {:.3} spl {:.3} gd {:.2}",
                    done.outcome.steps, r.checkpoint, r.sr, r.spl, r.gd
                ),
                None => println!("trained {} steps; no evaluation ran", done.outcome.steps),
            }
        }
        Command::Eval {
            checkpoint,
            episodes,
            seed_base,
            allow_train_seeds,
        } => {
            let req = EvalRequest {
                episodes,
                seed_base,
                allow_train_seeds,
            };
            let r = harness::eval_cmd(&checkpoint, &req)?;
            println!("sr {:.3} spl {:.3} gd {:.2} over {} episodes", r.sr, r.spl, r.gd, r.n);
        }
        Command::Ablate {
            config,
            variants,
            seeds,
        } => {
            let cfg = config.resolve()?;
            let variants = variants
                .iter()
                .map(|v| v.trim().parse::<Variant>())
                .collect::<cannav::Result<Vec<_>>>()?;
            let seeds = parse_seeds(&seeds)?;
            let out = cfg.output_dir.clone();
            let summary = harness::ablate_cmd(&cfg, &variants, &seeds, &out)?;
            for s in &summary.stats {
                println!(
                    "{:<22} sr {:.3} ± {:.3}  spl {:.3} ± {:.3}  gd {:.2} ± {:.2}",
                    s.variant.name(),
                    s.sr.mean,
                    s.sr.std,
                    s.spl.mean,
                    s.spl.std,
                    s.gd.mean,
                    s.gd.std
                );
            }
        }
        Command::CmiReport {
            checkpoint,
            k,
            rows,
            seed,
            horizon,
            output_dir,
        } => {
            let opts = CmiOptions {
                k,
                rows,
                seed,
                horizon,
                out_dir: output_dir,
            };
            let est = harness::cmi_report_cmd(&checkpoint, &opts)?;
            println!(
                "rows {} lower {:.5} mid {:.5} upper {:.5}",
                est.rows.len(),
                est.lower_mean,
                est.mid_mean,
                est.upper_mean
            );
        }
        Command::GenDemos { config, n, out } => {
            let cfg = config.resolve()?;
            let out = out.unwrap_or_else(|| cfg.output_dir.join("demos.jsonl"));
            let demos = harness::gen_demos_cmd(&cfg, n, &out)?;
            let steps: usize = demos.iter().map(|d| d.steps.len()).sum();
            info!("wrote {} episodes ({steps} steps) to {}", demos.len(), out.display());
        }
        Command::Plot { logs, out } => {
            let s = harness::plot_cmd(&logs, &out)?;
            if s.skipped > 0 {
                eprintln!("skipped {} malformed rows", s.skipped);
            }
            info!("wrote {}", out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Config(_) => ExitCode::from(2),
                _ => ExitCode::from(1),
            }
        }
    }
}
