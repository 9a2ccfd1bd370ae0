mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{Context, Failure};
use config::{CommandKind, ConfigError, ExperimentConfig};
use output::Artifacts;

/// Worker-count environment variable for sweeps that fan out.
const WORKERS_ENV: &str = "PYM_WORKERS";

#[derive(Parser)]
#[command(name = "pym", version, about = "p-Yang-Mills numerical laboratory")]
struct Cli {
    /// JSON experiment config; defaults apply when absent.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (default: out/<command>).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Master seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Fuzzed inequality battery; writes scorecard.json.
    Verify {
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Gradient flow; writes flow.csv, flow.json and field.pym.
    Flow {
        #[arg(long)]
        p: Option<f64>,
        #[arg(long)]
        steps: Option<usize>,
    },
    /// Lowest eigenvalues of a stability problem; writes spectrum.json.
    Spectrum {
        #[arg(long)]
        p: Option<f64>,
        #[arg(long)]
        k: Option<usize>,
    },
    /// Neck constants over a p grid, weight tables and the optional neck sweep.
    Neck {
        /// start:stop:step
        #[arg(long = "p-grid")]
        p_grid: Option<String>,
        /// Comma-separated ε values.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
        eps: Option<Vec<f64>>,
        /// Run the glued-bubble neck sweep with default options.
        #[arg(long)]
        sweep: bool,
    },
    /// Bubbling-family bookkeeping and the index-semicontinuity table.
    Bubble {
        /// a..b or a comma list.
        #[arg(long)]
        k: Option<String>,
        #[arg(long = "no-index")]
        no_index: bool,
    },
    /// Lorentz-norm diagnostics.
    Lorentz,
    /// Runs the command named in the config file.
    Run,
}

fn load(cli: &Cli) -> Result<ExperimentConfig, ConfigError> {
    match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| ConfigError { field: "--config".into(), message: format!("{}: {e}", path.display()) })?;
            config::parse(&text)
        }
        None => Ok(ExperimentConfig::default()),
    }
}

fn workers() -> Result<usize, ConfigError> {
    match std::env::var(WORKERS_ENV) {
        Err(_) => Ok(1),
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n >= 1 => Ok(n),
            _ => Err(ConfigError { field: WORKERS_ENV.into(), message: format!("expected a positive integer, got {v:?}") }),
        },
    }
}

/// Applies subcommand overrides and returns the command to run.
fn apply(cli: &Cli, cfg: &mut ExperimentConfig) -> Result<CommandKind, ConfigError> {
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    let cmd = match &cli.command {
        Cmd::Verify { samples } => {
            if let Some(n) = samples {
                cfg.verify.fuzz.samples = *n;
            }
            CommandKind::Verify
        }
        Cmd::Flow { p, steps } => {
            if let Some(p) = p {
                cfg.flow.p = *p;
            }
            if let Some(n) = steps {
                cfg.flow.options.steps = *n;
            }
            CommandKind::Flow
        }
        Cmd::Spectrum { p, k } => {
            if let Some(p) = p {
                cfg.spectrum.p = *p;
            }
            if let Some(k) = k {
                cfg.spectrum.solve.k = *k;
            }
            CommandKind::Spectrum
        }
        Cmd::Neck { p_grid, eps, sweep } => {
            if let Some(g) = p_grid {
                cfg.neck.p_grid = g.clone();
            }
            if let Some(e) = eps {
                cfg.neck.eps = e.clone();
            }
            if *sweep && cfg.neck.sweep.is_none() {
                cfg.neck.sweep = Some(Default::default());
            }
            CommandKind::Neck
        }
        Cmd::Bubble { k, no_index } => {
            if let Some(k) = k {
                cfg.bubble.k = k.clone();
            }
            if *no_index {
                cfg.bubble.index = None;
            }
            CommandKind::Bubble
        }
        Cmd::Lorentz => CommandKind::Lorentz,
        Cmd::Run => cfg
            .command
            .ok_or_else(|| ConfigError { field: "command".into(), message: "`run` needs a command in the config".into() })?,
    };
    cfg.command = Some(cmd);
    cfg.propagate_seed();
    cfg.validate(cmd)?;
    Ok(cmd)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let prepared = load(&cli).and_then(|mut cfg| {
        let cmd = apply(&cli, &mut cfg)?;
        Ok((cfg, cmd, workers()?))
    });
    let (cfg, cmd, workers) = match prepared {
        Ok(x) => x,
        Err(e) => {
            eprintln!("error: invalid config: {e}");
            return ExitCode::from(2);
        }
    };
    let dir = cli.out.clone().or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from("out").join(cmd.name()));
    let mut art = match Artifacts::new(&dir, cmd.name(), cfg.hash(), cfg.seed) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: invalid config: output directory {}: {e}", dir.display());
            return ExitCode::from(2);
        }
    };
    let ctx = Context { cfg, workers };
    let outcome = art.json("config.json", &ctx.cfg).map_err(Failure::from).and_then(|_| commands::run(&ctx, cmd, &mut art));
    match outcome {
        Ok(()) => {
            for f in art.written() {
                println!("{}", art.path(f).display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            if let Failure::Numerical(msg) = &e {
                let _ = art.json("error.json", msg);
            }
            ExitCode::from(e.code() as u8)
        }
    }
}
