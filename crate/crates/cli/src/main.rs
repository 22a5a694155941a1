use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand, ValueEnum};

use promptloop_cli::commands;
use promptloop_cli::config::{EvalMode, ExperimentConfig};
use promptloop_cli::exit::{self, invalid};
use promptloop_core::grpo::Regime;

#[derive(Parser)]
#[command(name = "promptloop", version, about = "Closed-loop prompt refinement for a toy conditional diffusion model")]
struct Cli {
    /// TOML experiment config; omitted keys take desk defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Root seed; overrides the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores). Results do not depend on this.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output root; overrides the config.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum RegimeArg {
    ClosedLoop,
    Blind,
    FeedForward,
}

impl From<RegimeArg> for Regime {
    fn from(r: RegimeArg) -> Self {
        match r {
            RegimeArg::ClosedLoop => Regime::ClosedLoop,
            RegimeArg::Blind => Regime::Blind,
            RegimeArg::FeedForward => Regime::FeedForward,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Train the conditional denoiser on the mixture.
    TrainDiffusion,
    /// Train the prompt policy with GRPO against the frozen denoiser.
    TrainPolicy {
        #[arg(long, value_enum)]
        mode: Option<RegimeArg>,
        /// Refinements per training episode.
        #[arg(long)]
        refine_steps: Option<usize>,
        #[arg(long)]
        updates: Option<usize>,
        /// Ten updates, for a quick end-to-end check.
        #[arg(long)]
        smoke: bool,
        /// Ignore an existing checkpoint and start over.
        #[arg(long)]
        restart: bool,
    },
    /// Evaluate one method on fixed episode seeds.
    Eval {
        #[arg(long, value_enum)]
        mode: Option<EvalMode>,
        #[arg(long)]
        refine_steps: Option<usize>,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Incremental ablation ladder; trains missing policies.
    Ablate {
        #[arg(long)]
        refine_steps: Option<usize>,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Evaluate one method across `sweep.refine_steps`.
    Sweep {
        #[arg(long, value_enum)]
        mode: Option<EvalMode>,
        #[arg(long)]
        episodes: Option<usize>,
    },
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = cli.out {
        cfg.out = o;
    }
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(invalid("--threads must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let mut restart = false;
    match &cli.command {
        Command::TrainDiffusion | Command::Ablate { .. } | Command::Sweep { .. } => {}
        &Command::TrainPolicy { mode, refine_steps, updates, smoke, restart: r } => {
            if let Some(m) = mode {
                cfg.grpo.regime = m.into();
            }
            if let Some(n) = refine_steps {
                cfg.grpo.refine_steps = n;
            }
            if let Some(u) = updates {
                cfg.grpo.updates = u;
            }
            if smoke {
                cfg.grpo.updates = 10;
            }
            restart = r;
        }
        &Command::Eval { mode, refine_steps, episodes } => {
            if let Some(m) = mode {
                cfg.eval.mode = m;
            }
            if let Some(n) = refine_steps {
                cfg.eval.refine_steps = n;
            }
            if let Some(e) = episodes {
                cfg.eval.episodes = e;
            }
        }
    }
    match &cli.command {
        &Command::Ablate { refine_steps, episodes } => {
            if let Some(n) = refine_steps {
                cfg.eval.refine_steps = n;
            }
            if let Some(e) = episodes {
                cfg.eval.episodes = e;
            }
        }
        &Command::Sweep { mode, episodes } => {
            if let Some(m) = mode {
                cfg.eval.mode = m;
            }
            if let Some(e) = episodes {
                cfg.eval.episodes = e;
            }
        }
        _ => {}
    }
    cfg.validate()?;
    match cli.command {
        Command::TrainDiffusion => commands::train_diffusion(&cfg),
        Command::TrainPolicy { .. } => commands::train_policy_stage(&cfg, restart).map(drop),
        Command::Eval { .. } => commands::eval(&cfg).map(drop),
        Command::Ablate { .. } => commands::ablate(&cfg).map(drop),
        Command::Sweep { .. } => commands::sweep(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { exit::INVALID } else { exit::OK });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::from(exit::OK),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit::code_for(&e))
        }
    }
}
