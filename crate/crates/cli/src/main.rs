use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use noisy_pull::engine::Execution;
use noisy_pull::experiment::{self, ExperimentConfig, ExperimentError};
use noisy_pull::protocol::LogBase;
use noisy_pull::sf::Counting;

#[derive(Parser)]
#[command(name = "noisy-pull", version, about = "Noisy PULL(h) simulator and verification toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the trials described by a config and write per-trial traces.
    Simulate(RunArgs),
    /// Run every cell of the config's sweep grid and write sweep.csv.
    Sweep(RunArgs),
    /// Classify a noise matrix and report its uniformization.
    VerifyNoise {
        #[arg(long)]
        config: PathBuf,
        /// Noise level to classify against (default: largest off-diagonal entry).
        #[arg(long)]
        delta: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate the lemma grids and write a CSV table.
    VerifyLemmas {
        #[arg(long, value_enum, default_value = "e")]
        log_base: Base,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Estimate weak-opinion correctness and compare it with the exact oracle.
    EstimateBias {
        #[command(flatten)]
        run: RunArgs,
        /// Number of non-source agents to sample.
        #[arg(long)]
        agents: Option<usize>,
        /// Round at which weak opinions are read (default: 2⌈m/h⌉).
        #[arg(long)]
        round: Option<usize>,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    /// Output directory (simulate, sweep) or file (estimate-bias).
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    m: Option<usize>,
    #[arg(long)]
    c1: Option<f64>,
    #[arg(long, value_enum)]
    log_base: Option<Base>,
    /// Count only the first m messages of each SF phase.
    #[arg(long)]
    strict_m: bool,
    /// Run trials on the current thread only.
    #[arg(long)]
    serial: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum Base {
    #[value(name = "e")]
    E,
    #[value(name = "2")]
    Two,
}

impl From<Base> for LogBase {
    fn from(b: Base) -> Self {
        match b {
            Base::E => LogBase::Natural,
            Base::Two => LogBase::Two,
        }
    }
}

impl RunArgs {
    fn load(&self) -> Result<ExperimentConfig, ExperimentError> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        if let Some(trials) = self.trials {
            cfg.trials = trials;
        }
        if let Some(m) = self.m {
            cfg.m = Some(m);
        }
        if let Some(c1) = self.c1 {
            cfg.c1 = c1;
        }
        if let Some(b) = self.log_base {
            cfg.log_base = b.into();
        }
        if self.strict_m {
            cfg.counting = Counting::StrictM;
        }
        Ok(cfg)
    }

    fn execution(&self) -> Execution {
        if self.serial {
            Execution::Serial
        } else {
            Execution::Parallel
        }
    }
}

fn to_json<T: serde::Serialize>(value: &T) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("report serializes");
    s.push('\n');
    s
}

fn run(cli: Cli) -> Result<ExitCode, ExperimentError> {
    match cli.command {
        Command::Simulate(args) => {
            let mut cfg = args.load()?;
            if let Some(out) = &args.out {
                cfg.output_path = Some(out.clone());
            }
            let summary = experiment::simulate(&cfg, args.execution())?;
            experiment::emit(None, &to_json(&summary))?;
        }
        Command::Sweep(args) => {
            let mut cfg = args.load()?;
            if let Some(out) = &args.out {
                cfg.output_path = Some(out.clone());
            }
            let rows = experiment::sweep(&cfg, args.execution())?;
            experiment::emit(None, &experiment::sweep_csv(&cfg, &rows)?)?;
        }
        Command::VerifyNoise { config, delta, out } => {
            let text = read(&config)?;
            let (noise, declared) = experiment::load_noise(&text)?;
            let report = experiment::verify_noise(&noise, delta.or(declared))?;
            experiment::emit(out.as_deref(), &to_json(&report))?;
        }
        Command::VerifyLemmas { log_base, out } => {
            let rows = experiment::lemma_checks(log_base.into());
            experiment::emit(out.as_deref(), &experiment::lemma_csv(&rows)?)?;
            let exact_failures = rows.iter().filter(|r| experiment::is_exact_lemma(r.lemma) && !r.pass).count();
            let other_failures = rows.iter().filter(|r| !experiment::is_exact_lemma(r.lemma) && !r.pass).count();
            eprintln!(
                "{} rows; {exact_failures} exact-lemma failures; {other_failures} asymptotic-row misses",
                rows.len()
            );
            if exact_failures > 0 {
                return Ok(ExitCode::from(2));
            }
        }
        Command::EstimateBias { run, agents, round } => {
            let mut cfg = run.load()?;
            let mut bias = cfg.bias.take().unwrap_or_default();
            bias.agents = agents.or(bias.agents);
            bias.round = round.or(bias.round);
            cfg.bias = Some(bias);
            let estimate = experiment::estimate_bias(&cfg)?;
            experiment::emit(run.out.as_deref(), &to_json(&estimate))?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn read(path: &Path) -> Result<String, ExperimentError> {
    std::fs::read_to_string(path).map_err(|source| ExperimentError::Io { path: path.to_path_buf(), source })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
