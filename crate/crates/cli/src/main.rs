use clap::{Args, Parser, Subcommand, ValueEnum};
use covpath_core::harness::{self, ExperimentConfig, HarnessError, MapSource, Method, Mode};
use std::path::PathBuf;
use std::process::ExitCode;

/// Coverage path planning workbench: train RL agents, evaluate classical
/// baselines, and run the tabular convergence lab.
#[derive(Parser)]
#[command(name = "covpath", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train an RL or hybrid agent and write metrics, checkpoints, and plot data.
    Train(Common),
    /// Evaluate a method greedily on a map.
    Eval(Common),
    /// Compare methods across fixture maps.
    Bench(Common),
    /// Run the hyper-parameter sweep from the config file.
    Sweep(Common),
    /// Run the sampled-Bellman-operator convergence lab.
    Contraction(Common),
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MethodArg {
    Zigzag,
    Bastar,
    Rl,
    Hybrid,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Method {
        match m {
            MethodArg::Zigzag => Method::Zigzag,
            MethodArg::Bastar => Method::Bastar,
            MethodArg::Rl => Method::Rl,
            MethodArg::Hybrid => Method::Hybrid,
        }
    }
}

#[derive(Args)]
struct Common {
    /// TOML experiment config; flags below override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed list, e.g. --seed 0,1,2.
    #[arg(long, value_delimiter = ',')]
    seed: Vec<u64>,
    /// Map file path.
    #[arg(long)]
    map: Option<PathBuf>,
    /// Sensor flip probability rho.
    #[arg(long)]
    noise: Option<f64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Training episode budget.
    #[arg(long)]
    episodes: Option<usize>,
    /// Per-episode step cap (0 = 4x free cells).
    #[arg(long)]
    step_cap: Option<usize>,
    /// Method for eval/train (zigzag, bastar, rl, hybrid).
    #[arg(long)]
    method: Option<MethodArg>,
    /// Checkpoint to evaluate (eval of rl/hybrid).
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Greedy evaluation episodes.
    #[arg(long)]
    eval_episodes: Option<usize>,
}

fn build_config(mode: Mode, common: &Common) -> Result<ExperimentConfig, HarnessError> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::default(),
    };
    cfg.mode = mode;
    if !common.seed.is_empty() {
        cfg.seeds = common.seed.clone();
    }
    if let Some(map) = &common.map {
        cfg.map = Some(MapSource::File(map.clone()));
    }
    if let Some(rho) = common.noise {
        cfg.noise_rho = rho;
    }
    if let Some(out) = &common.out {
        cfg.out_dir = out.clone();
    }
    if let Some(episodes) = common.episodes {
        cfg.train.episodes = episodes;
    }
    if let Some(cap) = common.step_cap {
        cfg.step_cap = cap;
    }
    if let Some(method) = common.method {
        cfg.method = method.into();
    }
    if let Some(ckpt) = &common.checkpoint {
        cfg.checkpoint = Some(ckpt.clone());
    }
    if let Some(n) = common.eval_episodes {
        cfg.eval_episodes = n;
    }
    Ok(cfg)
}

fn execute(mode: Mode, common: &Common) -> Result<(), HarnessError> {
    let cfg = build_config(mode, common)?;
    let record = harness::run(&cfg)?;
    println!("config hash: {}", record.config_hash);
    match mode {
        Mode::Train | Mode::Eval => {
            for s in &record.summary.per_seed {
                println!(
                    "seed {}: episodes {} coverage {:.2}% overlap {:.2}% (to-threshold: {})",
                    s.seed,
                    s.episodes,
                    s.mean_coverage_pct,
                    s.mean_overlap_pct,
                    s.episodes_to_threshold.map(|e| e.to_string()).unwrap_or_else(|| "-".into()),
                );
            }
            println!(
                "mean coverage {:.2}% mean overlap {:.2}%",
                record.summary.mean_coverage_pct, record.summary.mean_overlap_pct
            );
        }
        Mode::Bench => println!("bench table written to {}", cfg.out_dir.join("bench.csv").display()),
        Mode::Sweep => println!("sweep table written to {}", cfg.out_dir.join("sweep.csv").display()),
        Mode::Contraction => println!(
            "error curves written to {}",
            cfg.out_dir.join("contraction.csv").display()
        ),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (mode, common) = match &cli.command {
        Command::Train(c) => (Mode::Train, c),
        Command::Eval(c) => (Mode::Eval, c),
        Command::Bench(c) => (Mode::Bench, c),
        Command::Sweep(c) => (Mode::Sweep, c),
        Command::Contraction(c) => (Mode::Contraction, c),
    };
    match execute(mode, common) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err @ HarnessError::Config(_)) => {
            eprintln!("error: {err}");
            ExitCode::from(2)
        }
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(3)
        }
    }
}
