use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use offload_cli::commands::{
    cmd_bench, cmd_calibrate, cmd_gen, cmd_oracle_check, cmd_train, format_summary, HEURISTIC_NAME,
};
use offload_cli::{CliError, RunConfig, Split};

/// Robot/cloud offloading experiments: trace generation, training, oracle verification and benchmarking.
#[derive(Debug, Parser)]
#[command(name = "offload", version)]
struct Cli {
    /// TOML run configuration; defaults are used when omitted.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Output directory (overrides `out_dir`).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Seed for training, benchmark trials and oracle-check instances.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    /// Worker threads; defaults to the number of available cores.
    #[arg(long, global = true, value_name = "N")]
    jobs: Option<usize>,
    /// Number of training episodes (overrides `trainer.episodes`).
    #[arg(long, global = true, value_name = "N")]
    episodes: Option<u64>,
    /// `train`: checkpoint to resume from. `bench`: checkpoint of the RL policy to evaluate.
    #[arg(long, global = true, value_name = "PATH")]
    checkpoint: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Test,
    All,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate trace files for the train and/or test split.
    Gen {
        #[arg(long, value_enum, default_value = "all")]
        split: SplitArg,
    },
    /// Train the A2C policy, writing the curve and checkpoints.
    Train,
    /// Compare the DP oracle with brute force on random small instances.
    OracleCheck,
    /// Benchmark baselines, the oracle and (optionally) a trained policy.
    Bench,
    /// Compute robot-confidence thresholds on the train split.
    Calibrate,
}

fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.trainer.seed = seed;
        cfg.bench.seed = seed;
        cfg.oracle_check.seed = seed;
    }
    if let Some(n) = cli.episodes {
        cfg.trainer.episodes = n;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<(), CliError> {
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(CliError::Usage("--jobs must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| CliError::Runtime(e.into()))?;
    }
    let cfg = load_config(&cli)?;
    match cli.command {
        Command::Gen { split } => {
            let splits = match split {
                SplitArg::Train => vec![Split::Train],
                SplitArg::Test => vec![Split::Test],
                SplitArg::All => vec![Split::Train, Split::Test],
            };
            for (split, path) in splits.iter().zip(cmd_gen(&cfg, &splits)?) {
                let seeds = cfg.split_seeds(*split);
                println!(
                    "{}: {} traces (seeds from {}) -> {}",
                    split.name(),
                    cfg.split_count(*split),
                    seeds.start,
                    path.display()
                );
            }
        }
        Command::Train => {
            let s = cmd_train(&cfg, cli.checkpoint.as_deref(), true)?;
            if let Some(from) = s.resumed_from {
                println!("resumed from episode {from}");
            }
            println!("trained {} episodes", s.episodes);
            match s.final_moving_average {
                Some(ma) => println!("final moving-average reward (last 1000 episodes): {ma:.4}"),
                None => println!("final moving-average reward: n/a"),
            }
            println!("checkpoint: {}\ncurve: {}", s.checkpoint.display(), s.curve.display());
        }
        Command::OracleCheck => {
            let r = cmd_oracle_check(&cfg)?;
            println!("{}/{} match", r.matched, r.total);
            if let Some(path) = &r.counterexample {
                return Err(CliError::Verification(format!(
                    "{} mismatches between DP and brute force; counterexample in {}",
                    r.mismatches.len(),
                    path.display()
                )));
            }
        }
        Command::Bench => {
            let out = cmd_bench(&cfg, cli.checkpoint.as_deref())?;
            print!("{}", format_summary(&out.report));
            println!("{HEURISTIC_NAME} uses q = {}", out.selected_q);
            println!("reports written to {}", out.dir.display());
            let c = &out.report.checks;
            if !c.passed() {
                return Err(CliError::Verification(format!(
                    "invariant checks failed: {} budget violations, {} dominance violations, \
                     {} action count mismatches, max decomposition error {:e}",
                    c.budget_violations, c.dominance_violations, c.action_count_mismatches, c.max_decomposition_error
                )));
            }
        }
        Command::Calibrate => {
            let (path, cal) = cmd_calibrate(&cfg)?;
            for c in &cal {
                println!("q = {:>5}  threshold = {:.6}  offload rate = {:.4}", c.cfg.q, c.cfg.threshold, c.offload_rate);
            }
            println!("written to {}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            e.to_exit()
        }
    }
}
