//! Subcommand implementations. Each returns structured results so the
//! binary and the tests share one code path.

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use offload_core::a2c::{
    load_checkpoint, moving_average, save_checkpoint, train_from, A2cPolicy, Checkpoint, CurveRow, TrainerConfig,
    TrainerState, CURVE_HEADER,
};
use offload_core::eval::{benchmark, export_report, fmt_num, median, run_episode, BenchmarkReport, BenchmarkSettings, Contender};
use offload_core::policies::{
    brute_force_oracle, calibrate_threshold, oracle_dp, AllCloudPolicy, AllRobotPolicy, Policy, RandomPolicy,
    ThresholdPolicy, ThresholdPolicyConfig,
};
use offload_core::{generate_dataset, generate_trace, load_traces, save_traces, GenConfig, OffloadError, OraclePlan, RewardParams, Trace};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::{RunConfig, Split};
use crate::error::CliError;

/// Moving-average window reported at the end of training.
pub const REPORT_WINDOW: u64 = 1000;

pub const HEURISTIC_NAME: &str = "robot-heuristic";

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display())).map_err(CliError::from)
}

pub fn cmd_gen(cfg: &RunConfig, splits: &[Split]) -> Result<Vec<PathBuf>, CliError> {
    cfg.validate()?;
    create_dir(&cfg.traces_dir())?;
    let mut written = Vec::new();
    for &split in splits {
        let seeds = cfg.split_seeds(split);
        let traces = generate_dataset(&cfg.generator, cfg.split_count(split), seeds.start)?;
        let path = cfg.trace_path(split);
        save_traces(&traces, &path)?;
        written.push(path);
    }
    Ok(written)
}

/// Loads trace files, reporting every missing one at once.
pub fn load_splits(cfg: &RunConfig, splits: &[Split]) -> Result<Vec<Vec<Trace>>, CliError> {
    let paths: Vec<PathBuf> = splits.iter().map(|&s| cfg.trace_path(s)).collect();
    let missing: Vec<String> = paths.iter().filter(|p| !p.is_file()).map(|p| p.display().to_string()).collect();
    if !missing.is_empty() {
        return Err(CliError::Runtime(anyhow::anyhow!(
            "missing trace files (run `offload gen` first); expected: {}",
            missing.join(", ")
        )));
    }
    paths.iter().map(|p| load_traces(p).map_err(CliError::from)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub cfg: ThresholdPolicyConfig,
    /// Fraction of calibration steps whose confidence is below the threshold.
    pub offload_rate: f64,
}

pub fn calibrate(train: &[Trace], percentiles: &[f64]) -> Result<Vec<Calibration>, CliError> {
    let confs: Vec<f64> = train.iter().flat_map(|t| t.steps.iter().map(|s| s.robot_conf)).collect();
    percentiles
        .iter()
        .map(|&q| {
            let cfg = calibrate_threshold(train, q)?;
            let below = confs.iter().filter(|&&c| c < cfg.threshold).count();
            Ok(Calibration { cfg, offload_rate: below as f64 / confs.len() as f64 })
        })
        .collect()
}

pub fn cmd_calibrate(cfg: &RunConfig) -> Result<(PathBuf, Vec<Calibration>), CliError> {
    cfg.validate()?;
    let train = load_splits(cfg, &[Split::Train])?.remove(0);
    let cal = calibrate(&train, &cfg.bench.threshold_percentiles)?;
    let mut body = String::from("q,threshold,offload_rate\n");
    for c in &cal {
        let _ = writeln!(body, "{},{},{}", fmt_num(c.cfg.q), fmt_num(c.cfg.threshold), fmt_num(c.offload_rate));
    }
    create_dir(&cfg.out_dir)?;
    let path = cfg.out_dir.join("calibration.csv");
    fs::write(&path, body).with_context(|| format!("writing {}", path.display()))?;
    Ok((path, cal))
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub episodes: u64,
    pub resumed_from: Option<u64>,
    pub final_moving_average: Option<f64>,
    pub checkpoint: PathBuf,
    pub curve: PathBuf,
}

fn same_run(a: &TrainerConfig, b: &TrainerConfig) -> bool {
    let strip = |c: &TrainerConfig| TrainerConfig { episodes: 0, checkpoint_every: 0, ..c.clone() };
    strip(a) == strip(b)
}

fn read_curve(path: &Path, up_to: u64) -> Result<Vec<CurveRow>, CliError> {
    if !path.is_file() {
        return Ok(Vec::new());
    }
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.with_context(|| format!("reading {}", path.display()))?;
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let row = CurveRow::parse_csv_line(&line)
            .ok_or_else(|| anyhow::anyhow!("{}:{}: malformed curve row", path.display(), i + 1))?;
        if row.episode <= up_to {
            rows.push(row);
        }
    }
    Ok(rows)
}

/// Trains, streaming `train/curve.csv` and refreshing `train/checkpoint.json`.
///
/// With `resume`, training continues from the checkpoint and the curve file
/// is cut back to the checkpoint's episode before new rows are appended.
pub fn cmd_train(cfg: &RunConfig, resume: Option<&Path>, verbose: bool) -> Result<TrainSummary, CliError> {
    cfg.validate()?;
    let dir = cfg.train_dir();
    create_dir(&dir)?;
    let ckpt_path = dir.join("checkpoint.json");
    let curve_path = dir.join("curve.csv");

    let (state, mut history) = match resume {
        Some(path) => {
            let ckpt = load_checkpoint(path)?;
            if ckpt.generator != cfg.generator || !same_run(&ckpt.trainer, &cfg.trainer) {
                return Err(CliError::Usage(format!(
                    "checkpoint {} was written with a different generator or trainer configuration",
                    path.display()
                )));
            }
            let state = ckpt.restore::<f64>()?;
            let history = read_curve(&curve_path, state.episode)?;
            (state, history)
        }
        None => (TrainerState::fresh(&cfg.trainer, &cfg.generator)?, Vec::new()),
    };
    let resumed_from = resume.map(|_| state.episode);

    let file = File::create(&curve_path).with_context(|| format!("creating {}", curve_path.display()))?;
    let mut curve = BufWriter::new(file);
    let io = |e: std::io::Error| OffloadError::io(&curve_path, e);
    writeln!(curve, "{CURVE_HEADER}").map_err(io)?;
    for r in &history {
        writeln!(curve, "{}", r.csv_line()).map_err(io)?;
    }
    curve.flush().map_err(io)?;

    let every = cfg.trainer.checkpoint_every.max(1);
    let mut recent: VecDeque<CurveRow> = history.iter().rev().take(20).rev().copied().collect();
    let mut last_saved = resumed_from;
    let mut prev_episode = state.episode;
    let result = train_from(&cfg.trainer, &cfg.generator, &cfg.reward, state, |st, row| {
        writeln!(curve, "{}", row.csv_line()).map_err(io)?;
        curve.flush().map_err(io)?;
        if recent.len() == 20 {
            recent.pop_front();
        }
        recent.push_back(*row);
        let crossed = st.episode / every != prev_episode / every;
        prev_episode = st.episode;
        if crossed {
            save_checkpoint(&Checkpoint::capture(st, &cfg.trainer, &cfg.generator), &ckpt_path)?;
            last_saved = Some(st.episode);
            if verbose {
                let ma = moving_average(recent.make_contiguous(), st.episode, REPORT_WINDOW);
                println!("episode {:>8}  mean reward {:>10.3}  entropy {:.3}", st.episode, ma.unwrap_or(f64::NAN), row.entropy);
            }
        }
        Ok(())
    });

    let outcome = match result {
        Ok(o) => o,
        Err(e @ OffloadError::Divergence { .. }) => {
            let diag = dir.join("divergence.txt");
            let mut body = format!("training diverged: {e}\n\nlast checkpoint: ");
            match last_saved {
                Some(ep) => {
                    let _ = writeln!(body, "{} (episode {ep})", ckpt_path.display());
                }
                None => body.push_str("none\n"),
            }
            let _ = writeln!(body, "\nrecent curve rows:\n{CURVE_HEADER}");
            for r in &recent {
                let _ = writeln!(body, "{}", r.csv_line());
            }
            fs::write(&diag, body).with_context(|| format!("writing {}", diag.display()))?;
            return Err(CliError::Runtime(anyhow::Error::new(e).context(format!("diagnostics written to {}", diag.display()))));
        }
        Err(e) => return Err(e.into()),
    };

    save_checkpoint(&Checkpoint::capture(&outcome.state, &cfg.trainer, &cfg.generator), &ckpt_path)?;
    history.extend_from_slice(&outcome.curve);
    Ok(TrainSummary {
        episodes: outcome.state.episode,
        resumed_from,
        final_moving_average: moving_average(&history, outcome.state.episode, REPORT_WINDOW),
        checkpoint: ckpt_path,
        curve: curve_path,
    })
}

#[derive(Debug, Clone)]
pub struct OracleInstance {
    pub trace: Trace,
    pub budget: usize,
}

/// Random small instances with short coherence intervals so that cached
/// predictions are actually worth reusing.
pub fn oracle_instances(cfg: &RunConfig) -> Result<Vec<OracleInstance>, CliError> {
    let oc = &cfg.oracle_check;
    let mut rng = ChaCha8Rng::seed_from_u64(oc.seed);
    (0..oc.instances)
        .map(|_| {
            let horizon = rng.random_range(1..=oc.max_horizon);
            let budget = rng.random_range(0..=oc.max_budget.min(horizon));
            let num_identities = rng.random_range(2..=5u32);
            let fmin = rng.random_range(0.1..0.4);
            let gen = GenConfig {
                horizon,
                num_identities,
                num_known: rng.random_range(2..=num_identities),
                coherence_frac_min: fmin,
                coherence_frac_max: (fmin + rng.random_range(0.0..0.4)).min(0.95),
                p_correct_known: rng.random_range(0.5..1.0),
                ..cfg.generator.clone()
            };
            let trace = generate_trace(&gen, rng.random())?;
            Ok(OracleInstance { trace, budget })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct Mismatch {
    pub index: usize,
    pub instance: OracleInstance,
    pub dp: OraclePlan,
    pub brute: OraclePlan,
}

#[derive(Debug, Clone)]
pub struct OracleCheckReport {
    pub total: usize,
    pub matched: usize,
    pub mismatches: Vec<Mismatch>,
    pub counterexample: Option<PathBuf>,
}

/// Compares `solver` against exhaustive search on every instance.
pub fn compare_oracles<S>(instances: &[OracleInstance], params: &RewardParams, solver: S) -> Result<Vec<Mismatch>, CliError>
where
    S: Fn(&Trace, &RewardParams, usize) -> offload_core::Result<OraclePlan> + Sync,
{
    let found: Vec<Option<Mismatch>> = instances
        .par_iter()
        .enumerate()
        .map(|(index, inst)| {
            let dp = solver(&inst.trace, params, inst.budget)?;
            let brute = brute_force_oracle(&inst.trace, params, inst.budget)?;
            Ok((dp.value != brute.value).then(|| Mismatch { index, instance: inst.clone(), dp, brute }))
        })
        .collect::<Result<_, OffloadError>>()?;
    Ok(found.into_iter().flatten().collect())
}

pub fn cmd_oracle_check(cfg: &RunConfig) -> Result<OracleCheckReport, CliError> {
    cmd_oracle_check_with(cfg, oracle_dp)
}

/// As [`cmd_oracle_check`] with a substitute DP solver, which lets tests
/// confirm that a broken solver is caught.
pub fn cmd_oracle_check_with<S>(cfg: &RunConfig, solver: S) -> Result<OracleCheckReport, CliError>
where
    S: Fn(&Trace, &RewardParams, usize) -> offload_core::Result<OraclePlan> + Sync,
{
    cfg.validate()?;
    let instances = oracle_instances(cfg)?;
    let mismatches = compare_oracles(&instances, &cfg.reward, solver)?;
    let mut report =
        OracleCheckReport { total: instances.len(), matched: instances.len() - mismatches.len(), mismatches, counterexample: None };
    if let Some(m) = report.mismatches.first() {
        let dir = cfg.out_dir.join("oracle_check");
        create_dir(&dir)?;
        let trace_path = dir.join("counterexample.jsonl");
        save_traces(std::slice::from_ref(&m.instance.trace), &trace_path)?;
        let codes = |p: &OraclePlan| p.actions.iter().map(|a| a.code().to_string()).collect::<Vec<_>>().join(" ");
        let body = format!(
            "instance {index} of {total} (seed {seed})\ntrace file: {trace}\nbudget: {budget}\n\
             dp value: {dv}\nbrute-force value: {bv}\ndp actions: {da}\nbrute-force actions: {ba}\n",
            index = m.index,
            total = report.total,
            seed = cfg.oracle_check.seed,
            trace = trace_path.display(),
            budget = m.instance.budget,
            dv = m.dp.value,
            bv = m.brute.value,
            da = codes(&m.dp),
            ba = codes(&m.brute),
        );
        let info = dir.join("counterexample.txt");
        fs::write(&info, body).with_context(|| format!("writing {}", info.display()))?;
        report.counterexample = Some(info);
    }
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct SweepEntry {
    pub calibration: Calibration,
    pub median: f64,
}

#[derive(Debug, Clone)]
pub struct BenchOutcome {
    pub report: BenchmarkReport,
    pub sweep: Vec<SweepEntry>,
    pub selected_q: f64,
    pub dir: PathBuf,
}

/// Median episode reward of each threshold over every (test trace, fraction) cell.
fn threshold_sweep(cfg: &RunConfig, train: &[Trace], test: &[Trace]) -> Result<Vec<SweepEntry>, CliError> {
    let cal = calibrate(train, &cfg.bench.threshold_percentiles)?;
    cal.into_iter()
        .map(|calibration| {
            let policy = ThresholdPolicy::new(calibration.cfg);
            let cells: Vec<(usize, f64)> = (0..test.len())
                .flat_map(|t| cfg.bench.budget_fractions.iter().map(move |&f| (t, f)))
                .collect();
            let rewards = cells
                .par_iter()
                .map(|&(t, f)| run_episode::<f64>(&policy, &test[t], f, &cfg.reward, 0).map(|r| r.total_reward))
                .collect::<Result<Vec<_>, _>>()?;
            Ok(SweepEntry { calibration, median: median(&rewards) })
        })
        .collect()
}

/// Benchmarks the baselines, the tuned threshold heuristic, the oracle and,
/// given a checkpoint, the greedy RL policy. Reports are written before the
/// invariant checks are turned into an exit status.
pub fn cmd_bench(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<BenchOutcome, CliError> {
    cfg.validate()?;
    let rl = match checkpoint {
        Some(p) => {
            let state = load_checkpoint(p)?.restore::<f64>()?;
            Some(A2cPolicy { actor: state.actor, phi_scale: state.phi_scale })
        }
        None => None,
    };
    let mut splits = load_splits(cfg, &[Split::Train, Split::Test])?;
    let test = splits.pop().expect("two splits");
    let train = splits.pop().expect("two splits");

    let sweep = threshold_sweep(cfg, &train, &test)?;
    let best = sweep
        .iter()
        .fold(None::<&SweepEntry>, |b, e| match b {
            Some(b) if e.median <= b.median => Some(b),
            _ => Some(e),
        })
        .expect("nonempty percentile list");
    let heuristic = ThresholdPolicy { name: HEURISTIC_NAME.into(), cfg: best.calibration.cfg };
    let selected_q = best.calibration.cfg.q;

    let robot = AllRobotPolicy { hold: cfg.bench.all_robot_hold };
    let mut contenders: Vec<Contender<'_, f64>> = vec![
        Contender { policy: &RandomPolicy, baseline: true },
        Contender { policy: &robot, baseline: true },
        Contender { policy: &AllCloudPolicy, baseline: true },
        Contender { policy: &heuristic, baseline: true },
    ];
    if let Some(rl) = &rl {
        contenders.push(Contender { policy: rl as &dyn Policy<f64>, baseline: false });
    }
    let settings = BenchmarkSettings {
        budget_fractions: cfg.bench.budget_fractions.clone(),
        trials: cfg.bench.trials,
        seed: cfg.bench.seed,
    };
    let report = benchmark(&contenders, &test, &settings, &cfg.reward)?;

    let dir = cfg.bench_dir();
    export_report(&report, &dir)?;
    let mut body = String::from("q,threshold,offload_rate,median,selected\n");
    for e in &sweep {
        let _ = writeln!(
            body,
            "{},{},{},{},{}",
            fmt_num(e.calibration.cfg.q),
            fmt_num(e.calibration.cfg.threshold),
            fmt_num(e.calibration.offload_rate),
            fmt_num(e.median),
            e.calibration.cfg.q == selected_q
        );
    }
    let sweep_path = dir.join("threshold_sweep.csv");
    fs::write(&sweep_path, body).with_context(|| format!("writing {}", sweep_path.display()))?;

    Ok(BenchOutcome { report, sweep, selected_q, dir })
}

/// Human-readable overall summary, one line per policy.
pub fn format_summary(report: &BenchmarkReport) -> String {
    let mut s = format!("{:<18} {:>12} {:>12} {:>10} {:>12}\n", "policy", "median", "mean", "ci95", "vs oracle");
    for p in &report.policies {
        if let (Some(row), Some(ratio)) = (report.summary_for(p, None), report.ratio_for(p, None)) {
            let _ = writeln!(
                s,
                "{:<18} {:>12.3} {:>12.3} {:>10.3} {:>12.3}",
                p,
                row.median,
                row.reward.mean,
                row.reward.half_width(),
                ratio.vs_oracle
            );
        }
    }
    s
}
