use std::fs;
use std::path::Path;
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use offload_cli::commands::{cmd_bench, cmd_gen, cmd_oracle_check_with, cmd_train, oracle_instances, HEURISTIC_NAME};
use offload_cli::{CliError, RunConfig, Split};
use offload_core::policies::oracle_dp;
use offload_core::{load_traces, Trace, TraceStep};

fn offload(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_offload")).args(args).output().expect("spawn offload")
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("run.toml");
    fs::write(&path, format!("out_dir = {:?}\n{body}", dir.join("out"))).unwrap();
    path.to_string_lossy().into_owned()
}

const SMALL: &str = "[generator]\nT = 20\n[trainer]\nepisodes = 100\nphi_scale_traces = 20\ncheckpoint_every = 40\n\
                     [bench]\ntrain_count = 20\ntest_count = 8\ntrials = 2\n";

fn small_config(dir: &Path) -> RunConfig {
    let mut cfg: RunConfig = toml::from_str(SMALL).unwrap();
    cfg.out_dir = dir.join("out");
    cfg
}

#[test]
fn gen_is_deterministic_and_counts_traces() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = write_config(dir.path(), "[bench]\ntest_count = 100\ntrain_count = 10\n");
    let out = offload(&["--config", &cfg_path, "gen", "--split", "test"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let test = dir.path().join("out/traces/test.jsonl");
    let first = fs::read(&test).unwrap();
    assert_eq!(load_traces(&test).unwrap().len(), 100);
    assert!(!dir.path().join("out/traces/train.jsonl").exists());

    assert!(offload(&["--config", &cfg_path, "gen", "--split", "test"]).status.success());
    assert_eq!(fs::read(&test).unwrap(), first);
}

#[test]
fn overlapping_seed_ranges_rejected_before_writing() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = write_config(dir.path(), "[trainer]\nepisodes = 1000\n[bench]\ntest_seed_base = 500\n");
    let out = offload(&["--config", &cfg_path, "gen"]);
    assert_eq!(out.status.code(), Some(1));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("[0, 1000)") && err.contains("[500, 600)"), "{err}");
    assert!(!dir.path().join("out").exists());
}

#[test]
fn usage_errors_exit_1_and_help_exits_0() {
    assert_eq!(offload(&["--config", "/definitely/missing.toml", "gen"]).status.code(), Some(1));
    assert_eq!(offload(&["no-such-command"]).status.code(), Some(1));
    assert_eq!(offload(&["bench", "--jobs", "0"]).status.code(), Some(1));
    assert_eq!(offload(&["--help"]).status.code(), Some(0));
    assert_eq!(offload(&["--version"]).status.code(), Some(0));
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = write_config(dir.path(), "[bench]\ntrails = 3\n");
    assert_eq!(offload(&["--config", &cfg_path, "gen"]).status.code(), Some(1));
}

#[test]
fn bench_without_traces_lists_expected_paths() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = write_config(dir.path(), "");
    let out = offload(&["--config", &cfg_path, "bench"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("train.jsonl") && err.contains("test.jsonl"), "{err}");
}

#[test]
fn oracle_check_default_and_seeded() {
    let out = offload(&["oracle-check", "--out", "/nonexistent-unused"]);
    assert!(out.status.success());
    assert_eq!(String::from_utf8_lossy(&out.stdout).trim(), "200/200 match");
}

#[test]
fn oracle_instances_follow_seed() {
    let mut cfg = RunConfig::default();
    let ids = |cfg: &RunConfig| -> Vec<(String, usize)> {
        oracle_instances(cfg).unwrap().into_iter().map(|i| (i.trace.id, i.budget)).collect()
    };
    let a = ids(&cfg);
    assert_eq!(a, ids(&cfg));
    assert_eq!(a.len(), 200);
    assert!(oracle_instances(&cfg).unwrap().iter().all(|i| i.trace.horizon() <= 8 && i.budget <= 3));
    cfg.oracle_check.seed = 9;
    assert_ne!(a, ids(&cfg));
}

/// DP run on a copy of the trace whose robot predictions lag one step behind,
/// the effect of an off-by-one in the cached prediction's age.
fn lagged_dp(trace: &Trace, params: &offload_core::RewardParams, budget: usize) -> offload_core::Result<offload_core::OraclePlan> {
    let mut steps: Vec<TraceStep> = trace.steps.clone();
    for t in (1..steps.len()).rev() {
        steps[t].robot_pred = steps[t - 1].robot_pred;
    }
    let shifted = Trace::new(trace.id.clone(), trace.seed, steps);
    oracle_dp(&shifted, params, budget)
}

#[test]
fn injected_fault_produces_counterexample() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let report = cmd_oracle_check_with(&cfg, lagged_dp).unwrap();
    assert!(report.matched < report.total);
    let info = report.counterexample.expect("counterexample written");
    let text = fs::read_to_string(&info).unwrap();
    assert!(text.contains("dp value") && text.contains("brute-force value"));
    let replay = load_traces(dir.path().join("out/oracle_check/counterexample.jsonl")).unwrap();
    assert_eq!(replay.len(), 1);
    assert_eq!(replay[0], report.mismatches[0].instance.trace);

    let clean = cmd_oracle_check_with(&cfg, oracle_dp).unwrap();
    assert_eq!(clean.matched, clean.total);
}

#[test]
fn smoke_training_profile_is_fast() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = write_config(
        dir.path(),
        "[generator]\nT = 20\n[trainer]\nepisodes = 500\nphi_scale_traces = 50\n[bench]\ntrain_count = 10\n",
    );
    let start = Instant::now();
    let out = offload(&["--config", &cfg_path, "train"]);
    let took = start.elapsed();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(took < Duration::from_secs(60), "smoke training took {took:?}");
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("final moving-average reward"), "{stdout}");
    let curve = fs::read_to_string(dir.path().join("out/train/curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 1 + 500 / 20);
}

#[test]
fn resume_continues_curve() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());

    let full_dir = tempfile::tempdir().unwrap();
    let full_cfg = RunConfig { out_dir: full_dir.path().join("out"), ..cfg.clone() };
    cmd_train(&full_cfg, None, false).unwrap();
    let full_curve = fs::read_to_string(full_dir.path().join("out/train/curve.csv")).unwrap();

    cfg.trainer.episodes = 60;
    cmd_train(&cfg, None, false).unwrap();
    let ckpt = dir.path().join("out/train/checkpoint.json");
    cfg.trainer.episodes = 100;
    let s = cmd_train(&cfg, Some(&ckpt), false).unwrap();
    assert_eq!(s.resumed_from, Some(60));
    assert_eq!(s.episodes, 100);

    let curve = fs::read_to_string(&s.curve).unwrap();
    let episodes: Vec<u64> = curve.lines().skip(1).map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(episodes, (1..=5).map(|k| k * 20).collect::<Vec<_>>());
    assert_eq!(curve, full_curve);
}

#[test]
fn resume_rejects_mismatched_config() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = small_config(dir.path());
    cfg.trainer.episodes = 20;
    cmd_train(&cfg, None, false).unwrap();
    cfg.trainer.actor_lr *= 2.0;
    let err = cmd_train(&cfg, Some(&dir.path().join("out/train/checkpoint.json")), false).unwrap_err();
    assert!(matches!(err, CliError::Usage(_)), "{err}");
}

#[test]
fn divergence_writes_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = write_config(
        dir.path(),
        "[generator]\nT = 20\n[trainer]\nepisodes = 200\nphi_scale_traces = 10\nactor_lr = 1e300\ncritic_lr = 1e300\n\
         [bench]\ntrain_count = 10\n",
    );
    let out = offload(&["--config", &cfg_path, "train"]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    let diag = fs::read_to_string(dir.path().join("out/train/divergence.txt")).unwrap();
    assert!(diag.contains("diverged"), "{diag}");
}

#[test]
fn bench_without_checkpoint_has_baselines_and_oracle() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    cmd_gen(&cfg, &[Split::Train, Split::Test]).unwrap();
    let out = cmd_bench(&cfg, None).unwrap();
    assert_eq!(out.report.policies, ["random", "all-robot", "all-cloud", HEURISTIC_NAME, "oracle"]);
    assert!(out.report.checks.passed());

    let best = out.sweep.iter().map(|e| e.median).fold(f64::NEG_INFINITY, f64::max);
    let chosen = out.sweep.iter().find(|e| e.calibration.cfg.q == out.selected_q).unwrap();
    assert_eq!(chosen.median, best);
    let sweep_csv = fs::read_to_string(out.dir.join("threshold_sweep.csv")).unwrap();
    assert_eq!(sweep_csv.lines().filter(|l| l.ends_with(",true")).count(), 1);
    let rewards = fs::read_to_string(out.dir.join("rewards.csv")).unwrap();
    assert_eq!(rewards.lines().count(), 1 + 5 * 8 * 5 * 2);
}

#[test]
fn bench_reports_are_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = write_config(dir.path(), SMALL);
    assert!(offload(&["--config", &cfg_path, "gen"]).status.success());
    let mut snapshots = Vec::new();
    for _ in 0..2 {
        let out = offload(&["--config", &cfg_path, "--jobs", "1", "bench"]);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        let files: Vec<Vec<u8>> = ["rewards.csv", "summary.csv", "ratios.csv", "threshold_sweep.csv"]
            .iter()
            .map(|f| fs::read(dir.path().join("out/bench").join(f)).unwrap())
            .collect();
        snapshots.push(files);
    }
    assert_eq!(snapshots[0], snapshots[1]);
}
