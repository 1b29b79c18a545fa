//! Benchmark harness: runs policies over test traces and budget fractions,
//! aggregates episode rewards and writes CSV reports.

use std::cmp::Ordering;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::error::{OffloadError, Result};
use crate::mdp::{reset, Action, RewardParams};
use crate::policies::{Observation, OraclePolicy, Policy};
use crate::scalar::Scalar;
use crate::trace::Trace;

pub const ORACLE_NAME: &str = "oracle";

/// Outcome of one policy on one trace at one budget.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeResult {
    pub trace_id: String,
    pub budget_fraction: f64,
    pub budget: usize,
    pub policy: String,
    pub trial: usize,
    pub total_reward: f64,
    pub loss_sum: usize,
    pub cost_sum: f64,
    /// Plain sum of per-step rewards, kept to audit the decomposition.
    pub step_reward_sum: f64,
    pub action_counts: [usize; 4],
    /// Executed (post-remap) actions.
    pub action_log: Vec<Action>,
}

impl EpisodeResult {
    pub fn cloud_queries(&self) -> usize {
        self.action_counts[Action::QueryCloud.index()]
    }

    /// `|total - (-alpha * loss_sum - beta * cost_sum)|`, plus the same against the per-step sum.
    pub fn decomposition_error(&self, params: &RewardParams<f64>) -> f64 {
        let formula = -params.alpha * self.loss_sum as f64 - params.beta * self.cost_sum;
        (self.total_reward - formula).abs().max((self.step_reward_sum - formula).abs())
    }
}

/// `round(fraction * T)`.
pub fn budget_for(fraction: f64, horizon: usize) -> usize {
    (fraction * horizon as f64).round() as usize
}

/// Resets, steps `policy` to termination, and records the decomposition.
pub fn run_episode<F: Scalar>(
    policy: &dyn Policy<F>,
    trace: &Trace,
    budget_fraction: f64,
    params: &RewardParams<F>,
    seed: u64,
) -> Result<EpisodeResult> {
    let horizon = trace.horizon();
    if !(0.0..=1.0).contains(&budget_fraction) {
        return Err(OffloadError::Config(format!("budget fraction {budget_fraction} is outside [0, 1]")));
    }
    let budget = budget_for(budget_fraction, horizon);
    let (mut env, mut state) = reset(trace, budget, *params)?;
    let mut ctl = policy.begin(trace, budget, seed)?;
    let mut log = Vec::with_capacity(horizon);
    let mut step_sum = F::zero();
    while !env.is_done() {
        let t = env.t();
        let obs = Observation {
            state: &state,
            t,
            horizon,
            initial_budget: budget,
            step_robot_conf: F::lit(trace.steps[t].robot_conf),
        };
        let code = ctl.act(&obs);
        let a = Action::try_from(code).map_err(|code| OffloadError::PolicyContract { policy: policy.name(), code })?;
        let out = env.step(a)?;
        step_sum += out.reward;
        log.push(out.info.executed);
        state = out.next;
    }
    let tally = *env.tally();
    Ok(EpisodeResult {
        trace_id: trace.id.clone(),
        budget_fraction,
        budget,
        policy: policy.name(),
        trial: 0,
        total_reward: tally.total_reward(params).as_f64(),
        loss_sum: tally.loss_sum,
        cost_sum: tally.cost_sum(params).as_f64(),
        step_reward_sum: step_sum.as_f64(),
        action_counts: tally.counts,
        action_log: log,
    })
}

/// A policy under evaluation and whether it counts as a baseline for ratios.
pub struct Contender<'a, F> {
    pub policy: &'a dyn Policy<F>,
    pub baseline: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkSettings {
    pub budget_fractions: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
}

/// Mean with a normal-approximation 95% interval.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct MeanCi {
    pub mean: f64,
    /// Standard error, `sd / sqrt(n)` with the sample standard deviation.
    pub se: f64,
}

impl MeanCi {
    pub fn half_width(&self) -> f64 {
        1.96 * self.se
    }

    pub fn low(&self) -> f64 {
        self.mean - self.half_width()
    }

    pub fn high(&self) -> f64 {
        self.mean + self.half_width()
    }
}

/// Values are sorted before summing so the result does not depend on input order.
pub fn mean_ci(values: &[f64]) -> MeanCi {
    if values.is_empty() {
        return MeanCi { mean: f64::NAN, se: f64::NAN };
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let mut dev: Vec<f64> = v.iter().map(|x| (x - mean) * (x - mean)).collect();
    dev.sort_by(f64::total_cmp);
    let se = if v.len() > 1 { (dev.iter().sum::<f64>() / (n - 1.0)).sqrt() / n.sqrt() } else { 0.0 };
    MeanCi { mean, se }
}

pub fn median(values: &[f64]) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        (v[m - 1] + v[m]) / 2.0
    }
}

/// Signed-median ratio: `reference / candidate` when both are negative, so a
/// value above 1 means the candidate earned the higher (closer to zero)
/// reward. Both zero gives 1; any other sign combination is undefined (NaN).
pub fn reward_ratio(reference: f64, candidate: f64) -> f64 {
    if reference < 0.0 && candidate < 0.0 {
        reference / candidate
    } else if reference == 0.0 && candidate == 0.0 {
        1.0
    } else {
        f64::NAN
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub policy: String,
    /// `None` aggregates over every budget fraction.
    pub fraction: Option<f64>,
    pub n: usize,
    pub median: f64,
    pub reward: MeanCi,
    pub loss: MeanCi,
    pub cost: MeanCi,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RatioRow {
    pub policy: String,
    pub fraction: Option<f64>,
    pub median: f64,
    pub oracle_median: f64,
    pub best_baseline: String,
    pub best_baseline_median: f64,
    /// `reward_ratio(oracle median, policy median)`.
    pub vs_oracle: f64,
    /// `reward_ratio(best baseline median, policy median)`.
    pub vs_best_baseline: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct InvariantChecks {
    pub episodes: usize,
    pub budget_violations: usize,
    pub max_decomposition_error: f64,
    pub dominance_violations: usize,
    pub action_count_mismatches: usize,
}

impl InvariantChecks {
    pub fn passed(&self) -> bool {
        self.budget_violations == 0
            && self.dominance_violations == 0
            && self.action_count_mismatches == 0
            && self.max_decomposition_error < 1e-9
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchmarkReport {
    /// Policy names in presentation order.
    pub policies: Vec<String>,
    pub baselines: Vec<String>,
    pub fractions: Vec<f64>,
    pub trials: usize,
    /// Sorted by (policy order, trace, fraction, trial).
    pub episodes: Vec<EpisodeResult>,
    pub summary: Vec<SummaryRow>,
    pub ratios: Vec<RatioRow>,
    pub checks: InvariantChecks,
}

impl BenchmarkReport {
    pub fn empty() -> Self {
        BenchmarkReport::from_episodes(Vec::new(), Vec::new(), Vec::new(), Vec::new(), 0, &RewardParams::default())
    }

    /// Builds every aggregate from raw episodes; the result does not depend on `episodes` order.
    pub fn from_episodes(
        mut episodes: Vec<EpisodeResult>,
        policies: Vec<String>,
        baselines: Vec<String>,
        fractions: Vec<f64>,
        trials: usize,
        params: &RewardParams<f64>,
    ) -> Self {
        let rank = |name: &str| policies.iter().position(|p| p == name).unwrap_or(usize::MAX);
        episodes.sort_by(|a, b| {
            rank(&a.policy)
                .cmp(&rank(&b.policy))
                .then_with(|| a.policy.cmp(&b.policy))
                .then_with(|| a.trace_id.cmp(&b.trace_id))
                .then_with(|| a.budget_fraction.total_cmp(&b.budget_fraction))
                .then_with(|| a.trial.cmp(&b.trial))
        });

        let select = |policy: &str, fraction: Option<f64>| -> Vec<&EpisodeResult> {
            episodes
                .iter()
                .filter(|e| e.policy == policy && fraction.is_none_or(|f| e.budget_fraction == f))
                .collect()
        };
        let scopes: Vec<Option<f64>> = std::iter::once(None).chain(fractions.iter().copied().map(Some)).collect();

        let mut summary = Vec::new();
        for scope in &scopes {
            for p in &policies {
                let eps = select(p, *scope);
                let rewards: Vec<f64> = eps.iter().map(|e| e.total_reward).collect();
                summary.push(SummaryRow {
                    policy: p.clone(),
                    fraction: *scope,
                    n: eps.len(),
                    median: median(&rewards),
                    reward: mean_ci(&rewards),
                    loss: mean_ci(&eps.iter().map(|e| e.loss_sum as f64).collect::<Vec<_>>()),
                    cost: mean_ci(&eps.iter().map(|e| e.cost_sum).collect::<Vec<_>>()),
                });
            }
        }

        let mut ratios = Vec::new();
        for scope in &scopes {
            let med = |p: &str| {
                summary.iter().find(|r| r.policy == p && r.fraction == *scope).map_or(f64::NAN, |r| r.median)
            };
            let oracle_median = med(ORACLE_NAME);
            let best = baselines
                .iter()
                .map(|b| (b.clone(), med(b)))
                .filter(|(_, m)| !m.is_nan())
                .max_by(|a, b| a.1.total_cmp(&b.1).then_with(|| b.0.cmp(&a.0)));
            let (best_name, best_median) = best.unwrap_or_else(|| (String::new(), f64::NAN));
            for p in &policies {
                let m = med(p);
                ratios.push(RatioRow {
                    policy: p.clone(),
                    fraction: *scope,
                    median: m,
                    oracle_median,
                    best_baseline: best_name.clone(),
                    best_baseline_median: best_median,
                    vs_oracle: reward_ratio(oracle_median, m),
                    vs_best_baseline: reward_ratio(best_median, m),
                });
            }
        }

        let checks = check_invariants(&episodes, params);
        BenchmarkReport { policies, baselines, fractions, trials, episodes, summary, ratios, checks }
    }

    pub fn summary_for(&self, policy: &str, fraction: Option<f64>) -> Option<&SummaryRow> {
        self.summary.iter().find(|r| r.policy == policy && r.fraction == fraction)
    }

    pub fn ratio_for(&self, policy: &str, fraction: Option<f64>) -> Option<&RatioRow> {
        self.ratios.iter().find(|r| r.policy == policy && r.fraction == fraction)
    }
}

fn check_invariants(episodes: &[EpisodeResult], params: &RewardParams<f64>) -> InvariantChecks {
    let mut c = InvariantChecks { episodes: episodes.len(), ..Default::default() };
    for e in episodes {
        if e.cloud_queries() > e.budget {
            c.budget_violations += 1;
        }
        if e.action_counts.iter().sum::<usize>() != e.action_log.len() {
            c.action_count_mismatches += 1;
        }
        c.max_decomposition_error = c.max_decomposition_error.max(e.decomposition_error(params));
    }
    // Oracle dominance per (trace, fraction, trial) cell.
    let oracle: std::collections::HashMap<(&str, u64, usize), f64> = episodes
        .iter()
        .filter(|e| e.policy == ORACLE_NAME)
        .map(|e| ((e.trace_id.as_str(), e.budget_fraction.to_bits(), e.trial), e.total_reward))
        .collect();
    if !oracle.is_empty() {
        for e in episodes.iter().filter(|e| e.policy != ORACLE_NAME) {
            match oracle.get(&(e.trace_id.as_str(), e.budget_fraction.to_bits(), e.trial)) {
                Some(&best) if e.total_reward <= best => {}
                _ => c.dominance_violations += 1,
            }
        }
    }
    c
}

fn cell_seed(seed: u64, policy: usize, trace: usize, fraction: usize, trial: usize) -> u64 {
    let mut h = seed ^ 0x6A09_E667_F3BC_C908;
    for v in [policy, trace, fraction, trial] {
        h = (h ^ v as u64).wrapping_mul(0x100_0000_01B3).rotate_left(29) ^ 0x9E37_79B9_7F4A_7C15;
    }
    h
}

/// Evaluates every (policy, trace, fraction, trial) cell and aggregates.
///
/// The DP oracle is always added under the name `oracle`. Deterministic
/// policies run once per (trace, fraction) and the result is replicated
/// across trials so every policy has the same number of samples.
pub fn benchmark<F: Scalar>(
    contenders: &[Contender<'_, F>],
    traces: &[Trace],
    settings: &BenchmarkSettings,
    params: &RewardParams<F>,
) -> Result<BenchmarkReport> {
    if contenders.is_empty() || traces.is_empty() {
        return Err(OffloadError::Config("benchmark needs at least one policy and one trace".into()));
    }
    if settings.trials == 0 || settings.budget_fractions.is_empty() {
        return Err(OffloadError::Config("benchmark needs trials >= 1 and at least one budget fraction".into()));
    }
    let oracle = OraclePolicy::new(*params);
    let mut all: Vec<(&dyn Policy<F>, bool)> = contenders.iter().map(|c| (c.policy, c.baseline)).collect();
    all.push((&oracle, false));

    let mut names: Vec<String> = Vec::new();
    for (p, _) in &all {
        let name = p.name();
        if names.contains(&name) {
            return Err(OffloadError::Config(format!("duplicate policy name `{name}`")));
        }
        names.push(name);
    }

    let cells: Vec<(usize, usize, usize)> = (0..all.len())
        .flat_map(|p| (0..traces.len()).flat_map(move |t| (0..settings.budget_fractions.len()).map(move |f| (p, t, f))))
        .collect();
    let results: Vec<Vec<EpisodeResult>> = cells
        .par_iter()
        .map(|&(p, t, f)| {
            let (policy, _) = all[p];
            let fraction = settings.budget_fractions[f];
            if policy.is_stochastic() {
                (0..settings.trials)
                    .map(|k| {
                        let mut r = run_episode(policy, &traces[t], fraction, params, cell_seed(settings.seed, p, t, f, k))?;
                        r.trial = k;
                        Ok(r)
                    })
                    .collect()
            } else {
                let r = run_episode(policy, &traces[t], fraction, params, cell_seed(settings.seed, p, t, f, 0))?;
                Ok((0..settings.trials).map(|k| EpisodeResult { trial: k, ..r.clone() }).collect())
            }
        })
        .collect::<Result<_>>()?;

    let baselines = all.iter().zip(&names).filter(|((_, b), _)| *b).map(|(_, n)| n.clone()).collect();
    let params64 = RewardParams {
        alpha: params.alpha.as_f64(),
        beta: params.beta.as_f64(),
        cost: params.cost.map(|c| c.as_f64()),
    };
    Ok(BenchmarkReport::from_episodes(
        results.into_iter().flatten().collect(),
        names,
        baselines,
        settings.budget_fractions.clone(),
        settings.trials,
        &params64,
    ))
}

/// Shortest representation that parses back to the same `f64`.
pub fn fmt_num(v: f64) -> String {
    format!("{v}")
}

fn fmt_fraction(f: Option<f64>) -> String {
    f.map_or_else(|| "all".to_string(), fmt_num)
}

pub const REWARDS_HEADER: &str = "policy,trace,fraction,trial,total_reward,loss_sum,cost_sum";
pub const SUMMARY_HEADER: &str =
    "policy,fraction,n,median,mean,se,ci95_low,ci95_high,mean_loss,loss_ci95,mean_cost,cost_ci95";
pub const RATIOS_HEADER: &str =
    "policy,fraction,median,oracle_median,vs_oracle,best_baseline,best_baseline_median,vs_best_baseline";

pub fn rewards_csv(report: &BenchmarkReport) -> String {
    let mut s = format!("{REWARDS_HEADER}\n");
    for e in &report.episodes {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            e.policy,
            e.trace_id,
            fmt_num(e.budget_fraction),
            e.trial,
            fmt_num(e.total_reward),
            e.loss_sum,
            fmt_num(e.cost_sum)
        );
    }
    s
}

pub fn summary_csv(report: &BenchmarkReport) -> String {
    let mut s = format!("{SUMMARY_HEADER}\n");
    for r in &report.summary {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            r.policy,
            fmt_fraction(r.fraction),
            r.n,
            fmt_num(r.median),
            fmt_num(r.reward.mean),
            fmt_num(r.reward.se),
            fmt_num(r.reward.low()),
            fmt_num(r.reward.high()),
            fmt_num(r.loss.mean),
            fmt_num(r.loss.half_width()),
            fmt_num(r.cost.mean),
            fmt_num(r.cost.half_width()),
        );
    }
    s
}

pub fn ratios_csv(report: &BenchmarkReport) -> String {
    let mut s = format!("{RATIOS_HEADER}\n");
    for r in &report.ratios {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            r.policy,
            fmt_fraction(r.fraction),
            fmt_num(r.median),
            fmt_num(r.oracle_median),
            fmt_num(r.vs_oracle),
            r.best_baseline,
            fmt_num(r.best_baseline_median),
            fmt_num(r.vs_best_baseline),
        );
    }
    s
}

fn report_readme(report: &BenchmarkReport) -> String {
    let c = &report.checks;
    let fractions: Vec<String> = report.fractions.iter().map(|f| fmt_num(*f)).collect();
    format!(
        "# Benchmark report\n\n\
         Policies: {policies}\n\
         Baselines: {baselines}\n\
         Budget fractions: {fractions}\n\
         Trials per cell: {trials}\n\n\
         All files are UTF-8, comma-separated, with a header row. Numbers use `.` as the\n\
         decimal point and the shortest decimal form that parses back to the same 64-bit value.\n\
         Rewards are penalties (always <= 0); closer to zero is better.\n\n\
         ## rewards.csv\n\n\
         One row per episode.\n\n\
         - `policy`, `trace`: policy name and trace id\n\
         - `fraction`: cloud query budget as a fraction of the horizon\n\
         - `trial`: trial index (deterministic policies are replicated across trials)\n\
         - `total_reward`: -alpha * loss_sum - beta * cost_sum\n\
         - `loss_sum`: number of misclassified steps\n\
         - `cost_sum`: sum of action costs of the executed actions\n\n\
         ## summary.csv\n\n\
         One row per policy and fraction; `fraction = all` pools every fraction.\n\n\
         - `n`: number of episodes\n\
         - `median`, `mean`: of total_reward\n\
         - `se`: standard error of the mean (sample sd / sqrt(n))\n\
         - `ci95_low`, `ci95_high`: mean -/+ 1.96 se\n\
         - `mean_loss`, `loss_ci95`: mean loss_sum and its 1.96 se half-width\n\
         - `mean_cost`, `cost_ci95`: mean cost_sum and its 1.96 se half-width\n\n\
         ## ratios.csv\n\n\
         Ratios of signed medians: `reference / policy` when both are negative, so values\n\
         above 1 mean the policy beat the reference. 1 when both are zero, NaN otherwise.\n\n\
         - `median`: the policy's median reward\n\
         - `oracle_median`, `vs_oracle`: clairvoyant DP optimum and its ratio\n\
         - `best_baseline`, `best_baseline_median`, `vs_best_baseline`: highest-median baseline and its ratio\n\n\
         ## Invariant checks\n\n\
         - episodes: {episodes}\n\
         - budget violations: {bv}\n\
         - oracle dominance violations: {dv}\n\
         - action count mismatches: {am}\n\
         - max reward decomposition error: {de:e}\n\
         - status: {status}\n",
        policies = report.policies.join(", "),
        baselines = report.baselines.join(", "),
        fractions = fractions.join(", "),
        trials = report.trials,
        episodes = c.episodes,
        bv = c.budget_violations,
        dv = c.dominance_violations,
        am = c.action_count_mismatches,
        de = c.max_decomposition_error,
        status = if c.passed() { "PASS" } else { "FAIL" },
    )
}

/// Writes `rewards.csv`, `summary.csv`, `ratios.csv` and a README describing them.
pub fn export_report(report: &BenchmarkReport, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| OffloadError::io(dir, e))?;
    for (name, body) in [
        ("rewards.csv", rewards_csv(report)),
        ("summary.csv", summary_csv(report)),
        ("ratios.csv", ratios_csv(report)),
        ("README.md", report_readme(report)),
    ] {
        let path = dir.join(name);
        fs::write(&path, body).map_err(|e| OffloadError::io(&path, e))?;
    }
    Ok(())
}

/// Picks the candidate with the highest overall median (ties: earliest).
pub fn best_by_median<'a>(report: &BenchmarkReport, candidates: &'a [String]) -> Option<&'a String> {
    candidates
        .iter()
        .filter_map(|c| report.summary_for(c, None).map(|r| (c, r.median)))
        .filter(|(_, m)| !m.is_nan())
        .fold(None, |best: Option<(&String, f64)>, (c, m)| match best {
            Some((_, bm)) if m.partial_cmp(&bm) != Some(Ordering::Greater) => best,
            _ => Some((c, m)),
        })
        .map(|(c, _)| c)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::policies::{AllCloudPolicy, AllRobotPolicy, Controller, RandomPolicy};
    use crate::tracegen::{generate_dataset, GenConfig};

    struct Rogue;

    struct RogueCtl;

    impl Controller<f64> for RogueCtl {
        fn act(&mut self, _: &Observation<'_, f64>) -> u8 {
            7
        }
    }

    impl Policy<f64> for Rogue {
        fn name(&self) -> String {
            "rogue".into()
        }

        fn begin<'p>(&'p self, _: &Trace, _: usize, _: u64) -> Result<Box<dyn Controller<f64> + 'p>> {
            Ok(Box::new(RogueCtl))
        }
    }

    fn traces(n: usize, horizon: usize) -> Vec<Trace> {
        generate_dataset(&GenConfig { horizon, ..GenConfig::default() }, n, 100).unwrap()
    }

    #[test]
    fn all_cloud_full_budget_is_lossless() {
        let p = RewardParams::<f64>::default();
        for tr in traces(5, 80) {
            let r = run_episode(&AllCloudPolicy, &tr, 1.0, &p, 0).unwrap();
            assert_eq!(r.loss_sum, 0);
            assert_eq!(r.cloud_queries(), 80);
            assert_eq!(r.cost_sum, 8.0 * 80.0);
        }
    }

    #[test]
    fn all_robot_cost() {
        let p = RewardParams::<f64>::default();
        let tr = &traces(1, 80)[0];
        let r = run_episode(&AllRobotPolicy::default(), tr, 0.5, &p, 0).unwrap();
        assert_eq!(r.action_counts[Action::QueryRobot.index()], 80);
        assert_eq!(r.cost_sum, 32.0);
        assert!(r.decomposition_error(&p) < 1e-9);
    }

    #[test]
    fn invalid_action_code_is_contract_error() {
        let tr = &traces(1, 10)[0];
        let err = run_episode(&Rogue, tr, 0.5, &RewardParams::default(), 0).unwrap_err();
        assert!(matches!(err, OffloadError::PolicyContract { code: 7, .. }));
    }

    #[test]
    fn statistics() {
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        let m = mean_ci(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m.mean, 2.5);
        let sd = (5.0f64 / 3.0).sqrt();
        assert!((m.se - sd / 2.0).abs() < 1e-15);
        assert!((m.high() - (2.5 + 1.96 * sd / 2.0)).abs() < 1e-15);
        assert_eq!(reward_ratio(-260.0, -100.0), 2.6);
        assert_eq!(reward_ratio(-70.0, -100.0), 0.7);
        assert_eq!(reward_ratio(0.0, 0.0), 1.0);
        assert!(reward_ratio(-1.0, 0.0).is_nan());
    }

    #[test]
    fn benchmark_counts_and_dominance() {
        let ts = traces(4, 20);
        let p = RewardParams::<f64>::default();
        let (r, robot, cloud) = (RandomPolicy, AllRobotPolicy::default(), AllCloudPolicy);
        let contenders = [
            Contender { policy: &r as &dyn Policy<f64>, baseline: true },
            Contender { policy: &robot, baseline: true },
            Contender { policy: &cloud, baseline: true },
        ];
        let settings = BenchmarkSettings { budget_fractions: vec![0.1, 0.5, 1.0], trials: 3, seed: 1 };
        let report = benchmark(&contenders, &ts, &settings, &p).unwrap();
        assert_eq!(report.episodes.len(), 4 * 4 * 3 * 3);
        assert_eq!(report.policies.last().unwrap(), ORACLE_NAME);
        assert!(report.checks.passed(), "{:?}", report.checks);
        let oracle = report.summary_for(ORACLE_NAME, None).unwrap().median;
        for name in &report.policies {
            assert!(report.summary_for(name, None).unwrap().median <= oracle);
        }
        // Random is re-seeded per trial; deterministic policies replicate.
        let random_trials: Vec<f64> =
            report.episodes.iter().filter(|e| e.policy == "random" && e.trace_id == ts[0].id && e.budget_fraction == 0.5).map(|e| e.total_reward).collect();
        assert_eq!(random_trials.len(), 3);
        let again = benchmark(&contenders, &ts, &settings, &p).unwrap();
        assert_eq!(rewards_csv(&report), rewards_csv(&again));
        assert_eq!(summary_csv(&report), summary_csv(&again));
    }

    #[test]
    fn aggregates_ignore_episode_order() {
        let ts = traces(3, 20);
        let p = RewardParams::<f64>::default();
        let robot = AllRobotPolicy::default();
        let contenders = [Contender { policy: &robot as &dyn Policy<f64>, baseline: true }];
        let settings = BenchmarkSettings { budget_fractions: vec![0.2, 0.7], trials: 2, seed: 3 };
        let report = benchmark(&contenders, &ts, &settings, &p).unwrap();
        let mut shuffled = report.episodes.clone();
        shuffled.reverse();
        shuffled.swap(0, 3);
        let rebuilt = BenchmarkReport::from_episodes(
            shuffled,
            report.policies.clone(),
            report.baselines.clone(),
            report.fractions.clone(),
            2,
            &p,
        );
        assert_eq!(rebuilt, report);
    }

    #[test]
    fn exported_files() {
        let ts = traces(2, 12);
        let p = RewardParams::<f64>::default();
        let robot = AllRobotPolicy::default();
        let contenders = [Contender { policy: &robot as &dyn Policy<f64>, baseline: true }];
        let settings = BenchmarkSettings { budget_fractions: vec![0.1, 1.0], trials: 4, seed: 0 };
        let report = benchmark(&contenders, &ts, &settings, &p).unwrap();
        let dir = tempfile::tempdir().unwrap();
        export_report(&report, dir.path()).unwrap();

        let rewards = fs::read_to_string(dir.path().join("rewards.csv")).unwrap();
        assert_eq!(rewards.lines().count(), 1 + 2 * 2 * 2 * 4);

        let summary = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
        let mut lines = summary.lines();
        assert_eq!(lines.next(), Some(SUMMARY_HEADER));
        for (line, row) in lines.zip(&report.summary) {
            let cols: Vec<&str> = line.split(',').collect();
            assert_eq!(cols[0], row.policy);
            let num = |i: usize| cols[i].parse::<f64>().unwrap();
            assert_eq!(num(2) as usize, row.n);
            for (i, want) in [(3, row.median), (4, row.reward.mean), (5, row.reward.se), (10, row.cost.mean)] {
                assert!((num(i) - want).abs() <= 1e-9, "column {i}: {} vs {want}", cols[i]);
            }
        }
        assert!(dir.path().join("README.md").exists());
        assert!(dir.path().join("ratios.csv").exists());
    }

    #[test]
    fn empty_report_writes_headers_only() {
        let dir = tempfile::tempdir().unwrap();
        export_report(&BenchmarkReport::empty(), dir.path()).unwrap();
        for (name, header) in [("rewards.csv", REWARDS_HEADER), ("summary.csv", SUMMARY_HEADER), ("ratios.csv", RATIOS_HEADER)] {
            assert_eq!(fs::read_to_string(dir.path().join(name)).unwrap(), format!("{header}\n"));
        }
    }
}
