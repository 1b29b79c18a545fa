use std::fs;
use std::ops::Range;
use std::path::{Path, PathBuf};

use offload_core::a2c::TrainerConfig;
use offload_core::{GenConfig, RewardParams};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

/// Everything a run needs, loaded from one TOML file.
///
/// Every section is optional and falls back to the experiment defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub out_dir: PathBuf,
    pub generator: GenConfig,
    pub reward: RewardParams,
    pub trainer: TrainerConfig,
    pub bench: BenchConfig,
    pub oracle_check: OracleCheckConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchConfig {
    /// Traces written for the train split; also the calibration set.
    pub train_count: usize,
    pub test_seed_base: u64,
    pub test_count: usize,
    pub budget_fractions: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    pub threshold_percentiles: Vec<f64>,
    pub all_robot_hold: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            train_count: 200,
            test_seed_base: 1_000_000_000,
            test_count: 100,
            budget_fractions: vec![0.1, 0.2, 0.5, 0.7, 1.0],
            trials: 4,
            seed: 0,
            threshold_percentiles: vec![10.0, 25.0, 50.0, 75.0, 90.0],
            all_robot_hold: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OracleCheckConfig {
    pub instances: usize,
    pub max_horizon: usize,
    pub max_budget: usize,
    pub seed: u64,
}

impl Default for OracleCheckConfig {
    fn default() -> Self {
        OracleCheckConfig { instances: 200, max_horizon: 8, max_budget: 3, seed: 0 }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            out_dir: PathBuf::from("out"),
            generator: GenConfig::default(),
            reward: RewardParams::default(),
            trainer: TrainerConfig::default(),
            bench: BenchConfig::default(),
            oracle_check: OracleCheckConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

fn overlaps(a: &Range<u64>, b: &Range<u64>) -> bool {
    a.start < b.end && b.start < a.end
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config file {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| CliError::Usage(format!("invalid config file {}: {e}", path.display())))
    }

    /// Seeds reserved for training: the train split file, phi calibration and every training episode.
    pub fn train_seeds(&self) -> Range<u64> {
        let n = (self.bench.train_count as u64).max(self.trainer.episodes).max(self.trainer.phi_scale_traces as u64);
        let start = self.trainer.train_seed_base;
        start..start.saturating_add(n)
    }

    pub fn test_seeds(&self) -> Range<u64> {
        let start = self.bench.test_seed_base;
        start..start.saturating_add(self.bench.test_count as u64)
    }

    pub fn split_seeds(&self, split: Split) -> Range<u64> {
        match split {
            Split::Train => self.train_seeds(),
            Split::Test => self.test_seeds(),
        }
    }

    pub fn split_count(&self, split: Split) -> usize {
        match split {
            Split::Train => self.bench.train_count,
            Split::Test => self.bench.test_count,
        }
    }

    pub fn traces_dir(&self) -> PathBuf {
        self.out_dir.join("traces")
    }

    pub fn trace_path(&self, split: Split) -> PathBuf {
        self.traces_dir().join(format!("{}.jsonl", split.name()))
    }

    pub fn train_dir(&self) -> PathBuf {
        self.out_dir.join("train")
    }

    pub fn bench_dir(&self) -> PathBuf {
        self.out_dir.join("bench")
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.generator.validate()?;
        self.reward.validate()?;
        self.trainer.validate()?;
        let (train, test) = (self.train_seeds(), self.test_seeds());
        if overlaps(&train, &test) {
            return Err(CliError::Usage(format!(
                "train seed range [{}, {}) overlaps test seed range [{}, {})",
                train.start, train.end, test.start, test.end
            )));
        }
        let b = &self.bench;
        if b.test_count == 0 || b.train_count == 0 {
            return Err(CliError::Usage("bench.train_count and bench.test_count must be >= 1".into()));
        }
        if b.trials == 0 {
            return Err(CliError::Usage("bench.trials must be >= 1".into()));
        }
        if b.budget_fractions.is_empty() || b.budget_fractions.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(CliError::Usage(format!("bench.budget_fractions must be a nonempty list in [0, 1], got {:?}", b.budget_fractions)));
        }
        if b.threshold_percentiles.is_empty() || b.threshold_percentiles.iter().any(|q| !(0.0..=100.0).contains(q)) {
            return Err(CliError::Usage(format!(
                "bench.threshold_percentiles must be a nonempty list in [0, 100], got {:?}",
                b.threshold_percentiles
            )));
        }
        if b.all_robot_hold == 0 {
            return Err(CliError::Usage("bench.all_robot_hold must be >= 1".into()));
        }
        let o = &self.oracle_check;
        if o.max_horizon == 0 || o.max_horizon > offload_core::policies::BRUTE_FORCE_MAX_T {
            return Err(CliError::Usage(format!(
                "oracle_check.max_horizon must be in [1, {}], got {}",
                offload_core::policies::BRUTE_FORCE_MAX_T,
                o.max_horizon
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid_and_disjoint() {
        let cfg = RunConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.train_seeds(), 0..50_000);
        assert_eq!(cfg.test_seeds(), 1_000_000_000..1_000_000_100);
    }

    #[test]
    fn overlap_message_names_both_ranges() {
        let mut cfg = RunConfig::default();
        cfg.bench.test_seed_base = 100;
        let CliError::Usage(msg) = cfg.validate().unwrap_err() else { panic!() };
        assert!(msg.contains("[0, 50000)") && msg.contains("[100, 200)"), "{msg}");
    }

    #[test]
    fn partial_toml() {
        let cfg: RunConfig = toml::from_str(
            "out_dir = \"x\"\n[generator]\nT = 20\n[trainer]\nepisodes = 500\n[bench]\ntrials = 2\n",
        )
        .unwrap();
        assert_eq!(cfg.generator.horizon, 20);
        assert_eq!(cfg.trainer.episodes, 500);
        assert_eq!(cfg.bench.trials, 2);
        assert_eq!(cfg.bench.test_count, 100);
        assert!(toml::from_str::<RunConfig>("[bench]\ntrails = 2\n").is_err());
    }

    #[test]
    fn default_round_trips_through_toml() {
        let cfg = RunConfig::default();
        let text = toml::to_string(&cfg).unwrap();
        assert_eq!(toml::from_str::<RunConfig>(&text).unwrap(), cfg);
    }

    #[test]
    fn shipped_configs_parse() {
        let full: RunConfig = toml::from_str(include_str!("../../../configs/experiment.toml")).unwrap();
        assert_eq!(full, RunConfig::default());
        let smoke: RunConfig = toml::from_str(include_str!("../../../configs/smoke.toml")).unwrap();
        smoke.validate().unwrap();
        assert_eq!(smoke.generator.horizon, 20);
    }
}
