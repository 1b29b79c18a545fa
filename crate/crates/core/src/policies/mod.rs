//! Offloading policies: the four baselines and the clairvoyant oracle.

mod oracle;

pub use oracle::{brute_force_oracle, oracle_dp, oracle_dp_with_limit, OraclePlan, OraclePolicy, BRUTE_FORCE_MAX_T, DEFAULT_DP_LIMIT};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{OffloadError, Result};
use crate::mdp::{Action, OffloadState};
use crate::scalar::Scalar;
use crate::trace::Trace;

/// What a policy sees before choosing an action.
#[derive(Debug, Clone, Copy)]
pub struct Observation<'s, F> {
    pub state: &'s OffloadState<F>,
    pub t: usize,
    pub horizon: usize,
    pub initial_budget: usize,
    /// Confidence of the onboard model on the current input. Only policies
    /// that conceptually run the robot model every step may read it.
    pub step_robot_conf: F,
}

/// Per-episode decision maker produced by [`Policy::begin`].
pub trait Controller<F> {
    /// Raw action code; anything outside `0..=3` is a contract violation.
    fn act(&mut self, obs: &Observation<'_, F>) -> u8;
}

pub trait Policy<F: Scalar>: Send + Sync {
    fn name(&self) -> String;

    /// Stochastic policies are re-run per benchmark trial with fresh seeds.
    fn is_stochastic(&self) -> bool {
        false
    }

    fn begin<'p>(&'p self, trace: &Trace, initial_budget: usize, seed: u64) -> Result<Box<dyn Controller<F> + 'p>>;
}

pub fn random_policy<F: Scalar, R: Rng>(state: &OffloadState<F>, rng: &mut R) -> Action {
    let n = if state.budget_left > 0 { 4 } else { 3 };
    Action::ALL[rng.random_range(0..n)]
}

pub fn all_robot_policy<F: Scalar>(state: &OffloadState<F>, hold: usize) -> Action {
    let cache = &state.robot_cache;
    // Age is 0 on the step after a query; reusing it now makes it age + 1 old.
    if cache.label.is_none() || cache.age + 1 >= hold {
        Action::QueryRobot
    } else {
        Action::UsePastRobot
    }
}

/// Cloud query period `ceil(T / max(1, budget))`.
pub fn cloud_period(horizon: usize, budget: usize) -> usize {
    horizon.div_ceil(budget.max(1)).max(1)
}

pub fn all_cloud_policy<F: Scalar>(state: &OffloadState<F>, t: usize, horizon: usize, budget: usize) -> Action {
    if budget > 0 && state.budget_left > 0 && t.is_multiple_of(cloud_period(horizon, budget)) {
        Action::QueryCloud
    } else {
        Action::UsePastCloud
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThresholdPolicyConfig {
    /// Percentile in `[0, 100]`.
    pub q: f64,
    pub threshold: f64,
}

/// Linear-interpolation percentile of `sorted`, which must be nonempty and ascending.
pub fn percentile(sorted: &[f64], q: f64) -> f64 {
    let pos = (q / 100.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Threshold at the `q`-th percentile of all robot confidences in `traces`.
pub fn calibrate_threshold(traces: &[Trace], q: f64) -> Result<ThresholdPolicyConfig> {
    if !(0.0..=100.0).contains(&q) {
        return Err(OffloadError::Calibration(format!("percentile q = {q} is outside [0, 100]")));
    }
    let mut confs: Vec<f64> = traces.iter().flat_map(|tr| tr.steps.iter().map(|s| s.robot_conf)).collect();
    if confs.is_empty() {
        return Err(OffloadError::Calibration("no calibration samples".into()));
    }
    confs.sort_by(f64::total_cmp);
    Ok(ThresholdPolicyConfig { q, threshold: percentile(&confs, q) })
}

pub fn threshold_policy<F: Scalar>(state: &OffloadState<F>, step_robot_conf: F, cfg: &ThresholdPolicyConfig) -> Action {
    if step_robot_conf < F::lit(cfg.threshold) && state.budget_left > 0 {
        Action::QueryCloud
    } else {
        Action::QueryRobot
    }
}

struct FnController<G>(G);

impl<F, G> Controller<F> for FnController<G>
where
    G: FnMut(&Observation<'_, F>) -> Action,
{
    fn act(&mut self, obs: &Observation<'_, F>) -> u8 {
        (self.0)(obs).code()
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RandomPolicy;

impl<F: Scalar> Policy<F> for RandomPolicy {
    fn name(&self) -> String {
        "random".into()
    }

    fn is_stochastic(&self) -> bool {
        true
    }

    fn begin<'p>(&'p self, _: &Trace, _: usize, seed: u64) -> Result<Box<dyn Controller<F> + 'p>> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Ok(Box::new(FnController(move |obs: &Observation<'_, F>| random_policy(obs.state, &mut rng))))
    }
}

#[derive(Debug, Clone, Copy)]
pub struct AllRobotPolicy {
    pub hold: usize,
}

impl Default for AllRobotPolicy {
    fn default() -> Self {
        AllRobotPolicy { hold: 1 }
    }
}

impl<F: Scalar> Policy<F> for AllRobotPolicy {
    fn name(&self) -> String {
        "all-robot".into()
    }

    fn begin<'p>(&'p self, _: &Trace, _: usize, _: u64) -> Result<Box<dyn Controller<F> + 'p>> {
        if self.hold == 0 {
            return Err(OffloadError::Config("all-robot hold must be >= 1".into()));
        }
        let hold = self.hold;
        Ok(Box::new(FnController(move |obs: &Observation<'_, F>| all_robot_policy(obs.state, hold))))
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct AllCloudPolicy;

impl<F: Scalar> Policy<F> for AllCloudPolicy {
    fn name(&self) -> String {
        "all-cloud".into()
    }

    fn begin<'p>(&'p self, _: &Trace, _: usize, _: u64) -> Result<Box<dyn Controller<F> + 'p>> {
        Ok(Box::new(FnController(|obs: &Observation<'_, F>| {
            all_cloud_policy(obs.state, obs.t, obs.horizon, obs.initial_budget)
        })))
    }
}

#[derive(Debug, Clone)]
pub struct ThresholdPolicy {
    pub name: String,
    pub cfg: ThresholdPolicyConfig,
}

impl ThresholdPolicy {
    pub fn new(cfg: ThresholdPolicyConfig) -> Self {
        ThresholdPolicy { name: format!("robot-heuristic-q{}", cfg.q), cfg }
    }
}

impl<F: Scalar> Policy<F> for ThresholdPolicy {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn begin<'p>(&'p self, _: &Trace, _: usize, _: u64) -> Result<Box<dyn Controller<F> + 'p>> {
        let cfg = self.cfg;
        Ok(Box::new(FnController(move |obs: &Observation<'_, F>| {
            threshold_policy(obs.state, obs.step_robot_conf, &cfg)
        })))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{reset, CachedPrediction, RewardParams};
    use crate::trace::TraceStep;

    fn state(budget_left: usize) -> OffloadState<f64> {
        OffloadState {
            phi_now: 0.0,
            phi_prev: 0.0,
            robot_cache: CachedPrediction::empty(81),
            cloud_cache: CachedPrediction::empty(81),
            budget_left,
            time_left: 80,
        }
    }

    fn const_trace(confs: &[f64]) -> Trace {
        let steps = confs
            .iter()
            .map(|&c| TraceStep { true_label: 1, robot_pred: 1, robot_conf: c, cloud_pred: 1, cloud_conf: 1.0, phi: 0.1 })
            .collect();
        Trace::new("c", 0, steps)
    }

    #[test]
    fn random_policy_frequencies() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 40_000;
        let mut counts = [0usize; 4];
        for _ in 0..n {
            counts[random_policy(&state(3), &mut rng).index()] += 1;
        }
        for c in counts {
            assert!((c as f64 / n as f64 - 0.25).abs() < 0.01, "{counts:?}");
        }
        let mut counts = [0usize; 4];
        for _ in 0..n {
            counts[random_policy(&state(0), &mut rng).index()] += 1;
        }
        assert_eq!(counts[3], 0);
        for c in &counts[..3] {
            assert!((*c as f64 / n as f64 - 1.0 / 3.0).abs() < 0.01, "{counts:?}");
        }
    }

    #[test]
    fn random_policy_reproducible() {
        let seq = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..50).map(|_| random_policy(&state(2), &mut rng)).collect::<Vec<_>>()
        };
        assert_eq!(seq(3), seq(3));
    }

    #[test]
    fn all_robot_hold_logic() {
        let mut s = state(0);
        assert_eq!(all_robot_policy(&s, 4), Action::QueryRobot);
        s.robot_cache = CachedPrediction { label: Some(2), conf: 0.9, age: 2 };
        assert_eq!(all_robot_policy(&s, 4), Action::UsePastRobot);
        assert_eq!(all_robot_policy(&s, 1), Action::QueryRobot);
        s.robot_cache.age = 0;
        assert_eq!(all_robot_policy(&s, 1), Action::QueryRobot);
        assert_eq!(all_robot_policy(&s, 2), Action::UsePastRobot);
        s.robot_cache.age = 3;
        assert_eq!(all_robot_policy(&s, 4), Action::QueryRobot);
    }

    #[test]
    fn hold_one_queries_every_step() {
        let tr = const_trace(&[0.5; 12]);
        let (mut env, mut s) = reset::<f64>(&tr, 0, RewardParams::default()).unwrap();
        while !env.is_done() {
            let a = all_robot_policy(&s, 1);
            assert_eq!(a, Action::QueryRobot);
            s = env.step(a).unwrap().next;
        }
    }

    #[test]
    fn all_cloud_schedule() {
        assert_eq!(cloud_period(80, 16), 5);
        assert_eq!(cloud_period(80, 80), 1);
        assert_eq!(cloud_period(80, 0), 80);
        let queries: Vec<usize> =
            (0..80).filter(|&t| all_cloud_policy(&state(16), t, 80, 16) == Action::QueryCloud).collect();
        assert_eq!(queries, (0..80).step_by(5).collect::<Vec<_>>());
        assert!((0..80).all(|t| all_cloud_policy(&state(80), t, 80, 80) == Action::QueryCloud));
        assert!((0..80).all(|t| all_cloud_policy(&state(0), t, 80, 0) == Action::UsePastCloud));
        assert_eq!(all_cloud_policy(&state(0), 0, 80, 16), Action::UsePastCloud);
    }

    #[test]
    fn percentile_rules() {
        let tr = const_trace(&[0.7; 5]);
        for q in [0.0, 33.0, 100.0] {
            assert_eq!(calibrate_threshold(std::slice::from_ref(&tr), q).unwrap().threshold, 0.7);
        }
        let tr = const_trace(&[0.8, 0.2, 0.6, 0.4]);
        let at = |q| calibrate_threshold(std::slice::from_ref(&tr), q).unwrap().threshold;
        assert!((at(50.0) - 0.5).abs() < 1e-12);
        assert_eq!(at(0.0), 0.2);
        assert_eq!(at(100.0), 0.8);
        assert!(calibrate_threshold(&[], 50.0).is_err());
        assert!(calibrate_threshold(std::slice::from_ref(&tr), 101.0).is_err());
    }

    #[test]
    fn threshold_decisions() {
        let cfg = ThresholdPolicyConfig { q: 50.0, threshold: 0.5 };
        assert_eq!(threshold_policy(&state(2), 0.3, &cfg), Action::QueryCloud);
        assert_eq!(threshold_policy(&state(0), 0.3, &cfg), Action::QueryRobot);
        assert_eq!(threshold_policy(&state(2), 0.9, &cfg), Action::QueryRobot);
    }
}
