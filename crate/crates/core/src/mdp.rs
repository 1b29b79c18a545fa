//! The offloading MDP: state, actions, trace-driven dynamics and reward.
//!
//! Every timestep the robot picks one of four actions: reuse the cached
//! robot prediction, reuse the cached cloud prediction, run the onboard
//! model, or query the cloud model. Cloud queries draw on a per-episode
//! budget; once it is exhausted a cloud query executes as a robot query.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{OffloadError, Result};
use crate::scalar::Scalar;
use crate::trace::{Label, Trace};

/// Number of entries produced by [`encode_state`].
pub const FEATURE_DIM: usize = 9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[repr(u8)]
pub enum Action {
    UsePastRobot = 0,
    UsePastCloud = 1,
    QueryRobot = 2,
    QueryCloud = 3,
}

impl Action {
    pub const ALL: [Action; 4] = [Action::UsePastRobot, Action::UsePastCloud, Action::QueryRobot, Action::QueryCloud];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Action> {
        Action::ALL.get(i).copied()
    }
}

impl TryFrom<u8> for Action {
    type Error = u8;

    fn try_from(code: u8) -> std::result::Result<Self, u8> {
        Action::from_index(code as usize).ok_or(code)
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Action::UsePastRobot => "use-past-robot",
            Action::UsePastCloud => "use-past-cloud",
            Action::QueryRobot => "query-robot",
            Action::QueryCloud => "query-cloud",
        };
        f.write_str(s)
    }
}

/// A stored prediction and its staleness in timesteps.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CachedPrediction<F> {
    pub label: Option<Label>,
    pub conf: F,
    pub age: usize,
}

impl<F: Scalar> CachedPrediction<F> {
    /// Never-filled cache. `age_sentinel` is `T + 1`.
    pub fn empty(age_sentinel: usize) -> Self {
        CachedPrediction { label: None, conf: F::zero(), age: age_sentinel }
    }

    pub fn fresh(label: Label, conf: F) -> Self {
        CachedPrediction { label: Some(label), conf, age: 0 }
    }

    fn aged(self) -> Self {
        CachedPrediction { age: self.age + 1, ..self }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OffloadState<F> {
    pub phi_now: F,
    pub phi_prev: F,
    pub robot_cache: CachedPrediction<F>,
    pub cloud_cache: CachedPrediction<F>,
    pub budget_left: usize,
    pub time_left: usize,
}

/// Reward weights and per-action costs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardParams<F> {
    pub alpha: F,
    pub beta: F,
    /// Indexed by action code.
    pub cost: [F; 4],
}

impl<F: Scalar> Default for RewardParams<F> {
    /// Face-recognition setting: robot query 0.4, cloud query 8.0, alpha 1, beta 7.
    fn default() -> Self {
        RewardParams {
            alpha: F::one(),
            beta: F::lit(7.0),
            cost: [F::zero(), F::zero(), F::lit(0.4), F::lit(8.0)],
        }
    }
}

impl<F: Scalar> RewardParams<F> {
    pub fn validate(&self) -> Result<()> {
        let ok = |v: F| v.is_finite() && v >= F::zero();
        if !ok(self.alpha) || !ok(self.beta) {
            return Err(OffloadError::Config(format!("alpha ({}) and beta ({}) must be finite and >= 0", self.alpha, self.beta)));
        }
        if let Some(c) = self.cost.iter().find(|c| !ok(**c)) {
            return Err(OffloadError::Config(format!("action cost {c} must be finite and >= 0")));
        }
        Ok(())
    }

    pub fn cost_of(&self, a: Action) -> F {
        self.cost[a.index()]
    }

    /// Most negative reward a single step can yield.
    pub fn worst_step_reward(&self) -> F {
        let max_cost = self.cost.iter().copied().fold(F::zero(), F::max);
        -(self.alpha + self.beta * max_cost)
    }
}

/// Zero-one loss; a missing prediction always counts as wrong.
pub fn loss01(pred: Option<Label>, truth: Label) -> u32 {
    match pred {
        Some(p) if p == truth => 0,
        _ => 1,
    }
}

/// `-alpha * loss - beta * cost(a)`.
pub fn reward<F: Scalar>(params: &RewardParams<F>, loss: u32, a: Action) -> F {
    -(params.alpha * F::from_u32(loss).unwrap()) - params.beta * params.cost_of(a)
}

/// Order-independent episode accounting: loss count and executed-action counts.
///
/// The episode reward is a function of these counts alone, so two action
/// sequences with the same tally have bit-identical totals regardless of the
/// order in which their per-step rewards were accumulated.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash)]
pub struct EpisodeTally {
    pub loss_sum: usize,
    pub counts: [usize; 4],
}

impl EpisodeTally {
    pub fn record(&mut self, executed: Action, loss: u32) {
        self.loss_sum += loss as usize;
        self.counts[executed.index()] += 1;
    }

    pub fn steps(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn cost_sum<F: Scalar>(&self, params: &RewardParams<F>) -> F {
        Action::ALL
            .iter()
            .fold(F::zero(), |acc, &a| acc + F::from_count(self.counts[a.index()]) * params.cost_of(a))
    }

    /// `-alpha * loss_sum - beta * cost_sum`.
    pub fn total_reward<F: Scalar>(&self, params: &RewardParams<F>) -> F {
        -(params.alpha * F::from_count(self.loss_sum)) - params.beta * self.cost_sum(params)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    /// Action after budget remapping.
    pub executed: Action,
    pub loss: u32,
    pub pred_label: Option<Label>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome<F> {
    pub next: OffloadState<F>,
    pub reward: F,
    pub done: bool,
    pub info: StepInfo,
}

/// One episode over a borrowed trace.
#[derive(Debug, Clone)]
pub struct EpisodeEnv<'a, F> {
    trace: &'a Trace,
    t: usize,
    state: OffloadState<F>,
    params: RewardParams<F>,
    initial_budget: usize,
    tally: EpisodeTally,
}

/// Starts an episode: empty caches, full budget, `time_left = T`.
pub fn reset<F: Scalar>(
    trace: &Trace,
    initial_budget: usize,
    params: RewardParams<F>,
) -> Result<(EpisodeEnv<'_, F>, OffloadState<F>)> {
    let horizon = trace.horizon();
    let Some(first) = trace.steps.first() else {
        return Err(OffloadError::InvalidTrace(format!("trace `{}` has no steps", trace.id)));
    };
    let state = OffloadState {
        phi_now: F::lit(first.phi),
        phi_prev: F::zero(),
        robot_cache: CachedPrediction::empty(horizon + 1),
        cloud_cache: CachedPrediction::empty(horizon + 1),
        budget_left: initial_budget,
        time_left: horizon,
    };
    let env = EpisodeEnv { trace, t: 0, state, params, initial_budget, tally: EpisodeTally::default() };
    Ok((env, state))
}

impl<'a, F: Scalar> EpisodeEnv<'a, F> {
    pub fn trace(&self) -> &'a Trace {
        self.trace
    }

    pub fn t(&self) -> usize {
        self.t
    }

    pub fn horizon(&self) -> usize {
        self.trace.horizon()
    }

    pub fn state(&self) -> &OffloadState<F> {
        &self.state
    }

    pub fn params(&self) -> &RewardParams<F> {
        &self.params
    }

    pub fn initial_budget(&self) -> usize {
        self.initial_budget
    }

    pub fn tally(&self) -> &EpisodeTally {
        &self.tally
    }

    pub fn is_done(&self) -> bool {
        self.t >= self.horizon()
    }

    /// Action actually carried out if `a` is requested now.
    pub fn executed_action(&self, a: Action) -> Action {
        if a == Action::QueryCloud && self.state.budget_left == 0 {
            Action::QueryRobot
        } else {
            a
        }
    }

    /// Prediction that action `a` would select at the current step. Does not remap.
    pub fn resolve_prediction(&self, a: Action) -> Result<(Option<Label>, F)> {
        if self.is_done() {
            return Err(OffloadError::EpisodeOver { t: self.t, horizon: self.horizon() });
        }
        let step = &self.trace.steps[self.t];
        Ok(match a {
            Action::UsePastRobot => (self.state.robot_cache.label, self.state.robot_cache.conf),
            Action::UsePastCloud => (self.state.cloud_cache.label, self.state.cloud_cache.conf),
            Action::QueryRobot => (Some(step.robot_pred), F::lit(step.robot_conf)),
            Action::QueryCloud => (Some(step.cloud_pred), F::lit(step.cloud_conf)),
        })
    }

    pub fn step(&mut self, a: Action) -> Result<StepOutcome<F>> {
        let executed = self.executed_action(a);
        let (pred_label, _) = self.resolve_prediction(executed)?;
        let step = self.trace.steps[self.t];
        let loss = loss01(pred_label, step.true_label);
        let r = reward(&self.params, loss, executed);

        let s = &mut self.state;
        match executed {
            Action::UsePastRobot | Action::UsePastCloud => {
                s.robot_cache = s.robot_cache.aged();
                s.cloud_cache = s.cloud_cache.aged();
            }
            Action::QueryRobot => {
                s.robot_cache = CachedPrediction::fresh(step.robot_pred, F::lit(step.robot_conf));
                s.cloud_cache = s.cloud_cache.aged();
            }
            Action::QueryCloud => {
                s.cloud_cache = CachedPrediction::fresh(step.cloud_pred, F::lit(step.cloud_conf));
                s.robot_cache = s.robot_cache.aged();
                s.budget_left -= 1;
            }
        }
        self.t += 1;
        s.time_left -= 1;
        s.phi_prev = s.phi_now;
        s.phi_now = self.trace.steps.get(self.t).map_or(F::zero(), |next| F::lit(next.phi));
        self.tally.record(executed, loss);

        Ok(StepOutcome {
            next: *s,
            reward: r,
            done: self.is_done(),
            info: StepInfo { executed, loss, pred_label },
        })
    }
}

/// Numeric policy input in `[0, 1]^9`:
/// `[phi_now, phi_prev, robot_conf, cloud_conf, agree, robot_age, cloud_age, budget, time]`.
pub fn encode_state<F: Scalar>(
    state: &OffloadState<F>,
    horizon: usize,
    initial_budget: usize,
    phi_scale: F,
) -> [F; FEATURE_DIM] {
    let unit = |v: F| v.max(F::zero()).min(F::one());
    let tf = F::from_count(horizon.max(1));
    let age = |a: usize| F::from_count(a.min(horizon)) / tf;
    let agree = match (state.robot_cache.label, state.cloud_cache.label) {
        (Some(r), Some(c)) if r == c => F::one(),
        _ => F::zero(),
    };
    [
        unit(state.phi_now / phi_scale),
        unit(state.phi_prev / phi_scale),
        unit(state.robot_cache.conf),
        unit(state.cloud_cache.conf),
        agree,
        age(state.robot_cache.age),
        age(state.cloud_cache.age),
        unit(F::from_count(state.budget_left) / F::from_count(initial_budget.max(1))),
        unit(F::from_count(state.time_left) / tf),
    ]
}
