//! Clairvoyant upper bound on episode reward.
//!
//! With the whole trace known in advance, the only thing that matters about a
//! cache is which step filled it. The DP state at step `t` is therefore
//! `(cloud budget left, robot cache source, cloud cache source)` where a
//! source is either empty or a step in `0..t`.

use crate::error::{OffloadError, Result};
use crate::mdp::{loss01, reset, Action, EpisodeTally, RewardParams};
use crate::policies::{Controller, Observation, Policy};
use crate::scalar::Scalar;
use crate::trace::{Label, Trace};

pub const DEFAULT_DP_LIMIT: usize = 200;
pub const BRUTE_FORCE_MAX_T: usize = 10;

#[derive(Debug, Clone, PartialEq)]
pub struct OraclePlan<F> {
    /// Requested actions; at most `budget` of them are executed cloud queries.
    pub actions: Vec<Action>,
    pub value: F,
    pub tally: EpisodeTally,
}

pub fn oracle_dp<F: Scalar>(trace: &Trace, params: &RewardParams<F>, budget: usize) -> Result<OraclePlan<F>> {
    oracle_dp_with_limit(trace, params, budget, DEFAULT_DP_LIMIT)
}

/// Exact finite-horizon DP, `O(T^3 * budget * 4)`. Ties go to the smallest action code.
pub fn oracle_dp_with_limit<F: Scalar>(
    trace: &Trace,
    params: &RewardParams<F>,
    budget: usize,
    limit: usize,
) -> Result<OraclePlan<F>> {
    let horizon = trace.horizon();
    if horizon == 0 {
        return Err(OffloadError::InvalidTrace(format!("trace `{}` has no steps", trace.id)));
    }
    if horizon > limit {
        return Err(OffloadError::Size(format!("oracle horizon {horizon} exceeds limit {limit}")));
    }
    let budget = budget.min(horizon);
    let steps = &trace.steps;

    // Cache source encoding at layer t: 0 = empty, s + 1 = filled at step s < t.
    let width = |t: usize| t + 1;
    let n_lo = |t: usize| budget.saturating_sub(t);
    let index = |t: usize, n: usize, sr: usize, sc: usize| ((n - n_lo(t)) * width(t) + sr) * width(t) + sc;
    let layer_len = |t: usize| (budget - n_lo(t) + 1) * width(t) * width(t);

    let robot_label = |src: usize| -> Option<Label> { src.checked_sub(1).map(|s| steps[s].robot_pred) };
    let cloud_label = |src: usize| -> Option<Label> { src.checked_sub(1).map(|s| steps[s].cloud_pred) };
    let loss_of = |pred: Option<Label>, t: usize| loss01(pred, steps[t].true_label);

    // (reward, next n, next robot src, next cloud src, loss)
    let transition = |t: usize, n: usize, sr: usize, sc: usize, a: Action| {
        let executed = if a == Action::QueryCloud && n == 0 { Action::QueryRobot } else { a };
        let (pred, n2, sr2, sc2) = match executed {
            Action::UsePastRobot => (robot_label(sr), n, sr, sc),
            Action::UsePastCloud => (cloud_label(sc), n, sr, sc),
            Action::QueryRobot => (Some(steps[t].robot_pred), n, t + 1, sc),
            Action::QueryCloud => (Some(steps[t].cloud_pred), n - 1, sr, t + 1),
        };
        let loss = loss_of(pred, t);
        let r = -(params.alpha * F::from_u32(loss).unwrap()) - params.beta * params.cost_of(executed);
        (r, n2, sr2, sc2, executed, loss)
    };

    let mut next_values = vec![F::zero(); layer_len(horizon)];
    let mut choices: Vec<Vec<u8>> = vec![Vec::new(); horizon];
    for t in (0..horizon).rev() {
        let mut values = vec![F::zero(); layer_len(t)];
        let mut choice = vec![0u8; layer_len(t)];
        for n in n_lo(t)..=budget {
            for sr in 0..width(t) {
                for sc in 0..width(t) {
                    let mut best = F::neg_infinity();
                    let mut best_a = 0u8;
                    for a in Action::ALL {
                        let (r, n2, sr2, sc2, _, _) = transition(t, n, sr, sc, a);
                        let v = r + next_values[index(t + 1, n2, sr2, sc2)];
                        let tol = F::lit(1e-9) * best.abs().max(F::one());
                        if best == F::neg_infinity() || v > best + tol {
                            best = v;
                            best_a = a.code();
                        }
                    }
                    let i = index(t, n, sr, sc);
                    values[i] = best;
                    choice[i] = best_a;
                }
            }
        }
        choices[t] = choice;
        next_values = values;
    }

    let mut actions = Vec::with_capacity(horizon);
    let mut tally = EpisodeTally::default();
    let (mut n, mut sr, mut sc) = (budget, 0, 0);
    for (t, choice) in choices.iter().enumerate() {
        let a = Action::ALL[choice[index(t, n, sr, sc)] as usize];
        let (_, n2, sr2, sc2, executed, loss) = transition(t, n, sr, sc, a);
        tally.record(executed, loss);
        actions.push(a);
        (n, sr, sc) = (n2, sr2, sc2);
    }
    debug_assert!(
        (tally.total_reward(params) - next_values[index(0, budget, 0, 0)]).abs().as_f64() < 1e-6,
        "DP value disagrees with its own plan"
    );
    Ok(OraclePlan { actions, value: tally.total_reward(params), tally })
}

/// Exhaustive search over all `4^T` requested action sequences, replayed through the environment.
pub fn brute_force_oracle<F: Scalar>(trace: &Trace, params: &RewardParams<F>, budget: usize) -> Result<OraclePlan<F>> {
    let horizon = trace.horizon();
    if horizon > BRUTE_FORCE_MAX_T {
        return Err(OffloadError::Size(format!("brute force needs T <= {BRUTE_FORCE_MAX_T}, got {horizon}")));
    }
    let (env, _) = reset(trace, budget, *params)?;
    let mut best: Option<OraclePlan<F>> = None;
    let mut prefix = Vec::with_capacity(horizon);
    search(&env, &mut prefix, params, budget, &mut best)?;
    Ok(best.expect("at least one action sequence exists"))
}

fn search<F: Scalar>(
    env: &crate::mdp::EpisodeEnv<'_, F>,
    prefix: &mut Vec<Action>,
    params: &RewardParams<F>,
    budget: usize,
    best: &mut Option<OraclePlan<F>>,
) -> Result<()> {
    if env.is_done() {
        let tally = *env.tally();
        if tally.counts[Action::QueryCloud.index()] > budget {
            return Ok(());
        }
        let value = tally.total_reward(params);
        if best.as_ref().is_none_or(|b| value > b.value) {
            *best = Some(OraclePlan { actions: prefix.clone(), value, tally });
        }
        return Ok(());
    }
    for a in Action::ALL {
        let mut child = env.clone();
        child.step(a)?;
        prefix.push(a);
        search(&child, prefix, params, budget, best)?;
        prefix.pop();
    }
    Ok(())
}

/// The DP oracle as a benchmark pseudo-policy: plans per episode, then replays.
#[derive(Debug, Clone)]
pub struct OraclePolicy<F> {
    pub params: RewardParams<F>,
    pub limit: usize,
}

impl<F: Scalar> OraclePolicy<F> {
    pub fn new(params: RewardParams<F>) -> Self {
        OraclePolicy { params, limit: DEFAULT_DP_LIMIT }
    }
}

struct Replay {
    actions: Vec<Action>,
}

impl<F> Controller<F> for Replay {
    fn act(&mut self, obs: &Observation<'_, F>) -> u8 {
        self.actions[obs.t].code()
    }
}

impl<F: Scalar> Policy<F> for OraclePolicy<F> {
    fn name(&self) -> String {
        "oracle".into()
    }

    fn begin<'p>(&'p self, trace: &Trace, initial_budget: usize, _: u64) -> Result<Box<dyn Controller<F> + 'p>> {
        let plan = oracle_dp_with_limit(trace, &self.params, initial_budget, self.limit)?;
        Ok(Box::new(Replay { actions: plan.actions }))
    }
}
