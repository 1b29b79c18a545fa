use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::net::{init_network, LstmState, NetKind, PolicyNet};
use super::{a2c_update, Rollout, TrainerConfig};
use crate::error::{OffloadError, Result};
use crate::mdp::{encode_state, reset, Action, RewardParams};
use crate::policies::percentile;
use crate::scalar::Scalar;
use crate::trace::Trace;
use crate::tracegen::{generate_trace, GenConfig};

pub const CURVE_HEADER: &str = "episode,mean_reward,policy_loss,value_loss,entropy";

/// One row of the training curve, written after every update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CurveRow {
    /// Episodes completed after this update.
    pub episode: u64,
    pub mean_reward: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
}

impl CurveRow {
    pub fn csv_line(&self) -> String {
        format!(
            "{},{},{},{},{}",
            self.episode, self.mean_reward, self.policy_loss, self.value_loss, self.entropy
        )
    }

    /// Inverse of [`CurveRow::csv_line`].
    pub fn parse_csv_line(line: &str) -> Option<Self> {
        let mut it = line.trim().split(',');
        let episode = it.next()?.parse().ok()?;
        let mut num = || it.next()?.parse::<f64>().ok();
        let row = CurveRow { episode, mean_reward: num()?, policy_loss: num()?, value_loss: num()?, entropy: num()? };
        it.next().is_none().then_some(row)
    }
}

pub fn write_curve_csv<W: Write>(rows: &[CurveRow], out: &mut W, header: bool) -> std::io::Result<()> {
    if header {
        writeln!(out, "{CURVE_HEADER}")?;
    }
    for r in rows {
        writeln!(out, "{}", r.csv_line())?;
    }
    Ok(())
}

/// Everything needed to continue training bit-identically.
///
/// Per-episode randomness is derived from `(seed, episode)`, so the episode
/// counter is the whole generator state.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainerState<F> {
    pub actor: PolicyNet<F>,
    pub critic: PolicyNet<F>,
    pub episode: u64,
    pub phi_scale: F,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome<F> {
    pub state: TrainerState<F>,
    pub curve: Vec<CurveRow>,
}

/// 95th percentile of phi over `traces`; falls back to 1 when degenerate.
pub fn phi_scale_from_traces(traces: &[Trace]) -> f64 {
    let mut phis: Vec<f64> = traces.iter().flat_map(|t| t.steps.iter().map(|s| s.phi)).collect();
    if phis.is_empty() {
        return 1.0;
    }
    phis.sort_by(f64::total_cmp);
    let p = percentile(&phis, 95.0);
    if p > 0.0 && p.is_finite() {
        p
    } else {
        1.0
    }
}

fn mix(seed: u64, salt: u64) -> u64 {
    // splitmix64 finaliser
    let mut z = seed ^ salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn episode_rng(seed: u64, episode: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, 0x7261_6e64));
    rng.set_stream(episode);
    rng
}

impl<F: Scalar> TrainerState<F> {
    pub fn fresh(cfg: &TrainerConfig, gen: &GenConfig) -> Result<Self> {
        let phi_scale = match cfg.phi_scale {
            Some(s) => s,
            None => {
                let n = cfg.phi_scale_traces.max(1) as u64;
                let traces = (0..n)
                    .into_par_iter()
                    .map(|i| generate_trace(gen, cfg.train_seed_base + i))
                    .collect::<Result<Vec<_>>>()?;
                phi_scale_from_traces(&traces)
            }
        };
        Ok(TrainerState {
            actor: init_network(NetKind::Actor, mix(cfg.seed, 1)),
            critic: init_network(NetKind::Critic, mix(cfg.seed, 2)),
            episode: 0,
            phi_scale: F::lit(phi_scale),
        })
    }
}

fn sample_action<F: Scalar, R: Rng>(probs: &[F; 4], rng: &mut R) -> Action {
    let u = F::lit(rng.random::<f64>());
    let mut acc = F::zero();
    for (k, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return Action::ALL[k];
        }
    }
    // Rounding left `u` above the cumulative sum; take the last positive entry.
    let last = probs.iter().rposition(|&p| p > F::zero()).unwrap_or(3);
    Action::ALL[last]
}

/// Runs one episode, sampling actions from the actor.
pub fn collect_rollout<F: Scalar, R: Rng>(
    actor: &PolicyNet<F>,
    trace: &Trace,
    budget: usize,
    params: &RewardParams<F>,
    phi_scale: F,
    rng: &mut R,
) -> Result<Rollout<F>> {
    let horizon = trace.horizon();
    let (mut env, mut state) = reset(trace, budget, *params)?;
    let mut lstm = LstmState::zeros(actor.shape.hidden);
    let mut r = Rollout {
        trace_id: trace.id.clone(),
        budget,
        inputs: Vec::with_capacity(horizon),
        actions: Vec::with_capacity(horizon),
        executed: Vec::with_capacity(horizon),
        rewards: Vec::with_capacity(horizon),
        probs: Vec::with_capacity(horizon),
        values: Vec::new(),
        tally: Default::default(),
        total_reward: F::zero(),
    };
    while !env.is_done() {
        let x = encode_state(&state, horizon, budget, phi_scale);
        let mut probs = [F::zero(); 4];
        actor.step(&x, &mut lstm, &mut probs)?;
        let a = sample_action(&probs, rng);
        let out = env.step(a)?;
        r.inputs.push(x);
        r.actions.push(a);
        r.executed.push(out.info.executed);
        r.rewards.push(out.reward);
        r.probs.push(probs);
        state = out.next;
    }
    r.tally = *env.tally();
    r.total_reward = r.tally.total_reward(params);
    let cloud = r.tally.counts[Action::QueryCloud.index()];
    if cloud > budget {
        return Err(OffloadError::BudgetViolation { trace: trace.id.clone(), queries: cloud, budget });
    }
    Ok(r)
}

/// Trains from scratch.
pub fn train<F: Scalar>(cfg: &TrainerConfig, gen: &GenConfig, params: &RewardParams<F>) -> Result<TrainOutcome<F>> {
    let state = TrainerState::fresh(cfg, gen)?;
    train_from(cfg, gen, params, state, |_, _| Ok(()))
}

/// Continues training from `state` until `cfg.episodes` episodes have run.
///
/// `on_update` is called after every update with the new state and curve row;
/// it is where callers stream the curve and write checkpoints.
pub fn train_from<F: Scalar>(
    cfg: &TrainerConfig,
    gen: &GenConfig,
    params: &RewardParams<F>,
    mut state: TrainerState<F>,
    mut on_update: impl FnMut(&TrainerState<F>, &CurveRow) -> Result<()>,
) -> Result<TrainOutcome<F>> {
    cfg.validate()?;
    gen.validate()?;
    params.validate()?;
    let horizon = gen.horizon;
    let mut curve = Vec::new();

    while state.episode < cfg.episodes {
        let n = (cfg.episodes - state.episode).min(cfg.minibatch_episodes as u64);
        let first = state.episode;
        let actor = &state.actor;
        let phi_scale = state.phi_scale;
        let mut batch = (first..first + n)
            .into_par_iter()
            .map(|e| {
                let mut rng = episode_rng(cfg.seed, e);
                let frac = cfg.budget_fractions[rng.random_range(0..cfg.budget_fractions.len())];
                let budget = (frac * horizon as f64).round() as usize;
                let trace = generate_trace(gen, cfg.train_seed_base + e)?;
                collect_rollout(actor, &trace, budget, params, phi_scale, &mut rng)
            })
            .collect::<Result<Vec<_>>>()?;

        let end = first + n;
        let stats = a2c_update(&mut state.actor, &mut state.critic, &mut batch, cfg, end)?;
        state.episode = end;
        let mean_reward = batch.iter().map(|r| r.total_reward.as_f64()).sum::<f64>() / n as f64;
        let row = CurveRow {
            episode: end,
            mean_reward,
            policy_loss: stats.policy_loss.as_f64(),
            value_loss: stats.value_loss.as_f64(),
            entropy: stats.entropy.as_f64(),
        };
        on_update(&state, &row)?;
        curve.push(row);
    }
    Ok(TrainOutcome { state, curve })
}

/// Episode-weighted moving average of the curve's mean reward over the last
/// `window` episodes ending at or before `episode`.
pub fn moving_average(curve: &[CurveRow], episode: u64, window: u64) -> Option<f64> {
    let mut prev_end = 0u64;
    let (mut sum, mut count) = (0.0, 0u64);
    for row in curve {
        let start = prev_end;
        prev_end = row.episode;
        if row.episode > episode || row.episode + window <= episode {
            continue;
        }
        let k = row.episode - start;
        sum += row.mean_reward * k as f64;
        count += k;
    }
    (count > 0).then(|| sum / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn curve_line_round_trip() {
        let row = CurveRow { episode: 40, mean_reward: -123.456789012345, policy_loss: 0.1, value_loss: 1e-7, entropy: 1.3862 };
        assert_eq!(CurveRow::parse_csv_line(&row.csv_line()), Some(row));
        assert_eq!(CurveRow::parse_csv_line("1,2,3"), None);
        assert_eq!(CurveRow::parse_csv_line(CURVE_HEADER), None);
    }

    fn tiny() -> (TrainerConfig, GenConfig) {
        let gen = GenConfig { horizon: 20, ..GenConfig::default() };
        let cfg = TrainerConfig { episodes: 60, seed: 5, phi_scale_traces: 20, ..TrainerConfig::default() };
        (cfg, gen)
    }

    #[test]
    fn sampling_covers_support() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let probs = [0.1, 0.2, 0.3, 0.4];
        let mut counts = [0usize; 4];
        for _ in 0..20_000 {
            counts[sample_action(&probs, &mut rng).index()] += 1;
        }
        for k in 0..4 {
            assert!((counts[k] as f64 / 20_000.0 - probs[k]).abs() < 0.015, "{counts:?}");
        }
        assert_eq!(sample_action(&[0.0, 0.0, 1.0, 0.0], &mut rng), Action::QueryRobot);
    }

    #[test]
    fn rollout_lengths_and_budget() {
        let (cfg, gen) = tiny();
        let state = TrainerState::<f64>::fresh(&cfg, &gen).unwrap();
        let params = RewardParams::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for seed in 0..30 {
            let trace = generate_trace(&gen, seed).unwrap();
            let r = collect_rollout(&state.actor, &trace, 2, &params, state.phi_scale, &mut rng).unwrap();
            assert_eq!(r.len(), 20);
            assert_eq!(r.inputs.len(), 20);
            assert_eq!(r.probs.len(), 20);
            assert!(r.tally.counts[3] <= 2);
            let sum: f64 = r.rewards.iter().sum();
            assert!((sum - r.total_reward).abs() < 1e-9);
        }
    }

    #[test]
    fn training_is_deterministic_and_resumable() {
        let (cfg, gen) = tiny();
        let params = RewardParams::<f64>::default();
        let a = train(&cfg, &gen, &params).unwrap();
        let b = train(&cfg, &gen, &params).unwrap();
        assert_eq!(a.curve, b.curve);
        assert_eq!(a.state, b.state);
        assert_eq!(a.curve.last().unwrap().episode, 60);

        let half = TrainerConfig { episodes: 40, ..cfg.clone() };
        let first = train(&half, &gen, &params).unwrap();
        let rest = train_from(&cfg, &gen, &params, first.state, |_, _| Ok(())).unwrap();
        assert_eq!(rest.state, a.state);
        let joined: Vec<_> = first.curve.iter().chain(&rest.curve).copied().collect();
        assert_eq!(joined, a.curve);
    }

    #[test]
    fn moving_average_windows() {
        let rows: Vec<CurveRow> = (1..=10)
            .map(|i| CurveRow { episode: i * 20, mean_reward: i as f64, policy_loss: 0.0, value_loss: 0.0, entropy: 0.0 })
            .collect();
        assert_eq!(moving_average(&rows, 200, 40), Some(9.5));
        assert_eq!(moving_average(&rows, 20, 1000), Some(1.0));
        assert_eq!(moving_average(&rows, 10, 5), None);
    }

    #[test]
    fn phi_scale_percentile() {
        let gen = GenConfig::default();
        let traces: Vec<Trace> = (0..50).map(|s| generate_trace(&gen, s).unwrap()).collect();
        let s = phi_scale_from_traces(&traces);
        assert!(s > 0.1 && s < 1.2, "{s}");
        assert_eq!(phi_scale_from_traces(&[]), 1.0);
    }
}
