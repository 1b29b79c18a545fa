//! Synchronous recurrent advantage actor-critic.
//!
//! Actor and critic are separate networks. Each update consumes a minibatch
//! of complete episodes, uses Monte-Carlo returns (episodes always end at
//! `T`), backpropagates through the whole episode, clips each network's
//! global gradient norm and applies RMSprop.

mod checkpoint;
mod net;
mod policy;
mod trainer;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint, NetRecord, CHECKPOINT_FORMAT};
pub use net::{
    argmax, init_network, init_with_shape, log_softmax, softmax, weight_matrix, ForwardOutput, LstmState, NetKind,
    NetShape, PolicyNet, Tape, WeightBlock,
};
pub use policy::{act_greedy, greedy_action, A2cPolicy};
pub use trainer::{
    collect_rollout, moving_average, phi_scale_from_traces, train, train_from, write_curve_csv, CurveRow, TrainOutcome,
    TrainerState, CURVE_HEADER,
};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{OffloadError, Result};
use crate::mdp::{Action, EpisodeTally, FEATURE_DIM};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerConfig {
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub minibatch_episodes: usize,
    pub entropy_coeff: f64,
    pub grad_clip_norm: f64,
    pub gamma: f64,
    pub episodes: u64,
    pub budget_fractions: Vec<f64>,
    pub seed: u64,
    pub rms_decay: f64,
    pub rms_eps: f64,
    /// Training trace for episode `e` is generated with seed `train_seed_base + e`.
    pub train_seed_base: u64,
    /// Fixed phi normalisation; when absent it is the 95th percentile of phi
    /// over `phi_scale_traces` training traces.
    pub phi_scale: Option<f64>,
    pub phi_scale_traces: usize,
    /// Episodes between checkpoint callbacks (0 = only at the end).
    pub checkpoint_every: u64,
}

impl Default for TrainerConfig {
    fn default() -> Self {
        TrainerConfig {
            actor_lr: 1e-4,
            critic_lr: 5e-5,
            minibatch_episodes: 20,
            entropy_coeff: 0.01,
            grad_clip_norm: 40.0,
            gamma: 0.99,
            episodes: 50_000,
            budget_fractions: vec![0.10, 0.20, 0.50, 0.70, 1.0],
            seed: 0,
            rms_decay: 0.99,
            rms_eps: 1e-5,
            train_seed_base: 0,
            phi_scale: None,
            phi_scale_traces: 200,
            checkpoint_every: 5_000,
        }
    }
}

impl TrainerConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(OffloadError::Config(m));
        for (name, v) in [
            ("actor_lr", self.actor_lr),
            ("critic_lr", self.critic_lr),
            ("grad_clip_norm", self.grad_clip_norm),
            ("rms_eps", self.rms_eps),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return fail(format!("{name} = {v} must be > 0"));
            }
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return fail(format!("gamma = {} is outside [0, 1]", self.gamma));
        }
        if !(0.0..1.0).contains(&self.rms_decay) {
            return fail(format!("rms_decay = {} is outside [0, 1)", self.rms_decay));
        }
        if self.entropy_coeff.is_nan() || self.entropy_coeff < 0.0 {
            return fail(format!("entropy_coeff = {} must be >= 0", self.entropy_coeff));
        }
        if self.minibatch_episodes == 0 {
            return fail("minibatch_episodes must be >= 1".into());
        }
        if self.budget_fractions.is_empty() || self.budget_fractions.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return fail(format!("budget_fractions {:?} must be nonempty and within [0, 1]", self.budget_fractions));
        }
        if let Some(s) = self.phi_scale {
            if !(s > 0.0 && s.is_finite()) {
                return fail(format!("phi_scale = {s} must be > 0"));
            }
        }
        Ok(())
    }
}

/// One complete episode collected with the actor.
#[derive(Debug, Clone, PartialEq)]
pub struct Rollout<F> {
    pub trace_id: String,
    pub budget: usize,
    pub inputs: Vec<[F; FEATURE_DIM]>,
    /// Sampled actions, before budget remapping.
    pub actions: Vec<Action>,
    pub executed: Vec<Action>,
    pub rewards: Vec<F>,
    pub probs: Vec<[F; 4]>,
    /// Filled in by the critic during the update.
    pub values: Vec<F>,
    pub tally: EpisodeTally,
    pub total_reward: F,
}

impl<F: Scalar> Rollout<F> {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

/// Discounted Monte-Carlo returns, `G_t = r_t + gamma * G_{t+1}` with `G_T = 0`.
pub fn discounted_returns<F: Scalar>(rewards: &[F], gamma: F) -> Vec<F> {
    let mut out = vec![F::zero(); rewards.len()];
    let mut g = F::zero();
    for t in (0..rewards.len()).rev() {
        g = rewards[t] + gamma * g;
        out[t] = g;
    }
    out
}

/// Returns and advantages `A_t = G_t - V(s_t)`, using the rollout's critic values.
pub fn returns_and_advantages<F: Scalar>(rollout: &Rollout<F>, gamma: F) -> (Vec<F>, Vec<F>) {
    let returns = discounted_returns(&rollout.rewards, gamma);
    let adv = returns.iter().zip(&rollout.values).map(|(&g, &v)| g - v).collect();
    (returns, adv)
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct ActorLoss<F> {
    /// `-mean(log pi(a|s) * A)`.
    pub policy_loss: F,
    /// Mean per-step entropy.
    pub entropy: F,
    /// `policy_loss - entropy_coeff * entropy`.
    pub total: F,
}

/// Episode view used by the actor objective.
#[derive(Debug, Clone, Copy)]
pub struct ActorEpisode<'a, F> {
    pub inputs: &'a [[F; FEATURE_DIM]],
    pub actions: &'a [Action],
    pub advantages: &'a [F],
}

#[derive(Debug, Clone, Copy)]
pub struct CriticEpisode<'a, F> {
    pub inputs: &'a [[F; FEATURE_DIM]],
    pub returns: &'a [F],
}

fn total_steps<T>(episodes: &[T], len: impl Fn(&T) -> usize) -> usize {
    episodes.iter().map(len).sum::<usize>().max(1)
}

/// Per-step contribution to the actor loss and `dL/dlogits`.
fn actor_step<F: Scalar>(logits: &[F], action: Action, adv: F, coeff: F, inv_n: F, d_logits: Option<&mut [F]>) -> (F, F) {
    let mut lp = [F::zero(); 4];
    log_softmax(logits, &mut lp);
    let p: [F; 4] = lp.map(F::exp);
    let entropy = -(0..4).map(|k| p[k] * lp[k]).sum::<F>();
    if let Some(d) = d_logits {
        for k in 0..4 {
            let onehot = if k == action.index() { F::one() } else { F::zero() };
            d[k] = -(adv * inv_n) * (onehot - p[k]) + coeff * inv_n * p[k] * (lp[k] + entropy);
        }
    }
    (-lp[action.index()] * adv, entropy)
}

fn finish_actor<F: Scalar>(pg_sum: F, ent_sum: F, n: usize, coeff: F) -> ActorLoss<F> {
    let inv_n = F::one() / F::from_count(n);
    let policy_loss = pg_sum * inv_n;
    let entropy = ent_sum * inv_n;
    ActorLoss { policy_loss, entropy, total: policy_loss - coeff * entropy }
}

/// Actor loss evaluated by a plain forward pass (no tape).
pub fn actor_objective<F: Scalar>(net: &PolicyNet<F>, episodes: &[ActorEpisode<'_, F>], entropy_coeff: F) -> Result<ActorLoss<F>> {
    let n = total_steps(episodes, |e| e.inputs.len());
    let (mut pg, mut ent) = (F::zero(), F::zero());
    for ep in episodes {
        let tape = net.forward_tape(ep.inputs)?;
        for t in 0..ep.inputs.len() {
            let (a, b) = actor_step(tape.head_at(t, 4), ep.actions[t], ep.advantages[t], entropy_coeff, F::zero(), None);
            pg += a;
            ent += b;
        }
    }
    Ok(finish_actor(pg, ent, n, entropy_coeff))
}

/// Actor loss and its gradient, accumulated into `grad` in episode order.
pub fn actor_loss_and_grad<F: Scalar>(
    net: &PolicyNet<F>,
    episodes: &[ActorEpisode<'_, F>],
    entropy_coeff: F,
    grad: &mut [F],
) -> Result<ActorLoss<F>> {
    let n = total_steps(episodes, |e| e.inputs.len());
    let inv_n = F::one() / F::from_count(n);
    let parts: Vec<(Vec<F>, F, F)> = episodes
        .par_iter()
        .map(|ep| -> Result<(Vec<F>, F, F)> {
            let tape = net.forward_tape(ep.inputs)?;
            let mut d_head = vec![F::zero(); ep.inputs.len() * 4];
            let (mut pg, mut ent) = (F::zero(), F::zero());
            for t in 0..ep.inputs.len() {
                let (a, b) = actor_step(
                    tape.head_at(t, 4),
                    ep.actions[t],
                    ep.advantages[t],
                    entropy_coeff,
                    inv_n,
                    Some(&mut d_head[t * 4..(t + 1) * 4]),
                );
                pg += a;
                ent += b;
            }
            let mut g = vec![F::zero(); net.num_params()];
            net.backward(&tape, &d_head, &mut g);
            Ok((g, pg, ent))
        })
        .collect::<Result<_>>()?;
    let (mut pg, mut ent) = (F::zero(), F::zero());
    for (g, a, b) in parts {
        grad.iter_mut().zip(&g).for_each(|(x, y)| *x += *y);
        pg += a;
        ent += b;
    }
    Ok(finish_actor(pg, ent, n, entropy_coeff))
}

/// Mean squared error of the critic against the returns (forward pass only).
pub fn critic_objective<F: Scalar>(net: &PolicyNet<F>, episodes: &[CriticEpisode<'_, F>]) -> Result<F> {
    let n = total_steps(episodes, |e| e.inputs.len());
    let mut sum = F::zero();
    for ep in episodes {
        let out = net.forward(ep.inputs)?;
        for (v, &g) in out.outputs.iter().zip(ep.returns) {
            sum += (v[0] - g) * (v[0] - g);
        }
    }
    Ok(sum / F::from_count(n))
}

pub fn critic_loss_and_grad<F: Scalar>(net: &PolicyNet<F>, episodes: &[CriticEpisode<'_, F>], grad: &mut [F]) -> Result<F> {
    let n = total_steps(episodes, |e| e.inputs.len());
    let two_over_n = F::lit(2.0) / F::from_count(n);
    let parts: Vec<(Vec<F>, F)> = episodes
        .par_iter()
        .map(|ep| -> Result<(Vec<F>, F)> {
            let tape = net.forward_tape(ep.inputs)?;
            let mut d_head = vec![F::zero(); ep.inputs.len()];
            let mut sq = F::zero();
            for (t, &g) in ep.returns.iter().enumerate() {
                let diff = tape.head_at(t, 1)[0] - g;
                sq += diff * diff;
                d_head[t] = two_over_n * diff;
            }
            let mut gr = vec![F::zero(); net.num_params()];
            net.backward(&tape, &d_head, &mut gr);
            Ok((gr, sq))
        })
        .collect::<Result<_>>()?;
    let mut sum = F::zero();
    for (g, sq) in parts {
        grad.iter_mut().zip(&g).for_each(|(x, y)| *x += *y);
        sum += sq;
    }
    Ok(sum / F::from_count(n))
}

pub fn global_norm<F: Scalar>(grad: &[F]) -> F {
    grad.iter().map(|&g| g * g).sum::<F>().sqrt()
}

/// Rescales `grad` to norm `max_norm` if it is longer; returns the original norm.
pub fn clip_global_norm<F: Scalar>(grad: &mut [F], max_norm: F) -> F {
    let norm = global_norm(grad);
    if norm > max_norm {
        let scale = max_norm / norm;
        grad.iter_mut().for_each(|g| *g *= scale);
    }
    norm
}

/// `v = decay * v + (1 - decay) * g^2; theta -= lr * g / (sqrt(v) + eps)`.
pub fn rmsprop_step<F: Scalar>(net: &mut PolicyNet<F>, grad: &[F], lr: F, decay: F, eps: F) {
    for ((p, v), &g) in net.params.iter_mut().zip(net.rms.iter_mut()).zip(grad) {
        *v = decay * *v + (F::one() - decay) * g * g;
        *p -= lr * g / (v.sqrt() + eps);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UpdateStats<F> {
    pub policy_loss: F,
    pub value_loss: F,
    pub entropy: F,
    /// Pre-clip global norms.
    pub actor_grad_norm: F,
    pub critic_grad_norm: F,
}

/// One synchronous A2C update on a minibatch of complete rollouts.
///
/// Fills each rollout's `values` with the pre-update critic's estimates.
pub fn a2c_update<F: Scalar>(
    actor: &mut PolicyNet<F>,
    critic: &mut PolicyNet<F>,
    batch: &mut [Rollout<F>],
    cfg: &TrainerConfig,
    episode: u64,
) -> Result<UpdateStats<F>> {
    let gamma = F::lit(cfg.gamma);
    let values: Vec<Vec<F>> = batch
        .par_iter()
        .map(|r| critic.forward(&r.inputs).map(|o| o.outputs.into_iter().map(|v| v[0]).collect()))
        .collect::<Result<_>>()?;
    for (r, v) in batch.iter_mut().zip(values) {
        r.values = v;
    }
    let targets: Vec<(Vec<F>, Vec<F>)> = batch.iter().map(|r| returns_and_advantages(r, gamma)).collect();

    let actor_eps: Vec<ActorEpisode<'_, F>> = batch
        .iter()
        .zip(&targets)
        .map(|(r, (_, adv))| ActorEpisode { inputs: &r.inputs, actions: &r.actions, advantages: adv })
        .collect();
    let critic_eps: Vec<CriticEpisode<'_, F>> =
        batch.iter().zip(&targets).map(|(r, (ret, _))| CriticEpisode { inputs: &r.inputs, returns: ret }).collect();

    let mut g_actor = vec![F::zero(); actor.num_params()];
    let mut g_critic = vec![F::zero(); critic.num_params()];
    let a_loss = actor_loss_and_grad(actor, &actor_eps, F::lit(cfg.entropy_coeff), &mut g_actor)?;
    let v_loss = critic_loss_and_grad(critic, &critic_eps, &mut g_critic)?;

    let clip = F::lit(cfg.grad_clip_norm);
    let a_norm = clip_global_norm(&mut g_actor, clip);
    let c_norm = clip_global_norm(&mut g_critic, clip);
    for (what, v) in [
        ("policy loss", a_loss.total),
        ("value loss", v_loss),
        ("actor gradient norm", a_norm),
        ("critic gradient norm", c_norm),
    ] {
        if !v.is_finite() {
            return Err(OffloadError::Divergence { episode, detail: format!("{what} is {v}") });
        }
    }

    let (decay, eps) = (F::lit(cfg.rms_decay), F::lit(cfg.rms_eps));
    rmsprop_step(actor, &g_actor, F::lit(cfg.actor_lr), decay, eps);
    rmsprop_step(critic, &g_critic, F::lit(cfg.critic_lr), decay, eps);

    Ok(UpdateStats {
        policy_loss: a_loss.policy_loss,
        value_loss: v_loss,
        entropy: a_loss.entropy,
        actor_grad_norm: a_norm,
        critic_grad_norm: c_norm,
    })
}
