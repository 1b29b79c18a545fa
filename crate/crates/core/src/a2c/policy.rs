use super::net::{argmax, LstmState, PolicyNet};
use crate::error::Result;
use crate::mdp::{encode_state, reset, Action, RewardParams};
use crate::policies::{Controller, Observation, Policy};
use crate::scalar::Scalar;
use crate::trace::Trace;

/// Greedy action: argmax of the probabilities, ties to the smallest code.
pub fn greedy_action<F: Scalar>(probs: &[F]) -> Action {
    Action::ALL[argmax(probs)]
}

/// Plays one episode greedily and returns the requested actions.
pub fn act_greedy<F: Scalar>(
    actor: &PolicyNet<F>,
    trace: &Trace,
    budget: usize,
    params: &RewardParams<F>,
    phi_scale: F,
) -> Result<Vec<Action>> {
    let (mut env, mut state) = reset(trace, budget, *params)?;
    let mut lstm = LstmState::zeros(actor.shape.hidden);
    let mut actions = Vec::with_capacity(trace.horizon());
    let mut probs = [F::zero(); 4];
    while !env.is_done() {
        let x = encode_state(&state, trace.horizon(), budget, phi_scale);
        actor.step(&x, &mut lstm, &mut probs)?;
        let a = greedy_action(&probs);
        state = env.step(a)?.next;
        actions.push(a);
    }
    Ok(actions)
}

/// A trained actor evaluated greedily.
#[derive(Debug, Clone)]
pub struct A2cPolicy<F> {
    pub actor: PolicyNet<F>,
    pub phi_scale: F,
}

struct GreedyController<'p, F> {
    actor: &'p PolicyNet<F>,
    phi_scale: F,
    lstm: LstmState<F>,
}

impl<F: Scalar> Controller<F> for GreedyController<'_, F> {
    fn act(&mut self, obs: &Observation<'_, F>) -> u8 {
        let x = encode_state(obs.state, obs.horizon, obs.initial_budget, self.phi_scale);
        let mut probs = [F::zero(); 4];
        self.actor.step(&x, &mut self.lstm, &mut probs).expect("actor input width is fixed");
        greedy_action(&probs).code()
    }
}

impl<F: Scalar> Policy<F> for A2cPolicy<F> {
    fn name(&self) -> String {
        "rl".into()
    }

    fn begin<'p>(&'p self, _: &Trace, _: usize, _: u64) -> Result<Box<dyn Controller<F> + 'p>> {
        Ok(Box::new(GreedyController {
            actor: &self.actor,
            phi_scale: self.phi_scale,
            lstm: LstmState::zeros(self.actor.shape.hidden),
        }))
    }
}
