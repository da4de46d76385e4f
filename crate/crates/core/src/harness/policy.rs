use rand_chacha::ChaCha8Rng;

use super::{rng_stream, Stream};
use crate::agents::{ActMode, Agent};
use crate::empc::{threshold_policy, Env, EnvState, TriggerAction};
use crate::nn::LstmState;
use crate::Result;

/// A trigger rule evaluated once per step.
pub trait TriggerPolicy {
    fn reset(&mut self) {}
    fn decide(&mut self, env: &Env, obs: &EnvState) -> Result<TriggerAction>;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct AlwaysTrigger;

impl TriggerPolicy for AlwaysTrigger {
    fn decide(&mut self, _: &Env, _: &EnvState) -> Result<TriggerAction> {
        Ok(TriggerAction::Trigger)
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct NeverTrigger;

impl TriggerPolicy for NeverTrigger {
    fn decide(&mut self, _: &Env, _: &EnvState) -> Result<TriggerAction> {
        Ok(TriggerAction::Hold)
    }
}

#[derive(Debug, Clone, Copy)]
pub struct ThresholdPolicy(pub f64);

impl TriggerPolicy for ThresholdPolicy {
    fn decide(&mut self, env: &Env, obs: &EnvState) -> Result<TriggerAction> {
        Ok(threshold_policy(env.buffer(), &obs.x_hat, self.0))
    }
}

/// Deterministic policy of a learned agent: ε = 0 or the mode of the categorical.
#[derive(Debug)]
pub struct AgentPolicy<'a> {
    agent: &'a Agent,
    memory: Option<LstmState>,
    rng: ChaCha8Rng,
}

impl<'a> AgentPolicy<'a> {
    pub fn new(agent: &'a Agent, seed: u64) -> Self {
        Self { agent, memory: None, rng: rng_stream(seed, Stream::Evaluation) }
    }
}

impl TriggerPolicy for AgentPolicy<'_> {
    fn reset(&mut self) {
        self.memory = None;
    }

    fn decide(&mut self, env: &Env, obs: &EnvState) -> Result<TriggerAction> {
        let d = self.agent.act(&obs.to_vec(), env.step_index(), &mut self.memory, ActMode::Greedy, &mut self.rng)?;
        Ok(TriggerAction::from_index(d.action))
    }
}
