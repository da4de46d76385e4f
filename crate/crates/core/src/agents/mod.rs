//! Trigger-policy learners: double DQN (optionally recurrent with prioritized
//! replay), PPO (optionally recurrent) and discrete soft actor-critic.
//!
//! Recurrent agents reset their LSTM state every `seq_len` steps of an episode,
//! both when acting and when replaying, so training sequences see exactly the
//! hidden states the policy saw.

mod ddqn;
mod ppo;
mod replay;
mod sac;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{AgentError, CheckpointError};
use crate::nn::{AdamConfig, Checkpoint, LstmState, Network, SeqBatch};

pub use ddqn::{ddqn_target, target_sync, Ddqn};
pub use ppo::{clipped_surrogate, gae, Ppo, RolloutStep};
pub use replay::{ReplayBuffer, Sample, SequenceSample};
pub use sac::{sac_critic_target, Sac};

/// Fixed divisors applied to `[x̂, x̄]` before they reach a network.
pub const OBS_SCALE: [f64; 6] = [100.0, 10.0, 4.0, 1.0, 1.0, 1.0];

pub fn scale_observation(obs: &[f64]) -> Vec<f64> {
    obs.iter().enumerate().map(|(i, v)| v / OBS_SCALE[i % OBS_SCALE.len()]).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AgentKind {
    Ddqn,
    DdqnLstmPer,
    Ppo,
    PpoLstm,
    Sac,
}

impl AgentKind {
    pub const ALL: [AgentKind; 5] = [Self::Ddqn, Self::DdqnLstmPer, Self::Ppo, Self::PpoLstm, Self::Sac];

    pub fn name(self) -> &'static str {
        match self {
            Self::Ddqn => "ddqn",
            Self::DdqnLstmPer => "ddqn-lstm-per",
            Self::Ppo => "ppo",
            Self::PpoLstm => "ppo-lstm",
            Self::Sac => "sac",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }

    pub fn is_recurrent(self) -> bool {
        matches!(self, Self::DdqnLstmPer | Self::PpoLstm)
    }

    pub fn is_prioritized(self) -> bool {
        self == Self::DdqnLstmPer
    }

    pub fn is_on_policy(self) -> bool {
        matches!(self, Self::Ppo | Self::PpoLstm)
    }
}

impl std::fmt::Display for AgentKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub kind: AgentKind,
    pub gamma: f64,
    pub batch_size: usize,
    /// Hard target-network copy interval `N₀` (environment steps).
    pub target_sync: u64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub epsilon_decay_steps: u64,
    pub replay_capacity: usize,
    /// Updates start once the buffer holds this many transitions.
    pub learning_starts: usize,
    pub per_alpha: f64,
    pub per_beta0: f64,
    /// Steps over which β is annealed to 1.
    pub per_beta_steps: u64,
    pub per_eps: f64,
    /// Replay and hidden-state reset length of recurrent agents.
    pub seq_len: usize,
    pub adam: AdamConfig,
    /// Global gradient-norm limit per update; 0 disables clipping.
    pub grad_clip: f64,
    /// Multiplies rewards before they are stored for learning.
    pub reward_scale: f64,
    pub ppo_clip: f64,
    pub ppo_epochs: usize,
    pub ppo_rollout: usize,
    pub ppo_minibatch: usize,
    pub gae_lambda: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub sac_tau: f64,
    pub sac_alpha: f64,
    pub sac_auto_alpha: bool,
    /// Target entropy as a fraction of `ln 2`.
    pub sac_target_entropy_ratio: f64,
    pub sac_alpha_lr: f64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            kind: AgentKind::DdqnLstmPer,
            gamma: 0.99,
            batch_size: 64,
            target_sync: 1000,
            epsilon_start: 1.0,
            epsilon_end: 0.01,
            epsilon_decay_steps: 5000,
            replay_capacity: 5000,
            learning_starts: 64,
            per_alpha: 0.6,
            per_beta0: 0.4,
            per_beta_steps: 50_000,
            per_eps: 1e-3,
            seq_len: 8,
            adam: AdamConfig::default(),
            grad_clip: 10.0,
            reward_scale: 1.0,
            ppo_clip: 0.2,
            ppo_epochs: 10,
            ppo_rollout: 2048,
            ppo_minibatch: 64,
            gae_lambda: 0.95,
            entropy_coef: 0.01,
            value_coef: 0.5,
            sac_tau: 0.005,
            sac_alpha: 0.2,
            sac_auto_alpha: false,
            sac_target_entropy_ratio: 0.3,
            sac_alpha_lr: 1e-4,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        let bad = |m: String| Err(AgentError::InvalidConfig(m));
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad(format!("gamma must be in (0, 1], got {}", self.gamma));
        }
        if self.batch_size == 0 || self.seq_len == 0 || self.replay_capacity == 0 {
            return bad("batch_size, seq_len and replay_capacity must be positive".into());
        }
        if !(self.epsilon_start >= self.epsilon_end && self.epsilon_end >= 0.0 && self.epsilon_start <= 1.0) {
            return bad(format!("epsilon endpoints must satisfy 1 >= start >= end >= 0, got {} -> {}", self.epsilon_start, self.epsilon_end));
        }
        if !(0.0..=1.0).contains(&self.per_alpha) || !(0.0..=1.0).contains(&self.per_beta0) || !(self.per_eps > 0.0) {
            return bad("PER needs alpha, beta0 in [0, 1] and a positive priority floor".into());
        }
        if self.target_sync == 0 {
            return bad("target_sync must be positive".into());
        }
        if self.ppo_rollout == 0 || self.ppo_minibatch == 0 || self.ppo_epochs == 0 {
            return bad("PPO rollout, minibatch and epochs must be positive".into());
        }
        if !(self.sac_tau > 0.0 && self.sac_tau <= 1.0) || !(self.sac_alpha >= 0.0) {
            return bad("SAC needs tau in (0, 1] and a nonnegative temperature".into());
        }
        if !(self.adam.lr > 0.0) || !(self.reward_scale > 0.0) || !(self.grad_clip >= 0.0) {
            return bad("learning rate and reward scale must be positive, grad_clip nonnegative".into());
        }
        Ok(())
    }
}

/// Linear decay from `epsilon_start` to `epsilon_end` over `epsilon_decay_steps`, then constant.
pub fn epsilon_schedule(step: u64, config: &AgentConfig) -> f64 {
    if step >= config.epsilon_decay_steps {
        return config.epsilon_end;
    }
    let frac = step as f64 / config.epsilon_decay_steps as f64;
    config.epsilon_start + (config.epsilon_end - config.epsilon_start) * frac
}

/// Importance-sampling exponent annealed linearly from `per_beta0` to 1.
pub fn beta_schedule(step: u64, config: &AgentConfig) -> f64 {
    let frac = if config.per_beta_steps == 0 { 1.0 } else { (step as f64 / config.per_beta_steps as f64).min(1.0) };
    config.per_beta0 + (1.0 - config.per_beta0) * frac
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub obs: Vec<f64>,
    pub action: usize,
    pub reward: f64,
    pub next_obs: Vec<f64>,
    pub done: bool,
    pub episode: u64,
    /// Step index within the episode.
    pub step: usize,
}

impl Transition {
    pub fn is_finite(&self) -> bool {
        self.reward.is_finite() && self.obs.iter().chain(&self.next_obs).all(|v| v.is_finite()) && self.action <= 1
    }
}

/// Network input for a batch of sequences: each column holds the observations
/// of one sequence followed by the next observation of its last transition.
pub(crate) fn sequence_input(seqs: &[Vec<&Transition>]) -> (SeqBatch, Vec<usize>) {
    let dim = seqs[0][0].obs.len();
    let steps = seqs.iter().map(|s| s.len()).max().unwrap_or(0) + 1;
    let mut x = SeqBatch::zeros(steps, seqs.len(), dim);
    for (b, s) in seqs.iter().enumerate() {
        for (t, tr) in s.iter().enumerate() {
            x.at_mut(t, b).copy_from_slice(&tr.obs);
        }
        x.at_mut(s.len(), b).copy_from_slice(&s[s.len() - 1].next_obs);
    }
    (x, seqs.iter().map(|s| s.len()).collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ActMode {
    /// Behaviour policy at global training step `step`.
    Explore { step: u64 },
    /// ε = 0 for DDQN, the distribution's mode for PPO and SAC.
    Greedy,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decision {
    pub action: usize,
    /// Log-probability of `action` under the behaviour policy (zero for DDQN).
    pub log_prob: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UpdateStats {
    pub loss: f64,
    /// Policy entropy for PPO and SAC; zero for DDQN.
    pub entropy: f64,
}

#[derive(Debug, Clone)]
pub enum Agent {
    Ddqn(Ddqn),
    Ppo(Ppo),
    Sac(Sac),
}

impl Agent {
    pub fn new<R: Rng + ?Sized>(config: AgentConfig, obs_dim: usize, rng: &mut R) -> Result<Self, AgentError> {
        config.validate()?;
        Ok(match config.kind {
            AgentKind::Ddqn | AgentKind::DdqnLstmPer => Self::Ddqn(Ddqn::new(config, obs_dim, rng)?),
            AgentKind::Ppo | AgentKind::PpoLstm => Self::Ppo(Ppo::new(config, obs_dim, rng)),
            AgentKind::Sac => Self::Sac(Sac::new(config, obs_dim, rng)?),
        })
    }

    pub fn config(&self) -> &AgentConfig {
        match self {
            Self::Ddqn(a) => &a.config,
            Self::Ppo(a) => &a.config,
            Self::Sac(a) => &a.config,
        }
    }

    pub fn kind(&self) -> AgentKind {
        self.config().kind
    }

    /// The network whose outputs pick actions.
    pub fn policy_net(&self) -> &Network {
        match self {
            Self::Ddqn(a) => &a.online,
            Self::Ppo(a) => &a.policy,
            Self::Sac(a) => &a.policy,
        }
    }

    /// Chooses an action. `memory` carries the recurrent state between calls
    /// and is reset at every `seq_len` boundary of the episode.
    pub fn act<R: Rng + ?Sized>(
        &self,
        obs: &[f64],
        episode_step: usize,
        memory: &mut Option<LstmState>,
        mode: ActMode,
        rng: &mut R,
    ) -> Result<Decision, AgentError> {
        let net = self.policy_net();
        let x = scale_observation(obs);
        let out = match net.topology().lstm {
            Some(n) => {
                if memory.is_none() || episode_step % self.config().seq_len == 0 {
                    *memory = Some(LstmState::zeros(n));
                }
                net.predict(&x, memory.as_mut())?
            }
            None => net.predict(&x, None)?,
        };
        Ok(match self {
            Self::Ddqn(a) => a.choose(&out, mode, rng),
            Self::Ppo(_) | Self::Sac(_) => sample_categorical(&out, mode, rng),
        })
    }

    /// Records one environment transition and runs whatever learning it triggers.
    pub fn observe<R: Rng + ?Sized>(&mut self, transition: Transition, decision: Decision, global_step: u64, rng: &mut R) -> Result<Option<UpdateStats>, AgentError> {
        if !transition.is_finite() {
            return Err(AgentError::InvalidConfig(format!("non-finite transition at episode {} step {}", transition.episode, transition.step)));
        }
        let scale = self.config().reward_scale;
        let t = Transition { obs: scale_observation(&transition.obs), next_obs: scale_observation(&transition.next_obs), reward: transition.reward * scale, ..transition };
        match self {
            Self::Ddqn(a) => a.observe(t, global_step, rng),
            Self::Ppo(a) => a.observe(t, decision.log_prob, rng),
            Self::Sac(a) => a.observe(t, rng),
        }
    }

    pub fn to_checkpoint(&self, seed: u64, metadata: &str) -> Checkpoint {
        match self {
            Self::Ddqn(a) => a.to_checkpoint(seed, metadata),
            Self::Ppo(a) => a.to_checkpoint(seed, metadata),
            Self::Sac(a) => a.to_checkpoint(seed, metadata),
        }
    }

    /// Restores parameters and optimizer state; the topology string must match exactly.
    pub fn load_checkpoint(&mut self, ck: &Checkpoint) -> Result<(), CheckpointError> {
        let expected = self.topology_descriptor();
        if ck.topology != expected {
            return Err(CheckpointError::Topology { expected, found: ck.topology.clone() });
        }
        match self {
            Self::Ddqn(a) => a.load_checkpoint(ck),
            Self::Ppo(a) => a.load_checkpoint(ck),
            Self::Sac(a) => a.load_checkpoint(ck),
        }
    }

    pub fn topology_descriptor(&self) -> String {
        format!("{}:{}", self.kind(), self.policy_net().topology())
    }
}

fn sample_categorical<R: Rng + ?Sized>(logits: &[f64], mode: ActMode, rng: &mut R) -> Decision {
    let d = crate::nn::categorical(logits);
    let action = match mode {
        ActMode::Greedy => crate::nn::argmax(&d.probs),
        ActMode::Explore { .. } => usize::from(rng.gen::<f64>() >= d.probs[0]),
    };
    Decision { action, log_prob: d.log_probs[action] }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn epsilon_schedule_examples() {
        let c = AgentConfig::default();
        assert_eq!(epsilon_schedule(0, &c), 1.0);
        assert!((epsilon_schedule(2500, &c) - 0.505).abs() < 1e-15);
        assert_eq!(epsilon_schedule(5000, &c), 0.01);
        assert_eq!(epsilon_schedule(10_000, &c), 0.01);
    }

    #[test]
    fn beta_anneals_to_one() {
        let c = AgentConfig::default();
        assert_eq!(beta_schedule(0, &c), 0.4);
        assert!((beta_schedule(25_000, &c) - 0.7).abs() < 1e-15);
        assert_eq!(beta_schedule(80_000, &c), 1.0);
    }

    #[test]
    fn config_validation() {
        assert!(AgentConfig::default().validate().is_ok());
        for c in [
            AgentConfig { gamma: 0.0, ..Default::default() },
            AgentConfig { epsilon_end: 0.5, epsilon_start: 0.1, ..Default::default() },
            AgentConfig { batch_size: 0, ..Default::default() },
            AgentConfig { per_alpha: 1.5, ..Default::default() },
        ] {
            assert!(c.validate().is_err(), "{c:?}");
        }
    }

    #[test]
    fn kind_names_roundtrip() {
        for k in AgentKind::ALL {
            assert_eq!(AgentKind::parse(k.name()), Some(k));
        }
        assert_eq!(AgentKind::parse("dqn"), None);
    }

    #[test]
    fn every_agent_emits_binary_actions() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        for kind in AgentKind::ALL {
            let agent = Agent::new(AgentConfig { kind, ..Default::default() }, 12, &mut rng).unwrap();
            let mut memory = None;
            for step in 0..20 {
                let obs: Vec<f64> = (0..12).map(|_| rng.gen_range(-5.0..5.0)).collect();
                for mode in [ActMode::Greedy, ActMode::Explore { step: step as u64 }] {
                    let d = agent.act(&obs, step, &mut memory, mode, &mut rng).unwrap();
                    assert!(d.action <= 1);
                }
            }
        }
    }
}
