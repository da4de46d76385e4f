use rand::Rng;

use super::{AgentConfig, ReplayBuffer, Transition, UpdateStats};
use crate::error::{AgentError, CheckpointError};
use crate::nn::{categorical, Adam, Checkpoint, Network, SeqBatch, Topology};

/// Soft state value of the next state:
/// `y = r + γ(1−d) Σ_a π(a|s') [min(Q̄₁, Q̄₂)(s', a) − α log π(a|s')]`.
pub fn sac_critic_target(reward: f64, done: bool, gamma: f64, alpha: f64, probs: &[f64], log_probs: &[f64], q1: &[f64], q2: &[f64]) -> f64 {
    if done {
        return reward;
    }
    let soft: f64 = (0..probs.len()).map(|a| probs[a] * (q1[a].min(q2[a]) - alpha * log_probs[a])).sum();
    reward + gamma * soft
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct ScalarAdam {
    m: f64,
    v: f64,
    t: u64,
}

impl ScalarAdam {
    fn step(&mut self, x: &mut f64, g: f64, lr: f64, b1: f64, b2: f64, eps: f64) {
        self.t += 1;
        self.m = b1 * self.m + (1.0 - b1) * g;
        self.v = b2 * self.v + (1.0 - b2) * g * g;
        let mh = self.m / (1.0 - b1.powi(self.t as i32));
        let vh = self.v / (1.0 - b2.powi(self.t as i32));
        *x -= lr * mh / (vh.sqrt() + eps);
    }
}

#[derive(Debug, Clone)]
pub struct Sac {
    pub config: AgentConfig,
    pub policy: Network,
    pub q1: Network,
    pub q2: Network,
    pub q1_target: Network,
    pub q2_target: Network,
    pub policy_adam: Adam,
    pub q1_adam: Adam,
    pub q2_adam: Adam,
    pub log_alpha: f64,
    alpha_adam: ScalarAdam,
    pub buffer: ReplayBuffer,
    pub updates: u64,
}

fn batch_of(rows: impl Iterator<Item = Vec<f64>>) -> SeqBatch {
    let rows: Vec<Vec<f64>> = rows.collect();
    let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
    SeqBatch::from_rows(&refs)
}

impl Sac {
    pub fn new<R: Rng + ?Sized>(config: AgentConfig, obs_dim: usize, rng: &mut R) -> Result<Self, AgentError> {
        let topo = Topology::trigger_net(obs_dim, 2, false);
        let policy = Network::new(topo.clone(), rng);
        let q1 = Network::new(topo.clone(), rng);
        let q2 = Network::new(topo.clone(), rng);
        let mut q1_target = Network::zeros(topo.clone());
        let mut q2_target = Network::zeros(topo);
        q1_target.copy_from(&q1)?;
        q2_target.copy_from(&q2)?;
        let policy_adam = Adam::new(config.adam.clone(), &policy);
        let q1_adam = Adam::new(config.adam.clone(), &q1);
        let q2_adam = Adam::new(config.adam.clone(), &q2);
        let buffer = ReplayBuffer::new(config.replay_capacity, 0.0, config.per_eps)?;
        let log_alpha = config.sac_alpha.max(1e-300).ln();
        Ok(Self {
            config,
            policy,
            q1,
            q2,
            q1_target,
            q2_target,
            policy_adam,
            q1_adam,
            q2_adam,
            log_alpha,
            alpha_adam: ScalarAdam { m: 0.0, v: 0.0, t: 0 },
            buffer,
            updates: 0,
        })
    }

    pub fn alpha(&self) -> f64 {
        if self.config.sac_auto_alpha {
            self.log_alpha.exp()
        } else {
            self.config.sac_alpha
        }
    }

    pub fn target_entropy(&self) -> f64 {
        self.config.sac_target_entropy_ratio * std::f64::consts::LN_2
    }

    pub(crate) fn observe<R: Rng + ?Sized>(&mut self, t: Transition, rng: &mut R) -> Result<Option<UpdateStats>, AgentError> {
        self.buffer.push(t);
        if self.buffer.len() < self.config.learning_starts.max(1) {
            return Ok(None);
        }
        let sample = self.buffer.sample(self.config.batch_size, 1.0, rng)?;
        let batch: Vec<Transition> = sample.indices.iter().map(|i| self.buffer.get(*i).cloned()).collect::<Result<_, _>>()?;
        self.update(&batch).map(Some)
    }

    /// Critic targets for a batch under the current policy, temperature and target critics.
    pub fn critic_targets(&self, batch: &[Transition]) -> Result<Vec<f64>, AgentError> {
        let next = batch_of(batch.iter().map(|t| t.next_obs.clone()));
        let (logits, _) = self.policy.forward(&next, None)?;
        let (q1, _) = self.q1_target.forward(&next, None)?;
        let (q2, _) = self.q2_target.forward(&next, None)?;
        let alpha = self.alpha();
        Ok(batch
            .iter()
            .enumerate()
            .map(|(b, t)| {
                let d = categorical(logits.at(0, b));
                sac_critic_target(t.reward, t.done, self.config.gamma, alpha, &d.probs, &d.log_probs, q1.at(0, b), q2.at(0, b))
            })
            .collect())
    }

    /// Critic, actor and temperature steps followed by Polyak averaging of the target critics.
    pub fn update(&mut self, batch: &[Transition]) -> Result<UpdateStats, AgentError> {
        if batch.is_empty() {
            return Err(AgentError::EmptyBuffer);
        }
        let y = self.critic_targets(batch)?;
        let x = batch_of(batch.iter().map(|t| t.obs.clone()));
        let inv = 1.0 / batch.len() as f64;
        let mut loss = 0.0;
        for (net, adam) in [(&mut self.q1, &mut self.q1_adam), (&mut self.q2, &mut self.q2_adam)] {
            let (q, cache) = net.forward(&x, None)?;
            let mut d = SeqBatch::zeros(1, batch.len(), 2);
            for (b, t) in batch.iter().enumerate() {
                let err = q.at(0, b)[t.action] - y[b];
                loss += err * err * inv;
                d.at_mut(0, b)[t.action] = 2.0 * err * inv;
            }
            net.zero_grad();
            net.backward(&cache, &d)?;
            if self.config.grad_clip > 0.0 {
                net.clip_grad_norm(self.config.grad_clip);
            }
            adam.step(net)?;
        }
        let (actor_loss, entropy) = self.actor_step(&x)?;
        if self.config.sac_auto_alpha {
            let g = self.alpha() * (entropy - self.target_entropy());
            let c = &self.config.adam;
            self.alpha_adam.step(&mut self.log_alpha, g, self.config.sac_alpha_lr, c.beta1, c.beta2, c.eps);
        }
        self.q1_target.soft_update(&self.q1, self.config.sac_tau)?;
        self.q2_target.soft_update(&self.q2, self.config.sac_tau)?;
        self.updates += 1;
        Ok(UpdateStats { loss: loss + actor_loss, entropy })
    }

    /// Minimizes `E_s Σ_a π(a|s) [α log π(a|s) − min(Q₁, Q₂)(s, a)]`; returns
    /// the objective and the mean policy entropy.
    pub fn actor_step(&mut self, x: &SeqBatch) -> Result<(f64, f64), AgentError> {
        let (logits, cache) = self.policy.forward(x, None)?;
        let (q1, _) = self.q1.forward(x, None)?;
        let (q2, _) = self.q2.forward(x, None)?;
        let alpha = self.alpha();
        let n = x.batch * x.steps;
        let inv = 1.0 / n as f64;
        let mut d = SeqBatch::zeros(logits.steps, logits.batch, 2);
        let (mut loss, mut entropy) = (0.0, 0.0);
        for t in 0..x.steps {
            for b in 0..x.batch {
                let dist = categorical(logits.at(t, b));
                let f: Vec<f64> = (0..2).map(|a| alpha * dist.log_probs[a] - q1.at(t, b)[a].min(q2.at(t, b)[a])).collect();
                let mean_f: f64 = dist.probs.iter().zip(&f).map(|(p, f)| p * f).sum();
                loss += mean_f * inv;
                entropy += dist.entropy * inv;
                let g = d.at_mut(t, b);
                for a in 0..2 {
                    g[a] = dist.probs[a] * (f[a] - mean_f) * inv;
                }
            }
        }
        self.policy.zero_grad();
        self.policy.backward(&cache, &d)?;
        if self.config.grad_clip > 0.0 {
            self.policy.clip_grad_norm(self.config.grad_clip);
        }
        self.policy_adam.step(&mut self.policy)?;
        Ok((loss, entropy))
    }

    pub(crate) fn to_checkpoint(&self, seed: u64, metadata: &str) -> Checkpoint {
        let mut ck = Checkpoint::new(seed, format!("{}:{}", self.config.kind, self.policy.topology()), metadata);
        for (name, net) in [("policy", &self.policy), ("q1", &self.q1), ("q2", &self.q2), ("q1_target", &self.q1_target), ("q2_target", &self.q2_target)] {
            ck.push_network(name, net);
        }
        ck.push_adam("policy_adam", &self.policy_adam, &self.policy);
        ck.push_adam("q1_adam", &self.q1_adam, &self.q1);
        ck.push_adam("q2_adam", &self.q2_adam, &self.q2);
        let a = &self.alpha_adam;
        ck.push("alpha", &[self.log_alpha, a.m, a.v, a.t as f64]);
        ck.push("updates", &[self.updates as f64]);
        ck
    }

    pub(crate) fn load_checkpoint(&mut self, ck: &Checkpoint) -> Result<(), CheckpointError> {
        let alpha = ck.block("alpha")?;
        if alpha.len() != 4 {
            return Err(CheckpointError::BlockSize { name: "alpha".into(), expected: 4, found: alpha.len() });
        }
        let updates = ck.block("updates")?;
        ck.load_network("policy", &mut self.policy)?;
        ck.load_network("q1", &mut self.q1)?;
        ck.load_network("q2", &mut self.q2)?;
        ck.load_network("q1_target", &mut self.q1_target)?;
        ck.load_network("q2_target", &mut self.q2_target)?;
        ck.load_adam("policy_adam", &mut self.policy_adam, &self.policy)?;
        ck.load_adam("q1_adam", &mut self.q1_adam, &self.q1)?;
        ck.load_adam("q2_adam", &mut self.q2_adam, &self.q2)?;
        self.log_alpha = alpha[0];
        self.alpha_adam = ScalarAdam { m: alpha[1], v: alpha[2], t: alpha[3] as u64 };
        self.updates = updates.first().copied().unwrap_or(0.0) as u64;
        Ok(())
    }
}
