use std::ops::Range;

use rand::seq::SliceRandom;
use rand::Rng;

use super::{sequence_input, AgentConfig, Transition, UpdateStats};
use crate::error::{AgentError, CheckpointError};
use crate::nn::{categorical, Adam, Checkpoint, Network, SeqBatch, Topology};

/// `min(r·A, clip(r, 1−ε, 1+ε)·A)`.
pub fn clipped_surrogate(ratio: f64, advantage: f64, clip: f64) -> f64 {
    (ratio * advantage).min(ratio.clamp(1.0 - clip, 1.0 + clip) * advantage)
}

/// Generalized advantage estimates and value targets. `continues[t]` says
/// whether step `t + 1` of the slice belongs to the same trajectory as `t`.
pub fn gae(
    rewards: &[f64],
    values: &[f64],
    next_values: &[f64],
    dones: &[bool],
    continues: &[bool],
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let delta = rewards[t] + gamma * live * next_values[t] - values[t];
        if !continues[t] || dones[t] {
            running = 0.0;
        }
        running = delta + gamma * lambda * live * running;
        adv[t] = running;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, returns)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RolloutStep {
    pub transition: Transition,
    /// Behaviour log-probability recorded when the action was taken.
    pub log_prob: f64,
}

#[derive(Debug, Clone)]
pub struct Ppo {
    pub config: AgentConfig,
    pub policy: Network,
    pub value: Network,
    pub policy_adam: Adam,
    pub value_adam: Adam,
    pub rollout: Vec<RolloutStep>,
    rollout_version: Option<u64>,
    pub updates: u64,
}

impl Ppo {
    pub fn new<R: Rng + ?Sized>(config: AgentConfig, obs_dim: usize, rng: &mut R) -> Self {
        let recurrent = config.kind.is_recurrent();
        let policy = Network::new(Topology::trigger_net(obs_dim, 2, recurrent), rng);
        let value = Network::new(Topology::trigger_net(obs_dim, 1, recurrent), rng);
        let policy_adam = Adam::new(config.adam.clone(), &policy);
        let value_adam = Adam::new(config.adam.clone(), &value);
        Self { config, policy, value, policy_adam, value_adam, rollout: Vec::new(), rollout_version: None, updates: 0 }
    }

    fn chunk_len(&self) -> usize {
        if self.config.kind.is_recurrent() {
            self.config.seq_len
        } else {
            1
        }
    }

    pub(crate) fn observe<R: Rng + ?Sized>(&mut self, t: Transition, log_prob: f64, rng: &mut R) -> Result<Option<UpdateStats>, AgentError> {
        self.rollout_version.get_or_insert(self.policy.version());
        let at_boundary = t.done || (t.step + 1) % self.config.seq_len == 0 || !self.config.kind.is_recurrent();
        self.rollout.push(RolloutStep { transition: t, log_prob });
        if self.rollout.len() >= self.config.ppo_rollout && at_boundary {
            return self.update(rng).map(Some);
        }
        Ok(None)
    }

    /// Rollout positions grouped into episode runs aligned to the acting-time state resets.
    fn chunks(&self) -> Vec<Range<usize>> {
        let len = self.chunk_len();
        let mut out: Vec<Range<usize>> = Vec::new();
        for (i, s) in self.rollout.iter().enumerate() {
            let t = &s.transition;
            let continues = i > 0 && {
                let p = &self.rollout[i - 1].transition;
                p.episode == t.episode && p.step + 1 == t.step && t.step % len != 0 && !p.done
            };
            match out.last_mut() {
                Some(r) if continues => r.end = i + 1,
                _ => out.push(i..i + 1),
            }
        }
        out
    }

    fn chunk_input(&self, chunks: &[Range<usize>]) -> (SeqBatch, Vec<usize>) {
        let seqs: Vec<Vec<&Transition>> = chunks.iter().map(|r| self.rollout[r.clone()].iter().map(|s| &s.transition).collect()).collect();
        sequence_input(&seqs)
    }

    /// Current log-probabilities of the stored actions, in rollout order.
    pub fn log_probs(&self) -> Result<Vec<f64>, AgentError> {
        let chunks = self.chunks();
        let (x, _) = self.chunk_input(&chunks);
        let (logits, _) = self.policy.forward(&x, None)?;
        let mut out = vec![0.0; self.rollout.len()];
        for (b, r) in chunks.iter().enumerate() {
            for (t, i) in r.clone().enumerate() {
                out[i] = categorical(logits.at(t, b)).log_probs[self.rollout[i].transition.action];
            }
        }
        Ok(out)
    }

    /// Probability ratios `π_new / π_old` over the pending rollout.
    pub fn ratios(&self) -> Result<Vec<f64>, AgentError> {
        Ok(self.log_probs()?.iter().zip(&self.rollout).map(|(lp, s)| (lp - s.log_prob).exp()).collect())
    }

    /// Runs the clipped-surrogate epochs over the pending rollout and clears it.
    pub fn update<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<UpdateStats, AgentError> {
        if self.rollout.is_empty() {
            return Err(AgentError::EmptyBuffer);
        }
        let collected = self.rollout_version.unwrap_or(self.policy.version());
        if collected != self.policy.version() {
            return Err(AgentError::StaleRollout { collected, current: self.policy.version() });
        }
        let chunks = self.chunks();
        let (x, _) = self.chunk_input(&chunks);
        let (v, _) = self.value.forward(&x, None)?;
        let n = self.rollout.len();
        let (mut values, mut next_values) = (vec![0.0; n], vec![0.0; n]);
        for (b, r) in chunks.iter().enumerate() {
            for (t, i) in r.clone().enumerate() {
                values[i] = v.at(t, b)[0];
                next_values[i] = v.at(t + 1, b)[0];
            }
        }
        let rewards: Vec<f64> = self.rollout.iter().map(|s| s.transition.reward).collect();
        let dones: Vec<bool> = self.rollout.iter().map(|s| s.transition.done).collect();
        let continues: Vec<bool> = (0..n)
            .map(|i| {
                self.rollout.get(i + 1).is_some_and(|nx| {
                    let t = &self.rollout[i].transition;
                    nx.transition.episode == t.episode && nx.transition.step == t.step + 1
                })
            })
            .collect();
        let (mut adv, returns) = gae(&rewards, &values, &next_values, &dones, &continues, self.config.gamma, self.config.gae_lambda);
        let mean = adv.iter().sum::<f64>() / n as f64;
        let std = (adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / n as f64).sqrt();
        adv.iter_mut().for_each(|a| *a = (*a - mean) / (std + 1e-8));

        let per_batch = (self.config.ppo_minibatch / self.chunk_len()).max(1);
        let mut order: Vec<usize> = (0..chunks.len()).collect();
        let mut stats = UpdateStats::default();
        let mut batches = 0usize;
        for _ in 0..self.config.ppo_epochs {
            order.shuffle(rng);
            for group in order.chunks(per_batch) {
                let picked: Vec<Range<usize>> = group.iter().map(|c| chunks[*c].clone()).collect();
                let (loss, entropy) = self.minibatch_step(&picked, &adv, &returns)?;
                stats.loss += loss;
                stats.entropy += entropy;
                batches += 1;
            }
        }
        stats.loss /= batches as f64;
        stats.entropy /= batches as f64;
        self.rollout.clear();
        self.rollout_version = None;
        self.updates += 1;
        Ok(stats)
    }

    fn minibatch_step(&mut self, chunks: &[Range<usize>], adv: &[f64], returns: &[f64]) -> Result<(f64, f64), AgentError> {
        let (x, _) = self.chunk_input(chunks);
        let count: usize = chunks.iter().map(|r| r.len()).sum();
        let inv = 1.0 / count as f64;
        let (clip, c_e, c_v) = (self.config.ppo_clip, self.config.entropy_coef, self.config.value_coef);

        let (logits, pcache) = self.policy.forward(&x, None)?;
        let (values, vcache) = self.value.forward(&x, None)?;
        let mut d_logits = SeqBatch::zeros(logits.steps, logits.batch, 2);
        let mut d_values = SeqBatch::zeros(values.steps, values.batch, 1);
        let (mut loss, mut entropy) = (0.0, 0.0);
        for (b, r) in chunks.iter().enumerate() {
            for (t, i) in r.clone().enumerate() {
                let step = &self.rollout[i];
                let a = step.transition.action;
                let d = categorical(logits.at(t, b));
                let ratio = (d.log_probs[a] - step.log_prob).exp();
                let surrogate = clipped_surrogate(ratio, adv[i], clip);
                let err = values.at(t, b)[0] - returns[i];
                loss += (-surrogate - c_e * d.entropy + c_v * err * err) * inv;
                entropy += d.entropy * inv;
                // The unclipped branch is the active one exactly when it attains the minimum.
                let d_logp = if ratio * adv[i] <= surrogate { -ratio * adv[i] * inv } else { 0.0 };
                let g = d_logits.at_mut(t, b);
                for j in 0..2 {
                    let onehot = if j == a { 1.0 } else { 0.0 };
                    g[j] = d_logp * (onehot - d.probs[j]) + c_e * d.probs[j] * (d.log_probs[j] + d.entropy) * inv;
                }
                d_values.at_mut(t, b)[0] = 2.0 * c_v * err * inv;
            }
        }
        for (net, adam, cache, grad) in [
            (&mut self.policy, &mut self.policy_adam, &pcache, &d_logits),
            (&mut self.value, &mut self.value_adam, &vcache, &d_values),
        ] {
            net.zero_grad();
            net.backward(cache, grad)?;
            if self.config.grad_clip > 0.0 {
                net.clip_grad_norm(self.config.grad_clip);
            }
            adam.step(net)?;
        }
        Ok((loss, entropy))
    }

    pub(crate) fn to_checkpoint(&self, seed: u64, metadata: &str) -> Checkpoint {
        let mut ck = Checkpoint::new(seed, format!("{}:{}", self.config.kind, self.policy.topology()), metadata);
        ck.push_network("policy", &self.policy);
        ck.push_network("value", &self.value);
        ck.push_adam("policy_adam", &self.policy_adam, &self.policy);
        ck.push_adam("value_adam", &self.value_adam, &self.value);
        ck.push("updates", &[self.updates as f64]);
        ck
    }

    pub(crate) fn load_checkpoint(&mut self, ck: &Checkpoint) -> Result<(), CheckpointError> {
        let updates = ck.block("updates")?;
        ck.load_network("policy", &mut self.policy)?;
        ck.load_network("value", &mut self.value)?;
        ck.load_adam("policy_adam", &mut self.policy_adam, &self.policy)?;
        ck.load_adam("value_adam", &mut self.value_adam, &self.value)?;
        self.updates = updates.first().copied().unwrap_or(0.0) as u64;
        self.rollout.clear();
        self.rollout_version = None;
        Ok(())
    }
}
