use rand::Rng;

use super::{beta_schedule, epsilon_schedule, sequence_input, ActMode, AgentConfig, Decision, ReplayBuffer, Transition, UpdateStats};
use crate::error::{AgentError, CheckpointError, NnError};
use crate::nn::{argmax, Adam, Checkpoint, Network, SeqBatch, Topology};

/// Double Q-learning target: the online net picks the next action, the target net values it.
pub fn ddqn_target(reward: f64, done: bool, gamma: f64, q_online_next: &[f64], q_target_next: &[f64]) -> f64 {
    if done {
        reward
    } else {
        reward + gamma * q_target_next[argmax(q_online_next)]
    }
}

/// Hard copy of `online` into `target` when `step` is a positive multiple of `interval`.
pub fn target_sync(online: &Network, target: &mut Network, step: u64, interval: u64) -> Result<bool, NnError> {
    if step == 0 || step % interval != 0 {
        return Ok(false);
    }
    target.copy_from(online)?;
    Ok(true)
}

#[derive(Debug, Clone)]
pub struct Ddqn {
    pub config: AgentConfig,
    pub online: Network,
    pub target: Network,
    pub adam: Adam,
    pub buffer: ReplayBuffer,
    pub updates: u64,
}

/// Loss and per-transition TD errors `y − Q(s, a)` of one gradient step.
#[derive(Debug, Clone, PartialEq)]
pub struct DdqnStep {
    pub loss: f64,
    pub td_errors: Vec<Vec<f64>>,
}

impl Ddqn {
    pub fn new<R: Rng + ?Sized>(config: AgentConfig, obs_dim: usize, rng: &mut R) -> Result<Self, AgentError> {
        let online = Network::new(Topology::trigger_net(obs_dim, 2, config.kind.is_recurrent()), rng);
        let mut target = Network::zeros(online.topology().clone());
        target.copy_from(&online)?;
        let adam = Adam::new(config.adam.clone(), &online);
        let alpha = if config.kind.is_prioritized() { config.per_alpha } else { 0.0 };
        let buffer = ReplayBuffer::new(config.replay_capacity, alpha, config.per_eps)?;
        Ok(Self { config, online, target, adam, buffer, updates: 0 })
    }

    pub(crate) fn choose<R: Rng + ?Sized>(&self, q: &[f64], mode: ActMode, rng: &mut R) -> Decision {
        let action = match mode {
            ActMode::Greedy => argmax(q),
            ActMode::Explore { step } => {
                if rng.gen::<f64>() < epsilon_schedule(step, &self.config) {
                    rng.gen_range(0..2)
                } else {
                    argmax(q)
                }
            }
        };
        Decision { action, log_prob: 0.0 }
    }

    pub(crate) fn observe<R: Rng + ?Sized>(&mut self, t: Transition, global_step: u64, rng: &mut R) -> Result<Option<UpdateStats>, AgentError> {
        self.buffer.push(t);
        let mut stats = None;
        if self.buffer.len() >= self.config.learning_starts.max(1) {
            let loss = self.update(global_step, rng)?;
            stats = Some(UpdateStats { loss, entropy: 0.0 });
        }
        target_sync(&self.online, &mut self.target, global_step + 1, self.config.target_sync)?;
        Ok(stats)
    }

    /// Samples a batch (aligned sequences for recurrent nets), takes one Adam
    /// step and refreshes priorities when replay is prioritized.
    pub fn update<R: Rng + ?Sized>(&mut self, global_step: u64, rng: &mut R) -> Result<f64, AgentError> {
        let beta = beta_schedule(global_step, &self.config);
        let (indices, weights) = if self.config.kind.is_recurrent() {
            let n = (self.config.batch_size / self.config.seq_len).max(1);
            let s = self.buffer.sample_sequences(n, self.config.seq_len, beta, rng)?;
            (s.sequences, s.weights)
        } else {
            let s = self.buffer.sample(self.config.batch_size, beta, rng)?;
            (s.indices.into_iter().map(|i| vec![i]).collect(), s.weights)
        };
        let seqs: Vec<Vec<Transition>> =
            indices.iter().map(|seq| seq.iter().map(|i| self.buffer.get(*i).cloned()).collect()).collect::<Result<_, _>>()?;
        let step = self.learn(&seqs, &weights)?;
        if self.config.kind.is_prioritized() {
            let flat: Vec<usize> = indices.into_iter().flatten().collect();
            let td: Vec<f64> = step.td_errors.into_iter().flatten().collect();
            self.buffer.update_priorities(&flat, &td)?;
        }
        Ok(step.loss)
    }

    /// One gradient step on `Σ_b w_b Σ_t (y_t − Q(s_t, a_t))² / n` over the given sequences.
    pub fn learn(&mut self, seqs: &[Vec<Transition>], weights: &[f64]) -> Result<DdqnStep, AgentError> {
        if seqs.is_empty() {
            return Err(AgentError::EmptyBuffer);
        }
        let refs: Vec<Vec<&Transition>> = seqs.iter().map(|s| s.iter().collect()).collect();
        let (x, lens) = sequence_input(&refs);
        let (q, cache) = self.online.forward(&x, None)?;
        let (q_target, _) = self.target.forward(&x, None)?;
        let n: usize = lens.iter().sum();
        let mut d_out = SeqBatch::zeros(q.steps, q.batch, q.dim);
        let mut loss = 0.0;
        let mut td_errors = Vec::with_capacity(seqs.len());
        for (b, s) in seqs.iter().enumerate() {
            let mut td_seq = Vec::with_capacity(s.len());
            for (t, tr) in s.iter().enumerate() {
                let y = ddqn_target(tr.reward, tr.done, self.config.gamma, q.at(t + 1, b), q_target.at(t + 1, b));
                let delta = y - q.at(t, b)[tr.action];
                loss += weights[b] * delta * delta / n as f64;
                d_out.at_mut(t, b)[tr.action] = -2.0 * weights[b] * delta / n as f64;
                td_seq.push(delta);
            }
            td_errors.push(td_seq);
        }
        self.online.zero_grad();
        self.online.backward(&cache, &d_out)?;
        if self.config.grad_clip > 0.0 {
            self.online.clip_grad_norm(self.config.grad_clip);
        }
        self.adam.step(&mut self.online)?;
        self.updates += 1;
        Ok(DdqnStep { loss, td_errors })
    }

    pub(crate) fn to_checkpoint(&self, seed: u64, metadata: &str) -> Checkpoint {
        let mut ck = Checkpoint::new(seed, format!("{}:{}", self.config.kind, self.online.topology()), metadata);
        ck.push_network("online", &self.online);
        ck.push_network("target", &self.target);
        ck.push_adam("adam", &self.adam, &self.online);
        ck.push("updates", &[self.updates as f64]);
        ck
    }

    pub(crate) fn load_checkpoint(&mut self, ck: &Checkpoint) -> Result<(), CheckpointError> {
        let updates = ck.block("updates")?;
        ck.load_network("online", &mut self.online)?;
        ck.load_network("target", &mut self.target)?;
        ck.load_adam("adam", &mut self.adam, &self.online)?;
        self.updates = updates.first().copied().unwrap_or(0.0) as u64;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    use super::*;
    use crate::agents::AgentKind;

    #[test]
    fn hand_evaluated_target_and_loss() {
        let y = ddqn_target(1.0, false, 0.99, &[0.5, 0.1], &[2.0, -7.0]);
        assert!((y - 2.98).abs() < 1e-12);
        assert!(((y - 3.0f64).powi(2) - 4e-4).abs() < 1e-12);
    }

    #[test]
    fn terminal_target_is_reward() {
        assert_eq!(ddqn_target(-0.37, true, 0.99, &[1e9, 0.0], &[1e9, 1e9]), -0.37);
    }

    #[test]
    fn shared_estimator_gives_max_target() {
        let q = [0.3, 1.7];
        assert_eq!(ddqn_target(0.5, false, 0.9, &q, &q), 0.5 + 0.9 * 1.7);
    }

    #[test]
    fn online_selects_and_target_evaluates() {
        // Counters record which estimator each role consulted.
        let (mut selected, mut evaluated) = (Vec::new(), Vec::new());
        let online = [[0.0, 1.0], [2.0, 1.0]];
        let target = [[5.0, -1.0], [-3.0, 4.0]];
        for (qo, qt) in online.iter().zip(&target) {
            let a = argmax(qo);
            selected.push(a);
            let y = ddqn_target(0.0, false, 1.0, qo, qt);
            evaluated.push(y);
        }
        assert_eq!(selected, vec![1, 0]);
        assert_eq!(evaluated, vec![-1.0, -3.0], "target values at the online argmax, not the target max");
    }

    #[test]
    fn agent_targets_use_disagreeing_nets() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let config = AgentConfig { kind: AgentKind::Ddqn, gamma: 1.0, adam: crate::nn::AdamConfig { lr: 1e-12, ..Default::default() }, ..Default::default() };
        let mut agent = Ddqn::new(config, 12, &mut rng).unwrap();
        agent.target = Network::new(agent.online.topology().clone(), &mut rng);
        let obs: Vec<f64> = (0..12).map(|i| 0.1 * i as f64).collect();
        let next: Vec<f64> = (0..12).map(|i| -0.2 * i as f64 + 0.5).collect();
        let qo = agent.online.predict(&next, None).unwrap();
        let qt = agent.target.predict(&next, None).unwrap();
        let q = agent.online.predict(&obs, None).unwrap();
        let t = Transition { obs, action: 1, reward: 0.25, next_obs: next, done: false, episode: 0, step: 0 };
        let step = agent.learn(&[vec![t]], &[1.0]).unwrap();
        let expected = 0.25 + qt[argmax(&qo)] - q[1];
        assert!((step.td_errors[0][0] - expected).abs() < 1e-12);
        assert!((step.loss - expected * expected).abs() < 1e-12);
    }

    #[test]
    fn sync_schedule() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let topo = Topology::trigger_net(12, 2, false);
        let online = Network::new(topo.clone(), &mut rng);
        let mut target = Network::new(topo, &mut rng);
        let before: Vec<Vec<f64>> = target.blocks().iter().map(|(_, p)| p.value.clone()).collect();
        assert!(!target_sync(&online, &mut target, 999, 1000).unwrap());
        assert_eq!(before, target.blocks().iter().map(|(_, p)| p.value.clone()).collect::<Vec<_>>());
        assert!(target_sync(&online, &mut target, 1000, 1000).unwrap());
        let synced: Vec<Vec<f64>> = target.blocks().iter().map(|(_, p)| p.value.clone()).collect();
        assert_eq!(synced, online.blocks().iter().map(|(_, p)| p.value.clone()).collect::<Vec<_>>());
        assert!(target_sync(&online, &mut target, 2000, 1000).unwrap());
        assert_eq!(synced, target.blocks().iter().map(|(_, p)| p.value.clone()).collect::<Vec<_>>());
    }

    #[test]
    fn mismatched_topologies_are_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let online = Network::new(Topology::trigger_net(12, 2, false), &mut rng);
        let mut target = Network::new(Topology::trigger_net(12, 2, true), &mut rng);
        assert!(matches!(target_sync(&online, &mut target, 1000, 1000), Err(NnError::TopologyMismatch { .. })));
    }

    #[test]
    fn fits_a_constant_reward_chain() {
        // Terminal one-step episodes with reward depending on the action: Q should approach it.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let config = AgentConfig { kind: AgentKind::Ddqn, adam: crate::nn::AdamConfig { lr: 1e-3, ..Default::default() }, batch_size: 16, ..Default::default() };
        let mut agent = Ddqn::new(config, 12, &mut rng).unwrap();
        let obs = vec![0.1; 12];
        for k in 0..400 {
            let a = k % 2;
            let t = Transition { obs: obs.clone(), action: a, reward: if a == 1 { -1.0 } else { 0.5 }, next_obs: obs.clone(), done: true, episode: k as u64, step: 0 };
            agent.observe(t, k as u64, &mut rng).unwrap();
        }
        let q = agent.online.predict(&obs, None).unwrap();
        assert!((q[0] - 0.5).abs() < 0.05 && (q[1] + 1.0).abs() < 0.05, "{q:?}");
    }

    #[test]
    fn recurrent_per_update_refreshes_priorities() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let config = AgentConfig { kind: AgentKind::DdqnLstmPer, batch_size: 16, learning_starts: 20, ..Default::default() };
        let mut agent = Ddqn::new(config, 12, &mut rng).unwrap();
        for k in 0..40usize {
            let obs: Vec<f64> = (0..12).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let t = Transition { obs: obs.clone(), action: k % 2, reward: -0.1, next_obs: obs, done: k % 20 == 19, episode: (k / 20) as u64, step: k % 20 };
            agent.observe(t, k as u64, &mut rng).unwrap();
        }
        assert!(agent.updates > 0);
        assert!(agent.buffer.priorities().iter().all(|p| *p > 0.0));
        assert!(agent.buffer.priorities().iter().any(|p| *p != 1.0));
    }
}
