use std::path::Path;

use super::metrics::{compute_metrics, EpisodeMetrics};
use super::{rng_stream, RunConfig, Stream};
use crate::agents::{epsilon_schedule, ActMode, Agent, AgentKind, Transition};
use crate::empc::TriggerAction;
use crate::error::CheckpointError;
use crate::nn::Checkpoint;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeLog {
    pub episode: u64,
    /// Global step count at the end of the episode.
    pub end_step: u64,
    pub metrics: EpisodeMetrics,
    /// Mean update loss over the episode (zero when no update ran).
    pub loss: f64,
    pub exploration: f64,
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub agent: Agent,
    pub log: Vec<EpisodeLog>,
}

/// Episode loop: act, simulate the eMPC step, store the transition, update,
/// advance. Stops when the step or episode budget is reached; a partially
/// run last episode is not logged.
pub fn train(config: &RunConfig, mut on_episode: impl FnMut(&EpisodeLog)) -> Result<TrainOutcome> {
    config.validate()?;
    let seed = config.train.seed;
    let mut env = config.env()?;
    let obs_dim = env.observation().to_vec().len();
    let mut agent = Agent::new(config.agent.clone(), obs_dim, &mut rng_stream(seed, Stream::Init))?;
    let mut explore = rng_stream(seed, Stream::Exploration);
    let mut replay = rng_stream(seed, Stream::Replay);
    let (max_steps, max_episodes) = config.train.budget(config.agent.kind);
    let mut log = Vec::new();
    let mut global = 0u64;
    let mut last_entropy = std::f64::consts::LN_2;

    for episode in 0..max_episodes {
        if global >= max_steps {
            break;
        }
        let mut obs = env.reset();
        let mut memory = None;
        let mut costs = Vec::with_capacity(env.episode_steps());
        let (mut ret, mut penalty, mut forced, mut solve_ms) = (0.0, 0.0, 0usize, 0.0);
        let (mut loss_sum, mut entropy_sum, mut updates) = (0.0, 0.0, 0usize);
        while !env.is_done() && global < max_steps {
            let s = obs.to_vec();
            let decision = agent.act(&s, env.step_index(), &mut memory, ActMode::Explore { step: global }, &mut explore)?;
            let step = env.step_index();
            let out = env.step(TriggerAction::from_index(decision.action))?;
            costs.push((out.info.stage_cost, out.info.applied.effective_action().index()));
            ret += out.reward;
            penalty += out.info.penalty;
            forced += usize::from(out.info.applied.forced);
            solve_ms += out.info.applied.solve_seconds * 1e3;
            let t = Transition { obs: s, action: decision.action, reward: out.reward, next_obs: out.next.to_vec(), done: out.done, episode, step };
            if let Some(stats) = agent.observe(t.clone(), decision, global, &mut replay)? {
                if !stats.loss.is_finite() || !agent.policy_net().is_finite() {
                    log::error!("non-finite update at step {global}: stats {stats:?}, transition {t:?}");
                    return Err(Error::NonFiniteLoss { step: global, detail: format!("episode {episode} step {step}, loss {}, transition {t:?}", stats.loss) });
                }
                loss_sum += stats.loss;
                entropy_sum += stats.entropy;
                updates += 1;
            }
            obs = out.next;
            global += 1;
        }
        if !env.is_done() {
            break;
        }
        let mut metrics = compute_metrics(&costs, penalty, env.rho_c(), env.dt())?;
        metrics.ret = ret;
        metrics.forced = forced;
        metrics.solve_ms = solve_ms;
        if updates > 0 {
            last_entropy = entropy_sum / updates as f64;
        }
        let exploration = match config.agent.kind {
            AgentKind::Ddqn | AgentKind::DdqnLstmPer => epsilon_schedule(global, &config.agent),
            _ => last_entropy,
        };
        let entry = EpisodeLog { episode, end_step: global, metrics, loss: if updates > 0 { loss_sum / updates as f64 } else { 0.0 }, exploration };
        log::debug!(
            "episode {episode} step {global}: R {:.4} E_mpc {:.4} A_f {:.3} loss {:.3e} explore {:.3}",
            metrics.ret,
            metrics.e_mpc,
            metrics.a_f,
            entry.loss,
            exploration
        );
        on_episode(&entry);
        log.push(entry);
    }
    Ok(TrainOutcome { agent, log })
}

/// Writes the agent's parameters and optimizer state; the run configuration
/// travels in the metadata field so the agent can be rebuilt on load.
pub fn save_agent(agent: &Agent, config: &RunConfig, path: impl AsRef<Path>) -> Result<()> {
    agent.to_checkpoint(config.train.seed, &config.to_toml()).save(path)?;
    Ok(())
}

pub fn load_agent(path: impl AsRef<Path>) -> Result<(Agent, RunConfig)> {
    let ck = Checkpoint::load(path)?;
    let config = RunConfig::from_toml(&ck.metadata).map_err(|e| CheckpointError::Corrupt { offset: 0, reason: format!("metadata is not a run configuration: {e}") })?;
    let obs_dim = config.env()?.observation().to_vec().len();
    let mut agent = Agent::new(config.agent.clone(), obs_dim, &mut rng_stream(ck.seed, Stream::Init))?;
    agent.load_checkpoint(&ck)?;
    Ok((agent, config))
}
