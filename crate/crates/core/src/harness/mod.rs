//! Training loop, evaluation, metrics, run configuration and artifact I/O.

mod eval;
mod metrics;
mod output;
mod policy;
mod train;

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::agents::{AgentConfig, AgentKind};
use crate::dynamics::VehicleParams;
use crate::empc::{EmpcConfig, Env};
use crate::ocp::OcpConfig;
use crate::{Error, Result};

pub use eval::{calibrate_threshold, evaluate, run_episode, Calibration, EvalSummary};
pub use metrics::{compute_metrics, EpisodeMetrics};
pub use output::{write_learning_curve, write_metrics, write_trace, LearningCurveRow, MetricsRow};
pub use policy::{AgentPolicy, AlwaysTrigger, NeverTrigger, ThresholdPolicy, TriggerPolicy};
pub use train::{load_agent, save_agent, train, EpisodeLog, TrainOutcome};

/// Steps per episode `T_e` follow from `empc.episode_steps`, the step size from `ocp.dt`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Trigger-cost weight `ρ_c`.
    pub rho_c: f64,
    pub seed: u64,
    /// Environment-step budget; with neither limit set, off-policy agents get
    /// 50,000 steps and on-policy agents 1000 episodes.
    pub steps: Option<u64>,
    /// Episode budget `M`.
    pub episodes: Option<u64>,
    pub eval_episodes: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { rho_c: 0.0, seed: 0, steps: None, episodes: None, eval_episodes: 10 }
    }
}

impl TrainConfig {
    /// `(max steps, max episodes)`.
    pub fn budget(&self, kind: AgentKind) -> (u64, u64) {
        match (self.steps, self.episodes) {
            (None, None) if kind.is_on_policy() => (u64::MAX, 1000),
            (None, None) => (50_000, u64::MAX),
            (s, e) => (s.unwrap_or(u64::MAX), e.unwrap_or(u64::MAX)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub vehicle: VehicleParams,
    pub ocp: OcpConfig,
    pub empc: EmpcConfig,
    pub agent: AgentConfig,
    pub train: TrainConfig,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let c: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        c.validate()?;
        Ok(c)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run configuration serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.agent.validate()?;
        if !(self.train.rho_c >= 0.0) {
            return Err(Error::Config(format!("rho_c must be nonnegative, got {}", self.train.rho_c)));
        }
        if self.train.eval_episodes == 0 {
            return Err(Error::Config("eval_episodes must be positive".into()));
        }
        self.env()?;
        Ok(())
    }

    pub fn env(&self) -> Result<Env> {
        Ok(Env::new(self.vehicle, self.ocp.clone(), self.empc.clone(), self.train.rho_c)?)
    }
}

/// Independent random streams derived from the root seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Init = 1,
    Exploration = 2,
    Replay = 3,
    Evaluation = 4,
}

pub fn rng_stream(seed: u64, stream: Stream) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream as u64);
    rng
}
