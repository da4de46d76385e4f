use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("longitudinal speed {v_x} m/s is at or below the slip-angle floor")]
    DegenerateSpeed { v_x: f64 },
    #[error("integration step must be positive, got {0}")]
    InvalidStep(f64),
    #[error("integration produced a non-finite state")]
    NonFinite,
    #[error("invalid vehicle parameters: {0}")]
    InvalidParams(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OcpError {
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error("sequence length mismatch: expected {expected}, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("invalid OCP configuration: {0}")]
    InvalidConfig(String),
    #[error("initial state is not finite")]
    NonFiniteState,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error(transparent)]
    Ocp(#[from] OcpError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error("episode already terminated; call reset first")]
    EpisodeTerminated,
    #[error("invalid environment configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NnError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("backward called with a cache that does not match the network")]
    StaleCache,
    #[error("topology mismatch: expected {expected}, found {found}")]
    TopologyMismatch { expected: String, found: String },
    #[error("invalid topology: {0}")]
    InvalidTopology(String),
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a checkpoint file (bad magic)")]
    BadMagic,
    #[error("unsupported checkpoint version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupt checkpoint at byte offset {offset}: {reason}")]
    Corrupt { offset: usize, reason: String },
    #[error("checkpoint is missing parameter block `{0}`")]
    MissingBlock(String),
    #[error("checkpoint block `{name}` has {found} values, expected {expected}")]
    BlockSize { name: String, expected: usize, found: usize },
    #[error("checkpoint topology `{found}` does not match `{expected}`")]
    Topology { expected: String, found: String },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AgentError {
    #[error("replay buffer is empty")]
    EmptyBuffer,
    #[error("replay index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("rollout was collected by policy version {collected}, current version is {current}")]
    StaleRollout { collected: u64, current: u64 },
    #[error("invalid agent configuration: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Ocp(#[from] OcpError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("config error: {0}")]
    Config(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("non-finite loss at step {step}: {detail}")]
    NonFiniteLoss { step: u64, detail: String },
    #[error("metrics trace is empty")]
    EmptyTrace,
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
