use std::path::Path;

use serde::Serialize;

use super::metrics::EpisodeMetrics;
use super::train::EpisodeLog;
use crate::empc::TraceRecord;
use crate::Result;

/// Learning-curve row; holds no timing so identical seeds give identical files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LearningCurveRow {
    pub step: u64,
    pub episode: u64,
    pub loss: f64,
    /// ε for DDQN, mean policy entropy for PPO and SAC.
    pub exploration: f64,
    #[serde(rename = "return")]
    pub ret: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct MetricsRow {
    pub episode: u64,
    #[serde(rename = "R")]
    pub ret: f64,
    #[serde(rename = "E_mpc")]
    pub e_mpc: f64,
    #[serde(rename = "A_f")]
    pub a_f: f64,
    pub forced_triggers: usize,
    pub solve_ms: f64,
}

impl MetricsRow {
    pub fn new(episode: u64, m: &EpisodeMetrics) -> Self {
        Self { episode, ret: m.ret, e_mpc: m.e_mpc, a_f: m.a_f, forced_triggers: m.forced, solve_ms: m.solve_ms }
    }
}

fn write_rows<T: Serialize>(path: &Path, rows: impl IntoIterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_learning_curve(path: impl AsRef<Path>, log: &[EpisodeLog]) -> Result<()> {
    write_rows(
        path.as_ref(),
        log.iter().map(|e| LearningCurveRow { step: e.end_step, episode: e.episode, loss: e.loss, exploration: e.exploration, ret: e.metrics.ret }),
    )
}

pub fn write_metrics(path: impl AsRef<Path>, rows: &[MetricsRow]) -> Result<()> {
    write_rows(path.as_ref(), rows.iter())
}

pub fn write_trace(path: impl AsRef<Path>, trace: &[TraceRecord]) -> Result<()> {
    write_rows(path.as_ref(), trace.iter())
}
