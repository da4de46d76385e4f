use serde::Serialize;

use crate::{Error, Result};

/// Per-episode evaluation quantities. `ret` is the summed environment reward.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct EpisodeMetrics {
    pub ret: f64,
    /// `Σ ℓ·dt`, plus the failure penalty when the episode ended early.
    pub e_mpc: f64,
    /// Solves per step.
    pub a_f: f64,
    pub triggers: usize,
    pub forced: usize,
    pub steps: usize,
    pub solve_ms: f64,
    pub failed: bool,
}

impl EpisodeMetrics {
    /// `R + E_mpc + ρ_c·Σa`, zero up to rounding.
    pub fn identity_residual(&self, rho_c: f64) -> f64 {
        self.ret + self.e_mpc + rho_c * self.triggers as f64
    }
}

/// Metrics of one episode from its `(stage cost, applied action)` trace.
pub fn compute_metrics(trace: &[(f64, usize)], penalty: f64, rho_c: f64, dt: f64) -> Result<EpisodeMetrics> {
    if trace.is_empty() {
        return Err(Error::EmptyTrace);
    }
    let mut m = EpisodeMetrics { steps: trace.len(), e_mpc: penalty, ret: -penalty, failed: penalty > 0.0, ..Default::default() };
    for &(cost, a) in trace {
        m.e_mpc += cost * dt;
        m.triggers += a;
        m.ret += -cost * dt - rho_c * a as f64;
    }
    m.a_f = m.triggers as f64 / m.steps as f64;
    Ok(m)
}
