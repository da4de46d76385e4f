//! Event-triggered MPC: the plan buffer, control shifting, the threshold baseline
//! and the RL environment built on top of them.
//!
//! A solve at step `t_p` stores `U = [u_{t_p}, .., u_{t_p+p-1}]` and the predicted
//! states `X = [x_{t_p+1}, .., x_{t_p+p}]`. At step `t_p + k` without a trigger the
//! applied control is `U[k]` (element `k+1` counting from one). When `k` would reach
//! `p` the buffer is exhausted and a solve is forced.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::dynamics::{self, ControlInput, VehicleParams, VehicleState, STATE_DIM};
use crate::error::{EnvError, OcpError};
use crate::ocp::{self, OcpConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TriggerAction {
    Hold = 0,
    Trigger = 1,
}

impl TriggerAction {
    pub fn from_index(a: usize) -> Self {
        if a == 0 {
            Self::Hold
        } else {
            Self::Trigger
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn value(self) -> f64 {
        self as usize as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlanBuffer {
    pub controls: Vec<ControlInput>,
    pub states: Vec<VehicleState>,
    /// Steps elapsed since the event that produced this plan.
    pub elapsed: usize,
    /// Time of that event (s).
    pub event_time: f64,
}

impl PlanBuffer {
    pub fn horizon(&self) -> usize {
        self.controls.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AppliedControl {
    pub control: ControlInput,
    /// An optimization was solved this step.
    pub solved: bool,
    /// The solve was coerced by an exhausted (or empty) buffer.
    pub forced: bool,
    pub solve_seconds: f64,
}

impl AppliedControl {
    /// The action that actually took effect.
    pub fn effective_action(&self) -> TriggerAction {
        if self.solved {
            TriggerAction::Trigger
        } else {
            TriggerAction::Hold
        }
    }
}

/// One eMPC decision: solve and take the first element, or shift the stored plan.
pub fn apply_trigger(
    buffer: Option<&PlanBuffer>,
    action: TriggerAction,
    x_hat: &VehicleState,
    u_prev: Option<ControlInput>,
    time: f64,
    ocp_config: &OcpConfig,
    params: &VehicleParams,
) -> Result<(AppliedControl, PlanBuffer), EnvError> {
    let p = ocp_config.horizon;
    let exhausted = buffer.is_none_or(|b| b.elapsed + 1 >= p.min(b.horizon()));
    if action == TriggerAction::Hold && !exhausted {
        let mut next = buffer.expect("checked above").clone();
        next.elapsed += 1;
        let control = next.controls[next.elapsed];
        return Ok((AppliedControl { control, solved: false, forced: false, solve_seconds: 0.0 }, next));
    }
    let forced = action == TriggerAction::Hold;
    if forced {
        log::debug!("forced trigger at t={time:.2}s: plan buffer exhausted");
    }
    let warm = buffer.map(|b| ocp::shift_warm_start(&b.controls, b.elapsed + 1, p));
    let started = Instant::now();
    let sol = ocp::solve_ocp(x_hat, warm.as_deref(), u_prev, ocp_config, params)?;
    let solve_seconds = started.elapsed().as_secs_f64();
    let control = sol.controls[0];
    let next = PlanBuffer { controls: sol.controls, states: sol.states, elapsed: 0, event_time: time };
    Ok((AppliedControl { control, solved: true, forced, solve_seconds }, next))
}

/// `-stage_cost(x, u) * dt - rho_c * a`.
pub fn reward(x_hat: &VehicleState, u: &ControlInput, action: TriggerAction, rho_c: f64, dt: f64, config: &OcpConfig) -> f64 {
    -ocp::stage_cost(x_hat, u, config) * dt - rho_c * action.value()
}

/// Position deviation between the vehicle and the plan's prediction for the current step.
pub fn plan_deviation(buffer: Option<&PlanBuffer>, x_hat: &VehicleState) -> Option<f64> {
    let b = buffer?;
    // the step about to be decided applies U[elapsed + 1]; its predicted state is X[elapsed]
    let predicted = b.states.get(b.elapsed)?;
    Some((x_hat.l_x - predicted.l_x).hypot(x_hat.l_y - predicted.l_y))
}

/// Triggers when the position deviation strictly exceeds `threshold`.
pub fn threshold_policy(buffer: Option<&PlanBuffer>, x_hat: &VehicleState, threshold: f64) -> TriggerAction {
    match plan_deviation(buffer, x_hat) {
        Some(d) if d <= threshold => TriggerAction::Hold,
        _ => TriggerAction::Trigger,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmpcConfig {
    /// `[l_x, v_x, l_y, v_y, psi, r]` at the start of every episode.
    pub initial_state: [f64; STATE_DIM],
    /// Episode length `T_e` in steps.
    pub episode_steps: usize,
    /// Deviation threshold (m) of the baseline trigger policy.
    pub threshold: f64,
    /// Trigger frequency the baseline threshold is calibrated towards.
    pub calibration_target: f64,
    /// `[T_f, beta_f]` taken as the previously applied control at reset.
    pub initial_control: [f64; 2],
    /// Cost charged, on top of the stage cost, when the vehicle leaves the
    /// model domain and the episode ends early.
    pub failure_penalty: f64,
}

impl Default for EmpcConfig {
    fn default() -> Self {
        Self { initial_state: [0.0, 10.0, 0.0, 0.0, 0.0, 0.0], episode_steps: 100, threshold: 0.5, calibration_target: 0.118, initial_control: [0.0, 0.0], failure_penalty: 500.0 }
    }
}

/// Agent observation: the current state and the buffered prediction for it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvState {
    pub x_hat: VehicleState,
    pub x_bar: VehicleState,
}

pub const OBS_DIM: usize = 2 * STATE_DIM;

impl EnvState {
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(OBS_DIM);
        v.extend_from_slice(&self.x_hat.to_array());
        v.extend_from_slice(&self.x_bar.to_array());
        v
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    pub requested: TriggerAction,
    pub applied: AppliedControl,
    pub stage_cost: f64,
    /// Cost charged when the vehicle leaves the model domain (spin-out); zero otherwise.
    pub penalty: f64,
    /// The episode ended early because the dynamics became undefined.
    pub failed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub next: EnvState,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

/// One row of the per-step trace.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRecord {
    pub step: usize,
    pub t: f64,
    pub l_x: f64,
    pub v_x: f64,
    pub l_y: f64,
    pub v_y: f64,
    pub psi: f64,
    pub r: f64,
    pub torque: f64,
    pub steer: f64,
    pub action: usize,
    pub forced: bool,
    pub reward: f64,
    pub stage_cost: f64,
    pub failed: bool,
}

/// The eMPC closed loop exposed as an episodic environment.
#[derive(Debug, Clone)]
pub struct Env {
    params: VehicleParams,
    ocp: OcpConfig,
    config: EmpcConfig,
    rho_c: f64,
    x: VehicleState,
    buffer: Option<PlanBuffer>,
    last_control: Option<ControlInput>,
    step_index: usize,
    done: bool,
    trace: Option<Vec<TraceRecord>>,
}

impl Env {
    pub fn new(params: VehicleParams, ocp: OcpConfig, config: EmpcConfig, rho_c: f64) -> Result<Self, EnvError> {
        params.validate()?;
        ocp.validate()?;
        if config.episode_steps == 0 {
            return Err(EnvError::InvalidConfig("episode_steps must be positive".into()));
        }
        if !(config.failure_penalty >= 0.0) {
            return Err(EnvError::InvalidConfig(format!("failure_penalty must be nonnegative, got {}", config.failure_penalty)));
        }
        if !(rho_c >= 0.0) {
            return Err(EnvError::InvalidConfig(format!("rho_c must be nonnegative, got {rho_c}")));
        }
        let x = VehicleState::from_array(config.initial_state);
        Ok(Self { params, ocp, config, rho_c, x, buffer: None, last_control: None, step_index: 0, done: true, trace: None })
    }

    pub fn initial_control(&self) -> ControlInput {
        let [torque, steer] = self.config.initial_control;
        ControlInput { torque, steer }
    }

    pub fn rho_c(&self) -> f64 {
        self.rho_c
    }

    pub fn dt(&self) -> f64 {
        self.ocp.dt
    }

    pub fn episode_steps(&self) -> usize {
        self.config.episode_steps
    }

    pub fn ocp_config(&self) -> &OcpConfig {
        &self.ocp
    }

    pub fn params(&self) -> &VehicleParams {
        &self.params
    }

    pub fn buffer(&self) -> Option<&PlanBuffer> {
        self.buffer.as_ref()
    }

    pub fn state(&self) -> &VehicleState {
        &self.x
    }

    pub fn step_index(&self) -> usize {
        self.step_index
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn enable_trace(&mut self, on: bool) {
        self.trace = on.then(Vec::new);
    }

    pub fn take_trace(&mut self) -> Vec<TraceRecord> {
        self.trace.as_mut().map(std::mem::take).unwrap_or_default()
    }

    /// Restores the initial state and clears the plan buffer. The empty buffer
    /// forces a solve on the first step.
    pub fn reset(&mut self) -> EnvState {
        self.x = VehicleState::from_array(self.config.initial_state);
        self.buffer = None;
        self.last_control = Some(self.initial_control());
        self.step_index = 0;
        self.done = false;
        if let Some(t) = self.trace.as_mut() {
            t.clear();
        }
        self.observation()
    }

    pub fn observation(&self) -> EnvState {
        let x_bar = self.buffer.as_ref().and_then(|b| b.states.get(b.elapsed)).copied().unwrap_or(self.x);
        EnvState { x_hat: self.x, x_bar }
    }

    pub fn step(&mut self, action: TriggerAction) -> Result<StepOutcome, EnvError> {
        if self.done {
            return Err(EnvError::EpisodeTerminated);
        }
        let t = self.step_index as f64 * self.ocp.dt;
        let (applied, buffer) = match apply_trigger(self.buffer.as_ref(), action, &self.x, self.last_control, t, &self.ocp, &self.params) {
            Ok((applied, buffer)) => (applied, Some(buffer)),
            Err(EnvError::Ocp(OcpError::Dynamics(e))) => {
                log::warn!("solve from t={t:.2}s left the model domain: {e}");
                let control = self.last_control.unwrap_or_default();
                (AppliedControl { control, solved: true, forced: action == TriggerAction::Hold, solve_seconds: 0.0 }, None)
            }
            Err(e) => return Err(e),
        };
        let u = applied.control;
        let stage_cost = ocp::stage_cost(&self.x, &u, &self.ocp);
        let x_next = match buffer {
            Some(_) => dynamics::step(&self.x, &u, &self.params, self.ocp.dt)
                .inspect_err(|e| log::warn!("plant left the model domain at t={t:.2}s: {e}"))
                .ok(),
            None => None,
        };
        let failed = x_next.is_none();
        let penalty = if failed { self.config.failure_penalty } else { 0.0 };
        let r = reward(&self.x, &u, applied.effective_action(), self.rho_c, self.ocp.dt, &self.ocp) - penalty;
        if let Some(trace) = self.trace.as_mut() {
            trace.push(TraceRecord {
                step: self.step_index,
                t,
                l_x: self.x.l_x,
                v_x: self.x.v_x,
                l_y: self.x.l_y,
                v_y: self.x.v_y,
                psi: self.x.psi,
                r: self.x.r,
                torque: u.torque,
                steer: u.steer,
                action: applied.effective_action().index(),
                forced: applied.forced,
                reward: r,
                stage_cost,
                failed,
            });
        }
        if buffer.is_some() {
            self.buffer = buffer;
        }
        self.last_control = Some(u);
        if let Some(x) = x_next {
            self.x = x;
        }
        self.step_index += 1;
        self.done = failed || self.step_index >= self.config.episode_steps;
        let info = StepInfo { requested: action, applied, stage_cost, penalty, failed };
        Ok(StepOutcome { next: self.observation(), reward: r, done: self.done, info })
    }
}

/// Time-triggered MPC: solve at every step and apply the first control.
/// Returns the applied controls and the visited states `x_0..x_{steps}`.
pub fn conventional_mpc(
    x0: &VehicleState,
    u_init: Option<ControlInput>,
    steps: usize,
    ocp_config: &OcpConfig,
    params: &VehicleParams,
) -> Result<(Vec<ControlInput>, Vec<VehicleState>), EnvError> {
    let mut x = *x0;
    let mut states = vec![x];
    let mut controls: Vec<ControlInput> = Vec::with_capacity(steps);
    let mut previous_plan: Option<Vec<ControlInput>> = None;
    for _ in 0..steps {
        let warm = previous_plan.as_ref().map(|u| ocp::shift_warm_start(u, 1, ocp_config.horizon));
        let u_prev = controls.last().copied().or(u_init);
        let sol = ocp::solve_ocp(&x, warm.as_deref(), u_prev, ocp_config, params)?;
        let u = sol.controls[0];
        x = dynamics::step(&x, &u, params, ocp_config.dt)?;
        controls.push(u);
        states.push(x);
        previous_plan = Some(sol.controls);
    }
    Ok((controls, states))
}
