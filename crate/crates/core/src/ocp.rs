//! Finite-horizon optimal control by direct single shooting.
//!
//! The decision variables are the `p` controls of the horizon. Gradients come from
//! a reverse sweep through the RK4 rollout; the control box is handled by projection
//! inside a quasi-Newton (BFGS) iteration; the per-step rate bounds and the state box
//! are handled by a quadratic penalty whose weight is ramped between outer loops.
//! A final forward clamp makes the returned sequence feasible for the box and the
//! rate bounds to machine precision.

use serde::{Deserialize, Serialize};

use crate::dynamics::{self, ControlInput, VehicleParams, VehicleState, CONTROL_DIM, STATE_DIM};
use crate::error::OcpError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OcpConfig {
    /// Prediction horizon `p` in steps.
    pub horizon: usize,
    pub dt: f64,
    /// Weight on the squared lateral path error.
    pub q_track: f64,
    /// Control weight matrix, row-major, acting on `[T_f, beta_f]`.
    pub q_u: [[f64; CONTROL_DIM]; CONTROL_DIM],
    pub u_ref: [f64; CONTROL_DIM],
    pub u_min: [f64; CONTROL_DIM],
    pub u_max: [f64; CONTROL_DIM],
    pub du_min: [f64; CONTROL_DIM],
    pub du_max: [f64; CONTROL_DIM],
    pub x_min: [f64; STATE_DIM],
    pub x_max: [f64; STATE_DIM],
    /// Projected-gradient infinity-norm tolerance (in box-normalized variables).
    pub tol: f64,
    pub max_inner_iterations: usize,
    pub outer_loops: usize,
    pub penalty_init: f64,
    pub penalty_growth: f64,
    /// Emit per-iteration trace lines through `log::debug!`.
    pub verbose: bool,
}

impl Default for OcpConfig {
    fn default() -> Self {
        Self {
            horizon: 5,
            dt: 0.2,
            q_track: 1.0,
            q_u: [[1e-7, 0.0], [0.0, 1e-1]],
            u_ref: [0.0, 0.0],
            u_min: [-500.0, -0.5],
            u_max: [500.0, 0.5],
            du_min: [-200.0, -0.1],
            du_max: [200.0, 0.1],
            x_min: [-1e9; STATE_DIM],
            x_max: [1e9; STATE_DIM],
            tol: 1e-6,
            max_inner_iterations: 50,
            outer_loops: 3,
            penalty_init: 1e3,
            penalty_growth: 10.0,
            verbose: false,
        }
    }
}

impl OcpConfig {
    pub fn validate(&self) -> Result<(), OcpError> {
        let bad = |m: String| Err(OcpError::InvalidConfig(m));
        if self.horizon == 0 {
            return bad("horizon must be at least 1".into());
        }
        if !(self.dt > 0.0) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        if !(self.q_track >= 0.0) {
            return bad("q_track must be nonnegative".into());
        }
        let q = self.q_u;
        if q[0][1] != q[1][0] {
            return bad("q_u must be symmetric".into());
        }
        if q[0][0] < 0.0 || q[1][1] < 0.0 || q[0][0] * q[1][1] - q[0][1] * q[1][0] < 0.0 {
            return bad("q_u must be positive semidefinite".into());
        }
        for j in 0..CONTROL_DIM {
            if !(self.u_min[j] <= self.u_max[j]) {
                return bad(format!("u_min[{j}] exceeds u_max[{j}]"));
            }
            if !(self.du_min[j] <= 0.0 && 0.0 <= self.du_max[j]) {
                return bad(format!("rate bounds for control {j} must bracket zero"));
            }
        }
        for i in 0..STATE_DIM {
            if !(self.x_min[i] <= self.x_max[i]) {
                return bad(format!("x_min[{i}] exceeds x_max[{i}]"));
            }
        }
        if self.outer_loops == 0 || self.max_inner_iterations == 0 {
            return bad("iteration caps must be positive".into());
        }
        Ok(())
    }

    pub fn bounds(&self) -> Bounds {
        Bounds {
            u_min: self.u_min.to_vec(),
            u_max: self.u_max.to_vec(),
            du_min: self.du_min.to_vec(),
            du_max: self.du_max.to_vec(),
            x_min: self.x_min.to_vec(),
            x_max: self.x_max.to_vec(),
        }
    }

    pub fn solver_options(&self) -> SolverOptions {
        SolverOptions {
            tol: self.tol,
            max_inner_iterations: self.max_inner_iterations,
            outer_loops: self.outer_loops,
            penalty_init: self.penalty_init,
            penalty_growth: self.penalty_growth,
            verbose: self.verbose,
        }
    }
}

/// Box, rate and state bounds of a shooting problem, one entry per dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Bounds {
    pub u_min: Vec<f64>,
    pub u_max: Vec<f64>,
    pub du_min: Vec<f64>,
    pub du_max: Vec<f64>,
    pub x_min: Vec<f64>,
    pub x_max: Vec<f64>,
}

impl Bounds {
    pub fn unbounded(nx: usize, nu: usize) -> Self {
        Self {
            u_min: vec![f64::NEG_INFINITY; nu],
            u_max: vec![f64::INFINITY; nu],
            du_min: vec![f64::NEG_INFINITY; nu],
            du_max: vec![f64::INFINITY; nu],
            x_min: vec![f64::NEG_INFINITY; nx],
            x_max: vec![f64::INFINITY; nx],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    pub tol: f64,
    pub max_inner_iterations: usize,
    pub outer_loops: usize,
    pub penalty_init: f64,
    pub penalty_growth: f64,
    pub verbose: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        OcpConfig::default().solver_options()
    }
}

/// Discrete dynamics plus separable costs: the state term applies to `x_1..x_p`,
/// the control term to `u_0..u_{p-1}`.
pub trait ShootingModel {
    fn state_dim(&self) -> usize;
    fn control_dim(&self) -> usize;
    fn step(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>, OcpError>;
    /// Returns `(adjᵀ ∂f/∂x, adjᵀ ∂f/∂u)`.
    fn step_vjp(&self, x: &[f64], u: &[f64], adj: &[f64]) -> Result<(Vec<f64>, Vec<f64>), OcpError>;
    fn state_cost(&self, x: &[f64]) -> (f64, Vec<f64>);
    fn control_cost(&self, u: &[f64]) -> (f64, Vec<f64>);
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceEntry {
    pub outer: usize,
    pub iteration: usize,
    pub penalty: f64,
    pub objective: f64,
    pub projected_gradient: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ShootingSolution {
    /// Flattened controls, `horizon * nu` values.
    pub controls: Vec<f64>,
    /// Predicted states `x_1..x_p`.
    pub states: Vec<Vec<f64>>,
    pub cost: f64,
    pub converged: bool,
    pub iterations: usize,
    pub trace: Vec<TraceEntry>,
}

pub struct ShootingProblem<'a, M: ShootingModel> {
    pub model: &'a M,
    pub x0: &'a [f64],
    pub horizon: usize,
    pub bounds: &'a Bounds,
    /// Control applied at the previous sampling instant; constrains the first rate.
    pub u_prev: Option<&'a [f64]>,
}

pub fn rollout_flat<M: ShootingModel>(model: &M, x0: &[f64], controls: &[f64]) -> Result<Vec<Vec<f64>>, OcpError> {
    let nu = model.control_dim();
    let mut states = Vec::with_capacity(controls.len() / nu);
    let mut x = x0.to_vec();
    for u in controls.chunks(nu) {
        x = model.step(&x, u)?;
        states.push(x.clone());
    }
    Ok(states)
}

/// Unpenalized cost and its gradient with respect to the flattened controls.
pub fn cost_gradient<M: ShootingModel>(model: &M, x0: &[f64], controls: &[f64]) -> Result<(f64, Vec<f64>), OcpError> {
    let nx = model.state_dim();
    let bounds = Bounds::unbounded(nx, model.control_dim());
    let problem = ShootingProblem { model, x0, horizon: controls.len() / model.control_dim(), bounds: &bounds, u_prev: None };
    let eval = evaluate(&problem, controls, 0.0)?;
    Ok((eval.cost, eval.gradient))
}

struct Evaluation {
    /// Penalized objective.
    objective: f64,
    /// Plain cost J.
    cost: f64,
    gradient: Vec<f64>,
}

fn hinge(v: f64, lo: f64, hi: f64) -> f64 {
    if v < lo {
        v - lo
    } else if v > hi {
        v - hi
    } else {
        0.0
    }
}

fn evaluate<M: ShootingModel>(problem: &ShootingProblem<'_, M>, controls: &[f64], mu: f64) -> Result<Evaluation, OcpError> {
    let model = problem.model;
    let nu = model.control_dim();
    let nx = model.state_dim();
    let b = problem.bounds;
    let states = rollout_flat(model, problem.x0, controls)?;
    let p = states.len();

    let mut cost = 0.0;
    let mut penalty = 0.0;
    let mut grad = vec![0.0; controls.len()];
    let mut state_grads: Vec<Vec<f64>> = Vec::with_capacity(p);
    for x in &states {
        let (c, mut g) = model.state_cost(x);
        cost += c;
        if mu > 0.0 {
            for i in 0..nx {
                let v = hinge(x[i], b.x_min[i], b.x_max[i]);
                if v != 0.0 {
                    penalty += mu * v * v;
                    g[i] += 2.0 * mu * v;
                }
            }
        }
        state_grads.push(g);
    }
    for (k, u) in controls.chunks(nu).enumerate() {
        let (c, g) = model.control_cost(u);
        cost += c;
        for j in 0..nu {
            grad[k * nu + j] += g[j];
        }
    }
    if mu > 0.0 {
        for k in 0..p {
            let prev = if k == 0 { problem.u_prev } else { Some(&controls[(k - 1) * nu..k * nu]) };
            let Some(prev) = prev else { continue };
            for j in 0..nu {
                let scale = control_scale(b, j).1;
                let du = controls[k * nu + j] - prev[j];
                let v = hinge(du, b.du_min[j], b.du_max[j]) / scale;
                if v != 0.0 {
                    penalty += mu * v * v;
                    let d = 2.0 * mu * v / scale;
                    grad[k * nu + j] += d;
                    if k > 0 {
                        grad[(k - 1) * nu + j] -= d;
                    }
                }
            }
        }
    }

    // reverse sweep: adj holds dJ/dx_{k+1}
    let mut adj = state_grads[p - 1].clone();
    for k in (0..p).rev() {
        let x_k: &[f64] = if k == 0 { problem.x0 } else { &states[k - 1] };
        let (lam_x, g_u) = model.step_vjp(x_k, &controls[k * nu..(k + 1) * nu], &adj)?;
        for j in 0..nu {
            grad[k * nu + j] += g_u[j];
        }
        if k > 0 {
            adj = lam_x;
            for i in 0..nx {
                adj[i] += state_grads[k - 1][i];
            }
        }
    }
    Ok(Evaluation { objective: cost + penalty, cost, gradient: grad })
}

/// `(center, half-width)` used to normalize control `j`; unit scaling for unbounded controls.
fn control_scale(b: &Bounds, j: usize) -> (f64, f64) {
    let (lo, hi) = (b.u_min[j], b.u_max[j]);
    if lo.is_finite() && hi.is_finite() && hi > lo {
        (0.5 * (lo + hi), 0.5 * (hi - lo))
    } else {
        (0.0, 1.0)
    }
}

/// Makes `controls` satisfy the box and rate bounds by a forward clamp.
pub fn repair_feasibility(controls: &mut [f64], nu: usize, b: &Bounds, u_prev: Option<&[f64]>) {
    let p = controls.len() / nu;
    for k in 0..p {
        for j in 0..nu {
            let mut lo = b.u_min[j];
            let mut hi = b.u_max[j];
            let prev = if k == 0 { u_prev.map(|u| u[j]) } else { Some(controls[(k - 1) * nu + j]) };
            if let Some(prev) = prev {
                lo = lo.max(prev + b.du_min[j]);
                hi = hi.min(prev + b.du_max[j]);
            }
            if lo > hi {
                // previous control outside the box: fall back to the box alone
                lo = b.u_min[j];
                hi = b.u_max[j];
            }
            let v = &mut controls[k * nu + j];
            *v = v.clamp(lo, hi);
        }
    }
}

/// Largest violation of the box and rate bounds.
pub fn max_violation(controls: &[f64], nu: usize, b: &Bounds, u_prev: Option<&[f64]>) -> f64 {
    let mut worst: f64 = 0.0;
    for (k, u) in controls.chunks(nu).enumerate() {
        for j in 0..nu {
            worst = worst.max(hinge(u[j], b.u_min[j], b.u_max[j]).abs());
            let prev = if k == 0 { u_prev.map(|u| u[j]) } else { Some(controls[(k - 1) * nu + j]) };
            if let Some(prev) = prev {
                worst = worst.max(hinge(u[j] - prev, b.du_min[j], b.du_max[j]).abs());
            }
        }
    }
    worst
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves the shooting problem from `warm` (zeros when absent).
pub fn solve_shooting<M: ShootingModel>(
    problem: &ShootingProblem<'_, M>,
    warm: Option<&[f64]>,
    opts: &SolverOptions,
) -> Result<ShootingSolution, OcpError> {
    let nu = problem.model.control_dim();
    let n = problem.horizon * nu;
    if problem.x0.iter().any(|v| !v.is_finite()) {
        return Err(OcpError::NonFiniteState);
    }
    if let Some(w) = warm {
        if w.len() != n {
            return Err(OcpError::LengthMismatch { expected: n, got: w.len() });
        }
    }
    let b = problem.bounds;
    let scales: Vec<(f64, f64)> = (0..n).map(|i| control_scale(b, i % nu)).collect();
    let lo: Vec<f64> = (0..n).map(|i| (b.u_min[i % nu] - scales[i].0) / scales[i].1).collect();
    let hi: Vec<f64> = (0..n).map(|i| (b.u_max[i % nu] - scales[i].0) / scales[i].1).collect();
    let to_u = |z: &[f64]| -> Vec<f64> { z.iter().zip(&scales).map(|(z, (c, h))| c + h * z).collect() };
    let project = |z: &mut [f64]| {
        for i in 0..n {
            z[i] = z[i].clamp(lo[i], hi[i]);
        }
    };

    let warm_u: Vec<f64> = warm.map(|w| w.to_vec()).unwrap_or_else(|| vec![0.0; n]);
    let mut z: Vec<f64> = warm_u.iter().zip(&scales).map(|(u, (c, h))| (u - c) / h).collect();
    project(&mut z);
    if warm.is_some() && evaluate(problem, &to_u(&z), 0.0).is_err() {
        log::debug!("warm start leaves the model domain; starting from zero controls");
        z = scales.iter().map(|(c, h)| -c / h).collect();
        project(&mut z);
    }

    let eval_z = |z: &[f64], mu: f64| -> Result<(Evaluation, Vec<f64>), OcpError> {
        let e = evaluate(problem, &to_u(z), mu)?;
        let gz = e.gradient.iter().zip(&scales).map(|(g, (_, h))| g * h).collect();
        Ok((e, gz))
    };

    let mut trace = Vec::new();
    let mut iterations = 0;
    let mut converged = false;
    let mut mu = opts.penalty_init;
    for outer in 0..opts.outer_loops {
        let (mut e, mut g) = eval_z(&z, mu)?;
        let mut h_inv = identity(n);
        let mut fresh_hessian = true;
        converged = false;
        for it in 0..=opts.max_inner_iterations {
            let pg = (0..n).map(|i| (z[i] - (z[i] - g[i]).clamp(lo[i], hi[i])).abs()).fold(0.0, f64::max);
            trace.push(TraceEntry { outer, iteration: it, penalty: mu, objective: e.objective, projected_gradient: pg });
            if opts.verbose {
                log::debug!("ocp outer {outer} iter {it} mu {mu:.1e} obj {:.9e} pg {pg:.3e}", e.objective);
            }
            if pg < opts.tol {
                converged = true;
                break;
            }
            if it == opts.max_inner_iterations {
                break;
            }
            let active: Vec<bool> = (0..n).map(|i| (z[i] <= lo[i] && g[i] > 0.0) || (z[i] >= hi[i] && g[i] < 0.0)).collect();
            let mut accepted = None;
            for attempt in 0..2 {
                let d = direction(&h_inv, &g, &active);
                if dot(&d, &g) >= 0.0 {
                    h_inv = identity(n);
                    fresh_hessian = true;
                    continue;
                }
                if let Some(step) = line_search(&z, &d, &g, e.objective, &project, |zt| eval_z(zt, mu)) {
                    accepted = Some(step);
                    break;
                }
                if attempt == 0 && !fresh_hessian {
                    h_inv = identity(n);
                    fresh_hessian = true;
                } else {
                    break;
                }
            }
            iterations += 1;
            let Some((z_new, e_new, g_new)) = accepted else {
                // no descent possible at this precision
                break;
            };
            let s: Vec<f64> = z_new.iter().zip(&z).map(|(a, b)| a - b).collect();
            let y: Vec<f64> = g_new.iter().zip(&g).map(|(a, b)| a - b).collect();
            let sy = dot(&s, &y);
            if sy > 1e-12 * dot(&s, &s).sqrt() * dot(&y, &y).sqrt() {
                if fresh_hessian {
                    let scale = sy / dot(&y, &y);
                    h_inv = identity(n).into_iter().map(|row| row.into_iter().map(|v| v * scale).collect()).collect();
                    fresh_hessian = false;
                }
                bfgs_update(&mut h_inv, &s, &y, sy);
            }
            z = z_new;
            e = e_new;
            g = g_new;
        }
        let u = to_u(&z);
        let states = rollout_flat(problem.model, problem.x0, &u)?;
        let slack = max_violation(&u, nu, b, problem.u_prev).max(state_violation(&states, b));
        if converged && slack == 0.0 {
            break;
        }
        mu *= opts.penalty_growth;
    }

    let mut controls = to_u(&z);
    repair_feasibility(&mut controls, nu, b, problem.u_prev);
    let mut eval = evaluate(problem, &controls, 0.0)?;
    if let Some(w) = warm {
        if max_violation(w, nu, b, problem.u_prev) == 0.0 {
            if let Ok(we) = evaluate(problem, w, 0.0) {
                if we.cost < eval.cost {
                    controls = w.to_vec();
                    eval = we;
                }
            }
        }
    }
    let states = rollout_flat(problem.model, problem.x0, &controls)?;
    Ok(ShootingSolution { controls, states, cost: eval.cost, converged, iterations, trace })
}

fn state_violation(states: &[Vec<f64>], b: &Bounds) -> f64 {
    states
        .iter()
        .flat_map(|x| x.iter().enumerate().map(|(i, v)| hinge(*v, b.x_min[i], b.x_max[i]).abs()))
        .fold(0.0, f64::max)
}

fn identity(n: usize) -> Vec<Vec<f64>> {
    (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect()
}

fn direction(h_inv: &[Vec<f64>], g: &[f64], active: &[bool]) -> Vec<f64> {
    let n = g.len();
    (0..n)
        .map(|i| {
            if active[i] {
                0.0
            } else {
                -(0..n).filter(|&j| !active[j]).map(|j| h_inv[i][j] * g[j]).sum::<f64>()
            }
        })
        .collect()
}

fn bfgs_update(h: &mut [Vec<f64>], s: &[f64], y: &[f64], sy: f64) {
    let n = s.len();
    let rho = 1.0 / sy;
    let hy: Vec<f64> = (0..n).map(|i| dot(&h[i], y)).collect();
    let yhy = dot(y, &hy);
    for i in 0..n {
        for j in 0..n {
            h[i][j] += -rho * (hy[i] * s[j] + s[i] * hy[j]) + (rho * rho * yhy + rho) * s[i] * s[j];
        }
    }
}

type Accepted = (Vec<f64>, Evaluation, Vec<f64>);

/// Armijo backtracking along the projection arc.
fn line_search(
    z: &[f64],
    d: &[f64],
    g: &[f64],
    f0: f64,
    project: &dyn Fn(&mut [f64]),
    eval: impl Fn(&[f64]) -> Result<(Evaluation, Vec<f64>), OcpError>,
) -> Option<Accepted> {
    const C1: f64 = 1e-4;
    let mut alpha = 1.0;
    for _ in 0..40 {
        let mut zt: Vec<f64> = z.iter().zip(d).map(|(z, d)| z + alpha * d).collect();
        project(&mut zt);
        let step: Vec<f64> = zt.iter().zip(z).map(|(a, b)| a - b).collect();
        let decrease = dot(g, &step);
        if decrease >= 0.0 && step.iter().all(|v| *v == 0.0) {
            return None;
        }
        if let Ok((e, gt)) = eval(&zt) {
            if e.objective.is_finite() && e.objective <= f0 + C1 * decrease && e.objective <= f0 {
                return Some((zt, e, gt));
            }
        }
        alpha *= 0.5;
    }
    None
}

/// Shooting model of the vehicle with the path-tracking stage cost.
pub struct VehicleOcp<'a> {
    pub params: &'a VehicleParams,
    pub config: &'a OcpConfig,
}

impl ShootingModel for VehicleOcp<'_> {
    fn state_dim(&self) -> usize {
        STATE_DIM
    }

    fn control_dim(&self) -> usize {
        CONTROL_DIM
    }

    fn step(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>, OcpError> {
        let next = dynamics::step(&VehicleState::from_slice(x), &ControlInput::from_slice(u), self.params, self.config.dt)?;
        Ok(next.to_array().to_vec())
    }

    fn step_vjp(&self, x: &[f64], u: &[f64], adj: &[f64]) -> Result<(Vec<f64>, Vec<f64>), OcpError> {
        let adj: [f64; STATE_DIM] = std::array::from_fn(|i| adj[i]);
        let (gx, gu) = dynamics::step_vjp(&VehicleState::from_slice(x), &ControlInput::from_slice(u), self.params, self.config.dt, &adj)?;
        Ok((gx.to_vec(), gu.to_vec()))
    }

    fn state_cost(&self, x: &[f64]) -> (f64, Vec<f64>) {
        let (c, g) = tracking_cost(&VehicleState::from_slice(x), self.config);
        (c, g.to_vec())
    }

    fn control_cost(&self, u: &[f64]) -> (f64, Vec<f64>) {
        let (c, g) = effort_cost(&ControlInput::from_slice(u), self.config);
        (c, g.to_vec())
    }
}

/// `Q_t * e^2` with `e` the lateral path error, and its state gradient.
pub fn tracking_cost(x: &VehicleState, config: &OcpConfig) -> (f64, [f64; STATE_DIM]) {
    let e = dynamics::lateral_error(x);
    let q = config.q_track;
    let mut g = [0.0; STATE_DIM];
    g[0] = -2.0 * q * e * dynamics::reference_path_slope(x.l_x);
    g[2] = 2.0 * q * e;
    (q * e * e, g)
}

/// `(u - u_ref)ᵀ Q_u (u - u_ref)` and its gradient.
pub fn effort_cost(u: &ControlInput, config: &OcpConfig) -> (f64, [f64; CONTROL_DIM]) {
    let d = [u.torque - config.u_ref[0], u.steer - config.u_ref[1]];
    let q = &config.q_u;
    let qd = [q[0][0] * d[0] + q[0][1] * d[1], q[1][0] * d[0] + q[1][1] * d[1]];
    (d[0] * qd[0] + d[1] * qd[1], [2.0 * qd[0], 2.0 * qd[1]])
}

/// Optimal controls `u_t..u_{t+p-1}` and predicted states `x_{t+1}..x_{t+p}`.
#[derive(Debug, Clone, PartialEq)]
pub struct OcpSolution {
    pub controls: Vec<ControlInput>,
    pub states: Vec<VehicleState>,
    pub cost: f64,
    pub converged: bool,
    pub iterations: usize,
}

pub fn stage_cost(x: &VehicleState, u: &ControlInput, config: &OcpConfig) -> f64 {
    tracking_cost(x, config).0 + effort_cost(u, config).0
}

/// Tracking terms over `x_{t+1}..x_{t+p}` plus control terms over `u_t..u_{t+p-1}`.
pub fn trajectory_cost(states: &[VehicleState], controls: &[ControlInput], config: &OcpConfig) -> Result<f64, OcpError> {
    let p = config.horizon;
    for len in [states.len(), controls.len()] {
        if len != p {
            return Err(OcpError::LengthMismatch { expected: p, got: len });
        }
    }
    let track: f64 = states.iter().map(|x| tracking_cost(x, config).0).sum();
    let effort: f64 = controls.iter().map(|u| effort_cost(u, config).0).sum();
    Ok(track + effort)
}

pub fn rollout(x0: &VehicleState, controls: &[ControlInput], params: &VehicleParams, config: &OcpConfig) -> Result<Vec<VehicleState>, OcpError> {
    let mut x = *x0;
    controls
        .iter()
        .map(|u| {
            x = dynamics::step(&x, u, params, config.dt)?;
            Ok(x)
        })
        .collect()
}

fn flatten(controls: &[ControlInput]) -> Vec<f64> {
    controls.iter().flat_map(|u| u.to_array()).collect()
}

/// Drops the first `shift` controls and pads by repeating the last one.
pub fn shift_warm_start(previous: &[ControlInput], shift: usize, horizon: usize) -> Vec<ControlInput> {
    let Some(last) = previous.last().copied() else {
        return vec![ControlInput::default(); horizon];
    };
    (0..horizon).map(|i| previous.get(i + shift).copied().unwrap_or(last)).collect()
}

pub fn solve_ocp(
    x_hat: &VehicleState,
    warm_start: Option<&[ControlInput]>,
    u_prev: Option<ControlInput>,
    config: &OcpConfig,
    params: &VehicleParams,
) -> Result<OcpSolution, OcpError> {
    config.validate()?;
    if !x_hat.is_finite() {
        return Err(OcpError::NonFiniteState);
    }
    let model = VehicleOcp { params, config };
    let bounds = config.bounds();
    let x0 = x_hat.to_array();
    let prev = u_prev.map(|u| u.to_array());
    let problem = ShootingProblem { model: &model, x0: &x0, horizon: config.horizon, bounds: &bounds, u_prev: prev.as_ref().map(|u| &u[..]) };
    let warm = warm_start.map(flatten);
    let sol = solve_shooting(&problem, warm.as_deref(), &config.solver_options())?;
    Ok(OcpSolution {
        controls: sol.controls.chunks(CONTROL_DIM).map(ControlInput::from_slice).collect(),
        states: sol.states.iter().map(|x| VehicleState::from_slice(x)).collect(),
        cost: sol.cost,
        converged: sol.converged,
        iterations: sol.iterations,
    })
}
