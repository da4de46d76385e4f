//! Single-track vehicle model, RK4 discretization and the sinusoidal reference path.
//!
//! State ordering everywhere is `[l_x, v_x, l_y, v_y, psi, r]`; control ordering is
//! `[T_f, beta_f]`. The rear axle carries no torque and no steering.

use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::DynamicsError;

pub const STATE_DIM: usize = 6;
pub const CONTROL_DIM: usize = 2;

/// Speeds at or below this floor make the slip angles undefined.
pub const V_EPS: f64 = 0.1;

/// Amplitude (m) and wavelength (m) of the reference path.
pub const PATH_AMPLITUDE: f64 = 4.0;
pub const PATH_WAVELENGTH: f64 = 100.0;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct VehicleState {
    pub l_x: f64,
    pub v_x: f64,
    pub l_y: f64,
    pub v_y: f64,
    pub psi: f64,
    pub r: f64,
}

impl VehicleState {
    pub fn new(l_x: f64, v_x: f64, l_y: f64, v_y: f64, psi: f64, r: f64) -> Self {
        Self { l_x, v_x, l_y, v_y, psi, r }
    }

    pub fn to_array(self) -> [f64; STATE_DIM] {
        [self.l_x, self.v_x, self.l_y, self.v_y, self.psi, self.r]
    }

    pub fn from_array(a: [f64; STATE_DIM]) -> Self {
        Self::new(a[0], a[1], a[2], a[3], a[4], a[5])
    }

    pub fn from_slice(s: &[f64]) -> Self {
        Self::new(s[0], s[1], s[2], s[3], s[4], s[5])
    }

    pub fn is_finite(&self) -> bool {
        self.to_array().iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlInput {
    /// Front-axle driving torque (N·m).
    pub torque: f64,
    /// Front steering angle (rad).
    pub steer: f64,
}

impl ControlInput {
    pub fn new(torque: f64, steer: f64) -> Self {
        Self { torque, steer }
    }

    pub fn to_array(self) -> [f64; CONTROL_DIM] {
        [self.torque, self.steer]
    }

    pub fn from_slice(s: &[f64]) -> Self {
        Self::new(s[0], s[1])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VehicleParams {
    pub mass: f64,
    pub yaw_inertia: f64,
    pub l_xf: f64,
    pub l_xr: f64,
    pub c_f: f64,
    pub c_r: f64,
    pub mu_f: f64,
    pub mu_r: f64,
    pub tire_radius: f64,
    pub gravity: f64,
    pub road_grade: f64,
    pub c_drag: f64,
}

impl Default for VehicleParams {
    fn default() -> Self {
        Self {
            mass: 2000.0,
            yaw_inertia: 4000.0,
            l_xf: 1.5,
            l_xr: 1.5,
            c_f: 12.0,
            c_r: 12.0,
            mu_f: 0.9,
            mu_r: 0.9,
            tire_radius: 0.3,
            gravity: 9.81,
            road_grade: 0.0,
            c_drag: 0.4,
        }
    }
}

impl VehicleParams {
    pub fn validate(&self) -> Result<(), DynamicsError> {
        let positive = [
            ("mass", self.mass),
            ("yaw_inertia", self.yaw_inertia),
            ("l_xf", self.l_xf),
            ("l_xr", self.l_xr),
            ("tire_radius", self.tire_radius),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(DynamicsError::InvalidParams(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [("mu_f", self.mu_f), ("mu_r", self.mu_r)] {
            if !(v > 0.0 && v <= 2.0) {
                return Err(DynamicsError::InvalidParams(format!("{name} must lie in (0, 2], got {v}")));
            }
        }
        let rest = [self.c_f, self.c_r, self.gravity, self.road_grade, self.c_drag];
        if rest.iter().any(|v| !v.is_finite()) {
            return Err(DynamicsError::InvalidParams("non-finite parameter".into()));
        }
        Ok(())
    }

    /// Static normal load per wheel, `(F_z,f, F_z,r)`.
    ///
    /// Each axle's load is proportional to its own CG distance, exactly as the
    /// model's load-transfer equation is written. With the default symmetric
    /// wheelbase this coincides with the conventional split.
    pub fn normal_loads(&self) -> (f64, f64) {
        let denom = 2.0 * (self.l_xf + self.l_xr);
        let w = self.mass * self.gravity;
        (self.l_xf * w / denom, self.l_xr * w / denom)
    }
}

/// Vehicle-frame tire forces for one wheel of each axle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxleForces {
    pub fx_f: f64,
    pub fy_f: f64,
    pub fx_r: f64,
    pub fy_r: f64,
}

/// Slip angles `(alpha_f, alpha_r)`.
pub fn slip_angles(state: &VehicleState, input: &ControlInput, params: &VehicleParams) -> Result<(f64, f64), DynamicsError> {
    if !(state.v_x > V_EPS) {
        return Err(DynamicsError::DegenerateSpeed { v_x: state.v_x });
    }
    let alpha_f = input.steer - ((state.v_y + params.l_xf * state.r) / state.v_x).atan();
    let alpha_r = -((state.v_y - params.l_xr * state.r) / state.v_x).atan();
    Ok((alpha_f, alpha_r))
}

/// Rotates a wheel-frame force pair into the vehicle frame.
pub fn rotate(fx_wheel: f64, fy_wheel: f64, angle: f64) -> (f64, f64) {
    let (s, c) = angle.sin_cos();
    (fx_wheel * c - fy_wheel * s, fx_wheel * s + fy_wheel * c)
}

pub fn tire_forces(state: &VehicleState, input: &ControlInput, params: &VehicleParams) -> Result<AxleForces, DynamicsError> {
    let (alpha_f, alpha_r) = slip_angles(state, input, params)?;
    let (fz_f, fz_r) = params.normal_loads();
    let fx_f_bar = input.torque / (2.0 * params.tire_radius);
    let fy_f_bar = params.c_f * params.mu_f * fz_f * alpha_f;
    // rear: zero torque, zero steering, so the rotation is the identity
    let fy_r_bar = params.c_r * params.mu_r * fz_r * alpha_r;
    let (fx_f, fy_f) = rotate(fx_f_bar, fy_f_bar, input.steer);
    Ok(AxleForces { fx_f, fy_f, fx_r: 0.0, fy_r: fy_r_bar })
}

/// Continuous-time right-hand side; the result is laid out like a state.
pub fn derivative(state: &VehicleState, input: &ControlInput, params: &VehicleParams) -> Result<VehicleState, DynamicsError> {
    let f = tire_forces(state, input, params)?;
    let m = params.mass;
    let (s, c) = state.psi.sin_cos();
    let drag = params.c_drag * state.v_x * state.v_x;
    Ok(VehicleState {
        l_x: state.v_x * c - state.v_y * s,
        v_x: state.v_y * state.r + 2.0 / m * (f.fx_f + f.fx_r) - params.gravity * params.road_grade.sin() - drag / m,
        l_y: state.v_x * s + state.v_y * c,
        v_y: -state.v_x * state.r + 2.0 / m * (f.fy_f + f.fy_r),
        psi: state.r,
        r: (2.0 * params.l_xf * f.fy_f - 2.0 * params.l_xr * f.fy_r) / params.yaw_inertia,
    })
}

/// Jacobians of [`derivative`]: `(df/dx, df/du)` as row-major 6×6 and 6×2 arrays.
pub fn derivative_jacobians(
    state: &VehicleState,
    input: &ControlInput,
    params: &VehicleParams,
) -> Result<([[f64; STATE_DIM]; STATE_DIM], [[f64; CONTROL_DIM]; STATE_DIM]), DynamicsError> {
    let (alpha_f, _) = slip_angles(state, input, params)?;
    let (fz_f, fz_r) = params.normal_loads();
    let k_f = params.c_f * params.mu_f * fz_f;
    let k_r = params.c_r * params.mu_r * fz_r;
    let (vx, vy, r) = (state.v_x, state.v_y, state.r);
    let m = params.mass;

    // slip-angle partials w.r.t. (v_x, v_y, r)
    let q = (vy + params.l_xf * r) / vx;
    let dq = 1.0 / (vx * (1.0 + q * q));
    let daf = [q * dq, -dq, -params.l_xf * dq];
    let sr = (vy - params.l_xr * r) / vx;
    let ds = 1.0 / (vx * (1.0 + sr * sr));
    let dar = [sr * ds, -ds, params.l_xr * ds];

    let (sb, cb) = input.steer.sin_cos();
    let fx_bar = input.torque / (2.0 * params.tire_radius);
    let fy_bar = k_f * alpha_f;

    // d(F_x,f), d(F_y,f), d(F_y,r) w.r.t. (v_x, v_y, r)
    let dfxf: [f64; 3] = std::array::from_fn(|i| -k_f * daf[i] * sb);
    let dfyf: [f64; 3] = std::array::from_fn(|i| k_f * daf[i] * cb);
    let dfyr: [f64; 3] = std::array::from_fn(|i| k_r * dar[i]);

    // w.r.t. (T, beta)
    let dfxf_du = [cb / (2.0 * params.tire_radius), -fx_bar * sb - k_f * sb - fy_bar * cb];
    let dfyf_du = [sb / (2.0 * params.tire_radius), fx_bar * cb + k_f * cb - fy_bar * sb];

    let (sp, cp) = state.psi.sin_cos();
    let mut a = [[0.0; STATE_DIM]; STATE_DIM];
    let mut b = [[0.0; CONTROL_DIM]; STATE_DIM];
    // column indices of (v_x, v_y, r) in the state
    const VEL: [usize; 3] = [1, 3, 5];

    a[0][1] = cp;
    a[0][3] = -sp;
    a[0][4] = -vx * sp - vy * cp;

    a[1][3] += r;
    a[1][5] += vy;
    a[1][1] += -2.0 * params.c_drag * vx / m;
    for (i, &col) in VEL.iter().enumerate() {
        a[1][col] += 2.0 / m * dfxf[i];
    }

    a[2][1] = sp;
    a[2][3] = cp;
    a[2][4] = vx * cp - vy * sp;

    a[3][5] += -vx;
    a[3][1] += -r;
    for (i, &col) in VEL.iter().enumerate() {
        a[3][col] += 2.0 / m * (dfyf[i] + dfyr[i]);
    }

    a[4][5] = 1.0;

    for (i, &col) in VEL.iter().enumerate() {
        a[5][col] = (2.0 * params.l_xf * dfyf[i] - 2.0 * params.l_xr * dfyr[i]) / params.yaw_inertia;
    }

    for j in 0..CONTROL_DIM {
        b[1][j] = 2.0 / m * dfxf_du[j];
        b[3][j] = 2.0 / m * dfyf_du[j];
        b[5][j] = 2.0 * params.l_xf * dfyf_du[j] / params.yaw_inertia;
    }
    Ok((a, b))
}

/// One classical RK4 step of `f` with the input held constant over the step.
pub fn rk4_step<const N: usize, E>(
    f: impl Fn(&[f64; N]) -> Result<[f64; N], E>,
    x: &[f64; N],
    dt: f64,
) -> Result<[f64; N], E> {
    let axpy = |x: &[f64; N], k: &[f64; N], h: f64| -> [f64; N] { std::array::from_fn(|i| x[i] + h * k[i]) };
    let k1 = f(x)?;
    let k2 = f(&axpy(x, &k1, 0.5 * dt))?;
    let k3 = f(&axpy(x, &k2, 0.5 * dt))?;
    let k4 = f(&axpy(x, &k3, dt))?;
    Ok(std::array::from_fn(|i| x[i] + dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i])))
}

/// Advances the vehicle by `dt` seconds under zero-order-hold `input`.
pub fn step(state: &VehicleState, input: &ControlInput, params: &VehicleParams, dt: f64) -> Result<VehicleState, DynamicsError> {
    if !(dt > 0.0) {
        return Err(DynamicsError::InvalidStep(dt));
    }
    let next = rk4_step(
        |x: &[f64; STATE_DIM]| derivative(&VehicleState::from_array(*x), input, params).map(VehicleState::to_array),
        &state.to_array(),
        dt,
    )?;
    let next = VehicleState::from_array(next);
    if !next.is_finite() {
        return Err(DynamicsError::NonFinite);
    }
    Ok(next)
}

/// Reverse-mode sensitivity of one RK4 step.
///
/// Given `adj = dJ/dx_next`, returns `(dJ/dx, dJ/du)`.
pub fn step_vjp(
    state: &VehicleState,
    input: &ControlInput,
    params: &VehicleParams,
    dt: f64,
    adj: &[f64; STATE_DIM],
) -> Result<([f64; STATE_DIM], [f64; CONTROL_DIM]), DynamicsError> {
    let f = |x: &[f64; STATE_DIM]| derivative(&VehicleState::from_array(*x), input, params).map(VehicleState::to_array);
    let axpy = |x: &[f64; STATE_DIM], k: &[f64; STATE_DIM], h: f64| -> [f64; STATE_DIM] { std::array::from_fn(|i| x[i] + h * k[i]) };
    let x = state.to_array();
    let y1 = x;
    let k1 = f(&y1)?;
    let y2 = axpy(&x, &k1, 0.5 * dt);
    let k2 = f(&y2)?;
    let y3 = axpy(&x, &k2, 0.5 * dt);
    let k3 = f(&y3)?;
    let y4 = axpy(&x, &k3, dt);

    let mut lam_x = *adj;
    let mut lam_u = [0.0; CONTROL_DIM];
    let mut lam_k: [[f64; STATE_DIM]; 4] = [
        std::array::from_fn(|i| dt / 6.0 * adj[i]),
        std::array::from_fn(|i| dt / 3.0 * adj[i]),
        std::array::from_fn(|i| dt / 3.0 * adj[i]),
        std::array::from_fn(|i| dt / 6.0 * adj[i]),
    ];
    // stage s evaluated at y_s = x + c_s * k_{s-1}
    let stages = [(y1, 0.0), (y2, 0.5 * dt), (y3, 0.5 * dt), (y4, dt)];
    for s in (0..4).rev() {
        let (y, c) = stages[s];
        let (a, b) = derivative_jacobians(&VehicleState::from_array(y), input, params)?;
        let lk = lam_k[s];
        let mut lam_y = [0.0; STATE_DIM];
        for (row, &l) in lk.iter().enumerate() {
            if l == 0.0 {
                continue;
            }
            for col in 0..STATE_DIM {
                lam_y[col] += a[row][col] * l;
            }
            for j in 0..CONTROL_DIM {
                lam_u[j] += b[row][j] * l;
            }
        }
        for i in 0..STATE_DIM {
            lam_x[i] += lam_y[i];
        }
        if s > 0 {
            for i in 0..STATE_DIM {
                lam_k[s - 1][i] += c * lam_y[i];
            }
        }
    }
    Ok((lam_x, lam_u))
}

/// Lateral position of the reference path at longitudinal position `l_x`.
pub fn reference_path(l_x: f64) -> f64 {
    PATH_AMPLITUDE * (2.0 * PI * l_x / PATH_WAVELENGTH).sin()
}

/// Slope `d(reference_path)/d(l_x)`.
pub fn reference_path_slope(l_x: f64) -> f64 {
    PATH_AMPLITUDE * 2.0 * PI / PATH_WAVELENGTH * (2.0 * PI * l_x / PATH_WAVELENGTH).cos()
}

/// Signed lateral deviation from the reference path.
pub fn lateral_error(state: &VehicleState) -> f64 {
    state.l_y - reference_path(state.l_x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cruise(v: f64) -> VehicleState {
        VehicleState::new(0.0, v, 0.0, 0.0, 0.0, 0.0)
    }

    #[test]
    fn zero_steer_rotation_is_identity() {
        let p = VehicleParams::default();
        let s = VehicleState::new(3.0, 10.0, 0.5, 0.3, 0.1, 0.05);
        let u = ControlInput::new(150.0, 0.0);
        let f = tire_forces(&s, &u, &p).unwrap();
        let (af, _) = slip_angles(&s, &u, &p).unwrap();
        let (fz_f, _) = p.normal_loads();
        assert_eq!(f.fx_f, 150.0 / (2.0 * p.tire_radius));
        assert_eq!(f.fy_f, p.c_f * p.mu_f * fz_f * af);
    }

    #[test]
    fn symmetric_wheelbase_splits_load_evenly() {
        let p = VehicleParams::default();
        let (f, r) = p.normal_loads();
        assert!((f - 4905.0).abs() < 1e-9);
        assert!((r - 4905.0).abs() < 1e-9);
    }

    #[test]
    fn straight_driving_has_no_lateral_force() {
        let p = VehicleParams::default();
        let f = tire_forces(&cruise(12.0), &ControlInput::new(80.0, 0.0), &p).unwrap();
        assert_eq!(f.fy_f, 0.0);
        assert_eq!(f.fy_r, 0.0);
    }

    #[test]
    fn degenerate_speed_is_rejected() {
        let p = VehicleParams::default();
        let err = tire_forces(&cruise(0.05), &ControlInput::default(), &p).unwrap_err();
        assert!(matches!(err, DynamicsError::DegenerateSpeed { .. }));
        assert!(derivative(&cruise(V_EPS), &ControlInput::default(), &p).is_err());
    }

    #[test]
    fn derivative_examples() {
        let mut p = VehicleParams::default();
        let d = derivative(&cruise(10.0), &ControlInput::default(), &p).unwrap();
        assert_eq!(d.l_x, 10.0);
        assert_eq!(d.r, 0.0);
        p.c_drag = 0.0;
        let d = derivative(&cruise(10.0), &ControlInput::default(), &p).unwrap();
        assert_eq!(d.v_x, 0.0);
    }

    #[test]
    fn rk4_matches_exponential() {
        let h: f64 = 0.2;
        let x = rk4_step(|x: &[f64; 1]| Ok::<_, ()>([-x[0]]), &[1.0], h).unwrap();
        // on a linear ODE one RK4 step is the 4th-order Taylor polynomial of exp(-h)
        let taylor = 1.0 - h + h * h / 2.0 - h.powi(3) / 6.0 + h.powi(4) / 24.0;
        assert!((x[0] - taylor).abs() < 1e-15);
        assert!((x[0] - 0.8187333).abs() < 1e-7);
        // local truncation error bound h^5/120
        assert!((x[0] - (-h).exp()).abs() <= h.powi(5) / 120.0);
    }

    #[test]
    fn constant_velocity_integration() {
        let mut p = VehicleParams::default();
        p.c_drag = 0.0;
        let s = step(&cruise(10.0), &ControlInput::default(), &p, 0.2).unwrap();
        assert!((s.l_x - 2.0).abs() < 1e-12);
        assert!(step(&cruise(10.0), &ControlInput::default(), &p, 0.0).is_err());
    }

    fn integrate(x0: VehicleState, u: ControlInput, p: &VehicleParams, total: f64, n: usize) -> VehicleState {
        let h = total / n as f64;
        (0..n).fold(x0, |x, _| step(&x, &u, p, h).unwrap())
    }

    #[test]
    fn rk4_convergence_order() {
        let p = VehicleParams::default();
        let x0 = VehicleState::new(0.0, 10.0, 0.2, 0.1, 0.05, 0.02);
        let u = ControlInput::new(200.0, 0.08);
        let reference = integrate(x0, u, &p, 2.0, 4096);
        let errs: Vec<f64> = [8usize, 16, 32, 64]
            .iter()
            .map(|&n| {
                let x = integrate(x0, u, &p, 2.0, n);
                x.to_array().iter().zip(reference.to_array()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
            })
            .collect();
        // least-squares slope of log(err) against log(h)
        let pts: Vec<(f64, f64)> = errs
            .iter()
            .enumerate()
            .map(|(i, e)| ((2.0 / (8 * (1 << i)) as f64).ln(), e.ln()))
            .collect();
        let n = pts.len() as f64;
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
        let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>() / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
        assert!(slope >= 3.9, "observed order {slope}, errs {errs:?}");
    }

    #[test]
    fn step_halving_local_error() {
        let p = VehicleParams::default();
        let x0 = VehicleState::new(0.0, 10.0, 0.2, 0.1, 0.05, 0.02);
        let u = ControlInput::new(100.0, 0.05);
        let diff = |h: f64| {
            let full = step(&x0, &u, &p, h).unwrap();
            let half = step(&step(&x0, &u, &p, h / 2.0).unwrap(), &u, &p, h / 2.0).unwrap();
            full.to_array().iter().zip(half.to_array()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
        };
        // local error scales like h^5: halving h shrinks it by ~32
        let ratio = diff(0.2) / diff(0.1);
        assert!(ratio > 24.0 && ratio < 40.0, "ratio {ratio}");
    }

    #[test]
    fn reference_path_examples() {
        assert_eq!(reference_path(0.0), 0.0);
        assert!((reference_path(25.0) - 4.0).abs() < 1e-12);
        assert!(reference_path(50.0).abs() < 1e-12);
        let on_path = VehicleState::new(13.0, 10.0, reference_path(13.0), 0.0, 0.0, 0.0);
        assert_eq!(lateral_error(&on_path), 0.0);
        assert_eq!(lateral_error(&VehicleState::new(0.0, 10.0, 1.0, 0.0, 0.0, 0.0)), 1.0);
        assert!((lateral_error(&VehicleState::new(25.0, 10.0, 0.0, 0.0, 0.0, 0.0)) + 4.0).abs() < 1e-12);
    }

    #[test]
    fn jacobians_match_finite_differences() {
        let p = VehicleParams::default();
        let x = VehicleState::new(5.0, 9.0, 0.4, -0.3, 0.12, 0.07);
        let u = ControlInput::new(120.0, 0.09);
        let (a, b) = derivative_jacobians(&x, &u, &p).unwrap();
        let h = 1e-6;
        for col in 0..STATE_DIM {
            let mut xp = x.to_array();
            let mut xm = x.to_array();
            xp[col] += h;
            xm[col] -= h;
            let fp = derivative(&VehicleState::from_array(xp), &u, &p).unwrap().to_array();
            let fm = derivative(&VehicleState::from_array(xm), &u, &p).unwrap().to_array();
            for row in 0..STATE_DIM {
                let fd = (fp[row] - fm[row]) / (2.0 * h);
                assert!((fd - a[row][col]).abs() <= 1e-5 * (1.0 + fd.abs()), "A[{row}][{col}] {fd} vs {}", a[row][col]);
            }
        }
        for col in 0..CONTROL_DIM {
            let mut up = u.to_array();
            let mut um = u.to_array();
            let hh = if col == 0 { 1e-3 } else { 1e-7 };
            up[col] += hh;
            um[col] -= hh;
            let fp = derivative(&x, &ControlInput::from_slice(&up), &p).unwrap().to_array();
            let fm = derivative(&x, &ControlInput::from_slice(&um), &p).unwrap().to_array();
            for row in 0..STATE_DIM {
                let fd = (fp[row] - fm[row]) / (2.0 * hh);
                assert!((fd - b[row][col]).abs() <= 1e-5 * (1.0 + fd.abs()), "B[{row}][{col}] {fd} vs {}", b[row][col]);
            }
        }
    }

    #[test]
    fn step_vjp_matches_finite_differences() {
        let p = VehicleParams::default();
        let x = VehicleState::new(5.0, 9.0, 0.4, -0.3, 0.12, 0.07);
        let u = ControlInput::new(120.0, 0.09);
        let adj = [0.3, -1.2, 0.8, 0.5, -0.7, 1.1];
        let (gx, gu) = step_vjp(&x, &u, &p, 0.2, &adj).unwrap();
        let j = |x: &VehicleState, u: &ControlInput| -> f64 {
            step(x, u, &p, 0.2).unwrap().to_array().iter().zip(adj).map(|(a, b)| a * b).sum()
        };
        for col in 0..STATE_DIM {
            let mut xp = x.to_array();
            let mut xm = x.to_array();
            xp[col] += 1e-6;
            xm[col] -= 1e-6;
            let fd = (j(&VehicleState::from_array(xp), &u) - j(&VehicleState::from_array(xm), &u)) / 2e-6;
            assert!((fd - gx[col]).abs() <= 1e-6 * (1.0 + fd.abs()), "x[{col}] {fd} vs {}", gx[col]);
        }
        let fd_t = (j(&x, &ControlInput::new(120.001, 0.09)) - j(&x, &ControlInput::new(119.999, 0.09))) / 2e-3;
        let fd_b = (j(&x, &ControlInput::new(120.0, 0.09 + 1e-7)) - j(&x, &ControlInput::new(120.0, 0.09 - 1e-7))) / 2e-7;
        assert!((fd_t - gu[0]).abs() <= 1e-6 * (1.0 + fd_t.abs()));
        assert!((fd_b - gu[1]).abs() <= 1e-5 * (1.0 + fd_b.abs()));
    }

    proptest! {
        #[test]
        fn rotation_preserves_norm(fx in -1e4f64..1e4, fy in -1e4f64..1e4, beta in -3.2f64..3.2) {
            let (a, b) = rotate(fx, fy, beta);
            let n0 = (fx * fx + fy * fy).sqrt();
            let n1 = (a * a + b * b).sqrt();
            prop_assert!((n0 - n1).abs() <= 1e-12 * n0.max(1.0));
        }

        #[test]
        fn load_transfer_conserves_weight(lf in 0.5f64..3.0, lr in 0.5f64..3.0, m in 500.0f64..5000.0) {
            let p = VehicleParams { l_xf: lf, l_xr: lr, mass: m, ..VehicleParams::default() };
            let (f, r) = p.normal_loads();
            prop_assert!((2.0 * f + 2.0 * r - m * p.gravity).abs() < 1e-9);
        }

        #[test]
        fn reference_path_is_periodic(x in -1e3f64..1e3) {
            prop_assert!((reference_path(x) - reference_path(x + 100.0)).abs() < 1e-9);
        }
    }
}
