//! End-to-end acceptance checks. Each criterion prints one PASS/FAIL line;
//! the process exits non-zero if any criterion fails. Pass criterion numbers
//! as arguments to run a subset, e.g. `cargo test --test acceptance -- 1 7`.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use rlempc::agents::{ReplayBuffer, Transition};
use rlempc::dynamics::{ControlInput, VehicleState};
use rlempc::empc::{conventional_mpc, TriggerAction};
use rlempc::harness::{
    calibrate_threshold, compute_metrics, evaluate, run_episode, train, write_learning_curve, AgentPolicy, AlwaysTrigger, NeverTrigger,
    RunConfig, ThresholdPolicy, TrainConfig, TriggerPolicy,
};
use rlempc::nn::{grad_check, GradCheckOptions, Network, SeqBatch, Topology};
use rlempc::ocp::{cost_gradient, solve_shooting, Bounds, ShootingModel, ShootingProblem, SolverOptions, VehicleOcp};
use rlempc::error::OcpError;

type Outcome = Result<String, String>;

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn main() {
    let selected: Vec<usize> = std::env::args().skip(1).filter_map(|a| a.parse().ok()).collect();
    let criteria: [(usize, &str, fn() -> Outcome); 8] = [
        (1, "eMPC/MPC equivalence", equivalence),
        (2, "metrics identity", metrics_identity),
        (3, "gradient suite", gradients),
        (4, "solver correctness", solver),
        (5, "PER distribution", per_distribution),
        (7, "never-trigger floor", never_trigger_floor),
        (8, "determinism", determinism),
        (6, "trend reproduction", trends),
    ];
    let mut failed = 0;
    for (n, name, f) in criteria {
        if !selected.is_empty() && !selected.contains(&n) {
            continue;
        }
        let started = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
            let msg = e.downcast_ref::<String>().cloned().or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()));
            Err(format!("panicked: {}", msg.unwrap_or_default()))
        });
        let secs = started.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("criterion {n} ({name}): PASS [{secs:.1}s] {d}"),
            Err(d) => {
                failed += 1;
                println!("criterion {n} ({name}): FAIL [{secs:.1}s] {d}");
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}

fn equivalence() -> Outcome {
    let config = RunConfig::default();
    let mut env = config.env().map_err(|e| e.to_string())?;
    env.enable_trace(true);
    env.reset();
    while !env.is_done() {
        env.step(TriggerAction::Trigger).map_err(|e| e.to_string())?;
    }
    let trace = env.take_trace();
    let x0 = VehicleState::from_array(config.empc.initial_state);
    let u0 = ControlInput::new(config.empc.initial_control[0], config.empc.initial_control[1]);
    let (controls, states) = conventional_mpc(&x0, Some(u0), trace.len(), &config.ocp, &config.vehicle).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for (k, rec) in trace.iter().enumerate() {
        let x = states[k].to_array();
        let recorded = [rec.l_x, rec.v_x, rec.l_y, rec.v_y, rec.psi, rec.r];
        for i in 0..6 {
            worst = worst.max((x[i] - recorded[i]).abs());
        }
        worst = worst.max((controls[k].torque - rec.torque).abs()).max((controls[k].steer - rec.steer).abs());
    }
    let last = env.state().to_array();
    let end = states[trace.len()].to_array();
    for i in 0..6 {
        worst = worst.max((last[i] - end[i]).abs());
    }
    check(trace.len() == 100 && worst <= 1e-12, format!("{} steps, max elementwise difference {worst:.2e}", trace.len()))
}

/// Triggers with a fixed probability drawn per episode.
struct RandomPolicy {
    rng: ChaCha8Rng,
    p: f64,
}

impl TriggerPolicy for RandomPolicy {
    fn decide(&mut self, _: &rlempc::empc::Env, _: &rlempc::empc::EnvState) -> rlempc::Result<TriggerAction> {
        Ok(if self.rng.gen::<f64>() < self.p { TriggerAction::Trigger } else { TriggerAction::Hold })
    }
}

fn metrics_identity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut worst: f64 = 0.0;
    let mut failures = 0;
    for _ in 0..100 {
        let rho_c = [0.0, 0.001, 0.01, rng.gen_range(0.0..0.1)][rng.gen_range(0..4)];
        let config = RunConfig { train: TrainConfig { rho_c, ..Default::default() }, ..Default::default() };
        let mut env = config.env().map_err(|e| e.to_string())?;
        let mut policy = RandomPolicy { rng: ChaCha8Rng::seed_from_u64(rng.gen()), p: rng.gen_range(0.0..1.0) };
        let (m, _) = run_episode(&mut env, &mut policy, false).map_err(|e| e.to_string())?;
        worst = worst.max(m.identity_residual(rho_c).abs());
        failures += usize::from(m.failed);
    }
    // Two 100-step episodes averaging the published A_f = 0.255 and E_mpc = 0.171 at rho_c = 0.01.
    let episode = |triggers: usize| -> Vec<(f64, usize)> { (0..100).map(|k| (0.171 / 20.0, usize::from(k < triggers))).collect() };
    let a = compute_metrics(&episode(25), 0.0, 0.01, 0.2).map_err(|e| e.to_string())?;
    let b = compute_metrics(&episode(26), 0.0, 0.01, 0.2).map_err(|e| e.to_string())?;
    let r = -(a.ret + b.ret) / 2.0;
    check(
        worst < 1e-9 && (r - 0.431).abs() <= 0.01,
        format!("max |R + E_mpc + rho_c*sum a| = {worst:.2e} over 100 episodes ({failures} ended early); table triple gives |R| = {r:.4} vs 0.431"),
    )
}

fn gradients() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut nets = Vec::new();
    for (recurrent, steps) in [(false, 1), (true, 3)] {
        let mut net = Network::new(Topology::trigger_net(12, 2, recurrent), &mut rng);
        let mut x = SeqBatch::zeros(steps, 2, 12);
        x.data.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
        let mut c = SeqBatch::zeros(steps, 2, 2);
        c.data.iter_mut().for_each(|v| *v = rng.gen_range(-1.0..1.0));
        let loss = |out: &SeqBatch| (out.data.iter().zip(&c.data).map(|(o, w)| o * w).sum::<f64>(), c.clone());
        let report = grad_check(&mut net, &x, loss, &GradCheckOptions { coordinates: 400, ..Default::default() }).map_err(|e| e.to_string())?;
        nets.push(report.max_rel_error);
    }

    let config = RunConfig::default();
    let model = VehicleOcp { params: &config.vehicle, config: &config.ocp };
    let p = config.ocp.horizon;
    let mut ocp_worst: f64 = 0.0;
    for _ in 0..20 {
        let x0 = [rng.gen_range(0.0..100.0), rng.gen_range(8.0..12.0), rng.gen_range(-2.0..2.0), rng.gen_range(-0.5..0.5), rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2)];
        let u: Vec<f64> = (0..p).flat_map(|_| [rng.gen_range(-200.0..200.0), rng.gen_range(-0.2..0.2)]).collect();
        let (_, g) = cost_gradient(&model, &x0, &u).map_err(|e| e.to_string())?;
        let cost = |u: &[f64]| cost_gradient(&model, &x0, u).map(|(c, _)| c).map_err(|e| e.to_string());
        for i in 0..u.len() {
            let central = |h: f64| -> Result<f64, String> {
                let (mut up, mut dn) = (u.clone(), u.clone());
                up[i] += h;
                dn[i] -= h;
                Ok((cost(&up)? - cost(&dn)?) / (2.0 * h))
            };
            // Richardson extrapolation of two central differences.
            let h = 1e-3 * u[i].abs().max(1e-1);
            let fd = (4.0 * central(0.5 * h)? - central(h)?) / 3.0;
            ocp_worst = ocp_worst.max((fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-6));
        }
    }
    check(
        nets[0] < 1e-5 && nets[1] < 1e-4 && ocp_worst < 1e-5,
        format!("MLP {:.2e} (< 1e-5), 3-step LSTM {:.2e} (< 1e-4), OCP over 20 instances {ocp_worst:.2e} (< 1e-5)", nets[0], nets[1]),
    )
}

/// `x = [position, velocity]` under piecewise-constant acceleration, with
/// `q·pos² + w·vel²` on each predicted state and `r·u²` on each control.
struct DoubleIntegrator {
    dt: f64,
    q: f64,
    w: f64,
    r: f64,
}

impl ShootingModel for DoubleIntegrator {
    fn state_dim(&self) -> usize {
        2
    }

    fn control_dim(&self) -> usize {
        1
    }

    fn step(&self, x: &[f64], u: &[f64]) -> Result<Vec<f64>, OcpError> {
        Ok(vec![x[0] + self.dt * x[1] + 0.5 * self.dt * self.dt * u[0], x[1] + self.dt * u[0]])
    }

    fn step_vjp(&self, _: &[f64], _: &[f64], adj: &[f64]) -> Result<(Vec<f64>, Vec<f64>), OcpError> {
        Ok((vec![adj[0], self.dt * adj[0] + adj[1]], vec![0.5 * self.dt * self.dt * adj[0] + self.dt * adj[1]]))
    }

    fn state_cost(&self, x: &[f64]) -> (f64, Vec<f64>) {
        (self.q * x[0] * x[0] + self.w * x[1] * x[1], vec![2.0 * self.q * x[0], 2.0 * self.w * x[1]])
    }

    fn control_cost(&self, u: &[f64]) -> (f64, Vec<f64>) {
        (self.r * u[0] * u[0], vec![2.0 * self.r * u[0]])
    }
}

impl DoubleIntegrator {
    /// Direct evaluation of the two-step cost, independent of the solver's rollout.
    fn cost(&self, x0: [f64; 2], u: [f64; 2]) -> f64 {
        let dt = self.dt;
        let p1 = x0[0] + dt * x0[1] + 0.5 * dt * dt * u[0];
        let v1 = x0[1] + dt * u[0];
        let p2 = p1 + dt * v1 + 0.5 * dt * dt * u[1];
        let v2 = v1 + dt * u[1];
        self.q * (p1 * p1 + p2 * p2) + self.w * (v1 * v1 + v2 * v2) + self.r * (u[0] * u[0] + u[1] * u[1])
    }
}

fn solver() -> Outcome {
    let model = DoubleIntegrator { dt: 1.0, q: 1.0, w: 0.5, r: 2.0 };
    let opts = SolverOptions::default();

    // Least squares: stack residuals s(u) = M u + c with weights, then u* = −(MᵀWM + R)⁻¹ MᵀW c.
    let x0 = [1.0, 0.5];
    let dt = model.dt;
    let (a, b) = (0.5 * dt * dt, dt);
    // Rows: p1, v1, p2, v2 as affine functions of (u0, u1).
    let m = [[a, 0.0], [b, 0.0], [a + dt * b, a], [b, b]];
    let c = [x0[0] + dt * x0[1], x0[1], x0[0] + 2.0 * dt * x0[1], x0[1]];
    let wts = [model.q, model.w, model.q, model.w];
    let mut h = [[0.0; 2]; 2];
    let mut g = [0.0; 2];
    for k in 0..4 {
        for i in 0..2 {
            g[i] += wts[k] * m[k][i] * c[k];
            for j in 0..2 {
                h[i][j] += wts[k] * m[k][i] * m[k][j];
            }
        }
    }
    h[0][0] += model.r;
    h[1][1] += model.r;
    let det = h[0][0] * h[1][1] - h[0][1] * h[1][0];
    let exact = [-(h[1][1] * g[0] - h[0][1] * g[1]) / det, -(-h[1][0] * g[0] + h[0][0] * g[1]) / det];
    let free = Bounds::unbounded(2, 1);
    let sol = solve_shooting(&ShootingProblem { model: &model, x0: &x0, horizon: 2, bounds: &free, u_prev: None }, None, &opts).map_err(|e| e.to_string())?;
    let closed_err = (sol.controls[0] - exact[0]).abs().max((sol.controls[1] - exact[1]).abs());

    // Box-constrained: the unconstrained optimum lies outside [−0.3, 0.3]².
    let x0 = [4.0, 0.0];
    let mut boxed = Bounds::unbounded(2, 1);
    boxed.u_min = vec![-0.3];
    boxed.u_max = vec![0.3];
    let sol_box = solve_shooting(&ShootingProblem { model: &model, x0: &x0, horizon: 2, bounds: &boxed, u_prev: None }, None, &opts).map_err(|e| e.to_string())?;
    let spacing = 0.6 / 20.0;
    let grid: Vec<f64> = (0..21).map(|i| -0.3 + spacing * i as f64).collect();
    let mut best = (f64::INFINITY, [0.0; 2]);
    for &u0 in &grid {
        for &u1 in &grid {
            let j = model.cost(x0, [u0, u1]);
            if j < best.0 {
                best = (j, [u0, u1]);
            }
        }
    }
    let solver_cost = model.cost(x0, [sol_box.controls[0], sol_box.controls[1]]);
    let dist = (sol_box.controls[0] - best.1[0]).abs().max((sol_box.controls[1] - best.1[1]).abs());
    let at_bound = sol_box.controls.iter().any(|u| (u.abs() - 0.3).abs() < 1e-9);
    check(
        closed_err < 1e-6 && solver_cost <= best.0 + 1e-12 && dist <= spacing && at_bound,
        format!(
            "closed form error {closed_err:.2e}; boxed solution {:?} cost {solver_cost:.6} vs grid {:?} cost {:.6}, distance {dist:.3} (spacing {spacing:.3})",
            sol_box.controls, best.1, best.0
        ),
    )
}

fn per_distribution() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let fill = |alpha: f64| {
        let mut b = ReplayBuffer::new(100, alpha, 1e-3).unwrap();
        for i in 0..100 {
            b.push(Transition { obs: vec![0.0], action: i % 2, reward: 0.0, next_obs: vec![0.0], done: false, episode: 0, step: i });
        }
        b
    };
    let mut b = fill(0.6);
    let idx: Vec<usize> = (0..100).collect();
    let td: Vec<f64> = (0..100).map(|_| rng.gen_range(0.0..10.0)).collect();
    b.update_priorities(&idx, &td).map_err(|e| e.to_string())?;
    let n = 100_000;
    let s = b.sample(n, 0.4, &mut rng).map_err(|e| e.to_string())?;
    let mut counts = vec![0usize; 100];
    s.indices.iter().for_each(|i| counts[*i] += 1);
    let probs = b.probabilities();
    let scaled: Vec<f64> = b.priorities().iter().map(|p| p.powf(0.6)).collect();
    let total: f64 = scaled.iter().sum();
    let prob_err = probs.iter().zip(&scaled).map(|(p, s)| (p - s / total).abs()).fold(0.0, f64::max);
    let stat: f64 = probs.iter().zip(&counts).map(|(p, c)| (*c as f64 - p * n as f64).powi(2) / (p * n as f64)).sum();
    let critical = ChiSquared::new(99.0).unwrap().inverse_cdf(0.99);

    let mut u = fill(0.0);
    u.update_priorities(&idx, &td).map_err(|e| e.to_string())?;
    let uniform = u.probabilities().iter().all(|p| *p == 0.01);
    let su = u.sample(1000, 1.0, &mut rng).map_err(|e| e.to_string())?;
    let unit_weights = su.weights.iter().all(|w| *w == 1.0);
    check(
        stat < critical && prob_err < 1e-15 && uniform && unit_weights,
        format!("chi2 = {stat:.1} < {critical:.1}; alpha = 0 uniform: {uniform}, unit IS weights: {unit_weights}"),
    )
}

fn never_trigger_floor() -> Outcome {
    let config = RunConfig::default();
    let summary = evaluate(&config, config.train.eval_episodes, || NeverTrigger).map_err(|e| e.to_string())?;
    let (_, trace) = run_episode(&mut config.env().map_err(|e| e.to_string())?, &mut NeverTrigger, true).map_err(|e| e.to_string())?;
    let p = config.ocp.horizon;
    let pattern = trace.iter().all(|r| (r.action == 1) == (r.step % p == 0) && r.forced == (r.action == 1));
    check(
        summary.a_f == 1.0 / p as f64 && pattern && summary.failures == 0,
        format!("A_f = {} over {} episodes; forced solves exactly every {p} steps: {pattern}", summary.a_f, summary.episodes.len()),
    )
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = RunConfig { train: TrainConfig { steps: Some(2000), seed: 17, ..Default::default() }, ..Default::default() };
    let mut files = Vec::new();
    for run in 0..2 {
        let out = train(&config, |_| {}).map_err(|e| e.to_string())?;
        let path = dir.path().join(format!("curve{run}.csv"));
        write_learning_curve(&path, &out.log).map_err(|e| e.to_string())?;
        files.push((std::fs::read(&path).map_err(|e| e.to_string())?, out.log.len()));
    }
    check(
        files[0].0 == files[1].0 && files[0].1 == 20,
        format!("{} episodes logged, learning curves bit-identical: {}", files[0].1, files[0].0 == files[1].0),
    )
}

fn trends() -> Outcome {
    let base = RunConfig::default();
    let calibration = calibrate_threshold(&base, base.empc.calibration_target, 40).map_err(|e| e.to_string())?;
    let mut rows = Vec::new();
    for rho_c in [0.0, 0.001, 0.01] {
        let config = RunConfig { train: TrainConfig { rho_c, ..base.train.clone() }, ..base.clone() };
        let out = train(&config, |_| {}).map_err(|e| e.to_string())?;
        let seed = config.train.seed;
        let learned = evaluate(&config, config.train.eval_episodes, || AgentPolicy::new(&out.agent, seed)).map_err(|e| e.to_string())?;
        let baseline = evaluate(&config, config.train.eval_episodes, || ThresholdPolicy(calibration.threshold)).map_err(|e| e.to_string())?;
        let always = evaluate(&config, 1, || AlwaysTrigger).map_err(|e| e.to_string())?;
        println!(
            "  rho_c = {rho_c}: learned R {:.4} E_mpc {:.4} A_f {:.3}; baseline (threshold {:.3}, A_f {:.3}) R {:.4}; always-trigger R {:.4}",
            learned.ret, learned.e_mpc, learned.a_f, calibration.threshold, baseline.a_f, baseline.ret, always.ret
        );
        rows.push((rho_c, learned, baseline));
    }
    let a = rows[0].1.a_f >= 0.9;
    let b = rows[0].1.a_f > rows[1].1.a_f && rows[1].1.a_f > rows[2].1.a_f;
    let c = rows.iter().all(|(_, l, base)| l.ret > base.ret);
    let afs: Vec<String> = rows.iter().map(|(_, l, _)| format!("{:.3}", l.a_f)).collect();
    check(
        a && b && c,
        format!(
            "(a) A_f(0) >= 0.9: {a}; (b) strictly decreasing A_f [{}]: {b}; (c) beats threshold baseline (A_f {:.3} for target {}) at every rho_c: {c}",
            afs.join(", "),
            calibration.a_f,
            calibration.target
        ),
    )
}
